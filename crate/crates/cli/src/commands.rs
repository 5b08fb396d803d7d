use std::fs;
use std::path::Path;

use serde::Serialize;

use seisbert::analysis::{self, ResidualMode};
use seisbert::dataset::Dataset;
use seisbert::export;
use seisbert::finetune::{self, LabeledSample, TaskKind, TaskMetrics, TaskSpec};
use seisbert::gather::{DomainTag, ShotGather};
use seisbert::model::checkpoint::Checkpoint;
use seisbert::model::{HeadInit, HeadKind, SeismicBert};
use seisbert::numerics::{ops, rng};
use seisbert::pretrain;
use seisbert::seisgen::{self, NmoOptions, OffsetPolicy, Preset};
use seisbert::sweep;
use seisbert::train::{RunFiles, TrainState, TrainingReport};
use seisbert::{Error, Result};

use crate::config::{self, DenoisePairs, RunConfig, SweepFile};
use crate::{AnalyzeArgs, FinetuneArgs, GenerateArgs, InferArgs, NmoArgs, PretrainArgs, SweepArgs};

const KEY_MODEL: u64 = 6;
const KEY_MIX: u64 = 8;
const METRICS: &str = "metrics.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Contract(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    if a.n == 0 {
        return Err(Error::Config("--n must be positive".into()));
    }
    let mut preset = Preset::by_name(&a.preset)?;
    if let Some(x) = a.traces {
        if x == 0 {
            return Err(Error::Config("--traces must be positive".into()));
        }
        preset.n_traces = x;
    }
    let (n_clean, n_field) = seisgen::mix_counts(a.field_fraction, a.n).map_err(|e| Error::Config(e.to_string()))?;
    let clean = seisgen::generate(&preset, n_clean, a.seed, a.first_id, DomainTag::Clean)?;
    let field = seisgen::generate(&preset, n_field, a.seed, a.first_id + n_clean as u64, DomainTag::FieldProxy)?;
    let samples = if n_field == 0 {
        clean
    } else {
        let mut r = rng::stream(a.seed, &[KEY_MIX, a.first_id]);
        seisgen::build_mixed_corpus(clean, field, a.field_fraction, a.n, None, &mut r)?
    };
    let ds = Dataset::from_samples(&samples, preset.bounds.v_min, preset.bounds.v_max)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    ds.save(&a.out)?;
    println!(
        "wrote {} gathers ({} field proxy) of {}×{} to {}",
        ds.len(),
        n_field,
        preset.n_traces,
        preset.n_samples,
        a.out.display()
    );
    Ok(())
}

/// Train and held-out datasets named by the config.
fn load_split(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let train = Dataset::load(&cfg.data.train)?;
    if let Some(test) = &cfg.data.test {
        let test = Dataset::load(test)?;
        if (test.n_traces, test.n_samples) != (train.n_traces, train.n_samples) {
            return Err(Error::Contract(format!(
                "test gathers are {}×{} but training gathers are {}×{}",
                test.n_traces, test.n_samples, train.n_traces, train.n_samples
            )));
        }
        return Ok((train, test));
    }
    let n_test = (cfg.data.test_fraction * train.len() as f64).round() as usize;
    train.split(n_test)
}

fn gathers(ds: &Dataset) -> Vec<ShotGather> {
    (0..ds.len()).map(|i| ds.gather(i)).collect()
}

/// Resolved config with the stopping rules cleared, so a finished run can be
/// extended.
fn resume_key<T: Serialize>(value: &T) -> Result<String> {
    fn clear(v: &mut toml::Value) {
        let Some(t) = v.as_table_mut() else { return };
        for (k, child) in t.iter_mut() {
            if let (true, Some(s)) = (k == "schedule", child.as_table_mut()) {
                for rule in ["max_epochs", "patience", "target_loss"] {
                    s.remove(rule);
                }
            }
            clear(child);
        }
    }
    let mut v = toml::Value::try_from(value).map_err(|e| Error::Config(e.to_string()))?;
    clear(&mut v);
    Ok(v.to_string())
}

/// Fresh state, or the interrupted run in `dir` when it was started with the
/// same configuration up to its stopping rules.
fn start_state<T: Serialize>(
    dir: &Path,
    resolved: &T,
    restart: bool,
    learning_rate: f64,
    fresh: impl FnOnce() -> Result<SeismicBert<f32>>,
) -> Result<TrainState> {
    let files = RunFiles { dir: dir.into() };
    let previous = dir.join(config::RESOLVED);
    if !restart && files.last().exists() {
        let before: Option<toml::Value> = fs::read_to_string(&previous).ok().and_then(|t| toml::from_str(&t).ok());
        if before.map(|b| resume_key(&b)).transpose()? != Some(resume_key(resolved)?) {
            return Err(Error::Config(format!(
                "{} holds a run with another configuration; pass --restart to overwrite it",
                dir.display()
            )));
        }
        let state = TrainState::resume(Checkpoint::load(files.last())?, Checkpoint::load(files.best())?)?;
        log::info!("resuming after epoch {}", state.progress.epochs_done);
        return Ok(state);
    }
    Ok(TrainState::new(fresh()?, learning_rate))
}

#[derive(Serialize)]
struct PretrainMetrics {
    zero_baseline: f64,
    best_test_loss: f64,
    ratio: f64,
    report: TrainingReport,
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let (train, test) = load_split(&cfg)?;
    let model_cfg = cfg.model.config(train.n_samples, train.n_traces)?;
    create_dir(&cfg.output_dir)?;

    let mut state = start_state(&cfg.output_dir, &cfg, a.restart, cfg.schedule.learning_rate, || {
        SeismicBert::with_head(
            model_cfg,
            HeadKind::Reconstruction,
            HeadInit::Random,
            &mut rng::stream(cfg.schedule.seed, &[KEY_MODEL]),
        )
    })?;
    config::write_resolved(&cfg.output_dir, &cfg)?;
    let files = RunFiles {
        dir: cfg.output_dir.clone(),
    };
    let (train_g, test_g) = (gathers(&train), gathers(&test));
    let report = pretrain::pretrain_with(&mut state, &train_g, &test_g, &cfg.schedule, &cfg.pretrain, Some(&files), &mut |_| {})?;

    let held_out = if test_g.is_empty() { &train_g } else { &test_g };
    let baseline = pretrain::zero_baseline(&pretrain::fixed_samples(held_out, &cfg.pretrain.mask, cfg.schedule.seed)?)?;
    let metrics = PretrainMetrics {
        zero_baseline: baseline,
        best_test_loss: report.best_test_loss,
        ratio: report.best_test_loss / baseline,
        report,
    };
    write_json(&cfg.output_dir.join(METRICS), &metrics)?;
    println!(
        "pre-training stopped after {} epochs ({:?}); best held-out loss {:.4e} = {:.3} of the zero baseline",
        metrics.report.epochs, metrics.report.stop, metrics.best_test_loss, metrics.ratio
    );
    Ok(())
}

/// Denoising pairs per the config; other tasks read their stored labels.
fn labeled(ds: &Dataset, kind: TaskKind, pairs: DenoisePairs, seed: u64) -> Result<Vec<LabeledSample>> {
    if kind != TaskKind::Denoise {
        return finetune::samples_from_dataset(ds, kind);
    }
    let gaussian = match pairs {
        DenoisePairs::Gaussian => true,
        DenoisePairs::Stored => false,
        DenoisePairs::Auto => ds.clean.as_ref().map_or(true, |c| *c == ds.inputs),
    };
    if !gaussian {
        return finetune::samples_from_dataset(ds, kind);
    }
    let clean: Vec<ShotGather> = (0..ds.len())
        .map(|i| ds.clean_gather(i).unwrap_or_else(|| ds.gather(i)))
        .collect();
    finetune::noisy_pairs(&clean, seed)
}

#[derive(Serialize)]
struct ResolvedFinetune<'a> {
    from: &'a Path,
    task: TaskSpec,
    #[serde(flatten)]
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct FinetuneMetrics {
    /// Held-out metrics of the prepared model before any fine-tuning step.
    pre_finetune: TaskMetrics,
    test: TaskMetrics,
    report: TrainingReport,
}

pub fn finetune(a: &FinetuneArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    let kind = match (&a.task, cfg.finetune.task) {
        (Some(name), _) => TaskKind::by_name(name)?,
        (None, Some(k)) => k,
        (None, None) => return Err(Error::Config("no task given (--task or finetune.task)".into())),
    };
    cfg.finetune.task = Some(kind);
    if let Some(k) = a.freeze_k {
        cfg.finetune.freeze_k = k;
    }
    let (train, test) = load_split(&cfg)?;
    let task = TaskSpec {
        head_init: cfg.finetune.head_init.unwrap_or(kind.default_head_init()),
        freeze_k: cfg.finetune.freeze_k,
        schedule: cfg.schedule.clone(),
        v_min: train.v_min,
        v_max: train.v_max,
        ..TaskSpec::new(kind)
    };
    let pairs = cfg.finetune.denoise_pairs;
    let train_set = labeled(&train, kind, pairs, cfg.schedule.seed)?;
    let test_set = labeled(&test, kind, pairs, cfg.schedule.seed ^ 1)?;
    let resolved = ResolvedFinetune {
        from: &a.from,
        task: task.clone(),
        config: &cfg,
    };
    create_dir(&cfg.output_dir)?;

    let base = Checkpoint::load(&a.from)?.model;
    if base.config.samples != train.n_samples || base.config.max_traces < train.n_traces {
        return Err(Error::Contract(format!(
            "checkpoint takes {} samples and up to {} traces but the data is {}×{}",
            base.config.samples, base.config.max_traces, train.n_traces, train.n_samples
        )));
    }
    let prepared = finetune::prepare_model(base, &task)?;
    let eval_set = if test_set.is_empty() { &train_set } else { &test_set };
    let pre_finetune = finetune::evaluate_task(&prepared, &task, eval_set, &cfg.finetune.pick)?;
    let mut state = start_state(&cfg.output_dir, &resolved, a.restart, task.schedule.learning_rate, || Ok(prepared))?;
    config::write_resolved(&cfg.output_dir, &resolved)?;
    let files = RunFiles {
        dir: cfg.output_dir.clone(),
    };
    let report = finetune::finetune_with(&mut state, &task, &train_set, &test_set, Some(&files), &mut |_| {})?;
    let metrics = FinetuneMetrics {
        pre_finetune,
        test: finetune::evaluate_task(&state.model, &task, eval_set, &cfg.finetune.pick)?,
        report,
    };
    write_json(&cfg.output_dir.join(METRICS), &metrics)?;
    println!(
        "{} fine-tuning stopped after {} epochs; held-out {}",
        kind.name(),
        metrics.report.epochs,
        serde_json::to_string(&metrics.test).unwrap_or_default()
    );
    Ok(())
}

fn velocity_rows(preds: &[Vec<f64>]) -> (Vec<String>, Vec<Vec<f64>>) {
    let t = preds.first().map_or(0, Vec::len);
    let mut header = vec!["gather".to_string()];
    header.extend((0..t).map(|k| format!("t{k}")));
    let rows = preds
        .iter()
        .enumerate()
        .map(|(i, p)| std::iter::once(i as f64).chain(p.iter().copied()).collect())
        .collect();
    (header, rows)
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    export::write_csv(path, Some(&h), rows)
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let model = Checkpoint::load(&a.from)?.model;
    let ds = Dataset::load(&a.input)?;
    let kind = model
        .head_kind()
        .ok_or_else(|| Error::Contract("checkpoint has no prediction head".into()))?;
    create_dir(&a.out)?;
    let preds = (0..ds.len())
        .map(|i| Ok(model.predict(&ds.gather(i), false)?.0))
        .collect::<Result<Vec<_>>>()?;

    let task = |k: TaskKind| TaskSpec {
        v_min: a.v_min.unwrap_or(ds.v_min),
        v_max: a.v_max.unwrap_or(ds.v_max),
        ..TaskSpec::new(k)
    };
    let written = match kind {
        HeadKind::Reconstruction | HeadKind::Denoise => {
            let mut out = Dataset::new(ds.n_traces, ds.n_samples, ds.dt, ds.offsets.clone(), ds.v_min, ds.v_max);
            out.inputs = preds.iter().map(|p| p.data().to_vec()).collect();
            out.domains = ds.domains.clone();
            let path = a.out.join("predictions.ssds");
            out.save(&path)?;
            path
        }
        HeadKind::Velocity | HeadKind::Vrms => {
            let spec = task(if kind == HeadKind::Velocity { TaskKind::Velocity } else { TaskKind::Vrms });
            let values: Vec<Vec<f64>> = preds
                .iter()
                .map(|p| p.data().iter().map(|&v| spec.denormalize(v)).collect())
                .collect();
            let (header, rows) = velocity_rows(&values);
            let path = a.out.join(if kind == HeadKind::Velocity { "velocity.csv" } else { "vrms.csv" });
            write_rows(&path, &header, &rows)?;
            if kind == HeadKind::Vrms {
                let corrected = (0..ds.len())
                    .map(|i| seisgen::nmo_correct(&ds.gather(i), &values[i], &NmoOptions::default()))
                    .collect::<Result<Vec<_>>>()?;
                gathers_dataset(&ds, &corrected)?.save(a.out.join("nmo.ssds"))?;
            }
            path
        }
        HeadKind::FirstBreak => {
            let mut rows = Vec::new();
            for (g, p) in preds.iter().enumerate() {
                let probs = ops::softmax(p, 1)?;
                let values: Vec<f64> = probs.data().iter().map(|&v| v as f64).collect();
                export::write_pgm(a.out.join(format!("prob_{g}.pgm")), &values, ds.n_traces, ds.n_samples, 0.0, 1.0)?;
                for (trace, (k, prob)) in finetune::picks(p)?.into_iter().enumerate() {
                    let picked = if prob >= a.threshold { 1.0 } else { 0.0 };
                    rows.push(vec![g as f64, trace as f64, k as f64, k as f64 * ds.dt, prob, picked]);
                }
            }
            let header: Vec<String> = ["gather", "trace", "sample", "time", "probability", "picked"]
                .map(String::from)
                .to_vec();
            let path = a.out.join("picks.csv");
            write_rows(&path, &header, &rows)?;
            path
        }
    };
    println!("wrote predictions for {} gathers to {}", ds.len(), written.display());
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let model = Checkpoint::load(&a.from)?.model;
    let ds = Dataset::load(&a.input)?;
    if a.index >= ds.len() {
        return Err(Error::Config(format!("--index {} but the dataset has {} gathers", a.index, ds.len())));
    }
    let g = ds.gather(a.index);
    create_dir(&a.out)?;
    let record = analysis::attention_maps(&model, &g)?;
    let maps = analysis::export_maps(&record, &a.out)?;
    let mode = if a.raw { ResidualMode::Raw } else { ResidualMode::WithIdentity };
    let mut rollouts = Vec::new();
    if a.rollout || a.compare.is_some() {
        let roll = analysis::attention_rollout(&record, mode)?;
        if a.rollout {
            rollouts = analysis::export_rollout(&roll, &a.out)?;
        }
        if let Some(other) = &a.compare {
            let other = Checkpoint::load(other)?.model;
            let other_roll = analysis::attention_rollout(&analysis::attention_maps(&other, &g)?, mode)?;
            let dist = analysis::rollout_distance(&roll, &other_roll)?;
            let rows: Vec<Vec<f64>> = dist.iter().enumerate().map(|(l, d)| vec![(l + 1) as f64, *d]).collect();
            export::write_csv(a.out.join("rollout_distance.csv"), Some(&["layer", "frobenius"]), &rows)?;
        }
    }
    println!(
        "wrote {} attention maps and {} rollouts to {}",
        maps.len(),
        rollouts.len(),
        a.out.display()
    );
    Ok(())
}

/// Per-gather RMS velocities from an `infer` CSV, keyed by its gather column.
fn read_vrms(path: &Path, n: usize, t: usize) -> Result<Vec<Vec<f64>>> {
    let (_, rows) = export::read_csv::<f64>(path)?;
    let mut out = vec![None; n];
    for row in rows {
        let bad = || Error::Format {
            kind: "vrms csv",
            reason: format!("rows need a gather index and {t} velocities"),
        };
        let (&g, v) = row.split_first().ok_or_else(bad)?;
        if v.len() != t || g < 0.0 || g.fract() != 0.0 || g as usize >= n {
            return Err(bad());
        }
        out[g as usize] = Some(v.to_vec());
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| Error::Format {
                kind: "vrms csv",
                reason: format!("no velocities for gather {i}"),
            })
        })
        .collect()
}

/// Unlabeled dataset of `gathers`, keeping the velocity bounds and domain
/// tags of `source`.
fn gathers_dataset(source: &Dataset, gathers: &[ShotGather]) -> Result<Dataset> {
    let first = gathers
        .first()
        .ok_or_else(|| Error::Contract("dataset is empty".into()))?;
    let mut out = Dataset::new(first.n_traces(), first.n_samples(), first.dt, first.offsets.clone(), source.v_min, source.v_max);
    out.inputs = gathers.iter().map(|g| g.amplitudes().to_vec()).collect();
    out.domains = source.domains.clone();
    Ok(out)
}

pub fn nmo(a: &NmoArgs) -> Result<()> {
    let ds = Dataset::load(&a.input)?;
    let vrms = match &a.vrms {
        Some(p) => read_vrms(p, ds.len(), ds.n_samples)?,
        None => ds
            .vrms
            .as_ref()
            .ok_or_else(|| Error::Contract("dataset has no vrms labels; pass --vrms".into()))?
            .iter()
            .map(|v| v.iter().map(|&x| x as f64).collect())
            .collect(),
    };
    let opts = NmoOptions {
        stretch_mute: a.stretch_mute,
        offset_fraction: a.offset_fraction,
        policy: if a.exclude { OffsetPolicy::Excluded } else { OffsetPolicy::Untouched },
    };
    let corrected = (0..ds.len())
        .map(|i| seisgen::nmo_correct(&ds.gather(i), &vrms[i], &opts))
        .collect::<Result<Vec<_>>>()?;
    let out = gathers_dataset(&ds, &corrected)?;
    out.save(&a.out)?;
    println!("wrote {} NMO-corrected gathers to {}", out.len(), a.out.display());
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let file = SweepFile::load(&a.config)?;
    config::write_resolved(&file.output_dir, &file)?;
    let rows = sweep::mixing_sweep(&file.sweep, Some(&file.output_dir))?;
    write_json(&file.output_dir.join("sweep.json"), &rows)?;
    for r in &rows {
        println!(
            "fraction {:.2}: {} field gathers, fine-tune loss {:.4e}, field error {:.4e}",
            r.fraction, r.n_field, r.finetune_test_loss, r.field_error
        );
    }
    println!("field error trend: {}", sweep::trend(&rows));
    Ok(())
}
