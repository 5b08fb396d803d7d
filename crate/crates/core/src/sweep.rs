//! Field-fraction sweep: pre-train on corpora with a growing share of
//! field-proxy gathers, fine-tune each on field-proxy data, and compare.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::export;
use crate::finetune::{self, PickOptions, TaskKind, TaskMetrics, TaskSpec};
use crate::gather::DomainTag;
use crate::model::{HeadInit, HeadKind, ModelConfig, SeismicBert};
use crate::numerics::rng;
use crate::pretrain::{self, PretrainOptions};
use crate::seisgen::{build_mixed_corpus, generate, generate_sample, Preset};
use crate::train::Schedule;

/// Gather id ranges of the separate pools, so no gather is shared.
const FIELD_POOL_ID: u64 = 1 << 32;
const TOP_UP_ID: u64 = 2 << 32;
const TUNE_ID: u64 = 3 << 32;
const KEY_MODEL: u64 = 6;
const KEY_SHUFFLE: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    /// Pre-training corpus size for every fraction.
    pub n_total: usize,
    /// Held-out share of each pre-training corpus.
    pub n_pretrain_test: usize,
    /// Field-proxy gathers for fine-tuning, its held-out loss, and the
    /// final field error.
    pub n_finetune: usize,
    pub n_finetune_test: usize,
    pub n_eval: usize,
    pub task: TaskKind,
    pub freeze_k: usize,
    pub preset: Preset,
    pub model: ModelConfig,
    pub pretrain_schedule: Schedule,
    pub finetune_schedule: Schedule,
    pub seed: u64,
}

impl SweepConfig {
    /// Desk-scale defaults for `preset`.
    pub fn desk(preset: Preset) -> Self {
        let model = ModelConfig::desk(preset.n_samples, preset.n_traces);
        Self {
            fractions: vec![0.15, 0.30, 0.50],
            n_total: 200,
            n_pretrain_test: 20,
            n_finetune: 160,
            n_finetune_test: 20,
            n_eval: 40,
            task: TaskKind::Denoise,
            freeze_k: 1,
            preset,
            model,
            pretrain_schedule: Schedule {
                max_epochs: 30,
                ..Schedule::default()
            },
            finetune_schedule: Schedule {
                max_epochs: 25,
                batch_size: 8,
                ..Schedule::default()
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub n_field: usize,
    pub pretrain_test_loss: f64,
    pub finetune_test_loss: f64,
    /// Task error on held-out field-proxy gathers (MSE, MAE in m/s, or one
    /// minus the pick hit rate).
    pub field_error: f64,
    pub metrics: TaskMetrics,
}

/// Single number summarizing a task's metrics; lower is better.
pub fn task_error(m: &TaskMetrics) -> f64 {
    match m {
        TaskMetrics::Denoise(d) => d.mse,
        TaskMetrics::Velocity(v) | TaskMetrics::Vrms(v) => v.mae,
        TaskMetrics::FirstBreak(p) => 1.0 - p.hit_rate,
    }
}

/// Run every fraction; with `out_dir`, each run's files go to
/// `fraction_<f>/{pretrain,finetune}` and the table to `sweep.csv`.
pub fn mixing_sweep(cfg: &SweepConfig, out_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    if cfg.fractions.is_empty() || cfg.n_total <= cfg.n_pretrain_test || cfg.n_finetune == 0 || cfg.n_eval == 0 {
        return Err(Error::Config(
            "sweep needs fractions, a corpus larger than its test split, and fine-tuning and evaluation gathers".into(),
        ));
    }
    let p = &cfg.preset;
    let max_b = cfg
        .fractions
        .iter()
        .map(|&f| finetune_count(f, cfg.n_total))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(0);
    // The clean pool is smaller than the corpus; the rest is topped up.
    let clean_pool = generate(p, cfg.n_total - max_b, cfg.seed, 0, DomainTag::Clean)?;
    let field_pool = generate(p, max_b, cfg.seed, FIELD_POOL_ID, DomainTag::FieldProxy)?;

    let n_tune = cfg.n_finetune + cfg.n_finetune_test + cfg.n_eval;
    let tune = generate(p, n_tune, cfg.seed, TUNE_ID, DomainTag::FieldProxy)?;
    let tune_ds = Dataset::from_samples(&tune, p.bounds.v_min, p.bounds.v_max)?;
    let all = finetune::samples_from_dataset(&tune_ds, cfg.task)?;
    let (tune_train, rest) = all.split_at(cfg.n_finetune);
    let (tune_test, tune_eval) = rest.split_at(cfg.n_finetune_test);

    let mut rows = Vec::new();
    for &fraction in &cfg.fractions {
        let mut top_up = |k: usize| -> Result<_> {
            Ok(generate_sample(p, cfg.seed, TOP_UP_ID + k as u64, DomainTag::Clean)?.input)
        };
        let corpus = build_mixed_corpus(
            clean_pool.iter().map(|s| s.input.clone()).collect(),
            field_pool.iter().map(|s| s.input.clone()).collect(),
            fraction,
            cfg.n_total,
            Some(&mut top_up),
            &mut rng::stream(cfg.seed, &[KEY_SHUFFLE, fraction.to_bits()]),
        )?;
        let n_field = corpus.iter().filter(|g| g.domain == DomainTag::FieldProxy).count();
        let (train, test) = corpus.split_at(cfg.n_total - cfg.n_pretrain_test);
        let dir = out_dir.map(|d| d.join(format!("fraction_{fraction}")));
        let sub = |name: &str| -> Result<Option<std::path::PathBuf>> {
            let Some(d) = &dir else { return Ok(None) };
            let path = d.join(name);
            fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
            Ok(Some(path))
        };

        let model = SeismicBert::with_head(
            cfg.model.clone(),
            HeadKind::Reconstruction,
            HeadInit::Random,
            &mut rng::stream(cfg.seed, &[KEY_MODEL]),
        )?;
        let (pre, pre_report) = pretrain::pretrain(
            model,
            train,
            test,
            &cfg.pretrain_schedule,
            &PretrainOptions::default(),
            sub("pretrain")?.as_deref(),
        )?;

        let task = TaskSpec {
            freeze_k: cfg.freeze_k,
            schedule: cfg.finetune_schedule.clone(),
            v_min: p.bounds.v_min,
            v_max: p.bounds.v_max,
            ..TaskSpec::new(cfg.task)
        };
        let (tuned, tune_report) =
            finetune::finetune(pre, &task, tune_train, tune_test, sub("finetune")?.as_deref())?;
        let metrics = finetune::evaluate_task(&tuned, &task, tune_eval, &PickOptions::default())?;
        let row = SweepRow {
            fraction,
            n_field,
            pretrain_test_loss: pre_report.best_test_loss,
            finetune_test_loss: tune_report.best_test_loss,
            field_error: task_error(&metrics),
            metrics,
        };
        log::info!(
            "fraction {fraction}: {n_field} field gathers, fine-tune loss {:.4e}, field error {:.4e}",
            row.finetune_test_loss,
            row.field_error
        );
        rows.push(row);
    }
    if let Some(d) = out_dir {
        write_table(&d.join("sweep.csv"), &rows)?;
    }
    Ok(rows)
}

fn finetune_count(fraction: f64, n: usize) -> Result<usize> {
    Ok(crate::seisgen::mix_counts(fraction, n)?.1)
}

pub fn write_table(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.fraction.to_string(),
                r.n_field.to_string(),
                r.pretrain_test_loss.to_string(),
                r.finetune_test_loss.to_string(),
                r.field_error.to_string(),
            ]
        })
        .collect();
    export::write_csv(
        path,
        Some(&["fraction", "n_field", "pretrain_test_loss", "finetune_test_loss", "field_error"]),
        &body,
    )
}

/// Whether the field error falls, rises or neither as the fraction grows.
pub fn trend(rows: &[SweepRow]) -> &'static str {
    let errs: Vec<f64> = rows.iter().map(|r| r.field_error).collect();
    if errs.windows(2).all(|w| w[1] <= w[0]) {
        "decreasing"
    } else if errs.windows(2).all(|w| w[1] >= w[0]) {
        "increasing"
    } else {
        "mixed"
    }
}
