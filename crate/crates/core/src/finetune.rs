//! Supervised fine-tuning of a pre-trained encoder under a task head.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gather::ShotGather;
use crate::model::{BoundModel, ForwardOptions, HeadInit, HeadKind, SeismicBert};
use crate::numerics::{ops, rng, SeisRng, Tape, Tensor, Var};
use crate::seisgen::{add_noise, NoiseKind};
use crate::train::{self, EpochStats, Objective, RunFiles, Schedule, TrainState, TrainingReport};

pub use crate::seisgen::label_mean_velocity;

const KEY_HEAD: u64 = 4;
const KEY_NOISE: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Denoise,
    Velocity,
    #[serde(rename = "firstbreak")]
    FirstBreak,
    Vrms,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    L1,
    CrossEntropy,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [Self::Denoise, Self::Velocity, Self::FirstBreak, Self::Vrms];

    pub fn loss(self) -> LossKind {
        match self {
            Self::Denoise => LossKind::Mse,
            Self::Velocity | Self::Vrms => LossKind::L1,
            Self::FirstBreak => LossKind::CrossEntropy,
        }
    }

    pub fn head(self) -> HeadKind {
        match self {
            Self::Denoise => HeadKind::Denoise,
            Self::Velocity => HeadKind::Velocity,
            Self::FirstBreak => HeadKind::FirstBreak,
            Self::Vrms => HeadKind::Vrms,
        }
    }

    pub fn default_head_init(self) -> HeadInit {
        match self {
            Self::Denoise => HeadInit::Zeros,
            _ => HeadInit::Random,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Denoise => "denoise",
            Self::Velocity => "velocity",
            Self::FirstBreak => "firstbreak",
            Self::Vrms => "vrms",
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown task {name:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub head_init: HeadInit,
    /// Encoder layers (plus the embedding when positive) kept fixed.
    pub freeze_k: usize,
    pub schedule: Schedule,
    /// Affine used to scale velocity labels to `[0, 1]` and back.
    pub v_min: f64,
    pub v_max: f64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            head_init: kind.default_head_init(),
            freeze_k: 0,
            schedule: Schedule::default(),
            v_min: 1500.0,
            v_max: 4500.0,
        }
    }

    pub fn loss(&self) -> LossKind {
        self.kind.loss()
    }

    fn normalize(&self, v: f32) -> f32 {
        ((v as f64 - self.v_min) / (self.v_max - self.v_min)) as f32
    }

    pub fn denormalize(&self, v: f32) -> f64 {
        self.v_min + v as f64 * (self.v_max - self.v_min)
    }

    fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.v_max > self.v_min) {
            return Err(Error::Config(format!(
                "velocity bounds [{}, {}] are empty",
                self.v_min, self.v_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    Clean(ShotGather),
    /// Interval velocity in m/s, one value per time sample.
    Velocity(Vec<f32>),
    /// First-break sample index per trace.
    FirstBreak(Vec<u16>),
    /// RMS velocity in m/s, one value per time sample.
    Vrms(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub input: ShotGather,
    pub label: Label,
}

impl LabeledSample {
    /// Contract error unless the label suits `kind` and `input`.
    pub fn check(&self, kind: TaskKind) -> Result<()> {
        let (x, t) = (self.input.n_traces(), self.input.n_samples());
        let profile_ok = |p: &[f32]| p.len() == t && p.iter().all(|v| *v > 0.0);
        let ok = match (&self.label, kind) {
            (Label::Clean(g), TaskKind::Denoise) => g.n_traces() == x && g.n_samples() == t,
            (Label::Velocity(p), TaskKind::Velocity) => profile_ok(p),
            (Label::Vrms(p), TaskKind::Vrms) => profile_ok(p),
            (Label::FirstBreak(fb), TaskKind::FirstBreak) => {
                fb.len() == x && fb.iter().all(|&k| (k as usize) < t)
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "label does not fit a {} task on a {x}×{t} gather",
                kind.name()
            )))
        }
    }
}

/// Samples for `kind` from a dataset's label blocks. Denoise pairs use the
/// stored input and its clean version.
pub fn samples_from_dataset(ds: &Dataset, kind: TaskKind) -> Result<Vec<LabeledSample>> {
    let missing = |what: &str| Error::contract(format!("dataset has no {what} labels"));
    (0..ds.len())
        .map(|i| {
            let label = match kind {
                TaskKind::Denoise => Label::Clean(ds.clean_gather(i).ok_or_else(|| missing("clean"))?),
                TaskKind::Velocity => Label::Velocity(ds.velocity.as_ref().ok_or_else(|| missing("velocity"))?[i].clone()),
                TaskKind::FirstBreak => {
                    Label::FirstBreak(ds.first_break.as_ref().ok_or_else(|| missing("first-break"))?[i].clone())
                }
                TaskKind::Vrms => Label::Vrms(ds.vrms.as_ref().ok_or_else(|| missing("vrms"))?[i].clone()),
            };
            Ok(LabeledSample {
                input: ds.gather(i),
                label,
            })
        })
        .collect()
}

/// Denoising pairs from clean gathers: 40% get Gaussian noise at one standard
/// deviation of the gather, 40% at two, the rest stay clean.
pub fn noisy_pairs(clean: &[ShotGather], seed: u64) -> Result<Vec<LabeledSample>> {
    clean
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut r = rng::stream(seed, &[KEY_NOISE, i as u64]);
            let u: f64 = r.random();
            let sigma_mult = if u < 0.4 {
                1.0
            } else if u < 0.8 {
                2.0
            } else {
                0.0
            };
            Ok(LabeledSample {
                input: add_noise(g, NoiseKind::Gaussian { sigma_mult }, &mut r)?,
                label: Label::Clean(g.clone()),
            })
        })
        .collect()
}

fn positions(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn task_loss<'t>(
    model: &BoundModel<'t, f32>,
    task: &TaskSpec,
    sample: &LabeledSample,
    dropout_rng: Option<&mut SeisRng>,
) -> Result<Var<'t, f32>> {
    let out = model.forward(
        &sample.input.to_tensor(),
        &positions(sample.input.n_traces()),
        ForwardOptions {
            capture_attention: false,
            dropout_rng,
        },
    )?;
    let pred = out.output;
    match &sample.label {
        Label::Clean(g) => pred.mse_loss(&g.to_tensor(), None),
        Label::Velocity(p) | Label::Vrms(p) => {
            let target = p.iter().map(|&v| task.normalize(v)).collect();
            pred.l1_loss(&Tensor::new([p.len()], target)?)
        }
        Label::FirstBreak(fb) => {
            let classes: Vec<usize> = fb.iter().map(|&k| k as usize).collect();
            pred.cross_entropy(&classes)
        }
    }
}

struct TaskObjective<'a> {
    task: &'a TaskSpec,
    train: &'a [LabeledSample],
    test: &'a [LabeledSample],
}

impl Objective for TaskObjective<'_> {
    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn n_test(&self) -> usize {
        self.test.len()
    }

    fn train_loss<'t>(&self, model: &BoundModel<'t, f32>, i: usize, rng: &mut SeisRng) -> Result<Var<'t, f32>> {
        task_loss(model, self.task, &self.train[i], Some(rng))
    }

    fn test_loss(&self, model: &SeismicBert<f32>, i: usize) -> Result<f64> {
        let tape = Tape::new();
        let bound = model.bind(&tape, false);
        Ok(task_loss(&bound, self.task, &self.test[i], None)?.item() as f64)
    }
}

/// Attach the task head (seeded by the schedule seed) and apply the freeze.
pub fn prepare_model(mut model: SeismicBert<f32>, task: &TaskSpec) -> Result<SeismicBert<f32>> {
    task.validate()?;
    let mut r = rng::stream(task.schedule.seed, &[KEY_HEAD]);
    model.replace_head(task.kind.head(), task.head_init, &mut r);
    model.freeze_layers(task.freeze_k)?;
    Ok(model)
}

/// Train the run held in `state`, whose model already carries the task head.
pub fn finetune_with(
    state: &mut TrainState,
    task: &TaskSpec,
    train_set: &[LabeledSample],
    test_set: &[LabeledSample],
    files: Option<&RunFiles>,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainingReport> {
    task.validate()?;
    if state.model.head_kind() != Some(task.kind.head()) {
        return Err(Error::contract(format!("model head does not match a {} task", task.kind.name())));
    }
    for s in train_set.iter().chain(test_set) {
        s.check(task.kind)?;
    }
    let objective = TaskObjective {
        task,
        train: train_set,
        test: test_set,
    };
    train::train(state, &objective, &task.schedule, files, on_epoch)
}

/// Replace the head, freeze, and train; returns the best model.
pub fn finetune(
    model: SeismicBert<f32>,
    task: &TaskSpec,
    train_set: &[LabeledSample],
    test_set: &[LabeledSample],
    out_dir: Option<&Path>,
) -> Result<(SeismicBert<f32>, TrainingReport)> {
    let model = prepare_model(model, task)?;
    let mut state = TrainState::new(model, task.schedule.learning_rate);
    let files = out_dir.map(|d| RunFiles { dir: d.to_path_buf() });
    let report = finetune_with(&mut state, task, train_set, test_set, files.as_ref(), &mut |_| {})?;
    Ok((state.model, report))
}

/// Sum that does not depend on the order of `values`.
fn ordered_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseMetrics {
    pub mse: f64,
}

/// Mean squared error of the model's `X×T` output against the clean labels.
/// Works with any gather-shaped head, so the same call measures a
/// reconstruction checkpoint before fine-tuning.
pub fn eval_denoise(model: &SeismicBert<f32>, samples: &[LabeledSample]) -> Result<DenoiseMetrics> {
    let preds = samples
        .iter()
        .map(|s| Ok(model.predict(&s.input, false)?.0))
        .collect::<Result<Vec<_>>>()?;
    denoise_metrics(&preds, samples)
}

pub fn denoise_metrics(preds: &[Tensor<f32>], samples: &[LabeledSample]) -> Result<DenoiseMetrics> {
    let mut sums = Vec::new();
    let mut count = 0usize;
    for (p, s) in preds.iter().zip(samples) {
        let Label::Clean(clean) = &s.label else {
            return Err(Error::contract("denoise evaluation needs clean labels"));
        };
        if p.numel() != clean.amplitudes().len() {
            return Err(Error::shape("eval_denoise", p.shape(), &[clean.n_traces(), clean.n_samples()]));
        }
        sums.push(
            p.data()
                .iter()
                .zip(clean.amplitudes())
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum(),
        );
        count += p.numel();
    }
    if count == 0 {
        return Err(Error::contract("no samples to evaluate"));
    }
    Ok(DenoiseMetrics {
        mse: ordered_sum(sums) / count as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityMetrics {
    /// Mean absolute error in m/s.
    pub mae: f64,
}

/// Profile MAE in m/s for velocity or V_rms samples.
pub fn eval_velocity(model: &SeismicBert<f32>, task: &TaskSpec, samples: &[LabeledSample]) -> Result<VelocityMetrics> {
    let preds = samples
        .iter()
        .map(|s| {
            let p = model.predict(&s.input, false)?.0;
            Ok(p.data().iter().map(|&v| task.denormalize(v)).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    velocity_metrics(&preds, samples)
}

/// MAE between de-normalized predictions (m/s) and profile labels.
pub fn velocity_metrics(preds: &[Vec<f64>], samples: &[LabeledSample]) -> Result<VelocityMetrics> {
    let mut sums = Vec::new();
    let mut count = 0usize;
    for (p, s) in preds.iter().zip(samples) {
        let (Label::Velocity(label) | Label::Vrms(label)) = &s.label else {
            return Err(Error::contract("velocity evaluation needs profile labels"));
        };
        if p.len() != label.len() {
            return Err(Error::shape("eval_velocity", &[label.len()], &[p.len()]));
        }
        sums.push(p.iter().zip(label).map(|(a, &b)| (a - b as f64).abs()).sum());
        count += p.len();
    }
    if count == 0 {
        return Err(Error::contract("no samples to evaluate"));
    }
    Ok(VelocityMetrics {
        mae: ordered_sum(sums) / count as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PickOptions {
    /// A pick is made only where the largest class probability reaches this.
    pub threshold: f64,
    /// Half-width in samples for the hit rate.
    pub tolerance: usize,
    /// Only traces with `|offset| <= max_offset_fraction · max|offset|` count.
    pub max_offset_fraction: f64,
}

impl Default for PickOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            tolerance: 2,
            max_offset_fraction: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PickMetrics {
    /// Traces whose thresholded pick equals the label.
    pub accuracy: f64,
    /// Traces whose argmax lies within the tolerance of the label.
    pub hit_rate: f64,
    pub traces: usize,
}

/// Per trace: the argmax sample and its probability.
pub fn picks(logits: &Tensor<f32>) -> Result<Vec<(usize, f64)>> {
    let probs = ops::softmax(logits, 1)?;
    let (x, _) = probs.dims2()?;
    Ok((0..x)
        .map(|i| {
            let row = probs.row(i);
            let (k, p) = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc });
            (k, p as f64)
        })
        .collect())
}

pub fn eval_firstbreak(model: &SeismicBert<f32>, samples: &[LabeledSample], opts: &PickOptions) -> Result<PickMetrics> {
    let logits = samples
        .iter()
        .map(|s| Ok(model.predict(&s.input, false)?.0))
        .collect::<Result<Vec<_>>>()?;
    firstbreak_metrics(&logits, samples, opts)
}

pub fn firstbreak_metrics(logits: &[Tensor<f32>], samples: &[LabeledSample], opts: &PickOptions) -> Result<PickMetrics> {
    let mut exact = 0usize;
    let mut hits = 0usize;
    let mut traces = 0usize;
    for (l, s) in logits.iter().zip(samples) {
        let Label::FirstBreak(labels) = &s.label else {
            return Err(Error::contract("first-break evaluation needs pick labels"));
        };
        let limit = opts.max_offset_fraction * s.input.max_offset() + 1e-9;
        let found = picks(l)?;
        if found.len() != labels.len() {
            return Err(Error::shape("eval_firstbreak", &[labels.len()], &[found.len()]));
        }
        for (i, ((k, p), &label)) in found.iter().zip(labels).enumerate() {
            if s.input.offsets[i].abs() > limit {
                continue;
            }
            traces += 1;
            if *p >= opts.threshold && *k == label as usize {
                exact += 1;
            }
            if k.abs_diff(label as usize) <= opts.tolerance {
                hits += 1;
            }
        }
    }
    if traces == 0 {
        return Err(Error::contract("no traces to evaluate"));
    }
    Ok(PickMetrics {
        accuracy: exact as f64 / traces as f64,
        hit_rate: hits as f64 / traces as f64,
        traces,
    })
}

/// Evaluation fields of one task, as written to metrics files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskMetrics {
    Denoise(DenoiseMetrics),
    Velocity(VelocityMetrics),
    #[serde(rename = "firstbreak")]
    FirstBreak(PickMetrics),
    Vrms(VelocityMetrics),
}

pub fn evaluate_task(
    model: &SeismicBert<f32>,
    task: &TaskSpec,
    samples: &[LabeledSample],
    pick: &PickOptions,
) -> Result<TaskMetrics> {
    Ok(match task.kind {
        TaskKind::Denoise => TaskMetrics::Denoise(eval_denoise(model, samples)?),
        TaskKind::Velocity => TaskMetrics::Velocity(eval_velocity(model, task, samples)?),
        TaskKind::Vrms => TaskMetrics::Vrms(eval_velocity(model, task, samples)?),
        TaskKind::FirstBreak => TaskMetrics::FirstBreak(eval_firstbreak(model, samples, pick)?),
    })
}
