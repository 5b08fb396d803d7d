//! Mini-batch training loop shared by pre-training and fine-tuning.
//!
//! Every training item gets its own tape and its own random stream keyed by
//! `(seed, epoch, item)`. Items of a batch run in parallel; their gradients
//! are summed in batch order, so results do not depend on the thread count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export;
use crate::model::checkpoint::{Checkpoint, TrainProgress};
use crate::model::{BoundModel, SeismicBert};
use crate::numerics::{rng, OptimizerState, SeisRng, Tape, Tensor, Var};

const KEY_ORDER: u64 = 0;
const KEY_ITEM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a new best test loss before stopping.
    pub patience: usize,
    /// Stop as soon as the test loss reaches this value.
    pub target_loss: Option<f64>,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 5e-4,
            max_epochs: 400,
            patience: 20,
            target_loss: None,
            seed: 0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    TargetReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// `(train_loss, test_loss)` per epoch, including epochs before a resume.
    pub history: Vec<(f64, f64)>,
    pub epochs: usize,
    /// Zero-based epoch of the best test loss.
    pub best_epoch: usize,
    pub best_test_loss: f64,
    pub stop: StopReason,
    /// Seconds spent in this invocation.
    pub wall_time: f64,
}

impl TrainingReport {
    pub fn train_loss(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.0).collect()
    }

    pub fn test_loss(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.1).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_loss_csv(path, &self.history)
    }
}

fn write_loss_csv(path: impl AsRef<Path>, history: &[(f64, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = history
        .iter()
        .enumerate()
        .map(|(e, (tr, te))| vec![(e + 1).to_string(), tr.to_string(), te.to_string()])
        .collect();
    export::write_csv(path, Some(&["epoch", "train_loss", "test_loss"]), &rows)
}

/// What is being minimized.
pub trait Objective: Sync {
    fn n_train(&self) -> usize;
    fn n_test(&self) -> usize;
    /// Loss of training item `i` on a tracked pass; `rng` is private to this
    /// item and epoch.
    fn train_loss<'t>(&self, model: &BoundModel<'t, f32>, i: usize, rng: &mut SeisRng) -> Result<Var<'t, f32>>;
    /// Loss of held-out item `i`, deterministic.
    fn test_loss(&self, model: &SeismicBert<f32>, i: usize) -> Result<f64>;
}

/// Model, optimizer and bookkeeping of a run in progress.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: SeismicBert<f32>,
    pub optimizer: OptimizerState<f32>,
    pub progress: TrainProgress,
    pub best: SeismicBert<f32>,
}

impl TrainState {
    pub fn new(model: SeismicBert<f32>, learning_rate: f64) -> Self {
        Self {
            best: model.clone(),
            model,
            optimizer: OptimizerState::radam(learning_rate),
            progress: TrainProgress {
                best_loss: f64::INFINITY,
                ..TrainProgress::default()
            },
        }
    }

    /// Continue from the `last` checkpoint of an interrupted run; `best` holds
    /// the best weights seen so far.
    pub fn resume(last: Checkpoint, best: Checkpoint) -> Result<Self> {
        let optimizer = last
            .optimizer
            .ok_or_else(|| Error::contract("checkpoint has no optimizer state to resume from"))?;
        let progress = last
            .progress
            .ok_or_else(|| Error::contract("checkpoint has no training progress to resume from"))?;
        Ok(Self {
            model: last.model,
            optimizer,
            progress,
            best: best.model,
        })
    }

    pub fn last_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.optimizer.clone()),
            progress: Some(self.progress.clone()),
        }
    }
}

/// Where a run keeps `best.ssck`, `last.ssck` and `loss.csv`, rewritten after
/// every epoch.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ssck")
    }

    pub fn last(&self) -> PathBuf {
        self.dir.join("last.ssck")
    }

    pub fn loss_csv(&self) -> PathBuf {
        self.dir.join("loss.csv")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub seconds: f64,
}

type ItemGrad = (f64, Vec<Option<Tensor<f32>>>);

fn item_gradient(
    model: &SeismicBert<f32>,
    objective: &dyn Objective,
    i: usize,
    rng: &mut SeisRng,
) -> Result<ItemGrad> {
    let tape = Tape::new();
    let bound = model.bind(&tape, true);
    let loss = objective.train_loss(&bound, i, rng)?;
    let value = loss.item() as f64;
    let mut grads = tape.backward(loss)?;
    let per_param = bound
        .vars()
        .iter()
        .map(|v| if v.requires_grad() { grads.take(*v) } else { None })
        .collect();
    Ok((value, per_param))
}

/// Mean held-out loss, or `None` without a test set.
pub fn evaluate(model: &SeismicBert<f32>, objective: &dyn Objective) -> Result<Option<f64>> {
    let n = objective.n_test();
    if n == 0 {
        return Ok(None);
    }
    let losses = (0..n)
        .into_par_iter()
        .map(|i| objective.test_loss(model, i))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Some(losses.iter().sum::<f64>() / n as f64))
}

/// Run epochs until a stopping rule fires. On return `state.model` holds the
/// weights with the best test loss (train loss without a test set).
pub fn train(
    state: &mut TrainState,
    objective: &dyn Objective,
    schedule: &Schedule,
    files: Option<&RunFiles>,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainingReport> {
    schedule.validate()?;
    let n = objective.n_train();
    if n == 0 {
        return Err(Error::contract("training set is empty"));
    }
    let started = Instant::now();
    let mut stop = stop_reason(state, schedule);

    while stop.is_none() {
        let epoch = state.progress.epochs_done as usize;
        let epoch_start = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(schedule.seed, &[KEY_ORDER, epoch as u64]));

        let mut total = 0.0;
        for batch in order.chunks(schedule.batch_size) {
            let step = state.optimizer.step + 1;
            let results = batch
                .par_iter()
                .map(|&i| {
                    let mut r = rng::stream(schedule.seed, &[KEY_ITEM, epoch as u64, i as u64]);
                    item_gradient(&state.model, objective, i, &mut r)
                })
                .collect::<Result<Vec<ItemGrad>>>()
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("{m} at step {step}")),
                    other => other,
                })?;
            let loss: f64 = results.iter().map(|r| r.0).sum();
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss is {loss} at step {step}")));
            }
            total += loss;
            apply_mean_gradient(&mut state.model, results, batch.len())?;
            state.optimizer.step(state.model.parameters_mut())?;
        }
        let train_loss = total / n as f64;
        let test_loss = evaluate(&state.model, objective)?.unwrap_or(train_loss);
        if !test_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "held-out loss is {test_loss} after epoch {}",
                epoch + 1
            )));
        }

        let p = &mut state.progress;
        p.history.push((train_loss, test_loss));
        p.epochs_done += 1;
        if test_loss < p.best_loss {
            p.best_loss = test_loss;
            p.stale_epochs = 0;
            state.best = state.model.clone();
        } else {
            p.stale_epochs += 1;
        }
        if let Some(f) = files {
            Checkpoint::new(state.best.clone()).save(f.best())?;
            state.last_checkpoint().save(f.last())?;
            write_loss_csv(f.loss_csv(), &state.progress.history)?;
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            test_loss,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {:>4}  train {:.6e}  test {:.6e}  ({:.1}s)",
            epoch + 1,
            train_loss,
            test_loss,
            stats.seconds
        );
        on_epoch(&stats);
        stop = stop_reason(state, schedule);
    }

    state.model = state.best.clone();
    let history = state.progress.history.clone();
    let best_epoch = history
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (e, h)| if h.1 < acc.1 { (e, h.1) } else { acc })
        .0;
    Ok(TrainingReport {
        epochs: history.len(),
        best_epoch,
        best_test_loss: state.progress.best_loss,
        history,
        stop: stop.unwrap_or(StopReason::MaxEpochs),
        wall_time: started.elapsed().as_secs_f64(),
    })
}

fn stop_reason(state: &TrainState, schedule: &Schedule) -> Option<StopReason> {
    let p = &state.progress;
    if let (Some(target), Some(last)) = (schedule.target_loss, p.history.last()) {
        if last.1 <= target {
            return Some(StopReason::TargetReached);
        }
    }
    if p.epochs_done as usize >= schedule.max_epochs {
        return Some(StopReason::MaxEpochs);
    }
    if schedule.patience > 0 && p.stale_epochs as usize >= schedule.patience {
        return Some(StopReason::Patience);
    }
    None
}

fn apply_mean_gradient(model: &mut SeismicBert<f32>, results: Vec<ItemGrad>, count: usize) -> Result<()> {
    let mut params = model.parameters_mut();
    let scale = 1.0 / count as f32;
    let mut sums: Vec<Option<Tensor<f32>>> = vec![None; params.len()];
    for (_, grads) in results {
        for (sum, g) in sums.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            match sum {
                Some(s) => {
                    for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
                None => *sum = Some(g),
            }
        }
    }
    for (p, sum) in params.iter_mut().zip(sums) {
        if p.frozen {
            p.grad = None;
            continue;
        }
        let mut g = sum.ok_or_else(|| Error::contract(format!("no gradient reached {}", p.name)))?;
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
        p.grad = Some(g);
    }
    Ok(())
}
