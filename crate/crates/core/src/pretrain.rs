//! Masked-trace pre-training.
//!
//! A fraction of the traces of each gather is corrupted (noise token, a copy
//! of another trace, or left alone) and the model is trained to reconstruct
//! the original traces at those positions only.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gather::ShotGather;
use crate::model::{BoundModel, ForwardOptions, HeadKind, SeismicBert};
use crate::numerics::rng::{self, normal};
use crate::numerics::{SeisRng, Tensor, Var};
use crate::train::{self, EpochStats, Objective, RunFiles, Schedule, TrainState, TrainingReport};

const KEY_TEST_MASK: u64 = 2;
const KEY_FIXED_MASK: u64 = 3;

/// How one masked trace is corrupted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Corruption {
    /// Replaced by i.i.d. Gaussian noise.
    NoiseToken,
    /// Replaced by a copy of trace `src` of the same gather.
    SwapTrace(usize),
    /// Left as recorded; still part of the loss.
    KeepSame,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    /// Sorted trace indices selected for the loss.
    pub masked: Vec<usize>,
    /// One entry per element of `masked`.
    pub corruption: Vec<Corruption>,
    pub noise_std: f64,
}

impl MaskSpec {
    pub fn is_masked(&self, trace: usize) -> bool {
        self.masked.binary_search(&trace).is_ok()
    }

    /// `X×T` weights: ones on masked traces, zeros elsewhere.
    pub fn weights(&self, n_traces: usize, n_samples: usize) -> Tensor<f32> {
        let mut w = Tensor::zeros([n_traces, n_samples]);
        for &i in &self.masked {
            w.data_mut()[i * n_samples..(i + 1) * n_samples].fill(1.0);
        }
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskOptions {
    /// Fraction of traces selected; the count is `floor(ratio · X)`.
    pub ratio: f64,
    pub noise_std: f64,
    /// Shares of noise-token and swap corruptions; the rest keep the trace.
    pub noise_share: f64,
    pub swap_share: f64,
}

impl Default for MaskOptions {
    fn default() -> Self {
        Self {
            ratio: 0.15,
            noise_std: 1.0,
            noise_share: 0.8,
            swap_share: 0.1,
        }
    }
}

impl MaskOptions {
    pub fn count(&self, n_traces: usize) -> usize {
        (self.ratio * n_traces as f64 + 1e-9).floor() as usize
    }

    fn validate(&self, n_traces: usize) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::contract(format!("mask ratio {} outside (0, 1)", self.ratio)));
        }
        if self.count(n_traces) == 0 {
            return Err(Error::contract(format!(
                "mask ratio {} selects no trace of {n_traces}",
                self.ratio
            )));
        }
        let keep = 1.0 - self.noise_share - self.swap_share;
        if self.noise_share < 0.0 || self.swap_share < 0.0 || keep < -1e-12 || !(self.noise_std >= 0.0) {
            return Err(Error::contract("invalid corruption shares or noise level"));
        }
        Ok(())
    }
}

/// Category counts for `n` masked traces: floors of the expected counts, with
/// the remainder placed by systematic sampling on the fractional parts so each
/// category's expected count is exact.
fn corruption_counts(n: usize, shares: [f64; 3], rng: &mut impl Rng) -> [usize; 3] {
    let expected = shares.map(|s| s.max(0.0) * n as f64);
    let mut counts = expected.map(|e| e.floor() as usize);
    let remainder = n - counts.iter().sum::<usize>();
    if remainder > 0 {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut next = u;
        for (c, e) in counts.iter_mut().zip(expected) {
            cum += e - e.floor();
            while next < cum - 1e-12 && *c < n {
                *c += 1;
                next += 1.0;
            }
        }
        // Guard against the last fractional part rounding below its share.
        let short = n - counts.iter().sum::<usize>();
        counts[0] += short;
    }
    counts
}

/// Pick the traces and corruptions for one gather of `n_traces`.
pub fn draw_mask(n_traces: usize, opts: &MaskOptions, rng: &mut impl Rng) -> Result<MaskSpec> {
    opts.validate(n_traces)?;
    let n = opts.count(n_traces);
    let mut masked = rand::seq::index::sample(rng, n_traces, n).into_vec();
    masked.sort_unstable();
    let keep = (1.0 - opts.noise_share - opts.swap_share).max(0.0);
    let [n_noise, n_swap, _] = corruption_counts(n, [opts.noise_share, opts.swap_share, keep], rng);
    let mut kinds: Vec<u8> = (0..n)
        .map(|k| if k < n_noise { 0 } else if k < n_noise + n_swap { 1 } else { 2 })
        .collect();
    kinds.shuffle(rng);
    let corruption = masked
        .iter()
        .zip(kinds)
        .map(|(&target, kind)| match kind {
            0 => Corruption::NoiseToken,
            1 if n_traces == 1 => Corruption::NoiseToken,
            1 => {
                let mut src = rng.random_range(0..n_traces - 1);
                if src >= target {
                    src += 1;
                }
                Corruption::SwapTrace(src)
            }
            _ => Corruption::KeepSame,
        })
        .collect();
    Ok(MaskSpec {
        masked,
        corruption,
        noise_std: opts.noise_std,
    })
}

/// `clean` is the target, `corrupted` the model input.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSample {
    pub clean: ShotGather,
    pub corrupted: ShotGather,
    pub mask: MaskSpec,
}

/// Corrupt `spec`'s traces of `d`; noise tokens are drawn from `rng`.
pub fn corrupt(d: &ShotGather, spec: &MaskSpec, rng: &mut impl Rng) -> ShotGather {
    let mut out = d.clone();
    for (&i, c) in spec.masked.iter().zip(&spec.corruption) {
        match *c {
            Corruption::NoiseToken => {
                for v in out.trace_mut(i) {
                    *v = (spec.noise_std * normal(rng)) as f32;
                }
            }
            Corruption::SwapTrace(src) => {
                let copy = d.trace(src).to_vec();
                out.trace_mut(i).copy_from_slice(&copy);
            }
            Corruption::KeepSame => {}
        }
    }
    out
}

pub fn apply_mask(d: &ShotGather, opts: &MaskOptions, rng: &mut impl Rng) -> Result<PretrainSample> {
    let mask = draw_mask(d.n_traces(), opts, rng)?;
    let corrupted = corrupt(d, &mask, rng);
    Ok(PretrainSample {
        clean: d.clone(),
        corrupted,
        mask,
    })
}

/// Mean squared error over the entries of masked traces only.
pub fn masked_loss(pred: &[f32], clean: &ShotGather, mask: &MaskSpec) -> Result<f64> {
    if pred.len() != clean.amplitudes().len() {
        return Err(Error::shape(
            "masked_loss",
            &[clean.n_traces(), clean.n_samples()],
            &[pred.len()],
        ));
    }
    if mask.masked.is_empty() {
        return Err(Error::contract("mask selects no trace"));
    }
    let t = clean.n_samples();
    let mut total = 0.0;
    for &i in &mask.masked {
        for k in 0..t {
            let d = pred[i * t + k] as f64 - clean.trace(i)[k] as f64;
            total += d * d;
        }
    }
    Ok(total / (mask.masked.len() * t) as f64)
}

/// Loss of predicting zeros: the mean of `clean²` over masked entries.
pub fn zero_prediction_loss(sample: &PretrainSample) -> Result<f64> {
    let zeros = vec![0.0; sample.clean.amplitudes().len()];
    masked_loss(&zeros, &sample.clean, &sample.mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentOptions {
    /// Shared time shift drawn uniformly from `-max_shift..=max_shift`.
    pub max_shift: usize,
    /// Flip polarity with probability one half.
    pub polarity_flip: bool,
    /// Draw fresh masks every epoch rather than one fixed mask per gather.
    pub mask_reposition: bool,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self {
            max_shift: 0,
            polarity_flip: false,
            mask_reposition: true,
        }
    }
}

/// Roll every trace by `shift` samples (positive = later), zero-filling the
/// exposed samples.
pub fn time_shift(d: &ShotGather, shift: isize) -> ShotGather {
    let t = d.n_samples() as isize;
    let mut out = d.clone();
    for i in 0..d.n_traces() {
        let src = d.trace(i);
        let dst = out.trace_mut(i);
        for (k, v) in dst.iter_mut().enumerate() {
            let j = k as isize - shift;
            *v = if (0..t).contains(&j) { src[j as usize] } else { 0.0 };
        }
    }
    out
}

pub fn polarity_flip(d: &ShotGather) -> ShotGather {
    let mut out = d.clone();
    out.amplitudes_mut().iter_mut().for_each(|v| *v = -*v);
    out
}

pub fn augment(d: &ShotGather, opts: &AugmentOptions, rng: &mut impl Rng) -> Result<ShotGather> {
    if opts.max_shift >= d.n_samples() {
        return Err(Error::contract(format!(
            "time shift {} must be below {} samples",
            opts.max_shift,
            d.n_samples()
        )));
    }
    let mut out = d.clone();
    if opts.max_shift > 0 {
        let m = opts.max_shift as i64;
        out = time_shift(&out, rng.random_range(-m..=m) as isize);
    }
    if opts.polarity_flip && rng.random::<bool>() {
        out = polarity_flip(&out);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainOptions {
    pub mask: MaskOptions,
    pub augment: AugmentOptions,
}

/// Held-out samples with masks fixed by `(seed, index)`.
pub fn fixed_samples(gathers: &[ShotGather], opts: &MaskOptions, seed: u64) -> Result<Vec<PretrainSample>> {
    gathers
        .iter()
        .enumerate()
        .map(|(i, g)| apply_mask(g, opts, &mut rng::stream(seed, &[KEY_TEST_MASK, i as u64])))
        .collect()
}

fn positions(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Tracked masked loss of one sample.
pub fn sample_loss<'t>(
    model: &BoundModel<'t, f32>,
    sample: &PretrainSample,
    dropout_rng: Option<&mut SeisRng>,
) -> Result<Var<'t, f32>> {
    let x = sample.clean.n_traces();
    let out = model.forward(
        &sample.corrupted.to_tensor(),
        &positions(x),
        ForwardOptions {
            capture_attention: false,
            dropout_rng,
        },
    )?;
    let w = sample.mask.weights(x, sample.clean.n_samples());
    out.output.mse_loss(&sample.clean.to_tensor(), Some(&w))
}

/// Untracked masked loss of one sample.
pub fn eval_sample(model: &SeismicBert<f32>, sample: &PretrainSample) -> Result<f64> {
    let (pred, _) = model.predict(&sample.corrupted, false)?;
    masked_loss(pred.data(), &sample.clean, &sample.mask)
}

/// Mean masked loss over `samples`.
pub fn eval_masked(model: &SeismicBert<f32>, samples: &[PretrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("no samples to evaluate"));
    }
    let mut total = 0.0;
    for s in samples {
        total += eval_sample(model, s)?;
    }
    Ok(total / samples.len() as f64)
}

/// Mean zero-prediction loss over `samples`.
pub fn zero_baseline(samples: &[PretrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("no samples to evaluate"));
    }
    let mut total = 0.0;
    for s in samples {
        total += zero_prediction_loss(s)?;
    }
    Ok(total / samples.len() as f64)
}

struct MaskedObjective<'a> {
    train: &'a [ShotGather],
    test: Vec<PretrainSample>,
    opts: PretrainOptions,
    seed: u64,
}

impl Objective for MaskedObjective<'_> {
    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn n_test(&self) -> usize {
        self.test.len()
    }

    fn train_loss<'t>(&self, model: &BoundModel<'t, f32>, i: usize, rng: &mut SeisRng) -> Result<Var<'t, f32>> {
        let g = augment(&self.train[i], &self.opts.augment, rng)?;
        let sample = if self.opts.augment.mask_reposition {
            apply_mask(&g, &self.opts.mask, rng)?
        } else {
            let mut fixed = rng::stream(self.seed, &[KEY_FIXED_MASK, i as u64]);
            let mask = draw_mask(g.n_traces(), &self.opts.mask, &mut fixed)?;
            let corrupted = corrupt(&g, &mask, rng);
            PretrainSample {
                clean: g,
                corrupted,
                mask,
            }
        };
        sample_loss(model, &sample, Some(rng))
    }

    fn test_loss(&self, model: &SeismicBert<f32>, i: usize) -> Result<f64> {
        eval_sample(model, &self.test[i])
    }
}

fn check_inputs(model: &SeismicBert<f32>, gathers: &[ShotGather]) -> Result<()> {
    if model.head_kind() != Some(HeadKind::Reconstruction) {
        return Err(Error::contract("pre-training needs a reconstruction head"));
    }
    for g in gathers {
        if g.n_samples() != model.config.samples || g.n_traces() > model.config.max_traces {
            return Err(Error::shape(
                "pretrain gather",
                &[model.config.max_traces, model.config.samples],
                &[g.n_traces(), g.n_samples()],
            ));
        }
    }
    Ok(())
}

/// Continue or start a pre-training run held in `state`. Held-out masks are
/// fixed by the schedule seed; training masks and augmentation are drawn
/// from the per-item stream of each epoch.
pub fn pretrain_with(
    state: &mut TrainState,
    train_set: &[ShotGather],
    test_set: &[ShotGather],
    schedule: &Schedule,
    opts: &PretrainOptions,
    files: Option<&RunFiles>,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainingReport> {
    if train_set.is_empty() {
        return Err(Error::contract("pre-training dataset is empty"));
    }
    check_inputs(&state.model, train_set)?;
    check_inputs(&state.model, test_set)?;
    let objective = MaskedObjective {
        train: train_set,
        test: fixed_samples(test_set, &opts.mask, schedule.seed)?,
        opts: *opts,
        seed: schedule.seed,
    };
    train::train(state, &objective, schedule, files, on_epoch)
}

/// Fresh pre-training run; returns the best model and the report.
pub fn pretrain(
    model: SeismicBert<f32>,
    train_set: &[ShotGather],
    test_set: &[ShotGather],
    schedule: &Schedule,
    opts: &PretrainOptions,
    out_dir: Option<&Path>,
) -> Result<(SeismicBert<f32>, TrainingReport)> {
    let mut state = TrainState::new(model, schedule.learning_rate);
    let files = out_dir.map(|d| RunFiles { dir: d.to_path_buf() });
    let report = pretrain_with(&mut state, train_set, test_set, schedule, opts, files.as_ref(), &mut |_| {})?;
    Ok((state.model, report))
}
