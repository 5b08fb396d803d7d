//! Additive noise models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gather::{DomainTag, ShotGather};
use crate::numerics::rng::normal;

use super::synth::add_event;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// I.i.d. Gaussian with standard deviation `sigma_mult · std(d)`.
    Gaussian { sigma_mult: f64 },
    /// The field-proxy recipe below.
    FieldProxy,
}

/// Constants of the field-proxy recipe. Every field-proxy gather gets:
///
/// * colored noise: white noise filtered along time by an AR(1) recursion
///   with coefficient `ar_coeff`, scaled to `colored_level · std(d)`;
/// * `n_linear` linear back-scatter-like events with apparent velocity drawn
///   uniformly from `±[apparent_v_min, apparent_v_max]`, random intercept,
///   Ricker wavelets at `linear_freq_ratio` times the signal frequency and
///   peak amplitude `linear_amp · max|d|`;
/// * per-trace gain jitter `1 + jitter · N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldProxyRecipe {
    pub ar_coeff: f64,
    pub colored_level: f64,
    pub n_linear: usize,
    pub apparent_v_min: f64,
    pub apparent_v_max: f64,
    pub linear_freq_ratio: f64,
    pub linear_amp: f64,
    pub jitter: f64,
}

pub const FIELD_PROXY: FieldProxyRecipe = FieldProxyRecipe {
    ar_coeff: 0.8,
    colored_level: 0.3,
    n_linear: 3,
    apparent_v_min: 800.0,
    apparent_v_max: 2500.0,
    linear_freq_ratio: 0.6,
    linear_amp: 0.3,
    jitter: 0.1,
};

/// Default peak frequency assumed by the linear events when none is given.
const FALLBACK_PEAK_HZ: f64 = 25.0;

/// Return `d` plus noise; the result is not renormalized. A field-proxy result
/// is tagged as such.
pub fn add_noise(d: &ShotGather, kind: NoiseKind, rng: &mut impl Rng) -> Result<ShotGather> {
    add_noise_with(d, kind, FALLBACK_PEAK_HZ, rng)
}

/// Like [`add_noise`], with the signal's peak frequency for the field-proxy
/// linear events.
pub fn add_noise_with(d: &ShotGather, kind: NoiseKind, peak_hz: f64, rng: &mut impl Rng) -> Result<ShotGather> {
    match kind {
        NoiseKind::Gaussian { sigma_mult } => {
            if !(sigma_mult >= 0.0) {
                return Err(Error::contract(format!("sigma_mult {sigma_mult} < 0")));
            }
            if sigma_mult == 0.0 {
                return Ok(d.clone());
            }
            let sigma = sigma_mult * d.std();
            let amps = d
                .amplitudes()
                .iter()
                .map(|&v| (v as f64 + sigma * normal(rng)) as f32)
                .collect();
            d.with_amplitudes(amps)
        }
        NoiseKind::FieldProxy => field_proxy(d, &FIELD_PROXY, peak_hz, rng),
    }
}

pub fn field_proxy(
    d: &ShotGather,
    recipe: &FieldProxyRecipe,
    peak_hz: f64,
    rng: &mut impl Rng,
) -> Result<ShotGather> {
    let (x, t) = (d.n_traces(), d.n_samples());
    let std = d.std();
    let peak = d.max_abs() as f64;
    let mut out = d.clone();
    out.domain = DomainTag::FieldProxy;

    // AR(1) stationary variance is 1 / (1 - a²) for unit innovations.
    let a = recipe.ar_coeff;
    let innov = recipe.colored_level * std * (1.0 - a * a).sqrt();
    for i in 0..x {
        let trace = out.trace_mut(i);
        let mut state = normal(rng) * recipe.colored_level * std;
        for v in trace.iter_mut() {
            *v += state as f32;
            state = a * state + innov * normal(rng);
        }
    }

    let record = t as f64 * d.dt;
    let max_offset = d.max_offset().max(1.0);
    for _ in 0..recipe.n_linear {
        let speed = rng.random_range(recipe.apparent_v_min..=recipe.apparent_v_max);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        // Intercept chosen so part of the event lands inside the record.
        let span = max_offset / speed;
        let intercept = if sign > 0.0 {
            rng.random_range(-span..record)
        } else {
            rng.random_range(0.0..record + span)
        };
        let amp = recipe.linear_amp * peak * if rng.random::<bool>() { 1.0 } else { -1.0 };
        for i in 0..x {
            let arrival = intercept + sign * d.offsets[i].abs() / speed;
            add_event(
                out.trace_mut(i),
                d.dt,
                arrival,
                amp,
                peak_hz * recipe.linear_freq_ratio,
            );
        }
    }

    for i in 0..x {
        let gain = (1.0 + recipe.jitter * normal(rng)).max(0.0) as f32;
        for v in out.trace_mut(i) {
            *v *= gain;
        }
    }
    Ok(out)
}
