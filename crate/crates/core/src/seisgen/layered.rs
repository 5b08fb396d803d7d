//! 1D layered earth models parameterized in two-way vertical time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stack of layers; the last one extends to the end of the record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredModel {
    /// Interval velocity of each layer (m/s).
    pub velocities: Vec<f64>,
    /// Two-way vertical travel time through each layer (s).
    pub twt: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerBounds {
    pub min_layers: usize,
    pub max_layers: usize,
    pub v_min: f64,
    pub v_max: f64,
    /// Sort velocities so they increase with depth.
    pub monotone: bool,
    /// Earliest first interface as a fraction of the record length.
    pub min_first_fraction: f64,
    /// Smallest two-way time between consecutive interfaces (s).
    pub min_gap: f64,
}

impl Default for LayerBounds {
    fn default() -> Self {
        Self {
            min_layers: 2,
            max_layers: 8,
            v_min: 1500.0,
            v_max: 4500.0,
            monotone: true,
            min_first_fraction: 0.1,
            min_gap: 0.04,
        }
    }
}

impl LayeredModel {
    pub fn new(velocities: Vec<f64>, twt: Vec<f64>) -> Result<Self> {
        if velocities.is_empty() || velocities.len() != twt.len() {
            return Err(Error::contract(format!(
                "{} velocities for {} layer times",
                velocities.len(),
                twt.len()
            )));
        }
        if velocities.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::contract("layer velocities must be positive"));
        }
        if twt.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::contract("layer times must be positive"));
        }
        Ok(Self { velocities, twt })
    }

    /// One layer filling `record` seconds.
    pub fn constant(velocity: f64, record: f64) -> Result<Self> {
        Self::new(vec![velocity], vec![record])
    }

    pub fn n_layers(&self) -> usize {
        self.velocities.len()
    }

    /// Two-way time at the base of each layer.
    pub fn interface_times(&self) -> Vec<f64> {
        self.twt
            .iter()
            .scan(0.0, |acc, dt| {
                *acc += dt;
                Some(*acc)
            })
            .collect()
    }

    /// Depth of the base of each layer (m).
    pub fn interface_depths(&self) -> Vec<f64> {
        self.velocities
            .iter()
            .zip(&self.twt)
            .scan(0.0, |acc, (v, t)| {
                *acc += v * t / 2.0;
                Some(*acc)
            })
            .collect()
    }

    /// Index of the layer containing two-way time `t`; times beyond the last
    /// interface fall in the last layer.
    pub fn layer_at_time(&self, t: f64) -> usize {
        let mut top = 0.0;
        for (i, dt) in self.twt.iter().enumerate() {
            top += dt;
            if t < top {
                return i;
            }
        }
        self.n_layers() - 1
    }

    pub fn layer_at_depth(&self, z: f64) -> usize {
        let mut base = 0.0;
        for (i, (v, t)) in self.velocities.iter().zip(&self.twt).enumerate() {
            base += v * t / 2.0;
            if z < base {
                return i;
            }
        }
        self.n_layers() - 1
    }

    /// Interval velocity sampled at `k·dt`, `k = 0..n`.
    pub fn interval_profile(&self, dt: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| self.velocities[self.layer_at_time(k as f64 * dt)])
            .collect()
    }

    /// RMS velocity from the surface to two-way time `t`, integrating the
    /// interval velocity; at layer bases it equals [`vrms`].
    pub fn vrms_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.velocities[0];
        }
        let mut acc = 0.0;
        let mut top = 0.0;
        for (i, (v, dt)) in self.velocities.iter().zip(&self.twt).enumerate() {
            let last = i + 1 == self.n_layers();
            let span = if last { t - top } else { dt.min(t - top) };
            acc += v * v * span;
            top += dt;
            if t <= top {
                break;
            }
        }
        (acc / t).sqrt()
    }

    pub fn vrms_profile(&self, dt: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| self.vrms_at(k as f64 * dt)).collect()
    }

    /// Normal-incidence reflection coefficient at the base of each layer but
    /// the last, from velocity contrast alone.
    pub fn reflection_coefficients(&self) -> Vec<f64> {
        self.velocities
            .windows(2)
            .map(|w| (w[1] - w[0]) / (w[1] + w[0]))
            .collect()
    }
}

/// RMS velocity down to the base of layer `n` (1-based):
/// `sqrt(Σ V_i² Δt_i / Σ Δt_i)` over `i ≤ n`.
pub fn vrms(model: &LayeredModel, n: usize) -> Result<f64> {
    if n == 0 || n > model.n_layers() {
        return Err(Error::Range(format!(
            "layer {n} outside 1..={}",
            model.n_layers()
        )));
    }
    let (num, den) = model.velocities[..n]
        .iter()
        .zip(&model.twt[..n])
        .fold((0.0, 0.0), |(a, b), (v, t)| (a + v * v * t, b + t));
    Ok((num / den).sqrt())
}

/// Random model filling a record of `record` seconds. Layer count is uniform
/// in the bounds; interfaces are uniform in time subject to the spacing
/// limits; velocities are uniform in `[v_min, v_max]`.
pub fn random_layered_model(
    rng: &mut impl Rng,
    bounds: &LayerBounds,
    record: f64,
) -> Result<LayeredModel> {
    if bounds.min_layers == 0 || bounds.min_layers > bounds.max_layers {
        return Err(Error::Config("layer count bounds are empty".into()));
    }
    if !(bounds.v_min > 0.0 && bounds.v_min <= bounds.v_max) {
        return Err(Error::Config("velocity bounds are invalid".into()));
    }
    let n = rng.random_range(bounds.min_layers..=bounds.max_layers);
    let mut velocities: Vec<f64> = (0..n)
        .map(|_| {
            if bounds.v_max > bounds.v_min {
                rng.random_range(bounds.v_min..bounds.v_max)
            } else {
                bounds.v_min
            }
        })
        .collect();
    if bounds.monotone {
        velocities.sort_by(f64::total_cmp);
    }

    // Interfaces: draw n-1 points in the usable window, spread them so no two
    // are closer than min_gap, keeping the draw reproducible.
    let start = bounds.min_first_fraction * record;
    let end = 0.95 * record;
    let k = n - 1;
    let slack = (end - start) - bounds.min_gap * k.saturating_sub(1) as f64;
    if k > 0 && slack <= 0.0 {
        return Err(Error::Config(format!(
            "{n} layers do not fit in a {record} s record"
        )));
    }
    let mut u: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * slack).collect();
    u.sort_by(f64::total_cmp);
    let interfaces: Vec<f64> = u
        .iter()
        .enumerate()
        .map(|(i, x)| start + x + i as f64 * bounds.min_gap)
        .collect();
    let mut twt = Vec::with_capacity(n);
    let mut prev = 0.0;
    for t in &interfaces {
        twt.push(t - prev);
        prev = *t;
    }
    twt.push(record - prev);
    LayeredModel::new(velocities, twt)
}
