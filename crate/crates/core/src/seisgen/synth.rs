//! Convolutional shot-gather synthesis.
//!
//! Each reflector contributes a Ricker wavelet on the hyperbola
//! `t(x) = sqrt(t0² + x²/V_rms²)` with amplitude equal to its velocity-contrast
//! reflection coefficient. The first arrival (direct or refracted, whichever
//! is earlier) comes from a fast-marching solve on the rasterized model, so
//! the emitted first-break labels and the data agree by construction. This is
//! a kinematic stand-in for wave-equation modeling: no multiples, no
//! divergence, no ground roll.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gather::ShotGather;

use super::eikonal::{first_break_labels, travel_times};
use super::grid::GridModel;
use super::layered::LayeredModel;

/// Receiver line with the source at offset zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeom {
    pub n_receivers: usize,
    pub near_offset: f64,
    pub spacing: f64,
    /// Source position along the line (m).
    pub source_x: f64,
}

impl AcquisitionGeom {
    pub fn new(n_receivers: usize, near_offset: f64, spacing: f64) -> Self {
        Self {
            n_receivers,
            near_offset,
            spacing,
            source_x: 0.0,
        }
    }

    pub fn offsets(&self) -> Vec<f64> {
        (0..self.n_receivers)
            .map(|i| self.near_offset + i as f64 * self.spacing)
            .collect()
    }

    pub fn max_offset(&self) -> f64 {
        self.near_offset + (self.n_receivers.saturating_sub(1)) as f64 * self.spacing
    }
}

/// Sampling of the recorded gather.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub n_samples: usize,
    pub dt: f64,
}

impl Sampling {
    pub fn record(&self) -> f64 {
        self.n_samples as f64 * self.dt
    }
}

/// Labels emitted with every synthetic gather, all on the gather's grids.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthLabels {
    /// Interval velocity at each time sample (m/s).
    pub velocity: Vec<f32>,
    /// RMS velocity at each time sample (m/s).
    pub vrms: Vec<f32>,
    /// First-arrival sample index per trace.
    pub first_break: Vec<u16>,
    /// First-arrival time per trace (s).
    pub first_arrival: Vec<f64>,
}

/// Relative size of the first arrival against the strongest reflection.
pub const FIRST_ARRIVAL_GAIN: f64 = 0.5;

/// Zero-phase Ricker wavelet with peak frequency `f` at lag `tau`.
pub fn ricker(f: f64, tau: f64) -> f64 {
    let a = (std::f64::consts::PI * f * tau).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Half-width (s) beyond which the Ricker wavelet is negligible.
pub fn ricker_support(f: f64) -> f64 {
    1.5 / f
}

pub(crate) fn add_event(trace: &mut [f32], dt: f64, t: f64, amp: f64, f: f64) {
    let half = ricker_support(f);
    let lo = ((t - half) / dt).floor().max(0.0) as usize;
    let hi = (((t + half) / dt).ceil().max(0.0) as usize).min(trace.len().saturating_sub(1));
    if t - half > (trace.len() as f64) * dt {
        return;
    }
    for (k, v) in trace.iter_mut().enumerate().take(hi + 1).skip(lo) {
        *v += (amp * ricker(f, k as f64 * dt - t)) as f32;
    }
}

/// Grid spacing and extent used for the first-arrival solve.
fn solve_grid(model: &LayeredModel, geom: &AcquisitionGeom) -> (f64, usize, usize) {
    let depth = model.interface_depths().last().copied().unwrap_or(0.0);
    let x_extent = geom.max_offset().max(geom.spacing);
    let h = (geom.spacing / 2.0)
        .max(depth / 256.0)
        .max(x_extent / 256.0)
        .max(1e-3);
    let nx = (x_extent / h).ceil() as usize + 2;
    let nz = (depth / h).ceil() as usize + 2;
    (h, nx, nz)
}

/// Earliest arrival at each receiver from a surface source.
pub fn first_arrival_times(model: &LayeredModel, geom: &AcquisitionGeom) -> Result<Vec<f64>> {
    let (h, nx, nz) = solve_grid(model, geom);
    let grid = GridModel::from_layered(model, nx, nz, h, h)?;
    let field = travel_times(&grid, (0, 0))?;
    Ok(geom.offsets().iter().map(|x| field.surface_at(x.abs())).collect())
}

/// Synthesize one gather and its labels; amplitudes are normalized to
/// `[-1, 1]`.
pub fn synth_gather(
    model: &LayeredModel,
    geom: &AcquisitionGeom,
    sampling: Sampling,
    peak_hz: f64,
) -> Result<(ShotGather, SynthLabels)> {
    let Sampling { n_samples, dt } = sampling;
    if geom.n_receivers == 0 || n_samples == 0 || !(dt > 0.0) {
        return Err(Error::contract("empty acquisition or sampling"));
    }
    if 2.0 * ricker_support(peak_hz) > sampling.record() {
        return Err(Error::contract(format!(
            "a {peak_hz} Hz wavelet does not fit in a {} s record",
            sampling.record()
        )));
    }
    let offsets = geom.offsets();
    let mut gather = ShotGather::zeros(geom.n_receivers, n_samples, dt, offsets.clone())?;

    let coefficients = model.reflection_coefficients();
    let t0s = model.interface_times();
    let first = first_arrival_times(model, geom)?;
    let strongest = coefficients.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let first_amp = if strongest > 0.0 {
        FIRST_ARRIVAL_GAIN * strongest
    } else {
        1.0
    };

    for (i, &x) in offsets.iter().enumerate() {
        let trace = gather.trace_mut(i);
        add_event(trace, dt, first[i], first_amp, peak_hz);
        for (n, (&r, &t0)) in coefficients.iter().zip(&t0s).enumerate() {
            if r == 0.0 {
                continue;
            }
            let v = super::layered::vrms(model, n + 1)?;
            let t = (t0 * t0 + x * x / (v * v)).sqrt();
            // The hyperbola is only an approximation at long offsets; keep
            // every reflection behind the first arrival.
            if t < first[i] {
                continue;
            }
            add_event(trace, dt, t, r, peak_hz);
        }
    }
    gather.normalize();

    let labels = SynthLabels {
        velocity: model
            .interval_profile(dt, n_samples)
            .into_iter()
            .map(|v| v as f32)
            .collect(),
        vrms: model
            .vrms_profile(dt, n_samples)
            .into_iter()
            .map(|v| v as f32)
            .collect(),
        first_break: first_break_labels(&first, dt, n_samples)?,
        first_arrival: first,
    };
    Ok((gather, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ricker_peak_and_zero_crossing() {
        assert_eq!(ricker(25.0, 0.0), 1.0);
        let zero = 1.0 / (std::f64::consts::PI * 25.0 * std::f64::consts::SQRT_2);
        assert!(ricker(25.0, zero).abs() < 1e-12);
    }

    #[test]
    fn offsets_from_geometry() {
        let g = AcquisitionGeom::new(3, 10.0, 12.5);
        assert_eq!(g.offsets(), vec![10.0, 22.5, 35.0]);
        assert_eq!(g.max_offset(), 35.0);
    }
}
