//! Normal-moveout correction with stretch muting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gather::ShotGather;

/// What happens to traces beyond the corrected offset range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetPolicy {
    /// Keep them as recorded.
    #[default]
    Untouched,
    /// Drop them from the output gather.
    Excluded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmoOptions {
    /// Samples whose stretch `t(x)/t0 - 1` exceeds this are zeroed.
    pub stretch_mute: f64,
    /// Only offsets up to this fraction of the largest one are corrected.
    pub offset_fraction: f64,
    pub policy: OffsetPolicy,
}

impl Default for NmoOptions {
    fn default() -> Self {
        Self {
            stretch_mute: 0.5,
            offset_fraction: 1.0,
            policy: OffsetPolicy::Untouched,
        }
    }
}

fn check(d: &ShotGather, vrms: &[f64], opts: &NmoOptions) -> Result<()> {
    if vrms.len() != d.n_samples() {
        return Err(Error::shape("nmo velocity", &[d.n_samples()], &[vrms.len()]));
    }
    if vrms.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::contract("NMO velocities must be positive"));
    }
    if !(opts.stretch_mute >= 0.0) || !(0.0..=1.0).contains(&opts.offset_fraction) {
        return Err(Error::contract("invalid NMO options"));
    }
    Ok(())
}

/// Moveout time for zero-offset time `t0` at offset `x`.
pub fn moveout(t0: f64, x: f64, v: f64) -> f64 {
    (t0 * t0 + x * x / (v * v)).sqrt()
}

fn stretch(t0: f64, t: f64) -> f64 {
    if t0 > 0.0 {
        t / t0 - 1.0
    } else if t == t0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Linear interpolation at fractional sample `p`; zero outside the trace.
fn sample_at(trace: &[f32], p: f64) -> f32 {
    if !(p >= 0.0) || p > (trace.len() - 1) as f64 {
        return 0.0;
    }
    let i = p.floor() as usize;
    if i + 1 >= trace.len() {
        return trace[i];
    }
    let w = (p - i as f64) as f32;
    trace[i] * (1.0 - w) + trace[i + 1] * w
}

fn apply(
    d: &ShotGather,
    opts: &NmoOptions,
    mut per_trace: impl FnMut(&[f32], f64, &mut [f32]),
) -> Result<ShotGather> {
    let limit = opts.offset_fraction * d.max_offset();
    let n = d.n_samples();
    let mut keep = Vec::new();
    let mut amps = Vec::with_capacity(d.amplitudes().len());
    for i in 0..d.n_traces() {
        let x = d.offsets[i];
        let within = x.abs() <= limit + 1e-9;
        if !within && opts.policy == OffsetPolicy::Excluded {
            continue;
        }
        keep.push(i);
        let trace = d.trace(i);
        if within {
            let mut out = vec![0.0f32; n];
            per_trace(trace, x, &mut out);
            amps.extend(out);
        } else {
            amps.extend_from_slice(trace);
        }
    }
    if keep.is_empty() {
        return Err(Error::contract("no trace inside the NMO offset range"));
    }
    let offsets = keep.iter().map(|&i| d.offsets[i]).collect();
    let mut out = ShotGather::new(keep.len(), n, amps, d.dt, offsets)?;
    out.domain = d.domain;
    Ok(out)
}

/// Flatten reflections: output `(t0, x)` is read from input time
/// `sqrt(t0² + x²/V_rms(t0)²)` by linear interpolation, then stretch-muted.
pub fn nmo_correct(d: &ShotGather, vrms: &[f64], opts: &NmoOptions) -> Result<ShotGather> {
    check(d, vrms, opts)?;
    let dt = d.dt;
    apply(d, opts, |trace, x, out| {
        for (k, o) in out.iter_mut().enumerate() {
            let t0 = k as f64 * dt;
            let t = moveout(t0, x, vrms[k]);
            if stretch(t0, t) > opts.stretch_mute {
                continue;
            }
            *o = sample_at(trace, t / dt);
        }
    })
}

/// Undo [`nmo_correct`] with the same profile: output time `t` is read from
/// the zero-offset time whose moveout lands on `t`. Muted zero-offset times
/// stay zero.
pub fn inverse_nmo(d: &ShotGather, vrms: &[f64], opts: &NmoOptions) -> Result<ShotGather> {
    check(d, vrms, opts)?;
    let dt = d.dt;
    let n = d.n_samples();
    apply(d, opts, |trace, x, out| {
        let tt: Vec<f64> = (0..n).map(|j| moveout(j as f64 * dt, x, vrms[j])).collect();
        for (k, o) in out.iter_mut().enumerate() {
            let t = k as f64 * dt;
            let Some(j) = (0..n - 1).find(|&j| tt[j] <= t && t <= tt[j + 1]) else {
                if n == 1 || (tt[0] == t) {
                    *o = trace[0];
                }
                continue;
            };
            let span = tt[j + 1] - tt[j];
            let frac = if span > 0.0 { (t - tt[j]) / span } else { 0.0 };
            let p = j as f64 + frac;
            let t0 = p * dt;
            if stretch(t0, t) > opts.stretch_mute {
                continue;
            }
            *o = sample_at(trace, p);
        }
    })
}
