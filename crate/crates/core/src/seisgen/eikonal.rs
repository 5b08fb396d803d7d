//! First-arrival travel times by first-order fast marching.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;

use crate::error::{Error, Result};

use super::grid::GridModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FmmOptions {
    /// Nodes within this many cells of the source get straight-ray times
    /// instead of marched ones, which removes most of the point-source error.
    pub init_radius: f64,
}

impl Default for FmmOptions {
    fn default() -> Self {
        Self { init_radius: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeField {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    /// Row-major by depth, like [`GridModel::velocity`].
    pub times: Vec<f64>,
    /// Node indices in the order they were accepted.
    pub accepted: Vec<usize>,
}

impl TimeField {
    pub fn at(&self, ix: usize, iz: usize) -> f64 {
        self.times[iz * self.nx + ix]
    }

    /// Times along the top row.
    pub fn surface(&self) -> &[f64] {
        &self.times[..self.nx]
    }

    /// Surface time at horizontal distance `x` from column 0, linearly
    /// interpolated and clamped to the grid.
    pub fn surface_at(&self, x: f64) -> f64 {
        let s = (x / self.dx).clamp(0.0, (self.nx - 1) as f64);
        let i = (s.floor() as usize).min(self.nx.saturating_sub(2));
        if self.nx == 1 {
            return self.times[0];
        }
        let w = s - i as f64;
        self.times[i] * (1.0 - w) + self.times[i + 1] * w
    }
}

pub fn travel_times(model: &GridModel, source: (usize, usize)) -> Result<TimeField> {
    travel_times_with(model, source, FmmOptions::default())
}

/// Solve `|∇t| = 1/v` from a point source at node `source = (ix, iz)` with a
/// 4-neighbor upwind scheme.
pub fn travel_times_with(model: &GridModel, source: (usize, usize), opts: FmmOptions) -> Result<TimeField> {
    let (nx, nz) = (model.nx, model.nz);
    let (sx, sz) = source;
    if sx >= nx || sz >= nz {
        return Err(Error::contract(format!(
            "source ({sx}, {sz}) outside {nx}×{nz} grid"
        )));
    }
    if let Some(v) = model.velocity.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::contract(format!("non-positive velocity {v}")));
    }
    let slowness: Vec<f64> = model.velocity.iter().map(|v| 1.0 / v).collect();
    let (dx, dz) = (model.dx, model.dz);
    let n = nx * nz;
    let src = sz * nx + sx;

    let mut times = vec![f64::INFINITY; n];
    let mut fixed = vec![false; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();

    // Straight-ray times near the source, averaging end-point slowness.
    let r = opts.init_radius.max(0.0);
    let rx = (r * dz.max(dx) / dx).ceil() as usize;
    let rz = (r * dz.max(dx) / dz).ceil() as usize;
    for iz in sz.saturating_sub(rz)..=(sz + rz).min(nz - 1) {
        for ix in sx.saturating_sub(rx)..=(sx + rx).min(nx - 1) {
            let ex = (ix as f64 - sx as f64) * dx;
            let ez = (iz as f64 - sz as f64) * dz;
            let dist = (ex * ex + ez * ez).sqrt();
            let cells = dist / dx.min(dz);
            let id = iz * nx + ix;
            if id == src || cells <= r {
                times[id] = dist * (slowness[src] + slowness[id]) / 2.0;
                fixed[id] = true;
                heap.push(Reverse((OrderedFloat(times[id]), id)));
            }
        }
    }

    let mut accepted = Vec::with_capacity(n);
    while let Some(Reverse((OrderedFloat(t), id))) = heap.pop() {
        if done[id] || t != times[id] {
            continue;
        }
        done[id] = true;
        accepted.push(id);
        let (ix, iz) = (id % nx, id / nx);
        let neighbors = [
            (ix > 0).then(|| id - 1),
            (ix + 1 < nx).then(|| id + 1),
            (iz > 0).then(|| id - nx),
            (iz + 1 < nz).then(|| id + nx),
        ];
        for nb in neighbors.into_iter().flatten() {
            if done[nb] || fixed[nb] {
                continue;
            }
            let candidate = update(nb, nx, nz, dx, dz, slowness[nb], &times, &done);
            if candidate < times[nb] {
                times[nb] = candidate;
                heap.push(Reverse((OrderedFloat(candidate), nb)));
            }
        }
    }

    Ok(TimeField {
        nx,
        nz,
        dx,
        dz,
        times,
        accepted,
    })
}

#[allow(clippy::too_many_arguments)]
fn update(id: usize, nx: usize, nz: usize, dx: f64, dz: f64, s: f64, times: &[f64], done: &[bool]) -> f64 {
    let (ix, iz) = (id % nx, id / nx);
    let known = |j: usize| if done[j] { times[j] } else { f64::INFINITY };
    let mut a = f64::INFINITY;
    if ix > 0 {
        a = a.min(known(id - 1));
    }
    if ix + 1 < nx {
        a = a.min(known(id + 1));
    }
    let mut b = f64::INFINITY;
    if iz > 0 {
        b = b.min(known(id - nx));
    }
    if iz + 1 < nz {
        b = b.min(known(id + nx));
    }
    let one_sided = (a + s * dx).min(b + s * dz);
    if a.is_infinite() || b.is_infinite() {
        return one_sided;
    }
    let (wx, wz) = (1.0 / (dx * dx), 1.0 / (dz * dz));
    let sum_w = wx + wz;
    let lin = a * wx + b * wz;
    let disc = lin * lin - sum_w * (a * a * wx + b * b * wz - s * s);
    if disc < 0.0 {
        return one_sided;
    }
    let t = (lin + disc.sqrt()) / sum_w;
    if t < a.max(b) {
        one_sided
    } else {
        t.min(one_sided)
    }
}

/// Sample index of each first arrival: `round(t / dt)` clipped to `[0, n)`.
pub fn first_break_labels(times: &[f64], dt: f64, n_samples: usize) -> Result<Vec<u16>> {
    if !(dt > 0.0) {
        return Err(Error::contract("dt must be positive"));
    }
    let top = n_samples.saturating_sub(1).min(u16::MAX as usize) as f64;
    Ok(times
        .iter()
        .map(|t| (t / dt).round().clamp(0.0, top) as u16)
        .collect())
}
