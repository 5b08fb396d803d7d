//! 2D velocity grids, their random sampler and laterally averaged labels.

use rand::Rng;

use crate::error::{Error, Result};
use super::layered::{LayerBounds, LayeredModel};

/// `v(x, z)` on a regular grid, stored row-major by depth (`z` outer).
#[derive(Clone, Debug, PartialEq)]
pub struct GridModel {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    /// Horizontal coordinate of column 0 (m).
    pub origin_x: f64,
    pub velocity: Vec<f64>,
}

impl GridModel {
    pub fn new(nx: usize, nz: usize, dx: f64, dz: f64, velocity: Vec<f64>) -> Result<Self> {
        if nx == 0 || nz == 0 {
            return Err(Error::contract("grid needs at least one node"));
        }
        if !(dx > 0.0 && dz > 0.0) {
            return Err(Error::contract("grid spacing must be positive"));
        }
        if velocity.len() != nx * nz {
            return Err(Error::shape("grid", &[nz, nx], &[velocity.len()]));
        }
        Ok(Self {
            nx,
            nz,
            dx,
            dz,
            origin_x: 0.0,
            velocity,
        })
    }

    pub fn constant(nx: usize, nz: usize, h: f64, v: f64) -> Result<Self> {
        Self::new(nx, nz, h, h, vec![v; nx * nz])
    }

    /// Rasterize a layered model; node `(ix, iz)` takes the velocity of the
    /// layer containing depth `iz·dz`.
    pub fn from_layered(model: &LayeredModel, nx: usize, nz: usize, dx: f64, dz: f64) -> Result<Self> {
        let mut velocity = Vec::with_capacity(nx * nz);
        for iz in 0..nz {
            let v = model.velocities[model.layer_at_depth(iz as f64 * dz)];
            velocity.extend(std::iter::repeat_n(v, nx));
        }
        Self::new(nx, nz, dx, dz, velocity)
    }

    pub fn at(&self, ix: usize, iz: usize) -> f64 {
        self.velocity[iz * self.nx + ix]
    }

    pub fn column(&self, ix: usize) -> Vec<f64> {
        (0..self.nz).map(|iz| self.at(ix, iz)).collect()
    }

    pub fn x_of(&self, ix: usize) -> f64 {
        self.origin_x + ix as f64 * self.dx
    }

    /// Scale every velocity by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            velocity: self.velocity.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// Layered model whose interfaces undulate smoothly with `x`, plus a smooth
/// multiplicative perturbation. This is a simple stand-in for richer random
/// earth-model generators, not a reproduction of any of them.
pub fn random_grid_model(
    rng: &mut impl Rng,
    nx: usize,
    nz: usize,
    h: f64,
    bounds: &LayerBounds,
) -> Result<GridModel> {
    let n = rng.random_range(bounds.min_layers..=bounds.max_layers);
    let mut velocities: Vec<f64> = (0..n)
        .map(|_| rng.random_range(bounds.v_min..=bounds.v_max))
        .collect();
    if bounds.monotone {
        velocities.sort_by(f64::total_cmp);
    }
    let depth = nz as f64 * h;
    let width = nx as f64 * h;
    let mut bases: Vec<f64> = (0..n - 1)
        .map(|_| rng.random_range(0.1..0.95) * depth)
        .collect();
    bases.sort_by(f64::total_cmp);
    // Each interface gets one sinusoidal undulation.
    let waves: Vec<(f64, f64, f64)> = bases
        .iter()
        .map(|_| {
            (
                rng.random_range(0.0..0.05) * depth,
                rng.random_range(0.5..2.0) * std::f64::consts::TAU / width,
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let bump_amp = rng.random_range(0.0..0.05);
    let bump_k = rng.random_range(0.5..1.5) * std::f64::consts::TAU / width;
    let bump_phase = rng.random_range(0.0..std::f64::consts::TAU);

    let mut velocity = Vec::with_capacity(nx * nz);
    for iz in 0..nz {
        let z = iz as f64 * h;
        for ix in 0..nx {
            let x = ix as f64 * h;
            let layer = bases
                .iter()
                .zip(&waves)
                .take_while(|(b, (a, k, p))| z >= *b + a * (k * x + p).sin())
                .count();
            let bump = 1.0 + bump_amp * (bump_k * x + bump_phase).sin() * (z / depth);
            velocity.push((velocities[layer] * bump).clamp(bounds.v_min, bounds.v_max));
        }
    }
    GridModel::new(nx, nz, h, h, velocity)
}

/// Convert a depth-sampled velocity column (`v[iz]` over cells of height `dz`)
/// to two-way-time sampling at `k·dt`, `k = 0..n`. Each sample takes the
/// velocity of the cell its time falls in; times beyond the column keep the
/// deepest velocity.
pub fn depth_to_time(v: &[f64], dz: f64, dt: f64, n: usize) -> Vec<f64> {
    let mut bottoms = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    for vi in v {
        acc += 2.0 * dz / vi;
        bottoms.push(acc);
    }
    let mut out = Vec::with_capacity(n);
    let mut cell = 0;
    for k in 0..n {
        let t = k as f64 * dt;
        while cell + 1 < v.len() && t >= bottoms[cell] {
            cell += 1;
        }
        out.push(v[cell]);
    }
    out
}

/// Lateral mean of `v(x, z)` over columns whose `x` lies in
/// `[shot_x, shot_x + half_max_offset]`, resampled to two-way time.
///
/// A window reaching past the grid is clipped to it (with a warning); a window
/// with no columns at all is an error.
pub fn label_mean_velocity(
    model: &GridModel,
    shot_x: f64,
    half_max_offset: f64,
    dt: f64,
    n_samples: usize,
) -> Result<Vec<f64>> {
    let lo = shot_x.min(shot_x + half_max_offset);
    let hi = shot_x.max(shot_x + half_max_offset);
    let first = model.x_of(0);
    let last = model.x_of(model.nx - 1);
    if lo < first - 1e-9 || hi > last + 1e-9 {
        log::warn!("averaging window [{lo}, {hi}] clipped to grid [{first}, {last}]");
    }
    let cols: Vec<usize> = (0..model.nx)
        .filter(|&ix| {
            let x = model.x_of(ix);
            x >= lo - 1e-9 && x <= hi + 1e-9
        })
        .collect();
    if cols.is_empty() {
        return Err(Error::Range(format!(
            "no grid column inside [{lo}, {hi}]"
        )));
    }
    let mean: Vec<f64> = (0..model.nz)
        .map(|iz| cols.iter().map(|&ix| model.at(ix, iz)).sum::<f64>() / cols.len() as f64)
        .collect();
    Ok(depth_to_time(&mean, model.dz, dt, n_samples))
}
