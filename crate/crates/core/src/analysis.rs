//! Attention maps and attention rollout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export;
use crate::gather::ShotGather;
use crate::model::{AttentionRecord, SeismicBert};
use crate::numerics::{ops, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// `R_l = rownorm(0.5·Ā_l + 0.5·I) · R_{l-1}`.
    #[default]
    WithIdentity,
    /// `R_l = Ā_l · R_{l-1}`.
    Raw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub mode: ResidualMode,
    /// Cumulative `X×X` matrix after each layer.
    pub layers: Vec<Tensor<f64>>,
}

/// Every head's softmax weights for one gather; the output is unchanged by
/// the capture.
pub fn attention_maps(model: &SeismicBert<f32>, d: &ShotGather) -> Result<AttentionRecord<f32>> {
    let (_, record) = model.predict(d, true)?;
    record.ok_or_else(|| Error::contract("forward pass returned no attention record"))
}

/// Mean over heads of each layer.
pub fn head_average(record: &AttentionRecord<f32>) -> Result<Vec<Tensor<f64>>> {
    record
        .maps
        .iter()
        .map(|heads| {
            let first = heads.first().ok_or_else(|| Error::contract("layer without heads"))?;
            let mut acc = Tensor::<f64>::zeros(first.shape());
            for h in heads {
                if h.shape() != first.shape() {
                    return Err(Error::shape("head_average", first.shape(), h.shape()));
                }
                for (a, &b) in acc.data_mut().iter_mut().zip(h.data()) {
                    *a += b as f64;
                }
            }
            let n = heads.len() as f64;
            Ok(acc.map(|v| v / n))
        })
        .collect()
}

pub fn attention_rollout(record: &AttentionRecord<f32>, mode: ResidualMode) -> Result<RolloutResult> {
    let averages = head_average(record)?;
    let Some(first) = averages.first() else {
        return Err(Error::contract("attention record has no layers"));
    };
    let (x, _) = first.dims2()?;
    let mut current = Tensor::<f64>::eye(x);
    let mut layers = Vec::with_capacity(averages.len());
    for a in averages {
        let step = match mode {
            ResidualMode::Raw => a,
            ResidualMode::WithIdentity => {
                let mut m = a.map(|v| 0.5 * v);
                for i in 0..x {
                    m.data_mut()[i * x + i] += 0.5;
                }
                for i in 0..x {
                    let row = &mut m.data_mut()[i * x..(i + 1) * x];
                    let s: f64 = row.iter().sum();
                    if s > 0.0 {
                        row.iter_mut().for_each(|v| *v /= s);
                    }
                }
                m
            }
        };
        current = ops::matmul(&step, &current)?;
        layers.push(current.clone());
    }
    Ok(RolloutResult { mode, layers })
}

/// Frobenius distance between matching layers of two rollouts.
pub fn rollout_distance(a: &RolloutResult, b: &RolloutResult) -> Result<Vec<f64>> {
    if a.layers.len() != b.layers.len() {
        return Err(Error::shape("rollout_distance", &[a.layers.len()], &[b.layers.len()]));
    }
    a.layers
        .iter()
        .zip(&b.layers)
        .map(|(p, q)| {
            if p.shape() != q.shape() {
                return Err(Error::shape("rollout_distance", p.shape(), q.shape()));
            }
            Ok(p.data()
                .iter()
                .zip(q.data())
                .map(|(u, v)| (u - v).powi(2))
                .sum::<f64>()
                .sqrt())
        })
        .collect()
}

fn write_matrix(dir: &Path, stem: &str, m: &Tensor<f64>) -> Result<PathBuf> {
    let (r, c) = m.dims2()?;
    let pgm = dir.join(format!("{stem}.pgm"));
    export::write_pgm(&pgm, m.data(), r, c, 0.0, 1.0)?;
    let rows: Vec<Vec<f64>> = (0..r).map(|i| m.row(i).to_vec()).collect();
    export::write_csv(dir.join(format!("{stem}.csv")), None, &rows)?;
    Ok(pgm)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `attn_l{layer}_h{head}.pgm` and `.csv` per map, layers and heads counted
/// from 1. Returns the image paths.
pub fn export_maps(record: &AttentionRecord<f32>, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut out = Vec::new();
    for (l, heads) in record.maps.iter().enumerate() {
        for (h, m) in heads.iter().enumerate() {
            out.push(write_matrix(dir, &format!("attn_l{}_h{}", l + 1, h + 1), &m.cast())?);
        }
    }
    Ok(out)
}

/// `rollout_l{layer}.pgm` and `.csv` per layer. Returns the image paths.
pub fn export_rollout(rollout: &RolloutResult, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    rollout
        .layers
        .iter()
        .enumerate()
        .map(|(l, m)| write_matrix(dir, &format!("rollout_l{}", l + 1), m))
        .collect()
}
