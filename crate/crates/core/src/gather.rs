//! Shot gathers: a sequence of traces, each a fixed-length time series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    #[default]
    Clean,
    FieldProxy,
}

/// `n_traces × n_samples` amplitudes, row-major (one row per trace).
#[derive(Clone, Debug, PartialEq)]
pub struct ShotGather {
    amplitudes: Vec<f32>,
    n_traces: usize,
    n_samples: usize,
    /// Sample interval in seconds.
    pub dt: f64,
    /// Source-receiver offset of each trace in metres.
    pub offsets: Vec<f64>,
    pub domain: DomainTag,
}

impl ShotGather {
    pub fn new(
        n_traces: usize,
        n_samples: usize,
        amplitudes: Vec<f32>,
        dt: f64,
        offsets: Vec<f64>,
    ) -> Result<Self> {
        if n_traces == 0 || n_samples == 0 {
            return Err(Error::contract("a gather needs at least one trace and sample"));
        }
        if amplitudes.len() != n_traces * n_samples {
            return Err(Error::shape(
                "gather",
                &[n_traces, n_samples],
                &[amplitudes.len()],
            ));
        }
        if offsets.len() != n_traces {
            return Err(Error::shape("gather offsets", &[n_traces], &[offsets.len()]));
        }
        if offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract("offsets must be strictly increasing"));
        }
        if dt <= 0.0 {
            return Err(Error::contract("dt must be positive"));
        }
        Ok(Self {
            amplitudes,
            n_traces,
            n_samples,
            dt,
            offsets,
            domain: DomainTag::Clean,
        })
    }

    pub fn zeros(n_traces: usize, n_samples: usize, dt: f64, offsets: Vec<f64>) -> Result<Self> {
        Self::new(n_traces, n_samples, vec![0.0; n_traces * n_samples], dt, offsets)
    }

    /// Same geometry, new amplitudes.
    pub fn with_amplitudes(&self, amplitudes: Vec<f32>) -> Result<Self> {
        if amplitudes.len() != self.amplitudes.len() {
            return Err(Error::shape(
                "gather",
                &[self.n_traces, self.n_samples],
                &[amplitudes.len()],
            ));
        }
        Ok(Self {
            amplitudes,
            ..self.clone()
        })
    }

    pub fn n_traces(&self) -> usize {
        self.n_traces
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn amplitudes(&self) -> &[f32] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [f32] {
        &mut self.amplitudes
    }

    pub fn trace(&self, i: usize) -> &[f32] {
        &self.amplitudes[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn trace_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.amplitudes[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        let data = self.amplitudes.iter().map(|&v| F::from_f64(v as f64)).collect();
        Tensor::new([self.n_traces, self.n_samples], data).expect("gather extents are positive")
    }

    pub fn max_abs(&self) -> f32 {
        self.amplitudes.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Scale into `[-1, 1]` by the peak absolute amplitude. A silent gather is
    /// left untouched.
    pub fn normalize(&mut self) {
        let peak = self.max_abs();
        if peak > 0.0 {
            for v in &mut self.amplitudes {
                *v /= peak;
            }
        }
    }

    pub fn std(&self) -> f64 {
        let n = self.amplitudes.len() as f64;
        let mean = self.amplitudes.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self
            .amplitudes
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        var.sqrt()
    }

    pub fn max_offset(&self) -> f64 {
        self.offsets.iter().fold(0.0, |m, o| m.max(o.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_monotone_offsets() {
        assert!(ShotGather::zeros(2, 4, 0.004, vec![10.0, 10.0]).is_err());
        assert!(ShotGather::zeros(2, 4, 0.004, vec![0.0, 10.0]).is_ok());
    }

    #[test]
    fn normalize_maps_peak_to_unit() {
        let mut g =
            ShotGather::new(1, 3, vec![0.5, -2.0, 1.0], 0.004, vec![0.0]).unwrap();
        g.normalize();
        assert_eq!(g.amplitudes(), &[0.25, -1.0, 0.5]);
    }
}
