use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Divisor applied to `QKᵀ` before the softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnScale {
    /// `sqrt(H / A)`, the per-head width.
    #[default]
    PerHead,
    /// `sqrt(H)`, dividing by the full hidden width.
    PaperLiteral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width H.
    pub hidden: usize,
    /// Encoder block count L.
    pub layers: usize,
    /// Attention heads A.
    pub heads: usize,
    /// Time samples per trace (input and reconstruction width).
    pub samples: usize,
    /// Maximum traces per gather.
    pub max_traces: usize,
    #[serde(default = "default_ratio")]
    pub intermediate_ratio: usize,
    #[serde(default)]
    pub attn_scale: AttnScale,
    #[serde(default)]
    pub dropout: f32,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

fn default_ratio() -> usize {
    4
}

fn default_ln_eps() -> f64 {
    1e-12
}

impl ModelConfig {
    pub fn new(hidden: usize, layers: usize, heads: usize, samples: usize, max_traces: usize) -> Self {
        Self {
            hidden,
            layers,
            heads,
            samples,
            max_traces,
            intermediate_ratio: default_ratio(),
            attn_scale: AttnScale::PerHead,
            dropout: 0.0,
            layer_norm_eps: default_ln_eps(),
        }
    }

    /// Base configuration: H=256, L=4, A=4.
    pub fn base(samples: usize, max_traces: usize) -> Self {
        Self::new(256, 4, 4, samples, max_traces)
    }

    /// Desk-scale model used by the test suites.
    pub fn desk(samples: usize, max_traces: usize) -> Self {
        Self::new(64, 2, 2, samples, max_traces)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn intermediate(&self) -> usize {
        self.hidden * self.intermediate_ratio
    }

    pub fn attention_scale(&self) -> f64 {
        match self.attn_scale {
            AttnScale::PerHead => (self.head_dim() as f64).sqrt(),
            AttnScale::PaperLiteral => (self.hidden as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("heads", self.heads),
            ("samples", self.samples),
            ("max_traces", self.max_traces),
            ("intermediate_ratio", self.intermediate_ratio),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Trainable parameter count including the linear `H → T` prediction head.
///
/// Every head kind is a single `H×T` matrix plus a `T` bias, so the count does
/// not depend on which head is attached.
pub fn param_count(config: &ModelConfig) -> usize {
    let h = config.hidden;
    let t = config.samples;
    let inner = config.intermediate();
    let embedding = t * h + h + 2 * h;
    let attention = 4 * (h * h + h);
    let norms = 2 * 2 * h;
    let ffn = h * inner + inner + inner * h + h;
    let head = h * t + t;
    embedding + config.layers * (attention + norms + ffn) + head
}
