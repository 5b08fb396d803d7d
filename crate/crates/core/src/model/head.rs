use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{Parameter, Real, Var};

use super::config::ModelConfig;
use super::layers::{normal_param, zeros_param, Binder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Masked-trace reconstruction, `X×T`.
    Reconstruction,
    /// Denoised gather, `X×T`.
    Denoise,
    /// Interval-velocity profile of length T read from sequence position 0.
    Velocity,
    /// Per-trace first-break logits over the T time samples (`X×T`).
    FirstBreak,
    /// RMS-velocity profile of length T read from sequence position 0.
    Vrms,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] = [
        HeadKind::Reconstruction,
        HeadKind::Denoise,
        HeadKind::Velocity,
        HeadKind::FirstBreak,
        HeadKind::Vrms,
    ];

    pub fn code(self) -> u8 {
        match self {
            HeadKind::Reconstruction => 0,
            HeadKind::Denoise => 1,
            HeadKind::Velocity => 2,
            HeadKind::FirstBreak => 3,
            HeadKind::Vrms => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    /// Output is one profile per gather rather than one row per trace.
    pub fn is_profile(self) -> bool {
        matches!(self, HeadKind::Velocity | HeadKind::Vrms)
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Reconstruction => "reconstruction",
            HeadKind::Denoise => "denoise",
            HeadKind::Velocity => "velocity",
            HeadKind::FirstBreak => "firstbreak",
            HeadKind::Vrms => "vrms",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    Zeros,
    #[default]
    Random,
}

/// Detachable `H → T` output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionHead<F = f32> {
    pub kind: HeadKind,
    pub weight: Parameter<F>,
    pub bias: Parameter<F>,
}

pub(crate) struct BoundHead<'t, F: Real> {
    kind: HeadKind,
    weight: Var<'t, F>,
    bias: Var<'t, F>,
}

impl<F: Real> PredictionHead<F> {
    pub fn new(kind: HeadKind, init: HeadInit, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (h, t) = (config.hidden, config.samples);
        let weight = match init {
            HeadInit::Zeros => zeros_param("head.weight".into(), &[h, t]),
            HeadInit::Random => normal_param("head.weight".into(), &[h, t], rng),
        };
        Self {
            kind,
            weight,
            bias: zeros_param("head.bias".into(), &[t]),
        }
    }

    pub fn params(&self) -> [&Parameter<F>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<F>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub(crate) fn bind<'t>(&self, b: &mut Binder<'t, F>) -> BoundHead<'t, F> {
        let [weight, bias] = b.bind_all(self.params());
        BoundHead {
            kind: self.kind,
            weight,
            bias,
        }
    }
}

impl<'t, F: Real> BoundHead<'t, F> {
    pub fn forward(&self, encoded: Var<'t, F>) -> Result<Var<'t, F>> {
        match self.kind {
            HeadKind::Reconstruction | HeadKind::Denoise => {
                encoded.matmul(self.weight)?.add(self.bias)
            }
            HeadKind::Velocity | HeadKind::Vrms => {
                let first = encoded.slice(0, 0, 1)?;
                let profile = first.matmul(self.weight)?.add(self.bias)?;
                let t = profile.shape()[1];
                profile.reshape([t])
            }
            HeadKind::FirstBreak => encoded.sigmoid().matmul(self.weight)?.add(self.bias),
        }
    }
}
