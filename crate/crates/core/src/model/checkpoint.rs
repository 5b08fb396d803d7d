//! SSCK checkpoint files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "SSCK" u16:version
//! config:  u32 hidden, layers, heads, samples, max_traces, intermediate_ratio
//!          u8 attn_scale, f32 dropout, f64 layer_norm_eps
//! head:    u8 kind code (0xFF = none)
//! params:  u32 count, then per record
//!          u16 name_len, name bytes, u8 frozen, u8 ndim, u32 dims[ndim], f32 data[]
//! u8 has_optimizer
//!          u64 step, f64 lr, beta1, beta2, eps, u8 rectify, u32 count,
//!          per entry: u16 name_len, name, u32 len, f32 first[len], f32 second[len]
//! u8 has_progress
//!          u32 epochs_done, u32 stale_epochs, f64 best_loss, u32 n_history,
//!          per epoch: f64 train, f64 test
//! ```

use std::fs;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::{Moments, OptimizerState, Parameter, Tensor};

use super::config::{AttnScale, ModelConfig};
use super::head::HeadKind;
use super::SeismicBert;

pub const MAGIC: &[u8; 4] = b"SSCK";
pub const VERSION: u16 = 1;
const NO_HEAD: u8 = 0xFF;

/// Where a training run stands; lets a run continue from its last epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainProgress {
    pub epochs_done: u32,
    pub stale_epochs: u32,
    pub best_loss: f64,
    /// `(train_loss, test_loss)` per completed epoch.
    pub history: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: SeismicBert<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub progress: Option<TrainProgress>,
}

impl Checkpoint {
    pub fn new(model: SeismicBert<f32>) -> Self {
        Self {
            model,
            optimizer: None,
            progress: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        let c = &self.model.config;
        for v in [
            c.hidden,
            c.layers,
            c.heads,
            c.samples,
            c.max_traces,
            c.intermediate_ratio,
        ] {
            w.u32(v as u32);
        }
        w.u8(match c.attn_scale {
            AttnScale::PerHead => 0,
            AttnScale::PaperLiteral => 1,
        });
        w.f32(c.dropout);
        w.f64(c.layer_norm_eps);
        w.u8(self.model.head_kind().map_or(NO_HEAD, HeadKind::code));

        let params = self.model.parameters();
        w.u32(params.len() as u32);
        for p in params {
            w.name(&p.name);
            w.u8(p.frozen as u8);
            w.u8(p.value.ndim() as u8);
            for &d in p.value.shape() {
                w.u32(d as u32);
            }
            w.floats(p.value.data());
        }

        match &self.optimizer {
            None => w.u8(0),
            Some(opt) => {
                w.u8(1);
                w.u64(opt.step);
                w.f64(opt.learning_rate);
                w.f64(opt.beta1);
                w.f64(opt.beta2);
                w.f64(opt.epsilon);
                w.u8(opt.rectify as u8);
                w.u32(opt.moments.len() as u32);
                for m in &opt.moments {
                    w.name(&m.name);
                    w.u32(m.first.len() as u32);
                    w.floats(&m.first);
                    w.floats(&m.second);
                }
            }
        }

        match &self.progress {
            None => w.u8(0),
            Some(p) => {
                w.u8(1);
                w.u32(p.epochs_done);
                w.u32(p.stale_epochs);
                w.f64(p.best_loss);
                w.u32(p.history.len() as u32);
                for &(a, b) in &p.history {
                    w.f64(a);
                    w.f64(b);
                }
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        let mut magic = [0u8; 4];
        r.fill(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let attn_scale = match r.u8()? {
            0 => AttnScale::PerHead,
            1 => AttnScale::PaperLiteral,
            other => return Err(bad(format!("unknown attention scale {other}"))),
        };
        let config = ModelConfig {
            hidden: dims[0],
            layers: dims[1],
            heads: dims[2],
            samples: dims[3],
            max_traces: dims[4],
            intermediate_ratio: dims[5],
            attn_scale,
            dropout: r.f32()?,
            layer_norm_eps: r.f64()?,
        };
        config
            .validate()
            .map_err(|e| bad(format!("invalid config: {e}")))?;
        let head_code = r.u8()?;
        let head_kind = match head_code {
            NO_HEAD => None,
            c => Some(HeadKind::from_code(c).ok_or_else(|| bad(format!("unknown head {c}")))?),
        };

        let n = r.u32()? as usize;
        let expected = 4 + 16 * config.layers + if head_kind.is_some() { 2 } else { 0 };
        if n != expected {
            return Err(bad(format!("expected {expected} parameters, found {n}")));
        }
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.name()?;
            let frozen = r.u8()? != 0;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let numel = shape.iter().product();
            let data = r.floats(numel)?;
            let value = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
            let mut p = Parameter::new(name, value);
            p.frozen = frozen;
            params.push(p);
        }
        let model = assemble(config, head_kind, params)?;

        let optimizer = if r.u8()? != 0 {
            let step = r.u64()?;
            let learning_rate = r.f64()?;
            let beta1 = r.f64()?;
            let beta2 = r.f64()?;
            let epsilon = r.f64()?;
            let rectify = r.u8()? != 0;
            let count = r.u32()? as usize;
            let mut moments = Vec::with_capacity(count);
            for _ in 0..count {
                let name = r.name()?;
                let len = r.u32()? as usize;
                let first = r.floats(len)?;
                let second = r.floats(len)?;
                moments.push(Moments {
                    name,
                    first,
                    second,
                });
            }
            Some(OptimizerState {
                step,
                learning_rate,
                beta1,
                beta2,
                epsilon,
                rectify,
                moments,
            })
        } else {
            None
        };

        let progress = if r.u8()? != 0 {
            let epochs_done = r.u32()?;
            let stale_epochs = r.u32()?;
            let best_loss = r.f64()?;
            let len = r.u32()? as usize;
            let mut history = Vec::with_capacity(len);
            for _ in 0..len {
                history.push((r.f64()?, r.f64()?));
            }
            Some(TrainProgress {
                epochs_done,
                stale_epochs,
                best_loss,
                history,
            })
        } else {
            None
        };

        r.expect_end()?;
        Ok(Self {
            model,
            optimizer,
            progress,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "checkpoint",
        reason: reason.into(),
    }
}

fn assemble(
    config: ModelConfig,
    head_kind: Option<HeadKind>,
    params: Vec<Parameter<f32>>,
) -> Result<SeismicBert<f32>> {
    // Build a template with the right names and shapes, then move the loaded
    // tensors into it after checking each one.
    let mut rng = crate::numerics::rng::seeded(0);
    let mut model = SeismicBert::<f32>::new(config.clone(), &mut rng)?;
    if let Some(kind) = head_kind {
        model.replace_head(kind, super::HeadInit::Zeros, &mut rng);
    }
    for (slot, loaded) in model.parameters_mut().into_iter().zip(params) {
        if slot.name != loaded.name {
            return Err(bad(format!(
                "expected parameter {}, found {}",
                slot.name, loaded.name
            )));
        }
        if slot.value.shape() != loaded.value.shape() {
            return Err(bad(format!(
                "parameter {} has shape {:?}, expected {:?}",
                loaded.name,
                loaded.value.shape(),
                slot.value.shape()
            )));
        }
        *slot = loaded;
    }
    Ok(model)
}
