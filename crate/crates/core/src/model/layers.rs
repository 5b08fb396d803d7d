//! Embedding block and pre-norm encoder block.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{rng, Parameter, Real, SeisRng, Tape, Tensor, Var};

use super::config::ModelConfig;

pub(crate) const INIT_STD: f64 = 0.02;

pub(crate) fn normal_param<F: Real>(
    name: String,
    shape: &[usize],
    rng: &mut impl Rng,
) -> Parameter<F> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| F::from_f64(rng::truncated_normal(rng, INIT_STD)))
        .collect();
    Parameter::new(name, Tensor::new(shape, data).expect("positive extents"))
}

pub(crate) fn zeros_param<F: Real>(name: String, shape: &[usize]) -> Parameter<F> {
    Parameter::new(name, Tensor::zeros(shape))
}

pub(crate) fn ones_param<F: Real>(name: String, shape: &[usize]) -> Parameter<F> {
    Parameter::new(name, Tensor::ones(shape))
}

/// Creates one tape leaf per parameter, recording them in visit order.
/// Supplied variables, when present, are used in place of fresh leaves.
pub(crate) struct Binder<'t, F: Real> {
    pub tape: &'t Tape<F>,
    pub track: bool,
    pub vars: Vec<Var<'t, F>>,
    supplied: Option<std::vec::IntoIter<Var<'t, F>>>,
}

impl<'t, F: Real> Binder<'t, F> {
    pub fn new(tape: &'t Tape<F>, track: bool) -> Self {
        Self {
            tape,
            track,
            vars: Vec::new(),
            supplied: None,
        }
    }

    pub fn with_vars(tape: &'t Tape<F>, vars: Vec<Var<'t, F>>) -> Self {
        Self {
            supplied: Some(vars.into_iter()),
            ..Self::new(tape, true)
        }
    }

    pub fn bind(&mut self, p: &Parameter<F>) -> Var<'t, F> {
        let v = match self.supplied.as_mut().and_then(Iterator::next) {
            Some(v) => v,
            None => self.tape.leaf(p.value.clone(), self.track && !p.frozen),
        };
        self.vars.push(v);
        v
    }

    pub fn bind_all<const N: usize>(&mut self, params: [&Parameter<F>; N]) -> [Var<'t, F>; N] {
        params.map(|p| self.bind(p))
    }
}

/// Inverted dropout; identity when `p == 0` or no RNG is supplied.
pub(crate) fn dropout<'t, F: Real>(
    x: Var<'t, F>,
    p: f32,
    rng: Option<&mut SeisRng>,
) -> Result<Var<'t, F>> {
    let Some(rng) = rng else { return Ok(x) };
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = F::from_f64(1.0 / (1.0 - p as f64));
    let shape = x.shape();
    let n = shape.iter().product();
    let mask: Vec<F> = (0..n)
        .map(|_| {
            if rng.random::<f32>() < p {
                F::zero()
            } else {
                keep
            }
        })
        .collect();
    let mask = x.tape().constant(Tensor::new(shape, mask)?);
    x.mul(mask)
}

/// Sinusoidal encoding: `sin(pos / 10000^(2k/H))` at dimension `2k`,
/// `cos` of the same angle at `2k + 1`.
pub fn positional_encoding(pos: usize, dim: usize, hidden: usize) -> f64 {
    let pair = (dim / 2) as f64;
    let angle = pos as f64 / 10000f64.powf(2.0 * pair / hidden as f64);
    if dim % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

pub fn positional_table<F: Real>(positions: &[usize], hidden: usize) -> Tensor<F> {
    let data = positions
        .iter()
        .flat_map(|&p| (0..hidden).map(move |i| F::from_f64(positional_encoding(p, i, hidden))))
        .collect();
    Tensor::new([positions.len(), hidden], data).expect("positive extents")
}

/// `T → H` trace projection, positional encoding and a layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<F = f32> {
    pub proj_weight: Parameter<F>,
    pub proj_bias: Parameter<F>,
    pub norm_gain: Parameter<F>,
    pub norm_bias: Parameter<F>,
}

pub(crate) struct BoundEmbedding<'t, F: Real> {
    proj_weight: Var<'t, F>,
    proj_bias: Var<'t, F>,
    norm_gain: Var<'t, F>,
    norm_bias: Var<'t, F>,
}

impl<F: Real> Embedding<F> {
    pub fn new(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (t, h) = (config.samples, config.hidden);
        Self {
            proj_weight: normal_param("embedding.proj.weight".into(), &[t, h], rng),
            proj_bias: zeros_param("embedding.proj.bias".into(), &[h]),
            norm_gain: ones_param("embedding.norm.gain".into(), &[h]),
            norm_bias: zeros_param("embedding.norm.bias".into(), &[h]),
        }
    }

    pub fn params(&self) -> [&Parameter<F>; 4] {
        [
            &self.proj_weight,
            &self.proj_bias,
            &self.norm_gain,
            &self.norm_bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<F>; 4] {
        [
            &mut self.proj_weight,
            &mut self.proj_bias,
            &mut self.norm_gain,
            &mut self.norm_bias,
        ]
    }

    pub(crate) fn bind<'t>(&self, b: &mut Binder<'t, F>) -> BoundEmbedding<'t, F> {
        let [proj_weight, proj_bias, norm_gain, norm_bias] = b.bind_all(self.params());
        BoundEmbedding {
            proj_weight,
            proj_bias,
            norm_gain,
            norm_bias,
        }
    }
}

impl<'t, F: Real> BoundEmbedding<'t, F> {
    pub fn forward(
        &self,
        traces: Var<'t, F>,
        positions: &[usize],
        config: &ModelConfig,
        dropout_rng: Option<&mut SeisRng>,
    ) -> Result<Var<'t, F>> {
        let projected = traces.matmul(self.proj_weight)?.add(self.proj_bias)?;
        let pe = traces
            .tape()
            .constant(positional_table(positions, config.hidden));
        let summed = projected.add(pe)?;
        let normed = summed.layer_norm(
            self.norm_gain,
            self.norm_bias,
            F::from_f64(config.layer_norm_eps),
        )?;
        dropout(normed, config.dropout, dropout_rng)
    }
}

/// Pre-norm encoder block: `x + MSA(LN1(x))`, then `h + FFN(LN2(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<F = f32> {
    pub query_weight: Parameter<F>,
    pub query_bias: Parameter<F>,
    pub key_weight: Parameter<F>,
    pub key_bias: Parameter<F>,
    pub value_weight: Parameter<F>,
    pub value_bias: Parameter<F>,
    pub out_weight: Parameter<F>,
    pub out_bias: Parameter<F>,
    pub norm1_gain: Parameter<F>,
    pub norm1_bias: Parameter<F>,
    pub norm2_gain: Parameter<F>,
    pub norm2_bias: Parameter<F>,
    pub ffn_w1: Parameter<F>,
    pub ffn_b1: Parameter<F>,
    pub ffn_w2: Parameter<F>,
    pub ffn_b2: Parameter<F>,
}

pub(crate) struct BoundLayer<'t, F: Real> {
    pub query_weight: Var<'t, F>,
    pub query_bias: Var<'t, F>,
    pub key_weight: Var<'t, F>,
    pub key_bias: Var<'t, F>,
    pub value_weight: Var<'t, F>,
    pub value_bias: Var<'t, F>,
    pub out_weight: Var<'t, F>,
    pub out_bias: Var<'t, F>,
    pub norm1_gain: Var<'t, F>,
    pub norm1_bias: Var<'t, F>,
    pub norm2_gain: Var<'t, F>,
    pub norm2_bias: Var<'t, F>,
    pub ffn_w1: Var<'t, F>,
    pub ffn_b1: Var<'t, F>,
    pub ffn_w2: Var<'t, F>,
    pub ffn_b2: Var<'t, F>,
}

impl<F: Real> EncoderLayer<F> {
    pub fn new(index: usize, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let h = config.hidden;
        let inner = config.intermediate();
        let name = |s: &str| format!("encoder.{index}.{s}");
        Self {
            query_weight: normal_param(name("attn.query.weight"), &[h, h], rng),
            query_bias: zeros_param(name("attn.query.bias"), &[h]),
            key_weight: normal_param(name("attn.key.weight"), &[h, h], rng),
            key_bias: zeros_param(name("attn.key.bias"), &[h]),
            value_weight: normal_param(name("attn.value.weight"), &[h, h], rng),
            value_bias: zeros_param(name("attn.value.bias"), &[h]),
            out_weight: normal_param(name("attn.out.weight"), &[h, h], rng),
            out_bias: zeros_param(name("attn.out.bias"), &[h]),
            norm1_gain: ones_param(name("norm1.gain"), &[h]),
            norm1_bias: zeros_param(name("norm1.bias"), &[h]),
            norm2_gain: ones_param(name("norm2.gain"), &[h]),
            norm2_bias: zeros_param(name("norm2.bias"), &[h]),
            ffn_w1: normal_param(name("ffn.w1"), &[h, inner], rng),
            ffn_b1: zeros_param(name("ffn.b1"), &[inner]),
            ffn_w2: normal_param(name("ffn.w2"), &[inner, h], rng),
            ffn_b2: zeros_param(name("ffn.b2"), &[h]),
        }
    }

    pub fn params(&self) -> [&Parameter<F>; 16] {
        [
            &self.query_weight,
            &self.query_bias,
            &self.key_weight,
            &self.key_bias,
            &self.value_weight,
            &self.value_bias,
            &self.out_weight,
            &self.out_bias,
            &self.norm1_gain,
            &self.norm1_bias,
            &self.norm2_gain,
            &self.norm2_bias,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<F>; 16] {
        [
            &mut self.query_weight,
            &mut self.query_bias,
            &mut self.key_weight,
            &mut self.key_bias,
            &mut self.value_weight,
            &mut self.value_bias,
            &mut self.out_weight,
            &mut self.out_bias,
            &mut self.norm1_gain,
            &mut self.norm1_bias,
            &mut self.norm2_gain,
            &mut self.norm2_bias,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
        ]
    }

    pub fn is_frozen(&self) -> bool {
        self.params().iter().all(|p| p.frozen)
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for p in self.params_mut() {
            p.frozen = frozen;
        }
    }

    pub(crate) fn bind<'t>(&self, b: &mut Binder<'t, F>) -> BoundLayer<'t, F> {
        let [query_weight, query_bias, key_weight, key_bias, value_weight, value_bias, out_weight, out_bias, norm1_gain, norm1_bias, norm2_gain, norm2_bias, ffn_w1, ffn_b1, ffn_w2, ffn_b2] =
            b.bind_all(self.params());
        BoundLayer {
            query_weight,
            query_bias,
            key_weight,
            key_bias,
            value_weight,
            value_bias,
            out_weight,
            out_bias,
            norm1_gain,
            norm1_bias,
            norm2_gain,
            norm2_bias,
            ffn_w1,
            ffn_b1,
            ffn_w2,
            ffn_b2,
        }
    }
}

impl<'t, F: Real> BoundLayer<'t, F> {
    /// Multi-head self-attention sub-block with its residual. Returns the
    /// block output and the per-head softmax weights when `capture` is set.
    pub fn attention(
        &self,
        x: Var<'t, F>,
        config: &ModelConfig,
        capture: bool,
        dropout_rng: Option<&mut SeisRng>,
    ) -> Result<(Var<'t, F>, Vec<Tensor<F>>)> {
        let eps = F::from_f64(config.layer_norm_eps);
        let normed = x.layer_norm(self.norm1_gain, self.norm1_bias, eps)?;
        let q = normed.matmul(self.query_weight)?.add(self.query_bias)?;
        let k = normed.matmul(self.key_weight)?.add(self.key_bias)?;
        let v = normed.matmul(self.value_weight)?.add(self.value_bias)?;
        let d = config.head_dim();
        let inv_scale = F::from_f64(1.0 / config.attention_scale());
        let mut heads = Vec::with_capacity(config.heads);
        let mut maps = Vec::new();
        for a in 0..config.heads {
            let qa = q.slice(1, a * d, d)?;
            let ka = k.slice(1, a * d, d)?;
            let va = v.slice(1, a * d, d)?;
            let weights = qa.matmul(ka.transpose()?)?.scale(inv_scale).softmax(1)?;
            if capture {
                maps.push(weights.value());
            }
            heads.push(weights.matmul(va)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            Var::concat(&heads, 1)?
        };
        let projected = merged.matmul(self.out_weight)?.add(self.out_bias)?;
        let projected = dropout(projected, config.dropout, dropout_rng)?;
        Ok((x.add(projected)?, maps))
    }

    /// Position-wise feed-forward sub-block with its residual.
    pub fn ffn(
        &self,
        x: Var<'t, F>,
        config: &ModelConfig,
        dropout_rng: Option<&mut SeisRng>,
    ) -> Result<Var<'t, F>> {
        let eps = F::from_f64(config.layer_norm_eps);
        let normed = x.layer_norm(self.norm2_gain, self.norm2_bias, eps)?;
        let hidden = normed.matmul(self.ffn_w1)?.add(self.ffn_b1)?.gelu();
        let out = hidden.matmul(self.ffn_w2)?.add(self.ffn_b2)?;
        let out = dropout(out, config.dropout, dropout_rng)?;
        x.add(out)
    }
}
