//! Encoder-only transformer over a sequence of traces.
//!
//! Each trace (a length-T time series) is one token. The embedding block
//! projects traces to width H and adds a sinusoidal encoding of the offset
//! index; L pre-norm encoder blocks follow; a detachable linear head maps back
//! to whatever the current task predicts.

pub mod checkpoint;
pub mod config;
pub mod head;
pub mod layers;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gather::ShotGather;
use crate::numerics::{Parameter, Real, SeisRng, Tape, Tensor, Var};

pub use config::{param_count, AttnScale, ModelConfig};
pub use head::{HeadInit, HeadKind, PredictionHead};
pub use layers::{positional_encoding, positional_table, Embedding, EncoderLayer};

use head::BoundHead;
use layers::{Binder, BoundEmbedding, BoundLayer};

/// Softmax weights of every head of every layer for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord<F = f32> {
    /// `maps[layer][head]` is an `X×X` row-stochastic matrix.
    pub maps: Vec<Vec<Tensor<F>>>,
}

impl<F: Real> AttentionRecord<F> {
    pub fn layers(&self) -> usize {
        self.maps.len()
    }

    pub fn heads(&self) -> usize {
        self.maps.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeismicBert<F = f32> {
    pub config: ModelConfig,
    pub embedding: Embedding<F>,
    pub layers: Vec<EncoderLayer<F>>,
    pub head: Option<PredictionHead<F>>,
}

/// A model whose parameters are leaves on one tape.
pub struct BoundModel<'t, F: Real> {
    config: ModelConfig,
    embedding: BoundEmbedding<'t, F>,
    layers: Vec<BoundLayer<'t, F>>,
    head: Option<BoundHead<'t, F>>,
    vars: Vec<Var<'t, F>>,
}

#[derive(Default)]
pub struct ForwardOptions<'a> {
    pub capture_attention: bool,
    /// Enables dropout (when the config asks for it).
    pub dropout_rng: Option<&'a mut SeisRng>,
}

pub struct ForwardOutput<'t, F: Real> {
    pub output: Var<'t, F>,
    pub encoded: Var<'t, F>,
    pub attention: Option<AttentionRecord<F>>,
}

impl<F: Real> SeismicBert<F> {
    /// Encoder with freshly initialized weights and no head attached.
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let embedding = Embedding::new(&config, rng);
        let layers = (0..config.layers)
            .map(|i| EncoderLayer::new(i, &config, rng))
            .collect();
        Ok(Self {
            config,
            embedding,
            layers,
            head: None,
        })
    }

    pub fn with_head(
        config: ModelConfig,
        kind: HeadKind,
        init: HeadInit,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut model = Self::new(config, rng)?;
        model.replace_head(kind, init, rng);
        Ok(model)
    }

    /// Swap in a new head; the encoder is not touched.
    pub fn replace_head(&mut self, kind: HeadKind, init: HeadInit, rng: &mut impl Rng) {
        self.head = Some(PredictionHead::new(kind, init, &self.config, rng));
    }

    pub fn head_kind(&self) -> Option<HeadKind> {
        self.head.as_ref().map(|h| h.kind)
    }

    /// Freeze the embedding block (when `k > 0`) and the first `k` encoder
    /// layers; everything after them is made trainable.
    pub fn freeze_layers(&mut self, k: usize) -> Result<()> {
        if k > self.config.layers {
            return Err(Error::Range(format!(
                "cannot freeze {k} of {} layers",
                self.config.layers
            )));
        }
        for p in self.embedding.params_mut() {
            p.frozen = k > 0;
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.set_frozen(i < k);
        }
        Ok(())
    }

    /// Number of leading layers currently frozen.
    pub fn frozen_layers(&self) -> usize {
        self.layers.iter().take_while(|l| l.is_frozen()).count()
    }

    /// Every parameter in a fixed order: embedding, layers, head.
    pub fn parameters(&self) -> Vec<&Parameter<F>> {
        let mut out: Vec<&Parameter<F>> = self.embedding.params().to_vec();
        for layer in &self.layers {
            out.extend(layer.params());
        }
        if let Some(head) = &self.head {
            out.extend(head.params());
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out: Vec<&mut Parameter<F>> = self.embedding.params_mut().into_iter().collect();
        for layer in &mut self.layers {
            out.extend(layer.params_mut());
        }
        if let Some(head) = &mut self.head {
            out.extend(head.params_mut());
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    pub fn cast<G: Real>(&self) -> SeismicBert<G> {
        let cast_all = |ps: Vec<&Parameter<F>>| -> Vec<Parameter<G>> {
            ps.into_iter().map(Parameter::cast).collect()
        };
        let mut emb = cast_all(self.embedding.params().to_vec()).into_iter();
        let mut next = move || emb.next().expect("embedding params");
        let embedding = Embedding {
            proj_weight: next(),
            proj_bias: next(),
            norm_gain: next(),
            norm_bias: next(),
        };
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut it = cast_all(l.params().to_vec()).into_iter();
                let mut n = move || it.next().expect("layer params");
                EncoderLayer {
                    query_weight: n(),
                    query_bias: n(),
                    key_weight: n(),
                    key_bias: n(),
                    value_weight: n(),
                    value_bias: n(),
                    out_weight: n(),
                    out_bias: n(),
                    norm1_gain: n(),
                    norm1_bias: n(),
                    norm2_gain: n(),
                    norm2_bias: n(),
                    ffn_w1: n(),
                    ffn_b1: n(),
                    ffn_w2: n(),
                    ffn_b2: n(),
                }
            })
            .collect();
        let head = self.head.as_ref().map(|h| PredictionHead {
            kind: h.kind,
            weight: h.weight.cast(),
            bias: h.bias.cast(),
        });
        SeismicBert {
            config: self.config.clone(),
            embedding,
            layers,
            head,
        }
    }

    /// Put every parameter on `tape`. With `track`, unfrozen parameters are
    /// tracked leaves; otherwise all are constants.
    pub fn bind<'t>(&self, tape: &'t Tape<F>, track: bool) -> BoundModel<'t, F> {
        self.bind_from(Binder::new(tape, track))
    }

    /// Use caller-made variables, in [`Self::parameters`] order, as the
    /// weights. Their values replace the stored ones for this pass.
    pub fn bind_vars<'t>(&self, tape: &'t Tape<F>, vars: Vec<Var<'t, F>>) -> Result<BoundModel<'t, F>> {
        let params = self.parameters();
        if vars.len() != params.len() {
            return Err(Error::contract(format!(
                "expected {} parameter variables, got {}",
                params.len(),
                vars.len()
            )));
        }
        for (p, v) in params.iter().zip(&vars) {
            if p.value.shape() != v.shape().as_slice() {
                return Err(Error::shape("bind_vars", p.value.shape(), &v.shape()));
            }
        }
        Ok(self.bind_from(Binder::with_vars(tape, vars)))
    }

    fn bind_from<'t>(&self, mut b: Binder<'t, F>) -> BoundModel<'t, F> {
        let embedding = self.embedding.bind(&mut b);
        let layers = self.layers.iter().map(|l| l.bind(&mut b)).collect();
        let head = self.head.as_ref().map(|h| h.bind(&mut b));
        BoundModel {
            config: self.config.clone(),
            embedding,
            layers,
            head,
            vars: b.vars,
        }
    }

    /// Untracked forward pass on one gather; positions are `0..X`.
    pub fn predict(&self, gather: &ShotGather, capture: bool) -> Result<(Tensor<F>, Option<AttentionRecord<F>>)> {
        let positions: Vec<usize> = (0..gather.n_traces()).collect();
        self.predict_tensor(&gather.to_tensor(), &positions, capture)
    }

    pub fn predict_tensor(
        &self,
        input: &Tensor<F>,
        positions: &[usize],
        capture: bool,
    ) -> Result<(Tensor<F>, Option<AttentionRecord<F>>)> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let out = bound.forward(
            input,
            positions,
            ForwardOptions {
                capture_attention: capture,
                dropout_rng: None,
            },
        )?;
        Ok((out.output.value(), out.attention))
    }

    /// Encoder output (before the head) for one input, untracked.
    pub fn encode(&self, input: &Tensor<F>, positions: &[usize]) -> Result<Tensor<F>> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let input = tape.constant(input.clone());
        let (encoded, _) = bound.encode(input, positions, false, None)?;
        Ok(encoded.value())
    }
}

impl<'t, F: Real> BoundModel<'t, F> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn encode(
        &self,
        input: Var<'t, F>,
        positions: &[usize],
        capture: bool,
        mut dropout_rng: Option<&mut SeisRng>,
    ) -> Result<(Var<'t, F>, Option<AttentionRecord<F>>)> {
        let shape = input.shape();
        if shape.len() != 2 || shape[1] != self.config.samples {
            let x = shape.first().copied().unwrap_or(0);
            return Err(Error::shape("embed", &shape, &[x, self.config.samples]));
        }
        if positions.len() != shape[0] {
            return Err(Error::shape("positions", &shape[..1], &[positions.len()]));
        }
        let mut h = self.embedding.forward(
            input,
            positions,
            &self.config,
            dropout_rng.as_deref_mut(),
        )?;
        let mut maps = Vec::new();
        for layer in &self.layers {
            let (attn, heads) =
                layer.attention(h, &self.config, capture, dropout_rng.as_deref_mut())?;
            maps.push(heads);
            h = layer.ffn(attn, &self.config, dropout_rng.as_deref_mut())?;
        }
        let record = capture.then_some(AttentionRecord { maps });
        Ok((h, record))
    }

    fn tape(&self) -> &'t Tape<F> {
        self.vars[0].tape()
    }

    pub fn vars(&self) -> &[Var<'t, F>] {
        &self.vars
    }

    /// Embed, run every encoder block, apply the head.
    pub fn forward(
        &self,
        input: &Tensor<F>,
        positions: &[usize],
        opts: ForwardOptions<'_>,
    ) -> Result<ForwardOutput<'t, F>> {
        let input = self.tape().constant(input.clone());
        self.forward_var(input, positions, opts)
    }

    /// Like [`Self::forward`] with the input already on the tape.
    pub fn forward_var(
        &self,
        input: Var<'t, F>,
        positions: &[usize],
        mut opts: ForwardOptions<'_>,
    ) -> Result<ForwardOutput<'t, F>> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::contract("forward needs a prediction head"))?;
        let (encoded, attention) = self.encode(
            input,
            positions,
            opts.capture_attention,
            opts.dropout_rng.as_deref_mut(),
        )?;
        let output = head.forward(encoded)?;
        Ok(ForwardOutput {
            output,
            encoded,
            attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng;

    fn tiny() -> ModelConfig {
        ModelConfig::new(8, 2, 2, 6, 5)
    }

    #[test]
    fn parameter_names_are_unique_and_counted() {
        let mut r = rng::seeded(1);
        let m = SeismicBert::<f32>::with_head(tiny(), HeadKind::Reconstruction, HeadInit::Random, &mut r)
            .unwrap();
        let mut names: Vec<_> = m.parameters().iter().map(|p| p.name.clone()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert_eq!(m.num_parameters(), param_count(&m.config));
    }

    #[test]
    fn forward_without_head_is_a_contract_error() {
        let mut r = rng::seeded(1);
        let m = SeismicBert::<f32>::new(tiny(), &mut r).unwrap();
        let input = Tensor::zeros([3, 6]);
        assert!(matches!(
            m.predict_tensor(&input, &[0, 1, 2], false),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn wrong_trace_length_is_a_shape_error() {
        let mut r = rng::seeded(1);
        let m = SeismicBert::<f32>::with_head(tiny(), HeadKind::Denoise, HeadInit::Zeros, &mut r)
            .unwrap();
        let input = Tensor::zeros([3, 7]);
        assert!(matches!(
            m.predict_tensor(&input, &[0, 1, 2], false),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn freeze_range_checked() {
        let mut r = rng::seeded(1);
        let mut m = SeismicBert::<f32>::new(tiny(), &mut r).unwrap();
        assert!(matches!(m.freeze_layers(3), Err(Error::Range(_))));
        m.freeze_layers(2).unwrap();
        assert_eq!(m.frozen_layers(), 2);
        assert!(m.embedding.params().iter().all(|p| p.frozen));
        m.freeze_layers(0).unwrap();
        assert_eq!(m.frozen_layers(), 0);
        assert!(m.embedding.params().iter().all(|p| !p.frozen));
    }

    #[test]
    fn head_output_shapes() {
        let mut r = rng::seeded(2);
        let mut m = SeismicBert::<f32>::new(tiny(), &mut r).unwrap();
        let input = Tensor::ones([4, 6]);
        let pos = [0, 1, 2, 3];
        for kind in HeadKind::ALL {
            m.replace_head(kind, HeadInit::Random, &mut r);
            let (out, _) = m.predict_tensor(&input, &pos, false).unwrap();
            let expected: Vec<usize> = if kind.is_profile() { vec![6] } else { vec![4, 6] };
            assert_eq!(out.shape(), expected.as_slice(), "{kind:?}");
        }
    }
}
