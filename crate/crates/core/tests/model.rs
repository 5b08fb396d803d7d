mod common;

use common::{contract, grad_check, random_tensor, reference, ScalarFn};
use proptest::prelude::*;
use seisbert::model::checkpoint::{Checkpoint, TrainProgress};
use seisbert::model::{AttnScale, HeadInit, HeadKind, ModelConfig, SeismicBert};
use seisbert::numerics::{rng, OptimizerState, Real, Tape, Tensor, Var};
use seisbert::Error;

fn model_f64(config: ModelConfig, kind: HeadKind, seed: u64) -> SeismicBert<f64> {
    let mut r = rng::seeded(seed);
    let mut m = SeismicBert::<f64>::with_head(config, kind, HeadInit::Random, &mut r).unwrap();
    // Non-trivial biases and norm affines so the reference exercises them.
    for p in m.parameters_mut() {
        if p.value.ndim() == 1 {
            let noise = random_tensor(&mut r, p.value.shape(), 0.1);
            for (v, n) in p.value.data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
        }
    }
    m
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (r, _) = t.dims2().unwrap();
    (0..r).map(|i| t.row(i).to_vec()).collect()
}

#[test]
fn forward_matches_straight_line_reference() {
    for kind in HeadKind::ALL {
        for scale in [AttnScale::PerHead, AttnScale::PaperLiteral] {
            let mut cfg = ModelConfig::new(8, 1, 2, 8, 3);
            cfg.attn_scale = scale;
            let model = model_f64(cfg, kind, 11);
            let mut r = rng::seeded(5);
            let input = random_tensor(&mut r, &[3, 8], 1.0);
            let positions = [0, 1, 2];
            let (out, att) = model.predict_tensor(&input, &positions, true).unwrap();
            let (expected, maps) = reference::forward(&model, &rows(&input), &positions);
            let flat: Vec<f64> = expected.concat();
            let diff = out
                .data()
                .iter()
                .zip(&flat)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert_eq!(out.numel(), flat.len());
            assert!(diff <= 1e-5, "{kind:?} {scale:?}: {diff}");
            let att = att.unwrap();
            for (l, layer) in maps.iter().enumerate() {
                for (a, map) in layer.iter().enumerate() {
                    let got = rows(&att.maps[l][a]);
                    for (x, y) in got.concat().iter().zip(map.concat()) {
                        assert!((x - y).abs() < 1e-9);
                    }
                }
            }
        }
    }
}

#[test]
fn deeper_model_matches_reference_in_f32() {
    let cfg = ModelConfig::new(16, 3, 4, 10, 6);
    let model = model_f64(cfg, HeadKind::Reconstruction, 3);
    let mut r = rng::seeded(9);
    let input = random_tensor(&mut r, &[5, 10], 1.0);
    let positions = [0, 1, 2, 3, 4];
    let (expected, _) = reference::forward(&model, &rows(&input), &positions);
    let m32 = model.cast::<f32>();
    let (out, _) = m32
        .predict_tensor(&input.cast(), &positions, false)
        .unwrap();
    let diff = out
        .data()
        .iter()
        .zip(expected.concat())
        .fold(0.0f64, |m, (a, b)| m.max((*a as f64 - b).abs()));
    assert!(diff <= 1e-4, "{diff}");
}

#[test]
fn single_trace_attends_to_itself() {
    let mut r = rng::seeded(1);
    let m = SeismicBert::<f32>::with_head(
        ModelConfig::new(8, 2, 2, 6, 4),
        HeadKind::Reconstruction,
        HeadInit::Random,
        &mut r,
    )
    .unwrap();
    let input = Tensor::full([1, 6], 0.3);
    let (_, att) = m.predict_tensor(&input, &[0], true).unwrap();
    for layer in &att.unwrap().maps {
        for map in layer {
            assert_eq!(map.data(), &[1.0]);
        }
    }
}

#[test]
fn identical_traces_at_identical_positions_attend_uniformly() {
    let mut r = rng::seeded(2);
    let m = SeismicBert::<f64>::with_head(
        ModelConfig::new(8, 2, 2, 6, 4),
        HeadKind::Reconstruction,
        HeadInit::Random,
        &mut r,
    )
    .unwrap();
    let trace = random_tensor(&mut r, &[6], 1.0);
    let data: Vec<f64> = (0..4).flat_map(|_| trace.data().to_vec()).collect();
    let input = Tensor::new([4, 6], data).unwrap();
    // Same position for every token makes the tokens indistinguishable.
    let (_, att) = m.predict_tensor(&input, &[3, 3, 3, 3], true).unwrap();
    for layer in &att.unwrap().maps {
        for map in layer {
            for v in map.data() {
                assert!((v - 0.25).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_ffn_is_pure_residual() {
    let mut r = rng::seeded(4);
    let mut m = SeismicBert::<f64>::with_head(
        ModelConfig::new(8, 1, 2, 6, 4),
        HeadKind::Reconstruction,
        HeadInit::Random,
        &mut r,
    )
    .unwrap();
    let input = random_tensor(&mut r, &[3, 6], 1.0);
    let positions = [0, 1, 2];
    let before = {
        let mut no_ffn = m.clone();
        no_ffn.config.layers = 0;
        no_ffn.layers.clear();
        no_ffn.encode(&input, &positions).unwrap()
    };
    let layer = &mut m.layers[0];
    for p in [
        &mut layer.ffn_w1,
        &mut layer.ffn_b1,
        &mut layer.ffn_w2,
        &mut layer.ffn_b2,
        &mut layer.out_weight,
        &mut layer.out_bias,
    ] {
        p.value = Tensor::zeros(p.value.shape());
    }
    let after = m.encode(&input, &positions).unwrap();
    assert_eq!(before, after);
}

#[test]
fn zero_head_predicts_zeros() {
    let mut r = rng::seeded(3);
    let m = SeismicBert::<f32>::with_head(
        ModelConfig::desk(16, 8),
        HeadKind::Denoise,
        HeadInit::Zeros,
        &mut r,
    )
    .unwrap();
    let input = random_tensor(&mut r, &[8, 16], 1.0).cast();
    let (out, _) = m.predict_tensor(&input, &(0..8).collect::<Vec<_>>(), false).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn attention_capture_does_not_change_output() {
    let mut r = rng::seeded(8);
    let m = SeismicBert::<f32>::with_head(
        ModelConfig::desk(16, 8),
        HeadKind::FirstBreak,
        HeadInit::Random,
        &mut r,
    )
    .unwrap();
    let input = random_tensor(&mut r, &[8, 16], 1.0).cast();
    let pos: Vec<usize> = (0..8).collect();
    let (a, _) = m.predict_tensor(&input, &pos, false).unwrap();
    let (b, rec) = m.predict_tensor(&input, &pos, true).unwrap();
    assert_eq!(a, b);
    let rec = rec.unwrap();
    assert_eq!((rec.layers(), rec.heads()), (2, 2));
}

#[test]
fn head_swap_leaves_encoder_untouched() {
    let mut r = rng::seeded(6);
    let mut m = SeismicBert::<f32>::with_head(
        ModelConfig::desk(16, 8),
        HeadKind::Reconstruction,
        HeadInit::Random,
        &mut r,
    )
    .unwrap();
    let input = random_tensor(&mut r, &[8, 16], 1.0).cast();
    let pos: Vec<usize> = (0..8).collect();
    let before = m.encode(&input, &pos).unwrap();
    let encoder_before: Vec<_> = m.parameters()[..m.parameters().len() - 2]
        .iter()
        .map(|p| (*p).clone())
        .collect();
    m.replace_head(HeadKind::Velocity, HeadInit::Random, &mut r);
    let after = m.encode(&input, &pos).unwrap();
    assert_eq!(before, after);
    let encoder_after: Vec<_> = m.parameters()[..m.parameters().len() - 2]
        .iter()
        .map(|p| (*p).clone())
        .collect();
    assert_eq!(encoder_before, encoder_after);
}

#[test]
fn random_head_init_honors_seed() {
    let cfg = ModelConfig::desk(16, 8);
    let build = |seed| {
        let mut r = rng::seeded(seed);
        SeismicBert::<f32>::with_head(cfg.clone(), HeadKind::Velocity, HeadInit::Random, &mut r)
            .unwrap()
    };
    assert_eq!(build(4), build(4));
    assert_ne!(build(4), build(5));
}

struct WholeModel {
    model: SeismicBert<f64>,
    n_params: usize,
}

impl ScalarFn for WholeModel {
    fn eval<'t, F: Real>(&self, tape: &'t Tape<F>, inputs: &[Var<'t, F>]) -> Var<'t, F> {
        let model = self.model.cast::<F>();
        let bound = model.bind_vars(tape, inputs[..self.n_params].to_vec()).unwrap();
        let input = inputs[self.n_params];
        let positions: Vec<usize> = (0..input.shape()[0]).collect();
        let out = bound.forward_var(input, &positions, Default::default()).unwrap();
        contract(out.output, 77)
    }
}

#[test]
fn full_model_gradient_check() {
    for (i, kind) in HeadKind::ALL.into_iter().enumerate() {
        let model = model_f64(ModelConfig::new(4, 1, 2, 5, 3), kind, 20 + i as u64);
        let mut inputs: Vec<Tensor<f64>> =
            model.parameters().iter().map(|p| p.value.clone()).collect();
        let n_params = inputs.len();
        let mut r = rng::seeded(i as u64);
        inputs.push(random_tensor(&mut r, &[3, 5], 1.0));
        let f = WholeModel { model, n_params };
        let (e32, e64) = grad_check(&f, &inputs);
        assert!(e32 <= 1e-4, "{kind:?}: f32 {e32}");
        assert!(e64 <= 1e-6, "{kind:?}: f64 {e64}");
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let mut r = rng::seeded(12);
    let mut m = SeismicBert::<f32>::with_head(
        ModelConfig::desk(16, 8),
        HeadKind::FirstBreak,
        HeadInit::Random,
        &mut r,
    )
    .unwrap();
    m.freeze_layers(1).unwrap();
    let mut opt = OptimizerState::radam(1e-3);
    for p in m.parameters_mut() {
        p.grad = Some(Tensor::full(p.value.shape(), 0.5));
    }
    opt.step(m.parameters_mut()).unwrap();
    let ck = Checkpoint {
        model: m,
        optimizer: Some(opt),
        progress: Some(TrainProgress {
            epochs_done: 3,
            stale_epochs: 1,
            best_loss: 0.25,
            history: vec![(1.0, 0.9), (0.5, 0.4), (0.3, 0.35)],
        }),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ssck");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ck);
    let path2 = dir.path().join("b.ssck");
    loaded.save(&path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    assert_eq!(loaded.model.frozen_layers(), 1);
}

#[test]
fn headless_checkpoint_round_trips() {
    let mut r = rng::seeded(13);
    let m = SeismicBert::<f32>::new(ModelConfig::new(8, 1, 2, 4, 4), &mut r).unwrap();
    let ck = Checkpoint::new(m);
    assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let mut r = rng::seeded(14);
    let m = SeismicBert::<f32>::with_head(
        ModelConfig::new(8, 1, 2, 4, 4),
        HeadKind::Denoise,
        HeadInit::Random,
        &mut r,
    )
    .unwrap();
    let bytes = Checkpoint::new(m).to_bytes();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    for b in [&bad_magic[..], &bytes[..bytes.len() - 3], &[bytes.clone(), vec![0]].concat()] {
        assert!(matches!(Checkpoint::from_bytes(b), Err(Error::Format { .. })));
    }
    assert!(matches!(
        Checkpoint::load("/nonexistent/dir/x.ssck"),
        Err(Error::Io { .. })
    ));
}

fn permuted(input: &Tensor<f32>, perm: &[usize]) -> Tensor<f32> {
    let (_, t) = input.dims2().unwrap();
    let data = perm.iter().flat_map(|&i| input.row(i).to_vec()).collect();
    Tensor::new([perm.len(), t], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_rows_are_stochastic(seed in 0u64..1000, x in 1usize..7) {
        let mut r = rng::seeded(seed);
        let m = SeismicBert::<f32>::with_head(
            ModelConfig::new(8, 2, 2, 6, 8),
            HeadKind::Reconstruction,
            HeadInit::Random,
            &mut r,
        )
        .unwrap();
        let input = random_tensor(&mut r, &[x, 6], 2.0).cast();
        let pos: Vec<usize> = (0..x).collect();
        let (_, rec) = m.predict_tensor(&input, &pos, true).unwrap();
        for layer in &rec.unwrap().maps {
            for map in layer {
                for i in 0..x {
                    let s: f64 = map.row(i).iter().map(|&v| v as f64).sum();
                    prop_assert!((s - 1.0).abs() <= 1e-6);
                    prop_assert!(map.row(i).iter().all(|&v| v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn joint_permutation_is_equivariant(seed in 0u64..1000, perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let mut r = rng::seeded(seed);
        let m = SeismicBert::<f32>::with_head(
            ModelConfig::new(8, 2, 2, 6, 8),
            HeadKind::Denoise,
            HeadInit::Random,
            &mut r,
        )
        .unwrap();
        let input = random_tensor(&mut r, &[5, 6], 1.0).cast();
        let pos: Vec<usize> = (0..5).collect();
        let (out, _) = m.predict_tensor(&input, &pos, false).unwrap();
        let (out_p, _) = m
            .predict_tensor(&permuted(&input, &perm), &perm, false)
            .unwrap();
        prop_assert!(permuted(&out, &perm).max_abs_diff(&out_p) <= 1e-5);
    }
}
