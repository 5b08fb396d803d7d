use proptest::prelude::*;
use seisbert::gather::ShotGather;
use seisbert::model::checkpoint::Checkpoint;
use seisbert::model::{HeadInit, HeadKind, ModelConfig, SeismicBert};
use seisbert::numerics::{rng, Tape};
use seisbert::pretrain::*;
use seisbert::train::{RunFiles, Schedule, StopReason, TrainState};
use seisbert::Error;

fn gather(x: usize, t: usize, seed: u64) -> ShotGather {
    let mut r = rng::seeded(seed);
    let amps = (0..x * t).map(|_| rng::normal(&mut r) as f32 * 0.3).collect();
    ShotGather::new(x, t, amps, 0.004, (0..x).map(|i| i as f64 * 10.0).collect()).unwrap()
}

fn smooth_gather(x: usize, t: usize, seed: u64) -> ShotGather {
    let phase = seed as f32 * 0.7;
    let amps = (0..x * t)
        .map(|k| {
            let (i, j) = ((k / t) as f32, (k % t) as f32);
            (0.25 * j + 0.1 * i + phase).sin() * 0.5
        })
        .collect();
    ShotGather::new(x, t, amps, 0.004, (0..x).map(|i| i as f64 * 10.0).collect()).unwrap()
}

fn tiny_model(x: usize, t: usize, init: HeadInit) -> SeismicBert<f32> {
    SeismicBert::with_head(ModelConfig::new(16, 1, 2, t, x), HeadKind::Reconstruction, init, &mut rng::seeded(5))
        .unwrap()
}

#[test]
fn masked_counts_match_fifteen_percent() {
    let o = MaskOptions::default();
    let mut r = rng::seeded(1);
    for (x, n) in [(20, 3), (324, 48)] {
        let s = apply_mask(&gather(x, 4, 0), &o, &mut r).unwrap();
        assert_eq!(s.mask.masked.len(), n);
        assert!(s.mask.masked.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn corruption_frequencies_follow_shares() {
    let o = MaskOptions::default();
    let mut r = rng::seeded(2);
    let mut counts = [0usize; 3];
    for _ in 0..10_000 {
        let m = draw_mask(20, &o, &mut r).unwrap();
        assert_eq!(m.masked.len(), 3);
        for (c, &target) in m.corruption.iter().zip(&m.masked) {
            match c {
                Corruption::NoiseToken => counts[0] += 1,
                Corruption::SwapTrace(src) => {
                    assert_ne!(*src, target);
                    assert!(*src < 20);
                    counts[1] += 1
                }
                Corruption::KeepSame => counts[2] += 1,
            }
        }
    }
    let total = counts.iter().sum::<usize>() as f64;
    for (c, share) in counts.iter().zip([0.8, 0.1, 0.1]) {
        assert!((*c as f64 / total - share).abs() <= 0.02, "{counts:?}");
    }
}

#[test]
fn invalid_ratios_are_rejected() {
    let mut r = rng::seeded(0);
    for ratio in [0.0, 1.0, 0.1] {
        let o = MaskOptions { ratio, ..MaskOptions::default() };
        assert!(matches!(draw_mask(5, &o, &mut r), Err(Error::Contract(_))), "{ratio}");
    }
}

#[test]
fn noise_tokens_use_configured_std() {
    let o = MaskOptions {
        noise_share: 1.0,
        swap_share: 0.0,
        noise_std: 2.0,
        ratio: 0.5,
    };
    let g = ShotGather::zeros(40, 500, 0.004, (0..40).map(|i| i as f64).collect()).unwrap();
    let s = apply_mask(&g, &o, &mut rng::seeded(3)).unwrap();
    assert!((s.corrupted.std() / (2.0 / 2f64.sqrt()) - 1.0).abs() < 0.05);
}

#[test]
fn keep_same_stays_in_the_loss_set() {
    let o = MaskOptions {
        noise_share: 0.0,
        swap_share: 0.0,
        ..MaskOptions::default()
    };
    let g = gather(20, 8, 1);
    let s = apply_mask(&g, &o, &mut rng::seeded(4)).unwrap();
    assert!(s.mask.corruption.iter().all(|c| *c == Corruption::KeepSame));
    assert_eq!(s.corrupted, g);
    let mut pred = g.amplitudes().to_vec();
    pred[s.mask.masked[0] * 8] += 1.0;
    assert!(masked_loss(&pred, &g, &s.mask).unwrap() > 0.0);
}

#[test]
fn masked_loss_hand_values() {
    // 2×2 gather, trace 1 masked: mean of ((0.5-1)², (0-(-1))²).
    let clean = ShotGather::new(2, 2, vec![0.0, 0.0, 1.0, -1.0], 0.004, vec![0.0, 1.0]).unwrap();
    let mask = MaskSpec {
        masked: vec![1],
        corruption: vec![Corruption::KeepSame],
        noise_std: 1.0,
    };
    let pred = [9.0, 9.0, 0.5, 0.0];
    assert_eq!(masked_loss(&pred, &clean, &mask).unwrap(), (0.25 + 1.0) / 2.0);
    assert_eq!(masked_loss(clean.amplitudes(), &clean, &mask).unwrap(), 0.0);
    let empty = MaskSpec {
        masked: vec![],
        corruption: vec![],
        noise_std: 1.0,
    };
    assert!(matches!(masked_loss(&pred, &clean, &empty), Err(Error::Contract(_))));
    assert!(masked_loss(&pred[..3], &clean, &mask).is_err());
}

#[test]
fn tape_loss_matches_direct_loss() {
    let model = tiny_model(10, 12, HeadInit::Random);
    let s = apply_mask(&gather(10, 12, 2), &MaskOptions::default(), &mut rng::seeded(0)).unwrap();
    let tape = Tape::new();
    let bound = model.bind(&tape, true);
    let tracked = sample_loss(&bound, &s, None).unwrap().item() as f64;
    let direct = eval_sample(&model, &s).unwrap();
    assert!((tracked - direct).abs() <= 1e-6 * direct.max(1e-6));
}

#[test]
fn zero_head_loss_is_the_zero_baseline() {
    let model = tiny_model(10, 12, HeadInit::Zeros);
    let samples = fixed_samples(&[gather(10, 12, 1), gather(10, 12, 2)], &MaskOptions::default(), 3).unwrap();
    assert_eq!(eval_masked(&model, &samples).unwrap(), zero_baseline(&samples).unwrap());
}

#[test]
fn augmentation_identities() {
    let g = gather(4, 10, 7);
    assert_eq!(polarity_flip(&polarity_flip(&g)), g);
    assert_eq!(time_shift(&g, 0), g);
    for s in [1isize, 3, -2] {
        let back = time_shift(&time_shift(&g, s), -s);
        for i in 0..4 {
            for k in 0..10 {
                let border = if s > 0 { k >= 10 - s as usize } else { k < (-s) as usize };
                let expect = if border { 0.0 } else { g.trace(i)[k] };
                assert_eq!(back.trace(i)[k], expect);
            }
        }
    }
    let opts = AugmentOptions {
        max_shift: 10,
        ..AugmentOptions::default()
    };
    assert!(augment(&g, &opts, &mut rng::seeded(0)).is_err());
    let none = AugmentOptions::default();
    assert_eq!(augment(&g, &none, &mut rng::seeded(0)).unwrap(), g);
}

#[test]
fn memorizes_a_single_gather() {
    let g = smooth_gather(8, 32, 0);
    let model = tiny_model(8, 32, HeadInit::Random);
    let test = fixed_samples(std::slice::from_ref(&g), &MaskOptions::default(), 0).unwrap();
    let start = eval_masked(&model, &test).unwrap();
    let schedule = Schedule {
        batch_size: 1,
        learning_rate: 3e-3,
        max_epochs: 200,
        patience: 0,
        ..Schedule::default()
    };
    let opts = PretrainOptions {
        mask: MaskOptions {
            ratio: 0.25,
            ..MaskOptions::default()
        },
        ..PretrainOptions::default()
    };
    let (trained, report) = pretrain(model, std::slice::from_ref(&g), std::slice::from_ref(&g), &schedule, &opts, None)
        .unwrap();
    assert_eq!(report.epochs, 200);
    let test = fixed_samples(std::slice::from_ref(&g), &opts.mask, 0).unwrap();
    let end = eval_masked(&trained, &test).unwrap();
    assert!(end * 100.0 <= start, "{start} -> {end}");
}

fn small_run(seed: u64, epochs: usize) -> (SeismicBert<f32>, Vec<(f64, f64)>) {
    let train: Vec<_> = (0..6).map(|i| smooth_gather(8, 16, i)).collect();
    let test: Vec<_> = (6..8).map(|i| smooth_gather(8, 16, i)).collect();
    let schedule = Schedule {
        batch_size: 4,
        max_epochs: epochs,
        seed,
        ..Schedule::default()
    };
    let model = tiny_model(8, 16, HeadInit::Random);
    let (m, r) = pretrain(model, &train, &test, &schedule, &PretrainOptions::default(), None).unwrap();
    (m, r.history)
}

#[test]
fn runs_are_deterministic() {
    let (a, ha) = small_run(1, 4);
    let (b, hb) = small_run(1, 4);
    assert_eq!(ha, hb);
    assert_eq!(a, b);
    let (_, hc) = small_run(2, 4);
    assert_ne!(ha, hc);
}

#[test]
fn thread_count_does_not_change_results() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let (a, ha) = pool.install(|| small_run(1, 3));
    let (b, hb) = small_run(1, 3);
    assert_eq!(ha, hb);
    assert_eq!(a, b);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let train: Vec<_> = (0..6).map(|i| smooth_gather(8, 16, i)).collect();
    let test: Vec<_> = (6..8).map(|i| smooth_gather(8, 16, i)).collect();
    let opts = PretrainOptions::default();
    let schedule = |epochs| Schedule {
        batch_size: 4,
        max_epochs: epochs,
        seed: 3,
        ..Schedule::default()
    };
    let mut full = TrainState::new(tiny_model(8, 16, HeadInit::Random), 5e-4);
    let report = pretrain_with(&mut full, &train, &test, &schedule(6), &opts, None, &mut |_| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let files = RunFiles {
        dir: dir.path().to_path_buf(),
    };
    let mut first = TrainState::new(tiny_model(8, 16, HeadInit::Random), 5e-4);
    pretrain_with(&mut first, &train, &test, &schedule(3), &opts, Some(&files), &mut |_| {}).unwrap();
    let csv = std::fs::read_to_string(files.loss_csv()).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);

    let mut resumed = TrainState::resume(
        Checkpoint::load(files.last()).unwrap(),
        Checkpoint::load(files.best()).unwrap(),
    )
    .unwrap();
    let second = pretrain_with(&mut resumed, &train, &test, &schedule(6), &opts, Some(&files), &mut |_| {}).unwrap();
    assert_eq!(second.history, report.history);
    assert_eq!(resumed.model, full.model);
    assert_eq!(resumed.optimizer, full.optimizer);
}

#[test]
fn fully_frozen_model_keeps_its_loss() {
    let mut model = tiny_model(8, 16, HeadInit::Random);
    for p in model.parameters_mut() {
        p.frozen = true;
    }
    let train: Vec<_> = (0..3).map(|i| smooth_gather(8, 16, i)).collect();
    let schedule = Schedule {
        max_epochs: 3,
        ..Schedule::default()
    };
    let (after, report) = pretrain(model.clone(), &train, &train, &schedule, &PretrainOptions::default(), None).unwrap();
    let test = report.test_loss();
    assert!(test.iter().all(|v| *v == test[0]));
    assert_eq!(after, model);
}

#[test]
fn patience_and_target_stop_early() {
    let train: Vec<_> = (0..4).map(|i| smooth_gather(8, 16, i)).collect();
    let schedule = Schedule {
        max_epochs: 50,
        target_loss: Some(f64::INFINITY),
        ..Schedule::default()
    };
    let model = tiny_model(8, 16, HeadInit::Random);
    let (_, r) = pretrain(model.clone(), &train, &train, &schedule, &PretrainOptions::default(), None).unwrap();
    assert_eq!((r.epochs, r.stop), (1, StopReason::TargetReached));

    let mut frozen = model;
    frozen.parameters_mut().into_iter().for_each(|p| p.frozen = true);
    let schedule = Schedule {
        max_epochs: 50,
        patience: 2,
        ..Schedule::default()
    };
    let (_, r) = pretrain(frozen, &train, &train, &schedule, &PretrainOptions::default(), None).unwrap();
    assert_eq!((r.epochs, r.stop), (3, StopReason::Patience));
}

#[test]
fn bad_inputs_are_reported() {
    let model = tiny_model(8, 16, HeadInit::Random);
    let s = Schedule::default();
    let o = PretrainOptions::default();
    assert!(matches!(pretrain(model.clone(), &[], &[], &s, &o, None), Err(Error::Contract(_))));
    let mut headless = model.clone();
    headless.head = None;
    let g = smooth_gather(8, 16, 0);
    assert!(matches!(
        pretrain(headless, std::slice::from_ref(&g), &[], &s, &o, None),
        Err(Error::Contract(_))
    ));
    let mut poisoned = g.clone();
    poisoned.amplitudes_mut()[5] = f32::NAN;
    let err = pretrain(model, &[poisoned.clone(), poisoned], &[], &s, &o, None).unwrap_err();
    match err {
        Error::Numeric(msg) => assert!(msg.contains("step 1"), "{msg}"),
        other => panic!("{other}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unmasked_traces_are_untouched(x in 7usize..40, seed in 0u64..1000) {
        let g = gather(x, 6, seed);
        let s = apply_mask(&g, &MaskOptions::default(), &mut rng::seeded(seed)).unwrap();
        for i in 0..x {
            if !s.mask.is_masked(i) {
                prop_assert_eq!(s.corrupted.trace(i), g.trace(i));
            }
        }
    }

    #[test]
    fn loss_ignores_unmasked_predictions(seed in 0u64..1000, junk in -5.0f32..5.0) {
        let g = gather(12, 5, seed);
        let s = apply_mask(&g, &MaskOptions::default(), &mut rng::seeded(seed)).unwrap();
        let mut r = rng::seeded(seed + 1);
        let pred: Vec<f32> = (0..60).map(|_| rng::normal(&mut r) as f32).collect();
        let mut other = pred.clone();
        for i in 0..12 {
            if !s.mask.is_masked(i) {
                other[i * 5..(i + 1) * 5].fill(junk);
            }
        }
        prop_assert_eq!(masked_loss(&pred, &g, &s.mask).unwrap(), masked_loss(&other, &g, &s.mask).unwrap());
    }
}
