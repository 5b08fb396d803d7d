use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;
use proptest::prelude::*;
use seisbert::dataset::Dataset;
use seisbert::gather::{DomainTag, ShotGather};
use seisbert::numerics::rng;
use seisbert::seisgen::synth::{first_arrival_times, ricker_support};
use seisbert::seisgen::*;

fn random_models(n: usize, seed: u64) -> Vec<LayeredModel> {
    let bounds = LayerBounds {
        monotone: false,
        ..LayerBounds::default()
    };
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|_| random_layered_model(&mut r, &bounds, 2.0).unwrap())
        .collect()
}

/// Eq.-style brute force: explicit running sums, one layer at a time.
fn vrms_oracle(model: &LayeredModel, n: usize) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    let mut i = 0;
    while i < n {
        let v = model.velocities[i];
        num += v * v * model.twt[i];
        den += model.twt[i];
        i += 1;
    }
    (num / den).sqrt()
}

#[test]
fn single_layer_bounds_give_constant_model() {
    let bounds = LayerBounds {
        min_layers: 1,
        max_layers: 1,
        ..LayerBounds::default()
    };
    let m = random_layered_model(&mut rng::seeded(3), &bounds, 0.5).unwrap();
    assert_eq!(m.n_layers(), 1);
    let p = m.interval_profile(0.004, 125);
    assert!(p.iter().all(|v| *v == p[0]));
}

#[test]
fn random_models_reproducible_and_bounded() {
    assert_eq!(random_models(5, 9), random_models(5, 9));
    assert_ne!(random_models(5, 9), random_models(5, 10));
    let b = LayerBounds::default();
    for m in random_models(1000, 1) {
        assert!((b.min_layers..=b.max_layers).contains(&m.n_layers()));
        assert!(m.velocities.iter().all(|v| (b.v_min..=b.v_max).contains(v)));
        assert!(m.twt.iter().all(|t| *t > 0.0));
        assert!((m.twt.iter().sum::<f64>() - 2.0).abs() < 1e-9);
    }
}

#[test]
fn vrms_matches_brute_force_on_many_models() {
    for m in random_models(1000, 2) {
        for n in 1..=m.n_layers() {
            let got = vrms(&m, n).unwrap();
            assert!((got - vrms_oracle(&m, n)).abs() <= 1e-9);
            let lo = m.velocities[..n].iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = m.velocities[..n].iter().cloned().fold(0.0, f64::max);
            assert!(got >= lo - 1e-9 && got <= hi + 1e-9);
        }
    }
}

#[test]
fn prepending_layer_at_vrms_keeps_vrms() {
    for m in random_models(200, 4) {
        let n = m.n_layers();
        let v = vrms(&m, n).unwrap();
        let mut velocities = vec![v];
        velocities.extend(&m.velocities);
        let mut twt = vec![0.3];
        twt.extend(&m.twt);
        let longer = LayeredModel::new(velocities, twt).unwrap();
        assert!((vrms(&longer, n + 1).unwrap() - v).abs() <= 1e-9 * v);
    }
}

fn desk_geom() -> (AcquisitionGeom, Sampling) {
    (
        AcquisitionGeom::new(32, 0.0, 12.5),
        Sampling {
            n_samples: 128,
            dt: 0.004,
        },
    )
}

#[test]
fn zero_contrast_model_has_only_first_arrival() {
    let (geom, sampling) = desk_geom();
    let m = LayeredModel::new(vec![2000.0, 2000.0], vec![0.2, 0.312]).unwrap();
    let (g, labels) = synth_gather(&m, &geom, sampling, 25.0).unwrap();
    let support = ricker_support(25.0);
    for i in 0..32 {
        let t_first = labels.first_arrival[i];
        for (k, &v) in g.trace(i).iter().enumerate() {
            let t = k as f64 * sampling.dt;
            if (t - t_first).abs() > support + sampling.dt {
                assert_eq!(v, 0.0, "trace {i} sample {k}");
            }
        }
    }
    assert_eq!(g.max_abs(), 1.0);
}

fn local_peak(trace: &[f32], center: f64, dt: f64, half: f64, sign: f32) -> usize {
    let lo = ((center - half) / dt).floor().max(0.0) as usize;
    let hi = (((center + half) / dt).ceil() as usize).min(trace.len() - 1);
    (lo..=hi)
        .max_by(|&a, &b| (sign * trace[a]).total_cmp(&(sign * trace[b])))
        .unwrap()
}

#[test]
fn single_reflector_events_follow_the_hyperbola() {
    let (geom, sampling) = desk_geom();
    let t0 = 0.3;
    let m = LayeredModel::new(vec![1800.0, 3200.0], vec![t0, 0.212]).unwrap();
    let (g, _) = synth_gather(&m, &geom, sampling, 25.0).unwrap();
    // Offset zero: the event sits at t0 exactly.
    let at_zero = local_peak(g.trace(0), t0, sampling.dt, 0.01, 1.0);
    assert_eq!(at_zero as f64 * sampling.dt, t0);
    for (i, x) in geom.offsets().iter().enumerate() {
        let t = moveout(t0, *x, 1800.0);
        let k = local_peak(g.trace(i), t, sampling.dt, 0.5 * ricker_support(25.0), 1.0);
        assert!((k as f64 - t / sampling.dt).abs() <= 1.0, "trace {i}");
    }
}

#[test]
fn first_break_labels_match_first_arrival_peaks() {
    let (geom, sampling) = desk_geom();
    let bounds = LayerBounds::default();
    let mut checked = 0;
    let mut r = rng::seeded(21);
    for _ in 0..120 {
        let m = random_layered_model(&mut r, &bounds, sampling.record()).unwrap();
        let (g, labels) = synth_gather(&m, &geom, sampling, 25.0).unwrap();
        let coeffs = m.reflection_coefficients();
        for (i, x) in geom.offsets().iter().enumerate() {
            let tf = labels.first_arrival[i];
            // Only judge traces where no reflection overlaps the first arrival.
            let clear = coeffs.iter().zip(m.interface_times()).enumerate().all(|(n, (_, t0))| {
                let t = moveout(t0, *x, vrms(&m, n + 1).unwrap());
                t < tf || (t - tf) > 2.0 * ricker_support(25.0)
            });
            if !clear || tf <= 0.0 {
                continue;
            }
            let k = local_peak(g.trace(i), tf, sampling.dt, 0.5 * ricker_support(25.0), 1.0);
            assert!(
                (k as i64 - labels.first_break[i] as i64).abs() <= 1,
                "trace {i}: peak {k}, label {}",
                labels.first_break[i]
            );
            checked += 1;
        }
    }
    assert!(checked > 400, "{checked}");
}

#[test]
fn first_breaks_monotone_in_offset_for_layered_models() {
    let (geom, sampling) = desk_geom();
    for m in random_models(50, 6) {
        let (_, labels) = synth_gather(&m, &geom, sampling, 25.0).unwrap();
        assert!(labels.first_break.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn first_arrival_of_a_fast_layer_refracts() {
    // Thin slow layer over a fast one: far offsets arrive earlier than direct.
    let geom = AcquisitionGeom::new(40, 0.0, 25.0);
    let m = LayeredModel::new(vec![1500.0, 4000.0], vec![0.04, 1.0]).unwrap();
    let times = first_arrival_times(&m, &geom).unwrap();
    let h = 1500.0 * 0.04 / 2.0;
    let head = |x: f64| x / 4000.0 + 2.0 * h * (1.0 / 1500f64.powi(2) - 1.0 / 4000f64.powi(2)).sqrt();
    let far = geom.max_offset();
    assert!(times[39] < far / 1500.0);
    assert!((times[39] - head(far)).abs() / head(far) < 0.03);
}

#[test]
fn gaussian_noise_scales_std() {
    let mut r = rng::seeded(10);
    let amps = (0..200 * 400).map(|_| rng::normal(&mut r) as f32).collect();
    let offsets = (0..200).map(|i| i as f64).collect();
    let g = ShotGather::new(200, 400, amps, 0.004, offsets).unwrap();
    for m in [0.5, 1.0, 2.0] {
        let noisy = add_noise(&g, NoiseKind::Gaussian { sigma_mult: m }, &mut r).unwrap();
        let ratio = noisy.std() / (g.std() * (1.0f64 + m * m).sqrt());
        assert!((ratio - 1.0).abs() < 0.05, "{m}: {ratio}");
    }
}

#[test]
fn constant_velocity_travel_times() {
    let h = 10.0;
    let v = 2000.0;
    let g = GridModel::constant(201, 201, h, v).unwrap();
    let f = travel_times(&g, (100, 100)).unwrap();
    let mut worst = 0.0f64;
    for iz in 0..201 {
        for ix in 0..201 {
            let cells = (((ix as f64 - 100.0).powi(2) + (iz as f64 - 100.0).powi(2)) as f64).sqrt();
            if cells < 10.0 {
                continue;
            }
            let exact = cells * h / v;
            worst = worst.max((f.at(ix, iz) - exact).abs() / exact);
        }
    }
    assert!(worst <= 0.03, "{worst}");

    let fast = travel_times(&g.scaled(2.0), (100, 100)).unwrap();
    let slow = travel_times(&g.scaled(0.5), (100, 100)).unwrap();
    for i in 0..f.times.len() {
        assert_eq!(fast.times[i] * 2.0, f.times[i]);
        assert_eq!(slow.times[i] / 2.0, f.times[i]);
    }
}

#[test]
fn accepted_times_never_decrease() {
    let mut r = rng::seeded(2);
    let g = random_grid_model(&mut r, 80, 60, 5.0, &LayerBounds::default()).unwrap();
    let f = travel_times(&g, (13, 0)).unwrap();
    assert_eq!(f.accepted.len(), 80 * 60);
    assert!(f.accepted.windows(2).all(|w| f.times[w[0]] <= f.times[w[1]]));
}

/// Shortest path on the 8-neighbor graph with edge cost = length × mean
/// slowness of its end nodes.
fn dijkstra(g: &GridModel, src: (usize, usize)) -> Vec<f64> {
    let (nx, nz) = (g.nx, g.nz);
    let mut dist = vec![f64::INFINITY; nx * nz];
    let s = src.1 * nx + src.0;
    dist[s] = 0.0;
    let mut heap = BinaryHeap::from([Reverse((OrderedFloat(0.0), s))]);
    while let Some(Reverse((OrderedFloat(d), id))) = heap.pop() {
        if d > dist[id] {
            continue;
        }
        let (ix, iz) = ((id % nx) as i64, (id / nx) as i64);
        for (ddx, ddz) in [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)] {
            let (jx, jz) = (ix + ddx, iz + ddz);
            if jx < 0 || jz < 0 || jx >= nx as i64 || jz >= nz as i64 {
                continue;
            }
            let j = jz as usize * nx + jx as usize;
            let len = ((ddx as f64 * g.dx).powi(2) + (ddz as f64 * g.dz).powi(2)).sqrt();
            let cost = len * 0.5 * (1.0 / g.velocity[id] + 1.0 / g.velocity[j]);
            if d + cost < dist[j] {
                dist[j] = d + cost;
                heap.push(Reverse((OrderedFloat(d + cost), j)));
            }
        }
    }
    dist
}

#[test]
fn two_layer_surface_times_bounded_by_graph_paths() {
    let m = LayeredModel::new(vec![1500.0, 3500.0], vec![0.08, 1.0]).unwrap();
    let h = 5.0;
    let g = GridModel::from_layered(&m, 161, 80, h, h).unwrap();
    let f = travel_times(&g, (0, 0)).unwrap();
    let d = dijkstra(&g, (0, 0));
    for ix in 0..161 {
        // One cell of travel at the slowest speed covers the discretization.
        let bound = d[ix] + 2.0 * h / 1500.0;
        assert!(f.at(ix, 0) <= bound, "ix {ix}: {} > {}", f.at(ix, 0), bound);
    }
}

#[test]
fn nmo_flattens_an_ideal_hyperbola() {
    let (geom, sampling) = desk_geom();
    let t0 = 0.32;
    let m = LayeredModel::new(vec![2200.0, 3000.0], vec![t0, 0.192]).unwrap();
    let (g, _) = synth_gather(&m, &geom, sampling, 25.0).unwrap();
    let profile = m.vrms_profile(sampling.dt, sampling.n_samples);
    let opts = NmoOptions::default();
    let flat = nmo_correct(&g, &profile, &opts).unwrap();
    let target = t0 / sampling.dt;
    for i in 0..flat.n_traces() {
        let k = local_peak(flat.trace(i), t0, sampling.dt, 0.02, 1.0);
        let x = geom.offsets()[i];
        let stretch = moveout(t0, x, 2200.0) / t0 - 1.0;
        if stretch <= opts.stretch_mute {
            assert!((k as f64 - target).abs() < 1.0, "trace {i}: {k}");
        }
    }
}

#[test]
fn nmo_round_trip_restores_unmuted_region() {
    let (geom, sampling) = desk_geom();
    let m = LayeredModel::new(vec![1800.0, 2600.0, 3400.0], vec![0.15, 0.15, 0.212]).unwrap();
    let (g, _) = synth_gather(&m, &geom, sampling, 15.0).unwrap();
    let profile = m.vrms_profile(sampling.dt, sampling.n_samples);
    let opts = NmoOptions::default();
    let back = inverse_nmo(&nmo_correct(&g, &profile, &opts).unwrap(), &profile, &opts).unwrap();
    // Linear interpolation error bound for the wavelet: dt²/8 · max|a''|,
    // applied twice.
    let w = std::f64::consts::PI * 15.0;
    let curvature = 6.0 * w * w; // |ricker''(0)| for unit peak
    let bound = 2.0 * 2.0 * sampling.dt * sampling.dt / 8.0 * curvature;
    let mut compared = 0;
    for i in 0..g.n_traces() {
        let x = geom.offsets()[i];
        for k in 0..sampling.n_samples {
            let t = k as f64 * sampling.dt;
            // Compare where the whole neighbourhood is comfortably unmuted.
            let ok = (0..sampling.n_samples).any(|j| {
                let t0 = j as f64 * sampling.dt;
                t0 > 0.0 && (moveout(t0, x, profile[j]) - t).abs() < sampling.dt / 2.0
                    && moveout(t0, x, profile[j]) / t0 - 1.0 < 0.8 * opts.stretch_mute
            });
            if ok && t > 0.05 {
                let diff = (back.trace(i)[k] - g.trace(i)[k]).abs() as f64;
                assert!(diff <= bound, "trace {i} sample {k}: {diff} > {bound}");
                compared += 1;
            }
        }
    }
    assert!(compared > 1000);
}

#[test]
fn mean_velocity_of_homogeneous_grid_is_its_column() {
    let m = LayeredModel::new(vec![1600.0, 2400.0, 3300.0], vec![0.1, 0.2, 0.3]).unwrap();
    let g = GridModel::from_layered(&m, 30, 120, 5.0, 5.0).unwrap();
    let p = label_mean_velocity(&g, 20.0, 60.0, 0.004, 128).unwrap();
    assert_eq!(p, depth_to_time(&g.column(0), 5.0, 0.004, 128));
}

#[test]
fn mean_velocity_of_two_columns_is_arithmetic_mean() {
    let velocity = (0..10).flat_map(|_| [2000.0, 3000.0]).collect();
    let g = GridModel::new(2, 10, 10.0, 10.0, velocity).unwrap();
    let p = label_mean_velocity(&g, 0.0, 10.0, 0.004, 8).unwrap();
    assert!(p.iter().all(|v| *v == 2500.0));
}

#[test]
fn mean_velocity_matches_loop_average() {
    let mut r = rng::seeded(17);
    for trial in 0..20 {
        let g = random_grid_model(&mut r, 50, 40, 8.0, &LayerBounds::default()).unwrap();
        let shot = (trial % 10) as f64 * 8.0;
        let half = 120.0;
        let got = label_mean_velocity(&g, shot, half, 0.004, 100).unwrap();
        // Loop oracle.
        let mut mean = vec![0.0; g.nz];
        for (iz, m) in mean.iter_mut().enumerate() {
            let mut n = 0.0;
            for ix in 0..g.nx {
                let x = ix as f64 * g.dx;
                if x >= shot && x <= shot + half {
                    *m += g.velocity[iz * g.nx + ix];
                    n += 1.0;
                }
            }
            *m /= n;
        }
        let mut tb = Vec::new();
        let mut acc = 0.0;
        for v in &mean {
            acc += 2.0 * g.dz / v;
            tb.push(acc);
        }
        for (k, value) in got.iter().enumerate() {
            let t = k as f64 * 0.004;
            let cell = tb.iter().position(|b| t < *b).unwrap_or(g.nz - 1);
            assert!((value - mean[cell]).abs() <= 1e-9);
        }
    }
}

#[test]
fn window_outside_grid_is_clipped_or_rejected() {
    let g = GridModel::constant(10, 10, 10.0, 2000.0).unwrap();
    assert!(label_mean_velocity(&g, 50.0, 500.0, 0.004, 10).is_ok());
    assert!(label_mean_velocity(&g, 500.0, 100.0, 0.004, 10).is_err());
}

#[test]
fn mixed_corpus_compositions() {
    let mut r = rng::seeded(3);
    for (fraction, n_b) in [(0.0, 0), (0.15, 30), (0.30, 60), (0.50, 100)] {
        let a: Vec<(u8, usize)> = (0..200).map(|i| (0, i)).collect();
        let b: Vec<(u8, usize)> = (0..200).map(|i| (1, i)).collect();
        let mixed = build_mixed_corpus(a, b, fraction, 200, None, &mut r).unwrap();
        assert_eq!(mixed.len(), 200);
        assert_eq!(mixed.iter().filter(|(d, _)| *d == 1).count(), n_b);
    }
    let err = build_mixed_corpus(vec![0u8; 10], vec![1u8; 5], 0.5, 20, None, &mut r);
    assert!(err.is_err());
    let mut extra = |k: usize| Ok((2u8, k));
    let topped = build_mixed_corpus(
        vec![(0u8, 0usize); 5],
        vec![(1u8, 0usize); 10],
        0.5,
        20,
        Some(&mut extra),
        &mut r,
    )
    .unwrap();
    assert_eq!(topped.iter().filter(|(d, _)| *d == 2).count(), 5);
    assert!(build_mixed_corpus(vec![0u8; 10], vec![1u8; 10], 1.5, 10, None, &mut r).is_err());
}

#[test]
fn dataset_round_trip_and_determinism() {
    let mut p = Preset::desk();
    p.n_traces = 8;
    let samples = generate(&p, 4, 5, 0, DomainTag::FieldProxy).unwrap();
    let ds = Dataset::from_samples(&samples, 1500.0, 4500.0).unwrap();
    let bytes = ds.to_bytes();
    let back = Dataset::from_bytes(&bytes).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.gather(2), samples[2].input);
    assert_eq!(back.clean_gather(2).unwrap(), samples[2].clean);
    let again = Dataset::from_samples(&generate(&p, 4, 5, 0, DomainTag::FieldProxy).unwrap(), 1500.0, 4500.0)
        .unwrap();
    assert_eq!(again.to_bytes(), bytes);
    let mut truncated = bytes.clone();
    truncated.pop();
    assert!(Dataset::from_bytes(&truncated).is_err());
}

#[test]
fn presets_produce_documented_shapes() {
    for (p, x, t) in [(Preset::snist(), 20, 271), (Preset::field(), 324, 376), (Preset::desk(), 32, 128)] {
        let s = generate_sample(&p, 1, 0, DomainTag::Clean).unwrap();
        assert_eq!((s.input.n_traces(), s.input.n_samples()), (x, t));
        assert_eq!(s.labels.velocity.len(), t);
        assert_eq!(s.labels.first_break.len(), x);
        assert!(s.input.max_abs() <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn vrms_between_extremes(vs in prop::collection::vec(1500.0f64..4500.0, 1..8), seed in 0u64..100) {
        let mut r = rng::seeded(seed);
        let twt: Vec<f64> = vs.iter().map(|_| 0.01 + rand::Rng::random::<f64>(&mut r)).collect();
        let m = LayeredModel::new(vs.clone(), twt).unwrap();
        let lo = vs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vs.iter().cloned().fold(0.0, f64::max);
        for t in [0.0, 0.1, 0.5, 1.0, 5.0] {
            let v = m.vrms_at(t);
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }
}
