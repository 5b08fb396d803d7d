//! Synthetic shot gathers with exact labels.

pub mod eikonal;
pub mod grid;
pub mod layered;
pub mod nmo;
pub mod noise;
pub mod synth;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gather::{DomainTag, ShotGather};
use crate::numerics::rng;

pub use eikonal::{first_break_labels, travel_times, travel_times_with, FmmOptions, TimeField};
pub use grid::{depth_to_time, label_mean_velocity, random_grid_model, GridModel};
pub use layered::{random_layered_model, vrms, LayerBounds, LayeredModel};
pub use nmo::{inverse_nmo, moveout, nmo_correct, NmoOptions, OffsetPolicy};
pub use noise::{add_noise, add_noise_with, NoiseKind, FIELD_PROXY};
pub use synth::{ricker, synth_gather, AcquisitionGeom, Sampling, SynthLabels};

/// Named generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: String,
    pub n_traces: usize,
    pub n_samples: usize,
    pub dt: f64,
    pub near_offset: f64,
    pub spacing: f64,
    pub peak_hz: f64,
    #[serde(default)]
    pub bounds: LayerBounds,
}

impl Preset {
    /// Desk scale: 32 traces × 128 samples at 4 ms.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            n_traces: 32,
            n_samples: 128,
            dt: 0.004,
            near_offset: 0.0,
            spacing: 12.5,
            peak_hz: 25.0,
            bounds: LayerBounds::default(),
        }
    }

    /// 20 traces × 271 samples at 8 ms.
    pub fn snist() -> Self {
        Self {
            name: "snist".into(),
            n_traces: 20,
            n_samples: 271,
            dt: 0.008,
            near_offset: 0.0,
            spacing: 50.0,
            peak_hz: 15.0,
            bounds: LayerBounds {
                min_gap: 0.08,
                ..LayerBounds::default()
            },
        }
    }

    /// 324 traces × 376 samples at 16 ms.
    pub fn field() -> Self {
        Self {
            name: "field".into(),
            n_traces: 324,
            n_samples: 376,
            dt: 0.016,
            near_offset: 0.0,
            spacing: 12.5,
            peak_hz: 8.0,
            bounds: LayerBounds {
                min_gap: 0.16,
                ..LayerBounds::default()
            },
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "snist" => Ok(Self::snist()),
            "field" => Ok(Self::field()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected desk, snist or field)"
            ))),
        }
    }

    pub fn geometry(&self) -> AcquisitionGeom {
        AcquisitionGeom::new(self.n_traces, self.near_offset, self.spacing)
    }

    pub fn sampling(&self) -> Sampling {
        Sampling {
            n_samples: self.n_samples,
            dt: self.dt,
        }
    }
}

/// One generated gather: the recorded input, its noise-free version and the
/// labels of the model it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample {
    pub input: ShotGather,
    pub clean: ShotGather,
    pub labels: SynthLabels,
    pub model: LayeredModel,
}

impl GeneratedSample {
    pub fn domain(&self) -> DomainTag {
        self.input.domain
    }
}

/// Gather `id` of a corpus. Its random stream depends only on `(seed, id)`,
/// so corpora can be generated in any order or in parallel.
pub fn generate_sample(preset: &Preset, seed: u64, id: u64, domain: DomainTag) -> Result<GeneratedSample> {
    let mut r = rng::stream(seed, &[id]);
    let sampling = preset.sampling();
    let model = random_layered_model(&mut r, &preset.bounds, sampling.record())?;
    let (clean, labels) = synth_gather(&model, &preset.geometry(), sampling, preset.peak_hz)?;
    let (input, clean) = match domain {
        DomainTag::Clean => (clean.clone(), clean),
        DomainTag::FieldProxy => {
            let mut noisy = add_noise_with(&clean, NoiseKind::FieldProxy, preset.peak_hz, &mut r)?;
            let peak = noisy.max_abs();
            noisy.normalize();
            let mut clean = clean;
            if peak > 0.0 {
                for v in clean.amplitudes_mut() {
                    *v /= peak;
                }
            }
            clean.domain = DomainTag::FieldProxy;
            (noisy, clean)
        }
    };
    Ok(GeneratedSample {
        input,
        clean,
        labels,
        model,
    })
}

/// Gathers `first_id..first_id + n`, generated in parallel.
pub fn generate(preset: &Preset, n: usize, seed: u64, first_id: u64, domain: DomainTag) -> Result<Vec<GeneratedSample>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| generate_sample(preset, seed, first_id + i, domain))
        .collect()
}

/// Counts of each domain in a mixed corpus of `n_total` items.
pub fn mix_counts(field_fraction: f64, n_total: usize) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&field_fraction) {
        return Err(Error::contract(format!(
            "field fraction {field_fraction} outside [0, 1]"
        )));
    }
    let n_b = (field_fraction * n_total as f64).round() as usize;
    Ok((n_total - n_b, n_b))
}

/// Shuffled corpus of `n_total` items with `round(field_fraction · n_total)`
/// taken from `domain_b` and the rest from `domain_a`. When `domain_a` runs
/// short, `top_up(k)` synthesizes the `k`-th extra item; without it, or when
/// `domain_b` runs short, the call fails.
pub fn build_mixed_corpus<T>(
    mut domain_a: Vec<T>,
    mut domain_b: Vec<T>,
    field_fraction: f64,
    n_total: usize,
    top_up: Option<&mut dyn FnMut(usize) -> Result<T>>,
    rng: &mut impl Rng,
) -> Result<Vec<T>> {
    let (n_a, n_b) = mix_counts(field_fraction, n_total)?;
    if domain_b.len() < n_b {
        return Err(Error::contract(format!(
            "need {n_b} field-proxy gathers, have {}",
            domain_b.len()
        )));
    }
    if domain_a.len() < n_a {
        let missing = n_a - domain_a.len();
        let Some(make) = top_up else {
            return Err(Error::contract(format!(
                "need {n_a} synthetic gathers, have {}",
                domain_a.len()
            )));
        };
        for k in 0..missing {
            domain_a.push(make(k)?);
        }
    }
    domain_a.truncate(n_a);
    domain_b.truncate(n_b);
    let mut out = domain_a;
    out.append(&mut domain_b);
    out.shuffle(rng);
    Ok(out)
}
