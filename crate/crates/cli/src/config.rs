//! Run configuration files (TOML).
//!
//! Relative paths are resolved against the directory of the config file; the
//! resolved configuration, with every default filled in, is written next to
//! the run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seisbert::finetune::{PickOptions, TaskKind};
use seisbert::model::{AttnScale, HeadInit, ModelConfig};
use seisbert::pretrain::PretrainOptions;
use seisbert::seisgen::Preset;
use seisbert::sweep::SweepConfig;
use seisbert::train::Schedule;
use seisbert::{Error, Result};

pub const RESOLVED: &str = "config.resolved.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model: ModelSection,
    pub data: DataSection,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub pretrain: PretrainOptions,
    #[serde(default)]
    pub finetune: FinetuneSection,
}

/// Encoder shape; the sample count and trace limit come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate_ratio: usize,
    pub attn_scale: AttnScale,
    pub dropout: f32,
    pub layer_norm_eps: f64,
    /// Largest gather the model accepts; defaults to the training width.
    pub max_traces: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = ModelConfig::desk(1, 1);
        Self {
            hidden: c.hidden,
            layers: c.layers,
            heads: c.heads,
            intermediate_ratio: c.intermediate_ratio,
            attn_scale: c.attn_scale,
            dropout: c.dropout,
            layer_norm_eps: c.layer_norm_eps,
            max_traces: None,
        }
    }
}

impl ModelSection {
    pub fn config(&self, samples: usize, traces: usize) -> Result<ModelConfig> {
        let c = ModelConfig {
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            samples,
            max_traces: self.max_traces.unwrap_or(traces),
            intermediate_ratio: self.intermediate_ratio,
            attn_scale: self.attn_scale,
            dropout: self.dropout,
            layer_norm_eps: self.layer_norm_eps,
        };
        c.validate()?;
        if c.max_traces < traces {
            return Err(Error::Config(format!(
                "max_traces {} is below the {traces} traces of the data",
                c.max_traces
            )));
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    /// Held-out set; without it the last `test_fraction` of `train` is used.
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.1
}

/// How denoising pairs are formed from a dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoisePairs {
    /// `stored` when any input differs from its clean gather, else `gaussian`.
    #[default]
    Auto,
    /// Recorded input against the stored clean gather.
    Stored,
    /// Clean gathers with freshly added Gaussian noise.
    Gaussian,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub task: Option<TaskKind>,
    pub freeze_k: usize,
    /// Defaults to zeros for denoising and random otherwise.
    pub head_init: Option<HeadInit>,
    pub denoise_pairs: DenoisePairs,
    pub pick: PickOptions,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.output_dir = resolve(base, &cfg.output_dir);
        cfg.data.train = resolve(base, &cfg.data.train);
        cfg.data.test = cfg.data.test.as_deref().map(|p| resolve(base, p));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?, &base_dir(path))
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction {} outside [0, 1)",
                self.data.test_fraction
            )));
        }
        let m = &self.pretrain.mask;
        if !(m.ratio > 0.0 && m.ratio < 1.0) {
            return Err(Error::Config(format!("mask ratio {} outside (0, 1)", m.ratio)));
        }
        Ok(())
    }
}

/// Serialize `value` to `dir/config.resolved.toml`.
pub fn write_resolved<T: Serialize>(dir: &Path, value: &T) -> Result<PathBuf> {
    let text = toml::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(RESOLVED);
    fs::write(&path, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

/// Sweep file: `output_dir` plus any `SweepConfig` fields, which override the
/// desk-scale defaults. `preset` may name a preset or give a table of
/// overrides on top of one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepFile {
    pub output_dir: PathBuf,
    #[serde(flatten)]
    pub sweep: SweepConfig,
}

impl SweepFile {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let mut user: toml::Table = toml::from_str(text).map_err(|e| bad(&e))?;
        let output_dir = match user.remove("output_dir") {
            Some(toml::Value::String(s)) => resolve(base, Path::new(&s)),
            Some(_) => return Err(Error::Config("output_dir must be a string".into())),
            None => return Err(Error::Config("missing field `output_dir`".into())),
        };

        let mut preset = Preset::desk();
        let mut preset_overrides = None;
        match user.remove("preset") {
            Some(toml::Value::String(name)) => preset = Preset::by_name(&name)?,
            Some(toml::Value::Table(mut t)) => {
                if let Some(toml::Value::String(name)) = t.remove("base") {
                    preset = Preset::by_name(&name)?;
                }
                preset_overrides = Some(t);
            }
            Some(_) => return Err(Error::Config("preset must be a name or a table".into())),
            None => {}
        }
        let mut preset_value = toml::Value::try_from(&preset).map_err(|e| bad(&e))?;
        if let Some(t) = preset_overrides {
            merge(&mut preset_value, toml::Value::Table(t));
        }
        let preset: Preset = preset_value.try_into().map_err(|e| bad(&e))?;

        let mut value = toml::Value::try_from(SweepConfig::desk(preset)).map_err(|e| bad(&e))?;
        merge(&mut value, toml::Value::Table(user));
        let sweep: SweepConfig = value.try_into().map_err(|e| bad(&e))?;
        if sweep.model.samples != sweep.preset.n_samples || sweep.model.max_traces < sweep.preset.n_traces {
            return Err(Error::Config(format!(
                "model takes {} samples and up to {} traces but the preset makes {}×{} gathers",
                sweep.model.samples, sweep.model.max_traces, sweep.preset.n_traces, sweep.preset.n_samples
            )));
        }
        sweep.model.validate()?;
        sweep.pretrain_schedule.validate()?;
        sweep.finetune_schedule.validate()?;
        Ok(Self { output_dir, sweep })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?, &base_dir(path))
    }
}

/// Overlay `top` on `base`, recursing into tables.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "run"
[data]
train = "train.ssds"
"#;

    #[test]
    fn defaults_fill_a_minimal_file() {
        let c = RunConfig::from_toml(MINIMAL, Path::new("/cfg")).unwrap();
        assert_eq!(c.output_dir, Path::new("/cfg/run"));
        assert_eq!(c.data.train, Path::new("/cfg/train.ssds"));
        assert_eq!(c.schedule, Schedule::default());
        assert_eq!(c.model.hidden, 64);
        assert_eq!(c.data.test_fraction, 0.1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[schedule]\nlearning_rat = 0.1\n");
        assert!(matches!(RunConfig::from_toml(&text, Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::from_toml(MINIMAL, Path::new("/cfg")).unwrap();
        let text = toml::to_string_pretty(&c).unwrap();
        assert_eq!(RunConfig::from_toml(&text, Path::new("/elsewhere")).unwrap(), c);
    }

    #[test]
    fn sweep_overrides_merge_onto_defaults() {
        let text = r#"
output_dir = "sweep"
fractions = [0.2, 0.4]
preset = { base = "desk", n_traces = 20 }
[model]
max_traces = 20
[finetune_schedule]
max_epochs = 3
"#;
        let s = SweepFile::from_toml(text, Path::new("/x")).unwrap();
        assert_eq!(s.sweep.fractions, vec![0.2, 0.4]);
        assert_eq!(s.sweep.preset.n_traces, 20);
        assert_eq!(s.sweep.finetune_schedule.max_epochs, 3);
        assert_eq!(
            s.sweep.finetune_schedule.batch_size,
            SweepConfig::desk(Preset::desk()).finetune_schedule.batch_size
        );
        assert_eq!(s.sweep.model.hidden, 64);
        assert!(SweepFile::from_toml("output_dir = \"a\"\nfractionz = [0.1]", Path::new(".")).is_err());
    }
}
