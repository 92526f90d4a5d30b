//! Pipeline configuration: a preset, optionally overlaid by a JSON file,
//! then by command-line flags.

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use trochlea::denoiser::{NetConfig, TrainConfig};
use trochlea::diffusion::ScheduleConfig;
use trochlea::masking::{BackgroundConfig, MaskSpec, PatellaSearch};
use trochlea::metrics::SsimConfig;
use trochlea::phantom::PhantomSpec;
use trochlea::preprocess::PreprocessConfig;
use trochlea::{Dims, Grid};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Scaled down to run on one CPU core in minutes.
    Desk,
    /// Full-resolution hyperparameters.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InpaintConfig {
    /// Clamp predicted coefficients to `[lo, hi]`; `null` disables.
    pub clamp_x0: Option<(f32, f32)>,
    /// Dump `x_t` every this many steps when a snapshot directory is given.
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Preset,
    /// Global seed, used when neither `--seed` nor `TROCH_SEED` is set.
    pub seed: u64,
    /// Grid the denoiser trains and samples on.
    pub resolution: Dims,
    pub preprocess: PreprocessConfig,
    pub background: BackgroundConfig,
    pub mask: MaskSpec,
    pub patella: PatellaSearch,
    pub network: NetConfig,
    pub training: TrainConfig,
    pub schedule: ScheduleConfig,
    pub inpaint: InpaintConfig,
    pub ssim: SsimConfig,
    /// Template for `phantom`; groove and seed are set per run.
    pub phantom: PhantomSpec,
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => PipelineConfig {
                preset,
                seed: 0,
                resolution: PhantomSpec::default().dims,
                preprocess: PreprocessConfig::default(),
                background: BackgroundConfig::default(),
                mask: MaskSpec::desk(),
                patella: PatellaSearch::desk(),
                network: NetConfig::desk(),
                training: TrainConfig::desk(),
                schedule: ScheduleConfig::desk(),
                inpaint: InpaintConfig {
                    clamp_x0: None,
                    snapshot_every: 10,
                },
                ssim: SsimConfig::desk(),
                phantom: PhantomSpec::default(),
            },
            Preset::Full => PipelineConfig {
                preset,
                seed: 0,
                resolution: PreprocessConfig::default().target_dims,
                preprocess: PreprocessConfig::default(),
                background: BackgroundConfig::default(),
                mask: MaskSpec::default(),
                patella: PatellaSearch::default(),
                network: NetConfig::full(),
                training: TrainConfig::full(),
                schedule: ScheduleConfig::full(),
                inpaint: InpaintConfig {
                    clamp_x0: None,
                    snapshot_every: 100,
                },
                ssim: SsimConfig::default(),
                phantom: PhantomSpec::default(),
            },
        }
    }

    /// Resolves the preset (flag, then the file's `preset` key, then desk),
    /// merges the file over it and validates the result.
    pub fn load(path: Option<&Path>, preset: Option<Preset>) -> Result<Self, CliError> {
        let overlay = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", p.display())))?;
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::Invalid(format!("config {} is not valid JSON: {e}", p.display())))?;
                if !v.is_object() {
                    return Err(CliError::Invalid(format!(
                        "config {} must be a JSON object",
                        p.display()
                    )));
                }
                Some(v)
            }
            None => None,
        };
        let file_preset = match overlay.as_ref().and_then(|v| v.get("preset")) {
            Some(p) => Some(
                serde_json::from_value::<Preset>(p.clone())
                    .map_err(|e| CliError::Invalid(format!("bad preset: {e}")))?,
            ),
            None => None,
        };
        let chosen = preset.or(file_preset).unwrap_or(Preset::Desk);
        let mut merged = serde_json::to_value(Self::preset(chosen)).expect("config serializes");
        if let Some(o) = overlay {
            merge(&mut merged, o);
        }
        merged["preset"] = serde_json::to_value(chosen).expect("preset serializes");
        let cfg: PipelineConfig =
            serde_json::from_value(merged).map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        Grid::new(self.resolution, [1.0; 3])?;
        self.preprocess.validate()?;
        self.mask.validate()?;
        self.network.validate()?;
        self.training.validate()?;
        self.schedule.build()?;
        self.ssim.validate()?;
        let div = 2 * self.network.dims_divisor();
        if self.resolution.iter().any(|&n| n % div != 0) {
            return Err(CliError::Invalid(format!(
                "resolution {:?} must be divisible by {div} for this network",
                self.resolution
            )));
        }
        if self.background.otsu_bins < 2 {
            return Err(CliError::Invalid("background.otsu_bins must be at least 2".into()));
        }
        if !(self.background.se_radius_mm.is_finite() && self.background.se_radius_mm >= 0.0) {
            return Err(CliError::Invalid("background.se_radius_mm must be >= 0".into()));
        }
        let p = &self.patella;
        if !(p.min_volume_mm3 >= 0.0 && p.min_volume_mm3 <= p.max_volume_mm3) {
            return Err(CliError::Invalid("patella volume range is empty".into()));
        }
        if let Some((lo, hi)) = self.inpaint.clamp_x0 {
            if !(lo < hi) {
                return Err(CliError::Invalid("inpaint.clamp_x0 needs lo < hi".into()));
            }
        }
        Ok(())
    }
}

/// Recursive object merge; anything else in `over` replaces `base`.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
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

/// `--seed`, then `TROCH_SEED`, then the config.
pub fn resolve_seed(flag: Option<u64>, config: u64) -> Result<(u64, &'static str), CliError> {
    if let Some(s) = flag {
        return Ok((s, "flag"));
    }
    match std::env::var("TROCH_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(|v| (v, "TROCH_SEED"))
            .map_err(|_| CliError::Invalid(format!("TROCH_SEED must be an unsigned integer, got {s:?}"))),
        Err(_) => Ok((config, "config")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for p in [Preset::Desk, Preset::Full] {
            let cfg = PipelineConfig::preset(p);
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn file_overrides_nested_keys_only() {
        let f = file(r#"{"training": {"iterations": 7}, "seed": 3}"#);
        let cfg = PipelineConfig::load(Some(f.path()), None).unwrap();
        assert_eq!(cfg.training.iterations, 7);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.training.learning_rate, TrainConfig::desk().learning_rate);
    }

    #[test]
    fn preset_key_in_file_and_flag_precedence() {
        let f = file(r#"{"preset": "full"}"#);
        assert_eq!(
            PipelineConfig::load(Some(f.path()), None).unwrap().network,
            NetConfig::full()
        );
        let cfg = PipelineConfig::load(Some(f.path()), Some(Preset::Desk)).unwrap();
        assert_eq!(cfg.network, NetConfig::desk());
        assert_eq!(cfg.preset, Preset::Desk);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        for text in [
            r#"{"trainig": {}}"#,
            r#"{"training": {"iterations": 5, "warmup": 1}}"#,
            r#"{"training": {"iterations": 0}}"#,
            r#"{"preprocess": {"clip_low_pct": 99, "clip_high_pct": 1}}"#,
            r#"{"resolution": [30, 32, 8]}"#,
            r#"[1, 2]"#,
        ] {
            let f = file(text);
            assert!(
                matches!(
                    PipelineConfig::load(Some(f.path()), None),
                    Err(CliError::Invalid(_)) | Err(CliError::Core(_))
                ),
                "{text}"
            );
        }
    }

    #[test]
    fn merge_replaces_scalars_and_arrays() {
        let mut base = serde_json::json!({"a": {"b": 1, "c": [1, 2]}, "d": 2});
        merge(&mut base, serde_json::json!({"a": {"c": [3]}, "d": null}));
        assert_eq!(base, serde_json::json!({"a": {"b": 1, "c": [3]}, "d": null}));
    }
}
