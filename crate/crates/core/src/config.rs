//! The single JSON document driving a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::encoder::{EncoderBackend, EncoderConfig};
use crate::error::{Error, Result};
use crate::inference::InferenceConfig;
use crate::trainer::TrainConfig;
use crate::volume::DatasetManifest;

pub const SCHEMA_VERSION: u32 = 1;

/// Decoder widths. Input channels and class count follow from the encoder and manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderSettings {
    pub block_channels: [usize; 4],
}

impl Default for DecoderSettings {
    fn default() -> Self {
        Self {
            block_channels: DecoderConfig::DEFAULT_BLOCKS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Skip surface distances (they dominate evaluation time on large volumes).
    pub compute_hd95: bool,
    /// Overrides the header spacing, `(D, H, W)` in millimetres.
    pub spacing: Option<[f64; 3]>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            compute_hd95: true,
            spacing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Relative paths resolve against the config file's directory.
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    /// Overrides `train.seed` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub decoder: DecoderSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn rooted(e: Error) -> Error {
    match e {
        Error::Validation { path, message } if !path.starts_with('$') => Error::Validation {
            path: format!("$.{path}"),
            message,
        },
        other => other,
    }
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            manifest: manifest.into(),
            output_dir: output_dir.into(),
            seed: None,
            encoder: EncoderConfig::default(),
            decoder: DecoderSettings::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }

    /// Value checks only; see [`RunConfig::check_paths`] for the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(
                "$.schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        self.encoder.validate().map_err(rooted)?;
        self.train.validate().map_err(rooted)?;
        self.inference.validate().map_err(rooted)?;
        DecoderConfig {
            in_channels: 1,
            block_channels: self.decoder.block_channels,
            num_classes: 2,
        }
        .validate()
        .map_err(rooted)?;
        if let Some(s) = self.metrics.spacing {
            if s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::validation("$.metrics.spacing", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn check_paths(&self) -> Result<()> {
        if !self.manifest.is_file() {
            return Err(Error::validation(
                "$.manifest",
                format!("{} does not exist", self.manifest.display()),
            ));
        }
        if let (EncoderBackend::PretrainedVit, Some(p)) = (self.encoder.backend, &self.encoder.checkpoint_path) {
            if !p.is_file() {
                return Err(Error::validation(
                    "$.encoder.checkpoint_path",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        Ok(())
    }

    fn resolve_against(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.output_dir);
        if let Some(p) = self.encoder.checkpoint_path.as_mut() {
            fix(p);
        }
    }

    /// Parses without touching the filesystem beyond `text`. Unknown keys and type errors
    /// report the JSON path of the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "$".to_string() } else { format!("$.{path}") };
            Error::validation(path, e.inner().to_string())
        })?;
        if let Some(seed) = cfg.seed {
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load_manifest(&self) -> Result<DatasetManifest> {
        DatasetManifest::load(&self.manifest)
    }

    /// Decoder configuration for the manifest's modality and class counts.
    pub fn decoder_config(&self, manifest: &DatasetManifest) -> DecoderConfig {
        DecoderConfig {
            in_channels: self.encoder.embed_dim * manifest.modality_count(),
            block_channels: self.decoder.block_channels,
            num_classes: manifest.num_classes,
        }
    }

    /// Sliding-window size: the configured one, else the training patch, else the manifest's.
    pub fn window(&self, manifest: &DatasetManifest) -> [usize; 3] {
        self.inference
            .window
            .or(self.train.patch_size)
            .unwrap_or(manifest.patch_size)
    }
}

/// Reads, resolves relative paths against the file's directory, and validates.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = RunConfig::from_json(&text)?;
    cfg.resolve_against(path.parent().unwrap_or(Path::new(".")));
    cfg.check_paths()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn validation_path(r: Result<RunConfig>) -> String {
        match r {
            Err(Error::Validation { path, .. }) => path,
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    const MINIMAL: &str = r#"{"schema_version": 1, "manifest": "m.json", "output_dir": "out"}"#;

    #[test]
    fn defaults_are_filled() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.train.momentum, 0.99);
        assert_eq!(cfg.train.weight_decay, 3e-5);
        assert_eq!(cfg.train.init_lr, 1e-2);
        assert_eq!(cfg.train.max_epoch, 1000);
        assert_eq!(cfg.decoder.block_channels, [128, 64, 32, 16]);
        let empty_section = r#"{"schema_version": 1, "manifest": "m.json", "output_dir": "out", "train": {}}"#;
        assert_eq!(RunConfig::from_json(empty_section).unwrap(), cfg);
    }

    #[test]
    fn negative_max_epoch_names_its_path() {
        let text = r#"{"schema_version": 1, "manifest": "m", "output_dir": "o", "train": {"max_epoch": -1}}"#;
        assert_eq!(validation_path(RunConfig::from_json(text)), "$.train.max_epoch");
        let text = r#"{"schema_version": 1, "manifest": "m", "output_dir": "o", "train": {"max_epoch": 0}}"#;
        assert_eq!(validation_path(RunConfig::from_json(text)), "$.train.max_epoch");
    }

    #[test]
    fn unknown_and_missing_keys_are_rejected() {
        let text = r#"{"schema_version": 1, "manifest": "m", "output_dir": "o", "train": {"momentun": 0.9}}"#;
        assert!(validation_path(RunConfig::from_json(text)).starts_with("$.train"));
        let text = r#"{"schema_version": 1, "output_dir": "o"}"#;
        assert!(RunConfig::from_json(text).is_err());
        let text = r#"{"schema_version": 2, "manifest": "m", "output_dir": "o"}"#;
        assert_eq!(validation_path(RunConfig::from_json(text)), "$.schema_version");
    }

    #[test]
    fn roundtrip() {
        let text = r#"{"schema_version": 1, "manifest": "m.json", "output_dir": "out", "seed": 5,
            "train": {"max_epoch": 8, "iters_per_epoch": 25, "normalization": {"kind": "clip_zscore", "p_low": 1.0, "p_high": 99.0}},
            "inference": {"window": [8, 64, 64], "overlap": 0.25}}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.train.seed, 5);
        let again = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn paths_resolve_and_must_exist() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.json");
        std::fs::write(&cfg_path, MINIMAL).unwrap();
        assert_eq!(validation_path(parse_config(&cfg_path)), "$.manifest");
        std::fs::write(dir.path().join("m.json"), "{}").unwrap();
        let cfg = parse_config(&cfg_path).unwrap();
        assert_eq!(cfg.manifest, dir.path().join("m.json"));
        assert_eq!(cfg.output_dir, dir.path().join("out"));
    }

    #[test]
    fn decoder_widths_are_checked() {
        let text = r#"{"schema_version": 1, "manifest": "m", "output_dir": "o", "decoder": {"block_channels": [8, 8, 4, 2]}}"#;
        assert_eq!(validation_path(RunConfig::from_json(text)), "$.decoder.block_channels");
    }
}
