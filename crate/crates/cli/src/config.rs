use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use owleye::augmentor::AugmentConfig;
use owleye::corpus::AugmentMix;
use owleye::dedup::{OrbConfig, DEFAULT_THRESHOLD};
use owleye::owlnet::{ScalePreset, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything a pipeline run can be configured with. Loaded from a JSON
/// document; command-line flags override individual keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub icon_dir: Option<PathBuf>,
    pub mix: AugmentMix,
    pub augment: AugmentConfig,
    pub dedup_threshold: f64,
    pub orb: OrbConfig,
    pub preset: ScalePreset,
    pub train: TrainConfig,
    pub seed: u64,
    pub heatmap_alpha: f32,
    pub region_frac: f32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input_dir: None,
            output_dir: PathBuf::from("owleye-out"),
            icon_dir: None,
            mix: AugmentMix::default(),
            augment: AugmentConfig::default(),
            dedup_threshold: DEFAULT_THRESHOLD,
            orb: OrbConfig::default(),
            preset: ScalePreset::Desk,
            train: TrainConfig::default(),
            seed: 0,
            heatmap_alpha: 0.5,
            region_frac: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            bail!("dedup_threshold {} must lie in (0, 1]", self.dedup_threshold);
        }
        if !(0.0..=1.0).contains(&self.heatmap_alpha) {
            bail!("heatmap_alpha {} must lie in [0, 1]", self.heatmap_alpha);
        }
        if !(self.region_frac > 0.0 && self.region_frac < 1.0) {
            bail!("region_frac {} must lie in (0, 1)", self.region_frac);
        }
        self.train.validate()?;
        let paths: Vec<&Path> = [self.input_dir.as_deref(), Some(self.output_dir.as_path()), self.icon_dir.as_deref()]
            .into_iter()
            .flatten()
            .collect();
        for (i, a) in paths.iter().enumerate() {
            if paths[i + 1..].contains(a) {
                bail!("input, output and icon directories must be distinct ({} repeats)", a.display());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"seed": 9, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.dedup_threshold, 0.8);
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = PipelineConfig {
            dedup_threshold: 0.0,
            ..PipelineConfig::default()
        };
        assert!(c.validate().is_err());
        c.dedup_threshold = 0.8;
        c.input_dir = Some(c.output_dir.clone());
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sede": 1}"#).is_err());
    }
}
