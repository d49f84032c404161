//! The detector network, its training loop, metrics and checkpoints.

mod checkpoint;
mod config;
mod metrics;
mod network;
mod preprocess;
mod train;

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use config::{NetworkConfig, ScalePreset, ShapeStep, CAM_MIN_ROWS, CLASSES, CONV_LAYERS, FC_LAYERS, POOL_LAYERS};
pub use metrics::{round3, CategoryMetrics, MetricsReport, Outcome};
pub use network::{build_network, BackwardResult, Network, Tape};
pub use preprocess::{compute_channel_stats, fit_to_input, preprocess, to_tensor, ChannelStats};
pub use train::{
    check_app_split, evaluate_samples, label_for, predict_buggy, train, EpochRecord, Sample, TrainConfig,
    TrainHistory,
};

use crate::imaging::{load_image, ImagingError, RasterImage};
use crate::manifest::{Label, ManifestError, ManifestRow};
use crate::nn::{NnError, Tensor};

/// p(buggy) at or above this is reported as buggy.
pub const DETECTION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum OwlNetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{0} is empty")]
    EmptyDataset(String),
    #[error("app {0} appears in both the training and the validation split")]
    AppOverlap(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {norms}")]
    NonFinite { epoch: usize, batch: usize, norms: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub label: Label,
    pub p_buggy: f64,
}

/// A network together with the preprocessing constants it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network<f32>,
    pub stats: ChannelStats,
    /// Epoch the parameters come from.
    pub epoch: usize,
    /// Free-form evaluation summary stored with the checkpoint.
    pub metrics: serde_json::Value,
}

impl Model {
    pub fn new(network: Network<f32>, stats: ChannelStats) -> Self {
        Model {
            network,
            stats,
            epoch: 0,
            metrics: serde_json::Value::Null,
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        self.network.config()
    }

    pub fn preprocess(&self, img: &RasterImage) -> Result<Tensor<f32>, OwlNetError> {
        preprocess(img, self.config(), &self.stats)
    }

    pub fn classify(&self, img: &RasterImage) -> Result<Detection, OwlNetError> {
        Ok(self.classify_batch(std::slice::from_ref(img))?[0])
    }

    pub fn classify_batch(&self, imgs: &[RasterImage]) -> Result<Vec<Detection>, OwlNetError> {
        if imgs.is_empty() {
            return Ok(Vec::new());
        }
        let inputs = imgs.iter().map(|i| self.preprocess(i)).collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
        let probs = self.network.predict(&Tensor::stack(&refs)?)?;
        Ok(probs
            .data()
            .chunks_exact(2)
            .map(|p| {
                let p_buggy = p[Label::Buggy.class_index()];
                Detection {
                    label: label_for(p_buggy),
                    p_buggy: p_buggy as f64,
                }
            })
            .collect())
    }

    pub fn classify_path(&self, path: impl AsRef<Path>) -> Result<Detection, OwlNetError> {
        self.classify(&load_image(path)?)
    }
}

/// Score every manifest row (paths resolved against `base`).
pub fn evaluate(model: &Model, rows: &[ManifestRow], base: &Path) -> Result<MetricsReport, OwlNetError> {
    let mut outcomes = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(16) {
        let imgs = chunk
            .iter()
            .map(|r| load_image(base.join(&r.path)))
            .collect::<Result<Vec<_>, _>>()?;
        let dets = model.classify_batch(&imgs)?;
        outcomes.extend(chunk.iter().zip(dets).map(|(r, d)| Outcome {
            truth: r.label,
            category: r.category,
            predicted: d.label,
        }));
    }
    Ok(MetricsReport::from_outcomes(&outcomes))
}
