//! Near-duplicate removal over ORB bit-frequency signatures.

mod orb;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use orb::{brief_pattern, describe, detect, Descriptor, Keypoint, OrbConfig, PATCH_RADIUS};

use crate::imaging::RasterImage;

/// Default similarity above which an image counts as a duplicate.
pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum DedupError {
    #[error("threshold {0} must lie in (0, 1]")]
    BadThreshold(f64),
}

/// Per-bit frequency of an image's descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSignature {
    pub vector: Vec<f64>,
    pub keypoint_count: usize,
}

impl ImageSignature {
    pub fn zero() -> Self {
        ImageSignature {
            vector: vec![0.0; Descriptor::BITS],
            keypoint_count: 0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Descriptors of the strongest keypoints, at most `max_keypoints` of them.
pub fn orb_features(img: &RasterImage, config: &OrbConfig) -> Vec<Descriptor> {
    describe(img, config).into_iter().map(|(_, d)| d).collect()
}

pub fn image_signature(descriptors: &[Descriptor]) -> ImageSignature {
    let n = descriptors.len();
    if n == 0 {
        return ImageSignature::zero();
    }
    let vector = (0..Descriptor::BITS)
        .map(|j| descriptors.iter().filter(|d| d.bit(j)).count() as f64 / n as f64)
        .collect();
    ImageSignature {
        vector,
        keypoint_count: n,
    }
}

/// Cosine of the angle between two signatures; 0 when either is all zeros.
pub fn cosine_similarity(u: &ImageSignature, v: &ImageSignature) -> f64 {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    let dot: f64 = u.vector.iter().zip(&v.vector).map(|(a, b)| a * b).sum();
    (dot / (nu * nv)).clamp(0.0, 1.0)
}

/// Outcome for one input of a dedup scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DedupDecision {
    pub index: usize,
    pub kept: bool,
    /// Highest similarity to any image kept before it; 0 for the first.
    pub max_sim: f64,
    /// Kept image reaching `max_sim`.
    pub nearest: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DedupOutcome {
    /// Kept indices in original order.
    pub kept: Vec<usize>,
    /// One decision per input, in original order.
    pub decisions: Vec<DedupDecision>,
    pub scan_order: Vec<usize>,
}

fn check_threshold(threshold: f64) -> Result<(), DedupError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(DedupError::BadThreshold(threshold))
    }
}

/// How one item compares to an already kept one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub similarity: f64,
    /// Exact duplicate (same signature or same file); dropped at any threshold.
    pub identical: bool,
}

impl From<f64> for Comparison {
    fn from(similarity: f64) -> Self {
        Comparison {
            similarity,
            identical: false,
        }
    }
}

/// Greedy scan in the given order: an item is dropped iff it is identical to
/// some already kept item or its similarity to one is strictly greater than
/// `threshold`.
pub fn greedy_scan<C: Into<Comparison>>(
    order: &[usize],
    threshold: f64,
    mut compare: impl FnMut(usize, usize) -> C,
) -> Result<DedupOutcome, DedupError> {
    check_threshold(threshold)?;
    let n = order.len();
    let mut decisions: Vec<Option<DedupDecision>> = vec![None; n];
    let mut kept_so_far: Vec<usize> = Vec::new();
    for &i in order {
        let mut best = (0.0, None);
        let mut identical = false;
        for &k in &kept_so_far {
            let c: Comparison = compare(i, k).into();
            if c.identical && !identical {
                identical = true;
                best = (c.similarity, Some(k));
            } else if !identical && (best.1.is_none() || c.similarity > best.0) {
                best = (c.similarity, Some(k));
            }
        }
        let kept = !identical && best.0 <= threshold;
        if kept {
            kept_so_far.push(i);
        }
        decisions[i] = Some(DedupDecision {
            index: i,
            kept,
            max_sim: best.0,
            nearest: best.1,
        });
    }
    let decisions: Vec<DedupDecision> = decisions
        .into_iter()
        .map(|d| d.expect("order must be a permutation of 0..n"))
        .collect();
    let kept = decisions.iter().filter(|d| d.kept).map(|d| d.index).collect();
    Ok(DedupOutcome {
        kept,
        decisions,
        scan_order: order.to_vec(),
    })
}

/// Seeded random scan order over `n` items.
pub fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

pub fn dedup_stream(signatures: &[ImageSignature], threshold: f64, seed: u64) -> Result<DedupOutcome, DedupError> {
    let order = shuffled_order(signatures.len(), seed);
    greedy_scan(&order, threshold, |a, b| compare_signatures(&signatures[a], &signatures[b]))
}

/// Cosine similarity plus the exact-duplicate flag (equal, non-zero signatures).
pub fn compare_signatures(u: &ImageSignature, v: &ImageSignature) -> Comparison {
    let similarity = cosine_similarity(u, v);
    Comparison {
        similarity,
        identical: similarity > 0.0 && u.vector == v.vector,
    }
}
