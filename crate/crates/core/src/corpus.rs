//! Directory-level drivers: augment a screenshot corpus, deduplicate a
//! manifest, train, evaluate, detect and localize.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augmentor::{derive_seed, AugmentConfig, AugmentError, AugmentationRecord, Augmentor, BugCategory};
use crate::dedup::{compare_signatures, greedy_scan, image_signature, orb_features, shuffled_order, Comparison, DedupError, ImageSignature, OrbConfig};
use crate::gradcam::{grad_cam, map_to_region, GradCamError};
use crate::hierarchy::{parse_hierarchy, HierarchyError};
use crate::imaging::{load_image, overlay_heatmap, round_half_up, save_png, BBox, ImagingError, RasterImage};
use crate::manifest::{Label, ManifestError, ManifestRow};
use crate::owlnet::{
    build_network, compute_channel_stats, evaluate, fit_to_input, to_tensor, train, Model, MetricsReport,
    NetworkConfig, OwlNetError, Sample, TrainConfig, TrainHistory,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("{path}: {source}")]
    Hierarchy {
        path: String,
        #[source]
        source: HierarchyError,
    },
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Dedup(#[from] DedupError),
    #[error(transparent)]
    Model(#[from] OwlNetError),
    #[error(transparent)]
    GradCam(#[from] GradCamError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Resolve a manifest path: relative paths are taken from `base`.
pub fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePair {
    pub source_id: String,
    pub image: PathBuf,
    pub hierarchy: PathBuf,
}

/// `(png, json)` files sharing a basename; the second list names files
/// without a partner.
pub fn discover_pairs(dir: &Path) -> Result<(Vec<SourcePair>, Vec<String>), CorpusError> {
    let mut pngs = BTreeMap::new();
    let mut jsons = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()).map(str::to_string),
            path.extension().and_then(|s| s.to_str()).map(str::to_ascii_lowercase),
        ) else {
            continue;
        };
        match ext.as_str() {
            "png" => {
                pngs.insert(stem, path);
            }
            "json" => {
                jsons.insert(stem, path);
            }
            _ => {}
        }
    }
    let mut unmatched: Vec<String> = Vec::new();
    let mut pairs = Vec::new();
    for (stem, image) in pngs {
        match jsons.remove(&stem) {
            Some(hierarchy) => pairs.push(SourcePair {
                source_id: stem,
                image,
                hierarchy,
            }),
            None => unmatched.push(image.display().to_string()),
        }
    }
    unmatched.extend(jsons.into_values().map(|p| p.display().to_string()));
    unmatched.sort();
    Ok((pairs, unmatched))
}

/// Share of sources assigned to each synthesizable category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentMix {
    pub component_occlusion: f64,
    pub text_overlap: f64,
    pub missing_image: f64,
    pub null_value: f64,
}

impl Default for AugmentMix {
    fn default() -> Self {
        AugmentMix {
            component_occlusion: 0.1,
            text_overlap: 0.3,
            missing_image: 0.3,
            null_value: 0.3,
        }
    }
}

impl AugmentMix {
    pub fn fractions(&self) -> [(BugCategory, f64); 4] {
        [
            (BugCategory::ComponentOcclusion, self.component_occlusion),
            (BugCategory::TextOverlap, self.text_overlap),
            (BugCategory::MissingImage, self.missing_image),
            (BugCategory::NullValue, self.null_value),
        ]
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let f = self.fractions();
        if f.iter().any(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(CorpusError::Config(format!("mix fractions must lie in [0, 1]: {self:?}")));
        }
        let total: f64 = f.iter().map(|(_, v)| v).sum();
        if total > 1.0 + 1e-9 {
            return Err(CorpusError::Config(format!("mix fractions sum to {total} > 1")));
        }
        Ok(())
    }

    /// Per-category counts for `n` sources, each `round_half_up(frac * n)`,
    /// adjusted so they add up to `round_half_up(total * n)` capped at `n`.
    /// Excess is trimmed starting from the last category; a shortfall goes
    /// to the categories with the largest rounding loss.
    pub fn counts(&self, n: usize) -> [usize; 4] {
        let f = self.fractions();
        let want = |i: usize| f[i].1 * n as f64;
        let mut counts: [usize; 4] = std::array::from_fn(|i| round_half_up(want(i)).max(0) as usize);
        let total = (round_half_up(f.iter().map(|c| c.1).sum::<f64>() * n as f64).max(0) as usize).min(n);
        let mut i = 3;
        while counts.iter().sum::<usize>() > total {
            if counts[i] > 0 {
                counts[i] -= 1;
            }
            i = (i + 3) % 4;
        }
        let mut by_loss = [0, 1, 2, 3];
        by_loss.sort_by(|&a, &b| (want(b) - counts[b] as f64).total_cmp(&(want(a) - counts[a] as f64)));
        for &c in by_loss.iter().cycle().take(total.saturating_sub(counts.iter().sum())) {
            counts[c] += 1;
        }
        counts
    }
}

/// Category per source: seeded shuffle, then contiguous slices of the
/// shuffled order; `None` for sources left unaugmented.
pub fn assign_categories(n: usize, mix: &AugmentMix, seed: u64) -> Vec<Option<BugCategory>> {
    let counts = mix.counts(n);
    let order = shuffled_order(n, seed);
    let mut out = vec![None; n];
    let mut pos = 0;
    for (ci, &(category, _)) in mix.fractions().iter().enumerate() {
        for &src in &order[pos..pos + counts[ci]] {
            out[src] = Some(category);
        }
        pos += counts[ci];
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentRun {
    pub mix: AugmentMix,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for AugmentRun {
    fn default() -> Self {
        AugmentRun {
            mix: AugmentMix::default(),
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipNote {
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentReport {
    /// Buggy rows followed by clean rows, each in source order.
    pub rows: Vec<ManifestRow>,
    pub records: Vec<AugmentationRecord>,
    pub skipped: Vec<SkipNote>,
}

/// Load PNG icons from `dir` (sorted by name).
pub fn load_icons(dir: &Path) -> Result<Vec<RasterImage>, CorpusError> {
    list_images(dir)?.iter().map(|p| Ok(load_image(p)?)).collect()
}

fn augment_one(
    pair: &SourcePair,
    category: BugCategory,
    run: &AugmentRun,
    icons: &[RasterImage],
) -> Result<Option<(RasterImage, AugmentationRecord)>, CorpusError> {
    let img = load_image(&pair.image)?;
    let text = fs::read_to_string(&pair.hierarchy).map_err(io_err(&pair.hierarchy))?;
    let tree = parse_hierarchy(&text).map_err(|source| CorpusError::Hierarchy {
        path: pair.hierarchy.display().to_string(),
        source,
    })?;
    let augmentor = Augmentor::new(run.augment.clone());
    let seed = derive_seed(run.seed, &pair.source_id);
    let start = BugCategory::SYNTHESIZABLE.iter().position(|&c| c == category).unwrap_or(0);
    for k in 0..BugCategory::SYNTHESIZABLE.len() {
        let c = BugCategory::SYNTHESIZABLE[(start + k) % BugCategory::SYNTHESIZABLE.len()];
        match augmentor.augment(&img, &tree, c, icons, seed, &pair.source_id) {
            Ok(done) => return Ok(Some(done)),
            Err(AugmentError::NoCandidate { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(None)
}

/// Augment every `(png, json)` pair in `input` into `out`. Buggy images go
/// to `out/images/<id>_<category>.png`, untouched originals are copied to
/// `out/images/<id>.png`. Manifest paths are relative to `out`.
pub fn augment_corpus(
    input: &Path,
    out: &Path,
    run: &AugmentRun,
    icons: &[RasterImage],
) -> Result<AugmentReport, CorpusError> {
    run.mix.validate()?;
    let (pairs, unmatched) = discover_pairs(input)?;
    let mut report = AugmentReport::default();
    for u in unmatched {
        log::warn!("skipping {u}: no matching png/json partner");
        report.skipped.push(SkipNote {
            source: u,
            reason: "unmatched png/json pair".into(),
        });
    }
    let images_dir = out.join("images");
    fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;
    let assigned = assign_categories(pairs.len(), &run.mix, run.seed);
    let results: Vec<_> = pairs
        .par_iter()
        .zip(assigned.par_iter())
        .map(|(pair, cat)| match cat {
            None => Ok(None),
            Some(c) => augment_one(pair, *c, run, icons),
        })
        .collect();

    let mut clean = Vec::new();
    for ((pair, cat), result) in pairs.iter().zip(&assigned).zip(results) {
        if cat.is_none() {
            continue;
        }
        let outcome = match result {
            Ok(o) => o,
            Err(e) => {
                log::warn!("skipping {}: {e}", pair.source_id);
                report.skipped.push(SkipNote {
                    source: pair.source_id.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let Some((img, record)) = outcome else {
            log::warn!("skipping {}: no view suits any category", pair.source_id);
            report.skipped.push(SkipNote {
                source: pair.source_id.clone(),
                reason: "no candidate view for any category".into(),
            });
            continue;
        };
        let buggy_rel = format!("images/{}_{}.png", pair.source_id, record.category.slug());
        save_png(&img, out.join(&buggy_rel))?;
        let clean_rel = format!("images/{}.png", pair.source_id);
        let clean_path = out.join(&clean_rel);
        fs::copy(&pair.image, &clean_path).map_err(io_err(&clean_path))?;
        report.rows.push(ManifestRow {
            path: buggy_rel,
            source_id: pair.source_id.clone(),
            label: Label::Buggy,
            category: Some(record.category),
            bug_region: Some(record.bug_region),
            seed: Some(record.seed),
        });
        clean.push(ManifestRow {
            path: clean_rel,
            source_id: pair.source_id.clone(),
            label: Label::Clean,
            category: None,
            bug_region: None,
            seed: None,
        });
        report.records.push(record);
    }
    report.rows.extend(clean);
    Ok(report)
}

/// One line of the dedup report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DedupRow {
    pub path: String,
    pub kept: bool,
    pub max_sim: f64,
    pub nearest: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupReport {
    pub kept: Vec<ManifestRow>,
    /// One entry per input row, in input order.
    pub rows: Vec<DedupRow>,
    /// (label, kept, dropped)
    pub balance: Vec<(Label, usize, usize)>,
}

pub fn signatures(paths: &[PathBuf], orb: &OrbConfig) -> Result<Vec<ImageSignature>, CorpusError> {
    paths
        .par_iter()
        .map(|p| Ok(image_signature(&orb_features(&load_image(p)?, orb))))
        .collect()
}

/// Drop near-duplicate rows. Rows are only compared with rows of the same
/// label, so a buggy image never knocks out its own clean original; rows
/// with the same path are exact duplicates.
pub fn dedup_manifest(
    rows: &[ManifestRow],
    base: &Path,
    threshold: f64,
    seed: u64,
    orb: &OrbConfig,
) -> Result<DedupReport, CorpusError> {
    let paths: Vec<PathBuf> = rows.iter().map(|r| resolve(base, &r.path)).collect();
    let sigs = signatures(&paths, orb)?;
    let order = shuffled_order(rows.len(), seed);
    let outcome = greedy_scan(&order, threshold, |a, b| {
        if rows[a].label != rows[b].label {
            Comparison {
                similarity: 0.0,
                identical: false,
            }
        } else if paths[a] == paths[b] {
            Comparison {
                similarity: 1.0,
                identical: true,
            }
        } else {
            compare_signatures(&sigs[a], &sigs[b])
        }
    })?;
    let report_rows: Vec<DedupRow> = outcome
        .decisions
        .iter()
        .map(|d| DedupRow {
            path: rows[d.index].path.clone(),
            kept: d.kept,
            max_sim: d.max_sim,
            nearest: d.nearest.map(|n| rows[n].path.clone()),
        })
        .collect();
    let balance = [Label::Buggy, Label::Clean]
        .into_iter()
        .map(|l| {
            let of = |kept: bool| {
                outcome
                    .decisions
                    .iter()
                    .filter(|d| rows[d.index].label == l && d.kept == kept)
                    .count()
            };
            (l, of(true), of(false))
        })
        .collect();
    Ok(DedupReport {
        kept: outcome.kept.iter().map(|&i| rows[i].clone()).collect(),
        rows: report_rows,
        balance,
    })
}

/// Load manifest images, fitted to the network input.
pub fn load_fitted(rows: &[ManifestRow], base: &Path, config: &NetworkConfig) -> Result<Vec<RasterImage>, CorpusError> {
    rows.par_iter()
        .map(|r| Ok(fit_to_input(&load_image(resolve(base, &r.path))?, config)?))
        .collect()
}

pub fn samples_from(rows: &[ManifestRow], fitted: &[RasterImage], model: &Model) -> Vec<Sample> {
    rows.iter()
        .zip(fitted)
        .map(|(r, img)| Sample {
            input: to_tensor(img, &model.stats),
            label: r.label,
            category: r.category,
            source_id: r.source_id.clone(),
        })
        .collect()
}

/// Build a network, freeze channel statistics of the training images, and
/// train. The returned model carries the best epoch and its validation
/// metrics.
pub fn train_model(
    train_rows: &[ManifestRow],
    train_base: &Path,
    val_rows: &[ManifestRow],
    val_base: &Path,
    config: &NetworkConfig,
    hyper: &TrainConfig,
) -> Result<(Model, TrainHistory), CorpusError> {
    if train_rows.is_empty() {
        return Err(OwlNetError::EmptyDataset("training manifest".into()).into());
    }
    crate::owlnet::check_app_split(
        train_rows.iter().map(|r| r.source_id.as_str()),
        val_rows.iter().map(|r| r.source_id.as_str()),
    )?;
    let train_imgs = load_fitted(train_rows, train_base, config)?;
    let val_imgs = load_fitted(val_rows, val_base, config)?;
    let stats = compute_channel_stats(&train_imgs);
    let mut model = Model::new(build_network(config, hyper.seed)?, stats);
    let train_set = samples_from(train_rows, &train_imgs, &model);
    let val_set = samples_from(val_rows, &val_imgs, &model);
    let history = train(&mut model.network, &train_set, &val_set, hyper)?;
    model.epoch = history.best_epoch;
    if !val_set.is_empty() {
        let report = crate::owlnet::evaluate_samples(&model.network, &val_set, hyper.batch_size)?;
        model.metrics = serde_json::to_value(&report).unwrap_or_default();
    }
    Ok((model, history))
}

pub fn evaluate_manifest(model: &Model, rows: &[ManifestRow], base: &Path) -> Result<MetricsReport, CorpusError> {
    Ok(evaluate(model, rows, base)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectRow {
    pub path: String,
    pub label: Label,
    pub p_buggy: f64,
}

/// Classify every image in `dir`, in name order.
pub fn detect_dir(model: &Model, dir: &Path) -> Result<Vec<DetectRow>, CorpusError> {
    let paths = list_images(dir)?;
    let imgs = paths
        .par_iter()
        .map(|p| Ok(load_image(p)?))
        .collect::<Result<Vec<_>, CorpusError>>()?;
    let mut out = Vec::with_capacity(paths.len());
    for (chunk_paths, chunk) in paths.chunks(16).zip(imgs.chunks(16)) {
        for (p, d) in chunk_paths.iter().zip(model.classify_batch(chunk)?) {
            out.push(DetectRow {
                path: p.display().to_string(),
                label: d.label,
                p_buggy: d.p_buggy,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizeRow {
    pub path: String,
    pub p_buggy: f64,
    pub region: Option<BBox>,
    pub argmax: Option<[usize; 2]>,
    pub heatmap: String,
}

/// Grad-CAM for the buggy class on every image in `dir`; overlays go to
/// `out/<stem>_cam.png`.
pub fn localize_dir(model: &Model, dir: &Path, out: &Path, alpha: f32, frac: f32) -> Result<Vec<LocalizeRow>, CorpusError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let paths = list_images(dir)?;
    paths
        .par_iter()
        .map(|p| {
            let img = load_image(p)?;
            let det = model.classify(&img)?;
            let map = grad_cam(model, &img, Label::Buggy)?;
            let region = match map_to_region(&map, frac) {
                Ok(r) => Some(r),
                Err(GradCamError::ZeroMap) => None,
                Err(e) => return Err(e.into()),
            };
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let heat = out.join(format!("{stem}_cam.png"));
            save_png(&overlay_heatmap(&img, &map, alpha)?, &heat)?;
            Ok(LocalizeRow {
                path: p.display().to_string(),
                p_buggy: det.p_buggy,
                region,
                argmax: map.argmax().map(|(x, y)| [x, y]),
                heatmap: heat.display().to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn counts_stay_near_the_mix(w in prop::array::uniform4(0u32..100), n in 0usize..200) {
            let sum: u32 = w.iter().sum::<u32>().max(100);
            let f = w.map(|x| x as f64 / sum as f64);
            let mix = AugmentMix {
                component_occlusion: f[0],
                text_overlap: f[1],
                missing_image: f[2],
                null_value: f[3],
            };
            let c = mix.counts(n);
            let total = round_half_up(f.iter().sum::<f64>() * n as f64) as usize;
            prop_assert_eq!(c.iter().sum::<usize>(), total.min(n));
            for i in 0..4 {
                prop_assert!((c[i] as f64 - f[i] * n as f64).abs() < 2.0, "{:?} {}", c, n);
            }
        }
    }

    #[test]
    fn default_mix_on_ten_sources() {
        let mix = AugmentMix::default();
        assert_eq!(mix.counts(10), [1, 3, 3, 3]);
        let a = assign_categories(10, &mix, 4);
        let count = |c| a.iter().filter(|&&x| x == Some(c)).count();
        assert_eq!(count(BugCategory::ComponentOcclusion), 1);
        assert_eq!(count(BugCategory::NullValue), 3);
        assert_eq!(a.iter().filter(|x| x.is_none()).count(), 0);
        assert_eq!(a, assign_categories(10, &mix, 4));
    }

    #[test]
    fn rounding_overshoot_is_trimmed() {
        let mix = AugmentMix::default();
        // 0.5, 1.5, 1.5, 1.5 round to 1, 2, 2, 2 = 7 > 5
        let c = mix.counts(5);
        assert_eq!(c.iter().sum::<usize>(), 5);
        assert_eq!(c, [1, 2, 1, 1]);
        assert_eq!(mix.counts(0), [0; 4]);
    }

    #[test]
    fn rounding_shortfall_is_topped_up() {
        let mix = AugmentMix::default();
        // 0.4, 1.2, 1.2, 1.2 round to 0, 1, 1, 1 = 3 < 4
        assert_eq!(mix.counts(4), [1, 1, 1, 1]);
        // 0.8, 2.4, 2.4, 2.4 round to 1, 2, 2, 2 = 7 < 8; ties go to the first
        assert_eq!(mix.counts(8), [1, 3, 2, 2]);
        let half = AugmentMix {
            component_occlusion: 0.0,
            text_overlap: 0.5,
            missing_image: 0.0,
            null_value: 0.0,
        };
        assert_eq!(half.counts(7), [0, 4, 0, 0]);
    }

    #[test]
    fn bad_mixes_rejected() {
        let mix = AugmentMix {
            null_value: 0.5,
            ..AugmentMix::default()
        };
        assert!(mix.validate().is_err());
        let neg = AugmentMix {
            text_overlap: -0.1,
            ..AugmentMix::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn resolve_relative_and_absolute() {
        assert_eq!(resolve(Path::new("/a"), "b/c.png"), PathBuf::from("/a/b/c.png"));
        assert_eq!(resolve(Path::new("/a"), "/x.png"), PathBuf::from("/x.png"));
    }
}
