//! Heuristic injection of UI display issues into clean screenshots.
//!
//! A text or image view is picked from the view hierarchy and rewritten so
//! the screenshot shows one of four issue categories. The pixels that change
//! are reported as the ground-truth bug region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hierarchy::{collect_views, sample_background_color, HierarchyError, ViewKind, ViewNode, ViewTree};
use crate::imaging::{resize_normalize, round_half_up, BBox, Color, ImagingError, RasterImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugCategory {
    ComponentOcclusion,
    TextOverlap,
    MissingImage,
    NullValue,
    /// Label for externally collected images only; never synthesized.
    BlurredScreen,
}

impl BugCategory {
    /// The categories [`Augmentor::augment`] can produce.
    pub const SYNTHESIZABLE: [BugCategory; 4] = [
        BugCategory::ComponentOcclusion,
        BugCategory::TextOverlap,
        BugCategory::MissingImage,
        BugCategory::NullValue,
    ];

    pub const ALL: [BugCategory; 5] = [
        BugCategory::ComponentOcclusion,
        BugCategory::TextOverlap,
        BugCategory::MissingImage,
        BugCategory::NullValue,
        BugCategory::BlurredScreen,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            BugCategory::ComponentOcclusion => "component_occlusion",
            BugCategory::TextOverlap => "text_overlap",
            BugCategory::MissingImage => "missing_image",
            BugCategory::NullValue => "null_value",
            BugCategory::BlurredScreen => "blurred_screen",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            BugCategory::ComponentOcclusion => "Component occlusion",
            BugCategory::TextOverlap => "Text overlap",
            BugCategory::MissingImage => "Missing image",
            BugCategory::NullValue => "NULL value",
            BugCategory::BlurredScreen => "Blurred screen",
        }
    }

    fn target_kind(self) -> ViewKind {
        match self {
            BugCategory::MissingImage => ViewKind::ImageView,
            _ => ViewKind::TextView,
        }
    }
}

impl std::str::FromStr for BugCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BugCategory::ALL
            .into_iter()
            .find(|c| c.slug() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("no usable {kind:?} for {category:?}")]
    NoCandidate { category: BugCategory, kind: ViewKind },
    #[error("category {0:?} cannot be synthesized")]
    UnsupportedCategory(BugCategory),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// Source of `uniform(lo, hi)` samples.
pub trait UniformSource {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64;
}

/// Seeded generator that remembers every sample it hands out.
#[derive(Debug, Clone)]
pub struct SeededDraws {
    rng: ChaCha8Rng,
    log: Vec<f64>,
}

impl SeededDraws {
    pub fn new(seed: u64) -> Self {
        SeededDraws {
            rng: ChaCha8Rng::seed_from_u64(seed),
            log: Vec::new(),
        }
    }

    pub fn into_log(self) -> Vec<f64> {
        self.log
    }
}

impl UniformSource for SeededDraws {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.rng.random();
        let v = lo + (hi - lo) * u;
        self.log.push(v);
        v
    }
}

/// Plays back a recorded list of samples. Panics once the list runs out.
#[derive(Debug, Clone)]
pub struct ReplayDraws {
    values: Vec<f64>,
    next: usize,
    log: Vec<f64>,
}

impl ReplayDraws {
    pub fn new(values: Vec<f64>) -> Self {
        ReplayDraws {
            values,
            next: 0,
            log: Vec::new(),
        }
    }

    pub fn into_log(self) -> Vec<f64> {
        self.log
    }
}

impl UniformSource for ReplayDraws {
    fn uniform(&mut self, _lo: f64, _hi: f64) -> f64 {
        let v = *self
            .values
            .get(self.next)
            .unwrap_or_else(|| panic!("replay exhausted after {} draws", self.next));
        self.next += 1;
        self.log.push(v);
        v
    }
}

/// Per-screenshot seed derived from the corpus seed and the source id, so a
/// parallel run draws the same numbers as a serial one.
pub fn derive_seed(global_seed: u64, source_id: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(global_seed.to_le_bytes())
        .chain_update(source_id.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub source_id: String,
    pub category: BugCategory,
    /// Ground truth, in output-image coordinates.
    pub bug_region: BBox,
    pub seed: u64,
    /// Bounds of the view that was rewritten.
    pub target_view: BBox,
    /// Every uniform sample consumed, in order.
    pub rand_draws: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Views narrower or shorter than this are never chosen.
    pub min_view_px: u32,
    /// Center the missing-image icon instead of anchoring it at the view center.
    pub center_icon: bool,
    /// Draw the text-overlap copy with `xrand` in `[0, 0.5w)` so it always
    /// overlaps or abuts the source text.
    pub force_overlap: bool,
    /// Smallest `|rand|` accepted for occlusion blocks.
    pub min_occlusion_frac: f64,
    pub max_overlap_attempts: u32,
    /// Redraws allowed when an injection leaves the screenshot unchanged.
    pub max_visible_attempts: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            min_view_px: 12,
            center_icon: false,
            force_overlap: false,
            min_occlusion_frac: 0.1,
            max_overlap_attempts: 8,
            max_visible_attempts: 8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Augmentor {
    pub config: AugmentConfig,
}

impl Augmentor {
    pub fn new(config: AugmentConfig) -> Self {
        Augmentor { config }
    }

    /// Candidate views for `category`, honoring the minimum view size.
    pub fn candidates<'t>(&self, tree: &'t ViewTree, category: BugCategory) -> Vec<&'t ViewNode> {
        let min = self.config.min_view_px as i32;
        collect_views(tree, category.target_kind())
            .into_iter()
            .filter(|v| v.width() >= min && v.height() >= min)
            .collect()
    }

    /// Inject `category` into `scr` using a generator seeded with `seed`.
    ///
    /// `icons` feeds the missing-image category; when empty the embedded
    /// broken-image glyph is used.
    pub fn augment(
        &self,
        scr: &RasterImage,
        tree: &ViewTree,
        category: BugCategory,
        icons: &[RasterImage],
        seed: u64,
        source_id: &str,
    ) -> Result<(RasterImage, AugmentationRecord), AugmentError> {
        let mut draws = SeededDraws::new(seed);
        let (img, mut record) = self.augment_with(scr, tree, category, icons, &mut draws, source_id)?;
        record.seed = seed;
        record.rand_draws = draws.into_log();
        Ok((img, record))
    }

    /// Same as [`Augmentor::augment`] with an explicit sample source (for replay).
    /// The returned record's `seed` is 0 and `rand_draws` is empty; callers
    /// owning the source fill them in.
    pub fn augment_with(
        &self,
        scr: &RasterImage,
        tree: &ViewTree,
        category: BugCategory,
        icons: &[RasterImage],
        draws: &mut impl UniformSource,
        source_id: &str,
    ) -> Result<(RasterImage, AugmentationRecord), AugmentError> {
        if category == BugCategory::BlurredScreen {
            return Err(AugmentError::UnsupportedCategory(category));
        }
        let tree = tree.scaled_to(scr.width(), scr.height());
        let candidates = self.candidates(&tree, category);
        if candidates.is_empty() {
            return Err(AugmentError::NoCandidate {
                category,
                kind: category.target_kind(),
            });
        }
        // A draw can leave the screenshot unchanged (a block painted over
        // pixels already in the background color, text clipped away); such a
        // sample would be a mislabeled clean image, so draw again.
        for _ in 0..self.config.max_visible_attempts.max(1) {
            let pick = draws.uniform(0.0, 1.0);
            let view = candidates[((pick * candidates.len() as f64) as usize).min(candidates.len() - 1)];
            let (img, bug_region) = self.inject(scr, view, category, icons, draws)?;
            if img != *scr {
                return Ok((
                    img,
                    AugmentationRecord {
                        source_id: source_id.to_string(),
                        category,
                        bug_region,
                        seed: 0,
                        target_view: view.bounds,
                        rand_draws: Vec::new(),
                    },
                ));
            }
        }
        Err(AugmentError::NoCandidate {
            category,
            kind: category.target_kind(),
        })
    }

    fn inject(
        &self,
        scr: &RasterImage,
        view: &ViewNode,
        category: BugCategory,
        icons: &[RasterImage],
        draws: &mut impl UniformSource,
    ) -> Result<(RasterImage, BBox), AugmentError> {
        let bg = sample_background_color(scr, &view.bounds)?;
        Ok(match category {
            BugCategory::ComponentOcclusion => {
                occlude_component(scr, view, bg, draws, self.config.min_occlusion_frac)?
            }
            BugCategory::TextOverlap => overlap_text(scr, view, bg, draws, &self.config)?,
            BugCategory::MissingImage => {
                let fallback;
                let icon = if icons.is_empty() {
                    fallback = default_icon();
                    &fallback
                } else {
                    let u = draws.uniform(0.0, 1.0);
                    &icons[((u * icons.len() as f64) as usize).min(icons.len() - 1)]
                };
                missing_image(scr, view, bg, icon, self.config.center_icon)?
            }
            BugCategory::NullValue => null_value(scr, view, bg)?,
            BugCategory::BlurredScreen => return Err(AugmentError::UnsupportedCategory(category)),
        })
    }
}

fn view_region(scr: &RasterImage, view: &ViewNode) -> Result<BBox, AugmentError> {
    view.bounds
        .intersect(&scr.bounds())
        .ok_or(AugmentError::Hierarchy(HierarchyError::OutsideImage(view.bounds)))
}

/// Cover the upper (`rand >= 0`) or lower part of the view with a block of
/// its background color, `round(h * |rand|)` rows tall.
///
/// `rand` is drawn from `uniform(-1, 1)` and redrawn while `|rand| < min_frac`.
pub fn occlude_component(
    scr: &RasterImage,
    view: &ViewNode,
    bg: Color,
    draws: &mut impl UniformSource,
    min_frac: f64,
) -> Result<(RasterImage, BBox), AugmentError> {
    let b = view.bounds;
    let h = b.height();
    let mut rand = draws.uniform(-1.0, 1.0);
    for _ in 0..64 {
        if rand.abs() >= min_frac {
            break;
        }
        rand = draws.uniform(-1.0, 1.0);
    }
    let block_h = (round_half_up(h as f64 * rand.abs()) as i32).clamp(1, h);
    // Lower placement anchors the block's bottom on y2, i.e. y2 + round(h * rand)
    // away from half-way ties.
    let top = if rand >= 0.0 { b.y1 } else { b.y2 - block_h };
    let block = BBox {
        x1: b.x1,
        y1: top,
        x2: b.x2,
        y2: top + block_h,
    };
    let mut out = scr.clone();
    let region = out
        .fill_rect_mut(block, bg)
        .ok_or(AugmentError::Hierarchy(HierarchyError::OutsideImage(block)))?;
    Ok((out, region))
}

/// Redraw the view's text shifted to start at `x2 - xrand`, with
/// `xrand ~ uniform(-w/2, w/2)`, at a glyph height equal to the view height.
pub fn overlap_text(
    scr: &RasterImage,
    view: &ViewNode,
    bg: Color,
    draws: &mut impl UniformSource,
    config: &AugmentConfig,
) -> Result<(RasterImage, BBox), AugmentError> {
    let text = view
        .text
        .as_deref()
        .filter(|t| !t.is_empty())
        .ok_or(AugmentError::NoCandidate {
            category: BugCategory::TextOverlap,
            kind: ViewKind::TextView,
        })?;
    let b = view.bounds;
    let half_w = 0.5 * b.width() as f64;
    let lo = if config.force_overlap { 0.0 } else { -half_w };
    let color = bg.contrasting_text();
    for _ in 0..config.max_overlap_attempts.max(1) {
        let xrand = draws.uniform(lo, half_w);
        let origin = (b.x2 - round_half_up(xrand) as i32, b.y1);
        let mut out = scr.clone();
        match out.draw_text_mut(origin, text, color, b.height() as u32, None) {
            Ok(region) => return Ok((out, region)),
            Err(ImagingError::OffCanvas { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(AugmentError::NoCandidate {
        category: BugCategory::TextOverlap,
        kind: ViewKind::TextView,
    })
}

/// Blank the view with its background and paste an icon scaled to a
/// `min(w, h)/2` square with its top-left at the view center (or centered).
pub fn missing_image(
    scr: &RasterImage,
    view: &ViewNode,
    bg: Color,
    icon: &RasterImage,
    center_icon: bool,
) -> Result<(RasterImage, BBox), AugmentError> {
    let b = view.bounds;
    let region = view_region(scr, view)?;
    let mut out = scr.clone();
    out.fill_rect_mut(b, bg);
    let side = round_half_up(b.width().min(b.height()) as f64 / 2.0) as u32;
    if side >= 1 {
        let scaled = resize_normalize(icon, side, side)?;
        let origin = if center_icon {
            (
                b.x1 + round_half_up((b.width() - side as i32) as f64 / 2.0) as i32,
                b.y1 + round_half_up((b.height() - side as i32) as f64 / 2.0) as i32,
            )
        } else {
            (
                b.x1 + round_half_up(0.5 * b.width() as f64) as i32,
                b.y1 + round_half_up(0.5 * b.height() as f64) as i32,
            )
        };
        paste_within(&mut out, &scaled, origin, &region);
    }
    Ok((out, region))
}

/// Blank the view with its background and write "null" from its top-left corner.
pub fn null_value(scr: &RasterImage, view: &ViewNode, bg: Color) -> Result<(RasterImage, BBox), AugmentError> {
    let b = view.bounds;
    let region = view_region(scr, view)?;
    let mut out = scr.clone();
    out.fill_rect_mut(b, bg);
    out.draw_text_mut((b.x1, b.y1), "null", bg.contrasting_text(), b.height() as u32, Some(region))?;
    Ok((out, region))
}

/// Paste only the part of `patch` that lands inside `clip`.
fn paste_within(dst: &mut RasterImage, patch: &RasterImage, origin: (i32, i32), clip: &BBox) {
    let Some(visible) = BBox::clip(
        origin.0 as i64,
        origin.1 as i64,
        origin.0 as i64 + patch.width() as i64,
        origin.1 as i64 + patch.height() as i64,
        clip,
    ) else {
        return;
    };
    let cropped = RasterImage::from_fn(visible.width() as u32, visible.height() as u32, |x, y| {
        patch.pixel(
            (visible.x1 - origin.0) as u32 + x,
            (visible.y1 - origin.1) as u32 + y,
        )
    })
    .expect("visible box is non-empty");
    dst.paste_mut(&cropped, (visible.x1, visible.y1));
}

/// 24x24 "broken image" placeholder: a framed picture with a torn corner.
pub fn default_icon() -> RasterImage {
    const N: u32 = 24;
    let frame = Color::new(97, 97, 97);
    let paper = Color::new(238, 238, 238);
    let hill = Color::new(120, 144, 156);
    let sun = Color::new(158, 158, 158);
    RasterImage::from_fn(N, N, |x, y| {
        let (xi, yi) = (x as i32, y as i32);
        if x == 0 || y == 0 || x == N - 1 || y == N - 1 {
            return frame;
        }
        // Tear running from the top-right edge towards the middle.
        if (xi - 16 + (yi % 4 - 2).abs()).abs() <= 0 && yi < 12 {
            return paper;
        }
        if xi + yi >= 26 && yi >= 13 && yi < N as i32 - 3 && xi > 2 && xi < N as i32 - 3 {
            return hill;
        }
        if (xi - 7).pow(2) + (yi - 7).pow(2) <= 8 {
            return sun;
        }
        if x >= 3 && y >= 3 && x < N - 3 && y < N - 3 {
            Color::WHITE
        } else {
            paper
        }
    })
    .expect("non-zero size")
}

#[cfg(test)]
mod tests;
