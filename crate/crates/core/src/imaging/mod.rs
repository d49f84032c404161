//! Raster screenshots and the drawing primitives used by augmentation,
//! preprocessing and heatmap rendering.
//!
//! Every operation that produces pixel values rounds half-up.

pub mod font;
mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradcam::LocalizationMap;

pub use io::{decode_image, encode_png, load_image, save_png};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cannot draw empty text")]
    EmptyText,
    #[error("cell height {0} is below the 7 px glyph minimum")]
    CellTooSmall(u32),
    #[error("drawing at ({x}, {y}) falls entirely outside the image")]
    OffCanvas { x: i32, y: i32 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Codec {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// Round half-up and saturate into a channel value.
pub(crate) fn to_channel(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Round half-up to the nearest integer.
pub fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Color {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Color {
    pub const BLACK: Color = Color::new(0, 0, 0);
    pub const WHITE: Color = Color::new(255, 255, 255);
    pub const RED: Color = Color::new(255, 0, 0);
    pub const BLUE: Color = Color::new(0, 0, 255);

    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Color { r, g, b }
    }

    /// `0xRRGGBB`, used for deterministic tie-breaking.
    pub fn packed(self) -> u32 {
        (self.r as u32) << 16 | (self.g as u32) << 8 | self.b as u32
    }

    pub fn luminance(self) -> f64 {
        0.299 * self.r as f64 + 0.587 * self.g as f64 + 0.114 * self.b as f64
    }

    /// Black on light backgrounds, white on dark ones.
    pub fn contrasting_text(self) -> Color {
        if self.luminance() >= 128.0 {
            Color::BLACK
        } else {
            Color::WHITE
        }
    }
}

/// Axis-aligned box in pixel coordinates, origin top-left, `x2`/`y2` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i32; 4]", into = "[i32; 4]")]
pub struct BBox {
    pub x1: i32,
    pub y1: i32,
    pub x2: i32,
    pub y2: i32,
}

impl BBox {
    pub fn new(x1: i32, y1: i32, x2: i32, y2: i32) -> Result<Self> {
        if x1 < 0 || y1 < 0 || x1 >= x2 || y1 >= y2 {
            return Err(ImagingError::InvalidArgument(format!(
                "degenerate box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> i32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> i32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> i64 {
        self.width() as i64 * self.height() as i64
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x1 >= self.x1 && other.y1 >= self.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    /// Non-empty intersection of two boxes. Accepts raw coordinates so callers
    /// can clip rectangles that hang off the canvas.
    pub fn clip(x1: i64, y1: i64, x2: i64, y2: i64, to: &BBox) -> Option<BBox> {
        let cx1 = x1.max(to.x1 as i64);
        let cy1 = y1.max(to.y1 as i64);
        let cx2 = x2.min(to.x2 as i64);
        let cy2 = y2.min(to.y2 as i64);
        (cx1 < cx2 && cy1 < cy2).then(|| BBox {
            x1: cx1 as i32,
            y1: cy1 as i32,
            x2: cx2 as i32,
            y2: cy2 as i32,
        })
    }

    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        BBox::clip(
            self.x1 as i64,
            self.y1 as i64,
            self.x2 as i64,
            self.y2 as i64,
            other,
        )
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }
}

impl TryFrom<[i32; 4]> for BBox {
    type Error = ImagingError;

    fn try_from(v: [i32; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [i32; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// RGB screenshot, row-major, three bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, fill: Color) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let data = [fill.r, fill.g, fill.b].repeat(width as usize * height as usize);
        Ok(RasterImage {
            width,
            height,
            data,
        })
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width as usize * height as usize * 3 {
            return Err(ImagingError::InvalidArgument(format!(
                "{} bytes do not describe a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(RasterImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> Color) -> Result<Self> {
        let mut img = RasterImage::new(width, height, Color::BLACK)?;
        for y in 0..height {
            for x in 0..width {
                img.put(x, y, f(x, y));
            }
        }
        Ok(img)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    /// The full-canvas box.
    pub fn bounds(&self) -> BBox {
        BBox {
            x1: 0,
            y1: 0,
            x2: self.width as i32,
            y2: self.height as i32,
        }
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    /// Panics when (x, y) lies outside the image.
    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> Color {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        let o = self.offset(x, y);
        Color::new(self.data[o], self.data[o + 1], self.data[o + 2])
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, c: Color) {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        let o = self.offset(x, y);
        self.data[o] = c.r;
        self.data[o + 1] = c.g;
        self.data[o + 2] = c.b;
    }

    /// Luma plane with 0.299/0.587/0.114 weights, rounded half-up.
    pub fn to_gray(&self) -> Vec<u8> {
        self.data
            .chunks_exact(3)
            .map(|p| to_channel(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
            .collect()
    }

    /// Fill `bbox` clipped to the canvas. Returns the clipped box, or `None`
    /// when nothing was touched.
    pub fn fill_rect_mut(&mut self, bbox: BBox, color: Color) -> Option<BBox> {
        let clipped = bbox.intersect(&self.bounds())?;
        for y in clipped.y1..clipped.y2 {
            for x in clipped.x1..clipped.x2 {
                self.put(x as u32, y as u32, color);
            }
        }
        Some(clipped)
    }

    /// Copy `patch` with its top-left at `origin`, dropping whatever hangs off
    /// the canvas. Returns the destination box actually written.
    pub fn paste_mut(&mut self, patch: &RasterImage, origin: (i32, i32)) -> Option<BBox> {
        let (ox, oy) = (origin.0 as i64, origin.1 as i64);
        let dest = BBox::clip(
            ox,
            oy,
            ox + patch.width as i64,
            oy + patch.height as i64,
            &self.bounds(),
        )?;
        let row_bytes = dest.width() as usize * 3;
        for y in dest.y1..dest.y2 {
            let sy = (y as i64 - oy) as u32;
            let sx = (dest.x1 as i64 - ox) as u32;
            let src = patch.offset(sx, sy);
            let dst = self.offset(dest.x1 as u32, y as u32);
            self.data[dst..dst + row_bytes].copy_from_slice(&patch.data[src..src + row_bytes]);
        }
        Some(dest)
    }

    /// Render `text` with the embedded font, clipped to `clip` (and the canvas).
    ///
    /// Glyphs are stretched vertically to exactly `cell_h` rows and scaled
    /// horizontally by `floor(cell_h / 7)`. Returns the layout box intersected
    /// with the clip region.
    pub fn draw_text_mut(
        &mut self,
        origin: (i32, i32),
        text: &str,
        color: Color,
        cell_h: u32,
        clip: Option<BBox>,
    ) -> Result<BBox> {
        if text.is_empty() {
            return Err(ImagingError::EmptyText);
        }
        if cell_h < font::GLYPH_H {
            return Err(ImagingError::CellTooSmall(cell_h));
        }
        let chars: Vec<char> = text.chars().collect();
        let scale = font::horizontal_scale(cell_h) as i64;
        let (ox, oy) = (origin.0 as i64, origin.1 as i64);
        let layout_w = font::text_width(chars.len(), cell_h) as i64;
        let region = match clip {
            Some(c) => c.intersect(&self.bounds()),
            None => Some(self.bounds()),
        };
        let drawn = region
            .and_then(|r| BBox::clip(ox, oy, ox + layout_w, oy + cell_h as i64, &r))
            .ok_or(ImagingError::OffCanvas {
                x: origin.0,
                y: origin.1,
            })?;
        let advance = (font::GLYPH_W + font::GLYPH_SPACING) as i64 * scale;
        for y in drawn.y1..drawn.y2 {
            let row = ((y as i64 - oy) * font::GLYPH_H as i64 / cell_h as i64) as u32;
            for x in drawn.x1..drawn.x2 {
                let dx = x as i64 - ox;
                let ch = chars[(dx / advance) as usize];
                let col = ((dx % advance) / scale) as u32;
                if font::is_set(ch, col, row) {
                    self.put(x as u32, y as u32, color);
                }
            }
        }
        Ok(drawn)
    }
}

/// Outcome of a fill whose box may miss the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillStatus {
    Filled(BBox),
    OutsideImage,
}

/// Bilinear resample (pixel-centre aligned) to exactly `target_h` x `target_w`.
/// Aspect ratio is not preserved.
pub fn resize_normalize(img: &RasterImage, target_h: u32, target_w: u32) -> Result<RasterImage> {
    if target_h == 0 || target_w == 0 {
        return Err(ImagingError::InvalidArgument(format!(
            "resize target must be positive, got {target_h}x{target_w}"
        )));
    }
    if img.width == target_w && img.height == target_h {
        return Ok(img.clone());
    }
    let xs = sample_positions(img.width, target_w);
    let ys = sample_positions(img.height, target_h);
    let mut out = Vec::with_capacity(target_w as usize * target_h as usize * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..3 {
                let p = |x: usize, y: usize| img.data[(y * img.width as usize + x) * 3 + ch] as f64;
                let top = (1.0 - fx) * p(x0, y0) + fx * p(x1, y0);
                let bottom = (1.0 - fx) * p(x0, y1) + fx * p(x1, y1);
                out.push(to_channel((1.0 - fy) * top + fy * bottom));
            }
        }
    }
    RasterImage::from_raw(target_w, target_h, out)
}

/// Source taps and weights for each destination coordinate along one axis.
pub(crate) fn sample_positions(src: u32, dst: u32) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    let last = (src - 1) as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor();
            let i0 = lo as usize;
            let i1 = (i0 + 1).min(src as usize - 1);
            (i0, i1, s - lo)
        })
        .collect()
}

/// Bilinear resample of a single-channel real grid, same geometry as
/// [`resize_normalize`] but without rounding.
pub fn resample_grid(values: &[f32], h: usize, w: usize, target_h: usize, target_w: usize) -> Vec<f32> {
    assert_eq!(values.len(), h * w, "grid size mismatch");
    let xs = sample_positions(w as u32, target_w as u32);
    let ys = sample_positions(h as u32, target_h as u32);
    let mut out = Vec::with_capacity(target_h * target_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |x: usize, y: usize| values[y * w + x] as f64;
            let top = (1.0 - fx) * p(x0, y0) + fx * p(x1, y0);
            let bottom = (1.0 - fx) * p(x0, y1) + fx * p(x1, y1);
            out.push(((1.0 - fy) * top + fy * bottom) as f32);
        }
    }
    out
}

/// Rotate landscape images 90° clockwise; portrait and square images pass through.
pub fn rotate_to_portrait(img: &RasterImage) -> RasterImage {
    if img.width <= img.height {
        return img.clone();
    }
    let (w, h) = (img.width, img.height);
    let mut out = RasterImage {
        width: h,
        height: w,
        data: vec![0; img.data.len()],
    };
    for y in 0..h {
        for x in 0..w {
            out.put(h - 1 - y, x, img.pixel(x, y));
        }
    }
    out
}

pub fn fill_rect(img: &RasterImage, bbox: BBox, color: Color) -> (RasterImage, FillStatus) {
    let mut out = img.clone();
    match out.fill_rect_mut(bbox, color) {
        Some(b) => (out, FillStatus::Filled(b)),
        None => {
            log::warn!("fill box {bbox:?} lies outside the {}x{} image", img.width, img.height);
            (out, FillStatus::OutsideImage)
        }
    }
}

pub fn draw_text(
    img: &RasterImage,
    origin: (i32, i32),
    text: &str,
    color: Color,
    cell_h: u32,
) -> Result<(RasterImage, BBox)> {
    let mut out = img.clone();
    let bbox = out.draw_text_mut(origin, text, color, cell_h, None)?;
    Ok((out, bbox))
}

pub fn paste(img: &RasterImage, patch: &RasterImage, origin: (i32, i32)) -> RasterImage {
    let mut out = img.clone();
    out.paste_mut(patch, origin);
    out
}

/// Heat ramp from blue (m = 0) to red (m = 1), linear through purple.
pub fn heat_color(m: f32) -> Color {
    let m = m.clamp(0.0, 1.0) as f64;
    Color::new(to_channel(255.0 * m), 0, to_channel(255.0 * (1.0 - m)))
}

/// Blend `map` over `img`: `(1 - alpha*m) * pixel + alpha*m * heat(m)`.
pub fn overlay_heatmap(img: &RasterImage, map: &LocalizationMap, alpha: f32) -> Result<RasterImage> {
    if map.width() != img.width as usize || map.height() != img.height as usize {
        return Err(ImagingError::InvalidArgument(format!(
            "map is {}x{} but image is {}x{}",
            map.width(),
            map.height(),
            img.width,
            img.height
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ImagingError::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut out = img.clone();
    for (i, &m) in map.values().iter().enumerate() {
        let weight = (alpha * m.clamp(0.0, 1.0)) as f64;
        if weight == 0.0 {
            continue;
        }
        let heat = heat_color(m);
        let o = i * 3;
        for (ch, h) in [heat.r, heat.g, heat.b].into_iter().enumerate() {
            let v = (1.0 - weight) * img.data[o + ch] as f64 + weight * h as f64;
            out.data[o + ch] = to_channel(v);
        }
    }
    Ok(out)
}
