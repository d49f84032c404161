//! Single-scale ORB: FAST-9 corners, intensity-centroid orientation and
//! steered BRIEF descriptors over a box-smoothed luma plane.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::imaging::RasterImage;

/// Radius of the orientation patch and of the sampling disc.
pub const PATCH_RADIUS: i32 = 15;
const SMOOTH_HALF: i32 = 2;
const MARGIN: i32 = PATCH_RADIUS + SMOOTH_HALF + 1;
const PATTERN_SEED: u64 = 0x6f72_6221;

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbConfig {
    /// Intensity difference a circle pixel must exceed.
    pub fast_threshold: u8,
    pub max_keypoints: usize,
}

impl Default for OrbConfig {
    fn default() -> Self {
        OrbConfig {
            fast_threshold: 20,
            max_keypoints: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: i32,
    pub y: i32,
    pub score: u32,
    /// Orientation in radians.
    pub angle: f64,
}

/// 256-bit binary descriptor; bit `j` lives in word `j / 64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    pub const BITS: usize = 256;

    pub fn bit(&self, j: usize) -> bool {
        self.0[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn set(&mut self, j: usize) {
        self.0[j / 64] |= 1 << (j % 64);
    }

    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

struct Gray {
    w: i32,
    h: i32,
    px: Vec<u8>,
}

impl Gray {
    fn at(&self, x: i32, y: i32) -> i32 {
        self.px[(y * self.w + x) as usize] as i32
    }
}

/// Summed-area table with a zero top row and left column.
struct Integral {
    stride: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(g: &Gray) -> Self {
        let stride = g.w as usize + 1;
        let mut sums = vec![0u32; stride * (g.h as usize + 1)];
        for y in 0..g.h as usize {
            let mut row = 0u32;
            for x in 0..g.w as usize {
                row += g.px[y * g.w as usize + x] as u32;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Integral { stride, sums }
    }

    /// Sum of the 5x5 box centred on (x, y); caller keeps it in bounds.
    fn box5(&self, x: i32, y: i32) -> u32 {
        let (x0, y0) = ((x - SMOOTH_HALF) as usize, (y - SMOOTH_HALF) as usize);
        let (x1, y1) = (x0 + 5, y0 + 5);
        let s = &self.sums;
        s[y1 * self.stride + x1] + s[y0 * self.stride + x0] - s[y0 * self.stride + x1] - s[y1 * self.stride + x0]
    }
}

/// Fixed test pattern: 256 point pairs, Gaussian around the centre with
/// sigma = 31/5, resampled until both points fall inside the disc.
pub fn brief_pattern() -> &'static [((i32, i32), (i32, i32)); 256] {
    static PATTERN: OnceLock<[((i32, i32), (i32, i32)); 256]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(PATTERN_SEED);
        let normal = Normal::new(0.0, 31.0 / 5.0).expect("positive sigma");
        let r2 = PATCH_RADIUS * PATCH_RADIUS;
        let mut point = || loop {
            let x = (normal.sample(&mut rng) as f64).round() as i32;
            let y = (normal.sample(&mut rng) as f64).round() as i32;
            if x * x + y * y <= r2 {
                return (x, y);
            }
        };
        let mut out = [((0, 0), (0, 0)); 256];
        for pair in out.iter_mut() {
            loop {
                let (a, b) = (point(), point());
                if a != b {
                    *pair = (a, b);
                    break;
                }
            }
        }
        out
    })
}

fn fast_score(g: &Gray, x: i32, y: i32, t: i32) -> Option<u32> {
    let p = g.at(x, y);
    let ring: [i32; 16] = std::array::from_fn(|i| g.at(x + CIRCLE[i].0, y + CIRCLE[i].1));
    for sign in [1, -1] {
        let mut run = 0;
        for i in 0..16 + 8 {
            if sign * (ring[i % 16] - p) > t {
                run += 1;
                if run >= 9 {
                    let score = ring.iter().map(|&v| (sign * (v - p) - t).max(0) as u32).sum();
                    return Some(score);
                }
            } else {
                run = 0;
            }
        }
    }
    None
}

/// FAST-9 corners with 3x3 non-maximum suppression, strongest first.
pub fn detect(img: &RasterImage, config: &OrbConfig) -> Vec<Keypoint> {
    let g = gray(img);
    detect_gray(&g, config)
}

fn gray(img: &RasterImage) -> Gray {
    Gray {
        w: img.width() as i32,
        h: img.height() as i32,
        px: img.to_gray(),
    }
}

fn detect_gray(g: &Gray, config: &OrbConfig) -> Vec<Keypoint> {
    if g.w <= 2 * MARGIN || g.h <= 2 * MARGIN {
        return Vec::new();
    }
    let t = config.fast_threshold as i32;
    let idx = |x: i32, y: i32| (y * g.w + x) as usize;
    let mut scores = vec![0u32; g.px.len()];
    for y in MARGIN..g.h - MARGIN {
        for x in MARGIN..g.w - MARGIN {
            if let Some(s) = fast_score(g, x, y, t) {
                scores[idx(x, y)] = s;
            }
        }
    }
    let mut kps = Vec::new();
    for y in MARGIN..g.h - MARGIN {
        for x in MARGIN..g.w - MARGIN {
            let s = scores[idx(x, y)];
            if s == 0 {
                continue;
            }
            let dominated = (-1..=1)
                .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
                .any(|(dx, dy)| scores[idx(x + dx, y + dy)] > s);
            if !dominated {
                kps.push(Keypoint {
                    x,
                    y,
                    score: s,
                    angle: centroid_angle(g, x, y),
                });
            }
        }
    }
    kps.sort_by(|a, b| b.score.cmp(&a.score).then((a.y, a.x).cmp(&(b.y, b.x))));
    kps.truncate(config.max_keypoints);
    kps
}

fn centroid_angle(g: &Gray, x: i32, y: i32) -> f64 {
    let (mut m01, mut m10) = (0i64, 0i64);
    let r2 = PATCH_RADIUS * PATCH_RADIUS;
    for dy in -PATCH_RADIUS..=PATCH_RADIUS {
        for dx in -PATCH_RADIUS..=PATCH_RADIUS {
            if dx * dx + dy * dy <= r2 {
                let v = g.at(x + dx, y + dy) as i64;
                m10 += dx as i64 * v;
                m01 += dy as i64 * v;
            }
        }
    }
    (m01 as f64).atan2(m10 as f64)
}

fn steer(p: (i32, i32), cos: f64, sin: f64) -> (i32, i32) {
    let (x, y) = (p.0 as f64, p.1 as f64);
    ((x * cos - y * sin).round() as i32, (x * sin + y * cos).round() as i32)
}

/// Keypoints and their steered BRIEF descriptors.
pub fn describe(img: &RasterImage, config: &OrbConfig) -> Vec<(Keypoint, Descriptor)> {
    let g = gray(img);
    let kps = detect_gray(&g, config);
    if kps.is_empty() {
        return Vec::new();
    }
    let integral = Integral::new(&g);
    let pattern = brief_pattern();
    kps.into_iter()
        .map(|kp| {
            let (sin, cos) = kp.angle.sin_cos();
            let mut d = Descriptor::default();
            for (j, &(a, b)) in pattern.iter().enumerate() {
                let (ax, ay) = steer(a, cos, sin);
                let (bx, by) = steer(b, cos, sin);
                if integral.box5(kp.x + ax, kp.y + ay) < integral.box5(kp.x + bx, kp.y + by) {
                    d.set(j);
                }
            }
            (kp, d)
        })
        .collect()
}

impl Default for Descriptor {
    fn default() -> Self {
        Descriptor([0; 4])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Color;

    #[test]
    fn pattern_stays_inside_the_disc() {
        let r2 = PATCH_RADIUS * PATCH_RADIUS;
        for &(a, b) in brief_pattern() {
            assert!(a.0 * a.0 + a.1 * a.1 <= r2 && b.0 * b.0 + b.1 * b.1 <= r2);
            assert_ne!(a, b);
        }
    }

    #[test]
    fn bright_square_has_corner_keypoints() {
        let img = RasterImage::from_fn(64, 64, |x, y| {
            if (24..40).contains(&x) && (24..40).contains(&y) {
                Color::WHITE
            } else {
                Color::BLACK
            }
        })
        .unwrap();
        let kps = detect(&img, &OrbConfig::default());
        for corner in [(24, 24), (39, 24), (24, 39), (39, 39)] {
            assert!(
                kps.iter().any(|k| (k.x - corner.0).abs() <= 1 && (k.y - corner.1).abs() <= 1),
                "missing corner {corner:?} in {kps:?}"
            );
        }
    }

    #[test]
    fn box_sum_matches_naive() {
        let img = RasterImage::from_fn(9, 8, |x, y| Color::new((x * 29 + y * 7) as u8, 0, 0)).unwrap();
        let g = gray(&img);
        let integral = Integral::new(&g);
        let naive: u32 = (1..6).flat_map(|y| (2..7).map(move |x| (x, y))).map(|(x, y)| g.at(x, y) as u32).sum();
        assert_eq!(integral.box5(4, 3), naive);
    }

    #[test]
    fn hamming_counts_differing_bits() {
        let mut a = Descriptor::default();
        a.set(0);
        a.set(255);
        assert!(a.bit(255) && !a.bit(254));
        assert_eq!(a.hamming(&Descriptor::default()), 2);
        assert_eq!(Descriptor([u64::MAX; 4]).hamming(&Descriptor::default()), 256);
    }

    #[test]
    fn small_images_have_no_keypoints() {
        let img = RasterImage::from_fn(30, 30, |x, y| if (x + y) % 2 == 0 { Color::WHITE } else { Color::BLACK }).unwrap();
        assert!(detect(&img, &OrbConfig::default()).is_empty());
    }
}
