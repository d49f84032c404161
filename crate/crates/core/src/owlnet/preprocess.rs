use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::OwlNetError;
use crate::imaging::{resize_normalize, rotate_to_portrait, RasterImage};
use crate::nn::Tensor;

/// Per-channel standardization constants on the [0, 1] scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for ChannelStats {
    fn default() -> Self {
        ChannelStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

/// Rotate landscape screens upright and stretch to the network input.
pub fn fit_to_input(img: &RasterImage, config: &NetworkConfig) -> Result<RasterImage, OwlNetError> {
    let upright = rotate_to_portrait(img);
    Ok(resize_normalize(&upright, config.input_h as u32, config.input_w as u32)?)
}

/// [3, H, W] tensor: rotate, resize, scale to [0, 1], standardize.
pub fn preprocess(img: &RasterImage, config: &NetworkConfig, stats: &ChannelStats) -> Result<Tensor<f32>, OwlNetError> {
    let fitted = fit_to_input(img, config)?;
    Ok(to_tensor(&fitted, stats))
}

/// Standardized [3, H, W] tensor of an image already at input size.
pub fn to_tensor(img: &RasterImage, stats: &ChannelStats) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in img.as_raw().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = (px[c] as f32 / 255.0 - stats.mean[c]) / stats.std[c];
        }
    }
    Tensor::new(vec![3, h, w], data).expect("sized to image")
}

/// Mean and standard deviation per channel over every pixel of `images`
/// (already at input size). A zero deviation is replaced by 1.
pub fn compute_channel_stats<'a>(images: impl IntoIterator<Item = &'a RasterImage>) -> ChannelStats {
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    let mut count = 0u64;
    for img in images {
        for px in img.as_raw().chunks_exact(3) {
            for c in 0..3 {
                let v = px[c] as f64 / 255.0;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        count += img.width() as u64 * img.height() as u64;
    }
    if count == 0 {
        return ChannelStats::default();
    }
    let n = count as f64;
    let mean = sum.map(|s| s / n);
    let std: [f64; 3] = std::array::from_fn(|c| (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt());
    ChannelStats {
        mean: mean.map(|m| m as f32),
        std: std.map(|s| if s > 1e-6 { s as f32 } else { 1.0 }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Color;

    #[test]
    fn black_image_maps_to_negative_mean_over_std() {
        let stats = ChannelStats {
            mean: [0.5, 0.25, 0.1],
            std: [0.5, 0.25, 0.2],
        };
        let img = RasterImage::new(64, 96, Color::BLACK).unwrap();
        let t = preprocess(&img, &NetworkConfig::desk(), &stats).unwrap();
        assert_eq!(t.shape(), [3, 192, 128]);
        let plane = 192 * 128;
        for (c, expect) in [-1.0f32, -1.0, -0.5].into_iter().enumerate() {
            assert!(t.data()[c * plane..(c + 1) * plane].iter().all(|&v| (v - expect).abs() < 1e-6));
        }
    }

    #[test]
    fn landscape_is_rotated_before_resize() {
        // Red left half of a landscape image ends up as the top half after a
        // clockwise turn.
        let img = RasterImage::from_fn(256, 128, |x, _| if x < 128 { Color::RED } else { Color::BLUE }).unwrap();
        let fitted = fit_to_input(&img, &NetworkConfig::desk()).unwrap();
        assert_eq!((fitted.width(), fitted.height()), (128, 192));
        assert_eq!(fitted.pixel(10, 10), Color::RED);
        assert_eq!(fitted.pixel(10, 180), Color::BLUE);
    }

    #[test]
    fn input_sized_image_is_untouched() {
        let img = RasterImage::from_fn(128, 192, |x, y| Color::new(x as u8, y as u8, 7)).unwrap();
        assert_eq!(fit_to_input(&img, &NetworkConfig::desk()).unwrap(), img);
    }

    #[test]
    fn stats_of_two_tone_corpus() {
        let a = RasterImage::new(2, 2, Color::BLACK).unwrap();
        let b = RasterImage::new(2, 2, Color::WHITE).unwrap();
        let s = compute_channel_stats([&a, &b]);
        assert!(s.mean.iter().all(|&m| (m - 0.5).abs() < 1e-6));
        assert!(s.std.iter().all(|&d| (d - 0.5).abs() < 1e-6));
        let flat = compute_channel_stats([&a]);
        assert_eq!(flat.std, [1.0; 3]);
    }
}
