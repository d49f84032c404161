//! Gradient-weighted class activation maps.
//!
//! Channel weights are the spatial mean of the class-logit gradient,
//! `alpha_k = (1/Z) sum_ij d out_b / d A^k_ij`, and the raw map is
//! `ReLU(sum_k alpha_k A^k)`, upsampled bilinearly to the input and divided
//! by its maximum.

use thiserror::Error;

use crate::imaging::{resample_grid, BBox, RasterImage};
use crate::manifest::Label;
use crate::nn::{NnError, Tensor};
use crate::owlnet::{Model, Network, OwlNetError};

#[derive(Debug, Error)]
pub enum GradCamError {
    #[error("map is identically zero; no region to extract")]
    ZeroMap,
    #[error("region threshold {0} must lie in (0, 1)")]
    BadFraction(f32),
    #[error("no activations cached for layer {0}")]
    MissingLayer(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] OwlNetError),
}

/// Per-pixel relevance at input resolution plus the raw layer-resolution map.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationMap {
    values: Vec<f32>,
    height: usize,
    width: usize,
    raw: Vec<f32>,
    raw_height: usize,
    raw_width: usize,
    layer_index: usize,
}

impl LocalizationMap {
    /// Wrap an already normalized grid (raw map = values, no source layer).
    pub fn from_values(height: usize, width: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), height * width, "map size mismatch");
        LocalizationMap {
            raw: values.clone(),
            values,
            height,
            width,
            raw_height: height,
            raw_width: width,
            layer_index: 0,
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn raw(&self) -> &[f32] {
        &self.raw
    }

    pub fn raw_dims(&self) -> (usize, usize) {
        (self.raw_height, self.raw_width)
    }

    /// 1-based conv layer the activations came from (0 if synthetic).
    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// First maximum in row-major order, as (x, y); `None` for an all-zero map.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f32)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| (i % self.width, i / self.width))
    }
}

/// Channel weights: spatial mean of the gradient for each feature map.
pub fn channel_weights(gradients: &Tensor<f32>) -> Result<Vec<f32>, GradCamError> {
    let (k, plane) = feature_dims(gradients)?;
    Ok((0..k)
        .map(|ch| {
            let s: f64 = gradients.data()[ch * plane..(ch + 1) * plane].iter().map(|&g| g as f64).sum();
            (s / plane as f64) as f32
        })
        .collect())
}

fn feature_dims(t: &Tensor<f32>) -> Result<(usize, usize), GradCamError> {
    match *t.shape() {
        [k, h, w] => Ok((k, h * w)),
        _ => Err(NnError::Shape(format!("feature maps must be [K, H, W], got {:?}", t.shape())).into()),
    }
}

/// Build the map from one sample's activations `A` [K, h, w] and the
/// gradients of the class logit with respect to them.
pub fn grad_cam_from_parts(
    activations: &Tensor<f32>,
    gradients: &Tensor<f32>,
    out_h: usize,
    out_w: usize,
    layer_index: usize,
) -> Result<LocalizationMap, GradCamError> {
    if activations.shape() != gradients.shape() {
        return Err(NnError::Shape(format!(
            "activations {:?} vs gradients {:?}",
            activations.shape(),
            gradients.shape()
        ))
        .into());
    }
    let (k, plane) = feature_dims(activations)?;
    let (h, w) = (activations.shape()[1], activations.shape()[2]);
    let alpha = channel_weights(gradients)?;
    let raw: Vec<f32> = (0..plane)
        .map(|p| {
            let s: f64 = (0..k)
                .map(|ch| alpha[ch] as f64 * activations.data()[ch * plane + p] as f64)
                .sum();
            s.max(0.0) as f32
        })
        .collect();
    let up = resample_grid(&raw, h, w, out_h, out_w);
    let max = up.iter().copied().fold(0.0f32, f32::max);
    let values = if max > 0.0 {
        up.into_iter().map(|v| (v / max).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; out_h * out_w]
    };
    Ok(LocalizationMap {
        values,
        height: out_h,
        width: out_w,
        raw,
        raw_height: h,
        raw_width: w,
        layer_index,
    })
}

/// Tight box around every pixel with value >= `frac * max` (union of all hot blobs).
pub fn map_to_region(map: &LocalizationMap, frac: f32) -> Result<BBox, GradCamError> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(GradCamError::BadFraction(frac));
    }
    let max = map.values.iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Err(GradCamError::ZeroMap);
    }
    let cut = frac * max;
    let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..map.height {
        for x in 0..map.width {
            if map.at(x, y) >= cut {
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x + 1);
                y2 = y2.max(y + 1);
            }
        }
    }
    Ok(BBox {
        x1: x1 as i32,
        y1: y1 as i32,
        x2: x2 as i32,
        y2: y2 as i32,
    })
}

/// Whether the map's strongest pixel falls inside `truth` (x2/y2 exclusive).
pub fn localization_hit(map: &LocalizationMap, truth: &BBox) -> bool {
    map.argmax()
        .is_some_and(|(x, y)| truth.contains(x as i32, y as i32))
}

/// Activations of conv `conv_layer` and the gradient of `target_class`'s
/// logit with respect to them, for a single preprocessed input [3, H, W].
/// Batch norm runs in inference mode.
pub fn layer_gradients(
    net: &Network<f32>,
    input: &Tensor<f32>,
    target_class: usize,
    conv_layer: usize,
) -> Result<(Tensor<f32>, Tensor<f32>, usize), GradCamError> {
    let at = net
        .conv_relu_index(conv_layer)
        .ok_or(GradCamError::MissingLayer(conv_layer))?;
    let x = Tensor::stack(&[input])?;
    let tape = net.forward(&x, false, Some(at))?;
    let classes = tape.logits.shape()[1];
    if target_class >= classes {
        return Err(NnError::LabelOutOfRange {
            label: target_class,
            classes,
        }
        .into());
    }
    let mut onehot = vec![0.0; classes];
    onehot[target_class] = 1.0;
    let seed = Tensor::from_f64(&[1, classes], &onehot)?;
    let back = net.backward(&tape, &seed, Some(at))?;
    let acts = tape.captured.ok_or(GradCamError::MissingLayer(conv_layer))?;
    let grads = back.captured.ok_or(GradCamError::MissingLayer(conv_layer))?;
    Ok((acts.outer(0), grads.outer(0), at))
}

/// Localization map for `img` at its own resolution. Landscape screenshots
/// are explained in their upright orientation and the map is turned back.
/// The explained layer is [`NetworkConfig::cam_layer`](crate::owlnet::NetworkConfig::cam_layer).
pub fn grad_cam(model: &Model, img: &RasterImage, target: Label) -> Result<LocalizationMap, GradCamError> {
    grad_cam_at(model, img, target, model.config().cam_layer())
}

pub fn grad_cam_at(
    model: &Model,
    img: &RasterImage,
    target: Label,
    conv_layer: usize,
) -> Result<LocalizationMap, GradCamError> {
    let input = model.preprocess(img)?;
    let (acts, grads, at) = layer_gradients(&model.network, &input, target.class_index(), conv_layer)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let landscape = w > h;
    let (uh, uw) = if landscape { (w, h) } else { (h, w) };
    let upright = grad_cam_from_parts(&acts, &grads, uh, uw, at)?;
    if !landscape {
        return Ok(upright);
    }
    // Upright pixel (h - 1 - y, x) came from original pixel (x, y).
    let values = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| upright.values[x * uw + (h - 1 - y)])
        .collect();
    Ok(LocalizationMap {
        values,
        height: h,
        width: w,
        ..upright
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f32> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn single_map_oracle() {
        let a = t(&[1, 2, 2], &[1.0, -1.0, 0.0, 2.0]);
        let g = t(&[1, 2, 2], &[1.0; 4]);
        assert_eq!(channel_weights(&g).unwrap(), vec![1.0]);
        let m = grad_cam_from_parts(&a, &g, 2, 2, 0).unwrap();
        assert_eq!(m.raw(), &[1.0, 0.0, 0.0, 2.0]);
        assert_eq!(m.values(), &[0.5, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_gradients_give_zero_map() {
        let a = t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let g = t(&[2, 2, 2], &[0.0; 8]);
        let m = grad_cam_from_parts(&a, &g, 8, 8, 0).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
        assert_eq!(m.argmax(), None);
        assert!(!localization_hit(&m, &BBox::new(0, 0, 8, 8).unwrap()));
        assert!(matches!(map_to_region(&m, 0.5), Err(GradCamError::ZeroMap)));
    }

    #[test]
    fn opposite_weights_cancel() {
        let a = t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        let g = t(&[2, 2, 2], &[1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]);
        let m = grad_cam_from_parts(&a, &g, 2, 2, 0).unwrap();
        assert!(m.raw().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn regions() {
        let mut v = vec![0.0; 30 * 40];
        v[20 * 30 + 10] = 1.0;
        let m = LocalizationMap::from_values(40, 30, v.clone());
        assert_eq!(map_to_region(&m, 0.5).unwrap(), BBox::new(10, 20, 11, 21).unwrap());
        assert_eq!(m.argmax(), Some((10, 20)));

        let uniform = LocalizationMap::from_values(40, 30, vec![0.3; 1200]);
        assert_eq!(map_to_region(&uniform, 0.5).unwrap(), BBox::new(0, 0, 30, 40).unwrap());
        assert_eq!(uniform.argmax(), Some((0, 0)));

        v[2 * 30 + 3] = 0.8;
        v[35 * 30 + 25] = 0.9;
        let blobs = LocalizationMap::from_values(40, 30, v);
        assert_eq!(map_to_region(&blobs, 0.5).unwrap(), BBox::new(3, 2, 26, 36).unwrap());
        assert!(matches!(map_to_region(&blobs, 1.0), Err(GradCamError::BadFraction(_))));
        assert!(matches!(map_to_region(&blobs, 0.0), Err(GradCamError::BadFraction(_))));
    }

    #[test]
    fn hit_boundaries_are_exclusive() {
        let mut v = vec![0.0; 100];
        v[5 * 10 + 5] = 1.0;
        let m = LocalizationMap::from_values(10, 10, v);
        assert!(localization_hit(&m, &BBox::new(5, 5, 6, 6).unwrap()));
        assert!(!localization_hit(&m, &BBox::new(0, 0, 5, 5).unwrap()));
        assert!(!localization_hit(&m, &BBox::new(6, 5, 9, 9).unwrap()));
    }

    fn arb_parts() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (prop::collection::vec(-2.0f64..2.0, 3 * 3 * 2), prop::collection::vec(-1.0f64..1.0, 3 * 3 * 2))
    }

    proptest! {
        #[test]
        fn gradient_scale_leaves_normalized_map((a, g) in arb_parts(), c in 0.1f64..20.0) {
            let acts = t(&[3, 3, 2], &a);
            let base = grad_cam_from_parts(&acts, &t(&[3, 3, 2], &g), 12, 8, 0).unwrap();
            let scaled_g: Vec<f64> = g.iter().map(|v| v * c).collect();
            let scaled = grad_cam_from_parts(&acts, &t(&[3, 3, 2], &scaled_g), 12, 8, 0).unwrap();
            for (r, s) in base.raw().iter().zip(scaled.raw()) {
                prop_assert!((s - r * c as f32).abs() <= 1e-4 * (1.0 + s.abs()));
            }
            for (u, v) in base.values().iter().zip(scaled.values()) {
                prop_assert!((u - v).abs() < 1e-4);
            }
            let top = base.values().iter().copied().fold(0.0f32, f32::max);
            if let Some((x, y)) = scaled.argmax() {
                prop_assert!(base.at(x, y) >= top - 1e-4);
            }
        }

        #[test]
        fn upsampled_argmax_stays_near_raw_argmax((a, g) in arb_parts()) {
            // 3x2 raw map on a 12x8 output: 4-pixel cells.
            let m = grad_cam_from_parts(&t(&[3, 3, 2], &a), &t(&[3, 3, 2], &g), 12, 8, 0).unwrap();
            if let Some((x, y)) = m.argmax() {
                let raw = m.raw();
                let best = raw.iter().copied().fold(0.0f32, f32::max);
                let near = (0..raw.len()).filter(|&i| raw[i] >= best).any(|i| {
                    let (cx, cy) = ((i % 2) as i64, (i / 2) as i64);
                    (x as i64 / 4 - cx).abs() <= 1 && (y as i64 / 4 - cy).abs() <= 1
                });
                prop_assert!(near);
            }
        }

        #[test]
        fn single_positive_map_is_relu_over_max(a in prop::collection::vec(-2.0f64..2.0, 6), w in 0.1f64..3.0) {
            prop_assume!(a.iter().any(|&v| v > 1e-3));
            let g = vec![w; 6];
            let m = grad_cam_from_parts(&t(&[1, 3, 2], &a), &t(&[1, 3, 2], &g), 3, 2, 0).unwrap();
            let max = a.iter().copied().fold(0.0, f64::max);
            for (v, &x) in m.values().iter().zip(&a) {
                prop_assert!((*v as f64 - x.max(0.0) / max).abs() < 1e-5);
            }
        }
    }
}
