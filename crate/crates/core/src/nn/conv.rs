//! 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).

use rayon::prelude::*;

use super::{NnError, Real, Tensor};

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn dims4(t: &Tensor<impl Real>, what: &str) -> Result<[usize; 4], NnError> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(NnError::Shape(format!("{what} must be rank 4, got {:?}", t.shape()))),
    }
}

/// Columns `j` of an output row for which `j + dj - 1` is a valid input column.
#[inline]
fn col_span(w: usize, dj: usize) -> (usize, usize) {
    let lo = if dj == 0 { 1 } else { 0 };
    let hi = if dj == 2 { w.saturating_sub(1) } else { w };
    (lo, hi)
}

/// `out[j] += k0*src[j-1] + k1*src[j] + k2*src[j+1]`, zero outside `src`.
/// The three taps are fused so each output element is loaded and stored once.
#[inline]
fn row_taps<T: Real>(out: &mut [T], src: &[T], k: [T; 3]) {
    let w = out.len();
    debug_assert_eq!(w, src.len());
    if w == 1 {
        out[0] = out[0] + k[1] * src[0];
        return;
    }
    out[0] = out[0] + k[1] * src[0] + k[2] * src[1];
    out[w - 1] = out[w - 1] + k[0] * src[w - 2] + k[1] * src[w - 1];
    let inner = &mut out[1..w - 1];
    let (left, mid, right) = (&src[..w - 2], &src[1..w - 1], &src[2..]);
    for (((o, &a), &b), &c) in inner.iter_mut().zip(left).zip(mid).zip(right) {
        *o = *o + k[0] * a + k[1] * b + k[2] * c;
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            lanes[l] = lanes[l] + x[l] * y[l];
        }
    }
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    lanes.iter().copied().sum::<T>() + tail
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, ConvCache<T>), NnError> {
    let [n, c, h, wd] = dims4(x, "conv input")?;
    let [k, wc, kh, kw] = dims4(w, "conv weight")?;
    if (kh, kw) != (3, 3) {
        return Err(NnError::Shape(format!("kernel must be 3x3, got {kh}x{kw}")));
    }
    if wc != c {
        return Err(NnError::Shape(format!(
            "input has {c} channels but kernel expects {wc}"
        )));
    }
    if b.shape() != [k] {
        return Err(NnError::Shape(format!("bias shape {:?}, expected [{k}]", b.shape())));
    }
    let plane = h * wd;
    let xs = x.data();
    let ws = w.data();
    let bs = b.data();
    let mut out = vec![T::zero(); n * k * plane];
    out.par_chunks_mut(k * plane)
        .enumerate()
        .for_each(|(ni, out_n)| {
            let x_n = &xs[ni * c * plane..(ni + 1) * c * plane];
            for (ki, out_k) in out_n.chunks_mut(plane).enumerate() {
                out_k.fill(bs[ki]);
                for ci in 0..c {
                    let x_c = &x_n[ci * plane..(ci + 1) * plane];
                    let w_kc = &ws[(ki * c + ci) * 9..(ki * c + ci + 1) * 9];
                    for i in 0..h {
                        let out_row = &mut out_k[i * wd..(i + 1) * wd];
                        for di in 0..3 {
                            let r = i + di;
                            if r == 0 || r > h {
                                continue;
                            }
                            let x_row = &x_c[(r - 1) * wd..r * wd];
                            let k = &w_kc[di * 3..di * 3 + 3];
                            row_taps(out_row, x_row, [k[0], k[1], k[2]]);
                        }
                    }
                }
            }
        });
    let out = Tensor::new(vec![n, k, h, wd], out)?;
    Ok((
        out,
        ConvCache {
            input: x.clone(),
            weight: w.clone(),
        },
    ))
}

pub fn conv2d_backward<T: Real>(
    cache: &ConvCache<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    let [n, c, h, wd] = dims4(&cache.input, "cached conv input")?;
    let k = cache.weight.shape()[0];
    if grad_out.shape() != [n, k, h, wd] {
        return Err(NnError::StaleCache(format!(
            "conv cache is for output [{n}, {k}, {h}, {wd}], gradient is {:?}",
            grad_out.shape()
        )));
    }
    let plane = h * wd;
    let xs = cache.input.data();
    let ws = cache.weight.data();
    let gs = grad_out.data();

    let mut dx = vec![T::zero(); n * c * plane];
    dx.par_chunks_mut(c * plane)
        .enumerate()
        .for_each(|(ni, dx_n)| {
            let g_n = &gs[ni * k * plane..(ni + 1) * k * plane];
            for (ci, dx_c) in dx_n.chunks_mut(plane).enumerate() {
                for ki in 0..k {
                    let g_k = &g_n[ki * plane..(ki + 1) * plane];
                    let w_kc = &ws[(ki * c + ci) * 9..(ki * c + ci + 1) * 9];
                    for i in 0..h {
                        let g_row = &g_k[i * wd..(i + 1) * wd];
                        for di in 0..3 {
                            let r = i + di;
                            if r == 0 || r > h {
                                continue;
                            }
                            let dx_row = &mut dx_c[(r - 1) * wd..r * wd];
                            let k = &w_kc[di * 3..di * 3 + 3];
                            // Transposed kernel: the same row filter, mirrored.
                            row_taps(dx_row, g_row, [k[2], k[1], k[0]]);
                        }
                    }
                }
            }
        });

    // Weight and bias gradients: one task per output channel, samples reduced
    // in index order so the result does not depend on scheduling.
    let mut dw = vec![T::zero(); k * c * 9];
    let mut db = vec![T::zero(); k];
    dw.par_chunks_mut(c * 9)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(ki, (dw_k, db_k))| {
            for ni in 0..n {
                let g_k = &gs[(ni * k + ki) * plane..(ni * k + ki + 1) * plane];
                *db_k = *db_k + g_k.iter().copied().sum::<T>();
                for ci in 0..c {
                    let x_c = &xs[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                    for di in 0..3 {
                        for dj in 0..3 {
                            let (lo, hi) = col_span(wd, dj);
                            if lo >= hi {
                                continue;
                            }
                            let mut acc = T::zero();
                            for i in 0..h {
                                let r = i + di;
                                if r == 0 || r > h {
                                    continue;
                                }
                                let g_row = &g_k[i * wd + lo..i * wd + hi];
                                let x_row = &x_c[(r - 1) * wd + lo + dj - 1..(r - 1) * wd + hi + dj - 1];
                                acc = acc + dot(g_row, x_row);
                            }
                            dw_k[ci * 9 + di * 3 + dj] = dw_k[ci * 9 + di * 3 + dj] + acc;
                        }
                    }
                }
            }
        });

    Ok(ConvGrads {
        input: Tensor::new(vec![n, c, h, wd], dx)?,
        weight: Tensor::new(vec![k, c, 3, 3], dw)?,
        bias: Tensor::new(vec![k], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct transcription of the padded-window sum, no slicing tricks.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let [n, c, h, wd] = dims4(x, "").unwrap();
        let k = w.shape()[0];
        let mut out = Vec::new();
        for ni in 0..n {
            for ki in 0..k {
                for i in 0..h as i64 {
                    for j in 0..wd as i64 {
                        let mut s = b.data()[ki];
                        for ci in 0..c {
                            for di in 0..3i64 {
                                for dj in 0..3i64 {
                                    let (r, q) = (i + di - 1, j + dj - 1);
                                    if r < 0 || q < 0 || r >= h as i64 || q >= wd as i64 {
                                        continue;
                                    }
                                    let xv = x.data()[((ni * c + ci) * h + r as usize) * wd + q as usize];
                                    let wv = w.data()[(ki * c + ci) * 9 + (di * 3 + dj) as usize];
                                    s += xv * wv;
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    fn pseudo(len: usize, seed: u64) -> Vec<f64> {
        (0..len)
            .map(|i| (((i as u64 + 1) * 2654435761 ^ seed) % 1000) as f64 / 500.0 - 1.0)
            .collect()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 3, 4], &pseudo(12, 1)).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = Tensor::from_f64(&[1, 1, 3, 3], &k).unwrap();
        let (out, _) = conv2d_forward(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn all_ones_kernel_on_two_by_two() {
        // Every padded 3x3 window covers all four inputs: 1+2+3+4 = 10.
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let (out, cache) = conv2d_forward(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.data(), &[10.0; 4]);

        let grads = conv2d_backward(&cache, &Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        assert_eq!(grads.bias.data(), &[4.0]);
    }

    #[test]
    fn bias_only() {
        let x = Tensor::<f64>::from_f64(&[2, 1, 2, 3], &pseudo(12, 3)).unwrap();
        let (out, _) = conv2d_forward(&x, &Tensor::zeros(&[2, 1, 3, 3]), &Tensor::full(&[2], 5.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn matches_naive_window_sum() {
        for (n, c, k, h, w) in [(2, 3, 4, 5, 7), (1, 1, 2, 1, 1), (1, 2, 1, 1, 4), (3, 2, 2, 4, 1)] {
            let x = Tensor::<f64>::from_f64(&[n, c, h, w], &pseudo(n * c * h * w, 11)).unwrap();
            let wt = Tensor::from_f64(&[k, c, 3, 3], &pseudo(k * c * 9, 12)).unwrap();
            let b = Tensor::from_f64(&[k], &pseudo(k, 13)).unwrap();
            let (out, _) = conv2d_forward(&x, &wt, &b).unwrap();
            assert_eq!(out.shape(), [n, k, h, w]);
            for (a, e) in out.data().iter().zip(naive_conv(&x, &wt, &b)) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gradient_gives_zero_gradients() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 3, 3], &pseudo(18, 5)).unwrap();
        let w = Tensor::from_f64(&[2, 2, 3, 3], &pseudo(36, 6)).unwrap();
        let (out, cache) = conv2d_forward(&x, &w, &Tensor::zeros(&[2])).unwrap();
        let g = conv2d_backward(&cache, &Tensor::zeros(out.shape())).unwrap();
        for t in [&g.input, &g.weight, &g.bias] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[3, 1, 3, 3]);
        assert!(matches!(
            conv2d_forward(&x, &w, &Tensor::zeros(&[3])),
            Err(NnError::Shape(_))
        ));
        let w = Tensor::zeros(&[3, 2, 3, 3]);
        let (_, cache) = conv2d_forward(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert!(matches!(
            conv2d_backward(&cache, &Tensor::zeros(&[1, 3, 2, 2])),
            Err(NnError::StaleCache(_))
        ));
    }
}
