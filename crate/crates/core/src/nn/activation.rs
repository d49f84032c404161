//! ReLU and 2x2/stride-2 max pooling.

use super::{NnError, Real, Tensor};

#[derive(Debug, Clone)]
pub struct ReluCache<T> {
    input: Tensor<T>,
}

/// `max(0, x)` element-wise.
pub fn relu<T: Real>(x: &Tensor<T>) -> (Tensor<T>, ReluCache<T>) {
    let data = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    let out = Tensor::new(x.shape().to_vec(), data).expect("same shape");
    (out, ReluCache { input: x.clone() })
}

/// Passes gradient where the input was strictly positive; the subgradient at 0 is 0.
pub fn relu_backward<T: Real>(cache: &ReluCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if grad_out.shape() != cache.input.shape() {
        return Err(NnError::StaleCache(format!(
            "relu cache is for {:?}, gradient is {:?}",
            cache.input.shape(),
            grad_out.shape()
        )));
    }
    let data = cache
        .input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    /// Flat input index of the winner for every output element.
    argmax: Vec<usize>,
}

pub fn maxpool2x2_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache), NnError> {
    let [n, c, h, w] = match *x.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(NnError::Shape(format!("max pool needs rank 4, got {:?}", x.shape()))),
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::Shape(format!("max pool needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xs = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let top = base + 2 * i * w + 2 * j;
                // Row-major scan; strict comparison keeps the first maximum.
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if xs[idx] > xs[best] {
                        best = idx;
                    }
                }
                out.push(xs[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![n, c, oh, ow], out)?,
        PoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward<T: Real>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if grad_out.len() != cache.argmax.len() {
        return Err(NnError::StaleCache(format!(
            "pool cache routes {} values, gradient has {}",
            cache.argmax.len(),
            grad_out.len()
        )));
    }
    let mut dx = Tensor::zeros(&cache.input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        d[idx] = d[idx] + g;
    }
    Ok(dx)
}
