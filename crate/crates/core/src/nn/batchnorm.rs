//! Batch normalization over every axis except the channel axis (axis 1).
//!
//! Training mode standardizes with the batch statistics,
//! `y = gamma * (f - mean) / sqrt(var + eps) + beta`, and reports those
//! statistics so the caller can fold them into the running averages.
//! Inference mode uses the running averages instead.

use super::{NnError, Real, Tensor};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> BatchNormParams<T> {
    /// gamma = 1, beta = 0, running mean 0, running variance 1.
    pub fn new(channels: usize, momentum: f64) -> Self {
        BatchNormParams {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: T::lit(momentum),
            eps: T::lit(BN_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// `r <- (1 - momentum) * r + momentum * batch_stat` for mean and variance.
    pub fn absorb(&mut self, stats: &BatchStats<T>) {
        let m = self.momentum;
        let blend = |r: &mut Tensor<T>, s: &[T]| {
            for (r, &s) in r.data_mut().iter_mut().zip(s) {
                *r = (T::one() - m) * *r + m * s;
            }
        };
        blend(&mut self.running_mean, &stats.mean);
        blend(&mut self.running_var, &stats.var);
    }
}

/// Per-channel batch mean and (biased) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    training: bool,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// (batch, channels, elements per channel per sample)
fn layout(shape: &[usize]) -> Result<(usize, usize, usize), NnError> {
    if shape.len() < 2 {
        return Err(NnError::Shape(format!("batch norm needs rank >= 2, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Visit channel `c`'s contiguous runs in an [N, C, ...] buffer.
fn runs<T>(data: &[T], n: usize, c: usize, inner: usize, ch: usize) -> impl Iterator<Item = &[T]> {
    (0..n).map(move |ni| &data[(ni * c + ch) * inner..(ni * c + ch + 1) * inner])
}

pub fn batchnorm_forward<T: Real>(
    x: &Tensor<T>,
    p: &BatchNormParams<T>,
    training: bool,
) -> Result<(Tensor<T>, BnCache<T>, Option<BatchStats<T>>), NnError> {
    let (n, c, inner) = layout(x.shape())?;
    if c != p.channels() {
        return Err(NnError::Shape(format!(
            "batch norm over {} channels got input {:?}",
            p.channels(),
            x.shape()
        )));
    }
    let count = n * inner;
    if count == 0 {
        return Err(NnError::Shape(format!(
            "batch statistics undefined for input {:?}",
            x.shape()
        )));
    }
    let xs = x.data();
    let (mean, var) = if training {
        let m = T::from_usize(count).expect("count fits");
        let mean: Vec<T> = (0..c)
            .map(|ch| runs(xs, n, c, inner, ch).flatten().copied().sum::<T>() / m)
            .collect();
        let var: Vec<T> = (0..c)
            .map(|ch| {
                runs(xs, n, c, inner, ch)
                    .flatten()
                    .map(|&v| (v - mean[ch]) * (v - mean[ch]))
                    .sum::<T>()
                    / m
            })
            .collect();
        (mean, var)
    } else {
        (p.running_mean.data().to_vec(), p.running_var.data().to_vec())
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + p.eps).sqrt()).collect();
    let gamma = p.gamma.data();
    let beta = p.beta.data();
    let mut x_hat = vec![T::zero(); xs.len()];
    let mut y = vec![T::zero(); xs.len()];
    for ni in 0..n {
        for ch in 0..c {
            let range = (ni * c + ch) * inner..(ni * c + ch + 1) * inner;
            for i in range {
                let h = (xs[i] - mean[ch]) * inv_std[ch];
                x_hat[i] = h;
                y[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    let cache = BnCache {
        x_hat: Tensor::new(x.shape().to_vec(), x_hat)?,
        inv_std,
        gamma: gamma.to_vec(),
        training,
    };
    let stats = training.then_some(BatchStats { mean, var });
    Ok((Tensor::new(x.shape().to_vec(), y)?, cache, stats))
}

pub fn batchnorm_backward<T: Real>(
    cache: &BnCache<T>,
    grad_out: &Tensor<T>,
) -> Result<BnGrads<T>, NnError> {
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(NnError::StaleCache(format!(
            "batch norm cache is for {:?}, gradient is {:?}",
            cache.x_hat.shape(),
            grad_out.shape()
        )));
    }
    let (n, c, inner) = layout(grad_out.shape())?;
    let gs = grad_out.data();
    let xh = cache.x_hat.data();
    let mut d_gamma = vec![T::zero(); c];
    let mut d_beta = vec![T::zero(); c];
    for ch in 0..c {
        for (g_run, h_run) in runs(gs, n, c, inner, ch).zip(runs(xh, n, c, inner, ch)) {
            for (&g, &h) in g_run.iter().zip(h_run) {
                d_beta[ch] = d_beta[ch] + g;
                d_gamma[ch] = d_gamma[ch] + g * h;
            }
        }
    }
    let m = T::from_usize(n * inner).expect("count fits");
    let mut dx = vec![T::zero(); gs.len()];
    for ni in 0..n {
        for ch in 0..c {
            let scale = cache.gamma[ch] * cache.inv_std[ch];
            for i in (ni * c + ch) * inner..(ni * c + ch + 1) * inner {
                dx[i] = if cache.training {
                    // d/dx through the batch mean and variance as well.
                    scale * (gs[i] - d_beta[ch] / m - xh[i] * d_gamma[ch] / m)
                } else {
                    scale * gs[i]
                };
            }
        }
    }
    Ok(BnGrads {
        input: Tensor::new(grad_out.shape().to_vec(), dx)?,
        gamma: Tensor::new(vec![c], d_gamma)?,
        beta: Tensor::new(vec![c], d_beta)?,
    })
}
