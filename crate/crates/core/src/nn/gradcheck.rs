//! Central finite-difference verification of analytic layer gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, NnError, Tensor};

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`; the floor keeps
/// vanishing gradients from turning rounding noise into huge ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central differences `(f(x + eps) - f(x - eps)) / 2eps` for every coordinate.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error over the input gradient.
    pub input: f64,
    /// Max relative error per parameter tensor, in [`Layer::params`] order.
    pub params: Vec<f64>,
}

impl GradCheckReport {
    pub fn max(&self) -> f64 {
        self.params.iter().copied().fold(self.input, f64::max)
    }
}

/// Check `layer`'s backward pass against finite differences of the scalar
/// loss `sum(forward(x) * r)`, with `r` a fixed pseudo-random projection.
pub fn finite_diff_check(layer: &Layer<f64>, x: &Tensor<f64>, eps: f64, training: bool) -> Result<GradCheckReport, NnError> {
    let fwd = layer.forward(x, training)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let proj: Vec<f64> = (0..fwd.output.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let proj = Tensor::new(fwd.output.shape().to_vec(), proj)?;
    let (dx, dparams) = layer.backward(&fwd.cache, &proj)?;

    let loss = |l: &Layer<f64>, input: &Tensor<f64>| -> f64 {
        let out = l.forward(input, training).expect("forward succeeded once").output;
        out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };
    let max_err = |analytic: &[f64], numeric: &[f64]| {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max)
    };

    let numeric_dx = numeric_gradient(
        |v| loss(layer, &Tensor::new(x.shape().to_vec(), v.to_vec()).expect("same shape")),
        x.data(),
        eps,
    );
    let input = max_err(dx.data(), &numeric_dx);

    let mut params = Vec::new();
    for (pi, analytic) in dparams.iter().enumerate() {
        let base = layer.params()[pi].clone();
        let numeric = numeric_gradient(
            |v| {
                let mut probe = layer.clone();
                *probe.params_mut()[pi] = Tensor::new(base.shape().to_vec(), v.to_vec()).expect("same shape");
                loss(&probe, x)
            },
            base.data(),
            eps,
        );
        params.push(max_err(analytic.data(), &numeric));
    }
    Ok(GradCheckReport { input, params })
}
