use super::activation::{maxpool2x2_backward, maxpool2x2_forward, relu, relu_backward, PoolCache, ReluCache};
use super::batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormParams, BatchStats, BnCache};
use super::conv::{conv2d_backward, conv2d_forward, ConvCache};
use super::linear::{fc_backward, fc_forward, FcCache};
use super::{NnError, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu,
    MaxPool,
    Flatten,
    Linear,
}

/// One stage of a sequential network together with its trainable state.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    /// Weight [K, C, 3, 3], bias [K].
    Conv { weight: Tensor<T>, bias: Tensor<T> },
    BatchNorm(BatchNormParams<T>),
    Relu,
    MaxPool,
    Flatten,
    /// Weight [D, M], bias [M].
    Linear { weight: Tensor<T>, bias: Tensor<T> },
}

/// Activations a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Conv(ConvCache<T>),
    BatchNorm(BnCache<T>),
    Relu(ReluCache<T>),
    MaxPool(PoolCache),
    Flatten(Vec<usize>),
    Linear(FcCache<T>),
}

#[derive(Debug, Clone)]
pub struct LayerOutput<T> {
    pub output: Tensor<T>,
    pub cache: LayerCache<T>,
    /// Batch statistics from a training-mode batch norm.
    pub stats: Option<BatchStats<T>>,
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv { .. } => LayerKind::Conv,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool => LayerKind::MaxPool,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Linear { .. } => LayerKind::Linear,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<LayerOutput<T>, NnError> {
        let plain = |output, cache| LayerOutput {
            output,
            cache,
            stats: None,
        };
        Ok(match self {
            Layer::Conv { weight, bias } => {
                let (out, cache) = conv2d_forward(x, weight, bias)?;
                plain(out, LayerCache::Conv(cache))
            }
            Layer::BatchNorm(p) => {
                let (output, cache, stats) = batchnorm_forward(x, p, training)?;
                LayerOutput {
                    output,
                    cache: LayerCache::BatchNorm(cache),
                    stats,
                }
            }
            Layer::Relu => {
                let (out, cache) = relu(x);
                plain(out, LayerCache::Relu(cache))
            }
            Layer::MaxPool => {
                let (out, cache) = maxpool2x2_forward(x)?;
                plain(out, LayerCache::MaxPool(cache))
            }
            Layer::Flatten => {
                let n = *x.shape().first().ok_or_else(|| NnError::Shape("flatten of a scalar".into()))?;
                let rest = x.len() / n.max(1);
                let out = x.clone().reshape(&[n, rest])?;
                plain(out, LayerCache::Flatten(x.shape().to_vec()))
            }
            Layer::Linear { weight, bias } => {
                let (out, cache) = fc_forward(x, weight, bias)?;
                plain(out, LayerCache::Linear(cache))
            }
        })
    }

    /// Input gradient and parameter gradients (ordered as [`Layer::params`]).
    pub fn backward(&self, cache: &LayerCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        match (self, cache) {
            (Layer::Conv { .. }, LayerCache::Conv(c)) => {
                let g = conv2d_backward(c, grad_out)?;
                Ok((g.input, vec![g.weight, g.bias]))
            }
            (Layer::BatchNorm(_), LayerCache::BatchNorm(c)) => {
                let g = batchnorm_backward(c, grad_out)?;
                Ok((g.input, vec![g.gamma, g.beta]))
            }
            (Layer::Relu, LayerCache::Relu(c)) => Ok((relu_backward(c, grad_out)?, vec![])),
            (Layer::MaxPool, LayerCache::MaxPool(c)) => Ok((maxpool2x2_backward(c, grad_out)?, vec![])),
            (Layer::Flatten, LayerCache::Flatten(shape)) => Ok((grad_out.clone().reshape(shape)?, vec![])),
            (Layer::Linear { .. }, LayerCache::Linear(c)) => {
                let g = fc_backward(c, grad_out)?;
                Ok((g.input, vec![g.weight, g.bias]))
            }
            _ => Err(NnError::StaleCache(format!("cache does not belong to a {:?} layer", self.kind()))),
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Layer::Conv { .. } | Layer::Linear { .. } => &["weight", "bias"],
            Layer::BatchNorm(_) => &["gamma", "beta"],
            _ => &[],
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv { weight, bias } | Layer::Linear { weight, bias } => vec![weight, bias],
            Layer::BatchNorm(p) => vec![&p.gamma, &p.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv { weight, bias } | Layer::Linear { weight, bias } => vec![weight, bias],
            Layer::BatchNorm(p) => vec![&mut p.gamma, &mut p.beta],
            _ => vec![],
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::BatchNorm(p) => vec![("running_mean", &p.running_mean), ("running_var", &p.running_var)],
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::BatchNorm(p) => vec![
                ("running_mean", &mut p.running_mean),
                ("running_var", &mut p.running_var),
            ],
            _ => vec![],
        }
    }

    /// Output shape for `input` without computing anything.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let bad = || NnError::Shape(format!("{:?} layer cannot take input {input:?}", self.kind()));
        match self {
            Layer::Conv { weight, .. } => match *input {
                [n, c, h, w] if c == weight.shape()[1] => Ok(vec![n, weight.shape()[0], h, w]),
                _ => Err(bad()),
            },
            Layer::BatchNorm(p) => match input {
                [_, c, ..] if *c == p.channels() => Ok(input.to_vec()),
                _ => Err(bad()),
            },
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool => match *input {
                [n, c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![n, c, h / 2, w / 2]),
                _ => Err(bad()),
            },
            Layer::Flatten => match input {
                [n, rest @ ..] => Ok(vec![*n, rest.iter().product()]),
                _ => Err(bad()),
            },
            Layer::Linear { weight, .. } => match *input {
                [n, d] if d == weight.shape()[0] => Ok(vec![n, weight.shape()[1]]),
                _ => Err(bad()),
            },
        }
    }
}
