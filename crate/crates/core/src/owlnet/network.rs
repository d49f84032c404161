use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{NetworkConfig, CONV_LAYERS};
use super::OwlNetError;
use crate::nn::{softmax, BatchNormParams, BatchStats, Layer, LayerCache, NnError, Real, Tensor};

/// The detector: `[conv, bn, relu] x 12` with pools after the configured
/// convs, then flatten, `[fc, relu] x 3` and a final fc to the two logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    config: NetworkConfig,
    layers: Vec<Layer<T>>,
    /// Index in `layers` of every conv, in order.
    conv_at: Vec<usize>,
}

/// Everything a forward pass leaves behind for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    pub caches: Vec<LayerCache<T>>,
    pub stats: Vec<Option<BatchStats<T>>>,
    pub logits: Tensor<T>,
    /// Output of the layer requested with `capture`.
    pub captured: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct BackwardResult<T> {
    /// Gradients in [`Network::params`] order.
    pub param_grads: Vec<Tensor<T>>,
    /// Gradient with respect to the captured layer output.
    pub captured: Option<Tensor<T>>,
}

/// Stack `[conv, bn, relu, (pool)]` etc. from a validated config, calling
/// `fill(fan_in, shape)` for every weight tensor.
fn assemble<T: Real>(
    config: &NetworkConfig,
    mut fill: impl FnMut(usize, &[usize]) -> Tensor<T>,
) -> Result<Network<T>, OwlNetError> {
    config.validate()?;
    let mut layers = Vec::new();
    let mut conv_at = Vec::with_capacity(CONV_LAYERS);
    let mut in_ch = 3;
    for (i, &out_ch) in config.conv_channels.iter().enumerate() {
        conv_at.push(layers.len());
        layers.push(Layer::Conv {
            weight: fill(in_ch * 9, &[out_ch, in_ch, 3, 3]),
            bias: Tensor::zeros(&[out_ch]),
        });
        layers.push(Layer::BatchNorm(BatchNormParams::new(out_ch, config.bn_momentum)));
        layers.push(Layer::Relu);
        if config.pools_after(i + 1) {
            layers.push(Layer::MaxPool);
        }
        in_ch = out_ch;
    }
    layers.push(Layer::Flatten);
    let mut d = config.flat_features();
    for (i, &m) in config.fc_sizes.iter().enumerate() {
        layers.push(Layer::Linear {
            weight: fill(d, &[d, m]),
            bias: Tensor::zeros(&[m]),
        });
        if i + 1 < config.fc_sizes.len() {
            layers.push(Layer::Relu);
        }
        d = m;
    }
    Ok(Network {
        config: config.clone(),
        layers,
        conv_at,
    })
}

/// Build with weights drawn from N(0, 2 / fan_in) and zero biases.
pub fn build_network<T: Real>(config: &NetworkConfig, seed: u64) -> Result<Network<T>, OwlNetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assemble(config, |fan_in, shape| {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect();
        Tensor::new(shape.to_vec(), data).expect("sized to shape")
    })
}

impl<T: Real> Network<T> {
    /// All weights zero; used as a skeleton when loading checkpoints.
    pub fn zeros(config: &NetworkConfig) -> Result<Self, OwlNetError> {
        assemble(config, |_, shape| Tensor::zeros(shape))
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Layer index of the ReLU that follows conv `conv` (1-based).
    pub fn conv_relu_index(&self, conv: usize) -> Option<usize> {
        let at = *self.conv_at.get(conv.checked_sub(1)?)?;
        Some(at + 2)
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv { weight, bias } => Layer::Conv {
                    weight: weight.cast(),
                    bias: bias.cast(),
                },
                Layer::Linear { weight, bias } => Layer::Linear {
                    weight: weight.cast(),
                    bias: bias.cast(),
                },
                Layer::BatchNorm(p) => Layer::BatchNorm(BatchNormParams {
                    gamma: p.gamma.cast(),
                    beta: p.beta.cast(),
                    running_mean: p.running_mean.cast(),
                    running_var: p.running_var.cast(),
                    momentum: U::from_f64(p.momentum.to_f64().unwrap_or(0.1)).unwrap_or(U::zero()),
                    eps: U::from_f64(p.eps.to_f64().unwrap_or(1e-5)).unwrap_or(U::zero()),
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool => Layer::MaxPool,
                Layer::Flatten => Layer::Flatten,
            })
            .collect();
        Network {
            config: self.config.clone(),
            layers,
            conv_at: self.conv_at.clone(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Trainable parameters followed by buffers, each with a stable name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in l.param_names().iter().zip(l.params()) {
                out.push((format!("layers.{i}.{name}"), t));
            }
            for (name, t) in l.buffers() {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            let names = l.param_names();
            let mut tensors: Vec<(String, &mut Tensor<T>)> = Vec::new();
            match l {
                Layer::BatchNorm(p) => {
                    tensors.push((format!("layers.{i}.gamma"), &mut p.gamma));
                    tensors.push((format!("layers.{i}.beta"), &mut p.beta));
                    tensors.push((format!("layers.{i}.running_mean"), &mut p.running_mean));
                    tensors.push((format!("layers.{i}.running_var"), &mut p.running_var));
                }
                other => {
                    for (name, t) in names.iter().zip(other.params_mut()) {
                        tensors.push((format!("layers.{i}.{name}"), t));
                    }
                }
            }
            out.extend(tensors);
        }
        out
    }

    /// Run `x` [N, 3, H, W] through every layer. `capture` names a layer
    /// index whose output is kept on the tape.
    pub fn forward(&self, x: &Tensor<T>, training: bool, capture: Option<usize>) -> Result<Tape<T>, NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::with_capacity(self.layers.len());
        let mut captured = None;
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(&cur, training)?;
            caches.push(out.cache);
            stats.push(out.stats);
            cur = out.output;
            if capture == Some(i) {
                captured = Some(cur.clone());
            }
        }
        Ok(Tape {
            caches,
            stats,
            logits: cur,
            captured,
        })
    }

    /// Backpropagate `grad_logits` through the tape.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        grad_logits: &Tensor<T>,
        capture: Option<usize>,
    ) -> Result<BackwardResult<T>, NnError> {
        let mut grad = grad_logits.clone();
        let mut per_layer: Vec<Vec<Tensor<T>>> = vec![Vec::new(); self.layers.len()];
        let mut captured = None;
        for i in (0..self.layers.len()).rev() {
            if capture == Some(i) {
                captured = Some(grad.clone());
            }
            let (dx, dparams) = self.layers[i].backward(&tape.caches[i], &grad)?;
            per_layer[i] = dparams;
            grad = dx;
        }
        Ok(BackwardResult {
            param_grads: per_layer.into_iter().flatten().collect(),
            captured,
        })
    }

    /// Fold training-mode batch statistics into the running averages.
    pub fn absorb_stats(&mut self, tape: &Tape<T>) {
        for (layer, stats) in self.layers.iter_mut().zip(&tape.stats) {
            if let (Layer::BatchNorm(p), Some(s)) = (layer, stats) {
                p.absorb(s);
            }
        }
    }

    /// Inference-mode class probabilities, [N, 2].
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let tape = self.forward(x, false, None)?;
        softmax(&tape.logits)
    }

    /// Per-sample output shapes, checked layer by layer without running data.
    pub fn dry_run(&self, batch: usize) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shape = vec![batch, 3, self.config.input_h, self.config.input_w];
        let mut out = vec![shape.clone()];
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerKind;

    #[test]
    fn desk_layer_stack() {
        let net: Network<f32> = build_network(&NetworkConfig::desk(), 1).unwrap();
        let kinds: Vec<_> = net.layers().iter().map(|l| l.kind()).collect();
        assert_eq!(kinds.iter().filter(|&&k| k == LayerKind::Conv).count(), 12);
        assert_eq!(kinds.iter().filter(|&&k| k == LayerKind::BatchNorm).count(), 12);
        assert_eq!(kinds.iter().filter(|&&k| k == LayerKind::MaxPool).count(), 6);
        assert_eq!(kinds.iter().filter(|&&k| k == LayerKind::Linear).count(), 4);
        assert_eq!(kinds.last(), Some(&LayerKind::Linear));
        let shapes = net.dry_run(2).unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![2, 2]);
        assert!(shapes.contains(&vec![2, 32, 3, 2]));
        assert!(shapes.contains(&vec![2, 192]));
        assert_eq!(net.layers()[net.conv_relu_index(12).unwrap()].kind(), LayerKind::Relu);
        assert_eq!(net.conv_relu_index(13), None);
        assert_eq!(net.conv_relu_index(0), None);
    }

    #[test]
    fn init_is_seeded() {
        let a: Network<f32> = build_network(&NetworkConfig::desk(), 7).unwrap();
        let b: Network<f32> = build_network(&NetworkConfig::desk(), 7).unwrap();
        let c: Network<f32> = build_network(&NetworkConfig::desk(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_variance_follows_fan_in() {
        let net: Network<f64> = build_network(&NetworkConfig::desk(), 3).unwrap();
        let Some(Layer::Linear { weight, bias }) = net.layers().iter().find(|l| l.kind() == LayerKind::Linear) else {
            panic!("no fc layer");
        };
        assert_eq!(weight.shape(), [192, 256]);
        let var = weight.data().iter().map(|v| v * v).sum::<f64>() / weight.len() as f64;
        assert!((var - 2.0 / 192.0).abs() < 0.1 * 2.0 / 192.0, "var {var}");
        assert!(bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let net: Network<f32> = build_network(&NetworkConfig::desk(), 2).unwrap();
        let x = Tensor::from_f64(&[1, 3, 192, 128], &vec![0.25; 3 * 192 * 128]).unwrap();
        let p = net.predict(&x).unwrap();
        assert_eq!(p.shape(), [1, 2]);
        assert!((p.data()[0] + p.data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn named_tensors_cover_params_and_buffers() {
        let mut net: Network<f32> = build_network(&NetworkConfig::desk(), 2).unwrap();
        let names: Vec<String> = net.named_tensors().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = net.named_tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 12 * 2 + 12 * 4 + 4 * 2);
        let mut a = names.clone();
        let mut b = names_mut;
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!(names.contains(&"layers.1.running_var".to_string()));
    }
}
