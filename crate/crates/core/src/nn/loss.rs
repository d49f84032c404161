//! Softmax head with mean cross-entropy loss.

use super::{NnError, Real, Tensor};

#[derive(Debug, Clone)]
pub struct SoftmaxCrossEntropy<T> {
    pub loss: T,
    pub probs: Tensor<T>,
    /// `(probs - onehot) / N`
    pub grad_logits: Tensor<T>,
}

/// Row-wise softmax over [N, K] logits, stabilized by subtracting the row max.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let k = match *logits.shape() {
        [_, k] if k > 0 => k,
        _ => return Err(NnError::Shape(format!("softmax needs [N, K] logits, got {:?}", logits.shape()))),
    };
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<SoftmaxCrossEntropy<T>, NnError> {
    let probs = softmax(logits)?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(NnError::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::LabelOutOfRange { label: bad, classes: k });
    }
    let nf = T::from_usize(n).expect("batch size fits");
    let mut grad = probs.data().to_vec();
    let mut loss = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let p = probs.data()[i * k + label];
        loss = loss - p.max(T::min_positive_value()).ln();
        grad[i * k + label] = grad[i * k + label] - T::one();
    }
    for g in &mut grad {
        *g = *g / nf;
    }
    Ok(SoftmaxCrossEntropy {
        loss: loss / nf,
        grad_logits: Tensor::new(vec![n, k], grad)?,
        probs,
    })
}
