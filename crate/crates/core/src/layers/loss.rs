use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch, and its gradient
/// `(softmax − onehot) / N` with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let [n, k] = logits.shape()[..] else {
        return Err(Error::RankMismatch {
            op: "softmax_cross_entropy",
            expected: 2,
            got: logits.rank(),
        });
    };
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: vec![n],
            right: vec![labels.len()],
        });
    }
    let inv_n = T::one() / T::lit(n as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum_exp = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
        let log_z = max + sum_exp.ln();
        loss = loss + (log_z - row[label]);
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let target = if j == label { T::one() } else { T::zero() };
            grad.push((p - target) * inv_n);
        }
    }
    Ok((loss * inv_n, Tensor::new(vec![n, k], grad)?))
}
