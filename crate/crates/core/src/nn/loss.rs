use ndarray::{Array2, Axis};

use crate::nn::Float;

#[inline]
pub fn sigmoid<F: Float>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Summed binary cross-entropy on logits and its gradient.
pub fn bce_with_logits<F: Float>(logits: &[F], labels: &[F]) -> (f64, Vec<F>) {
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let zf = z.as_f64();
            let yf = y.as_f64();
            loss += zf.max(0.0) - yf * zf + (-zf.abs()).exp().ln_1p();
            sigmoid(z) - y
        })
        .collect();
    (loss, grad)
}

/// Summed weighted softmax cross-entropy over rows; returns the gradient
/// `w_i (softmax(z_i) - onehot(t_i))` for each row.
pub fn softmax_cross_entropy<F: Float>(logits: &Array2<F>, targets: &[usize], weights: &[F]) -> (f64, Array2<F>) {
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for ((mut row, &t), &w) in grad.axis_iter_mut(Axis(0)).zip(targets).zip(weights) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        row.iter_mut().for_each(|v| {
            *v = (*v - max).exp();
            sum += *v;
        });
        let tiny = F::min_positive_value();
        row.iter_mut().for_each(|v| {
            *v /= sum;
            if *v < tiny {
                *v = F::zero();
            }
        });
        loss += -w.as_f64() * row[t].as_f64().max(f64::MIN_POSITIVE).ln();
        row[t] -= F::one();
        row.iter_mut().for_each(|v| *v *= w);
    }
    (loss, grad)
}
