//! Loss primitives shared by the three heads: softmax cross-entropy over
//! rows and per-dimension mean squared error.

use ndarray::Array2;

use super::Scalar;

/// Row-wise softmax (no masking).
pub fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let (rows, cols) = logits.dim();
    let mut probs = Array2::zeros((rows, cols));
    for r in 0..rows {
        let mut max = T::neg_infinity();
        for c in 0..cols {
            if logits[[r, c]] > max {
                max = logits[[r, c]];
            }
        }
        let mut sum = T::zero();
        for c in 0..cols {
            let e = (logits[[r, c]] - max).exp();
            probs[[r, c]] = e;
            sum = sum + e;
        }
        let inv = sum.recip();
        for c in 0..cols {
            probs[[r, c]] = probs[[r, c]] * inv;
        }
    }
    probs
}

/// Mean softmax cross-entropy over the rows where `active` is true.
/// Returns the loss and the gradient w.r.t. the logits (zero on inactive
/// rows). The gradient already carries the 1/active_count normalization.
pub fn token_cross_entropy<T: Scalar>(
    logits: &Array2<T>,
    labels: &[usize],
    active: &[bool],
) -> (f64, Array2<T>) {
    let (rows, cols) = logits.dim();
    debug_assert_eq!(rows, labels.len());
    debug_assert_eq!(rows, active.len());
    let count = active.iter().filter(|&&a| a).count();
    let mut dlogits = Array2::zeros((rows, cols));
    if count == 0 {
        return (0.0, dlogits);
    }
    let inv_count = T::of(1.0 / count as f64);
    let mut loss = 0.0f64;
    for r in 0..rows {
        if !active[r] {
            continue;
        }
        let label = labels[r];
        debug_assert!(label < cols);
        let mut max = T::neg_infinity();
        for c in 0..cols {
            if logits[[r, c]] > max {
                max = logits[[r, c]];
            }
        }
        let mut sum = T::zero();
        for c in 0..cols {
            sum = sum + (logits[[r, c]] - max).exp();
        }
        let lse = max + sum.ln();
        loss += (lse - logits[[r, label]]).as_f64();
        for c in 0..cols {
            let p = (logits[[r, c]] - lse).exp();
            let target = if c == label { T::one() } else { T::zero() };
            dlogits[[r, c]] = (p - target) * inv_count;
        }
    }
    (loss / count as f64, dlogits)
}

/// Per-dimension MSE for a 1×k prediction against a slice target:
/// loss = ‖pred − target‖² / k. Gradient w.r.t. the prediction.
pub fn mse_per_dim<T: Scalar>(pred: &Array2<T>, target: &[T]) -> (f64, Array2<T>) {
    let k = target.len();
    debug_assert_eq!(pred.dim(), (1, k));
    let inv_k = T::of(1.0 / k as f64);
    let two = T::of(2.0);
    let mut loss = T::zero();
    let mut dpred = Array2::zeros((1, k));
    for c in 0..k {
        let diff = pred[[0, c]] - target[c];
        loss = loss + diff * diff * inv_k;
        dpred[[0, c]] = two * diff * inv_k;
    }
    (loss.as_f64(), dpred)
}
