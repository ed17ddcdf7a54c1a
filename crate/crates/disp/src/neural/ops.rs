//! Primitive differentiable operations. Every forward returns whatever the
//! matching backward needs; backwards accumulate parameter gradients into a
//! same-shaped container and return the input gradient.

use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Scalar;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Dense layer, `w` is input×output; bias is a 1×output row.
#[derive(Debug, Clone)]
pub struct LinearLayer<T> {
    pub w: Array2<T>,
    pub b: Option<Array2<T>>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn random(
        input: usize,
        output: usize,
        bias: bool,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        LinearLayer {
            w: random_normal(input, output, std, rng),
            b: bias.then(|| Array2::zeros((1, output))),
        }
    }

    pub fn zeros_like(&self) -> Self {
        LinearLayer {
            w: Array2::zeros(self.w.raw_dim()),
            b: self.b.as_ref().map(|b| Array2::zeros(b.raw_dim())),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.w);
        if let Some(b) = &self.b {
            y += b;
        }
        y
    }

    pub fn backward(&self, x: &Array2<T>, dy: &Array2<T>, grads: &mut Self) -> Array2<T> {
        grads.w += &x.t().dot(dy);
        if let Some(db) = grads.b.as_mut() {
            *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        dy.dot(&self.w.t())
    }
}

/// Row-wise layer normalization with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm<T> {
    pub gain: Array2<T>,
    pub bias: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn identity(d: usize) -> Self {
        LayerNorm {
            gain: Array2::ones((1, d)),
            bias: Array2::zeros((1, d)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        LayerNorm {
            gain: Array2::zeros(self.gain.raw_dim()),
            bias: Array2::zeros(self.bias.raw_dim()),
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let (rows, cols) = x.dim();
        let eps = T::of(LAYER_NORM_EPS);
        let inv_cols = T::of(1.0 / cols as f64);
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_cols;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                * inv_cols;
            let inv = (var + eps).sqrt().recip();
            inv_std.push(inv);
            for c in 0..cols {
                xhat[[r, c]] = (x[[r, c]] - mean) * inv;
            }
        }
        let mut y = xhat.clone();
        y *= &self.gain;
        y += &self.bias;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        dy: &Array2<T>,
        cache: &LayerNormCache<T>,
        grads: &mut Self,
    ) -> Array2<T> {
        let (rows, cols) = dy.dim();
        let inv_cols = T::of(1.0 / cols as f64);
        grads.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        grads.gain += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.gain;
        let mut dx = Array2::zeros((rows, cols));
        for r in 0..rows {
            let mut mean_d = T::zero();
            let mut mean_dx = T::zero();
            for c in 0..cols {
                mean_d = mean_d + dxhat[[r, c]];
                mean_dx = mean_dx + dxhat[[r, c]] * cache.xhat[[r, c]];
            }
            mean_d = mean_d * inv_cols;
            mean_dx = mean_dx * inv_cols;
            let inv = cache.inv_std[r];
            for c in 0..cols {
                dx[[r, c]] = inv * (dxhat[[r, c]] - mean_d - cache.xhat[[r, c]] * mean_dx);
            }
        }
        dx
    }
}

const GELU_C1: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C2: f64 = 0.044_715;

pub fn gelu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let c1 = T::of(GELU_C1);
    let c2 = T::of(GELU_C2);
    let half = T::of(0.5);
    x.mapv(|v| {
        let u = c1 * (v + c2 * v * v * v);
        half * v * (T::one() + u.tanh())
    })
}

pub fn gelu_backward<T: Scalar>(pre: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let c1 = T::of(GELU_C1);
    let c2 = T::of(GELU_C2);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |g, &v| {
        let u = c1 * (v + c2 * v * v * v);
        let t = u.tanh();
        let sech2 = T::one() - t * t;
        let du = c1 * (T::one() + three * c2 * v * v);
        *g = *g * (half * (T::one() + t) + half * v * sech2 * du);
    });
    dx
}

/// Softmax over each row, restricted to `allowed` key columns. Rows with no
/// allowed key become all-zero (and stay zero through the backward pass).
pub fn masked_softmax<T: Scalar>(scores: &Array2<T>, allowed: &[bool]) -> Array2<T> {
    let (rows, cols) = scores.dim();
    debug_assert_eq!(cols, allowed.len());
    let mut probs = Array2::zeros((rows, cols));
    for r in 0..rows {
        let mut max = T::neg_infinity();
        for c in 0..cols {
            if allowed[c] && scores[[r, c]] > max {
                max = scores[[r, c]];
            }
        }
        if max == T::neg_infinity() {
            continue;
        }
        let mut sum = T::zero();
        for c in 0..cols {
            if allowed[c] {
                let e = (scores[[r, c]] - max).exp();
                probs[[r, c]] = e;
                sum = sum + e;
            }
        }
        let inv = sum.recip();
        for c in 0..cols {
            probs[[r, c]] = probs[[r, c]] * inv;
        }
    }
    probs
}

pub fn masked_softmax_backward<T: Scalar>(probs: &Array2<T>, dprobs: &Array2<T>) -> Array2<T> {
    let (rows, cols) = probs.dim();
    let mut dscores = Array2::zeros((rows, cols));
    for r in 0..rows {
        let mut dot = T::zero();
        for c in 0..cols {
            dot = dot + probs[[r, c]] * dprobs[[r, c]];
        }
        for c in 0..cols {
            dscores[[r, c]] = probs[[r, c]] * (dprobs[[r, c]] - dot);
        }
    }
    dscores
}

/// Inverted dropout; mask entries are 0 or 1/(1-p).
pub fn dropout_mask<T: Scalar>(
    rows: usize,
    cols: usize,
    p: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<T> {
    use rand::Rng as _;
    let keep = T::of(1.0 / (1.0 - p));
    let mut mask = Array2::zeros((rows, cols));
    for v in mask.iter_mut() {
        if rng.random::<f64>() >= p {
            *v = keep;
        }
    }
    mask
}

pub fn random_normal<T: Scalar>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<T> {
    let normal = Normal::new(0.0f64, std).expect("valid std");
    let mut out = Array2::zeros((rows, cols));
    for v in out.iter_mut() {
        *v = T::of(normal.sample(rng));
    }
    out
}
