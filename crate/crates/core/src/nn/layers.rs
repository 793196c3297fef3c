use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::params::{join, visit_array, visit_array_mut};
use crate::nn::{Float, Parameters};

pub(crate) fn normal_array<F: Float, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut R,
) -> Array2<F> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || F::c(dist.sample(rng)))
}

/// Affine map `y = x W + b` applied to each row of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    /// `d_in × d_out`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Float> Linear<F> {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, std: f64, rng: &mut R) -> Self {
        Linear {
            weight: normal_array(d_in, d_out, std, rng),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<F>, dy: ArrayView2<F>, grad: &mut Linear<F>) -> Array2<F> {
        self.backward_params(x, dy, grad);
        dy.dot(&self.weight.t())
    }

    pub fn backward_params(&self, x: ArrayView2<F>, dy: ArrayView2<F>, grad: &mut Linear<F>) {
        general_mat_mul(F::one(), &x.t(), &dy, F::one(), &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
    }
}

impl<F: Float> Parameters<F> for Linear<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        visit_array(&join(prefix, "weight"), &self.weight, f);
        visit_array(&join(prefix, "bias"), &self.bias, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [F])) {
        visit_array_mut(&join(prefix, "weight"), &mut self.weight, f);
        visit_array_mut(&join(prefix, "bias"), &mut self.bias, f);
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row layer normalization with learned gain and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    xhat: Array2<F>,
    inv_std: Vec<F>,
}

impl<F: Float> LayerNorm<F> {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn forward(&self, x: ArrayView2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let d = x.ncols();
        let inv_d = F::c(1.0 / d as f64);
        let eps = F::c(LAYER_NORM_EPS);
        let mut xhat = x.to_owned();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.axis_iter_mut(Axis(0)) {
            let r = row.as_slice_mut().expect("contiguous row");
            let mean = r.iter().copied().sum::<F>() * inv_d;
            let mut var = F::zero();
            for v in r.iter_mut() {
                *v -= mean;
                var += *v * *v;
            }
            let istd = F::one() / (var * inv_d + eps).sqrt();
            r.iter_mut().for_each(|v| *v *= istd);
            inv_std.push(istd);
        }
        let mut y = xhat.clone();
        y *= &self.gamma;
        y += &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<F>, dy: ArrayView2<F>, grad: &mut LayerNorm<F>) -> Array2<F> {
        grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let d = dy.ncols();
        let inv_d = F::c(1.0 / d as f64);
        let gamma = self.gamma.as_slice().expect("contiguous");
        let mut dx = Array2::zeros(dy.raw_dim());
        for (i, mut out) in dx.axis_iter_mut(Axis(0)).enumerate() {
            let o = out.as_slice_mut().expect("contiguous row");
            let dyr = dy.row(i);
            let xh = cache.xhat.row(i);
            let mut mean_g = F::zero();
            let mut mean_gx = F::zero();
            for j in 0..d {
                let g = dyr[j] * gamma[j];
                o[j] = g;
                mean_g += g;
                mean_gx += g * xh[j];
            }
            mean_g *= inv_d;
            mean_gx *= inv_d;
            let istd = cache.inv_std[i];
            for j in 0..d {
                o[j] = istd * (o[j] - mean_g - xh[j] * mean_gx);
            }
        }
        dx
    }
}

impl<F: Float> Parameters<F> for LayerNorm<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        visit_array(&join(prefix, "gamma"), &self.gamma, f);
        visit_array(&join(prefix, "beta"), &self.beta, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [F])) {
        visit_array_mut(&join(prefix, "gamma"), &mut self.gamma, f);
        visit_array_mut(&join(prefix, "beta"), &mut self.beta, f);
    }
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x Φ(x)`.
#[inline]
pub fn gelu<F: Float>(x: F) -> F {
    F::c(0.5) * x * (F::one() + (x * F::c(FRAC_1_SQRT_2)).erf())
}

/// Derivative of [`gelu`]: `Φ(x) + x φ(x)`.
#[inline]
pub fn gelu_grad<F: Float>(x: F) -> F {
    let cdf = F::c(0.5) * (F::one() + (x * F::c(FRAC_1_SQRT_2)).erf());
    let pdf = F::c(FRAC_1_SQRT_2PI) * (F::c(-0.5) * x * x).exp();
    cdf + x * pdf
}

/// [`gelu_grad`] given `y = gelu(x)`, recovering `Φ(x)` as `y / x`.
#[inline]
pub(crate) fn gelu_grad_from_output<F: Float>(x: F, y: F) -> F {
    let cdf = if x == F::zero() { F::c(0.5) } else { y / x };
    cdf + x * F::c(FRAC_1_SQRT_2PI) * (F::c(-0.5) * x * x).exp()
}

/// Inverted-dropout mask: entries are 0 or `1/(1-p)`.
pub(crate) fn dropout_mask<F: Float, R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Array2<F> {
    let keep = F::c(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    })
}

/// In-place numerically stable softmax over each row.
pub(crate) fn softmax_rows<F: Float>(x: &mut Array2<F>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
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
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn gelu_reference_values() {
        assert_abs_diff_eq!(gelu(0.0f64), 0.0);
        assert_abs_diff_eq!(gelu(1.0f64), 0.841_344_746_068_542_9, epsilon = 1e-12);
        assert_abs_diff_eq!(gelu(-1.0f64), -0.158_655_253_931_457_05, epsilon = 1e-12);
        let h = 1e-6;
        for x in [-2.5f64, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_grad(x), fd, epsilon = 1e-8);
            assert_abs_diff_eq!(gelu_grad_from_output(x, gelu(x)), gelu_grad(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let ln = LayerNorm::<f64>::new(4);
        let x = array![[1.0, 2.0, 3.0, 4.0], [10.0, 10.0, 10.0, 14.0]];
        let (y, _) = ln.forward(x.view());
        for row in y.rows() {
            assert_abs_diff_eq!(row.sum(), 0.0, epsilon = 1e-9);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn layer_norm_ignores_uniform_shift() {
        let ln = LayerNorm::<f64>::new(3);
        let x = array![[0.3, -1.0, 2.0]];
        let (a, _) = ln.forward(x.view());
        let (b, _) = ln.forward((&x + 5.0).view());
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut x = array![[1000.0f32, 1000.0], [0.0, 1.0]];
        softmax_rows(&mut x);
        assert_abs_diff_eq!(x[[0, 0]], 0.5);
        assert_abs_diff_eq!(x.row(1).sum(), 1.0, epsilon = 1e-6);
    }
}
