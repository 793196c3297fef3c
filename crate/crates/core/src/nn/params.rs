use ndarray::{Array, Dimension};

use crate::nn::Float;

/// Named access to every trainable array of a model.
///
/// Visiting order is fixed per type, so flattened views of two instances of
/// the same model line up element for element.
pub trait Parameters<F: Float> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [F]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_array<F: Float, D: Dimension>(
    name: &str,
    array: &Array<F, D>,
    f: &mut dyn FnMut(&str, &[usize], &[F]),
) {
    f(name, array.shape(), array.as_slice().expect("parameters are contiguous"));
}

pub(crate) fn visit_array_mut<F: Float, D: Dimension>(
    name: &str,
    array: &mut Array<F, D>,
    f: &mut dyn FnMut(&str, &mut [F]),
) {
    f(name, array.as_slice_mut().expect("parameters are contiguous"));
}

/// Convenience operations shared by every parameterized type.
pub trait ParametersExt<F: Float>: Parameters<F> + Clone {
    /// A copy with every parameter set to zero (gradient buffer).
    fn zeroed(&self) -> Self {
        let mut out = self.clone();
        out.visit_mut("", &mut |_, d| d.fill(F::zero()));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, d| n += d.len());
        n
    }

    fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, d| out.extend_from_slice(d));
        out
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, d| ok &= d.iter().all(|x| x.is_finite()));
        ok
    }

    fn squared_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit("", &mut |_, _, d| {
            s += d.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>()
        });
        s
    }

    fn scale(&mut self, factor: F) {
        self.visit_mut("", &mut |_, d| d.iter_mut().for_each(|x| *x *= factor));
    }

    /// Largest absolute elementwise difference to another instance.
    fn max_abs_diff(&self, other: &Self) -> f64 {
        let a = self.flatten();
        let b = other.flatten();
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

impl<F: Float, T: Parameters<F> + Clone> ParametersExt<F> for T {}
