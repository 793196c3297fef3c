use crate::nn::Parameters;

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub checked: usize,
}

/// Denominator floor for the relative error, so that near-zero gradients are
/// compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Perturbs every scalar parameter of `model` by `±eps`, evaluates `loss`
/// and compares `(L(θ+ε) − L(θ−ε)) / 2ε` with the matching entry of
/// `analytic`. Both models must share a parameter layout.
pub fn grad_check<M, L>(model: &M, analytic: &M, loss: L, eps: f64) -> GradCheckReport
where
    M: Parameters<f64> + Clone,
    L: Fn(&M) -> f64,
{
    let mut layout: Vec<(String, usize)> = Vec::new();
    let mut grads: Vec<f64> = Vec::new();
    analytic.visit("", &mut |name, _, data| {
        layout.push((name.to_string(), data.len()));
        grads.extend_from_slice(data);
    });

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        checked: 0,
    };
    let mut probe = model.clone();
    let mut flat = 0;
    for (name, len) in &layout {
        for j in 0..*len {
            let numeric = {
                let l_plus = perturbed(&mut probe, name, j, eps, &loss);
                let l_minus = perturbed(&mut probe, name, j, -eps, &loss);
                (l_plus - l_minus) / (2.0 * eps)
            };
            let err = relative_error(grads[flat], numeric);
            if err > report.max_relative_error || report.checked == 0 {
                report.max_relative_error = err;
                report.worst_parameter = format!("{name}[{j}]");
            }
            report.checked += 1;
            flat += 1;
        }
    }
    report
}

fn perturbed<M, L>(probe: &mut M, name: &str, index: usize, delta: f64, loss: &L) -> f64
where
    M: Parameters<f64>,
    L: Fn(&M) -> f64,
{
    let mut original = 0.0;
    probe.visit_mut("", &mut |n, data| {
        if n == name {
            original = data[index];
            data[index] += delta;
        }
    });
    let l = loss(probe);
    probe.visit_mut("", &mut |n, data| {
        if n == name {
            data[index] = original;
        }
    });
    l
}
