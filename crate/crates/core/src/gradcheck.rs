//! Central finite-difference gradient checking in `f64`.

use crate::tensor::{Graph, Result, Tensor, Var};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-4;
/// Gradients with magnitude below this are compared absolutely.
pub const NEAR_ZERO: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / |analytic|` over elements with `|analytic| >= NEAR_ZERO`.
    pub max_rel_error: f64,
    /// Largest `|analytic - numeric|` over elements with `|analytic| < NEAR_ZERO`.
    pub max_abs_error_near_zero: f64,
    pub checked: usize,
    /// `(input, element, analytic, numeric)` of the worst relative mismatch.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_rel_error < rel_tol && self.max_abs_error_near_zero < abs_tol
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.max_abs_error_near_zero = self.max_abs_error_near_zero.max(other.max_abs_error_near_zero);
        self.checked += other.checked;
    }

    pub(crate) fn record(&mut self, input: usize, element: usize, analytic: f64, numeric: f64) {
        let diff = (analytic - numeric).abs();
        if analytic.abs() < NEAR_ZERO {
            self.max_abs_error_near_zero = self.max_abs_error_near_zero.max(diff);
        } else {
            let rel = diff / analytic.abs();
            if rel > self.max_rel_error || self.worst.is_none() {
                self.max_rel_error = self.max_rel_error.max(rel);
                self.worst = Some((input, element, analytic, numeric));
            }
        }
        self.checked += 1;
    }
}

/// Compares reverse-mode gradients of the scalar produced by `build` against
/// central differences, perturbing every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (ii, grads) in analytic.iter().enumerate() {
        for e in 0..inputs[ii].numel() {
            let orig = work[ii].data()[e];
            work[ii].data_mut()[e] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[ii].data_mut()[e] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[ii].data_mut()[e] = orig;
            report.record(ii, e, grads[e], (plus - minus) / (2.0 * FD_STEP));
        }
    }
    Ok(report)
}
