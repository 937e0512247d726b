/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Checks the gradient returned by `f` against central finite differences.
///
/// `f` maps a parameter vector to `(loss, analytic gradient)`. Each coordinate
/// is perturbed by `±eps`; the relative error is
/// `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn grad_check<F>(mut f: F, params: &[f64], eps: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(params);
    let mut work = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_rel = 0.0f64;
    let mut worst = 0;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let up = f(&work).0;
        work[i] = orig - eps;
        let down = f(&work).0;
        work[i] = orig;
        let n = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
        numeric.push(n);
    }
    GradCheckReport {
        max_relative_error: max_rel,
        worst_index: worst,
        analytic,
        numeric,
    }
}
