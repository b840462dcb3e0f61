//! Central finite differences as an independent check on analytic gradients.

/// Denominator floor for relative error. Central differences at step 1e-5
/// on an O(1) loss carry round-off near 1e-11, so below this magnitude the
/// error is measured against the floor instead of the gradient itself.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

impl FdReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central-difference gradient of `f` at `point`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], eps: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let plus = f(&x);
            x[i] = orig - eps;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Compare an analytic gradient of `f` at `point` against central differences.
pub fn finite_difference_check(
    f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
) -> FdReport {
    assert_eq!(point.len(), analytic.len(), "gradient length must match the point");
    let numeric = central_difference(f, point, eps);
    compare(analytic, &numeric)
}

/// Summarize element-wise relative errors between two gradients.
pub fn compare(analytic: &[f64], numeric: &[f64]) -> FdReport {
    let mut report = FdReport {
        max_rel_error: 0.0,
        mean_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: analytic.first().copied().unwrap_or(0.0),
        worst_numeric: numeric.first().copied().unwrap_or(0.0),
        checked: analytic.len(),
    };
    let mut total = 0.0;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(a, n);
        total += e;
        if e > report.max_rel_error || e.is_nan() {
            report.max_rel_error = e;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = n;
        }
    }
    if !analytic.is_empty() {
        report.mean_rel_error = total / analytic.len() as f64;
    }
    report
}
