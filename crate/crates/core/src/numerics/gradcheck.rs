/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor. Central differences at [`FD_STEP`] carry truncation
/// error around 1e-10, so entries smaller than this are judged on absolute
/// error instead of blowing the relative error up.
pub const REL_FLOOR: f64 = 1e-5;

/// Checks `loss_fn`'s analytic gradient at `params` against central
/// differences with step [`FD_STEP`].
///
/// `loss_fn` returns `(loss, gradient)`; only the gradient at the unperturbed
/// point is used. The relative error per entry is
/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], tolerance: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_fn(params);
    assert_eq!(
        analytic.len(),
        params.len(),
        "gradient length must match params"
    );
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        tolerance,
        passed: true,
    };
    let mut p = params.to_vec();
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = loss_fn(&p).0;
        p[i] = orig - FD_STEP;
        let down = loss_fn(&p).0;
        p[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel_error || !rel.is_finite() {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error <= tolerance;
    report
}
