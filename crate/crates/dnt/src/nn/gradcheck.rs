//! Central finite-difference gradient checking.

/// Default perturbation step for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of one gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Worst relative error over all checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate index attaining the worst error.
    pub worst_coordinate: usize,
    /// Number of coordinates compared.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Relative error between an analytic and a numeric derivative:
/// |a - n| / max(|a|, |n|, 1e-8).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` at `x`.
///
/// Each coordinate is perturbed by ±`step` in place (and restored), so `f`
/// observes the same buffer throughout. `analytic` must hold one derivative
/// per coordinate of `x`.
pub fn check_gradient<F>(
    mut f: F,
    x: &mut [f64],
    analytic: &[f64],
    step: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "one analytic derivative per coordinate");
    let mut max_rel_error = 0.0;
    let mut worst_coordinate = 0;
    for i in 0..x.len() {
        let saved = x[i];
        x[i] = saved + step;
        let plus = f(x);
        x[i] = saved - step;
        let minus = f(x);
        x[i] = saved;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > max_rel_error {
            max_rel_error = err;
            worst_coordinate = i;
        }
    }
    GradCheckReport { max_rel_error, worst_coordinate, checked: x.len() }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Power-of-two inputs and step make the identity difference quotient
    // exact in binary floating point.
    #[test]
    fn identity_op_has_zero_error() {
        let mut x = [0.25, 0.5, 1.0];
        let analytic = [1.0, 1.0, 1.0];
        let report =
            check_gradient(|v: &[f64]| v.iter().sum(), &mut x, &analytic, 0.00000762939453125);
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn sign_flipped_backward_reports_error_two() {
        // f = 3x^2 at x = 1: numeric gradient 6, corrupted analytic -6.
        let mut x = [1.0];
        let analytic = [-6.0];
        let report = check_gradient(|v: &[f64]| 3.0 * v[0] * v[0], &mut x, &analytic, DEFAULT_STEP);
        assert!((report.max_rel_error - 2.0).abs() < 1e-6, "got {}", report.max_rel_error);
    }

    #[test]
    fn quadratic_gradient_is_accurate() {
        let mut x = [0.3, -0.7, 1.2];
        let analytic: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let report =
            check_gradient(|v: &[f64]| v.iter().map(|a| a * a).sum(), &mut x, &analytic, DEFAULT_STEP);
        assert!(report.passes(1e-9));
    }
}
