use crate::error::{Error, Result};

/// Central-difference gradient `(f(θ + h e_k) - f(θ - h e_k)) / 2h`.
pub fn central_gradient<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::argument(format!("step must be positive, got {h}")));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        probe[k] = theta[k] + h;
        let plus = f(&probe)?;
        probe[k] = theta[k] - h;
        let minus = f(&probe)?;
        probe[k] = theta[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::domain(format!(
                "objective is not finite around coordinate {k}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Relative error of one analytic derivative against its numeric estimate.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

/// Largest relative error between `analytic` and the central-difference
/// gradient of `f` at `theta`.
pub fn finite_diff_check<F>(f: F, theta: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != theta.len() {
        return Err(Error::argument(format!(
            "{} analytic derivatives for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }
    let numeric = central_gradient(f, theta, h)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        let err = finite_diff_check(|t| Ok(t[0] * t[0]), &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = finite_diff_check(|_| Ok(7.0), &[1.0, -2.0], &[0.0, 0.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_probe_is_a_domain_error() {
        let res = finite_diff_check(|t| Ok(t[0].ln()), &[0.0], &[1.0], 1e-5);
        assert!(matches!(res, Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_bad_step_and_length() {
        assert!(finite_diff_check(|_| Ok(0.0), &[1.0], &[0.0], 0.0).is_err());
        assert!(finite_diff_check(|_| Ok(0.0), &[1.0], &[], 1e-5).is_err());
    }
}
