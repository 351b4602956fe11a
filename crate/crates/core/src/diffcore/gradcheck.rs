use super::DiffError;

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference<F>(f: F, point: &[f64], step: f64) -> Result<Vec<f64>, DiffError>
where
    F: Fn(&[f64]) -> Result<f64, DiffError>,
{
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = finite(f(&x)?, Some(i))?;
        x[i] = orig - step;
        let down = finite(f(&x)?, Some(i))?;
        x[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Compares an analytic gradient against central differences.
///
/// `scalar_fn` returns the value and its analytic gradient at a point. The
/// result is `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(scalar_fn: F, point: &[f64], step: f64) -> Result<f64, DiffError>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>), DiffError>,
{
    if !(step > 0.0 && step <= 1e-2) {
        return Err(DiffError::InvalidArgument {
            op: "grad_check",
            reason: format!("step {step} outside (0, 1e-2]"),
        });
    }
    let (value, analytic) = scalar_fn(point)?;
    finite(value, None)?;
    if analytic.len() != point.len() {
        return Err(DiffError::Shape {
            op: "grad_check",
            lhs: vec![analytic.len()],
            rhs: vec![point.len()],
        });
    }
    let numeric = central_difference(|x| scalar_fn(x).map(|r| r.0), point, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}

fn finite(value: f64, coord: Option<usize>) -> Result<f64, DiffError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(DiffError::NonFinite { value, coord })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = grad_check(|x| Ok((x[0] * x[0], vec![2.0 * x[0]])), &[3.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn dead_parameter_has_zero_error() {
        let f = |x: &[f64]| Ok((x[0].sin(), vec![x[0].cos(), 0.0]));
        let err = grad_check(f, &[0.3, 7.0], 1e-5).unwrap();
        assert!(err < 1e-8);
        let numeric = central_difference(|x| Ok(x[0].sin()), &[0.3, 7.0], 1e-5).unwrap();
        assert_eq!(numeric[1], 0.0);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let f = |x: &[f64]| Ok((x[0].ln(), vec![1.0 / x[0]]));
        assert!(matches!(
            grad_check(f, &[-1.0], 1e-5),
            Err(DiffError::NonFinite { .. })
        ));
    }

    #[test]
    fn step_must_be_small_and_positive() {
        let f = |x: &[f64]| Ok((x[0], vec![1.0]));
        assert!(grad_check(f, &[1.0], 0.0).is_err());
        assert!(grad_check(f, &[1.0], 0.1).is_err());
    }
}
