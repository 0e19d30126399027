use super::Matrix;
use crate::error::{Error, Result};

/// Worst disagreement found in one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEntry {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn worst(&self) -> Option<&GradEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` gradients against central differences of `loss_fn`
/// taken around `params`, one entry at a time.
///
/// `loss_fn` must be deterministic; it receives the full parameter list with
/// a single entry perturbed by ±h.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[(String, Matrix)],
    analytic: &[Matrix],
    h: f64,
    tol: f64,
) -> Result<GradReport>
where
    F: FnMut(&[Matrix]) -> Result<f64>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape(
            "finite_diff_check",
            format!(
                "{} parameters but {} gradients",
                params.len(),
                analytic.len()
            ),
        ));
    }
    let mut work: Vec<Matrix> = params.iter().map(|(_, m)| m.clone()).collect();
    let mut entries = Vec::with_capacity(params.len());
    for (p, ((name, value), grad)) in params.iter().zip(analytic).enumerate() {
        if value.shape() != grad.shape() {
            return Err(Error::shape(
                "finite_diff_check",
                format!(
                    "{name}: parameter {:?} vs gradient {:?}",
                    value.shape(),
                    grad.shape()
                ),
            ));
        }
        let mut entry = GradEntry {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..value.len() {
            let orig = value.data()[i];
            work[p].data_mut()[i] = orig + h;
            let plus = loss_fn(&work)?;
            work[p].data_mut()[i] = orig - h;
            let minus = loss_fn(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[i];
            let err = relative_error(a, numeric);
            if i == 0 || err > entry.max_rel_error {
                entry.max_rel_error = err;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        entries.push(entry);
    }
    let max_rel_error = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    Ok(GradReport {
        entries,
        max_rel_error,
        tolerance: tol,
        passed: max_rel_error <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_sq_norm(ps: &[Matrix]) -> Result<f64> {
        Ok(ps.iter().flat_map(|m| m.data()).map(|x| 0.5 * x * x).sum())
    }

    #[test]
    fn quadratic_passes() {
        let theta = Matrix::from_rows(&[vec![0.3, -1.2, 2.5]]).unwrap();
        let report = finite_diff_check(
            half_sq_norm,
            &[("theta".into(), theta.clone())],
            &[theta],
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn doubled_gradient_fails() {
        let theta = Matrix::from_rows(&[vec![0.3, -1.2, 2.5]]).unwrap();
        let bad = theta.scale(2.0);
        let report =
            finite_diff_check(half_sq_norm, &[("theta".into(), theta)], &[bad], 1e-5, 1e-4)
                .unwrap();
        assert!(!report.passed);
        assert!((report.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn bad_step_rejected() {
        let t = Matrix::zeros(1, 1);
        assert!(
            finite_diff_check(half_sq_norm, &[("t".into(), t.clone())], &[t], 0.0, 1e-4).is_err()
        );
    }
}
