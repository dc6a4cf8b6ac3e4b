//! Central finite-difference gradient checking. Test oracle for every
//! analytic backward pass in the crate.

use super::Tensor;
use crate::error::{DemvcError, Result};

/// Compares `analytic` gradients against central finite differences of
/// `loss_fn` around `params`. Returns the maximum relative error
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12) over all
/// parameter components.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[Tensor],
    analytic: &[Tensor],
    step: f64,
) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(DemvcError::Usage(
            "finite difference step must be > 0".into(),
        ));
    }
    if params.len() != analytic.len() {
        return Err(DemvcError::dimension(
            "finite_diff_check",
            &[params.len()],
            &[analytic.len()],
        ));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel = 0.0f64;
    for t in 0..params.len() {
        if params[t].shape() != analytic[t].shape() {
            return Err(DemvcError::dimension(
                "finite_diff_check",
                params[t].shape(),
                analytic[t].shape(),
            ));
        }
        for i in 0..params[t].len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + step;
            let plus = loss_fn(&work)?;
            work[t].data_mut()[i] = orig - step;
            let minus = loss_fn(&work)?;
            work[t].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(DemvcError::Evaluation(
                    "loss function returned a non-finite value during finite differencing".into(),
                ));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[t].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_is_exact_up_to_roundoff() {
        // loss = 0.5 * ||p||^2 at p = [3]: analytic gradient 3
        let p = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let analytic = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let err = finite_diff_check(
            |params: &[Tensor]| Ok(0.5 * params[0].data().iter().map(|v| v * v).sum::<f64>()),
            &[p],
            &[analytic],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let p = Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        let analytic = Tensor::zeros(&[3]);
        let err = finite_diff_check(|_: &[Tensor]| Ok(42.0), &[p], &[analytic], 1e-5).unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn non_finite_loss_is_an_evaluation_error() {
        let p = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let analytic = Tensor::zeros(&[1]);
        let res = finite_diff_check(|_: &[Tensor]| Ok(f64::NAN), &[p], &[analytic], 1e-5);
        assert!(matches!(res, Err(DemvcError::Evaluation(_))));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let p = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let wrong = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let err = finite_diff_check(
            |params: &[Tensor]| Ok(params[0].data()[0].powi(2)),
            &[p],
            &[wrong],
            1e-5,
        )
        .unwrap();
        assert!(err > 0.5, "err = {err}");
    }
}
