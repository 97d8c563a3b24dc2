//! Best linear predictor `t̂ = argmin_t E[ℓ(tᵀx; y)]` and its risk `R_lin`.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::Result;
use crate::linalg::{lstsq, norm, Matrix};
use crate::loss::LossKind;

pub const DEFAULT_LINEAR_TOL: f64 = 1e-10;
const MAX_NEWTON_ITERS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    /// Coefficients; with a bias the last entry is the intercept.
    pub t_hat: Vec<f64>,
    pub risk: f64,
    /// Norm of the risk gradient at `t_hat`.
    pub grad_residual: f64,
    pub with_bias: bool,
    /// False when the iteration cap was hit before the tolerance, e.g. on
    /// separable data where the logistic infimum is not attained.
    pub attained: bool,
    pub iterations: usize,
}

impl LinearFit {
    /// The coefficients multiplying `x`, without the intercept.
    pub fn slope(&self) -> &[f64] {
        if self.with_bias {
            &self.t_hat[..self.t_hat.len() - 1]
        } else {
            &self.t_hat
        }
    }
}

fn features(data: &Dataset, with_bias: bool) -> Matrix {
    let d = data.d_x();
    let cols = d + usize::from(with_bias);
    Matrix::from_fn(data.len(), cols, |i, j| if j < d { data.x(i)[j] } else { 1.0 })
}

/// Risk and gradient of `t ↦ E[ℓ(tᵀx̃; y)]` on the given feature matrix.
fn linear_objective(feats: &Matrix, labels: &[f64], loss: LossKind, t: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = labels.len() as f64;
    let preds = feats.matvec(t);
    let mut value = 0.0;
    let mut weights = Vec::with_capacity(labels.len());
    for (p, y) in preds.iter().zip(labels) {
        let e = loss.eval(*p, *y)?;
        value += e.value;
        weights.push(e.d1 / n);
    }
    Ok((value / n, feats.tr_matvec(&weights)))
}

/// Risk of an explicitly supplied linear predictor.
pub fn linear_risk(data: &Dataset, loss: LossKind, t: &[f64], with_bias: bool) -> Result<f64> {
    Ok(linear_objective(&features(data, with_bias), data.labels(), loss, t)?.0)
}

pub fn fit_linear(data: &Dataset, loss: LossKind, with_bias: bool, tol: f64) -> Result<LinearFit> {
    loss.validate_labels(data.labels())?;
    let feats = features(data, with_bias);
    match loss {
        LossKind::Squared => {
            let t = lstsq(&feats, data.labels())?;
            let (risk, g) = linear_objective(&feats, data.labels(), loss, &t)?;
            Ok(LinearFit {
                t_hat: t,
                risk,
                grad_residual: norm(&g),
                with_bias,
                attained: true,
                iterations: 1,
            })
        }
        LossKind::Logistic => newton_fit(&feats, data.labels(), loss, with_bias, tol),
    }
}

/// Damped Newton with Armijo backtracking; falls back to the negative
/// gradient whenever the Newton direction is not a descent direction.
fn newton_fit(feats: &Matrix, labels: &[f64], loss: LossKind, with_bias: bool, tol: f64) -> Result<LinearFit> {
    let n = labels.len() as f64;
    let dim = feats.cols();
    let mut t = vec![0.0; dim];
    let (mut value, mut grad) = linear_objective(feats, labels, loss, &t)?;
    let mut iterations = 0;
    while norm(&grad) > tol && iterations < MAX_NEWTON_ITERS {
        iterations += 1;
        let mut hess = Matrix::zeros(dim, dim);
        let preds = feats.matvec(&t);
        for (i, (p, y)) in preds.iter().zip(labels).enumerate() {
            let c = loss.eval(*p, *y)?.d2 / n;
            let x = feats.row(i);
            for a in 0..dim {
                for b in 0..dim {
                    hess[(a, b)] += c * x[a] * x[b];
                }
            }
        }
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut dir = lstsq(&hess, &neg_grad)?;
        let mut slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if !(slope < 0.0) {
            dir = neg_grad;
            slope = -norm(&grad).powi(2);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = t.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (v, g) = linear_objective(feats, labels, loss, &trial)?;
            if v <= value + 1e-4 * step * slope {
                t = trial;
                value = v;
                grad = g;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let residual = norm(&grad);
    // Every margin positive means `t` separates the data, so the infimum is
    // only approached along a ray even if the gradient became tiny.
    let separates = feats
        .matvec(&t)
        .iter()
        .zip(labels)
        .all(|(p, y)| p * y > 0.0);
    Ok(LinearFit {
        t_hat: t,
        risk: value,
        grad_residual: residual,
        with_bias,
        attained: residual <= tol && !separates,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motivating::prop1_dataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn six_point_linear_risk_closed_form() {
        for rho in [0.1, 0.5, 1.0, 1.25f64.sqrt()] {
            let fit = fit_linear(&prop1_dataset(rho), LossKind::Squared, true, DEFAULT_LINEAR_TOL).unwrap();
            assert!((fit.risk - 8.0 * rho * rho / 15.0).abs() < 1e-10);
            assert!(fit.grad_residual <= 1e-12);
        }
    }

    #[test]
    fn exact_linear_data() {
        let xs = [1.0, -2.0, 3.5, 0.25];
        let ys: Vec<f64> = xs.iter().map(|x| 1.7 * x).collect();
        let fit = fit_linear(&Dataset::scalar(&xs, &ys).unwrap(), LossKind::Squared, false, 1e-10).unwrap();
        assert!(fit.risk < 1e-28);
        assert!((fit.t_hat[0] - 1.7).abs() < 1e-14);
    }

    #[test]
    fn three_point_affine_fit() {
        let data = Dataset::scalar(&[1.0, 2.5, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        let fit = fit_linear(&data, LossKind::Squared, true, 1e-10).unwrap();
        assert!((fit.risk - 0.3205).abs() < 1e-4);
        assert_eq!(fit.slope().len(), 1);
    }

    fn noisy_logistic(seed: u64, n: usize, d: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        let y = (0..n)
            .map(|i| {
                let s: f64 = x.row(i).iter().sum::<f64>() + rng.gen_range(-1.0..1.0);
                if s > 0.0 { 1.0 } else { -1.0 }
            })
            .collect();
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn logistic_fit_converges_on_overlapping_classes() {
        let data = noisy_logistic(3, 60, 3);
        let fit = fit_linear(&data, LossKind::Logistic, true, 1e-10).unwrap();
        assert!(fit.attained, "residual {}", fit.grad_residual);
        assert!(fit.grad_residual <= 1e-10);
    }

    #[test]
    fn logistic_fit_flags_separable_data() {
        let data = Dataset::scalar(&[-2.0, -1.0, 1.0, 2.0], &[-1.0, -1.0, 1.0, 1.0]).unwrap();
        let fit = fit_linear(&data, LossKind::Logistic, false, 1e-10).unwrap();
        assert!(!fit.attained);
        assert!(fit.risk < 1e-3);
    }

    #[test]
    fn fitted_risk_is_a_lower_bound_for_random_predictors() {
        for (loss, data) in [
            (LossKind::Logistic, noisy_logistic(8, 40, 4)),
            (LossKind::Squared, {
                let d = noisy_logistic(9, 40, 4);
                let ys: Vec<f64> = d.labels().iter().map(|y| y * 0.3 + 0.1).collect();
                Dataset::new(d.inputs().clone(), ys).unwrap()
            }),
        ] {
            let fit = fit_linear(&data, loss, false, 1e-10).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..100 {
                let t: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
                assert!(fit.risk <= linear_risk(&data, loss, &t, false).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn bias_column_never_increases_risk() {
        for seed in 0..10 {
            let data = noisy_logistic(seed, 30, 2);
            for loss in [LossKind::Squared, LossKind::Logistic] {
                let a = fit_linear(&data, loss, false, 1e-10).unwrap().risk;
                let b = fit_linear(&data, loss, true, 1e-10).unwrap().risk;
                assert!(b <= a + 1e-12);
            }
        }
    }
}
