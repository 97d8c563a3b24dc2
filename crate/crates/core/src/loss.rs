//! Convex scalar losses `ℓ(p; y)` with their first two derivatives in `p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(p − y)²`, no ½ factor.
    Squared,
    /// `log(1 + exp(−y p))` for `y ∈ {−1, +1}`.
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl LossKind {
    pub fn eval(self, p: f64, y: f64) -> Result<LossEval> {
        match self {
            LossKind::Squared => {
                let r = p - y;
                Ok(LossEval {
                    value: r * r,
                    d1: 2.0 * r,
                    d2: 2.0,
                })
            }
            LossKind::Logistic => {
                if y != 1.0 && y != -1.0 {
                    return Err(Error::InvalidLabel(y));
                }
                let m = y * p;
                // softplus(-m), computed without overflow
                let value = if m > 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                };
                let s = sigmoid(-m);
                Ok(LossEval {
                    value,
                    d1: -y * s,
                    d2: s * (1.0 - s),
                })
            }
        }
    }

    pub fn validate_labels(self, labels: &[f64]) -> Result<()> {
        if self == LossKind::Logistic {
            if let Some(&bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
                return Err(Error::InvalidLabel(bad));
            }
        }
        Ok(())
    }

    /// Global Lipschitz constant of `ℓ(·; y)`, when one exists.
    pub fn global_lipschitz(self) -> Option<f64> {
        match self {
            LossKind::Squared => None,
            LossKind::Logistic => Some(1.0),
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `max_i |ℓ′(p_i; y_i)|`, capped at 1 for the logistic loss.
///
/// For the squared loss no global constant exists; this value is only a
/// certificate at the predictions supplied.
pub fn empirical_mu(kind: LossKind, predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            got: labels.len(),
        });
    }
    let mut mu: f64 = 0.0;
    for (p, y) in predictions.iter().zip(labels) {
        mu = mu.max(kind.eval(*p, *y)?.d1.abs());
    }
    Ok(match kind {
        LossKind::Logistic => mu.min(1.0),
        LossKind::Squared => mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn squared_examples() {
        let e = LossKind::Squared.eval(3.0, 3.0).unwrap();
        assert_eq!((e.value, e.d1, e.d2), (0.0, 0.0, 2.0));
        let e = LossKind::Squared.eval(2.0, 5.0).unwrap();
        assert_eq!((e.value, e.d1, e.d2), (9.0, -6.0, 2.0));
    }

    #[test]
    fn logistic_at_zero() {
        let e = LossKind::Logistic.eval(0.0, 1.0).unwrap();
        assert!((e.value - 2f64.ln()).abs() < 1e-15);
        assert!((e.d1 + 0.5).abs() < 1e-15);
        assert!((e.d2 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn logistic_rejects_bad_label() {
        assert_eq!(
            LossKind::Logistic.eval(0.0, 0.5),
            Err(Error::InvalidLabel(0.5))
        );
        assert!(LossKind::Logistic.validate_labels(&[1.0, -1.0, 0.0]).is_err());
    }

    #[test]
    fn logistic_is_stable_for_large_margins() {
        let e = LossKind::Logistic.eval(800.0, -1.0).unwrap();
        assert!((e.value - 800.0).abs() < 1e-9);
        let e = LossKind::Logistic.eval(800.0, 1.0).unwrap();
        assert!(e.value >= 0.0 && e.value < 1e-300);
    }

    #[test]
    fn empirical_mu_examples() {
        assert_eq!(
            empirical_mu(LossKind::Squared, &[1.0, 2.0], &[1.0, 2.0]).unwrap(),
            0.0
        );
        assert_eq!(empirical_mu(LossKind::Squared, &[0.0], &[3.0]).unwrap(), 6.0);
        assert_eq!(
            empirical_mu(LossKind::Squared, &[], &[]),
            Err(Error::EmptyInput)
        );
        let mu = empirical_mu(LossKind::Logistic, &[-40.0, 3.0, 0.1], &[1.0, -1.0, 1.0]).unwrap();
        assert!(mu <= 1.0);
    }

    fn case() -> impl Strategy<Value = (LossKind, f64, f64)> {
        prop_oneof![
            (-10.0..10.0f64, -10.0..10.0f64).prop_map(|(p, y)| (LossKind::Squared, p, y)),
            (-10.0..10.0f64, any::<bool>())
                .prop_map(|(p, s)| (LossKind::Logistic, p, if s { 1.0 } else { -1.0 })),
        ]
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn first_derivative_matches_central_difference((kind, p, y) in case()) {
            let h = 1e-6;
            let fd = (kind.eval(p + h, y).unwrap().value - kind.eval(p - h, y).unwrap().value) / (2.0 * h);
            prop_assert!(close(kind.eval(p, y).unwrap().d1, fd, 1e-6));
        }

        #[test]
        fn second_derivative_matches_central_difference((kind, p, y) in case()) {
            let h = 1e-6;
            let fd = (kind.eval(p + h, y).unwrap().d1 - kind.eval(p - h, y).unwrap().d1) / (2.0 * h);
            prop_assert!(close(kind.eval(p, y).unwrap().d2, fd, 1e-6));
        }

        #[test]
        fn convexity_probe((kind, p, y) in case(), gap in 0.0..5.0f64) {
            let q = p + gap;
            let ep = kind.eval(p, y).unwrap();
            let eq = kind.eval(q, y).unwrap();
            prop_assert!(eq.value - ep.value >= ep.d1 * (q - p) - 1e-12);
            prop_assert!(ep.d2 >= 0.0);
        }

        #[test]
        fn logistic_derivative_is_bounded(p in -50.0..50.0f64, s in any::<bool>()) {
            let y = if s { 1.0 } else { -1.0 };
            prop_assert!(LossKind::Logistic.eval(p, y).unwrap().d1.abs() <= 1.0);
        }
    }
}
