//! The two scalar motivating constructions:
//!
//! * a six-point dataset on which every split (constant piece + linear piece)
//!   fit, and hence every local minimum of a one-hidden-unit ReLU network, is
//!   no better than the best affine fit, while a one-block ResNet is strictly
//!   better;
//! * a two-block ResNet at a global minimum whose intermediate representation
//!   fits the labels worse than the raw input does.
//!
//! Linear fits in this module are affine (they include an intercept).

use serde::Serialize;

use crate::baseline::{fit_linear, DEFAULT_LINEAR_TOL};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{lstsq, norm, Matrix};
use crate::loss::LossKind;
use crate::model::{self, BlockSpec, InnerKind, ParamName, ResNetSpec, Theta};

pub const PROP1_X: [f64; 6] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];

/// Largest ρ for which the split-fit lower bounds all exceed the affine risk.
pub fn prop1_rho_max() -> f64 {
    1.25f64.sqrt()
}

/// Labels `[−ρ, 1−ρ, 2+ρ, 3−ρ, 4+ρ, 5+ρ]`.
pub fn prop1_labels(rho: f64) -> [f64; 6] {
    [-rho, 1.0 - rho, 2.0 + rho, 3.0 - rho, 4.0 + rho, 5.0 + rho]
}

pub fn prop1_dataset(rho: f64) -> Dataset {
    Dataset::scalar(&PROP1_X, &prop1_labels(rho)).expect("six finite points")
}

/// `8ρ²/15`
pub fn prop1_linear_risk(rho: f64) -> f64 {
    8.0 * rho * rho / 15.0
}

/// Risk of the constructed one-block ResNet after the optimal affine head.
pub fn prop1_resnet_closed_form(rho: f64) -> f64 {
    rho * rho * (12.0 * rho * rho + 82.0 * rho + 215.0) / (21.0 * rho * rho + 156.0 * rho + 420.0)
}

pub const BREAKPOINT_INTERVALS: [&str; 7] = [
    "(-inf, 0)",
    "[0, 1)",
    "[1, 2)",
    "[2, 3)",
    "[3, 4)",
    "[4, 5)",
    "[5, inf)",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitFitBound {
    pub breakpoint_interval: &'static str,
    pub constant_error: f64,
    pub linear_error: f64,
    pub lower_bound: f64,
}

/// Closed forms `(constant error, linear error)` per breakpoint interval.
pub fn table1_closed_form(rho: f64) -> [(f64, f64); 7] {
    let r2 = rho * rho;
    [
        (0.0, 8.0 * r2 / 15.0),
        (0.0, 8.0 * r2 / 15.0),
        (1.0 / 12.0, 7.0 * r2 / 15.0),
        (4.0 * r2 / 9.0 + 2.0 * rho / 3.0 + 1.0 / 3.0, r2 / 9.0),
        (r2 / 2.0 + rho / 3.0 + 5.0 / 6.0, 0.0),
        (4.0 * r2 / 5.0 + 4.0 * rho / 3.0 + 5.0 / 3.0, 0.0),
        (r2 + 7.0 * rho / 3.0 + 35.0 / 12.0, 0.0),
    ]
}

/// Sum of squared residuals of the least-squares fit on `features`.
fn sse(features: Matrix, ys: &[f64]) -> Result<f64> {
    if ys.is_empty() {
        return Ok(0.0);
    }
    let t = lstsq(&features, ys)?;
    Ok(features
        .matvec(&t)
        .iter()
        .zip(ys)
        .map(|(p, y)| (p - y).powi(2))
        .sum())
}

/// Lower bounds on the one-hidden-unit network risk, one per breakpoint
/// interval: the best constant fit of the points left of the breakpoint plus
/// the best affine fit of the rest, each ignoring continuity.
pub fn prop1_table(rho: f64) -> Result<Vec<SplitFitBound>> {
    if !(rho > 0.0) {
        return Err(Error::HypothesisViolated(format!("rho must be positive, got {rho}")));
    }
    let ys = prop1_labels(rho);
    let n = ys.len() as f64;
    (0..7)
        .map(|k| {
            let (left_y, right_y) = ys.split_at(k);
            let right_x = &PROP1_X[k..];
            let constant = sse(Matrix::from_fn(k, 1, |_, _| 1.0), left_y)? / n;
            let affine = Matrix::from_fn(right_x.len(), 2, |i, j| if j == 0 { right_x[i] } else { 1.0 });
            let linear = sse(affine, right_y)? / n;
            Ok(SplitFitBound {
                breakpoint_interval: BREAKPOINT_INTERVALS[k],
                constant_error: constant,
                linear_error: linear,
                lower_bound: constant + linear,
            })
        })
        .collect()
}

/// The scalar ResNet `x ↦ w(x + vσ(ux + b)) + c`.
pub fn prop1_resnet_spec() -> ResNetSpec {
    ResNetSpec::new(
        1,
        vec![BlockSpec::First {
            inner: InnerKind::AffineRelu { hidden: 1 },
        }],
    )
    .expect("valid scalar architecture")
    .with_output_bias(true)
}

/// Block parameters `v = ρ/2, u = 1, b = −3` with a zero head.
pub fn prop1_resnet_block(rho: f64) -> (ResNetSpec, Theta) {
    let spec = prop1_resnet_spec();
    let mut t = Theta::zeros(&spec);
    t.set(Some(0), ParamName::V, 0, 0, 0.5 * rho).expect("slot");
    t.set(Some(0), ParamName::Z, 0, 0, 1.0).expect("slot");
    t.set(Some(0), ParamName::ZBias, 0, 0, -3.0).expect("slot");
    (spec, t)
}

#[derive(Debug, Clone, Serialize)]
pub struct Prop1Verification {
    pub rho: f64,
    pub r_lin: f64,
    pub table: Vec<SplitFitBound>,
    pub min_lower_bound: f64,
    pub all_bounds_ge_rlin: bool,
    /// Block outputs on X.
    pub block_outputs: Vec<f64>,
    pub head_w: f64,
    pub head_c: f64,
    pub resnet_risk: f64,
    pub resnet_closed_form: f64,
    pub resnet_beats_linear: bool,
}

pub fn prop1_verify(rho: f64) -> Result<Prop1Verification> {
    if !(rho > 0.0) || rho * rho > 1.25 + 1e-12 {
        return Err(Error::HypothesisViolated(format!(
            "rho must lie in (0, sqrt(5/4)], got {rho}"
        )));
    }
    let data = prop1_dataset(rho);
    let r_lin = fit_linear(&data, LossKind::Squared, true, DEFAULT_LINEAR_TOL)?.risk;
    let table = prop1_table(rho)?;
    let min_lower_bound = table.iter().map(|r| r.lower_bound).fold(f64::INFINITY, f64::min);

    let (spec, mut theta) = prop1_resnet_block(rho);
    let block_outputs: Vec<f64> = PROP1_X
        .iter()
        .map(|&x| Ok(model::forward(&spec, &theta, &[x])?.hidden[1][0]))
        .collect::<Result<_>>()?;
    let feats = Matrix::from_fn(6, 2, |i, j| if j == 0 { block_outputs[i] } else { 1.0 });
    let wc = lstsq(&feats, data.labels())?;
    theta.w_mut()[0] = wc[0];
    theta.set_c(wc[1])?;
    let resnet_risk = model::risk(&spec, &theta, &data, LossKind::Squared)?;

    Ok(Prop1Verification {
        rho,
        r_lin,
        all_bounds_ge_rlin: min_lower_bound >= r_lin - 1e-12,
        min_lower_bound,
        table,
        block_outputs,
        head_w: wc[0],
        head_c: wc[1],
        resnet_closed_form: prop1_resnet_closed_form(rho),
        resnet_beats_linear: resnet_risk < r_lin,
        resnet_risk,
    })
}

pub const NONMONOTONE_X: [f64; 3] = [1.0, 2.5, 3.0];
pub const NONMONOTONE_Y: [f64; 3] = [1.0, 3.0, 2.0];

/// Two scalar blocks `h ↦ h + v σ(u h + b)` followed by `w h + c`, at
/// `v₁=1, u₁=1, b₁=−2, v₂=−4, u₂=1, b₂=−3.5, w=1, c=0`.
pub fn nonmonotone_network() -> (ResNetSpec, Theta, Dataset) {
    let spec = ResNetSpec::new(
        1,
        vec![
            BlockSpec::First {
                inner: InnerKind::AffineRelu { hidden: 1 },
            },
            BlockSpec::General {
                m: 1,
                inner: InnerKind::AffineRelu { hidden: 1 },
            },
        ],
    )
    .expect("valid scalar architecture")
    .with_output_bias(true);
    let mut t = Theta::zeros(&spec);
    let entries = [
        (Some(0), ParamName::V, 1.0),
        (Some(0), ParamName::Z, 1.0),
        (Some(0), ParamName::ZBias, -2.0),
        (Some(1), ParamName::V, -4.0),
        (Some(1), ParamName::U, 1.0),
        (Some(1), ParamName::Z, 1.0),
        (Some(1), ParamName::ZBias, -3.5),
        (None, ParamName::W, 1.0),
        (None, ParamName::C, 0.0),
    ];
    for (block, name, v) in entries {
        t.set(block, name, 0, 0, v).expect("slot");
    }
    let data = Dataset::scalar(&NONMONOTONE_X, &NONMONOTONE_Y).expect("three finite points");
    (spec, t, data)
}

#[derive(Debug, Clone, Serialize)]
pub struct NonMonotoneReport {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub err_x: f64,
    pub err_h1: f64,
    pub err_h2: f64,
    pub risk: f64,
    pub grad_norm: f64,
    pub is_critical: bool,
}

impl NonMonotoneReport {
    /// The intermediate block is worse than the input while the last block is better.
    pub fn is_nonmonotone(&self) -> bool {
        self.err_h1 > self.err_x && self.err_h2 < self.err_x
    }
}

/// Mean squared error of the best affine fit of `ys` on `xs`.
pub fn affine_fit_error(xs: &[f64], ys: &[f64]) -> Result<f64> {
    Ok(fit_linear(&Dataset::scalar(xs, ys)?, LossKind::Squared, true, DEFAULT_LINEAR_TOL)?.risk)
}

pub fn nonmonotone_example() -> Result<NonMonotoneReport> {
    let (spec, theta, data) = nonmonotone_network();
    let mut h1 = Vec::with_capacity(3);
    let mut h2 = Vec::with_capacity(3);
    for &x in &NONMONOTONE_X {
        let tr = model::forward(&spec, &theta, &[x])?;
        h1.push(tr.hidden[1][0]);
        h2.push(tr.hidden[2][0]);
    }
    let (risk, grad) = model::risk_and_grad(&spec, &theta, &data, LossKind::Squared)?;
    let grad_norm = norm(&grad);
    Ok(NonMonotoneReport {
        err_x: affine_fit_error(&NONMONOTONE_X, &NONMONOTONE_Y)?,
        err_h1: affine_fit_error(&h1, &NONMONOTONE_Y)?,
        err_h2: affine_fit_error(&h2, &NONMONOTONE_Y)?,
        h1,
        h2,
        risk,
        grad_norm,
        is_critical: grad_norm <= 1e-12,
    })
}
