//! Critical points and their classification.
//!
//! At a critical point of a ResNet whose stacked input matrices
//! `[U₂ᵀ … U_Lᵀ]` leave a nonzero orthogonal complement, either the risk is
//! no worse than the best linear predictor, or a rank-one perturbation of one
//! residual output matrix together with a head correction strictly lowers it
//! to second order. [`theorem1_verdict`] decides which, with explicit
//! tolerances, and certifies the second case by probing the risk.

use serde::Serialize;

use crate::baseline::{fit_linear, DEFAULT_LINEAR_TOL};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, dot, lstsq, norm, orth_complement, sym_eig, Matrix};
use crate::loss::LossKind;
use crate::model::{self, ForwardTrace, ParamName, ResNetSpec, Theta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DescentOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 20_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalSearch {
    pub theta: Theta,
    pub grad_norm: f64,
    pub risk: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Gradient descent with Barzilai-Borwein trial steps and Armijo
/// backtracking. Returns the first iterate with `‖∇R‖ ≤ tol`, otherwise the
/// best iterate, i.e. the one with the lowest risk (the last accepted one).
pub fn find_critical_point(
    spec: &ResNetSpec,
    data: &Dataset,
    loss: LossKind,
    init: Theta,
    opts: DescentOptions,
) -> Result<CriticalSearch> {
    let mut theta = init;
    let (mut value, mut grad) = model::risk_and_grad(spec, &theta, data, loss)?;
    let mut gn = norm(&grad);
    let mut step = 1e-2;
    let mut iterations = 0;
    while gn > opts.tol && iterations < opts.max_iters {
        iterations += 1;
        let mut accepted = None;
        let mut trial_step = step;
        for _ in 0..60 {
            let cand = theta.offset(&grad, -trial_step);
            let (v, g) = model::risk_and_grad(spec, &cand, data, loss)?;
            // The roundoff allowance lets BB steps through once the Armijo
            // decrease falls below what the risk can resolve.
            let allowance = 4.0 * f64::EPSILON * value.abs();
            if v.is_finite() && v <= value - 1e-4 * trial_step * gn * gn + allowance {
                accepted = Some((cand, v, g));
                break;
            }
            trial_step *= 0.5;
        }
        let Some((cand, v, g)) = accepted else { break };
        let s: Vec<f64> = cand.as_slice().iter().zip(theta.as_slice()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { (dot(&s, &s) / sy).min(1e6) } else { 2.0 * trial_step };
        theta = cand;
        value = v;
        grad = g;
        gn = norm(&grad);
    }
    Ok(CriticalSearch {
        theta,
        grad_norm: gn,
        risk: value,
        iterations,
        converged: gn <= opts.tol,
    })
}

/// Damped Newton refinement of a descent end point, using the
/// finite-difference Hessian. A step `−(H + λI)⁺g` is accepted when it
/// lowers the gradient norm, so the iteration may also settle on saddles.
/// Stops at `tol`, after `max_steps`, or when the kink margin is too small
/// for the Hessian.
pub fn polish_critical_point(
    spec: &ResNetSpec,
    data: &Dataset,
    loss: LossKind,
    init: Theta,
    tol: f64,
    max_steps: usize,
) -> Result<CriticalSearch> {
    let mut theta = init;
    let (mut value, grad) = model::risk_and_grad(spec, &theta, data, loss)?;
    let mut gn = norm(&grad);
    let mut grad = grad;
    let mut iterations = 0;
    while gn > tol && iterations < max_steps {
        let hess = match model::hessian_fd(spec, &theta, data, loss, model::DEFAULT_FD_STEP) {
            Ok(h) => h,
            Err(Error::KinkTooClose { .. }) | Err(Error::InvalidSpec(_)) => break,
            Err(e) => return Err(e),
        };
        iterations += 1;
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let scale = hess.frobenius_norm().max(1e-12);
        let mut accepted = None;
        for damping in [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2, 1.0] {
            let mut h = hess.clone();
            for i in 0..h.rows() {
                h[(i, i)] += damping * scale;
            }
            let step = lstsq(&h, &neg)?;
            let cand = theta.offset(&step, 1.0);
            let (v, g) = model::risk_and_grad(spec, &cand, data, loss)?;
            let cand_gn = norm(&g);
            if v.is_finite() && cand_gn < gn {
                accepted = Some((cand, v, g, cand_gn));
                break;
            }
        }
        let Some((cand, v, g, cand_gn)) = accepted else { break };
        theta = cand;
        value = v;
        grad = g;
        gn = cand_gn;
    }
    Ok(CriticalSearch {
        theta,
        grad_norm: gn,
        risk: value,
        iterations,
        converged: gn <= tol,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    /// `(1/n) Σ ℓ″ h̃ h̃ᵀ`, where `h̃` is `h_L` with a trailing 1 when the
    /// network has an output bias.
    pub a: Matrix,
    pub lambda_min_a: f64,
    pub a_rank: usize,
    pub rep_coverage: bool,
    pub stacked_rank: usize,
    pub param_coverage: bool,
    /// Orthonormal basis of the complement of the stacked column space.
    pub complement_basis: Matrix,
    /// `‖Cᵀw‖` for the complement basis `C`.
    pub head_residual: f64,
    /// Whether the head lies in the stacked column space (the escape case).
    pub head_in_stacked_span: bool,
}

/// `[U₂ᵀ … U_Lᵀ]` over the blocks after the first; `d_x × 0` if there are none.
pub fn stacked_inputs(spec: &ResNetSpec, theta: &Theta) -> Matrix {
    let mut columns = Vec::new();
    for l in 1..spec.depth() {
        if let Some(u) = theta.matrix(Some(l), ParamName::U) {
            for i in 0..u.rows() {
                columns.push(u.row(i).to_vec());
            }
        }
    }
    Matrix::from_columns(spec.d_x, &columns)
}

struct Snapshot {
    traces: Vec<ForwardTrace>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    risk: f64,
}

fn snapshot(spec: &ResNetSpec, theta: &Theta, data: &Dataset, loss: LossKind) -> Result<Snapshot> {
    if data.d_x() != spec.d_x {
        return Err(Error::DimensionMismatch {
            expected: spec.d_x,
            got: data.d_x(),
        });
    }
    let mut traces = Vec::with_capacity(data.len());
    let mut d1 = Vec::with_capacity(data.len());
    let mut d2 = Vec::with_capacity(data.len());
    let mut total = 0.0;
    for i in 0..data.len() {
        let tr = model::forward(spec, theta, data.x(i))?;
        let e = loss.eval(tr.output, data.y(i))?;
        total += e.value;
        d1.push(e.d1);
        d2.push(e.d2);
        traces.push(tr);
    }
    Ok(Snapshot {
        traces,
        d1,
        d2,
        risk: total / data.len() as f64,
    })
}

fn coverage_from(spec: &ResNetSpec, theta: &Theta, snap: &Snapshot, rank_tol: f64) -> Result<CoverageReport> {
    let k = spec.head_dim();
    let n = snap.traces.len() as f64;
    let mut a = Matrix::zeros(k, k);
    for (tr, c) in snap.traces.iter().zip(&snap.d2) {
        let h = tr.head_features(spec);
        for i in 0..k {
            for j in 0..k {
                a[(i, j)] += c * h[i] * h[j] / n;
            }
        }
    }
    let lambda_min_a = sym_eig(&a)?.min_eigenvalue();
    let a_rank = linalg::rank(&a, rank_tol)?;
    let stacked = stacked_inputs(spec, theta);
    let stacked_rank = if stacked.cols() == 0 { 0 } else { linalg::rank(&stacked, rank_tol)? };
    let complement_basis = orth_complement(&stacked, rank_tol)?;
    let w = theta.w();
    let head_residual = norm(&complement_basis.tr_matvec(w));
    Ok(CoverageReport {
        rep_coverage: a_rank == k,
        a,
        lambda_min_a,
        a_rank,
        stacked_rank,
        param_coverage: stacked_rank < spec.d_x,
        head_in_stacked_span: head_residual <= 1e-8 * norm(w),
        complement_basis,
        head_residual,
    })
}

pub fn check_coverage(
    spec: &ResNetSpec,
    theta: &Theta,
    data: &Dataset,
    loss: LossKind,
    rank_tol: f64,
) -> Result<CoverageReport> {
    let snap = snapshot(spec, theta, data, loss)?;
    coverage_from(spec, theta, &snap, rank_tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeDirection {
    pub block_index: usize,
    /// Unit vector orthogonal to every `U_k`, `k ≥ 2`.
    pub alpha: Vec<f64>,
    /// `(1/n) Σ ℓ′ φ_l(·)`
    pub beta: Vec<f64>,
    /// Head correction (including the bias entry when present).
    pub epsilon: Vec<f64>,
    pub predicted_decrease: f64,
    /// Full perturbation in parameter coordinates.
    pub direction: Vec<f64>,
    /// `min(R(θ+sδ), R(θ−sδ)) − R(θ)` at the accepted probe step.
    pub verified_decrease: f64,
    /// `R(θ+sδ) + R(θ−sδ) − 2R(θ)` at the accepted probe step.
    pub second_difference: f64,
    pub probe_step: f64,
    /// True when some probe step showed both a lower risk and negative
    /// curvature along the direction.
    pub certified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerdictOptions {
    pub rank_tol: f64,
    /// Below this kink margin the risk is not certified twice differentiable.
    pub min_kink_margin: f64,
    /// Gradient norms above this are not treated as critical.
    pub max_grad_norm: f64,
    /// Slack is `slack_factor · grad_norm · (1 + ‖θ‖)`.
    pub slack_factor: f64,
    /// `‖b‖` at or below this yields no escape direction.
    pub beta_tol: f64,
    pub fd_step: f64,
}

impl Default for VerdictOptions {
    fn default() -> Self {
        Self {
            rank_tol: linalg::DEFAULT_RANK_TOL,
            min_kink_margin: 1e-6,
            max_grad_norm: 1e-6,
            slack_factor: 10.0,
            beta_tol: 1e-10,
            fd_step: model::DEFAULT_FD_STEP,
        }
    }
}

impl VerdictOptions {
    pub fn slack(&self, grad_norm: f64, theta: &Theta) -> f64 {
        self.slack_factor * grad_norm * (1.0 + theta.norm())
    }
}

/// Probe step multipliers, relative to `max(‖θ‖, 1)/‖δ‖`.
const PROBE_EXPONENTS: std::ops::RangeInclusive<i32> = 0..=8;

fn escape_from(
    spec: &ResNetSpec,
    theta: &Theta,
    data: &Dataset,
    loss: LossKind,
    snap: &Snapshot,
    cov: &CoverageReport,
    block: usize,
    beta_tol: f64,
) -> Result<Option<EscapeDirection>> {
    if block >= spec.depth() {
        return Err(Error::InvalidSpec(format!("block {block} out of range")));
    }
    if !cov.rep_coverage || !cov.param_coverage {
        return Err(Error::CoverageViolated(format!(
            "representation coverage {}, parameter coverage {}",
            cov.rep_coverage, cov.param_coverage
        )));
    }
    let d = spec.d_x;
    let n = snap.traces.len() as f64;
    let width = spec.blocks[block].output_width(d);
    let mut beta = vec![0.0; width];
    for (tr, g) in snap.traces.iter().zip(&snap.d1) {
        for (b, a) in beta.iter_mut().zip(&tr.blocks[block].act) {
            *b += g * a / n;
        }
    }
    let bn2 = dot(&beta, &beta);
    if bn2.sqrt() <= beta_tol {
        return Ok(None);
    }
    let alpha = cov.complement_basis.column(0);
    let mut rhs: Vec<f64> = alpha.iter().map(|a| a * bn2).collect();
    if spec.output_bias {
        rhs.push(0.0);
    }
    let solved = lstsq(&cov.a, &rhs)?;
    let epsilon: Vec<f64> = solved.iter().map(|v| -v).collect();
    let predicted_decrease = 0.5 * dot(&rhs, &epsilon);

    let layout = theta.layout();
    let mut direction = vec![0.0; theta.len()];
    let w_slot = layout.slot(None, ParamName::W).expect("head present");
    direction[w_slot.range()].copy_from_slice(&epsilon[..d]);
    if let Some(c_slot) = layout.slot(None, ParamName::C) {
        direction[c_slot.offset] = epsilon[d];
    }
    let v_slot = layout.slot(Some(block), ParamName::V).expect("V present");
    for i in 0..d {
        for j in 0..width {
            direction[v_slot.offset + i * width + j] = alpha[i] * beta[j];
        }
    }

    let base = snap.risk;
    let scale = theta.norm().max(1.0) / norm(&direction);
    let mut probe = None;
    let mut last = (f64::INFINITY, f64::INFINITY, 0.0);
    for k in PROBE_EXPONENTS {
        let s = scale * 10f64.powi(-k);
        let plus = model::risk(spec, &theta.offset(&direction, s), data, loss)?;
        let minus = model::risk(spec, &theta.offset(&direction, -s), data, loss)?;
        let decrease = plus.min(minus) - base;
        let second = plus + minus - 2.0 * base;
        last = (decrease, second, s);
        if decrease < 0.0 && second < 0.0 {
            probe = Some(last);
            break;
        }
    }
    let certified = probe.is_some();
    let (verified_decrease, second_difference, probe_step) = probe.unwrap_or(last);
    Ok(Some(EscapeDirection {
        block_index: block,
        alpha,
        beta,
        epsilon,
        predicted_decrease,
        direction,
        verified_decrease,
        second_difference,
        probe_step,
        certified,
    }))
}

/// The rank-one escape perturbation for `block` (0-based), or `None` when
/// `(1/n) Σ ℓ′ φ_block(·)` vanishes. Requires both coverage conditions.
pub fn escape_direction(
    spec: &ResNetSpec,
    theta: &Theta,
    data: &Dataset,
    loss: LossKind,
    block: usize,
    opts: &VerdictOptions,
) -> Result<Option<EscapeDirection>> {
    let snap = snapshot(spec, theta, data, loss)?;
    let cov = coverage_from(spec, theta, &snap, opts.rank_tol)?;
    escape_from(spec, theta, data, loss, &snap, &cov, block, opts.beta_tol)
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    GoodAsLinear,
    StrictSaddle(EscapeDirection),
    ConditionsViolated { reason: String },
    Inconclusive {
        reason: String,
        hessian_lambda_min: Option<f64>,
    },
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::GoodAsLinear => "good_as_linear",
            Verdict::StrictSaddle(_) => "strict_saddle",
            Verdict::ConditionsViolated { .. } => "conditions_violated",
            Verdict::Inconclusive { .. } => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictReport {
    pub theta_star: Theta,
    pub grad_norm: f64,
    pub risk: f64,
    pub r_lin: f64,
    pub slack: f64,
    pub kink_margin: f64,
    pub coverage: CoverageReport,
    pub verdict: Verdict,
    /// Observations that do not change the verdict.
    pub notes: Vec<String>,
}

impl VerdictReport {
    pub fn risk_within_linear(&self) -> bool {
        self.risk <= self.r_lin + self.slack
    }
}

/// Classifies a near-critical point:
///
/// 1. parameter coverage fails, or the head lies in the stacked span while
///    representation coverage fails: `ConditionsViolated`;
/// 2. kink margin below `min_kink_margin`: `Inconclusive`;
/// 3. `R(θ) ≤ R_lin + slack`: `GoodAsLinear`;
/// 4. some block yields a certified escape direction: `StrictSaddle`;
/// 5. otherwise `Inconclusive`, with the smallest Hessian eigenvalue when it
///    can be computed.
///
/// `R_lin` is affine when the network has an output bias.
pub fn theorem1_verdict(
    spec: &ResNetSpec,
    data: &Dataset,
    loss: LossKind,
    theta: &Theta,
    opts: &VerdictOptions,
) -> Result<VerdictReport> {
    let snap = snapshot(spec, theta, data, loss)?;
    let (_, grad) = model::risk_and_grad(spec, theta, data, loss)?;
    let grad_norm = norm(&grad);
    let coverage = coverage_from(spec, theta, &snap, opts.rank_tol)?;
    let r_lin = fit_linear(data, loss, spec.output_bias, DEFAULT_LINEAR_TOL)?.risk;
    let kink_margin = model::kink_margin(spec, theta, data)?;
    let slack = opts.slack(grad_norm, theta);
    let risk = snap.risk;
    let mut notes = Vec::new();
    let within = risk <= r_lin + slack;

    let verdict = if grad_norm > opts.max_grad_norm {
        Verdict::Inconclusive {
            reason: format!("gradient norm {grad_norm:e} exceeds {:e}", opts.max_grad_norm),
            hessian_lambda_min: None,
        }
    } else if !coverage.param_coverage {
        if within {
            notes.push("risk is within the linear baseline even though parameter coverage fails".into());
        }
        Verdict::ConditionsViolated {
            reason: format!(
                "stacked input matrices have rank {} = d_x, no orthogonal complement",
                coverage.stacked_rank
            ),
        }
    } else if coverage.head_in_stacked_span && !coverage.rep_coverage {
        if within {
            notes.push("risk is within the linear baseline even though representation coverage fails".into());
        }
        Verdict::ConditionsViolated {
            reason: format!(
                "curvature matrix has rank {} < {}",
                coverage.a_rank,
                spec.head_dim()
            ),
        }
    } else if kink_margin < opts.min_kink_margin {
        Verdict::Inconclusive {
            reason: format!("kink margin {kink_margin:e} below {:e}", opts.min_kink_margin),
            hessian_lambda_min: None,
        }
    } else if within {
        Verdict::GoodAsLinear
    } else {
        let mut found = None;
        if coverage.rep_coverage {
            for l in 0..spec.depth() {
                if let Some(e) = escape_from(spec, theta, data, loss, &snap, &coverage, l, opts.beta_tol)? {
                    if e.certified {
                        found = Some(e);
                        break;
                    }
                    notes.push(format!("block {l}: escape direction not certified by the line probe"));
                }
            }
        }
        match found {
            Some(e) => Verdict::StrictSaddle(e),
            None => Verdict::Inconclusive {
                reason: "risk above the linear baseline and no certified escape direction".into(),
                hessian_lambda_min: model::hessian_fd(spec, theta, data, loss, opts.fd_step)
                    .and_then(|h| sym_eig(&h))
                    .map(|e| e.min_eigenvalue())
                    .ok(),
            },
        }
    };
    Ok(VerdictReport {
        theta_star: theta.clone(),
        grad_norm,
        risk,
        r_lin,
        slack,
        kink_margin,
        coverage,
        verdict,
        notes,
    })
}

/// Builds an exact critical point with a zero head from `theta`: sets
/// `w = 0`, the bias (if any) to the best constant, and shifts the last
/// block's output matrix so that `(1/n) Σ ℓ′ h_L = 0`. Such points fall in
/// the escape case; they are useful for exercising saddle certification.
///
/// Returns `None` when the last block's activations are uncorrelated with
/// `ℓ′`, in which case the shift is undefined.
pub fn zero_head_critical_point(
    spec: &ResNetSpec,
    data: &Dataset,
    loss: LossKind,
    theta: &Theta,
) -> Result<Option<Theta>> {
    let Some(last) = spec.depth().checked_sub(1) else {
        return Ok(None);
    };
    let mut t = theta.clone();
    t.w_mut().iter_mut().for_each(|w| *w = 0.0);
    if spec.output_bias {
        let ones = Dataset::new(Matrix::from_fn(data.len(), 1, |_, _| 1.0), data.labels().to_vec())?;
        let fit = fit_linear(&ones, loss, false, DEFAULT_LINEAR_TOL)?;
        t.set_c(fit.t_hat[0])?;
    }
    let snap = snapshot(spec, &t, data, loss)?;
    let d = spec.d_x;
    let n = data.len() as f64;
    let width = spec.blocks[last].output_width(d);
    let mut resid = vec![0.0; d];
    let mut beta = vec![0.0; width];
    for (tr, g) in snap.traces.iter().zip(&snap.d1) {
        for (r, h) in resid.iter_mut().zip(tr.last_hidden()) {
            *r += g * h / n;
        }
        for (b, a) in beta.iter_mut().zip(&tr.blocks[last].act) {
            *b += g * a / n;
        }
    }
    let bn2 = dot(&beta, &beta);
    if bn2.sqrt() <= 1e-8 {
        return Ok(None);
    }
    let mut v = t.matrix(Some(last), ParamName::V).expect("V present");
    for i in 0..d {
        for j in 0..width {
            v[(i, j)] -= resid[i] * beta[j] / bn2;
        }
    }
    t.set_matrix(Some(last), ParamName::V, &v)?;
    Ok(Some(t))
}
