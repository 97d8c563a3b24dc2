//! Near-identity bounds: the risk of any critical point against the best
//! linear fit, and the empirical Rademacher complexity of norm-constrained
//! ResNets together with a Monte-Carlo estimator of it.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baseline::{fit_linear, DEFAULT_LINEAR_TOL};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{norm, spectral_norm, Matrix};
use crate::loss::{empirical_mu, LossKind};
use crate::model::{self, BlockSpec, InnerKind, ParamName, ResNetSpec, Theta};
use crate::rng;

fn spec_norm(theta: &Theta, block: usize, name: ParamName) -> Result<f64> {
    match theta.matrix(Some(block), name) {
        Some(m) => spectral_norm(&m),
        None => Ok(1.0),
    }
}

/// Lipschitz certificate for each residual part, as a product of spectral
/// norms. Affine inner maps are only certified when every offset is `≤ 0`,
/// which keeps `Φ(0) = 0`.
pub fn lipschitz_rho(spec: &ResNetSpec, theta: &Theta) -> Result<Vec<f64>> {
    spec.blocks
        .iter()
        .enumerate()
        .map(|(l, b)| {
            let mut rho = spec_norm(theta, l, ParamName::V)?;
            if !matches!(b, BlockSpec::First { .. }) {
                rho *= spec_norm(theta, l, ParamName::U)?;
            }
            let inner = match *b {
                BlockSpec::General { inner, .. } | BlockSpec::First { inner } => inner,
                BlockSpec::SimpleVector => InnerKind::Relu,
            };
            if let InnerKind::AffineRelu { .. } = inner {
                let offsets = theta.matrix(Some(l), ParamName::ZBias).expect("affine block");
                if offsets.as_slice().iter().any(|z| *z > 0.0) {
                    return Err(Error::UnsupportedInner {
                        block: l,
                        reason: "positive inner offset, the residual part does not vanish at 0".into(),
                    });
                }
                rho *= spec_norm(theta, l, ParamName::Z)?;
            }
            Ok(rho)
        })
        .collect()
}

/// `r_lin + μ‖t̂‖(∏(1+ρ_l) − 1)E‖x‖`
pub fn theorem2_bound(r_lin: f64, mu: f64, t_hat_norm: f64, rho: &[f64], mean_x_norm: f64) -> f64 {
    let growth: f64 = rho.iter().map(|r| 1.0 + r).product();
    r_lin + mu * t_hat_norm * (growth - 1.0) * mean_x_norm
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem2Report {
    pub rho: Vec<f64>,
    pub mu: f64,
    /// True when `μ` is measured at `θ` because the loss has no global
    /// Lipschitz constant; the bound then holds only at this point.
    pub mu_is_empirical: bool,
    pub t_hat_norm: f64,
    pub mean_x_norm: f64,
    pub r_lin: f64,
    pub bound: f64,
    pub risk_at_theta: f64,
    pub grad_norm: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Evaluates the critical-point risk bound at `theta`. `μ` is the largest
/// `|ℓ′|` over the sample (capped at 1 for the logistic loss); `t̂` is the
/// slope of the best linear fit, affine when the network has an output bias.
pub fn theorem2_check(
    spec: &ResNetSpec,
    theta: &Theta,
    data: &Dataset,
    loss: LossKind,
    slack_factor: f64,
) -> Result<Theorem2Report> {
    let (risk, grad) = model::risk_and_grad(spec, theta, data, loss)?;
    let grad_norm = norm(&grad);
    if grad_norm > 1e-6 {
        return Err(Error::NotCritical(grad_norm));
    }
    let rho = lipschitz_rho(spec, theta)?;
    let preds = model::predictions(spec, theta, data)?;
    let mu = empirical_mu(loss, &preds, data.labels())?;
    let fit = fit_linear(data, loss, spec.output_bias, DEFAULT_LINEAR_TOL)?;
    let t_hat_norm = norm(fit.slope());
    let mean_x_norm = data.mean_input_norm();
    let bound = theorem2_bound(fit.risk, mu, t_hat_norm, &rho, mean_x_norm);
    let slack = slack_factor * grad_norm * (1.0 + theta.norm());
    Ok(Theorem2Report {
        rho,
        mu,
        mu_is_empirical: loss.global_lipschitz().is_none(),
        t_hat_norm,
        mean_x_norm,
        r_lin: fit.risk,
        bound,
        risk_at_theta: risk,
        grad_norm,
        slack,
        holds: risk <= bound + slack,
    })
}

/// `B ∏(1 + 2M_l²) / √n`
pub fn theorem3_bound(b: f64, n: usize, radii: &[f64]) -> f64 {
    let growth: f64 = radii.iter().map(|m| 1.0 + 2.0 * m * m).product();
    b * growth / (n as f64).sqrt()
}

/// ResNets `x ↦ wᵀh_L(x)` with blocks `V_l σ(U_l h)`, `‖w‖ ≤ 1` and
/// `‖V_l‖_F, ‖U_l‖_F ≤ M_l`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RademacherClass {
    pub d_x: usize,
    pub widths: Vec<usize>,
    pub radii: Vec<f64>,
}

impl RademacherClass {
    /// Every block as wide as the input.
    pub fn new(d_x: usize, radii: Vec<f64>) -> Self {
        Self {
            d_x,
            widths: vec![d_x; radii.len()],
            radii,
        }
    }

    pub fn with_widths(mut self, widths: Vec<usize>) -> Self {
        self.widths = widths;
        self
    }

    pub fn depth(&self) -> usize {
        self.radii.len()
    }

    pub fn spec(&self) -> Result<ResNetSpec> {
        if self.widths.len() != self.radii.len() {
            return Err(Error::DimensionMismatch {
                expected: self.radii.len(),
                got: self.widths.len(),
            });
        }
        if self.radii.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidSpec("radii must be finite and nonnegative".into()));
        }
        ResNetSpec::new(
            self.d_x,
            self.widths
                .iter()
                .map(|&m| BlockSpec::General {
                    m,
                    inner: InnerKind::Relu,
                })
                .collect(),
        )
    }

    /// Rescales each constrained group back into its ball.
    pub fn project(&self, theta: &mut Theta) {
        let layout = theta.layout().clone();
        for slot in layout.slots() {
            let radius = match (slot.block, slot.name) {
                (None, ParamName::W) => 1.0,
                (Some(l), ParamName::V | ParamName::U) => self.radii[l],
                _ => continue,
            };
            let part = &mut theta.as_mut_slice()[slot.range()];
            let r = norm(part);
            if r > radius {
                let scale = if r > 0.0 { radius / r } else { 0.0 };
                part.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }

    /// A random point on the boundary of every ball.
    fn random_point<R: Rng + ?Sized>(&self, spec: &ResNetSpec, rng: &mut R) -> Theta {
        let mut t = Theta::random(spec, rng, 1.0);
        let layout = t.layout().clone();
        for slot in layout.slots() {
            let radius = match (slot.block, slot.name) {
                (None, ParamName::W) => 1.0,
                (Some(l), _) => self.radii[l],
                _ => continue,
            };
            let part = &mut t.as_mut_slice()[slot.range()];
            let r = norm(part);
            let scale = if r > 0.0 { radius / r } else { 0.0 };
            part.iter_mut().for_each(|v| *v *= scale);
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AscentOptions {
    pub trials: usize,
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once an accepted step improves the objective by at most this.
    pub tol: f64,
    pub master_seed: u64,
    /// Enumerate all `2ⁿ` sign vectors instead of sampling `trials` of them.
    pub exhaustive: bool,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            trials: 30,
            restarts: 8,
            max_iters: 200,
            tol: 1e-12,
            master_seed: 0,
            exhaustive: false,
        }
    }
}

pub const MAX_EXHAUSTIVE_N: usize = 16;

#[derive(Debug, Clone, Serialize)]
pub struct RademacherReport {
    pub n: usize,
    pub b: f64,
    pub radii: Vec<f64>,
    pub bound: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub trials: usize,
    pub restarts: usize,
    pub exhaustive: bool,
    pub per_trial: Vec<f64>,
    /// Best parameters per trial, usable as warm starts for a larger class.
    #[serde(skip)]
    pub maximizers: Vec<Theta>,
}

/// Projected gradient ascent of `(1/n) Σ ε_i f_θ(x_i)` from `start`.
fn ascend(
    class: &RademacherClass,
    spec: &ResNetSpec,
    inputs: &Matrix,
    signs: &[f64],
    start: Theta,
    opts: &AscentOptions,
) -> Result<(f64, Theta)> {
    let mut theta = start;
    class.project(&mut theta);
    let (mut value, mut grad) = model::weighted_output_grad(spec, &theta, inputs, signs)?;
    let mut step = 1.0;
    for _ in 0..opts.max_iters {
        let mut improved = None;
        while step > 1e-14 {
            let mut cand = theta.offset(&grad, step);
            class.project(&mut cand);
            let (v, g) = model::weighted_output_grad(spec, &cand, inputs, signs)?;
            if v > value {
                improved = Some((cand, v, g));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, v, g)) = improved else { break };
        let gain = v - value;
        theta = cand;
        value = v;
        grad = g;
        step *= 2.0;
        if gain <= opts.tol {
            break;
        }
    }
    Ok((value, theta))
}

fn sign_vector<R: Rng + ?Sized>(n: usize, pattern: Option<u64>, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let positive = match pattern {
                Some(bits) => bits >> i & 1 == 1,
                None => rng.gen::<bool>(),
            };
            if positive {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

/// Lower estimate of the empirical Rademacher complexity of `class` on the
/// rows of `inputs`. Trial `k` draws its signs and restart points from its
/// own stream; restart 0 starts from `warm_start[k]` when given.
pub fn rademacher_estimate(
    class: &RademacherClass,
    inputs: &Matrix,
    opts: &AscentOptions,
    warm_start: Option<&[Theta]>,
) -> Result<RademacherReport> {
    let spec = class.spec()?;
    let n = inputs.rows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if inputs.cols() != class.d_x {
        return Err(Error::DimensionMismatch {
            expected: class.d_x,
            got: inputs.cols(),
        });
    }
    let trials = if opts.exhaustive {
        if n > MAX_EXHAUSTIVE_N {
            return Err(Error::InvalidSpec(format!(
                "exhaustive enumeration limited to n ≤ {MAX_EXHAUSTIVE_N}, got {n}"
            )));
        }
        1usize << n
    } else {
        if opts.trials < 30 {
            return Err(Error::InvalidSpec(format!("need at least 30 trials, got {}", opts.trials)));
        }
        opts.trials
    };
    if let Some(w) = warm_start {
        if w.len() != trials {
            return Err(Error::DimensionMismatch {
                expected: trials,
                got: w.len(),
            });
        }
    }
    let restarts = opts.restarts.max(1);
    let results: Vec<(f64, Theta)> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut stream = rng::stream(opts.master_seed, k as u64);
            let pattern = opts.exhaustive.then_some(k as u64);
            let signs = sign_vector(n, pattern, &mut stream);
            let mut best: Option<(f64, Theta)> = None;
            for r in 0..restarts {
                let random = class.random_point(&spec, &mut stream);
                let start = match (r, warm_start) {
                    (0, Some(w)) => w[k].clone(),
                    _ => random,
                };
                let (v, t) = ascend(class, &spec, inputs, &signs, start, opts)?;
                if best.as_ref().map_or(true, |(bv, _)| v > *bv) {
                    best = Some((v, t));
                }
            }
            Ok(best.expect("at least one restart"))
        })
        .collect::<Result<_>>()?;

    let per_trial: Vec<f64> = results.iter().map(|(v, _)| *v).collect();
    let mean = per_trial.iter().sum::<f64>() / trials as f64;
    let stderr = if opts.exhaustive || trials < 2 {
        0.0
    } else {
        let var = per_trial.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        (var / trials as f64).sqrt()
    };
    let b = (0..n).map(|i| norm(inputs.row(i))).fold(0.0, f64::max);
    Ok(RademacherReport {
        n,
        b,
        radii: class.radii.clone(),
        bound: theorem3_bound(b, n, &class.radii),
        estimate: mean,
        stderr,
        trials,
        restarts,
        exhaustive: opts.exhaustive,
        per_trial,
        maximizers: results.into_iter().map(|(_, t)| t).collect(),
    })
}
