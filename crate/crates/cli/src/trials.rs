//! Seeded critical-point trials: random small architectures and datasets,
//! descent to a near-critical point, and classification of the result.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use reslab::bounds::{theorem2_check, Theorem2Report};
use reslab::landscape::{
    find_critical_point, polish_critical_point, theorem1_verdict, zero_head_critical_point, DescentOptions, Verdict, VerdictOptions,
    VerdictReport,
};
use reslab::linalg::dot;
use reslab::model::{self, BlockSpec, InnerKind, ParamName, ResNetSpec, Theta};
use reslab::{rng, Dataset, LossKind, Matrix};

#[derive(Debug, Clone)]
pub struct Trial {
    pub index: u64,
    pub spec: ResNetSpec,
    pub data: Dataset,
    pub loss: LossKind,
    /// Inputs are positive; descent then starts from nonnegative input
    /// weights, which tends to keep units active and the risk smooth.
    pub positive_inputs: bool,
}

/// Up to four ReLU-family blocks whose later input widths sum to less
/// than `d_x`, so the stacked input matrices always leave a complement.
pub fn random_architecture<R: Rng + ?Sized>(rng: &mut R, d_x: usize) -> ResNetSpec {
    let depth = rng.gen_range(1..=4);
    let mut blocks = vec![match rng.gen_range(0..3) {
        0 => BlockSpec::First {
            inner: InnerKind::Relu,
        },
        1 => BlockSpec::SimpleVector,
        _ => BlockSpec::General {
            m: rng.gen_range(1..=d_x + 1),
            inner: InnerKind::Relu,
        },
    }];
    let mut budget = d_x - 1;
    while blocks.len() < depth && budget > 0 {
        let m = rng.gen_range(1..=budget);
        budget -= m;
        blocks.push(if m == 1 && rng.gen_bool(0.5) {
            BlockSpec::SimpleVector
        } else {
            BlockSpec::General {
                m,
                inner: InnerKind::Relu,
            }
        });
    }
    ResNetSpec::new(d_x, blocks)
        .expect("generated architecture is valid")
        .with_output_bias(rng.gen_bool(0.5))
}

/// Inputs uniform on `[−1, 1]^d`, or on `[0.1, 1.1]^d` when `positive`.
/// Squared-loss targets are a fixed
/// nonlinear function plus noise; logistic labels are its sign with a
/// fifth of them flipped, so the classes overlap.
pub fn random_dataset<R: Rng + ?Sized>(rng: &mut R, n: usize, d_x: usize, loss: LossKind, positive: bool) -> Dataset {
    let range = if positive { 0.1..1.1 } else { -1.0..1.0 };
    let x = Matrix::from_fn(n, d_x, |_, _| rng.gen_range(range.clone()));
    let y = (0..n)
        .map(|i| {
            let r = x.row(i);
            let last = r[d_x - 1];
            let shift = if positive { 0.8 } else { 0.3 };
            let score = r[0] + last.abs() - 0.5 * r[0] * last - shift + 0.1 * rng.gen_range(-1.0..1.0);
            match loss {
                LossKind::Squared => score,
                LossKind::Logistic => {
                    let sign = if score > 0.0 { 1.0 } else { -1.0 };
                    if rng.gen_bool(0.2) {
                        -sign
                    } else {
                        sign
                    }
                }
            }
        })
        .collect();
    Dataset::new(x, y).expect("finite generated data")
}

pub fn random_trial(master: u64, index: u64) -> Trial {
    let mut rng = rng::stream(master, index);
    let d_x = rng.gen_range(3..=8);
    let loss = if rng.gen_bool(0.5) {
        LossKind::Squared
    } else {
        LossKind::Logistic
    };
    let spec = random_architecture(&mut rng, d_x);
    let n = rng.gen_range((3 * d_x).max(12)..=64);
    let positive_inputs = rng.gen_bool(0.5);
    let data = random_dataset(&mut rng, n, d_x, loss, positive_inputs);
    Trial {
        index,
        spec,
        data,
        loss,
        positive_inputs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepOptions {
    pub grad_tol: f64,
    pub rank_tol: f64,
    /// Points with a smaller kink margin are not certified.
    pub min_kink_margin: f64,
    pub max_iters: usize,
    /// Newton refinement steps after descent; 0 disables it.
    pub polish_steps: usize,
    pub init_scale: f64,
    pub restarts: usize,
    /// Also classify the zero-head critical point built from each start.
    pub zero_head: bool,
    /// Start descent from nonnegative input weights `U`, `Z`.
    pub nonneg_input_weights: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            rank_tol: 1e-10,
            min_kink_margin: 1e-3,
            max_iters: 5_000,
            polish_steps: 30,
            init_scale: 1.0,
            restarts: 1,
            zero_head: true,
            nonneg_input_weights: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Descent,
    ZeroHead,
}

impl Origin {
    pub fn label(self) -> &'static str {
        match self {
            Origin::Descent => "descent",
            Origin::ZeroHead => "zero_head",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PointOutcome {
    pub restart: usize,
    pub origin: Origin,
    pub converged: bool,
    /// Near-critical with enough kink margin for the verdict to be binding.
    pub certified: bool,
    pub report: VerdictReport,
    /// `δᵀ∇²R δ` along the escape direction, from finite differences.
    pub hessian_quadratic: Option<f64>,
    pub theorem2: Option<Result<Theorem2Report, String>>,
}

impl PointOutcome {
    pub fn verdict_label(&self) -> &'static str {
        self.report.verdict.label()
    }

    pub fn has_coverage(&self) -> bool {
        self.report.coverage.rep_coverage && self.report.coverage.param_coverage
    }

    /// Violations of the properties every certified point must satisfy.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.certified && self.has_coverage() {
            if let Verdict::Inconclusive { reason, .. } = &self.report.verdict {
                out.push(format!("inconclusive with both coverage conditions: {reason}"));
            }
        }
        if let Verdict::StrictSaddle(e) = &self.report.verdict {
            if !(e.verified_decrease < 0.0) {
                out.push(format!("saddle without verified decrease ({:e})", e.verified_decrease));
            }
            if let Some(q) = self.hessian_quadratic {
                if !(q < 0.0) || !(e.predicted_decrease < 0.0) {
                    out.push(format!(
                        "escape curvature {q:e} not negative or inconsistent with prediction {:e}",
                        e.predicted_decrease
                    ));
                }
            }
        }
        if self.certified {
            if let Some(Ok(t2)) = &self.theorem2 {
                if !t2.holds {
                    out.push(format!("risk {} exceeds bound {} + {}", t2.risk_at_theta, t2.bound, t2.slack));
                }
            }
        }
        out
    }
}

pub fn analyze_point(
    spec: &ResNetSpec,
    data: &Dataset,
    loss: LossKind,
    theta: &Theta,
    origin: Origin,
    restart: usize,
    converged: bool,
    opts: &SweepOptions,
) -> reslab::Result<PointOutcome> {
    let vopts = VerdictOptions {
        rank_tol: opts.rank_tol,
        min_kink_margin: opts.min_kink_margin,
        ..VerdictOptions::default()
    };
    let report = theorem1_verdict(spec, data, loss, theta, &vopts)?;
    let certified = report.grad_norm <= opts.grad_tol && report.kink_margin >= opts.min_kink_margin;
    let hessian_quadratic = match &report.verdict {
        Verdict::StrictSaddle(e) => model::hessian_fd(spec, theta, data, loss, vopts.fd_step)
            .ok()
            .map(|h| dot(&e.direction, &h.matvec(&e.direction))),
        _ => None,
    };
    let theorem2 = (report.grad_norm <= 1e-6)
        .then(|| theorem2_check(spec, theta, data, loss, vopts.slack_factor).map_err(|e| e.to_string()));
    Ok(PointOutcome {
        restart,
        origin,
        converged,
        certified,
        report,
        hessian_quadratic,
        theorem2,
    })
}

fn nonneg_inputs(theta: &mut Theta) {
    let layout = theta.layout().clone();
    for slot in layout.slots() {
        if matches!(slot.name, ParamName::U | ParamName::Z) {
            theta.as_mut_slice()[slot.range()].iter_mut().for_each(|v| *v = v.abs());
        }
    }
}

/// Runs every restart of one seed. Restart `r` draws its initial point from
/// stream `(seed, r)`; outcomes come back in restart order, descent point
/// first, then the zero-head point when requested.
pub fn run_points(
    spec: &ResNetSpec,
    data: &Dataset,
    loss: LossKind,
    seed: u64,
    opts: &SweepOptions,
) -> Vec<reslab::Result<PointOutcome>> {
    let per_restart: Vec<Vec<reslab::Result<PointOutcome>>> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut stream = rng::stream(seed, r as u64);
            let mut init = Theta::random(spec, &mut stream, opts.init_scale);
            if opts.nonneg_input_weights {
                nonneg_inputs(&mut init);
            }
            let mut out = Vec::with_capacity(2);
            let dopts = DescentOptions {
                tol: opts.grad_tol,
                max_iters: opts.max_iters,
            };
            let descended = find_critical_point(spec, data, loss, init.clone(), dopts).and_then(|s| {
                if s.converged || opts.polish_steps == 0 {
                    return Ok(s);
                }
                let p = polish_critical_point(spec, data, loss, s.theta.clone(), opts.grad_tol, opts.polish_steps)?;
                Ok(if p.grad_norm < s.grad_norm { p } else { s })
            });
            out.push(
                descended
                    .and_then(|s| analyze_point(spec, data, loss, &s.theta, Origin::Descent, r, s.converged, opts)),
            );
            if opts.zero_head {
                match zero_head_critical_point(spec, data, loss, &init) {
                    Ok(Some(t)) => out.push(analyze_point(spec, data, loss, &t, Origin::ZeroHead, r, true, opts)),
                    Ok(None) => {}
                    Err(e) => out.push(Err(e)),
                }
            }
            out
        })
        .collect();
    per_restart.into_iter().flatten().collect()
}
