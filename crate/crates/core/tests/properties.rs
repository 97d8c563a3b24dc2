//! Property tests over the public API.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reslab::baseline::{fit_linear, linear_risk};
use reslab::bounds::{theorem2_bound, theorem3_bound};
use reslab::landscape::{
    check_coverage, escape_direction, find_critical_point, stacked_inputs, theorem1_verdict, zero_head_critical_point,
    DescentOptions, Verdict, VerdictOptions,
};
use reslab::linalg::{norm, orth_complement, rank, sym_eig};
use reslab::model::{self, BlockSpec, InnerKind, ParamName};
use reslab::motivating::{prop1_rho_max, prop1_table};
use reslab::{Dataset, LossKind, Matrix, ResNetSpec, Theta};

fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Low-rank products hit the rank tolerance as well as full-rank draws.
fn low_rank(rows: usize, cols: usize, r: usize, seed: u64) -> Matrix {
    matrix(rows, r, seed).matmul(&matrix(r, cols, seed ^ 0xabc)).unwrap()
}

fn dataset(n: usize, d_x: usize, loss: LossKind, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, d_x, |_, _| rng.gen_range(-1.0..1.0));
    let y = (0..n)
        .map(|i| {
            let s = x.row(i)[0] + 0.3 * rng.gen_range(-1.0..1.0);
            match loss {
                LossKind::Squared => s,
                LossKind::Logistic if s > 0.0 => 1.0,
                LossKind::Logistic => -1.0,
            }
        })
        .collect();
    Dataset::new(x, y).unwrap()
}

fn blocks(d_x: usize, seed: u64) -> Vec<BlockSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(1..=3);
    (0..depth)
        .map(|l| match rng.gen_range(0..4) {
            0 if l == 0 => BlockSpec::First { inner: InnerKind::Relu },
            1 => BlockSpec::SimpleVector,
            2 => BlockSpec::General {
                m: rng.gen_range(1..=d_x),
                inner: InnerKind::AffineRelu { hidden: rng.gen_range(1..=3) },
            },
            _ => BlockSpec::General {
                m: rng.gen_range(1..=d_x),
                inner: InnerKind::Relu,
            },
        })
        .collect()
}

fn loss_of(logistic: bool) -> LossKind {
    if logistic {
        LossKind::Logistic
    } else {
        LossKind::Squared
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rank_plus_complement_is_row_count(rows in 1usize..8, cols in 1usize..8, r in 1usize..8, seed in any::<u64>()) {
        let m = low_rank(rows, cols, r.min(rows).min(cols), seed);
        let k = rank(&m, 1e-10).unwrap();
        prop_assert_eq!(k, r.min(rows).min(cols));
        prop_assert_eq!(k + orth_complement(&m, 1e-10).unwrap().cols(), rows);
    }

    #[test]
    fn eigenvalues_sum_to_trace(n in 1usize..9, seed in any::<u64>()) {
        let a = matrix(n, n, seed);
        let sym = Matrix::from_fn(n, n, |i, j| a[(i, j)] + a[(j, i)]);
        let trace: f64 = (0..n).map(|i| sym[(i, i)]).sum();
        let sum: f64 = sym_eig(&sym).unwrap().eigenvalues.iter().sum();
        prop_assert!((sum - trace).abs() <= 1e-8 * (1.0 + trace.abs()));
    }

    #[test]
    fn flat_parameters_round_trip(d_x in 1usize..5, seed in any::<u64>(), bias in any::<bool>()) {
        let spec = ResNetSpec::new(d_x, blocks(d_x, seed)).unwrap().with_output_bias(bias);
        let theta = Theta::random(&spec, &mut ChaCha8Rng::seed_from_u64(seed), 1.0);
        let back = Theta::from_flat(&spec, theta.clone().into_vec()).unwrap();
        prop_assert_eq!(back.as_slice(), theta.as_slice());
        prop_assert_eq!(theta.len(), spec.layout().len());
    }

    #[test]
    fn zero_residual_weights_give_the_linear_head(d_x in 1usize..5, seed in any::<u64>(), bias in any::<bool>()) {
        let spec = ResNetSpec::new(d_x, blocks(d_x, seed)).unwrap().with_output_bias(bias);
        let mut theta = Theta::random(&spec, &mut ChaCha8Rng::seed_from_u64(seed), 2.0);
        let layout = theta.layout().clone();
        for slot in layout.slots().iter().filter(|s| s.name == ParamName::V) {
            theta.as_mut_slice()[slot.range()].iter_mut().for_each(|v| *v = 0.0);
        }
        let x = matrix(1, d_x, seed ^ 1);
        let tr = model::forward(&spec, &theta, x.row(0)).unwrap();
        let expected: f64 = theta.w().iter().zip(x.row(0)).map(|(w, x)| w * x).sum::<f64>()
            + if bias { theta.c() } else { 0.0 };
        prop_assert_eq!(tr.output, expected);
    }

    #[test]
    fn risk_and_gradient_ignore_example_order(d_x in 1usize..4, n in 2usize..10, seed in any::<u64>(), logistic in any::<bool>()) {
        let loss = loss_of(logistic);
        let spec = ResNetSpec::new(d_x, blocks(d_x, seed)).unwrap();
        let theta = Theta::random(&spec, &mut ChaCha8Rng::seed_from_u64(seed), 1.0);
        let data = dataset(n, d_x, loss, seed);
        let perm: Vec<usize> = (0..n).rev().collect();
        let (r1, g1) = model::risk_and_grad(&spec, &theta, &data, loss).unwrap();
        let (r2, g2) = model::risk_and_grad(&spec, &theta, &data.permuted(&perm), loss).unwrap();
        prop_assert!((r1 - r2).abs() <= 1e-12 * (1.0 + r1.abs()));
        for (a, b) in g1.iter().zip(&g2) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn fitted_linear_risk_lower_bounds_any_linear_predictor(d_x in 1usize..4, n in 4usize..16, seed in any::<u64>(), bias in any::<bool>()) {
        let data = dataset(n, d_x, LossKind::Squared, seed);
        let fit = fit_linear(&data, LossKind::Squared, bias, 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        for _ in 0..20 {
            let t: Vec<f64> = (0..fit.t_hat.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            prop_assert!(fit.risk <= linear_risk(&data, LossKind::Squared, &t, bias).unwrap() + 1e-12);
        }
        let with = fit_linear(&data, LossKind::Squared, true, 1e-12).unwrap();
        let without = fit_linear(&data, LossKind::Squared, false, 1e-12).unwrap();
        prop_assert!(with.risk <= without.risk + 1e-12);
    }

    #[test]
    fn near_identity_bound_is_monotone_in_each_rho(
        rho in proptest::collection::vec(0.0f64..2.0, 1..6),
        k in 0usize..6,
        bump in 0.0f64..1.0,
    ) {
        let base = theorem2_bound(0.5, 1.3, 0.7, &rho, 1.1);
        let mut bigger = rho.clone();
        let k = k % rho.len();
        bigger[k] += bump;
        prop_assert!(base >= 0.5);
        prop_assert!(theorem2_bound(0.5, 1.3, 0.7, &bigger, 1.1) >= base);
    }

    #[test]
    fn balanced_radii_bound_is_size_independent(depth in 1usize..=1024, n in 1usize..500, b in 0.1f64..10.0) {
        let radii = vec![(1.0 / (2.0 * depth as f64)).sqrt(); depth];
        let bound = theorem3_bound(b, n, &radii);
        prop_assert!(bound <= b * std::f64::consts::E / (n as f64).sqrt() * (1.0 + 1e-12));
    }

    #[test]
    fn split_fit_rows_dominate_the_linear_risk(rho in 1e-6f64..1.0) {
        let rho = rho * prop1_rho_max();
        for row in prop1_table(rho).unwrap() {
            prop_assert_eq!(row.lower_bound, row.constant_error + row.linear_error);
            prop_assert!(row.lower_bound >= 8.0 * rho * rho / 15.0 - 1e-12);
        }
    }
}

/// Networks whose later blocks read fewer coordinates than `d_x`.
fn covered_spec(d_x: usize, seed: u64) -> ResNetSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = vec![BlockSpec::General {
        m: rng.gen_range(1..=d_x),
        inner: InnerKind::Relu,
    }];
    let mut budget = d_x - 1;
    while budget > 0 && blocks.len() < 3 {
        let m = rng.gen_range(1..=budget);
        budget -= m;
        blocks.push(BlockSpec::General { m, inner: InnerKind::Relu });
    }
    ResNetSpec::new(d_x, blocks).unwrap().with_output_bias(rng.gen_bool(0.5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn escape_alpha_annihilates_later_inputs(d_x in 2usize..6, seed in any::<u64>(), logistic in any::<bool>()) {
        let loss = loss_of(logistic);
        let spec = covered_spec(d_x, seed);
        let data = dataset(24, d_x, loss, seed);
        let init = Theta::random(&spec, &mut ChaCha8Rng::seed_from_u64(seed), 1.0);
        let Some(theta) = zero_head_critical_point(&spec, &data, loss, &init).unwrap() else { return Ok(()) };
        let cov = check_coverage(&spec, &theta, &data, loss, 1e-10).unwrap();
        if !(cov.rep_coverage && cov.param_coverage) {
            return Ok(());
        }
        let stacked = stacked_inputs(&spec, &theta);
        for l in 0..spec.depth() {
            if let Some(e) = escape_direction(&spec, &theta, &data, loss, l, &VerdictOptions::default()).unwrap() {
                prop_assert!(norm(&stacked.tr_matvec(&e.alpha)) <= 1e-10);
                if norm(&e.beta) > 1e-10 {
                    prop_assert!(e.predicted_decrease < 0.0);
                }
            }
        }
    }

    /// When the head has a component outside the stacked input span, a
    /// certified critical point is no worse than the best linear fit even
    /// without representation coverage.
    #[test]
    fn head_outside_stacked_span_is_good_as_linear(d_x in 2usize..5, seed in any::<u64>()) {
        let spec = covered_spec(d_x, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(20, d_x, |_, _| rng.gen_range(0.1..1.1));
        let y = (0..20).map(|i| x.row(i)[0] - 0.4 * x.row(i)[d_x - 1] + 0.1 * rng.gen_range(-1.0..1.0)).collect();
        let data = Dataset::new(x, y).unwrap();
        let mut init = Theta::random(&spec, &mut rng, 1.0);
        let layout = init.layout().clone();
        for slot in layout.slots().iter().filter(|s| s.name == ParamName::U) {
            init.as_mut_slice()[slot.range()].iter_mut().for_each(|v| *v = v.abs());
        }
        let found = find_critical_point(&spec, &data, LossKind::Squared, init, DescentOptions::default()).unwrap();
        let opts = VerdictOptions::default();
        let report = theorem1_verdict(&spec, &data, LossKind::Squared, &found.theta, &opts).unwrap();
        let certified = report.grad_norm <= opts.max_grad_norm && report.kink_margin >= opts.min_kink_margin;
        if certified && report.coverage.param_coverage && !report.coverage.head_in_stacked_span {
            prop_assert!(report.risk_within_linear(), "risk {} r_lin {}", report.risk, report.r_lin);
            prop_assert!(matches!(report.verdict, Verdict::GoodAsLinear));
        }
    }
}
