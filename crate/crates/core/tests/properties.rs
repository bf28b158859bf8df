use agp_core::experiment::{fmt_f64, ExperimentConfig};
use agp_core::objectives::target_trajectory;
use agp_core::regret::{info_gain_greedy, theoretical_bound, BoundInputs, RegretLedger};
use agp_core::solver::{pgd_step, run_inner, FnSmooth};
use agp_core::ucb::{beta, ucb_value};
use agp_core::{BoxDomain, ConfidenceParams, GpPosterior, KernelSpec, Observation, SolverConfig, Tick, TimeVaryingQuadratic, Trajectory};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, d)
}

fn dataset(d: usize, max: usize) -> impl Strategy<Value = Vec<(Vec<f64>, f64)>> {
    prop::collection::vec((point(d), -2.0..2.0f64), 1..=max)
}

fn kernel() -> impl Strategy<Value = KernelSpec> {
    (0.2..2.0f64).prop_map(|l| KernelSpec::squared_exponential(l).unwrap())
}

fn posterior(k: &KernelSpec, d: usize, data: &[(Vec<f64>, f64)]) -> GpPosterior {
    let mut post = GpPosterior::new(k.clone(), 0.01, d).unwrap();
    for (x, y) in data {
        post.update(&Observation::new(x.clone(), *y)).unwrap();
    }
    post
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_matrix_is_symmetric_psd(k in kernel(), d in 1usize..=2, pts in prop::collection::vec(point(2), 1..=30)) {
        let pts: Vec<Vec<f64>> = pts.into_iter().map(|p| p[..d].to_vec()).collect();
        let n = pts.len();
        let gram = DMatrix::from_fn(n, n, |i, j| k.eval(&pts[i], &pts[j]).unwrap());
        prop_assert_eq!(&gram, &gram.transpose());
        let min = gram.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-8, "smallest eigenvalue {min}");
    }

    #[test]
    fn kernel_gradient_is_antisymmetric_and_matches_differences(k in kernel(), x in point(2), y in point(2)) {
        let g = k.grad_x(&x, &y).unwrap();
        let g_rev = k.grad_x(&y, &x).unwrap();
        let h = 1e-5;
        for j in 0..2 {
            prop_assert!((g[j] + g_rev[j]).abs() < 1e-15);
            let (mut p, mut m) = (x.clone(), x.clone());
            p[j] += h;
            m[j] -= h;
            let fd = (k.eval(&p, &y).unwrap() - k.eval(&m, &y).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1e-3), "coordinate {j}: {} vs {fd}", g[j]);
        }
    }

    #[test]
    fn derivative_kernel_diagonal_is_inverse_square_length(l in 0.2..3.0f64, x in point(2), j in 0usize..2) {
        let k = KernelSpec::squared_exponential(l).unwrap();
        prop_assert_eq!(k.derivative_kernel(&x, &x, j).unwrap(), 1.0 / (l * l));
    }

    #[test]
    fn posterior_variance_never_increases(k in kernel(), data in dataset(2, 20), q in point(2)) {
        let mut post = GpPosterior::new(k, 0.01, 2).unwrap();
        let mut prev = post.posterior_var(&q).unwrap();
        for (x, y) in data {
            post.update(&Observation::new(x, y)).unwrap();
            let v = post.posterior_var(&q).unwrap();
            prop_assert!(v <= prev + 1e-10, "{v} after {prev}");
            prev = v;
        }
    }

    #[test]
    fn posterior_is_order_free(k in kernel(), data in dataset(2, 15), q in point(2), seed in any::<u64>()) {
        let mut shuffled = data.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = posterior(&k, 2, &data);
        let b = posterior(&k, 2, &shuffled);
        let (ma, mb) = (a.posterior_mean(&q).unwrap(), b.posterior_mean(&q).unwrap());
        let (va, vb) = (a.posterior_var(&q).unwrap(), b.posterior_var(&q).unwrap());
        prop_assert!((ma - mb).abs() <= 1e-8 * ma.abs().max(1.0), "mean {ma} vs {mb}");
        prop_assert!((va - vb).abs() <= 1e-8, "variance {va} vs {vb}");
    }

    #[test]
    fn posterior_gradients_match_differences(k in kernel(), data in dataset(1, 10), q in 0.05..0.95f64) {
        let post = posterior(&k, 1, &data);
        let h = 1e-5;
        let fd = |f: &dyn Fn(&[f64]) -> f64| (f(&[q + h]) - f(&[q - h])) / (2.0 * h);
        let gm = post.posterior_mean_grad(&[q]).unwrap()[0];
        let gs = post.posterior_std_grad(&[q]).unwrap()[0];
        let fm = fd(&|x| post.posterior_mean(x).unwrap());
        let fs = fd(&|x| post.posterior_std(x).unwrap());
        prop_assert!((gm - fm).abs() <= 1e-5 * fm.abs().max(1e-2), "mean {gm} vs {fm}");
        prop_assert!((gs - fs).abs() <= 1e-5 * fs.abs().max(1e-2), "std {gs} vs {fs}");
    }

    #[test]
    fn ucb_dominates_the_mean(k in kernel(), data in dataset(1, 10), q in point(1), b in 0.0..50.0f64) {
        let post = posterior(&k, 1, &data);
        prop_assert!(ucb_value(&post, b, &q).unwrap() >= post.posterior_mean(&q).unwrap());
    }

    #[test]
    fn projection_is_idempotent_and_nonexpansive(
        a in prop::collection::vec(-3.0..3.0f64, 2),
        b in prop::collection::vec(-3.0..3.0f64, 2),
    ) {
        let dom = BoxDomain::unit(2);
        let pa = dom.project(&a);
        prop_assert!(dom.contains(&pa));
        prop_assert_eq!(dom.project(&pa), pa.clone());
        let pb = dom.project(&b);
        let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-15);
    }

    #[test]
    fn pgd_never_decreases_a_concave_quadratic(
        c in prop::collection::vec(-0.5..1.5f64, 2),
        mu in prop::collection::vec(0.1..5.0f64, 2),
        off in -0.9..0.9f64,
        x0 in point(2),
        frac in 0.05..1.0f64,
        steps in 1usize..50,
    ) {
        // Q = [[μ₀, ρ], [ρ, μ₁]] with |ρ| < √(μ₀μ₁) stays positive definite.
        let rho = off * (mu[0] * mu[1]).sqrt();
        let q = [[mu[0], rho], [rho, mu[1]]];
        let value = |x: &[f64]| {
            let r = [x[0] - c[0], x[1] - c[1]];
            -0.5 * (r[0] * (q[0][0] * r[0] + q[0][1] * r[1]) + r[1] * (q[1][0] * r[0] + q[1][1] * r[1]))
        };
        let grad = |x: &[f64]| {
            let r = [x[0] - c[0], x[1] - c[1]];
            vec![-(q[0][0] * r[0] + q[0][1] * r[1]), -(q[1][0] * r[0] + q[1][1] * r[1])]
        };
        let phi = FnSmooth::new(2, value, grad);
        let theta = DMatrix::from_row_slice(2, 2, &[q[0][0], q[0][1], q[1][0], q[1][1]]).symmetric_eigenvalues().max();
        let dom = BoxDomain::unit(2);
        let cfg = SolverConfig { alpha: frac / theta, ns_steps: steps };
        let x = run_inner(&phi, &x0, &cfg, &dom);
        prop_assert!(dom.contains(&x));
        prop_assert!(value(&x) >= value(&x0) - 1e-12);
        let one = pgd_step(&phi, &x0, cfg.alpha, &dom);
        prop_assert!(value(&one) >= value(&x0) - 1e-12);
    }

    #[test]
    fn beta_increases_with_n_and_d(n in 1u64..100_000, d in 1usize..5, delta in 0.01..0.5f64) {
        let p = ConfidenceParams { delta, d, ..ConfidenceParams::default() };
        let b = beta(n, &p).unwrap();
        prop_assert!(beta(n + 1, &p).unwrap() > b);
        let wider = ConfidenceParams { d: d + 1, ..p };
        prop_assert!(beta(n, &wider).unwrap() > b);
    }

    #[test]
    fn regret_ledger_sums_are_consistent(pairs in prop::collection::vec((-1.0..1.0f64, 0.0..1.0f64), 1..200)) {
        let mut ledger = RegretLedger::new();
        let mut total = 0.0;
        for (f_star, gap) in &pairs {
            ledger.push(*f_star, f_star - gap);
            total += gap;
        }
        prop_assert!((ledger.total() - total).abs() <= 1e-12 * total.max(1.0));
        let avg = ledger.average();
        prop_assert_eq!(avg.len(), pairs.len());
        prop_assert!((avg.last().unwrap() * pairs.len() as f64 - total).abs() <= 1e-10 * total.max(1.0));
        prop_assert!(avg.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn bound_grows_with_horizon_drift_and_eta(
        t in 10u64..5000,
        drift in 0.0..0.1f64,
        eta in 0.0..0.95f64,
        gamma in 1.0..50.0f64,
    ) {
        let base = BoundInputs {
            horizon: t,
            delta: 0.1,
            sigma: 0.1,
            d: 2,
            a: 1.1,
            b: 2.0,
            r: 1.0,
            l: 1.5,
            d_g: 0.7,
            drift,
            eta,
            gamma_t: gamma,
        };
        let total = |b: BoundInputs| theoretical_bound(&b).unwrap().total;
        let v = total(base);
        let longer = total(BoundInputs { horizon: t + 1, ..base });
        let faster = total(BoundInputs { drift: drift + 0.01, ..base });
        let slower = total(BoundInputs { eta: eta + 0.01, ..base });
        prop_assert!(longer > v && faster >= v && slower >= v);
    }

    #[test]
    fn csv_floats_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn periodic_target_stays_in_band(t in 0.0..1e4f64, omega in 0.0..1.0f64) {
        for c in target_trajectory(t, omega, 2) {
            prop_assert!((0.08 - 1e-12..=0.58 + 1e-12).contains(&c), "{c}");
        }
    }

    #[test]
    fn corner_drift_matches_lattice_search(omega in 0.0..0.5f64, k in 1u64..500) {
        let obj = TimeVaryingQuadratic::platoon(omega, Trajectory::Periodic);
        let dom = BoxDomain::unit(2);
        let (prev, curr) = (Tick::at(k - 1, 1.0), Tick::at(k, 1.0));
        let exact = obj.drift(&dom, prev, curr);
        let grid = obj.drift_on_lattice(&dom, prev, curr, 101).unwrap();
        prop_assert!((exact - grid).abs() <= 1e-12 * exact.max(1.0), "{exact} vs {grid}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn config_round_trips_through_toml(
        seed in any::<u32>(),
        horizon in 1u64..10_000,
        omega in 0.0..1.0f64,
        alpha in 0.01..0.5f64,
        ns in 1usize..10,
        noise in 0.01..1.0f64,
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed as u64;
        cfg.horizon = horizon;
        cfg.objective.omega = omega;
        cfg.solver = SolverConfig { alpha, ns_steps: ns };
        cfg.feedback.noise_std = noise;
        let text = cfg.to_toml_string().unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }
}

#[test]
fn info_gain_increments_shrink() {
    let k = KernelSpec::squared_exponential(1.0).unwrap();
    for (dim, grid) in [(1, 201), (2, 21)] {
        let g = info_gain_greedy(&k, &BoxDomain::unit(dim), grid, 150, 0.1).unwrap();
        assert!((g[0] - 0.5 * 101f64.ln()).abs() < 1e-12);
        let inc: Vec<f64> = std::iter::once(g[0]).chain(g.windows(2).map(|w| w[1] - w[0])).collect();
        for w in inc.windows(2) {
            assert!(w[1] >= 0.0 && w[1] <= w[0] + 1e-12, "dimension {dim}: {} then {}", w[0], w[1]);
        }
    }
}

#[test]
fn single_observation_posterior_matches_closed_form() {
    let k = KernelSpec::squared_exponential(1.0).unwrap();
    let post = posterior(&k, 1, &[(vec![0.3], 0.5)]);
    assert!(rel(post.posterior_mean(&[0.3]).unwrap(), 0.5 / 1.01) < 1e-12);
    assert!(rel(post.posterior_var(&[0.3]).unwrap(), 0.01 / 1.01) < 1e-12);
    assert_eq!(post.posterior_mean_grad(&[0.3]).unwrap(), vec![0.0]);
}
