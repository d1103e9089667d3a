use gruschin_harnack::bernstein::BernsteinFunction;
use gruschin_harnack::coupling::CouplingOptions;
use gruschin_harnack::gruschin::{Clocks, Drift, GruschinModel, Sigma, StatePoint, StepFunction};
use gruschin_harnack::harnack::{
    bound_terms, evaluate_inequality, explicit_cost, fit_constant, scaling_study, sweep, BoundTerms, HarnackSetup,
    ScalingExample, ScalingParams, SweepSpec, TestFunction,
};
use gruschin_harnack::rng::StreamFactory;
use gruschin_harnack::stats::Estimate;
use gruschin_harnack::timechange::TimeChange;
use gruschin_harnack::Error;
use statrs::function::gamma::gamma;

fn default_clocks() -> Clocks {
    Clocks::subordinated(
        BernsteinFunction::stable(0.7, 1.0).unwrap(),
        BernsteinFunction::truncated_stable(0.5, 1.0).unwrap(),
    )
}

fn setup<'a>(model: &'a GruschinModel, f: &'a TestFunction, clocks: &'a Clocks, n_paths: usize) -> HarnackSetup<'a> {
    HarnackSetup {
        model,
        f,
        clocks,
        n_paths,
        n_steps: 16,
        coupling: CouplingOptions::default(),
        qmc: false,
    }
}

fn x0() -> StatePoint {
    StatePoint::new(vec![1.0, 0.0], vec![0.0])
}

/// `E S(T)^{-1} = Γ(1 + 1/α) (T c Γ(1-α)/α)^{-1/α}` for the stable subordinator.
fn stable_inverse_mean(alpha: f64, c: f64, t: f64) -> f64 {
    gamma(1.0 + 1.0 / alpha) * (t * c * gamma(1.0 - alpha) / alpha).powf(-1.0 / alpha)
}

#[test]
fn identical_points_cost_nothing() {
    let model = GruschinModel::standard(2, 1, 0.5).unwrap();
    let f = TestFunction::bump(3.0, 2.0, vec![1.0, 0.0, 0.5]).unwrap();
    let clocks = default_clocks();
    let rep = evaluate_inequality(&setup(&model, &f, &clocks, 2_000), &x0(), &x0(), 1.0, &StreamFactory::new(1)).unwrap();
    assert_eq!(rep.entropy.mean, 0.0);
    assert_eq!(rep.er_mean.mean, 1.0);
    assert_eq!(rep.cost.term1.mean, 0.0);
    assert_eq!(rep.cost.bracket, 0.0);
    // Jensen: E log f <= log E f
    assert!(rep.margin >= -3.0 * rep.margin_se);
    assert_eq!(fit_constant(&[rep]).unwrap().fitted_c, 0.0);
}

#[test]
fn constant_function_is_exact() {
    let model = GruschinModel::standard(2, 1, 0.5).unwrap();
    let f = TestFunction::constant(2.5).unwrap();
    let clocks = default_clocks();
    let y = StatePoint::new(vec![0.8, 0.1], vec![0.3]);
    let rep = evaluate_inequality(&setup(&model, &f, &clocks, 1_000), &x0(), &y, 1.0, &StreamFactory::new(2)).unwrap();
    assert_eq!(rep.lhs, rep.rhs_log);
    assert_eq!(rep.lhs.std_error, 0.0);
    assert!((rep.lhs.mean - 2.5f64.ln()).abs() < 1e-15);
    assert!((rep.margin - rep.entropy.mean).abs() < 1e-15);
}

#[test]
fn coupling_entropy_bounds_the_gap() {
    let model = GruschinModel::standard(2, 1, 0.5).unwrap();
    let clocks = default_clocks();
    let f = TestFunction::bump(10.0, 1.0, vec![0.8, 0.0, 0.3]).unwrap();
    let y = StatePoint::new(vec![0.8, 0.0], vec![0.3]);
    let rep = evaluate_inequality(&setup(&model, &f, &clocks, 10_000), &x0(), &y, 0.5, &StreamFactory::new(3)).unwrap();
    assert!(rep.coupling_bound_holds(3.0), "margin {} ± {}", rep.margin, rep.margin_se);
    assert!(rep.er_mean.z_score(1.0).abs() <= 3.0);
    assert!(rep.tau1_max <= 0.5);
    assert!(rep.tau2_max.unwrap() <= 1.0 + 1e-12);
}

#[test]
fn subordinated_bound_terms_match_laplace_oracles() {
    let model = GruschinModel::standard(2, 1, 0.5).unwrap();
    let (alpha, t) = (0.7, 1.5);
    let clocks = Clocks::subordinated(
        BernsteinFunction::stable(alpha, 1.0).unwrap(),
        BernsteinFunction::stable(0.5, 2.0).unwrap(),
    );
    let terms = bound_terms(&model, &clocks, t, 50_000, 16, &StreamFactory::new(4)).unwrap();
    assert!(terms.term_w1.z_score(stable_inverse_mean(alpha, 1.0, t)).abs() <= 3.0, "{:?}", terms.term_w1);
    assert!(terms.term_s2inv.z_score(stable_inverse_mean(0.5, 2.0, t)).abs() <= 3.0, "{:?}", terms.term_s2inv);
    // E S^{-l} = Γ(1 + l/α) / Γ(1 + l) (T c Γ(1-α)/α)^{-l/α}
    let scale = t * gamma(1.0 - alpha) / alpha;
    let exact_l = gamma(1.0 + 0.5 / alpha) / gamma(1.5) * scale.powf(-0.5 / alpha);
    assert!(terms.term_l.z_score(exact_l).abs() <= 3.0, "{:?}", terms.term_l);
    assert_eq!(terms.term_lw1, terms.term_l);
}

#[test]
fn bound_terms_converge_for_step_lambda() {
    // λ = 1 on [0, ½), 2 after, identity clocks: ∫_0^1 λ^{-2} dt = 5/8
    let model = GruschinModel::new(
        1,
        1,
        0.25,
        Sigma::identity(1),
        StepFunction::new(vec![0.0, 0.5], vec![1.0, 2.0]).unwrap(),
        Drift::Zero,
        StepFunction::new(vec![0.0, 1.0], vec![0.0, 0.5]).unwrap(),
    )
    .unwrap();
    let mut prev = f64::INFINITY;
    for n in [16, 256, 4096] {
        let clocks = Clocks::identity(2.0, 2 * n);
        let terms = bound_terms(&model, &clocks, 1.0, 1, n, &StreamFactory::new(0)).unwrap();
        let err = (1.0 / terms.term_w1.mean - 0.625).abs();
        assert!(err < prev);
        prev = err;
        // H2 = ∫_1^2 e^{-(s - 1)} ds and N2 = ∫_0^1 ds
        let h2 = 1.0 - (-1.0f64).exp();
        assert!((terms.term_s2inv.mean - 1.0 / h2).abs() < 2.0 / n as f64);
        assert!((terms.term_ratio.mean - 1.0 / h2).abs() < 2.0 / n as f64);
    }
    assert!(prev < 1e-3);
}

#[test]
fn explicit_cost_by_hand() {
    let model = GruschinModel::standard(2, 1, 1.5).unwrap();
    let e = |v: f64| Estimate { mean: v, std_error: 0.1 * v, n: 10 };
    let terms = BoundTerms { term_w1: e(2.0), term_l: e(3.0), term_lw1: e(5.0), term_s2inv: e(7.0), term_ratio: e(11.0) };
    let x = StatePoint::new(vec![3.0, 4.0], vec![1.0]);
    let y = StatePoint::new(vec![0.0, 0.0], vec![-1.0]);
    let cost = explicit_cost(&model, &x, &y, 1.0, &terms);
    // |Δ1| = 5, |Δ2| = 2, 2(l-1)+ = 1, l ∧ 1 = 1
    assert!((cost.term1.mean - 12.5 * 2.0).abs() < 1e-12);
    assert!((cost.term1.std_error - 12.5 * 0.2).abs() < 1e-12);
    let bracket = 4.0 * 3.0 * 7.0 + ((5.0 + 0.0) * 3.0 + 5.0) * 25.0 * 11.0;
    assert!((cost.bracket - bracket).abs() < 1e-9, "{}", cost.bracket);
}

#[test]
fn sweep_grid_and_fit() {
    let model = GruschinModel::standard(2, 1, 0.5).unwrap();
    let f = TestFunction::bump(10.0, 4.0, vec![1.0, 0.0, 3.0]).unwrap();
    let clocks = default_clocks();
    let s = setup(&model, &f, &clocks, 1_000);
    let spec = SweepSpec { radii: vec![0.5, 1.0, 1.5], horizons: vec![0.25, 0.5], direction: vec![0.0, 0.0, 1.0] };
    let reps = sweep(&s, &x0(), &spec, &StreamFactory::new(5)).unwrap();
    assert_eq!(reps.len(), 6);
    for r in &reps {
        assert_eq!(r.x, x0());
        assert_eq!(r.cost.term1.mean, 0.0);
    }
    assert!((reps[4].y.x2[0] - 1.0).abs() < 1e-15 && reps[4].horizon == 0.5);
    let fit = fit_constant(&reps).unwrap();
    assert!(fit.falsifications.is_empty());
    assert!(fit.fitted_c.is_finite());
    assert_eq!(fit.per_report.len(), 6);
    if let Some(b) = fit.binding {
        assert_eq!(fit.fitted_c, fit.per_report[b]);
    }
    let small = SweepSpec { radii: vec![0.5, 1.0], horizons: vec![0.5, 1.0], direction: vec![0.0, 0.0, 1.0] };
    assert!(matches!(sweep(&s, &x0(), &small, &StreamFactory::new(5)), Err(Error::TooFewSamples { got: 4, need: 5 })));
    let bad = SweepSpec { direction: vec![1.0, 0.0], ..spec };
    assert!(sweep(&s, &x0(), &bad, &StreamFactory::new(5)).is_err());
}

#[test]
fn input_checks() {
    assert!(TestFunction::bump(0.0, 1.0, vec![0.0; 3]).is_err());
    assert!(TestFunction::bump(10.5, 1.0, vec![0.0; 3]).is_err());
    assert!(TestFunction::bump(1.0, 0.0, vec![0.0; 3]).is_err());
    assert!(matches!(TestFunction::constant(0.5), Err(Error::TestFunctionBelowOne(_))));
    let clocks = default_clocks();
    let low = TestFunction::Custom(std::sync::Arc::new(|p: &StatePoint| if p.x2[0] > 0.5 { 0.5 } else { 2.0 }));
    let model = GruschinModel::standard(2, 1, 0.5).unwrap();
    let err = evaluate_inequality(&setup(&model, &low, &clocks, 500), &x0(), &x0(), 1.0, &StreamFactory::new(6)).unwrap_err();
    assert!(matches!(err, Error::TestFunctionBelowOne(v) if v == 0.5), "{err}");
    let wide = GruschinModel::standard(2, 1, 1.0).unwrap();
    let f = TestFunction::constant(1.0).unwrap();
    assert!(evaluate_inequality(&setup(&wide, &f, &clocks, 10), &x0(), &x0(), 1.0, &StreamFactory::new(0)).is_err());
    let atom = Clocks::subordinated(
        BernsteinFunction::custom(0.0, std::sync::Arc::new(|_| 1.0), 0.5, 1.0).unwrap(),
        BernsteinFunction::stable(0.5, 1.0).unwrap(),
    );
    assert!(matches!(
        bound_terms(&model, &atom, 1.0, 10, 16, &StreamFactory::new(0)),
        Err(Error::UndefinedNegativeMoment(_))
    ));
    let fixed = Clocks::Deterministic { ell1: TimeChange::identity(2.0, 8), ell2: TimeChange::linear(0.0, 2.0, 8) };
    assert!(bound_terms(&model, &fixed, 1.0, 10, 4, &StreamFactory::new(0)).is_err());
}

#[test]
fn truncated_scaling_study() {
    let params = ScalingParams { alpha: 0.7, c1: 1.0, beta: 0.5, c2: 1.0, rho: 1.0, l: 0.5 };
    let rep = scaling_study(ScalingExample::Truncated, &params, &[0.25, 0.5, 1.0, 2.0, 4.0], 20_000, &StreamFactory::new(7)).unwrap();
    let w1 = rep.slope("term_w1").unwrap();
    assert!((w1.slope + 1.0 / 0.7).abs() < 0.1, "{w1:?}");
    assert!((w1.predicted + 1.0 / 0.7).abs() < 1e-12);
    assert!((rep.slope("term_l").unwrap().slope + 0.5 / 0.7).abs() < 0.1);
    assert!((rep.slope("s2_mean").unwrap().slope - 1.0).abs() < 0.05);
    assert_eq!(rep.rows.len(), 25);
    assert!(rep.to_csv().starts_with("example,T,term,value,std_error\ntruncated,0.25,term_w1,"));
    assert!(scaling_study(ScalingExample::Truncated, &params, &[1.0, 2.0, 3.0], 10, &StreamFactory::new(0)).is_err());
}
