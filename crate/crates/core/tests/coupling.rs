use gruschin_harnack::bernstein::BernsteinFunction;
use gruschin_harnack::coupling::{
    entropy_estimate, run_coupling_deterministic, simulate_couplings, CouplingOptions, CouplingRecord, COUPLED_TOL,
};
use gruschin_harnack::gruschin::{endpoint_values, Clocks, Drift, GruschinModel, Sigma, StatePoint, StepFunction};
use gruschin_harnack::rng::StreamFactory;
use gruschin_harnack::stats::{combined_se, Estimate};
use gruschin_harnack::timechange::TimeChange;

fn stable_clocks() -> Clocks {
    Clocks::subordinated(
        BernsteinFunction::stable(0.7, 1.0).unwrap(),
        BernsteinFunction::truncated_stable(0.5, 1.0).unwrap(),
    )
}

fn dissipative_model() -> GruschinModel {
    let sigma = Sigma::constant(&[vec![2.0, 0.5], vec![0.0, 1.5]]).unwrap();
    GruschinModel::new(
        2,
        2,
        0.5,
        sigma,
        StepFunction::new(vec![0.0, 0.6], vec![1.0, 1.5]).unwrap(),
        // ⟨Az, z⟩ = -0.5 |z|²
        Drift::Linear { matrix: vec![-0.5, 0.2, -0.2, -0.5] },
        StepFunction::new(vec![0.0, 1.0], vec![-0.5, -0.2]).unwrap(),
    )
    .unwrap()
}

fn points() -> (StatePoint, StatePoint) {
    (
        StatePoint::new(vec![1.0, 0.0], vec![0.0, 0.5]),
        StatePoint::new(vec![0.7, 0.3], vec![0.4, 0.2]),
    )
}

fn records(model: &GruschinModel, clocks: &Clocks, n: usize, seed: u64) -> Vec<CouplingRecord> {
    let (x, y) = points();
    simulate_couplings(model, &x, &y, clocks, 1.0, n, 16, &CouplingOptions::default(), &StreamFactory::new(seed)).unwrap()
}

#[test]
fn pathwise_invariants_under_subordinated_clocks() {
    for model in [GruschinModel::standard(2, 2, 0.5).unwrap(), dissipative_model()] {
        for r in records(&model, &stable_clocks(), 2_000, 1) {
            assert!(r.modulus_error < 1e-12, "{}", r.modulus_error);
            assert!(r.tau1 <= 1.0);
            assert!(r.eta_bound_excess <= 1e-12);
            let tau2 = r.tau2.expect("second pair closes by 2T");
            assert!(tau2 <= 2.0 + 1e-12);
            assert!(r.final_modulus < COUPLED_TOL);
            assert_eq!(r.x_end, r.y_end);
            assert!(r.supermartingale_excess <= 1e-9 * (1.0 + r.h_total), "{}", r.supermartingale_excess);
        }
    }
}

#[test]
fn first_entropy_is_closed_form_for_identity_sigma() {
    // η = |x1 - y1| / G(T) along a fixed direction, so Σ ½|η|² Δℓ1 = |x1 - y1|² / (2 G(T))
    let model = GruschinModel::standard(2, 2, 0.5).unwrap();
    let dist2 = 0.3f64 * 0.3 + 0.3 * 0.3;
    for r in records(&model, &stable_clocks(), 500, 2) {
        assert!((r.entropy1 - dist2 / (2.0 * r.g_total)).abs() <= 1e-12 * (1.0 + r.entropy1));
    }
}

#[test]
fn weights_have_unit_mean() {
    for (i, model) in [GruschinModel::standard(2, 2, 0.5).unwrap(), dissipative_model()].iter().enumerate() {
        let rep = entropy_estimate(model, &points().0, &points().1, &stable_clocks(), 1.0, 20_000, 16, &CouplingOptions::default(), &StreamFactory::new(3 + i as u64)).unwrap();
        assert!(rep.er_mean.z_score(1.0).abs() <= 3.0, "{:?}", rep.er_mean);
        assert_eq!(rep.uncoupled_paths, 0);
        assert!(rep.entropy.mean >= 0.0);
        assert!(rep.tau1_max <= 1.0);
    }
}

#[test]
fn reweighted_coupled_path_has_law_started_at_y() {
    // E[R f(Y_2T)] = E f(X_2T(y)) for bounded f
    let model = dissipative_model();
    let clocks = stable_clocks();
    let (x, y) = points();
    let f = |p: &StatePoint| (p.x1[0] - 0.5 * p.x2[1]).cos() + 0.3 * (p.x2[0] * p.x1[1]).tanh();
    let n = 20_000;
    let recs = simulate_couplings(&model, &x, &y, &clocks, 1.0, n, 16, &CouplingOptions::default(), &StreamFactory::new(5)).unwrap();
    let weighted: Vec<f64> = recs.iter().map(|r| r.weight() * f(&r.y_end)).collect();
    let lhs = Estimate::from_samples(&weighted);
    let direct = Estimate::from_samples(&endpoint_values(&model, &f, 2.0, &y, &clocks, n, 32, &StreamFactory::new(6)).unwrap());
    let se = combined_se(&[lhs.std_error, direct.std_error]);
    assert!((lhs.mean - direct.mean).abs() <= 3.0 * se, "{lhs:?} vs {direct:?}");
}

#[test]
fn reweighting_under_deterministic_clocks() {
    let model = GruschinModel::standard(1, 1, 0.25).unwrap();
    let ell1 = TimeChange::linear(2.0, 2.0, 64);
    let ell2 = TimeChange::identity(2.0, 64);
    let x = StatePoint::new(vec![1.0], vec![0.0]);
    let y = StatePoint::new(vec![1.5], vec![0.5]);
    let f = |p: &StatePoint| 1.0 / (1.0 + p.x2[0] * p.x2[0]) + p.x1[0].sin();
    let streams = StreamFactory::new(7);
    let samples: Vec<f64> = (0..20_000)
        .map(|i| {
            let run = run_coupling_deterministic(&model, &x, &y, &ell1, &ell2, 1.0, 32, &CouplingOptions::default(), &mut streams.stream(i)).unwrap();
            assert!(run.modulus_error() < 1e-12);
            run.weight() * f(&run.y_end)
        })
        .collect();
    let lhs = Estimate::from_samples(&samples);
    let clocks = Clocks::Deterministic { ell1, ell2 };
    let direct = Estimate::from_samples(&endpoint_values(&model, &f, 2.0, &y, &clocks, 20_000, 64, &StreamFactory::new(8)).unwrap());
    let se = combined_se(&[lhs.std_error, direct.std_error]);
    assert!((lhs.mean - direct.mean).abs() <= 3.0 * se, "{lhs:?} vs {direct:?}");
}

#[test]
fn identical_starts_give_unit_weight() {
    let (x, _) = points();
    let recs = simulate_couplings(&dissipative_model(), &x, &x, &stable_clocks(), 1.0, 200, 16, &CouplingOptions::default(), &StreamFactory::new(9)).unwrap();
    for r in recs {
        assert_eq!(r.log_weight(), 0.0);
        assert_eq!(r.tau1, 0.0);
        assert_eq!(r.tau2, Some(0.0));
        assert_eq!(r.entropy_sample(), 0.0);
    }
}

#[test]
fn runs_are_reproducible() {
    let model = GruschinModel::standard(2, 2, 0.5).unwrap();
    assert_eq!(records(&model, &stable_clocks(), 100, 10), records(&model, &stable_clocks(), 100, 10));
}
