use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;
use tclsim_core::exec::Execution;
use tclsim_core::linalg::{self, CMat, C64, I};
use tclsim_core::magnus::{oracle_propagator, ClosedSystemModel, DriveFrame};
use tclsim_core::metrics::*;
use tclsim_core::pulse::drag_envelope;
use tclsim_core::solver::{Integrator, SimulationConfig, SolverMode};

fn random_matrix(d: usize, v: &[f64]) -> CMat {
    CMat::from_fn(d, d, |i, j| C64::new(v[2 * (i * d + j)], v[2 * (i * d + j) + 1]))
}

fn random_unitary(d: usize, v: &[f64]) -> CMat {
    let a = random_matrix(d, v);
    linalg::expm(&((&a + a.adjoint()) * (-I)))
}

fn depolarizing(d: usize, p: f64) -> QuantumMap {
    let images = (0..d * d)
        .map(|ij| {
            let (i, j) = (ij / d, ij % d);
            let mut m = linalg::unit(d, i, j) * C64::new(1.0 - p, 0.0);
            if i == j {
                m += linalg::identity(d) * C64::new(p / d as f64, 0.0);
            }
            m
        })
        .collect();
    QuantumMap::from_images(d, images).unwrap()
}

proptest! {
    #[test]
    fn entanglement_fidelity_forms_agree(
        d in 2usize..=3,
        maps in prop::collection::vec(-1.0f64..1.0, 162),
        target in prop::collection::vec(-1.0f64..1.0, 18),
    ) {
        let images = (0..d * d).map(|k| random_matrix(d, &maps[18 * k..])).collect();
        let e = QuantumMap::from_images(d, images).unwrap();
        let u = random_unitary(d, &target);
        let a = entanglement_fidelity(&e, &u).unwrap();
        let b = entanglement_fidelity_doubled(&e, &u).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn map_action_is_linear(
        maps in prop::collection::vec(-1.0f64..1.0, 72),
        x in prop::collection::vec(-1.0f64..1.0, 8),
        y in prop::collection::vec(-1.0f64..1.0, 8),
        alpha in -2.0f64..2.0,
    ) {
        let images = (0..4).map(|k| random_matrix(2, &maps[18 * k..])).collect();
        let e = QuantumMap::from_images(2, images).unwrap();
        let (a, b) = (random_matrix(2, &x), random_matrix(2, &y));
        let lhs = e.apply(&(&a * C64::new(alpha, 0.0) + &b));
        let rhs = e.apply(&a) * C64::new(alpha, 0.0) + e.apply(&b);
        prop_assert!(linalg::max_abs(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn unitary_target_is_perfect(v in prop::collection::vec(-1.0f64..1.0, 18)) {
        let u = random_unitary(3, &v);
        let e = QuantumMap::conjugation(&u);
        prop_assert!((average_fidelity(&e, &u).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(average_leakage(&e).abs() < 1e-12);
    }

    #[test]
    fn depolarizing_fidelity(d in 2usize..=3, p in 0.0f64..1.0) {
        let e = depolarizing(d, p);
        let df = d as f64;
        let want = 1.0 - p * (df - 1.0) / df;
        let u = linalg::identity(d);
        prop_assert!((average_fidelity(&e, &u).unwrap() - want).abs() < 1e-13);
        prop_assert!((entanglement_fidelity(&e, &u).unwrap() - (1.0 - p + p / (df * df))).abs() < 1e-13);
    }
}

#[test]
fn projected_conjugation_leakage() {
    // a rotation by θ between |1⟩ and |2⟩ leaks sin²θ of |1⟩ out of the qubit
    let theta: f64 = 0.3;
    let mut u = linalg::identity(3);
    u[(1, 1)] = C64::new(theta.cos(), 0.0);
    u[(2, 2)] = C64::new(theta.cos(), 0.0);
    u[(1, 2)] = C64::new(-theta.sin(), 0.0);
    u[(2, 1)] = C64::new(theta.sin(), 0.0);
    let e = QuantumMap::projected_conjugation(&u, 2);
    assert!((average_leakage(&e) - 0.5 * theta.sin().powi(2)).abs() < 1e-15);
}

#[test]
fn realized_closed_map_matches_oracle() {
    let tg = 60.0;
    let p = drag_envelope(FRAC_PI_2, tg, tg / 4.0, 0.5, -0.2, 1.0).unwrap();
    let model = ClosedSystemModel::transmon(3, 1.0, -0.2, p, DriveFrame::Full).unwrap();
    let cfg = SimulationConfig::new(model.clone(), vec![], SolverMode::Closed, 0.05, tg, linalg::unit(3, 0, 0)).unwrap();
    let it = Integrator::new(&cfg, Execution::Sequential).unwrap();
    for exec in [Execution::Sequential, Execution::Parallel] {
        let realized = realized_map(&it, 2, exec).unwrap();
        let oracle = closed_map(&model, tg, 2, 1e-12).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(linalg::max_abs(&(realized.image(i, j) - oracle.image(i, j))) < 1e-8);
            }
        }
        // the frame-free oracle: P U P for the same propagator
        let u = oracle_propagator(&model, tg, 0.0, 1e-12).unwrap();
        let leak = 1.0 - (0..2).map(|i| (0..2).map(|a| u[(a, i)].norm_sqr()).sum::<f64>()).sum::<f64>() / 2.0;
        assert!((average_leakage(&realized) - leak).abs() < 1e-8);
    }
    assert!(realized_map(&it, 4, Execution::Sequential).is_err());
}

#[test]
fn fidelity_rejects_bad_targets() {
    let e = QuantumMap::identity(2);
    assert!(average_fidelity(&e, &linalg::identity(3)).is_err());
    assert!(average_fidelity(&e, &(linalg::identity(2) * C64::new(2.0, 0.0))).is_err());
    assert!(QuantumMap::from_images(2, vec![linalg::identity(2); 3]).is_err());
    assert!((average_fidelity(&QuantumMap::conjugation(&sqrt_x()), &sqrt_x()).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn golden_section_finds_interior_maximum() {
    for exec in [Execution::Sequential, Execution::Parallel] {
        let opt = maximize_scalar(|x| Ok(1.0 - (x - 0.3731).powi(2)), 0.0, 1.5, 31, 1e-7, exec).unwrap();
        assert!(opt.unimodal);
        assert!((opt.xi - 0.3731).abs() < 1e-6, "{}", opt.xi);
        assert_eq!(opt.grid.len(), 31);
    }
    let bumpy = maximize_scalar(|x| Ok((10.0 * x).cos() + 0.1 * x), 0.0, 1.5, 31, 1e-7, Execution::Sequential).unwrap();
    assert!(!bumpy.unimodal);
    assert!(bumpy.grid.iter().all(|&(_, f)| f <= bumpy.fidelity));
    assert!(maximize_scalar(|x| Ok(x), 1.0, 0.0, 31, 1e-7, Execution::Sequential).is_err());
    assert!(maximize_scalar(|x| Ok(x), 0.0, 1.0, 2, 1e-7, Execution::Sequential).is_err());
}

#[test]
fn closed_form_estimates() {
    assert_eq!(phenomenological_fidelity(0.0), 1.0);
    let g = 1e-5;
    // 1 − F = γt/3 − (γt)²/8 + …
    assert!(((1.0 - phenomenological_fidelity(g)) - (g / 3.0 - g * g / 8.0)).abs() < 1e-9 * g);
    let x = ErrorEstimateInput {
        gamma: 1e-4,
        spectrum: 2e-4,
        spectrum_curvature: 3e-3,
        dephasing: 1e-5,
        dephasing_slope: 0.0,
        gate_time: 200.0,
        rabi: 0.01,
    };
    let est = closed_form_error_estimates(&x).unwrap();
    // a t + b/t at fixed rotation angle is stationary at the optimum
    let t_opt = est.optimal_gate_time.unwrap();
    let at = |t: f64| {
        let y = ErrorEstimateInput { gate_time: t, rabi: x.rabi * x.gate_time / t, ..x };
        closed_form_error_estimates(&y).unwrap().relaxation_infidelity
    };
    assert!(at(t_opt) < at(0.9 * t_opt) && at(t_opt) < at(1.1 * t_opt));
    assert!((est.dephasing_infidelity - 1e-5 * 200.0 / 3.0).abs() < 1e-15);
    assert!(closed_form_error_estimates(&ErrorEstimateInput { gamma: -1.0, ..x }).is_err());
}
