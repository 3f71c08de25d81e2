//! Acceptance suite: one PASS/FAIL line per criterion at pinned tolerances.
//! Exits non-zero if any criterion fails.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tclsim::runner::{gate_metrics, optimize_xi, table1_rows};
use tclsim::Scenario;
use tclsim_core::exec::Execution;
use tclsim_core::filtering::{sigma_minus, sigma_plus, FilterContext};
use tclsim_core::gellmann::{characteristic_fn, CoeffVector, GellMannBasis};
use tclsim_core::linalg::{self, C64, I};
use tclsim_core::magnus::{
    charge_operator, number_operator, oracle_propagator, windowed_unitary, ClosedSystemModel, DriveFrame,
};
use tclsim_core::noise::{exponential_integral_e1, ohmic_bath, one_over_f, NoiseChannel};
use tclsim_core::pulse::{drag_envelope, rabi_envelope, zero_drive};
use tclsim_core::solver::{envelope_decay_rate, Integrator, SimulationConfig, SolverMode, Trajectory};

const EXEC: Execution = Execution::Parallel;

type Check = Result<(bool, String), String>;

fn scenario(name: &str) -> Scenario {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Trajectory defects collected from every shipped scenario run.
#[derive(Default)]
struct Invariants {
    runs: Vec<(String, f64, f64)>,
}

impl Invariants {
    fn record(&mut self, name: &str, t: &Trajectory) {
        self.runs.push((format!("{name}/{}", t.mode), t.max_trace_defect, t.max_hermiticity_defect));
    }
}

fn run_mode(sc: &Scenario, xi: f64, mode: SolverMode) -> Result<Trajectory, String> {
    let model = sc.model(xi, None).map_err(err)?;
    let tf = sc.final_time_for(&model).map_err(err)?;
    let cfg = sc.config(&model, mode, tf).map_err(err)?;
    Integrator::new(&cfg, EXEC).map_err(err)?.run(&sc.initial_state).map_err(err)
}

// 1 + 2: Fig. 2 steady-state coherence and envelope decay rates.
fn fig2(inv: &mut Invariants) -> (Check, Check) {
    let run = || -> Result<(Trajectory, Trajectory, f64), String> {
        let mut sc = scenario("fig2");
        // dense enough sampling to resolve the Rabi envelope maxima
        sc.record_stride = 4;
        let red = run_mode(&sc, 0.0, SolverMode::Redfield)?;
        let full = run_mode(&sc, 0.0, SolverMode::FullTcl)?;
        let s = &sc.channels[0].spectrum;
        Ok((red, full, s.symmetrized(0.08) / s.symmetrized(0.0)))
    };
    let (red, full, expected) = match run() {
        Ok(v) => v,
        Err(e) => return (Err(e.clone()), Err(e)),
    };
    inv.record("fig2", &red);
    inv.record("fig2", &full);
    let c_full = full.final_state()[(0, 1)].re;
    let c_red = red.final_state()[(0, 1)].re;
    let target = 2f64.tanh() / 2.0;
    let c1 = Ok((
        (c_full - target).abs() <= 0.01 && c_red.abs() < 0.01,
        format!("full-TCL Re ρ̃01 = {c_full:.5} (target {target:.4} ± 0.01), field-independent {c_red:.2e} (|·| < 0.01)"),
    ));
    let rate = |t: &Trajectory| {
        let p: Vec<f64> = t.states.iter().map(|r| r[(0, 0)].re).collect();
        envelope_decay_rate(&t.times, &p, 0.5, 0.0, *t.times.last().unwrap())
    };
    let c2 = match (rate(&full), rate(&red)) {
        (Some(gf), Some(gr)) => {
            let ratio = gf / gr;
            Ok((
                (ratio / 2.04 - 1.0).abs() <= 0.15,
                format!(
                    "rates {gf:.4e} / {gr:.4e} = {ratio:.4} (target 2.04 ± 15%; S̄(Ω_R)/S̄(0) = {expected:.4})"
                ),
            ))
        }
        _ => Err("too few envelope maxima to fit".into()),
    };
    (c1, c2)
}

// 3: Ω_R² corrections of the asymptotic relaxation rates.
fn golden_rule() -> Check {
    let s = ohmic_bath(1e-3, 5.0, f64::INFINITY).map_err(err)?;
    let (h, window) = (0.15, 2000.0);
    let points = (window / h) as usize + 1;
    let rate = |om: f64| -> Result<(f64, f64), String> {
        let model = ClosedSystemModel::qubit(1.0, rabi_envelope(om, 0.0, 1.0), DriveFrame::Rotating).map_err(err)?;
        let ch = NoiseChannel::new(sigma_minus() + sigma_plus(), s.clone(), "x").map_err(err)?;
        let ctx = FilterContext::new(&model, &[ch], h, points, None, EXEC).map_err(err)?;
        let rr = ctx.qubit_relaxation_rates(0, points - 1).map_err(err)?;
        // emission is the −ω_q Bohr component (|0⟩⟨1|), absorption the +ω_q one
        Ok((2.0 * rr.rate_neg.re, 2.0 * rr.rate_pos.re))
    };
    let (e0, a0) = rate(0.0)?;
    let curv = s.spectrum_second_derivative(1.0);
    let mut corr = Vec::new();
    for om in [0.01, 0.1] {
        let (e, a) = rate(om)?;
        corr.push((om, e - e0, a - a0));
    }
    let slope = (corr[1].1 / corr[0].1).log10();
    let ratio = corr[1].1 / (0.01 * curv / 4.0);
    let absorption = corr.iter().fold(0.0f64, |m, c| m.max(c.2.abs()));
    Ok((
        (slope - 2.0).abs() < 0.05 && (ratio - 1.0).abs() < 0.05 && absorption < 1e-9,
        format!(
            "γ₋ correction slope {slope:.4} over Ω_R ∈ [0.01, 0.1] (target 2 ± 0.05); \
             δγ₋/(Ω_R²S″/4) = {ratio:.4} at Ω_R = 0.1; |δγ₊| ≤ {absorption:.1e} (S(−ω) ≡ 0 at T = 0)"
        ),
    ))
}

// 4: Table I.
fn table1(inv: &mut Invariants) -> Result<((bool, String), f64), String> {
    let sc = scenario("table1");
    let t = table1_rows(&sc, EXEC).map_err(err)?;
    for mode in SolverMode::ALL {
        inv.record("table1", &run_mode(&sc, t.xi, mode)?);
    }
    let [u, unc, cor, tot] = t.rows;
    let within = |x: f64, want: f64| (x / want - 1.0).abs() <= 0.25;
    let sums = u.1 + unc.1 + cor.1 == tot.1 && u.2 + unc.2 + cor.2 == tot.2;
    let pass = within(tot.1, 2.44e-4) && within(tot.2, 1.48e-5) && cor.1 < 0.0 && cor.2 < 0.0 && sums;
    Ok((
        (
            pass,
            format!(
                "ξ* = {:.5}; total gate error {:.3e} (2.44e-4 ± 25%: {}), total leakage {:.3e} (1.48e-5 ± 25%: {}), \
                 correlated {:.3e} / {:.3e} (negative: {}), rows sum exactly: {sums}",
                t.xi,
                tot.1,
                within(tot.1, 2.44e-4),
                tot.2,
                within(tot.2, 1.48e-5),
                cor.1,
                cor.2,
                cor.1 < 0.0 && cor.2 < 0.0
            ),
        ),
        t.xi,
    ))
}

// 5: Fig. 3 trends.
fn fig3() -> Check {
    let (a, b) = (scenario("fig3a"), scenario("fig3b"));
    let modes = [SolverMode::Redfield, SolverMode::FullTcl];
    let mut worst = 0.0f64;
    let mut fid_ok = true;
    let mut leak_ok = true;
    let mut notes = Vec::new();
    for tg in [4.0, 5.0, 6.0, 7.0, 8.0] {
        let xi = optimize_xi(&a, Some(tg), EXEC).map_err(err)?.xi;
        let m = gate_metrics(&a, xi, Some(tg), &modes, EXEC).map_err(err)?;
        let (ir, ifull) = (1.0 - m[0].fidelity, 1.0 - m[1].fidelity);
        worst = worst.max((ifull - ir).abs() / ir);
        if tg >= 6.0 {
            let m = gate_metrics(&b, xi, Some(tg), &modes, EXEC).map_err(err)?;
            fid_ok &= m[1].fidelity > m[0].fidelity;
            notes.push(format!("{tg} ns ΔF = {:+.2e}", m[1].fidelity - m[0].fidelity));
            if tg == 8.0 {
                leak_ok = m[1].leakage < m[0].leakage;
                notes.push(format!("ΔL(8 ns) = {:+.2e}", m[1].leakage - m[0].leakage));
            }
        }
    }
    Ok((
        worst < 0.10 && fid_ok && leak_ok,
        format!(
            "(a) max relative infidelity difference {worst:.2e} over 4–8 ns (< 10%); (b) full − field-independent: {}",
            notes.join(", ")
        ),
    ))
}

// 6: production filtering against the Taylor-exponential oracle.
fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(2..=3);
        let tg = rng.gen_range(20.0..40.0);
        let frame = if rng.gen_bool(0.5) { DriveFrame::Full } else { DriveFrame::Rotating };
        let p = drag_envelope(rng.gen_range(0.2..1.0) * FRAC_PI_2, tg, tg / 4.0, rng.gen_range(0.0..1.0), -0.06, 1.0)
            .map_err(err)?;
        let model = if n == 2 {
            ClosedSystemModel::qubit(1.0, p, frame)
        } else {
            ClosedSystemModel::transmon(3, 1.0, rng.gen_range(-0.3..0.3), p, frame)
        }
        .map_err(err)?;
        let mut op = linalg::zeros(n);
        for r in 0..n {
            for c in r..n {
                let z = C64::new(rng.gen_range(-1.0..1.0), if r == c { 0.0 } else { rng.gen_range(-1.0..1.0) });
                op[(r, c)] = z;
                op[(c, r)] = z.conj();
            }
        }
        let spec = if rng.gen_bool(0.5) {
            one_over_f(1e-3, 1e-3)
        } else {
            ohmic_bath(1e-3, rng.gen_range(0.5..10.0), rng.gen_range(2.0..100.0))
        }
        .map_err(err)?;
        let ch = NoiseChannel::new(op, spec, "a").map_err(err)?;
        let ctx = FilterContext::new(&model, &[ch], 0.1, 301, None, Execution::Sequential).map_err(err)?;
        let k = rng.gen_range(1..301);
        for a in 0..n {
            for b in 0..n {
                let prod = ctx.filtering_operation(0, a, b, k).map_err(err)?.matrix();
                let direct = ctx.filtering_direct(0, a, b, k).map_err(err)?;
                worst = worst.max(linalg::rel_diff(&prod, &direct, 1e-300));
            }
        }
    }
    Ok((worst < 1e-8, format!("worst relative deviation {worst:.2e} over 50 instances (< 1e-8)")))
}

// 7: structural invariants along shipped trajectories; decoherence-matrix identities.
fn invariants(inv: &mut Invariants, xi: f64) -> Check {
    for name in ["qubit_relaxation", "fig3a", "fig3b"] {
        let sc = scenario(name);
        for &mode in &sc.modes {
            inv.record(name, &run_mode(&sc, if sc.is_drag() { xi } else { 0.0 }, mode)?);
        }
    }
    let tr = inv.runs.iter().fold(0.0f64, |m, r| m.max(r.1));
    let he = inv.runs.iter().fold(0.0f64, |m, r| m.max(r.2));

    // decoherence-matrix identities are verified inside qubit_relaxation_matrix
    // (it refuses to return on violation); here: the zero canonical rate
    let p = drag_envelope(FRAC_PI_2, 251.327, 62.83, 0.5, -0.06, 1.0).map_err(err)?;
    let model = ClosedSystemModel::qubit(1.0, p, DriveFrame::Full).map_err(err)?;
    let ch = NoiseChannel::new(sigma_minus() + sigma_plus(), ohmic_bath(2.5e-7, 10.0, 24.0).map_err(err)?, "x")
        .map_err(err)?;
    let ctx = FilterContext::new(&model, &[ch], 0.075, 3352, None, EXEC).map_err(err)?;
    let ks: Vec<usize> = (1..ctx.points()).collect();
    let zero = EXEC
        .map(ks.len(), |i| -> Result<f64, String> {
            let m = ctx.qubit_relaxation_matrix(0, ks[i]).map_err(err)?;
            let (ev, _) = linalg::hermitian_eigen(&m.matrix.gamma);
            let scale = ev.iter().fold(0.0f64, |a, e| a.max(e.abs()));
            let small = ev.iter().fold(f64::INFINITY, |a, e| a.min(e.abs()));
            Ok(small / scale)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    Ok((
        tr < 1e-8 && he < 1e-10 && zero < 1e-8,
        format!(
            "{} shipped runs: max trace defect {tr:.1e} (< 1e-8), max Hermiticity defect {he:.1e} (< 1e-10); \
             decoherence-matrix identities hold at all {} grid times, smallest |canonical rate| / largest ≤ {zero:.1e} (< 1e-8)",
            inv.runs.len(),
            ks.len()
        ),
    ))
}

// 8: zero-drive reduction.
fn zero_drive_reduction() -> Check {
    let mut worst = 0.0f64;
    let mut count = 0;
    for levels in [2, 3] {
        let model = ClosedSystemModel::transmon(levels, 1.0, -0.06, zero_drive(1.0), DriveFrame::Full).map_err(err)?;
        let channels = vec![
            NoiseChannel::new(charge_operator(levels), ohmic_bath(1e-3, 5.0, 24.0).map_err(err)?, "q").map_err(err)?,
            NoiseChannel::new(number_operator(levels), one_over_f(1e-4, 1e-3).map_err(err)?, "n").map_err(err)?,
        ];
        let mut rho = linalg::zeros(levels);
        for a in 0..levels {
            for b in 0..levels {
                rho[(a, b)] = if a == b { C64::new(1.0 / levels as f64, 0.0) } else { C64::new(0.1, 0.05 * (a as f64 - b as f64)) };
            }
        }
        let mk = |mode| -> Result<Integrator, String> {
            let cfg = SimulationConfig::new(model.clone(), channels.clone(), mode, 0.15, 300.0, linalg::unit(levels, 0, 0))
                .map_err(err)?;
            Integrator::new(&cfg, EXEC).map_err(err)
        };
        let (full, red) = (mk(SolverMode::FullTcl)?, mk(SolverMode::Redfield)?);
        for k in 0..=2 * full.steps() {
            let a = full.generator(k, &rho).map_err(err)?;
            let b = red.generator(k, &rho).map_err(err)?;
            worst = worst.max(linalg::max_abs(&(&a - &b)) / linalg::max_abs(&b));
            count += 1;
        }
    }
    Ok((worst <= 1e-12, format!("max relative generator difference {worst:.1e} over {count} grid times (N = 2, 3; ≤ 1e-12)")))
}

// 9: Magnus validity.
fn magnus() -> Check {
    let tg = 60.0;
    let qutrit = |amp: f64, anh: f64, xi: f64, frame| -> Result<ClosedSystemModel, String> {
        let p = drag_envelope(amp * FRAC_PI_2, tg, tg / 4.0, xi, -0.06, 1.0).map_err(err)?;
        ClosedSystemModel::transmon(3, 1.0, anh, p, frame).map_err(err)
    };
    let error = |m: &ClosedSystemModel| -> Result<f64, String> {
        let w = windowed_unitary(m, tg, tg).map_err(err)?.unitary;
        Ok(linalg::max_abs(&(w - oracle_propagator(m, tg, 0.0, 1e-13).map_err(err)?)))
    };
    let mut exact = 0.0f64;
    for amp in [1.0, 0.5, 0.25] {
        // harmonic ladder, single quadrature (ξ = 0), rotating frame
        exact = exact.max(error(&qutrit(amp, 0.0, 0.0, DriveFrame::Rotating)?)?);
    }
    let e: Vec<f64> = [0.5, 0.25, 0.125]
        .iter()
        .map(|&a| error(&qutrit(a, -0.06, 0.0, DriveFrame::Rotating)?))
        .collect::<Result<_, _>>()?;
    let ratios = [e[0] / e[1], e[1] / e[2]];
    Ok((
        exact < 1e-8 && ratios.iter().all(|r| (r / 8.0 - 1.0).abs() <= 0.2),
        format!(
            "Δa = 0: max |U − U_oracle| {exact:.1e} (< 1e-8); Δa = −0.06: halving ratios {:.2}, {:.2} (8 ± 20%)",
            ratios[0], ratios[1]
        ),
    ))
}

// 10: ∇K against finite differences of Tr exp(−iΛ·r); E₁(1).
fn gradient_and_e1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = 2 + i % 2;
        let b = GellMannBasis::new(n).map_err(err)?;
        let r: Vec<f64> = (0..b.len()).map(|_| rng.gen_range(-1.2..1.2)).collect();
        let grad = characteristic_fn(&CoeffVector(r.clone()), &b).gradient;
        let tr = |x: &[f64]| linalg::trace(&linalg::expm(&(b.compose(x) * (-I))));
        let h = 1e-5;
        for k in 0..b.len() {
            let (mut p, mut m) = (r.clone(), r.clone());
            p[k] += h;
            m[k] -= h;
            let fd = (tr(&p) - tr(&m)) / (2.0 * h);
            let scale = fd.norm().max(grad[k].norm()).max(1e-3);
            worst = worst.max((fd - grad[k]).norm() / scale);
        }
    }
    let e1 = exponential_integral_e1(1.0).map_err(err)?;
    let de = (e1 - 0.219_383_934_4).abs();
    Ok((
        worst < 1e-6 && de < 1e-10,
        format!("∇K vs FD worst relative {worst:.1e} on 100 points (< 1e-6); E₁(1) = {e1:.10} (|Δ| {de:.1e} < 1e-10)"),
    ))
}

fn report(n: usize, name: &str, c: Check, started: Instant) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match c {
        Ok((pass, detail)) => {
            println!("{} {n:>2}. {name}: {detail} [{secs:.1} s]", if pass { "PASS" } else { "FAIL" });
            pass
        }
        Err(e) => {
            println!("FAIL {n:>2}. {name}: error: {e} [{secs:.1} s]");
            false
        }
    }
}

fn main() {
    // a second invocation with a filter (e.g. `cargo test <name>`) has nothing to run here
    if std::env::args().skip(1).any(|a| !a.starts_with('-')) {
        return;
    }
    let mut inv = Invariants::default();
    let mut ok = true;

    let t = Instant::now();
    let (c1, c2) = fig2(&mut inv);
    ok &= report(1, "steady-state coherence", c1, t);
    ok &= report(2, "decay-rate renormalization", c2, t);

    let t = Instant::now();
    ok &= report(3, "golden-rule corrections", golden_rule(), t);

    let t = Instant::now();
    let (c4, xi) = match table1(&mut inv) {
        Ok((c, xi)) => (Ok(c), Some(xi)),
        Err(e) => (Err(e), None),
    };
    ok &= report(4, "Table I reproduction", c4, t);

    let t = Instant::now();
    ok &= report(5, "Fig. 3 trends", fig3(), t);

    let t = Instant::now();
    ok &= report(6, "oracle equivalence", oracle_equivalence(), t);

    let t = Instant::now();
    let c7 = match xi {
        Some(xi) => invariants(&mut inv, xi),
        None => Err("needs ξ* from the Table I run".into()),
    };
    ok &= report(7, "structural invariants", c7, t);

    let t = Instant::now();
    ok &= report(8, "zero-drive reduction", zero_drive_reduction(), t);

    let t = Instant::now();
    ok &= report(9, "Magnus validity", magnus(), t);

    let t = Instant::now();
    ok &= report(10, "gradient and special functions", gradient_and_e1(), t);

    if !ok {
        std::process::exit(1);
    }
}
