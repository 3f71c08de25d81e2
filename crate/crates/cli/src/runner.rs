//! Scenario execution. Every entry point returns the rendered CSV files;
//! [`crate::commit`] writes them.

use tclsim_core::exec::Execution;
use tclsim_core::metrics::{average_fidelity, average_leakage, closed_map, maximize_scalar, realized_map, DragOptimum};
use tclsim_core::noise::NoiseChannel;
use tclsim_core::solver::{fmt17, Integrator, SolverMode};

use crate::scenario::Scenario;
use crate::CliError;

/// Tolerance of the reference propagator used by the ξ optimizer.
pub const ORACLE_TOLERANCE: f64 = 1e-11;
pub const XI_RANGE: (f64, f64) = (0.0, 1.5);
pub const XI_GRID: usize = 31;
pub const XI_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub name: String,
    pub contents: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateMetrics {
    pub mode: SolverMode,
    pub fidelity: f64,
    pub leakage: f64,
}

/// Unitary / Uncorrelated / Correlated / Total rows of gate error and leakage.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1 {
    pub xi: f64,
    pub rows: [(&'static str, f64, f64); 4],
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let err = |e: csv::Error| CliError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

/// Maximizes the closed-dynamics average fidelity of the target over ξ.
pub fn optimize_xi(sc: &Scenario, tg_ns: Option<f64>, exec: Execution) -> Result<DragOptimum, CliError> {
    if !sc.is_drag() {
        return Err(CliError::Config("ξ optimization needs a DRAG pulse".into()));
    }
    let tg = sc.gate_time(tg_ns)?;
    let target = sc.target();
    // validate the pulse once so configuration errors are not reported as numerical ones
    sc.model(0.0, tg_ns)?;
    let opt = maximize_scalar(
        |xi| {
            let model = sc.model(xi, tg_ns).map_err(|e| tclsim_core::Error::Numerical(e.to_string()))?;
            average_fidelity(&closed_map(&model, tg, 2, ORACLE_TOLERANCE)?, &target)
        },
        XI_RANGE.0,
        XI_RANGE.1,
        XI_GRID,
        XI_TOLERANCE,
        exec,
    )?;
    if !opt.unimodal {
        log::warn!("t_g = {:.4} ns: fidelity is not unimodal in ξ; using the best grid point", sc.ns(tg));
    }
    Ok(opt)
}

fn resolve_xi(sc: &Scenario, tg_ns: Option<f64>, exec: Execution) -> Result<f64, CliError> {
    match (sc.file.pulse.xi, tg_ns) {
        (Some(xi), None) => Ok(xi),
        _ if sc.is_drag() => Ok(optimize_xi(sc, tg_ns, exec)?.xi),
        _ => Ok(0.0),
    }
}

/// Realized gate metrics on the computational subspace for each mode.
pub fn gate_metrics(
    sc: &Scenario,
    xi: f64,
    tg_ns: Option<f64>,
    modes: &[SolverMode],
    exec: Execution,
) -> Result<Vec<GateMetrics>, CliError> {
    let model = sc.model(xi, tg_ns)?;
    let tf = match tg_ns {
        Some(_) => sc.gate_time(tg_ns)?,
        None => sc.final_time_for(&model)?,
    };
    let target = sc.target();
    modes
        .iter()
        .map(|&mode| {
            let cfg = sc.config(&model, mode, tf)?;
            let integ = Integrator::new(&cfg, exec)?;
            let map = realized_map(&integ, 2, exec)?;
            Ok(GateMetrics {
                mode,
                fidelity: average_fidelity(&map, &target)?,
                leakage: average_leakage(&map),
            })
        })
        .collect()
}

const METRICS_HEADER: [&str; 8] = [
    "t_g_ns",
    "xi",
    "mode",
    "fidelity",
    "infidelity",
    "leakage",
    "unitary_fidelity",
    "unitary_leakage",
];

fn metrics_rows(tg_ns: f64, xi: f64, metrics: &[GateMetrics]) -> Vec<Vec<String>> {
    let unitary = metrics
        .iter()
        .find(|m| m.mode == SolverMode::Closed)
        .copied()
        .expect("closed mode is always evaluated");
    metrics
        .iter()
        .map(|m| {
            vec![
                fmt17(tg_ns),
                fmt17(xi),
                m.mode.to_string(),
                fmt17(m.fidelity),
                fmt17(1.0 - m.fidelity),
                fmt17(m.leakage),
                fmt17(unitary.fidelity),
                fmt17(unitary.leakage),
            ]
        })
        .collect()
}

fn with_closed(modes: &[SolverMode]) -> Vec<SolverMode> {
    let mut out = vec![SolverMode::Closed];
    out.extend(modes.iter().copied().filter(|m| *m != SolverMode::Closed));
    out
}

/// `simulate`: one trajectory per mode plus gate metrics for DRAG pulses.
pub fn simulate(sc: &Scenario, exec: Execution) -> Result<Vec<Output>, CliError> {
    let xi = resolve_xi(sc, None, exec)?;
    let model = sc.model(xi, None)?;
    let tf = sc.final_time_for(&model)?;
    let mut out = Vec::new();
    if sc.write_trajectory {
        for &mode in &sc.modes {
            let cfg = sc.config(&model, mode, tf)?;
            let traj = Integrator::new(&cfg, exec)?.run(&sc.initial_state)?;
            log::info!(
                "{mode}: max trace defect {:.2e}, max Hermiticity defect {:.2e}, min eigenvalue {:.2e}",
                traj.max_trace_defect,
                traj.max_hermiticity_defect,
                traj.min_eigenvalue
            );
            let mut buf = Vec::new();
            traj.write_csv(&mut buf)?;
            out.push(Output {
                name: format!("{}_{mode}.csv", sc.name),
                contents: buf,
            });
        }
    }
    if sc.write_metrics {
        let metrics = gate_metrics(sc, xi, None, &with_closed(&sc.modes), exec)?;
        let tg_ns = sc.ns(sc.gate_time(None)?);
        out.push(Output {
            name: format!("{}_metrics.csv", sc.name),
            contents: csv_table(&METRICS_HEADER, metrics_rows(tg_ns, xi, &metrics))?,
        });
    }
    Ok(out)
}

/// Parses `a:b:step` (ns, inclusive of `b`).
pub fn parse_range(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("gate-time range '{spec}' must look like a:b:step"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [x] if x > 0.0 => Ok(vec![x]),
        [a, b, s] if a > 0.0 && b >= a && s > 0.0 && a.is_finite() && b.is_finite() => {
            let n = ((b - a) / s + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| a + s * i as f64).collect())
        }
        _ => Err(bad()),
    }
}

/// `sweep`: per gate time, optimize ξ on the closed dynamics, then evaluate
/// every mode. Sweep points run in the work pool.
pub fn sweep(sc: &Scenario, tgs_ns: &[f64], exec: Execution) -> Result<(Vec<Output>, Vec<(f64, f64, Vec<GateMetrics>)>), CliError> {
    if !sc.is_drag() {
        return Err(CliError::Config("sweeps need a DRAG pulse".into()));
    }
    let modes = with_closed(&sc.modes);
    let results = exec.map(tgs_ns.len(), |i| -> Result<_, CliError> {
        let tg = Some(tgs_ns[i]);
        let xi = optimize_xi(sc, tg, exec)?.xi;
        let m = gate_metrics(sc, xi, tg, &modes, exec)?;
        log::info!("t_g = {} ns done (ξ* = {xi:.5})", tgs_ns[i]);
        Ok((tgs_ns[i], xi, m))
    });
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let rows = results.iter().flat_map(|(tg, xi, m)| metrics_rows(*tg, *xi, m));
    let out = vec![Output {
        name: format!("{}_sweep.csv", sc.name),
        contents: csv_table(&METRICS_HEADER, rows)?,
    }];
    Ok((out, results))
}

/// `optimize-drag`: ξ* and the coarse grid it was refined from.
pub fn optimize_drag(sc: &Scenario, tg_ns: Option<f64>, exec: Execution) -> Result<(Vec<Output>, DragOptimum), CliError> {
    let opt = optimize_xi(sc, tg_ns, exec)?;
    let tg = sc.ns(sc.gate_time(tg_ns)?);
    let summary = csv_table(
        &["t_g_ns", "xi", "fidelity", "infidelity", "unimodal"],
        [vec![
            fmt17(tg),
            fmt17(opt.xi),
            fmt17(opt.fidelity),
            fmt17(1.0 - opt.fidelity),
            opt.unimodal.to_string(),
        ]],
    )?;
    let grid = csv_table(
        &["xi", "fidelity"],
        opt.grid.iter().map(|(x, f)| vec![fmt17(*x), fmt17(*f)]),
    )?;
    Ok((
        vec![
            Output {
                name: format!("{}_xi.csv", sc.name),
                contents: summary,
            },
            Output {
                name: format!("{}_xi_grid.csv", sc.name),
                contents: grid,
            },
        ],
        opt,
    ))
}

/// Error decomposition of a single gate.
pub fn table1_rows(sc: &Scenario, exec: Execution) -> Result<Table1, CliError> {
    if !sc.is_drag() {
        return Err(CliError::Config("table1 needs a DRAG pulse".into()));
    }
    let xi = resolve_xi(sc, None, exec)?;
    let m = gate_metrics(sc, xi, None, &SolverMode::ALL, exec)?;
    let err = |i: usize| 1.0 - m[i].fidelity;
    let (u, r, t) = ((err(0), m[0].leakage), (err(1), m[1].leakage), (err(2), m[2].leakage));
    let unc = (r.0 - u.0, r.1 - u.1);
    let cor = (t.0 - r.0, t.1 - r.1);
    // the total is summed from the rows so the decomposition is exact in floating point
    Ok(Table1 {
        xi,
        rows: [
            ("unitary", u.0, u.1),
            ("uncorrelated", unc.0, unc.1),
            ("correlated", cor.0, cor.1),
            ("total", u.0 + unc.0 + cor.0, u.1 + unc.1 + cor.1),
        ],
    })
}

pub fn table1(sc: &Scenario, exec: Execution) -> Result<(Vec<Output>, Table1), CliError> {
    let t = table1_rows(sc, exec)?;
    let contents = csv_table(
        &["row", "gate_error", "leakage", "xi"],
        t.rows
            .iter()
            .map(|(name, e, l)| vec![name.to_string(), fmt17(*e), fmt17(*l), fmt17(t.xi)]),
    )?;
    Ok((
        vec![Output {
            name: format!("{}_table1.csv", sc.name),
            contents,
        }],
        t,
    ))
}

fn file_label(ch: &NoiseChannel) -> String {
    ch.label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// `spectra`: S, S̄, J on `[−ω_max, ω_max]` and C(τ) on `(0, τ_max]` per channel.
pub fn spectra(sc: &Scenario, omega_max: f64, tau_max: f64, points: usize) -> Result<Vec<Output>, CliError> {
    if !(omega_max > 0.0 && tau_max > 0.0 && points >= 2) {
        return Err(CliError::Config("spectra need positive ranges and at least two points".into()));
    }
    if sc.channels.is_empty() {
        return Err(CliError::Config("scenario has no noise blocks".into()));
    }
    let mut out = Vec::new();
    for ch in &sc.channels {
        let s = &ch.spectrum;
        let spec_rows = (0..points).map(|i| {
            let w = -omega_max + 2.0 * omega_max * i as f64 / (points - 1) as f64;
            vec![fmt17(w), fmt17(s.spectrum(w)), fmt17(s.symmetrized(w)), fmt17(s.antisymmetrized(w))]
        });
        out.push(Output {
            name: format!("{}_spectrum_{}.csv", sc.name, file_label(ch)),
            contents: csv_table(&["omega", "s", "s_bar", "j"], spec_rows)?,
        });
        let mut corr = Vec::with_capacity(points);
        for i in 1..=points {
            let tau = tau_max * i as f64 / points as f64;
            let c = s.correlation(tau);
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(CliError::Numerical(format!("C({tau}) is not finite for '{}'", ch.label)));
            }
            corr.push(vec![fmt17(tau), fmt17(c.re), fmt17(c.im)]);
        }
        out.push(Output {
            name: format!("{}_correlation_{}.csv", sc.name, file_label(ch)),
            contents: csv_table(&["tau", "re_c", "im_c"], corr)?,
        });
    }
    Ok(out)
}
