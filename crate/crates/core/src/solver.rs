//! Interaction-frame master equation: closed, field-independent (Redfield) and
//! full TCL dynamics, integrated with fixed-step RK4.
//!
//! Filtered operators live on a grid of spacing `h/2`, so every RK4 stage time
//! is a grid point and no interpolation of rates is needed.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filtering::{DissipatorMode, FilterContext, FilterTable, FilteredOperator};
use crate::linalg::{self, CMat, C64, I};
use crate::magnus::ClosedSystemModel;
use crate::noise::NoiseChannel;

pub const TRACE_TOLERANCE: f64 = 1e-8;
pub const HERMITICITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverMode {
    Closed,
    /// Field-independent Redfield dissipator with finite-time rates.
    Redfield,
    FullTcl,
}

impl SolverMode {
    pub const ALL: [SolverMode; 3] = [SolverMode::Closed, SolverMode::Redfield, SolverMode::FullTcl];

    fn dissipator(self) -> Option<DissipatorMode> {
        match self {
            SolverMode::Closed => None,
            SolverMode::Redfield => Some(DissipatorMode::FieldIndependent),
            SolverMode::FullTcl => Some(DissipatorMode::Full),
        }
    }
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMode::Closed => "closed",
            SolverMode::Redfield => "redfield",
            SolverMode::FullTcl => "full_tcl",
        })
    }
}

impl FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "closed" => Ok(SolverMode::Closed),
            "redfield" | "field_independent" | "redfield_field_independent" => Ok(SolverMode::Redfield),
            "full_tcl" | "full" | "tcl" => Ok(SolverMode::FullTcl),
            other => Err(Error::Config(format!("unknown solver mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub model: ClosedSystemModel,
    pub channels: Vec<NoiseChannel>,
    pub mode: SolverMode,
    /// Requested RK4 step; the actual step divides `final_time` evenly.
    pub step: f64,
    pub final_time: f64,
    pub initial_state: CMat,
    /// Truncation of the τ-integrals (None: full elapsed time).
    pub memory: Option<f64>,
    /// Record every n-th step (the final step is always recorded).
    pub record_stride: usize,
}

impl SimulationConfig {
    pub fn new(
        model: ClosedSystemModel,
        channels: Vec<NoiseChannel>,
        mode: SolverMode,
        step: f64,
        final_time: f64,
        initial_state: CMat,
    ) -> Result<Self> {
        let cfg = SimulationConfig {
            model,
            channels,
            mode,
            step,
            final_time,
            initial_state,
            memory: None,
            record_stride: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_mode(&self, mode: SolverMode) -> Self {
        let mut c = self.clone();
        c.mode = mode;
        c
    }

    /// Largest frequency the integrator has to resolve.
    pub fn fastest_frequency(&self) -> f64 {
        let mut f = if self.model.pulse.is_zero() {
            0.0
        } else {
            self.model.drive_frequencies().into_iter().fold(0.0f64, f64::max)
        };
        if self.mode != SolverMode::Closed {
            for ch in &self.channels {
                let (_, freqs) = crate::filtering::bohr_components(&self.model, &ch.operator);
                f = freqs.iter().fold(f, |m, w| m.max(w.abs()));
            }
        }
        f
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.model.dim();
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::Config(format!("step must be positive, got {}", self.step)));
        }
        if !(self.final_time > 0.0) || !self.final_time.is_finite() {
            return Err(Error::Config(format!("final time must be positive, got {}", self.final_time)));
        }
        for ch in &self.channels {
            if ch.operator.nrows() != n {
                return Err(Error::Config(format!("channel '{}' does not match the model dimension", ch.label)));
            }
        }
        let f = self.fastest_frequency();
        if f > 0.0 && self.step > std::f64::consts::TAU / (20.0 * f) {
            return Err(Error::Config(format!(
                "step {} does not resolve frequency {f:.4e} (limit {:.4e})",
                self.step,
                std::f64::consts::TAU / (20.0 * f)
            )));
        }
        let rho = &self.initial_state;
        if rho.nrows() != n || rho.ncols() != n {
            return Err(Error::Config(format!("initial state must be {n}×{n}")));
        }
        let herm = linalg::hermiticity_defect(rho);
        if herm > 1e-12 {
            return Err(Error::NotHermitian(herm));
        }
        let tr = linalg::trace(rho);
        if (tr - C64::new(1.0, 0.0)).norm() > 1e-12 {
            return Err(Error::Config(format!("initial state trace {tr} ≠ 1")));
        }
        let min = linalg::min_eigenvalue(rho);
        if min < -1e-12 {
            return Err(Error::Config(format!("initial state is not positive (eigenvalue {min:.3e})")));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.final_time / self.step) - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub trace_defect: f64,
    pub hermiticity_defect: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub mode: SolverMode,
    pub times: Vec<f64>,
    pub states: Vec<CMat>,
    /// One label per recorded rate column: `<channel>:rate(n,m)`.
    pub rate_labels: Vec<String>,
    pub rates: Vec<Vec<C64>>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub max_trace_defect: f64,
    pub max_hermiticity_defect: f64,
    pub min_eigenvalue: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &CMat {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Comma-separated export with a header row and 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.states.first().map_or(0, |s| s.nrows());
        let mut header = vec!["t".to_string()];
        for a in 0..n {
            for b in 0..n {
                header.push(format!("re_rho{a}{b}"));
                header.push(format!("im_rho{a}{b}"));
            }
        }
        for l in &self.rate_labels {
            header.push(format!("re_{l}"));
            header.push(format!("im_{l}"));
        }
        header.extend(["trace_defect", "hermiticity_defect", "min_eigenvalue"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![fmt17(*t)];
            let s = &self.states[i];
            for a in 0..n {
                for b in 0..n {
                    row.push(fmt17(s[(a, b)].re));
                    row.push(fmt17(s[(a, b)].im));
                }
            }
            for r in &self.rates[i] {
                row.push(fmt17(r.re));
                row.push(fmt17(r.im));
            }
            let d = &self.diagnostics[i];
            row.push(fmt17(d.trace_defect));
            row.push(fmt17(d.hermiticity_defect));
            row.push(fmt17(d.min_eigenvalue));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Numerical(format!("csv write failed: {e}")))?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Numerical(format!("csv write failed: {e}"))
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Precomputed generator of one configuration; reusable for any initial operator.
#[derive(Debug, Clone)]
pub struct Integrator {
    cfg: SimulationConfig,
    steps: usize,
    h: f64,
    filters: Option<(FilterContext, FilterTable)>,
}

impl Integrator {
    pub fn new(cfg: &SimulationConfig, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let steps = cfg.steps();
        let h = cfg.final_time / steps as f64;
        let filters = match cfg.mode.dissipator() {
            Some(mode) if !cfg.channels.is_empty() => {
                let ctx = FilterContext::new(&cfg.model, &cfg.channels, 0.5 * h, 2 * steps + 1, cfg.memory, exec)?;
                let table = FilterTable::build(&ctx, mode, exec)?;
                Some((ctx, table))
            }
            _ => None,
        };
        Ok(Integrator {
            cfg: cfg.clone(),
            steps,
            h,
            filters,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.cfg
    }

    /// Actual RK4 step.
    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn filters(&self) -> Option<&FilterContext> {
        self.filters.as_ref().map(|f| &f.0)
    }

    fn row(&self, k: usize) -> Option<&[Vec<FilteredOperator>]> {
        self.filters.as_ref().map(|(_, t)| t.row(k))
    }

    /// `Ṽ(t) + Ṽ_ren(t)` at half-step grid index `k`.
    pub fn effective_hamiltonian(&self, k: usize) -> Result<CMat> {
        let t = 0.5 * self.h * k as f64;
        let mut v = self.cfg.model.interaction_frame_drive(t);
        if let (Some((ctx, _)), Some(row)) = (&self.filters, self.row(k)) {
            v += ctx.renormalization_hamiltonian(t, row)?;
        }
        Ok(v)
    }

    /// `dρ̃/dt` at half-step grid index `k` (time `k·h/2`).
    pub fn generator(&self, k: usize, rho: &CMat) -> Result<CMat> {
        if k > 2 * self.steps {
            return Err(Error::param(format!("grid index {k} beyond the final time")));
        }
        let t = 0.5 * self.h * k as f64;
        let mut v = self.cfg.model.interaction_frame_drive(t);
        let mut out = linalg::zeros(rho.nrows());
        if let Some((ctx, table)) = &self.filters {
            let row = table.row(k);
            for (c, ops) in row.iter().enumerate() {
                let a = ctx.interaction_operator(c, t);
                let f = ctx.filtered_jump(c, t, ops);
                let fd = f.adjoint();
                let af = &a * &f;
                let fda = &fd * &a;
                out += &f * rho * &a + &a * rho * &fd - (linalg::anticommutator(&(&af + &fda), rho) * C64::new(0.5, 0.0));
                v += (af - fda) * (-0.5 * I);
            }
        }
        out += linalg::commutator(&v, rho) * (-I);
        Ok(out)
    }

    fn rate_labels(&self) -> Vec<String> {
        let Some((ctx, _)) = &self.filters else {
            return Vec::new();
        };
        let mut labels = Vec::new();
        for (c, ch) in ctx.channels().iter().enumerate() {
            for comp in ctx.components(c) {
                labels.push(format!("{}:rate({},{})", ch.label, comp.row, comp.col));
            }
        }
        labels
    }

    fn rate_record(&self, k: usize) -> Vec<C64> {
        self.row(k)
            .map(|row| row.iter().flat_map(|ops| ops.iter().map(|o| o.rate)).collect())
            .unwrap_or_default()
    }

    /// Integrates from a physical state, aborting on trace or Hermiticity drift.
    pub fn run(&self, rho0: &CMat) -> Result<Trajectory> {
        self.evolve(rho0, self.cfg.record_stride.max(1), true)
    }

    /// Integrates an arbitrary Hermitian initial operator; the trace check is
    /// relative to its initial trace.
    pub fn run_operator(&self, rho0: &CMat) -> Result<Trajectory> {
        self.evolve(rho0, self.cfg.record_stride.max(1), false)
    }

    /// Final operator only.
    pub fn run_final(&self, rho0: &CMat) -> Result<CMat> {
        let mut traj = self.evolve(rho0, usize::MAX, false)?;
        Ok(traj.states.pop().expect("final state is always recorded"))
    }

    fn evolve(&self, rho0: &CMat, stride: usize, physical: bool) -> Result<Trajectory> {
        let n = self.cfg.model.dim();
        if rho0.nrows() != n || rho0.ncols() != n {
            return Err(Error::Config(format!("initial operator must be {n}×{n}")));
        }
        let tr0 = linalg::trace(rho0);
        let mut traj = Trajectory {
            mode: self.cfg.mode,
            times: Vec::new(),
            states: Vec::new(),
            rate_labels: self.rate_labels(),
            rates: Vec::new(),
            diagnostics: Vec::new(),
            max_trace_defect: 0.0,
            max_hermiticity_defect: 0.0,
            min_eigenvalue: f64::INFINITY,
        };
        let mut rho = rho0.clone();
        let h = C64::new(self.h, 0.0);
        for s in 0..=self.steps {
            let tr_def = (linalg::trace(&rho) - tr0).norm();
            let herm = linalg::hermiticity_defect(&rho);
            traj.max_trace_defect = traj.max_trace_defect.max(tr_def);
            traj.max_hermiticity_defect = traj.max_hermiticity_defect.max(herm);
            let t = s as f64 * self.h;
            if tr_def > TRACE_TOLERANCE || herm > HERMITICITY_TOLERANCE || !tr_def.is_finite() {
                return Err(Error::Numerical(format!(
                    "{} run aborted at t = {t:.6e}: trace defect {tr_def:.3e}, Hermiticity defect {herm:.3e}, min eigenvalue {:.3e}",
                    self.cfg.mode,
                    linalg::min_eigenvalue(&rho)
                )));
            }
            if s % stride == 0 || s == self.steps {
                let min = linalg::min_eigenvalue(&rho);
                if physical && min < -1e-10 && traj.min_eigenvalue >= -1e-10 {
                    log::warn!("{} run: state lost positivity at t = {t:.6e} (eigenvalue {min:.3e})", self.cfg.mode);
                }
                traj.min_eigenvalue = traj.min_eigenvalue.min(min);
                traj.times.push(t);
                traj.states.push(rho.clone());
                traj.rates.push(self.rate_record(2 * s));
                traj.diagnostics.push(StepDiagnostics {
                    trace_defect: tr_def,
                    hermiticity_defect: herm,
                    min_eigenvalue: min,
                });
            }
            if s == self.steps {
                break;
            }
            let k = 2 * s;
            let k1 = self.generator(k, &rho)?;
            let k2 = self.generator(k + 1, &(&rho + &k1 * (h * 0.5)))?;
            let k3 = self.generator(k + 1, &(&rho + &k2 * (h * 0.5)))?;
            let k4 = self.generator(k + 2, &(&rho + &k3 * h))?;
            rho += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * (h / 6.0);
        }
        Ok(traj)
    }
}

/// Integrates `cfg` from its initial state.
pub fn integrate(cfg: &SimulationConfig) -> Result<Trajectory> {
    Integrator::new(cfg, Execution::default())?.run(&cfg.initial_state)
}

/// `ρ_S(t) = e^{−iH₀t} ρ̃(t) e^{iH₀t}` for every recorded state.
pub fn to_schrodinger(traj: &Trajectory, model: &ClosedSystemModel) -> Vec<CMat> {
    let e = model.energies();
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| CMat::from_fn(s.nrows(), s.ncols(), |a, b| s[(a, b)] * C64::from_polar(1.0, -(e[a] - e[b]) * t)))
        .collect()
}

/// Exponential decay rate of an oscillation envelope: least-squares slope of
/// `log |x − x∞|` at the local maxima of `|x − x∞|`, restricted to `t ∈ [t0, t1]`.
pub fn envelope_decay_rate(times: &[f64], values: &[f64], asymptote: f64, t0: f64, t1: f64) -> Option<f64> {
    let dev: Vec<f64> = values.iter().map(|v| (v - asymptote).abs()).collect();
    let mut pts = Vec::new();
    for i in 1..dev.len().saturating_sub(1) {
        if times[i] < t0 || times[i] > t1 {
            continue;
        }
        if dev[i] >= dev[i - 1] && dev[i] > dev[i + 1] && dev[i] > 0.0 {
            pts.push((times[i], dev[i].ln()));
        }
    }
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let (sxy, sxx) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx).powi(2)));
    Some(-sxy / sxx)
}
