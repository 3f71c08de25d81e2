//! TOML scenario files. Every dimensional quantity carries a unit suffix:
//! `_ghz` / `_ns` for laboratory units, `_wq` for multiples of the qubit
//! frequency ω_q (times in units of 1/ω_q). Internally everything is in ω_q units.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tclsim_core::filtering::sigma_z;
use tclsim_core::linalg::{self, CMat, C64};
use tclsim_core::magnus::{charge_operator, number_operator, ClosedSystemModel, DriveFrame};
use tclsim_core::noise::{self, NoiseChannel, NoiseSpectrum};
use tclsim_core::pulse::{self, PulseEnvelope};
use tclsim_core::solver::{SimulationConfig, SolverMode};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub system: SystemBlock,
    pub pulse: PulseBlock,
    #[serde(default)]
    pub noise: Vec<NoiseBlock>,
    pub solver: SolverBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    #[default]
    Full,
    Rotating,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub levels: usize,
    pub qubit_frequency_ghz: f64,
    pub anharmonicity_wq: Option<f64>,
    pub anharmonicity_ghz: Option<f64>,
    #[serde(default)]
    pub frame: Frame,
    #[serde(default = "default_initial")]
    pub initial_state: String,
}

fn default_initial() -> String {
    "ground".into()
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    None,
    Rabi,
    Drag,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseBlock {
    pub kind: PulseKind,
    pub omega_x_wq: Option<f64>,
    pub omega_x_ghz: Option<f64>,
    pub omega_y_wq: Option<f64>,
    pub omega_y_ghz: Option<f64>,
    pub carrier_wq: Option<f64>,
    pub carrier_ghz: Option<f64>,
    /// Rotation angle in radians (DRAG), default π/2.
    pub theta: Option<f64>,
    pub gate_time_ns: Option<f64>,
    pub gate_time_wq: Option<f64>,
    pub sigma_ns: Option<f64>,
    pub sigma_wq: Option<f64>,
    /// DRAG coefficient; omitted means "optimize on the closed dynamics".
    pub xi: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum OperatorTag {
    SigmaX,
    SigmaZ,
    Charge,
    Number,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Ohmic,
    OneOverF,
    Tabulated,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub label: String,
    pub operator: OperatorTag,
    pub spectrum: SpectrumKind,
    /// Dimensionless coupling λ.
    pub coupling: Option<f64>,
    pub cutoff_wq: Option<f64>,
    pub cutoff_ghz: Option<f64>,
    /// βω_q (dimensionless); `inf` for zero temperature.
    pub beta_wq: Option<f64>,
    pub ir_cutoff_wq: Option<f64>,
    pub ir_cutoff_ghz: Option<f64>,
    /// CSV `omega_wq,s` relative to the scenario file.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    pub step_wq: Option<f64>,
    pub step_ns: Option<f64>,
    pub final_time_wq: Option<f64>,
    pub final_time_ns: Option<f64>,
    pub memory_wq: Option<f64>,
    pub memory_ns: Option<f64>,
    #[serde(default = "one")]
    pub record_stride: usize,
}

fn default_modes() -> Vec<String> {
    SolverMode::ALL.iter().map(|m| m.to_string()).collect()
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub prefix: Option<String>,
    /// Write one trajectory CSV per mode (default true).
    pub trajectory: Option<bool>,
    /// Write gate metrics; defaults to true for DRAG pulses.
    pub metrics: Option<bool>,
}

fn pick(name: &str, a: Option<f64>, a_unit: &str, b: Option<f64>, b_unit: &str) -> Result<Option<(f64, bool)>, CliError> {
    match (a, b) {
        (Some(_), Some(_)) => Err(CliError::Config(format!("give either {name}_{a_unit} or {name}_{b_unit}, not both"))),
        (Some(x), None) => Ok(Some((x, true))),
        (None, Some(x)) => Ok(Some((x, false))),
        (None, None) => Ok(None),
    }
}

fn finite(name: &str, x: f64) -> Result<f64, CliError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(CliError::Config(format!("{name} must be finite")))
    }
}

/// Validated scenario in ω_q units.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub dir: PathBuf,
    pub file: ScenarioFile,
    /// ω_q in rad/ns.
    pub omega_q_per_ns: f64,
    pub levels: usize,
    pub anharmonicity: f64,
    pub frame: DriveFrame,
    pub initial_state: CMat,
    pub channels: Vec<NoiseChannel>,
    pub modes: Vec<SolverMode>,
    pub step: f64,
    pub final_time: Option<f64>,
    pub memory: Option<f64>,
    pub record_stride: usize,
    pub write_trajectory: bool,
    pub write_metrics: bool,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scenario")
            .to_string();
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &name, &dir)
    }

    pub fn parse(text: &str, name: &str, dir: &Path) -> Result<Self, CliError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        let sys = &file.system;
        if sys.levels < 2 {
            return Err(CliError::Config("system.levels must be at least 2".into()));
        }
        if !(sys.qubit_frequency_ghz > 0.0) || !sys.qubit_frequency_ghz.is_finite() {
            return Err(CliError::Config("system.qubit_frequency_ghz must be positive".into()));
        }
        let fq = sys.qubit_frequency_ghz;
        let omega_q_per_ns = TAU * fq;
        // ω/ω_q from an ordinary frequency in GHz, t·ω_q from ns
        let freq = |v: (f64, bool)| if v.1 { v.0 } else { v.0 / fq };
        let time = |v: (f64, bool)| if v.1 { v.0 } else { v.0 * omega_q_per_ns };

        let anharmonicity = pick("anharmonicity", sys.anharmonicity_wq, "wq", sys.anharmonicity_ghz, "ghz")?
            .map(freq)
            .unwrap_or(0.0);
        finite("anharmonicity", anharmonicity)?;
        if anharmonicity == 0.0 && file.pulse.kind == PulseKind::Drag {
            return Err(CliError::Config("DRAG needs a nonzero system.anharmonicity".into()));
        }
        let frame = match sys.frame {
            Frame::Full => DriveFrame::Full,
            Frame::Rotating => DriveFrame::Rotating,
        };
        let initial_state = initial_state(&sys.initial_state, sys.levels)?;

        let mut channels = Vec::new();
        for (i, nb) in file.noise.iter().enumerate() {
            channels.push(channel(nb, i, sys.levels, dir, &freq)?);
        }
        let mut labels: Vec<&str> = channels.iter().map(|c| c.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("noise labels must be unique".into()));
        }

        let sv = &file.solver;
        let modes = parse_modes(&sv.modes)?;
        let step = pick("step", sv.step_wq, "wq", sv.step_ns, "ns")?
            .map(time)
            .ok_or_else(|| CliError::Config("solver.step_wq or solver.step_ns is required".into()))?;
        let final_time = pick("final_time", sv.final_time_wq, "wq", sv.final_time_ns, "ns")?.map(time);
        let memory = pick("memory", sv.memory_wq, "wq", sv.memory_ns, "ns")?.map(time);
        if let Some(m) = memory {
            if !(m > 0.0) {
                return Err(CliError::Config("solver.memory must be positive".into()));
            }
        }
        if sv.record_stride == 0 {
            return Err(CliError::Config("solver.record_stride must be at least 1".into()));
        }
        let is_drag = file.pulse.kind == PulseKind::Drag;
        let write_metrics = file.output.metrics.unwrap_or(is_drag);
        if write_metrics && !is_drag {
            return Err(CliError::Config("gate metrics need a DRAG pulse (the gate target comes from θ)".into()));
        }
        let sc = Scenario {
            name: file.output.prefix.clone().unwrap_or_else(|| name.to_string()),
            dir: dir.to_path_buf(),
            omega_q_per_ns,
            levels: sys.levels,
            anharmonicity,
            frame,
            initial_state,
            channels,
            modes,
            step,
            final_time,
            memory,
            record_stride: sv.record_stride,
            write_trajectory: file.output.trajectory.unwrap_or(true),
            write_metrics,
            file,
        };
        sc.check()?;
        Ok(sc)
    }

    /// Pulse errors and step resolvability surface at load time.
    fn check(&self) -> Result<(), CliError> {
        let model = self.model(self.file.pulse.xi.unwrap_or(0.0), None)?;
        let tf = self.final_time_for(&model)?;
        for mode in &self.modes {
            self.config(&model, *mode, tf)?;
        }
        Ok(())
    }

    /// Command-line overrides of the solver block.
    pub fn apply_overrides(&mut self, modes: Option<Vec<SolverMode>>, step: Option<f64>) -> Result<(), CliError> {
        if let Some(m) = modes {
            if m.is_empty() {
                return Err(CliError::Config("at least one solver mode is required".into()));
            }
            self.modes = m;
        }
        if let Some(h) = step {
            self.step = h;
        }
        self.check()
    }

    pub fn is_drag(&self) -> bool {
        self.file.pulse.kind == PulseKind::Drag
    }

    pub fn ns(&self, t: f64) -> f64 {
        t / self.omega_q_per_ns
    }

    /// Gate time in 1/ω_q; `override_ns` replaces the file value (sweeps).
    pub fn gate_time(&self, override_ns: Option<f64>) -> Result<f64, CliError> {
        if let Some(ns) = override_ns {
            return Ok(ns * self.omega_q_per_ns);
        }
        let p = &self.file.pulse;
        pick("pulse.gate_time", p.gate_time_wq, "wq", p.gate_time_ns, "ns")?
            .map(|v| if v.1 { v.0 } else { v.0 * self.omega_q_per_ns })
            .ok_or_else(|| CliError::Config("DRAG pulse needs pulse.gate_time_ns or pulse.gate_time_wq".into()))
    }

    fn pulse(&self, xi: f64, tg_ns: Option<f64>) -> Result<PulseEnvelope, CliError> {
        let p = &self.file.pulse;
        let fq = self.file.system.qubit_frequency_ghz;
        let freq = |v: (f64, bool)| if v.1 { v.0 } else { v.0 / fq };
        let carrier = pick("pulse.carrier", p.carrier_wq, "wq", p.carrier_ghz, "ghz")?
            .map(freq)
            .unwrap_or(1.0);
        finite("pulse.carrier", carrier)?;
        Ok(match p.kind {
            PulseKind::None => pulse::zero_drive(carrier),
            PulseKind::Rabi => {
                let ox = pick("pulse.omega_x", p.omega_x_wq, "wq", p.omega_x_ghz, "ghz")?.map(freq).unwrap_or(0.0);
                let oy = pick("pulse.omega_y", p.omega_y_wq, "wq", p.omega_y_ghz, "ghz")?.map(freq).unwrap_or(0.0);
                pulse::rabi_envelope(finite("pulse.omega_x", ox)?, finite("pulse.omega_y", oy)?, carrier)
            }
            PulseKind::Drag => {
                let tg = self.gate_time(tg_ns)?;
                let sigma = match tg_ns {
                    // sweeps always use σ = t_g/4
                    Some(_) => tg / 4.0,
                    None => pick("pulse.sigma", p.sigma_wq, "wq", p.sigma_ns, "ns")?
                        .map(|v| if v.1 { v.0 } else { v.0 * self.omega_q_per_ns })
                        .unwrap_or(tg / 4.0),
                };
                pulse::drag_envelope(p.theta.unwrap_or(FRAC_PI_2), tg, sigma, xi, self.anharmonicity, carrier)?
            }
        })
    }

    pub fn model(&self, xi: f64, tg_ns: Option<f64>) -> Result<ClosedSystemModel, CliError> {
        let p = self.pulse(xi, tg_ns)?;
        Ok(if self.levels == 2 {
            ClosedSystemModel::qubit(1.0, p, self.frame)?
        } else {
            ClosedSystemModel::transmon(self.levels, 1.0, self.anharmonicity, p, self.frame)?
        })
    }

    /// `t_f` from the solver block, or the gate time for DRAG pulses.
    pub fn final_time_for(&self, model: &ClosedSystemModel) -> Result<f64, CliError> {
        match (self.final_time, model.pulse.gate_time()) {
            (Some(t), _) => Ok(t),
            (None, Some(tg)) => Ok(tg),
            (None, None) => Err(CliError::Config("solver.final_time_wq or solver.final_time_ns is required".into())),
        }
    }

    pub fn config(&self, model: &ClosedSystemModel, mode: SolverMode, tf: f64) -> Result<SimulationConfig, CliError> {
        let mut cfg = SimulationConfig::new(
            model.clone(),
            self.channels.clone(),
            mode,
            self.step,
            tf,
            self.initial_state.clone(),
        )?;
        cfg.memory = self.memory;
        cfg.record_stride = self.record_stride;
        Ok(cfg)
    }

    /// Target gate `exp(−iθσx/2)` on the computational subspace.
    pub fn target(&self) -> CMat {
        let theta = self.file.pulse.theta.unwrap_or(FRAC_PI_2);
        let (s, c) = (theta / 2.0).sin_cos();
        CMat::from_row_slice(2, 2, &[C64::new(c, 0.0), C64::new(0.0, -s), C64::new(0.0, -s), C64::new(c, 0.0)])
    }
}

pub fn parse_modes(names: &[String]) -> Result<Vec<SolverMode>, CliError> {
    if names.is_empty() {
        return Err(CliError::Config("at least one solver mode is required".into()));
    }
    let mut out = Vec::new();
    for n in names {
        let m: SolverMode = n.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

fn initial_state(tag: &str, n: usize) -> Result<CMat, CliError> {
    Ok(match tag {
        "ground" => linalg::unit(n, 0, 0),
        "excited" => linalg::unit(n, 1, 1),
        "plus" => {
            let mut r = linalg::zeros(n);
            for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                r[(a, b)] = C64::new(0.5, 0.0);
            }
            r
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown initial_state '{other}' (expected ground, excited or plus)"
            )))
        }
    })
}

fn channel(
    nb: &NoiseBlock,
    i: usize,
    levels: usize,
    dir: &Path,
    freq: &dyn Fn((f64, bool)) -> f64,
) -> Result<NoiseChannel, CliError> {
    let ctx = |msg: String| CliError::Config(format!("noise[{i}] '{}': {msg}", nb.label));
    let operator = match nb.operator {
        OperatorTag::SigmaX | OperatorTag::SigmaZ if levels != 2 => {
            return Err(ctx("sigma_x / sigma_z need a two-level system".into()))
        }
        OperatorTag::SigmaX => charge_operator(2),
        OperatorTag::SigmaZ => sigma_z(),
        OperatorTag::Charge => charge_operator(levels),
        OperatorTag::Number => number_operator(levels),
    };
    let need = |x: Option<f64>, what: &str| x.ok_or_else(|| ctx(format!("missing {what}")));
    let spectrum: NoiseSpectrum = match nb.spectrum {
        SpectrumKind::Ohmic => {
            let cutoff = pick("cutoff", nb.cutoff_wq, "wq", nb.cutoff_ghz, "ghz")?.map(freq);
            noise::ohmic_bath(need(nb.coupling, "coupling")?, need(cutoff, "cutoff_wq")?, need(nb.beta_wq, "beta_wq")?)
                .map_err(|e| ctx(e.to_string()))?
        }
        SpectrumKind::OneOverF => {
            let ir = pick("ir_cutoff", nb.ir_cutoff_wq, "wq", nb.ir_cutoff_ghz, "ghz")?.map(freq);
            noise::one_over_f(need(nb.coupling, "coupling")?, need(ir, "ir_cutoff_wq")?).map_err(|e| ctx(e.to_string()))?
        }
        SpectrumKind::Tabulated => {
            let f = nb.file.as_ref().ok_or_else(|| ctx("tabulated spectrum needs `file`".into()))?;
            noise::read_spectrum_csv(&dir.join(f)).map_err(|e| ctx(e.to_string()))?
        }
    };
    Ok(NoiseChannel::new(operator, spectrum, nb.label.clone())?)
}
