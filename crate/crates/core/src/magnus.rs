//! Interaction-frame drive `Ṽ(t)`, second-order Magnus window vectors `r(t, τ)`
//! and an adaptive reference propagator.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gellmann::{CoeffVector, GellMannBasis};
use crate::linalg::{self, CMat, C64, I};
use crate::pulse::PulseEnvelope;
use crate::quad::{self, UnitRule};

/// Radius of convergence of the Magnus series in `∫‖Ṽ‖₂`.
pub const MAGNUS_RADIUS: f64 = 1.0868;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MagnusOrder {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveFrame {
    /// Full interaction-frame drive including counter-rotating terms.
    Full,
    /// Rotating-wave approximation with respect to the carrier.
    Rotating,
}

#[derive(Debug, Clone, Copy)]
struct Coupling {
    row: usize,
    col: usize,
    value: C64,
    bohr: f64,
}

#[derive(Debug, Clone)]
pub struct ClosedSystemModel {
    energies: Vec<f64>,
    coupling: CMat,
    pub pulse: PulseEnvelope,
    pub order: MagnusOrder,
    pub frame: DriveFrame,
    /// Gauss–Legendre nodes per panel for direct window quadratures.
    pub quadrature_nodes: usize,
    basis: Arc<GellMannBasis>,
    couplings: Vec<Coupling>,
}

impl ClosedSystemModel {
    pub fn new(
        energies: Vec<f64>,
        coupling: CMat,
        pulse: PulseEnvelope,
        order: MagnusOrder,
        frame: DriveFrame,
    ) -> Result<Self> {
        let n = energies.len();
        let basis = GellMannBasis::shared(n)?;
        if coupling.nrows() != n || coupling.ncols() != n {
            return Err(Error::param("coupling matrix does not match the number of levels"));
        }
        let defect = linalg::hermiticity_defect(&coupling);
        if defect > 1e-12 * linalg::max_abs(&coupling).max(1.0) {
            return Err(Error::NotHermitian(defect));
        }
        // the identity component only contributes a global phase
        let shift = linalg::trace(&coupling) / n as f64;
        let coupling = coupling - linalg::identity(n) * shift;
        let mut couplings = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if coupling[(a, b)].norm() > 0.0 {
                    couplings.push(Coupling {
                        row: a,
                        col: b,
                        value: coupling[(a, b)],
                        bohr: energies[a] - energies[b],
                    });
                }
            }
        }
        Ok(ClosedSystemModel {
            energies,
            coupling,
            pulse,
            order,
            frame,
            quadrature_nodes: 16,
            basis,
            couplings,
        })
    }

    /// Two-level system `H₀ = −(ω_q/2)σz`, drive `Ω(t)σx`.
    pub fn qubit(omega_q: f64, pulse: PulseEnvelope, frame: DriveFrame) -> Result<Self> {
        let mut sx = linalg::zeros(2);
        sx[(0, 1)] = C64::new(1.0, 0.0);
        sx[(1, 0)] = C64::new(1.0, 0.0);
        Self::new(
            vec![-omega_q / 2.0, omega_q / 2.0],
            sx,
            pulse,
            MagnusOrder::Second,
            frame,
        )
    }

    /// Truncated Duffing oscillator with charge drive `Ω(t)(a + a†)`.
    pub fn transmon(
        levels: usize,
        omega_q: f64,
        anharmonicity: f64,
        pulse: PulseEnvelope,
        frame: DriveFrame,
    ) -> Result<Self> {
        let energies = (0..levels)
            .map(|n| {
                let n = n as f64;
                omega_q * n + 0.5 * anharmonicity * n * (n - 1.0)
            })
            .collect();
        Self::new(energies, charge_operator(levels), pulse, MagnusOrder::Second, frame)
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn coupling(&self) -> &CMat {
        &self.coupling
    }

    pub fn basis(&self) -> &Arc<GellMannBasis> {
        &self.basis
    }

    pub fn bohr_frequency(&self, n: usize, m: usize) -> f64 {
        self.energies[n] - self.energies[m]
    }

    pub fn with_pulse(&self, pulse: PulseEnvelope) -> Self {
        let mut m = self.clone();
        m.pulse = pulse;
        m
    }

    /// Frequencies present in `Ṽ(t)` apart from the envelope itself.
    pub fn drive_frequencies(&self) -> Vec<f64> {
        let wd = self.pulse.carrier;
        let mut out = Vec::new();
        for c in &self.couplings {
            match self.frame {
                DriveFrame::Full => {
                    out.push((c.bohr - wd).abs());
                    out.push((c.bohr + wd).abs());
                }
                DriveFrame::Rotating => {
                    if c.bohr != 0.0 {
                        out.push((c.bohr.abs() - wd).abs());
                    }
                }
            }
        }
        out
    }

    fn fastest_rate(&self) -> f64 {
        let f = self.drive_frequencies().into_iter().fold(0.0, f64::max);
        let envelope = match self.pulse.shape {
            crate::pulse::EnvelopeShape::Drag { sigma, .. } => 1.0 / sigma,
            _ => 0.0,
        };
        f.max(envelope).max(self.pulse.max_amplitude())
    }

    /// True when `Ṽ` does not depend on time for t ≥ 0.
    pub fn is_stationary(&self) -> bool {
        self.pulse.is_constant()
            && (self.pulse.is_zero()
                || (self.frame == DriveFrame::Rotating
                    && self
                        .couplings
                        .iter()
                        .all(|c| c.bohr == 0.0 || c.bohr.abs() == self.pulse.carrier)))
    }

    fn element_factor(&self, c: &Coupling, t: f64, ox: f64, oy: f64) -> C64 {
        let wd = self.pulse.carrier;
        match self.frame {
            DriveFrame::Full => {
                let (s, co) = (wd * t).sin_cos();
                C64::from_polar(ox * co + oy * s, c.bohr * t)
            }
            DriveFrame::Rotating => {
                if c.bohr > 0.0 {
                    0.5 * C64::new(ox, oy) * C64::from_polar(1.0, (c.bohr - wd) * t)
                } else if c.bohr < 0.0 {
                    0.5 * C64::new(ox, -oy) * C64::from_polar(1.0, (c.bohr + wd) * t)
                } else {
                    C64::new(0.0, 0.0)
                }
            }
        }
    }

    /// `Ṽ(t)`: element (n, m) is `e^{iω_nm t} V_nm(t)` (or its RWA counterpart).
    pub fn interaction_frame_drive(&self, t: f64) -> CMat {
        let n = self.dim();
        let mut v = linalg::zeros(n);
        let (ox, oy) = (self.pulse.omega_x(t), self.pulse.omega_y(t));
        for c in &self.couplings {
            v[(c.row, c.col)] = c.value * self.element_factor(c, t, ox, oy);
        }
        v
    }

    /// Gell-Mann coefficients of `Ṽ(t)` written into `out`.
    pub fn drive_coefficients(&self, t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let (ox, oy) = (self.pulse.omega_x(t), self.pulse.omega_y(t));
        if ox == 0.0 && oy == 0.0 {
            return;
        }
        let n = self.dim();
        let mut flat = [C64::new(0.0, 0.0); 64];
        let mut heap;
        let buf: &mut [C64] = if n * n <= 64 {
            &mut flat[..n * n]
        } else {
            heap = vec![C64::new(0.0, 0.0); n * n];
            &mut heap
        };
        for c in &self.couplings {
            buf[c.row * n + c.col] = c.value * self.element_factor(c, t, ox, oy);
        }
        for (k, o) in out.iter_mut().enumerate() {
            let tr: C64 = self
                .basis
                .entries(k)
                .iter()
                .map(|&(a, b, v)| v * buf[b * n + a])
                .sum();
            *o = 0.5 * tr.re;
        }
    }

    /// Integrates one cell `[lo, hi]`: adds `∫v` to `a` and, at second order,
    /// `∫ f(v(t₁), a(t₁)) dt₁` to `q`, where `a(t₁)` continues from the value of `a` at `lo`.
    pub(crate) fn accumulate_cell(
        &self,
        lo: f64,
        hi: f64,
        rule: &UnitRule,
        a: &mut [f64],
        q: &mut [f64],
        scratch: &mut CellScratch,
    ) {
        let d = a.len();
        let w = hi - lo;
        let a0 = a.to_vec();
        for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
            let t1 = lo + x * w;
            self.drive_coefficients(t1, &mut scratch.v);
            for k in 0..d {
                a[k] += wt * w * scratch.v[k];
            }
            if self.order == MagnusOrder::Second {
                // a(t₁) = a(lo) + ∫_lo^{t₁} v
                scratch.inner.copy_from_slice(&a0);
                let wi = t1 - lo;
                for (y, wy) in rule.nodes.iter().zip(&rule.weights) {
                    self.drive_coefficients(lo + y * wi, &mut scratch.v2);
                    for k in 0..d {
                        scratch.inner[k] += wy * wi * scratch.v2[k];
                    }
                }
                scratch.f.iter_mut().for_each(|z| *z = 0.0);
                self.basis.commutator_coeffs(&scratch.v, &scratch.inner, &mut scratch.f);
                for k in 0..d {
                    q[k] += wt * w * scratch.f[k];
                }
            }
        }
    }

    fn panel_width(&self) -> f64 {
        let rate = self.fastest_rate();
        if rate > 0.0 {
            1.0 / rate
        } else {
            f64::INFINITY
        }
    }
}

/// Charge operator `a + a†` truncated to `levels`.
pub fn charge_operator(levels: usize) -> CMat {
    let mut m = linalg::zeros(levels);
    for n in 1..levels {
        let s = C64::new((n as f64).sqrt(), 0.0);
        m[(n, n - 1)] = s;
        m[(n - 1, n)] = s;
    }
    m
}

/// Number operator `a†a` truncated to `levels`.
pub fn number_operator(levels: usize) -> CMat {
    let mut m = linalg::zeros(levels);
    for n in 0..levels {
        m[(n, n)] = C64::new(n as f64, 0.0);
    }
    m
}

#[derive(Debug, Clone)]
pub(crate) struct CellScratch {
    v: Vec<f64>,
    v2: Vec<f64>,
    inner: Vec<f64>,
    f: Vec<f64>,
}

impl CellScratch {
    pub(crate) fn new(d: usize) -> Self {
        CellScratch {
            v: vec![0.0; d],
            v2: vec![0.0; d],
            inner: vec![0.0; d],
            f: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowVector {
    pub r: CoeffVector,
    pub t: f64,
    pub tau: f64,
}

/// `r(t, τ)` by composite Gauss–Legendre quadrature over `[t − τ, t]`.
pub fn magnus_r_vector(m: &ClosedSystemModel, t: f64, tau: f64) -> Result<WindowVector> {
    if !(tau >= 0.0) {
        return Err(Error::param(format!("window length must be non-negative, got {tau}")));
    }
    if t - tau < -1e-12 * t.abs().max(1.0) {
        return Err(Error::param("window starts before t = 0"));
    }
    let d = m.basis.len();
    let mut a = vec![0.0; d];
    let mut q = vec![0.0; d];
    if tau > 0.0 {
        let panels = (tau / m.panel_width()).ceil().max(1.0) as usize;
        let rule = UnitRule::gauss_legendre(m.quadrature_nodes);
        let mut scratch = CellScratch::new(d);
        let w = tau / panels as f64;
        for p in 0..panels {
            let lo = t - tau + p as f64 * w;
            m.accumulate_cell(lo, lo + w, &rule, &mut a, &mut q, &mut scratch);
        }
    }
    for k in 0..d {
        a[k] += q[k];
    }
    Ok(WindowVector {
        r: CoeffVector(a),
        t,
        tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// `R − ∫‖Ṽ‖₂`; negative when the series may diverge.
    pub margin: f64,
    pub integral: f64,
}

pub fn convergence_check(m: &ClosedSystemModel, t: f64, tau: f64) -> ConvergenceReport {
    let mut integral = 0.0;
    if tau > 0.0 {
        let panels = (tau / m.panel_width()).ceil().max(1.0) as usize;
        integral = quad::gl16().integrate(t - tau, t, panels, |s| {
            let v = m.interaction_frame_drive(s);
            if linalg::max_abs(&v) == 0.0 {
                return 0.0;
            }
            let (vals, _) = linalg::hermitian_eigen(&v);
            vals.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
        });
    }
    ConvergenceReport {
        converged: integral < MAGNUS_RADIUS,
        margin: MAGNUS_RADIUS - integral,
        integral,
    }
}

#[derive(Debug, Clone)]
pub struct WindowedUnitary {
    pub unitary: CMat,
    pub convergence: ConvergenceReport,
}

/// `Ũ(t, t − τ) = exp(−iΛ·r(t, τ))`, flagged when outside the convergence radius.
pub fn windowed_unitary(m: &ClosedSystemModel, t: f64, tau: f64) -> Result<WindowedUnitary> {
    let r = magnus_r_vector(m, t, tau)?;
    let convergence = convergence_check(m, t, tau);
    if !convergence.converged {
        log::warn!(
            "Magnus window (t = {t}, τ = {tau}) exceeds the convergence radius by {:.3e}",
            -convergence.margin
        );
    }
    Ok(WindowedUnitary {
        unitary: crate::gellmann::expand_unitary(&r.r, &m.basis),
        convergence,
    })
}

/// Time-ordered `Ũ(t₁, t₀)` from an adaptive Dormand–Prince 5(4) integration
/// of `i dŨ/dt = Ṽ(t)Ũ`.
pub fn oracle_propagator(m: &ClosedSystemModel, t1: f64, t0: f64, tol: f64) -> Result<CMat> {
    if t1 < t0 {
        return Err(Error::param("oracle propagator requires t1 ≥ t0"));
    }
    let n = m.dim();
    let mut u = linalg::identity(n);
    if t1 == t0 {
        return Ok(u);
    }
    let rhs = |t: f64, u: &CMat| -> CMat { m.interaction_frame_drive(t) * u * (-I) };
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let span = t1 - t0;
    let mut t = t0;
    let rate = m.fastest_rate().max(1e-12);
    let mut h = (0.1 / rate).min(t1 - t0);
    let mut k: Vec<CMat> = Vec::with_capacity(7);
    while t < t1 {
        if h < 1e-14 * (t1 - t0).max(1.0) {
            return Err(Error::StepUnderflow(t));
        }
        let h_try = h.min(t1 - t);
        k.clear();
        for s in 0..7 {
            let mut y = u.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[s][j] != 0.0 {
                    y += kj * C64::new(h_try * A[s][j], 0.0);
                }
            }
            k.push(rhs(t + C[s] * h_try, &y));
        }
        let mut y5 = u.clone();
        let mut err = linalg::zeros(n);
        for s in 0..7 {
            y5 += &k[s] * C64::new(h_try * B5[s], 0.0);
            err += &k[s] * C64::new(h_try * (B5[s] - B4[s]), 0.0);
        }
        let e = linalg::max_abs(&err);
        // error per unit time, so the accumulated defect stays below `tol`
        let step_tol = (0.5 * tol * h_try / span).max(1e-16);
        if e <= step_tol {
            t += h_try;
            u = y5;
        }
        let factor = if e == 0.0 {
            5.0
        } else {
            (0.9 * (step_tol / e).powf(0.2)).clamp(0.2, 5.0)
        };
        h = h_try * factor;
    }
    let defect = linalg::unitarity_defect(&u);
    if defect > 10.0 * tol.max(1e-13) {
        return Err(Error::Numerical(format!(
            "oracle propagator unitarity defect {defect:.3e} exceeds tolerance {tol:.3e}"
        )));
    }
    Ok(u)
}
