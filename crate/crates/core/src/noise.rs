//! Bath spectra `S(ω) = S̄(ω) + J(ω)` and correlation functions
//! `C(τ) = ∫dω/2π S(ω) e^{−iωτ}`.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};
use crate::quad;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpectrum {
    /// Ohmic boson bath; `beta` may be `f64::INFINITY` (zero temperature).
    Ohmic { coupling: f64, cutoff: f64, beta: f64 },
    /// Classical 1/f noise with `C(τ) = λ E₁(ω_ir |τ|)`.
    OneOverF { coupling: f64, ir_cutoff: f64 },
    /// Piecewise-linear `S(ω)` on a sorted grid, zero outside.
    Tabulated { omega: Vec<f64>, values: Vec<f64> },
}

pub fn ohmic_bath(coupling: f64, cutoff: f64, beta: f64) -> Result<NoiseSpectrum> {
    if !(coupling > 0.0 && cutoff > 0.0 && beta > 0.0) {
        return Err(Error::param(format!(
            "Ohmic bath needs positive λ, ω_c, β (got {coupling}, {cutoff}, {beta})"
        )));
    }
    Ok(NoiseSpectrum::Ohmic {
        coupling,
        cutoff,
        beta,
    })
}

pub fn one_over_f(coupling: f64, ir_cutoff: f64) -> Result<NoiseSpectrum> {
    if !(coupling > 0.0 && ir_cutoff > 0.0) {
        return Err(Error::param(format!(
            "1/f noise needs positive λ and ω_ir (got {coupling}, {ir_cutoff})"
        )));
    }
    Ok(NoiseSpectrum::OneOverF {
        coupling,
        ir_cutoff,
    })
}

pub fn tabulated(omega: Vec<f64>, values: Vec<f64>) -> Result<NoiseSpectrum> {
    if omega.len() != values.len() || omega.len() < 2 {
        return Err(Error::param("tabulated spectrum needs at least two (ω, S) rows"));
    }
    if omega.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("tabulated spectrum frequencies must be strictly increasing"));
    }
    if omega.iter().chain(&values).any(|x| !x.is_finite()) {
        return Err(Error::param("tabulated spectrum contains non-finite values"));
    }
    Ok(NoiseSpectrum::Tabulated { omega, values })
}

/// Reads a two-column CSV `ω, S(ω)`; a non-numeric first row is treated as a header.
pub fn read_spectrum_csv(path: &Path) -> Result<NoiseSpectrum> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut omega = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if rec.len() != 2 {
            return Err(Error::Config(format!(
                "{}: row {} has {} columns, expected 2",
                path.display(),
                i + 1,
                rec.len()
            )));
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(w), Ok(s)) => {
                omega.push(w);
                values.push(s);
            }
            _ if i == 0 => continue,
            _ => {
                return Err(Error::Config(format!(
                    "{}: row {} is not numeric",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    tabulated(omega, values).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl NoiseSpectrum {
    /// Full spectrum `S(ω)`.
    pub fn spectrum(&self, w: f64) -> f64 {
        match self {
            NoiseSpectrum::Tabulated { omega, values } => interp(omega, values, w),
            _ => self.symmetrized(w) + self.antisymmetrized(w),
        }
    }

    /// `S̄(ω) = (S(ω) + S(−ω))/2`.
    pub fn symmetrized(&self, w: f64) -> f64 {
        match *self {
            NoiseSpectrum::Ohmic {
                coupling,
                cutoff,
                beta,
            } => {
                let a = w.abs();
                let decay = (-a / cutoff).exp();
                if beta.is_infinite() {
                    coupling * a * decay
                } else if a * beta < 1e-6 {
                    // ω coth(βω/2) = 2/β + βω²/6 + …
                    coupling * (2.0 / beta + beta * a * a / 6.0) * decay
                } else {
                    coupling * a * decay / (0.5 * beta * a).tanh()
                }
            }
            NoiseSpectrum::OneOverF {
                coupling,
                ir_cutoff,
            } => {
                let x = w.abs() / ir_cutoff;
                if x < 1e-6 {
                    2.0 * coupling / ir_cutoff * (1.0 - x * x / 3.0)
                } else {
                    2.0 * coupling * (w.abs() / ir_cutoff).atan() / w.abs()
                }
            }
            NoiseSpectrum::Tabulated { .. } => 0.5 * (self.spectrum(w) + self.spectrum(-w)),
        }
    }

    /// `J(ω) = (S(ω) − S(−ω))/2`.
    pub fn antisymmetrized(&self, w: f64) -> f64 {
        match *self {
            NoiseSpectrum::Ohmic {
                coupling, cutoff, ..
            } => coupling * w * (-w.abs() / cutoff).exp(),
            NoiseSpectrum::OneOverF { .. } => 0.0,
            NoiseSpectrum::Tabulated { .. } => 0.5 * (self.spectrum(w) - self.spectrum(-w)),
        }
    }

    /// `S″(ω)` by a fourth-order central difference.
    pub fn spectrum_second_derivative(&self, w: f64) -> f64 {
        let h = 1e-3 * self.frequency_scale();
        let f = |x: f64| self.spectrum(x);
        (-f(w + 2.0 * h) + 16.0 * f(w + h) - 30.0 * f(w) + 16.0 * f(w - h) - f(w - 2.0 * h))
            / (12.0 * h * h)
    }

    /// `S̄′(ω)` by a fourth-order central difference.
    pub fn symmetrized_derivative(&self, w: f64) -> f64 {
        let h = 1e-3 * self.frequency_scale();
        let f = |x: f64| self.symmetrized(x);
        (f(w - 2.0 * h) - 8.0 * f(w - h) + 8.0 * f(w + h) - f(w + 2.0 * h)) / (12.0 * h)
    }

    fn frequency_scale(&self) -> f64 {
        match self {
            // at T = 0 only the cutoff sets the scale
            NoiseSpectrum::Ohmic { cutoff, beta, .. } if beta.is_infinite() => *cutoff,
            NoiseSpectrum::Ohmic { cutoff, beta, .. } => cutoff.min(1.0 / beta).max(1e-300),
            NoiseSpectrum::OneOverF { ir_cutoff, .. } => *ir_cutoff,
            NoiseSpectrum::Tabulated { omega, .. } => omega.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min),
        }
    }

    /// Shortest time scale on which `C(τ)` varies near `τ = 0`.
    pub fn correlation_time_scale(&self) -> f64 {
        match self {
            NoiseSpectrum::Ohmic { cutoff, .. } => 1.0 / cutoff,
            NoiseSpectrum::OneOverF { .. } => 0.0,
            NoiseSpectrum::Tabulated { omega, .. } => {
                1.0 / omega.iter().fold(0.0f64, |m, w| m.max(w.abs())).max(1e-300)
            }
        }
    }

    /// True when `C(τ)` diverges (integrably) at `τ = 0`.
    pub fn singular_at_origin(&self) -> bool {
        matches!(self, NoiseSpectrum::OneOverF { .. })
    }

    /// Closed-form correlation function `C(τ)`.
    pub fn correlation(&self, tau: f64) -> C64 {
        match *self {
            NoiseSpectrum::Ohmic {
                coupling,
                cutoff,
                beta,
            } => {
                if beta.is_infinite() {
                    // (λ/π) ω_c² / (1 + iω_c τ)²
                    let d = C64::new(1.0, cutoff * tau);
                    return coupling / PI * cutoff * cutoff / (d * d);
                }
                // (λ/πβ²)[ψ′(z) + ψ′(z̄ + 1)], z = (1/ω_c + iτ)/β
                let z = C64::new(1.0 / (cutoff * beta), tau / beta);
                coupling / (PI * beta * beta) * (trigamma(z) + trigamma(z.conj() + 1.0))
            }
            NoiseSpectrum::OneOverF {
                coupling,
                ir_cutoff,
            } => {
                let x = (ir_cutoff * tau.abs()).max(f64::MIN_POSITIVE);
                C64::new(coupling * e1(x), 0.0)
            }
            NoiseSpectrum::Tabulated {
                ref omega,
                ref values,
            } => piecewise_linear_fourier(omega, values, tau),
        }
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    ys[i - 1] + (ys[i] - ys[i - 1]) * (x - x0) / (x1 - x0)
}

// ∫dω/2π S(ω) e^{−iωτ} for piecewise-linear S, segment by segment in closed form.
fn piecewise_linear_fourier(xs: &[f64], ys: &[f64], tau: f64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for i in 1..xs.len() {
        let (a, b) = (xs[i - 1], xs[i]);
        let (fa, fb) = (ys[i - 1], ys[i]);
        let h = b - a;
        let ea = C64::from_polar(1.0, -tau * a);
        if (tau * h).abs() < 1e-3 {
            // e^{−iτa} ∫₀^h f(a+y)(1 − iτy − τ²y²/2) dy
            let m0 = 0.5 * h * (fa + fb);
            let m1 = h * h * (fa + 2.0 * fb) / 6.0;
            let m2 = h * h * h * (fa + 3.0 * fb) / 12.0;
            acc += ea * C64::new(m0 - 0.5 * tau * tau * m2, -tau * m1);
            continue;
        }
        // ∫_a^b (fa + s(x − a)) e^{kx} dx with k = −iτ
        let k = C64::new(0.0, -tau);
        let eb = C64::from_polar(1.0, -tau * b);
        let s = (fb - fa) / h;
        acc += fa * (eb - ea) / k + s * (h * eb / k - (eb - ea) / (k * k));
    }
    acc / (2.0 * PI)
}

/// Adaptive frequency quadrature of the real/imaginary parts of `C(τ)`:
/// `Re C = (1/π)∫₀^Ω S̄ cos ωτ`, `Im C = −(1/π)∫₀^Ω J sin ωτ` with `Ω = 40 ω_c`.
pub fn correlation_from_spectrum(s: &NoiseSpectrum, tau: f64) -> Result<C64> {
    if tau < 0.0 {
        return Err(Error::param("τ must be non-negative"));
    }
    let (upper, fine_end, fine_width, coarse_width) = match *s {
        NoiseSpectrum::Ohmic { cutoff, beta, .. } => {
            let fine = if beta.is_finite() { 2.0 / beta } else { cutoff / 4.0 };
            (40.0 * cutoff, (20.0 / beta).min(40.0 * cutoff), fine.min(cutoff / 4.0), cutoff / 4.0)
        }
        NoiseSpectrum::Tabulated { ref omega, .. } => {
            let top = omega.iter().fold(0.0f64, |m, w| m.max(w.abs()));
            let step = s.frequency_scale();
            (top, 0.0, step, step)
        }
        NoiseSpectrum::OneOverF { .. } => {
            return Err(Error::Quadrature(
                "1/f spectrum has no ultraviolet cutoff; use the time-domain correlation".into(),
            ))
        }
    };
    let osc = if tau > 0.0 { PI / tau } else { f64::INFINITY };
    let run = |refine: usize| -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        let mut segment = |lo: f64, hi: f64, width: f64| {
            if hi <= lo {
                return;
            }
            let panels = (((hi - lo) / width.min(osc)).ceil() as usize).max(1) * refine;
            let re = quad::gl16().integrate(lo, hi, panels, |w| s.symmetrized(w) * (w * tau).cos());
            let im = quad::gl16().integrate(lo, hi, panels, |w| s.antisymmetrized(w) * (w * tau).sin());
            acc += C64::new(re, -im) / PI;
        };
        match s {
            NoiseSpectrum::Tabulated { omega, .. } => {
                // integrate segment by segment on the non-negative half-axis
                let mut knots: Vec<f64> = omega.iter().map(|w| w.abs()).collect();
                knots.push(0.0);
                knots.sort_by(f64::total_cmp);
                knots.dedup();
                for w in knots.windows(2) {
                    segment(w[0], w[1], w[1] - w[0]);
                }
            }
            _ => {
                segment(0.0, fine_end, fine_width);
                segment(fine_end, upper, coarse_width);
            }
        }
        acc
    };
    let coarse = run(1);
    let fine = run(2);
    let scale = fine.norm().max(1e-300);
    if (coarse - fine).norm() > 1e-9 * scale.max(s.correlation(0.0).norm() * 1e-3) {
        return Err(Error::Quadrature(format!(
            "frequency quadrature at τ = {tau} changed by {:.3e} under refinement",
            (coarse - fine).norm()
        )));
    }
    Ok(fine)
}

/// Exponential integral `E₁(x)` for `x > 0`.
pub fn exponential_integral_e1(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() && x != f64::INFINITY {
        return Err(Error::param(format!("E1 requires x > 0, got {x}")));
    }
    Ok(e1(x))
}

fn e1(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x <= 1.0 {
        // −γ − ln x − Σ (−x)^k / (k·k!)
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER_GAMMA - x.ln() - sum
    } else {
        // continued fraction, modified Lentz
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Trigamma `ψ′(z)` for `Re z > 0`: upward recurrence then the asymptotic series.
pub(crate) fn trigamma(mut z: C64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    while z.norm() < 16.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // Bernoulli numbers B_2 … B_14
    const B: [f64; 7] = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
    ];
    let mut series = C64::new(0.0, 0.0);
    let mut p = inv * inv2;
    for b in B {
        series += b * p;
        p *= inv2;
    }
    acc + inv + 0.5 * inv2 + series
}

/// Coupling operator `A_α` with its bath.
#[derive(Debug, Clone)]
pub struct NoiseChannel {
    pub operator: CMat,
    pub spectrum: NoiseSpectrum,
    pub label: String,
}

impl NoiseChannel {
    pub fn new(operator: CMat, spectrum: NoiseSpectrum, label: impl Into<String>) -> Result<Self> {
        let defect = linalg::hermiticity_defect(&operator);
        if defect > 1e-12 * linalg::max_abs(&operator).max(1.0) {
            return Err(Error::NotHermitian(defect));
        }
        Ok(NoiseChannel {
            operator,
            spectrum,
            label: label.into(),
        })
    }
}
