//! Filtering of system operators by the windowed drive propagator.
//!
//! For a Bohr component `P = |n⟩⟨m|` of a coupling operator,
//!
//! ```text
//! F_t(P) = ∫₀^{Δt} dτ C(τ) e^{−iωτ} Ũ(t, t−τ) P Ũ†(t, t−τ) = Γ̃(ω, t) P + M(ω, t).
//! ```
//!
//! The production path assembles `Γ̃` and `M` from `K(r)` and `∇K(r)`; the
//! direct path conjugates `P` with explicit matrix exponentials and exists as an
//! oracle. Both share the same convolution weights, so they agree to rounding.
//!
//! τ-integrals use product integration on a uniform grid of spacing `δ`: the
//! smooth kernel is interpolated linearly between grid points while
//! `C(τ)e^{−iωτ}` is integrated exactly (Gauss–Legendre, or tanh–sinh in the
//! first cell of a singular correlation function).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gellmann::{GellMannBasis, WindowEval};
use crate::linalg::{self, CMat, C64, I};
use crate::magnus::{CellScratch, ClosedSystemModel, MagnusOrder};
use crate::noise::{NoiseChannel, NoiseSpectrum};
use crate::quad;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// One Bohr component `A_nm |n⟩⟨m|` of a coupling operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterComponent {
    pub row: usize,
    pub col: usize,
    /// `ω_nm = E_n − E_m`.
    pub frequency: f64,
    pub amplitude: C64,
    /// Index into the channel's list of distinct frequencies.
    pub group: usize,
}

/// Splits `A` into Bohr components, grouping equal frequencies.
pub fn bohr_components(model: &ClosedSystemModel, op: &CMat) -> (Vec<FilterComponent>, Vec<f64>) {
    let n = model.dim();
    let scale = model.energies().iter().fold(1.0f64, |m, e| m.max(e.abs()));
    let mut freqs: Vec<f64> = Vec::new();
    let mut comps = Vec::new();
    for a in 0..n {
        for b in 0..n {
            let amp = op[(a, b)];
            if amp.norm() == 0.0 {
                continue;
            }
            let w = model.bohr_frequency(a, b);
            let group = match freqs.iter().position(|f| (f - w).abs() <= 1e-12 * scale) {
                Some(g) => g,
                None => {
                    freqs.push(w);
                    freqs.len() - 1
                }
            };
            comps.push(FilterComponent {
                row: a,
                col: b,
                frequency: freqs[group],
                amplitude: amp,
                group,
            });
        }
    }
    (comps, freqs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DissipatorMode {
    /// `Ũ(t, t−τ) ≈ 1`: the finite-time Redfield dissipator.
    FieldIndependent,
    /// Renormalized rates, correction matrices and `Ṽ_ren`.
    Full,
}

/// `Γ̃⁽¹⁾`, `λ⁽¹⁾_k`, `λ⁽²⁾_k` and `λ⁽³⁾_kl` (row-major) for one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedRates {
    pub gamma1: C64,
    pub lambda1: Vec<C64>,
    pub lambda2: Vec<C64>,
    pub lambda3: Vec<C64>,
}

impl GeneralizedRates {
    fn from_sums(sums: &[C64], d: usize) -> Self {
        GeneralizedRates {
            gamma1: sums[0],
            lambda1: sums[1..1 + d].to_vec(),
            lambda2: sums[1 + d..1 + 2 * d].to_vec(),
            lambda3: sums[1 + 2 * d..1 + 2 * d + d * d].to_vec(),
        }
    }

    /// Rates of the unfiltered (field-independent) limit: `K = N`, `∇K = 0`.
    pub fn bare(gamma: C64, d: usize) -> Self {
        GeneralizedRates {
            gamma1: gamma,
            lambda1: vec![ZERO; d],
            lambda2: vec![ZERO; d],
            lambda3: vec![ZERO; d * d],
        }
    }
}

/// `F_t(|n⟩⟨m|) = rate·|n⟩⟨m| + correction`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredOperator {
    pub row: usize,
    pub col: usize,
    pub rate: C64,
    pub correction: CMat,
}

impl FilteredOperator {
    pub fn matrix(&self) -> CMat {
        let mut m = self.correction.clone();
        m[(self.row, self.col)] += self.rate;
        m
    }
}

/// `Γ̃ = Γ̃⁽¹⁾ + Γ̃⁽²⁾` and `M` for `P = |n⟩⟨m|`.
pub fn assemble(basis: &GellMannBasis, rates: &GeneralizedRates, n: usize, m: usize) -> FilteredOperator {
    let dim = basis.dim();
    let d = basis.len();
    let off = basis.off_diagonal_len();
    let diag = dim - 1;
    let c_m: Vec<f64> = (0..diag).map(|l| basis.diagonal_value(l, m)).collect();
    let c_n: Vec<f64> = (0..diag).map(|l| basis.diagonal_value(l, n)).collect();

    let mut rate = rates.gamma1;
    for l in 0..diag {
        rate += c_m[l] * rates.lambda1[off + l] + c_n[l] * rates.lambda2[off + l];
        for k in 0..diag {
            rate += c_n[k] * c_m[l] * rates.lambda3[(off + k) * d + off + l];
        }
    }

    // Λ_k P Λ_l has entries Λ_k[a, n] Λ_l[m, b]
    let lam = |k: usize, a: usize, b: usize| basis.matrix(k)[(a, b)];
    let mut corr = linalg::zeros(dim);
    for k in 0..off {
        let (l1, l2) = (rates.lambda1[k], rates.lambda2[k]);
        for b in 0..dim {
            corr[(n, b)] += l1 * lam(k, m, b);
        }
        for a in 0..dim {
            corr[(a, m)] += l2 * lam(k, a, n);
        }
    }
    // row-vectors Λ_l[m, ·] contracted with λ⁽³⁾ first
    let mut right = vec![ZERO; dim];
    for k in 0..d {
        let l_range = if k < off { 0..d } else { 0..off };
        right.iter_mut().for_each(|z| *z = ZERO);
        let mut any = false;
        for l in l_range {
            let w = rates.lambda3[k * d + l];
            if w == ZERO {
                continue;
            }
            any = true;
            for (b, z) in right.iter_mut().enumerate() {
                *z += w * lam(l, m, b);
            }
        }
        if !any {
            continue;
        }
        for a in 0..dim {
            let left = lam(k, a, n);
            if left == ZERO {
                continue;
            }
            for b in 0..dim {
                corr[(a, b)] += left * right[b];
            }
        }
    }
    FilteredOperator {
        row: n,
        col: m,
        rate,
        correction: corr,
    }
}

fn kernel_len(d: usize) -> usize {
    1 + 2 * d + d * d
}

/// Integrand factors of `Γ̃⁽¹⁾, λ⁽¹⁾, λ⁽²⁾, λ⁽³⁾` (without `C e^{−iωτ}`).
fn fill_kernel(w: &WindowEval, n: usize, out: &mut [C64]) {
    let d = w.grad.len();
    let k = w.k;
    let nn = n as f64;
    out[0] = C64::new(k.norm_sqr() / (nn * nn), 0.0);
    let c1 = -I / (2.0 * nn);
    let c2 = I / (2.0 * nn);
    for (j, g) in w.grad.iter().enumerate() {
        out[1 + j] = c1 * k * g.conj();
        out[1 + d + j] = c2 * k.conj() * g;
    }
    let base = 1 + 2 * d;
    for (a, ga) in w.grad.iter().enumerate() {
        for (b, gb) in w.grad.iter().enumerate() {
            out[base + a * d + b] = 0.25 * ga * gb.conj();
        }
    }
}

/// Hat-function moments `∫ C(τ) e^{−iωτ} φ_j(τ) dτ` on the uniform grid.
#[derive(Debug, Clone)]
struct ConvolutionWeights {
    /// `[group][j]`: moment of the half-hat left of node `j` (cell `j−1`).
    left: Vec<Vec<C64>>,
    /// `[group][j]`: moment of the half-hat right of node `j` (cell `j`).
    right: Vec<Vec<C64>>,
    /// `[group][e] = Σ_{j<e} (left_j + right_j)`.
    prefix: Vec<Vec<C64>>,
}

impl ConvolutionWeights {
    fn build(spectrum: &NoiseSpectrum, freqs: &[f64], spacing: f64, cells: usize, exec: Execution) -> Result<Self> {
        let scale = spectrum.correlation_time_scale();
        let fmax = freqs.iter().fold(0.0f64, |m, f| m.max(f.abs()));
        let singular = spectrum.singular_at_origin();
        let per_cell: Vec<Result<(Vec<C64>, Vec<C64>)>> = exec.map(cells, |i| {
            let mut lw = vec![ZERO; freqs.len()];
            let mut rw = vec![ZERO; freqs.len()];
            let lo = i as f64 * spacing;
            if i == 0 && singular {
                first_cell_tanh_sinh(spectrum, freqs, spacing, &mut lw, &mut rw)?;
                return Ok((lw, rw));
            }
            let width = 0.25 * scale.max(lo);
            let by_corr = if width > 0.0 { (spacing / width).ceil() } else { 1.0 };
            let by_freq = (fmax * spacing / 1.5).ceil();
            let panels = by_corr.max(by_freq).clamp(1.0, 512.0) as usize;
            let rule = quad::gl8();
            let pw = 1.0 / panels as f64;
            for p in 0..panels {
                for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
                    let s = (p as f64 + x) * pw;
                    let tau = lo + s * spacing;
                    let c = spectrum.correlation(tau) * (wt * pw * spacing);
                    for (g, &w) in freqs.iter().enumerate() {
                        let v = c * C64::from_polar(1.0, -w * tau);
                        lw[g] += v * s;
                        rw[g] += v * (1.0 - s);
                    }
                }
            }
            Ok((lw, rw))
        });
        let nf = freqs.len();
        let mut left = vec![vec![ZERO; cells + 1]; nf];
        let mut right = vec![vec![ZERO; cells + 1]; nf];
        for (i, cell) in per_cell.into_iter().enumerate() {
            let (lw, rw) = cell?;
            for g in 0..nf {
                right[g][i] = rw[g];
                left[g][i + 1] = lw[g];
            }
        }
        let prefix = (0..nf)
            .map(|g| {
                let mut p = Vec::with_capacity(cells + 2);
                let mut acc = ZERO;
                p.push(acc);
                for j in 0..=cells {
                    acc += left[g][j] + right[g][j];
                    p.push(acc);
                }
                p
            })
            .collect();
        Ok(ConvolutionWeights { left, right, prefix })
    }

    /// Weight of grid node `j` for a convolution over `[0, end·δ]`.
    #[inline]
    fn coef(&self, g: usize, j: usize, end: usize) -> C64 {
        if end == 0 {
            ZERO
        } else if j == end {
            self.left[g][j]
        } else if j == 0 {
            self.right[g][0]
        } else {
            self.left[g][j] + self.right[g][j]
        }
    }

    /// Interior node weight (`0 < j`), used by the stationary accumulation.
    #[inline]
    fn full(&self, g: usize, j: usize) -> C64 {
        self.left[g][j] + self.right[g][j]
    }

    /// `∫₀^{end·δ} C(τ) e^{−iωτ} dτ`.
    fn bare(&self, g: usize, end: usize) -> C64 {
        if end == 0 {
            ZERO
        } else {
            self.prefix[g][end] + self.left[g][end]
        }
    }
}

fn first_cell_tanh_sinh(
    spectrum: &NoiseSpectrum,
    freqs: &[f64],
    spacing: f64,
    lw: &mut [C64],
    rw: &mut [C64],
) -> Result<()> {
    let mag = spectrum.correlation(spacing).norm().max(1e-300);
    let tol = 1e-13 * mag * spacing;
    for (g, &w) in freqs.iter().enumerate() {
        let part = |hat: fn(f64) -> f64, imag: bool| {
            quadrature::double_exponential::integrate(
                |s: f64| {
                    if s <= 0.0 {
                        return 0.0;
                    }
                    let tau = s * spacing;
                    let v = spectrum.correlation(tau) * C64::from_polar(hat(s) * spacing, -w * tau);
                    if imag {
                        v.im
                    } else {
                        v.re
                    }
                },
                0.0,
                1.0,
                tol,
            )
        };
        let hl: fn(f64) -> f64 = |s| s;
        let hr: fn(f64) -> f64 = |s| 1.0 - s;
        let outs = [part(hl, false), part(hl, true), part(hr, false), part(hr, true)];
        for o in &outs {
            if !o.integral.is_finite() || o.error_estimate > 1e3 * tol {
                return Err(Error::Quadrature(format!(
                    "singular first cell: error estimate {:.3e}",
                    o.error_estimate
                )));
            }
        }
        lw[g] = C64::new(outs[0].integral, outs[1].integral);
        rw[g] = C64::new(outs[2].integral, outs[3].integral);
    }
    Ok(())
}

/// Cumulative Magnus integrals on the grid; any window vector follows from
/// two table entries.
#[derive(Debug, Clone)]
struct MagnusTable {
    spacing: f64,
    d: usize,
    order: MagnusOrder,
    stationary: Option<Vec<f64>>,
    a: Vec<f64>,
    q: Vec<f64>,
    basis: Arc<GellMannBasis>,
}

impl MagnusTable {
    fn build(model: &ClosedSystemModel, spacing: f64, points: usize) -> Self {
        let basis = model.basis().clone();
        let d = basis.len();
        if model.is_stationary() {
            let mut v = vec![0.0; d];
            model.drive_coefficients(0.0, &mut v);
            return MagnusTable {
                spacing,
                d,
                order: model.order,
                stationary: Some(v),
                a: Vec::new(),
                q: Vec::new(),
                basis,
            };
        }
        let rule = quad::gl8();
        let mut a = vec![0.0; d * points];
        let mut q = vec![0.0; d * points];
        let mut ca = vec![0.0; d];
        let mut cq = vec![0.0; d];
        let mut scratch = CellScratch::new(d);
        for i in 1..points {
            let lo = (i - 1) as f64 * spacing;
            model.accumulate_cell(lo, lo + spacing, rule, &mut ca, &mut cq, &mut scratch);
            a[i * d..(i + 1) * d].copy_from_slice(&ca);
            q[i * d..(i + 1) * d].copy_from_slice(&cq);
        }
        MagnusTable {
            spacing,
            d,
            order: model.order,
            stationary: None,
            a,
            q,
            basis,
        }
    }

    /// `r(t_k, j·δ)`.
    fn window(&self, k: usize, j: usize, out: &mut [f64]) {
        if let Some(v) = &self.stationary {
            let tau = j as f64 * self.spacing;
            for (o, x) in out.iter_mut().zip(v) {
                *o = tau * x;
            }
            return;
        }
        let d = self.d;
        let i0 = k - j;
        let (ak, a0) = (&self.a[k * d..(k + 1) * d], &self.a[i0 * d..(i0 + 1) * d]);
        for x in 0..d {
            out[x] = ak[x] - a0[x];
        }
        if self.order == MagnusOrder::Second {
            let (qk, q0) = (&self.q[k * d..(k + 1) * d], &self.q[i0 * d..(i0 + 1) * d]);
            let mut stack = [0.0f64; 64];
            let mut heap;
            let f: &mut [f64] = if d <= 64 {
                &mut stack[..d]
            } else {
                heap = vec![0.0; d];
                &mut heap
            };
            self.basis.commutator_coeffs(out, a0, f);
            for x in 0..d {
                out[x] += qk[x] - q0[x] - f[x];
            }
        }
    }
}

/// Canonical rate `d_k` and jump operator `L_k = Σ_i W_ik B_i`.
#[derive(Debug, Clone)]
pub struct CanonicalChannel {
    pub rate: f64,
    pub jump: CMat,
}

/// Hermitian rate matrix `γ_ij` over a jump-operator basis `B_i`:
/// `D(ρ) = Σ γ_ij (B_i ρ B_j† − ½{B_j† B_i, ρ})`.
#[derive(Debug, Clone)]
pub struct DecoherenceMatrix {
    pub basis: Vec<CMat>,
    pub gamma: CMat,
}

impl DecoherenceMatrix {
    /// Expands `A^f ρ Ã + Ã ρ A^f† − ½{Ã A^f + A^f† Ã, ρ}` in an orthogonal basis.
    pub fn from_operators(a: &CMat, f: &CMat, basis: Vec<CMat>) -> Result<Self> {
        let ac = coordinates(a, &basis)?;
        let fc = coordinates(f, &basis)?;
        let n = basis.len();
        let gamma = CMat::from_fn(n, n, |i, j| fc[i] * ac[j].conj() + ac[i] * fc[j].conj());
        Ok(DecoherenceMatrix { basis, gamma })
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        let mut out = linalg::zeros(rho.nrows());
        for (i, bi) in self.basis.iter().enumerate() {
            for (j, bj) in self.basis.iter().enumerate() {
                let g = self.gamma[(i, j)];
                if g == ZERO {
                    continue;
                }
                let bjd = bj.adjoint();
                out += (bi * rho * &bjd - (linalg::anticommutator(&(&bjd * bi), rho) * C64::new(0.5, 0.0))) * g;
            }
        }
        out
    }

    pub fn hermiticity_defect(&self) -> f64 {
        linalg::hermiticity_defect(&self.gamma)
    }
}

fn coordinates(x: &CMat, basis: &[CMat]) -> Result<Vec<C64>> {
    let coords: Vec<C64> = basis
        .iter()
        .map(|b| linalg::trace(&(b.adjoint() * x)) / linalg::trace(&(b.adjoint() * b)))
        .collect();
    let mut rec = linalg::zeros(x.nrows());
    for (c, b) in coords.iter().zip(basis) {
        rec += b * *c;
    }
    let res = linalg::max_abs(&(rec - x));
    if res > 1e-10 * linalg::max_abs(x).max(1e-300) {
        return Err(Error::Consistency(format!(
            "operator not spanned by the jump basis (residual {res:.3e})"
        )));
    }
    Ok(coords)
}

/// Eigendecomposition `γ = W d W†`, rates in descending order.
pub fn canonical_channels(g: &DecoherenceMatrix) -> Vec<CanonicalChannel> {
    let (vals, vecs) = linalg::hermitian_eigen(&g.gamma);
    let dim = g.basis.first().map_or(0, |b| b.nrows());
    vals.iter()
        .enumerate()
        .map(|(k, &rate)| {
            let mut jump = linalg::zeros(dim);
            for (i, b) in g.basis.iter().enumerate() {
                jump += b * vecs[(i, k)];
            }
            CanonicalChannel { rate, jump }
        })
        .collect()
}

pub fn sigma_minus() -> CMat {
    linalg::unit(2, 1, 0)
}

pub fn sigma_plus() -> CMat {
    linalg::unit(2, 0, 1)
}

pub fn sigma_z() -> CMat {
    linalg::unit(2, 0, 0) - linalg::unit(2, 1, 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitDephasingRates {
    pub gamma_phi: f64,
    pub gamma_x: C64,
    pub gamma_y: C64,
}

/// `Γ̃(±ω_q)` and the σ±, σz coefficients of `M(±ω_q)` for transverse coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitRelaxationRates {
    pub rate_pos: C64,
    pub rate_neg: C64,
    /// σ₊ and σz coefficients of `M(ω_q)`.
    pub m_pos: (C64, C64),
    /// σ₋ and σz coefficients of `M(−ω_q)`.
    pub m_neg: (C64, C64),
}

/// Decoherence matrix over `(σ₋, σ₊, σz)`. `gamma_z_*` are basis coordinates;
/// `Tr[σz …]` conventions differ by a factor 2.
#[derive(Debug, Clone)]
pub struct QubitRelaxationMatrix {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub gamma_ns: C64,
    pub gamma_z_plus: C64,
    pub gamma_z_minus: C64,
    pub matrix: DecoherenceMatrix,
    /// Closed-form nonzero eigenvalues `d₁ ≥ d₂`.
    pub canonical: (f64, f64),
}

/// Emission/absorption blocks over `{|1⟩⟨0|, |2⟩⟨1|}` and their adjoints,
/// plus the full matrix over all `|a⟩⟨b|`.
#[derive(Debug, Clone)]
pub struct QutritDecoherence {
    pub emission: CMat,
    pub absorption: CMat,
    pub full: DecoherenceMatrix,
}

/// Filtering for a set of channels on a uniform time grid `t_k = kδ`.
#[derive(Debug, Clone)]
pub struct FilterContext {
    model: ClosedSystemModel,
    channels: Vec<NoiseChannel>,
    components: Vec<Vec<FilterComponent>>,
    frequencies: Vec<Vec<f64>>,
    weights: Vec<ConvolutionWeights>,
    magnus: MagnusTable,
    spacing: f64,
    points: usize,
    memory: usize,
}

impl FilterContext {
    /// Grid `t_k = kδ`, `k < points`. `memory` truncates the τ-integrals at
    /// the given length (None: the full elapsed time).
    pub fn new(
        model: &ClosedSystemModel,
        channels: &[NoiseChannel],
        spacing: f64,
        points: usize,
        memory: Option<f64>,
        exec: Execution,
    ) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::Config(format!("grid spacing must be positive, got {spacing}")));
        }
        if points < 2 {
            return Err(Error::Config("filter grid needs at least two points".into()));
        }
        let n = model.dim();
        let mut components = Vec::new();
        let mut frequencies = Vec::new();
        let mut fmax = 0.0f64;
        for ch in channels {
            if ch.operator.nrows() != n {
                return Err(Error::Config(format!(
                    "channel '{}' acts on {} levels, model has {n}",
                    ch.label,
                    ch.operator.nrows()
                )));
            }
            let (c, f) = bohr_components(model, &ch.operator);
            fmax = f.iter().fold(fmax, |m, w| m.max(w.abs()));
            components.push(c);
            frequencies.push(f);
        }
        if fmax > 0.0 && spacing > std::f64::consts::TAU / (20.0 * fmax) {
            return Err(Error::Config(format!(
                "grid spacing {spacing} too coarse for Bohr frequency {fmax} (limit {:.4e})",
                std::f64::consts::TAU / (20.0 * fmax)
            )));
        }
        let cells = points - 1;
        let memory = match memory {
            Some(m) if m > 0.0 => ((m / spacing).ceil() as usize).min(cells),
            Some(m) => return Err(Error::Config(format!("memory time must be positive, got {m}"))),
            None => cells,
        };
        let weights = channels
            .iter()
            .zip(&frequencies)
            .map(|(ch, f)| ConvolutionWeights::build(&ch.spectrum, f, spacing, memory, exec))
            .collect::<Result<Vec<_>>>()?;
        Ok(FilterContext {
            model: model.clone(),
            channels: channels.to_vec(),
            components,
            frequencies,
            weights,
            magnus: MagnusTable::build(model, spacing, points),
            spacing,
            points,
            memory,
        })
    }

    pub fn model(&self) -> &ClosedSystemModel {
        &self.model
    }

    pub fn channels(&self) -> &[NoiseChannel] {
        &self.channels
    }

    pub fn components(&self, c: usize) -> &[FilterComponent] {
        &self.components[c]
    }

    pub fn frequencies(&self, c: usize) -> &[f64] {
        &self.frequencies[c]
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Memory length in grid cells.
    pub fn memory_cells(&self) -> usize {
        self.memory
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.spacing
    }

    fn end(&self, k: usize) -> usize {
        k.min(self.memory)
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.points {
            return Err(Error::param(format!("time index {k} outside the grid of {} points", self.points)));
        }
        Ok(())
    }

    fn group_of(&self, c: usize, w: f64) -> Result<usize> {
        let scale = w.abs().max(1.0);
        self.frequencies[c]
            .iter()
            .position(|f| (f - w).abs() <= 1e-12 * scale)
            .ok_or_else(|| Error::param(format!("channel {c} has no component at frequency {w}")))
    }

    /// Window vector `r(t_k, jδ)`.
    pub fn window_vector(&self, k: usize, j: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.magnus.d];
        self.magnus.window(k, j, &mut r);
        r
    }

    /// `Γ(ω, Δt) = ∫₀^{Δt} C(τ) e^{−iωτ} dτ` for frequency group `g`.
    pub fn bare_rate(&self, c: usize, g: usize, k: usize) -> C64 {
        self.weights[c].bare(g, self.end(k))
    }

    /// Convolution of an arbitrary kernel of the window vector.
    pub fn convolve<F: FnMut(&[f64]) -> C64>(&self, c: usize, g: usize, k: usize, mut f: F) -> C64 {
        let end = self.end(k);
        let mut r = vec![0.0; self.magnus.d];
        let mut acc = ZERO;
        for j in 0..=end {
            let w = self.weights[c].coef(g, j, end);
            if w == ZERO {
                continue;
            }
            self.magnus.window(k, j, &mut r);
            acc += w * f(&r);
        }
        acc
    }

    /// `[c][g][kernel]` sums at row `k`.
    fn row_sums(&self, k: usize) -> Vec<Vec<Vec<C64>>> {
        let basis = self.model.basis();
        let d = basis.len();
        let len = kernel_len(d);
        let end = self.end(k);
        let mut acc: Vec<Vec<Vec<C64>>> = self
            .frequencies
            .iter()
            .map(|f| vec![vec![ZERO; len]; f.len()])
            .collect();
        let mut r = vec![0.0; d];
        let mut w = basis.window();
        let mut kern = vec![ZERO; len];
        for j in 0..=end {
            self.magnus.window(k, j, &mut r);
            basis.evaluate_window(&r, &mut w);
            fill_kernel(&w, basis.dim(), &mut kern);
            for (c, per_c) in acc.iter_mut().enumerate() {
                for (g, sums) in per_c.iter_mut().enumerate() {
                    let coef = self.weights[c].coef(g, j, end);
                    if coef == ZERO {
                        continue;
                    }
                    for (s, x) in sums.iter_mut().zip(&kern) {
                        *s += coef * x;
                    }
                }
            }
        }
        acc
    }

    pub fn generalized_rates(&self, c: usize, g: usize, k: usize) -> Result<GeneralizedRates> {
        self.check_index(k)?;
        let sums = self.row_sums(k);
        Ok(GeneralizedRates::from_sums(&sums[c][g], self.model.basis().len()))
    }

    /// Production path: `F_t(|n⟩⟨m|)` from `K` and `∇K` at `t_k`.
    pub fn filtering_operation(&self, c: usize, n: usize, m: usize, k: usize) -> Result<FilteredOperator> {
        let g = self.group_of(c, self.model.bohr_frequency(n, m))?;
        let rates = self.generalized_rates(c, g, k)?;
        Ok(assemble(self.model.basis(), &rates, n, m))
    }

    /// Oracle path: `Σ_j w_j Ũ_j P Ũ_j†` with `Ũ_j = exp(−iΛ·r)` from a Taylor exponential.
    pub fn filtering_direct(&self, c: usize, n: usize, m: usize, k: usize) -> Result<CMat> {
        self.check_index(k)?;
        let g = self.group_of(c, self.model.bohr_frequency(n, m))?;
        let basis = self.model.basis();
        let dim = basis.dim();
        let p = linalg::unit(dim, n, m);
        let end = self.end(k);
        let mut r = vec![0.0; basis.len()];
        let mut acc = linalg::zeros(dim);
        for j in 0..=end {
            let w = self.weights[c].coef(g, j, end);
            if w == ZERO {
                continue;
            }
            self.magnus.window(k, j, &mut r);
            let u = linalg::expm(&(basis.compose(&r) * (-I)));
            acc += (&u * &p * u.adjoint()) * w;
        }
        Ok(acc)
    }

    pub fn renormalized_rate(&self, c: usize, n: usize, m: usize, k: usize) -> Result<C64> {
        Ok(self.filtering_operation(c, n, m, k)?.rate)
    }

    pub fn correction_matrix(&self, c: usize, n: usize, m: usize, k: usize) -> Result<CMat> {
        Ok(self.filtering_operation(c, n, m, k)?.correction)
    }

    /// `Ã(t) = Σ e^{iω_nm t} A_nm |n⟩⟨m|`.
    pub fn interaction_operator(&self, c: usize, t: f64) -> CMat {
        let mut a = linalg::zeros(self.model.dim());
        for comp in &self.components[c] {
            a[(comp.row, comp.col)] += comp.amplitude * C64::from_polar(1.0, comp.frequency * t);
        }
        a
    }

    /// `Ã^(f)(t) = Σ e^{iω_nm t} A_nm F_t(|n⟩⟨m|)` from precomputed filtered components.
    pub fn filtered_jump(&self, c: usize, t: f64, ops: &[FilteredOperator]) -> CMat {
        let mut a = linalg::zeros(self.model.dim());
        for (comp, op) in self.components[c].iter().zip(ops) {
            let phase = comp.amplitude * C64::from_polar(1.0, comp.frequency * t);
            a += &op.correction * phase;
            a[(op.row, op.col)] += op.rate * phase;
        }
        a
    }

    /// Filtered components of every channel at row `k` (single-row path).
    pub fn filtered_row(&self, k: usize, mode: DissipatorMode) -> Result<Vec<Vec<FilteredOperator>>> {
        self.check_index(k)?;
        match mode {
            DissipatorMode::Full => Ok(self.assemble_row(&self.row_sums(k))),
            DissipatorMode::FieldIndependent => Ok(self.bare_row(k)),
        }
    }

    fn assemble_row(&self, sums: &[Vec<Vec<C64>>]) -> Vec<Vec<FilteredOperator>> {
        let basis = self.model.basis();
        let d = basis.len();
        self.components
            .iter()
            .enumerate()
            .map(|(c, comps)| {
                let rates: Vec<GeneralizedRates> =
                    sums[c].iter().map(|s| GeneralizedRates::from_sums(s, d)).collect();
                comps
                    .iter()
                    .map(|comp| assemble(basis, &rates[comp.group], comp.row, comp.col))
                    .collect()
            })
            .collect()
    }

    fn bare_row(&self, k: usize) -> Vec<Vec<FilteredOperator>> {
        let dim = self.model.dim();
        self.components
            .iter()
            .enumerate()
            .map(|(c, comps)| {
                comps
                    .iter()
                    .map(|comp| FilteredOperator {
                        row: comp.row,
                        col: comp.col,
                        rate: self.bare_rate(c, comp.group, k),
                        correction: linalg::zeros(dim),
                    })
                    .collect()
            })
            .collect()
    }

    /// `Ṽ_ren = (1/2i) Σ_α (Ã A^f − A^f† Ã)`.
    pub fn renormalization_hamiltonian(&self, t: f64, row: &[Vec<FilteredOperator>]) -> Result<CMat> {
        let dim = self.model.dim();
        let mut v = linalg::zeros(dim);
        for (c, ops) in row.iter().enumerate() {
            let a = self.interaction_operator(c, t);
            let f = self.filtered_jump(c, t, ops);
            v += &a * &f - f.adjoint() * &a;
        }
        let v = v * (-0.5 * I);
        let defect = linalg::hermiticity_defect(&v);
        if defect > 1e-10 * linalg::max_abs(&v).max(1e-300) && defect > 1e-300 {
            return Err(Error::Consistency(format!("Ṽ_ren Hermiticity defect {defect:.3e}")));
        }
        Ok(v)
    }

    /// Generalized-Lindblad rates of channel `c` at row `k` over an orthogonal basis.
    pub fn decoherence_matrix(&self, c: usize, k: usize, mode: DissipatorMode, basis: Vec<CMat>) -> Result<DecoherenceMatrix> {
        let row = self.filtered_row(k, mode)?;
        let t = self.time(k);
        DecoherenceMatrix::from_operators(
            &self.interaction_operator(c, t),
            &self.filtered_jump(c, t, &row[c]),
            basis,
        )
    }

    fn require_qubit(&self, c: usize, op: &CMat, name: &str) -> Result<()> {
        if self.model.dim() != 2 {
            return Err(Error::InvalidDimension(self.model.dim()));
        }
        let diff = linalg::max_abs(&(&self.channels[c].operator - op));
        if diff > 1e-14 {
            return Err(Error::param(format!("channel {c} is not coupled through {name}")));
        }
        Ok(())
    }

    /// `γ_φ`, `γ_x`, `γ_y` for longitudinal coupling `A = σz`, closed-form integrands.
    pub fn qubit_dephasing_rates(&self, c: usize, k: usize) -> Result<QubitDephasingRates> {
        self.require_qubit(c, &sigma_z(), "σz")?;
        self.check_index(k)?;
        let g = self.group_of(c, 0.0)?;
        let phi = self.convolve(c, g, k, |r| {
            let (_, s2) = sin_ratios(r);
            C64::new(1.0 - 2.0 * (r[0] * r[0] + r[1] * r[1]) * s2, 0.0)
        });
        let gx = self.convolve(c, g, k, |r| {
            let (s1, s2) = sin_ratios(r);
            C64::new(r[1] * s1 + 2.0 * r[0] * r[2] * s2, 0.0)
        });
        let gy = self.convolve(c, g, k, |r| {
            let (s1, s2) = sin_ratios(r);
            C64::new(-r[0] * s1 + 2.0 * r[1] * r[2] * s2, 0.0)
        });
        Ok(QubitDephasingRates {
            gamma_phi: 2.0 * phi.re,
            gamma_x: gx,
            gamma_y: gy,
        })
    }

    /// Closed-form `Γ̃(±ω_q)`, `M(±ω_q)` for transverse coupling `A = σx`.
    pub fn qubit_relaxation_rates(&self, c: usize, k: usize) -> Result<QubitRelaxationRates> {
        let sx = sigma_minus() + sigma_plus();
        self.require_qubit(c, &sx, "σx")?;
        self.check_index(k)?;
        let wq = self.model.bohr_frequency(1, 0);
        let gp = self.group_of(c, wq)?;
        let gn = self.group_of(c, -wq)?;
        let rate_pos = self.convolve(c, gp, k, |r| {
            let (s1, s2) = sin_ratios(r);
            let cr = norm3(r).cos();
            C64::new(cr * cr - r[2] * r[2] * s2, r[2] * s1)
        });
        let rate_neg = self.convolve(c, gn, k, |r| {
            let (s1, s2) = sin_ratios(r);
            let cr = norm3(r).cos();
            C64::new(cr * cr - r[2] * r[2] * s2, -r[2] * s1)
        });
        let mp_plus = self.convolve(c, gp, k, |r| {
            let (_, s2) = sin_ratios(r);
            let z = C64::new(r[0], -r[1]);
            z * z * s2
        });
        let mp_z = self.convolve(c, gp, k, |r| {
            let (s1, s2) = sin_ratios(r);
            C64::new(r[0], -r[1]) * C64::new(r[2] * s2, -0.5 * s1)
        });
        let mn_minus = self.convolve(c, gn, k, |r| {
            let (_, s2) = sin_ratios(r);
            let z = C64::new(r[0], r[1]);
            z * z * s2
        });
        let mn_z = self.convolve(c, gn, k, |r| {
            let (s1, s2) = sin_ratios(r);
            C64::new(r[0], r[1]) * C64::new(r[2] * s2, 0.5 * s1)
        });
        Ok(QubitRelaxationRates {
            rate_pos,
            rate_neg,
            m_pos: (mp_plus, mp_z),
            m_neg: (mn_minus, mn_z),
        })
    }

    /// Decoherence matrix over `(σ₋, σ₊, σz)` from the closed forms, with the
    /// structural identities verified.
    pub fn qubit_relaxation_matrix(&self, c: usize, k: usize) -> Result<QubitRelaxationMatrix> {
        let rr = self.qubit_relaxation_rates(c, k)?;
        let wq = self.model.bohr_frequency(1, 0);
        let t = self.time(k);
        let e2 = C64::from_polar(1.0, 2.0 * wq * t);
        let (mp_plus, mp_z) = rr.m_pos;
        let (mn_minus, mn_z) = rr.m_neg;
        let gamma_plus = 2.0 * (rr.rate_neg + e2 * mp_plus).re;
        let gamma_minus = 2.0 * (rr.rate_pos + e2.conj() * mn_minus).re;
        let gamma_ns = mp_plus + mn_minus.conj() + e2.conj() * (rr.rate_neg + rr.rate_pos.conj());
        let gamma_z_minus = mp_z + e2.conj() * mn_z;
        let gamma_z_plus = e2 * mp_z + mn_z;

        let scale = gamma_plus.abs().max(gamma_minus.abs()).max(gamma_ns.norm()).max(1e-300);
        let id1 = (gamma_plus + gamma_minus - 2.0 * (e2 * gamma_ns).re).abs();
        let id2 = (gamma_z_plus - e2 * gamma_z_minus).norm();
        if id1 > 1e-8 * scale || id2 > 1e-8 * scale.max(gamma_z_plus.norm()) {
            return Err(Error::Consistency(format!(
                "relaxation identities violated at t = {t}: {id1:.3e}, {id2:.3e}"
            )));
        }
        let basis = vec![sigma_minus(), sigma_plus(), sigma_z()];
        let gamma = CMat::from_row_slice(
            3,
            3,
            &[
                C64::new(gamma_minus, 0.0),
                gamma_ns.conj(),
                gamma_z_minus.conj(),
                gamma_ns,
                C64::new(gamma_plus, 0.0),
                gamma_z_plus.conj(),
                gamma_z_minus,
                gamma_z_plus,
                ZERO,
            ],
        );
        let mean = 0.5 * (gamma_plus + gamma_minus);
        let rad = (0.25 * (gamma_plus - gamma_minus).powi(2)
            + gamma_ns.norm_sqr()
            + 2.0 * gamma_z_minus.norm_sqr())
        .sqrt();
        Ok(QubitRelaxationMatrix {
            gamma_plus,
            gamma_minus,
            gamma_ns,
            gamma_z_plus,
            gamma_z_minus,
            matrix: DecoherenceMatrix { basis, gamma },
            canonical: (mean + rad, mean - rad),
        })
    }

    /// Emission rate `γ̃(ω_q, t)` of a three-level charge channel from the
    /// explicit `K`, `∂₇K`, `∂₈K` formula.
    pub fn qutrit_emission_rate(&self, c: usize, k: usize) -> Result<C64> {
        if self.model.dim() != 3 {
            return Err(Error::InvalidDimension(self.model.dim()));
        }
        self.check_index(k)?;
        let g = self.group_of(c, self.model.bohr_frequency(1, 0))?;
        let basis = self.model.basis();
        let mut w = basis.window();
        let s3 = 3f64.sqrt();
        Ok(self.convolve(c, g, k, |r| {
            basis.evaluate_window(r, &mut w);
            let kk = w.k;
            let (d7, d8) = (w.grad[6], w.grad[7]);
            let first = I / 6.0
                * ((kk.conj() * d8 - kk * d8.conj()) / s3 - (kk.conj() * d7 + kk * d7.conj()));
            let second = 0.25
                * (-(d7 * d7.conj()) - (d7 * d8.conj() - d8 * d7.conj()) / s3 + d8 * d8.conj() / 3.0);
            kk.norm_sqr() / 9.0 + first + second
        }))
    }

    /// Charge-channel decoherence matrices of a driven three-level system.
    pub fn qutrit_decoherence_matrices(&self, c: usize, k: usize, mode: DissipatorMode) -> Result<QutritDecoherence> {
        if self.model.dim() != 3 {
            return Err(Error::InvalidDimension(self.model.dim()));
        }
        let mut basis = Vec::with_capacity(9);
        let order = [(1, 0), (2, 1), (0, 1), (1, 2), (0, 2), (2, 0), (0, 0), (1, 1), (2, 2)];
        for &(a, b) in &order {
            basis.push(linalg::unit(3, a, b));
        }
        let full = self.decoherence_matrix(c, k, mode, basis)?;
        let emission = full.gamma.view((0, 0), (2, 2)).into_owned();
        let absorption = full.gamma.view((2, 2), (2, 2)).into_owned();
        Ok(QutritDecoherence {
            emission,
            absorption,
            full,
        })
    }
}

fn norm3(r: &[f64]) -> f64 {
    (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()
}

/// `(sin 2r / r, sin²r / r²)` with their `r → 0` limits.
fn sin_ratios(r: &[f64]) -> (f64, f64) {
    let n = norm3(r);
    if n < 1e-6 {
        let n2 = n * n;
        (2.0 - 4.0 * n2 / 3.0, 1.0 - n2 / 3.0)
    } else {
        let s = n.sin() / n;
        ((2.0 * n).sin() / n, s * s)
    }
}

/// Filtered components on every grid row, ready for the master equation.
#[derive(Debug, Clone)]
pub struct FilterTable {
    mode: DissipatorMode,
    rows: Vec<Vec<Vec<FilteredOperator>>>,
}

impl FilterTable {
    pub fn build(ctx: &FilterContext, mode: DissipatorMode, exec: Execution) -> Result<Self> {
        let capped = ctx.memory + 1;
        let rows = match mode {
            DissipatorMode::FieldIndependent => {
                let n = ctx.points.min(capped);
                exec.map(n, |k| ctx.bare_row(k))
            }
            DissipatorMode::Full if ctx.magnus.stationary.is_some() => stationary_rows(ctx, capped.min(ctx.points), exec),
            DissipatorMode::Full => exec.map(ctx.points, |k| ctx.assemble_row(&ctx.row_sums(k))),
        };
        Ok(FilterTable { mode, rows })
    }

    pub fn mode(&self) -> DissipatorMode {
        self.mode
    }

    /// Filtered components at grid index `k`; rows past the stored range repeat
    /// the last one (stationary kernel and saturated memory).
    pub fn row(&self, k: usize) -> &[Vec<FilteredOperator>] {
        &self.rows[k.min(self.rows.len() - 1)]
    }

    pub fn stored_rows(&self) -> usize {
        self.rows.len()
    }
}

/// Time-independent kernel: rows are running sums over a single kernel sequence.
fn stationary_rows(ctx: &FilterContext, n: usize, exec: Execution) -> Vec<Vec<Vec<FilteredOperator>>> {
    let basis = ctx.model.basis();
    let d = basis.len();
    let len = kernel_len(d);
    let mut acc: Vec<Vec<Vec<C64>>> = ctx
        .frequencies
        .iter()
        .map(|f| vec![vec![ZERO; len]; f.len()])
        .collect();
    let mut rows = Vec::with_capacity(n);
    const BLOCK: usize = 4096;
    let mut start = 0;
    while start < n {
        let stop = (start + BLOCK).min(n);
        let kernels: Vec<Vec<C64>> = exec.map(stop - start, |i| {
            let j = start + i;
            let mut r = vec![0.0; d];
            ctx.magnus.window(j, j, &mut r);
            let mut w = basis.window();
            basis.evaluate_window(&r, &mut w);
            let mut kern = vec![ZERO; len];
            fill_kernel(&w, basis.dim(), &mut kern);
            kern
        });
        for (i, kern) in kernels.iter().enumerate() {
            let k = start + i;
            // row k = Σ_{j<k} full_j kern_j + left_k kern_k
            let mut sums = acc.clone();
            for (c, per_c) in sums.iter_mut().enumerate() {
                for (g, s) in per_c.iter_mut().enumerate() {
                    let w = if k == 0 { ZERO } else { ctx.weights[c].left[g][k] };
                    for (x, y) in s.iter_mut().zip(kern) {
                        *x += w * y;
                    }
                }
            }
            rows.push(ctx.assemble_row(&sums));
            for (c, per_c) in acc.iter_mut().enumerate() {
                for (g, s) in per_c.iter_mut().enumerate() {
                    let w = if k == 0 {
                        ctx.weights[c].right[g][0]
                    } else {
                        ctx.weights[c].full(g, k)
                    };
                    for (x, y) in s.iter_mut().zip(kern) {
                        *x += w * y;
                    }
                }
            }
        }
        start = stop;
    }
    rows
}
