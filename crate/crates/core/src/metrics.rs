//! Realized process maps on the computational subspace, average gate fidelity
//! and leakage, closed-form error estimates and the DRAG coefficient search.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{self, CMat, C64, I};
use crate::magnus::{oracle_propagator, ClosedSystemModel};
use crate::solver::Integrator;

/// Linear map on `d×d` operators of the computational subspace, stored as the
/// images of `|i⟩⟨j|` (index `i·d + j`).
#[derive(Debug, Clone)]
pub struct QuantumMap {
    d: usize,
    images: Vec<CMat>,
}

impl QuantumMap {
    pub fn from_images(d: usize, images: Vec<CMat>) -> Result<Self> {
        if images.len() != d * d || images.iter().any(|m| m.nrows() != d || m.ncols() != d) {
            return Err(Error::param(format!("a map on dimension {d} needs {} images of size {d}×{d}", d * d)));
        }
        Ok(QuantumMap { d, images })
    }

    pub fn identity(d: usize) -> Self {
        Self::conjugation(&linalg::identity(d))
    }

    /// `ρ ↦ U ρ U†`.
    pub fn conjugation(u: &CMat) -> Self {
        let d = u.nrows();
        let ud = u.adjoint();
        let images = (0..d * d).map(|ij| u * linalg::unit(d, ij / d, ij % d) * &ud).collect();
        QuantumMap { d, images }
    }

    /// `ρ ↦ P U ρ U† P` for the lowest `d` levels of a full-system unitary.
    pub fn projected_conjugation(u: &CMat, d: usize) -> Self {
        let n = u.nrows();
        let ud = u.adjoint();
        let images = (0..d * d)
            .map(|ij| {
                let full = u * linalg::unit(n, ij / d, ij % d) * &ud;
                full.view((0, 0), (d, d)).into_owned()
            })
            .collect();
        QuantumMap { d, images }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn image(&self, i: usize, j: usize) -> &CMat {
        &self.images[i * self.d + j]
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        let mut out = linalg::zeros(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                let c = rho[(i, j)];
                if c != C64::new(0.0, 0.0) {
                    out += &self.images[i * self.d + j] * c;
                }
            }
        }
        out
    }

    /// `d²×d²` matrix acting on row-major vectorized operators.
    pub fn superoperator(&self) -> CMat {
        let d2 = self.d * self.d;
        CMat::from_fn(d2, d2, |r, c| {
            let m = &self.images[c];
            m[(r / self.d, r % self.d)]
        })
    }

    /// Determinant of the superoperator; a vanishing value means the map has no inverse.
    pub fn determinant(&self) -> C64 {
        self.superoperator().determinant()
    }

    /// `Tr E(1/d)`.
    pub fn mixed_state_trace(&self) -> f64 {
        let s: C64 = (0..self.d).map(|i| linalg::trace(self.image(i, i))).sum();
        s.re / self.d as f64
    }
}

/// Runs the `d²` Hermitian basis operators through `integrator` and projects
/// the results on the lowest `d` levels.
pub fn realized_map(integrator: &Integrator, d: usize, exec: Execution) -> Result<QuantumMap> {
    let n = integrator.config().model.dim();
    if d == 0 || d > n {
        return Err(Error::param(format!("subspace dimension {d} must lie in 1..={n}")));
    }
    // diagonals, then (X, Y) pairs for i < j with |i⟩⟨j| = X + iY
    let mut inputs = Vec::with_capacity(d * d);
    for i in 0..d {
        inputs.push(linalg::unit(n, i, i));
    }
    let mut pairs = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            let (a, b) = (linalg::unit(n, i, j), linalg::unit(n, j, i));
            pairs.push((i, j));
            inputs.push((&a + &b) * C64::new(0.5, 0.0));
            inputs.push((&a * (-I) + &b * I) * C64::new(0.5, 0.0));
        }
    }
    let outputs: Vec<Result<CMat>> = exec.map(inputs.len(), |r| {
        integrator
            .run_final(&inputs[r])
            .map(|m| m.view((0, 0), (d, d)).into_owned())
    });
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut images = vec![linalg::zeros(d); d * d];
    for i in 0..d {
        images[i * d + i] = outputs[i].clone();
    }
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let x = &outputs[d + 2 * p];
        let y = &outputs[d + 2 * p + 1];
        images[i * d + j] = x + y * I;
        images[j * d + i] = x - y * I;
    }
    let map = QuantumMap { d, images };
    let det = map.determinant().norm();
    if det < 1e-12 {
        log::warn!("realized map is close to singular (|det| = {det:.3e})");
    }
    Ok(map)
}

/// Closed-dynamics map from the reference propagator.
pub fn closed_map(model: &ClosedSystemModel, final_time: f64, d: usize, tol: f64) -> Result<QuantumMap> {
    let u = oracle_propagator(model, final_time, 0.0, tol)?;
    Ok(QuantumMap::projected_conjugation(&u, d))
}

fn check_unitary(u: &CMat, d: usize) -> Result<()> {
    if u.nrows() != d || u.ncols() != d {
        return Err(Error::param(format!("target must be {d}×{d}")));
    }
    let defect = linalg::unitarity_defect(u);
    if defect > 1e-10 {
        return Err(Error::param(format!("target is not unitary (defect {defect:.3e})")));
    }
    Ok(())
}

/// `F_e = (1/d²) Σ_ij ⟨i|U† E(|i⟩⟨j|) U|j⟩`.
pub fn entanglement_fidelity(e: &QuantumMap, u: &CMat) -> Result<f64> {
    let d = e.d;
    check_unitary(u, d)?;
    let ud = u.adjoint();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            acc += (&ud * e.image(i, j) * u)[(i, j)];
        }
    }
    Ok(acc.re / (d * d) as f64)
}

/// `F_e = ⟨φ|(1 ⊗ U†∘E)(|φ⟩⟨φ|)|φ⟩` on the doubled space.
pub fn entanglement_fidelity_doubled(e: &QuantumMap, u: &CMat) -> Result<f64> {
    let d = e.d;
    check_unitary(u, d)?;
    let ud = u.adjoint();
    let mut phi = CMat::zeros(d * d, 1);
    for i in 0..d {
        phi[(i * d + i, 0)] = C64::new(1.0 / (d as f64).sqrt(), 0.0);
    }
    let mut out = linalg::zeros(d * d);
    for i in 0..d {
        for j in 0..d {
            let block = &ud * e.image(i, j) * u / C64::new(d as f64, 0.0);
            out += linalg::unit(d, i, j).kronecker(&block);
        }
    }
    Ok((phi.adjoint() * out * phi)[(0, 0)].re)
}

/// `F = d/(d+1)·F_e + Tr E(1/d)/(d+1)`, valid for trace-non-preserving maps.
pub fn average_fidelity(e: &QuantumMap, u: &CMat) -> Result<f64> {
    let d = e.d as f64;
    let fe = entanglement_fidelity(e, u)?;
    Ok(d / (d + 1.0) * fe + e.mixed_state_trace() / (d + 1.0))
}

/// `L = 1 − Tr E(1/d)`.
pub fn average_leakage(e: &QuantumMap) -> f64 {
    1.0 - e.mixed_state_trace()
}

/// `√X = exp(−iπσx/4)`.
pub fn sqrt_x() -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_row_slice(2, 2, &[C64::new(s, 0.0), C64::new(0.0, -s), C64::new(0.0, -s), C64::new(s, 0.0)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimateInput {
    /// Phenomenological decay rate `γ`.
    pub gamma: f64,
    /// `S(ω_q)` and `S″(ω_q)` of the transverse bath.
    pub spectrum: f64,
    pub spectrum_curvature: f64,
    /// `S̄(0)` and `S̄′(0)` of the longitudinal bath.
    pub dephasing: f64,
    pub dephasing_slope: f64,
    pub gate_time: f64,
    pub rabi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimates {
    /// `(3 + e^{−γt} + 2e^{−γt/2})/6`.
    pub fidelity: f64,
    /// `S t/3 + (Ω t)² S″/(12 t)`.
    pub relaxation_infidelity: f64,
    /// `S̄(0) t/3 + Ω t S̄′(0)/3`.
    pub dephasing_infidelity: f64,
    /// Minimiser of the relaxation estimate at fixed rotation angle `Ω t`.
    pub optimal_gate_time: Option<f64>,
}

pub fn phenomenological_fidelity(gamma_t: f64) -> f64 {
    (3.0 + (-gamma_t).exp() + 2.0 * (-0.5 * gamma_t).exp()) / 6.0
}

pub fn closed_form_error_estimates(x: &ErrorEstimateInput) -> Result<ErrorEstimates> {
    if x.gamma < 0.0 || x.spectrum < 0.0 || x.dephasing < 0.0 || !(x.gate_time > 0.0) {
        return Err(Error::param("rates must be non-negative and the gate time positive"));
    }
    let t = x.gate_time;
    let theta = x.rabi * t;
    let a = x.spectrum / 3.0;
    let b = theta * theta * x.spectrum_curvature / 12.0;
    let optimal_gate_time = if a > 0.0 && b > 0.0 { Some((b / a).sqrt()) } else { None };
    Ok(ErrorEstimates {
        fidelity: phenomenological_fidelity(x.gamma * t),
        relaxation_infidelity: a * t + b / t,
        dephasing_infidelity: x.dephasing * t / 3.0 + theta * x.dephasing_slope / 3.0,
        optimal_gate_time,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DragOptimum {
    pub xi: f64,
    pub fidelity: f64,
    /// `(ξ, F)` on the coarse grid.
    pub grid: Vec<(f64, f64)>,
    pub unimodal: bool,
}

/// Maximises `objective` on `[lo, hi]`: coarse grid of `points`, then
/// golden-section refinement around the best grid point until the bracket is
/// below `tol`. A grid that is not unimodal returns the best grid point.
pub fn maximize_scalar<F>(objective: F, lo: f64, hi: f64, points: usize, tol: f64, exec: Execution) -> Result<DragOptimum>
where
    F: Fn(f64) -> Result<f64> + Sync + Send,
{
    if points < 3 || !(hi > lo) {
        return Err(Error::param("optimizer needs at least three grid points on a non-empty interval"));
    }
    let xs: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    let fs = exec.map(points, |i| objective(xs[i])).into_iter().collect::<Result<Vec<_>>>()?;
    let grid: Vec<(f64, f64)> = xs.iter().copied().zip(fs.iter().copied()).collect();
    let best = (0..points).fold(0, |b, i| if fs[i] > fs[b] { i } else { b });
    let unimodal = fs[..best].windows(2).all(|w| w[1] >= w[0]) && fs[best..].windows(2).all(|w| w[1] <= w[0]);
    if !unimodal {
        log::warn!("objective is not unimodal on the grid; returning the best grid point");
        return Ok(DragOptimum { xi: xs[best], fidelity: fs[best], grid, unimodal });
    }
    let (mut a, mut b) = (xs[best.saturating_sub(1)], xs[(best + 1).min(points - 1)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = objective(c)?;
    let mut fd = objective(d)?;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = objective(d)?;
        }
    }
    let (mut xi, mut f) = if fc >= fd { (c, fc) } else { (d, fd) };
    if fs[best] > f {
        xi = xs[best];
        f = fs[best];
    }
    Ok(DragOptimum { xi, fidelity: f, grid, unimodal })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phenomenological_reference_value() {
        assert_eq!(phenomenological_fidelity(0.0), 1.0);
        assert!((phenomenological_fidelity(0.1) - 0.967883).abs() < 5e-7);
    }

    #[test]
    fn ideal_map_has_unit_fidelity() {
        let u = sqrt_x();
        let e = QuantumMap::conjugation(&u);
        assert!((average_fidelity(&e, &u).unwrap() - 1.0).abs() < 1e-14);
        assert!(average_leakage(&e).abs() < 1e-14);
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let opt = maximize_scalar(|x| Ok(-(x - 0.3712).powi(2)), 0.0, 1.5, 31, 1e-4, Execution::Sequential).unwrap();
        assert!(opt.unimodal);
        assert!((opt.xi - 0.3712).abs() < 1e-4);
    }

    #[test]
    fn non_unit_target_rejected() {
        let e = QuantumMap::identity(2);
        assert!(average_fidelity(&e, &(sqrt_x() * C64::new(1.1, 0.0))).is_err());
    }
}
