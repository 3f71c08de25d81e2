//! Generalized Gell-Mann bases and the characteristic function `K(r) = Tr exp(−iΛ·r)`.
//!
//! Generators are ordered symmetric, antisymmetric, diagonal. Within the two
//! off-diagonal blocks the level pairs are ordered by offset, so for N = 3 the
//! pairs are (0,1), (1,2), (0,2).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64, I};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Symmetric(usize, usize),
    Antisymmetric(usize, usize),
    Diagonal(usize),
}

/// Real coefficient vector `r` with `Λ·r = Σ_k r_k Λ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffVector(pub Vec<f64>);

impl CoeffVector {
    pub fn zeros(len: usize) -> Self {
        CoeffVector(vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct CharacteristicFunction {
    pub value: C64,
    pub gradient: Vec<C64>,
    pub eigenvalues: Vec<f64>,
}

type Entry = (usize, usize, C64);

#[derive(Debug)]
pub struct GellMannBasis {
    dim: usize,
    matrices: Vec<CMat>,
    kinds: Vec<GeneratorKind>,
    entries: Vec<Vec<Entry>>,
    // f_jkl with −(i/2)[Λ_j, Λ_k] = Σ_l f_jkl Λ_l, nonzero entries only
    structure: Vec<(usize, usize, usize, f64)>,
}

impl GellMannBasis {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        let one = C64::new(1.0, 0.0);
        let mut pairs = Vec::new();
        for offset in 1..dim {
            for j in 0..dim - offset {
                pairs.push((j, j + offset));
            }
        }
        let mut entries: Vec<Vec<Entry>> = Vec::new();
        let mut kinds = Vec::new();
        for &(j, k) in &pairs {
            entries.push(vec![(j, k, one), (k, j, one)]);
            kinds.push(GeneratorKind::Symmetric(j, k));
        }
        for &(j, k) in &pairs {
            entries.push(vec![(j, k, -I), (k, j, I)]);
            kinds.push(GeneratorKind::Antisymmetric(j, k));
        }
        for l in 1..dim {
            let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
            let mut e: Vec<Entry> = (0..l).map(|j| (j, j, C64::new(norm, 0.0))).collect();
            e.push((l, l, C64::new(-(l as f64) * norm, 0.0)));
            entries.push(e);
            kinds.push(GeneratorKind::Diagonal(l));
        }
        let matrices: Vec<CMat> = entries
            .iter()
            .map(|e| {
                let mut m = linalg::zeros(dim);
                for &(a, b, v) in e {
                    m[(a, b)] = v;
                }
                m
            })
            .collect();

        let len = matrices.len();
        let mut structure = Vec::new();
        for j in 0..len {
            for k in 0..len {
                let c = linalg::commutator(&matrices[j], &matrices[k]) * (-0.5 * I);
                for (l, lam) in matrices.iter().enumerate() {
                    let f = linalg::trace(&(&c * lam)).re / 2.0;
                    if f.abs() > 1e-14 {
                        structure.push((j, k, l, f));
                    }
                }
            }
        }
        Ok(GellMannBasis {
            dim,
            matrices,
            kinds,
            entries,
            structure,
        })
    }

    /// Process-wide shared basis for dimension `dim`.
    pub fn shared(dim: usize) -> Result<Arc<GellMannBasis>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GellMannBasis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(b) = guard.get(&dim) {
            return Ok(b.clone());
        }
        let b = Arc::new(GellMannBasis::new(dim)?);
        guard.insert(dim, b.clone());
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of generators, N² − 1.
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Number of off-diagonal generators, N(N − 1); diagonal ones follow.
    pub fn off_diagonal_len(&self) -> usize {
        self.dim * (self.dim - 1)
    }

    pub fn matrices(&self) -> &[CMat] {
        &self.matrices
    }

    pub fn matrix(&self, k: usize) -> &CMat {
        &self.matrices[k]
    }

    pub fn kind(&self, k: usize) -> GeneratorKind {
        self.kinds[k]
    }

    /// Nonzero entries `(row, col, value)` of generator `k`.
    pub fn entries(&self, k: usize) -> &[Entry] {
        &self.entries[k]
    }

    /// Value of the `l`-th diagonal generator (0-based within the diagonal block) at level `level`.
    pub fn diagonal_value(&self, l: usize, level: usize) -> f64 {
        let k = self.off_diagonal_len() + l;
        self.entries[k]
            .iter()
            .find(|e| e.0 == level)
            .map_or(0.0, |e| e.2.re)
    }

    /// `Λ·r`.
    pub fn compose(&self, r: &[f64]) -> CMat {
        let mut m = linalg::zeros(self.dim);
        for (k, &rk) in r.iter().enumerate() {
            for &(a, b, v) in &self.entries[k] {
                m[(a, b)] += v * rk;
            }
        }
        m
    }

    /// `Tr(Λ_k M)`.
    pub fn trace_with(&self, k: usize, m: &CMat) -> C64 {
        self.entries[k].iter().map(|&(a, b, v)| v * m[(b, a)]).sum()
    }

    /// Coefficients `c_k = Tr(Λ_k H)/2` of a traceless Hermitian matrix.
    pub fn decompose(&self, h: &CMat) -> Result<CoeffVector> {
        if h.nrows() != self.dim || h.ncols() != self.dim {
            return Err(Error::param(format!(
                "matrix is {}x{}, basis dimension is {}",
                h.nrows(),
                h.ncols(),
                self.dim
            )));
        }
        let scale = linalg::max_abs(h).max(f64::MIN_POSITIVE);
        let herm = linalg::hermiticity_defect(h);
        if herm > 1e-10 * scale {
            return Err(Error::NotHermitian(herm));
        }
        let tr = linalg::trace(h).norm();
        if tr > 1e-10 * scale {
            return Err(Error::NotTraceless(tr));
        }
        Ok(self.decompose_unchecked(h))
    }

    pub(crate) fn decompose_unchecked(&self, h: &CMat) -> CoeffVector {
        CoeffVector((0..self.len()).map(|k| 0.5 * self.trace_with(k, h).re).collect())
    }

    /// Accumulates `out_l += Σ_jk f_jkl x_j y_k`, the coefficients of `−(i/2)[Λ·x, Λ·y]`.
    pub fn commutator_coeffs(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for &(j, k, l, f) in &self.structure {
            out[l] += f * x[j] * y[k];
        }
    }

    /// Window evaluator with preallocated scratch space.
    pub fn window(&self) -> WindowEval {
        let n = self.dim;
        WindowEval {
            mu: vec![0.0; n],
            u: vec![C64::new(0.0, 0.0); n * n],
            k: C64::new(n as f64, 0.0),
            grad: vec![C64::new(0.0, 0.0); self.len()],
            h: vec![C64::new(0.0, 0.0); n * n],
            vecs: vec![C64::new(0.0, 0.0); n * n],
        }
    }

    /// Diagonalises `Λ·r` and fills `U = exp(−iΛ·r)`, `K` and `∇K` in `w`.
    pub fn evaluate_window(&self, r: &[f64], w: &mut WindowEval) {
        let n = self.dim;
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            w.mu.iter_mut().for_each(|m| *m = 0.0);
            w.u.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            for a in 0..n {
                w.u[a * n + a] = C64::new(1.0, 0.0);
            }
            w.k = C64::new(n as f64, 0.0);
            w.grad.iter_mut().for_each(|g| *g = C64::new(0.0, 0.0));
            return;
        }
        if n == 2 {
            // exp(−i r·σ) = cos r − i sin r (r̂·σ)
            let (s, c) = norm.sin_cos();
            let (x, y, z) = (r[0] / norm, r[1] / norm, r[2] / norm);
            w.mu[0] = norm;
            w.mu[1] = -norm;
            w.u[0] = C64::new(c, -s * z);
            w.u[1] = C64::new(-s * y, -s * x);
            w.u[2] = C64::new(s * y, -s * x);
            w.u[3] = C64::new(c, s * z);
            w.k = C64::new(2.0 * c, 0.0);
            for (g, rk) in w.grad.iter_mut().zip([x, y, z]) {
                *g = C64::new(-2.0 * s * rk, 0.0);
            }
            return;
        }
        w.h.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for (k, &rk) in r.iter().enumerate() {
            if rk != 0.0 {
                for &(a, b, v) in &self.entries[k] {
                    w.h[a * n + b] += v * rk;
                }
            }
        }
        let solved = n == 3 && self.eigen3(norm, w);
        if !solved {
            let h = CMat::from_row_slice(n, n, &w.h);
            let (vals, vecs) = linalg::hermitian_eigen(&h);
            for j in 0..n {
                w.mu[j] = vals[j];
                for a in 0..n {
                    w.vecs[a * n + j] = vecs[(a, j)];
                }
            }
        }
        // U = Σ_j e^{−iμ_j} v_j v_j†
        w.u.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for j in 0..n {
            let ph = C64::from_polar(1.0, -w.mu[j]);
            for a in 0..n {
                let va = w.vecs[a * n + j] * ph;
                for b in 0..n {
                    w.u[a * n + b] += va * w.vecs[b * n + j].conj();
                }
            }
        }
        w.k = (0..n).map(|a| w.u[a * n + a]).sum();
        // ∂_k K = −i Σ_j e^{−iμ_j}⟨v_j|Λ_k|v_j⟩ = −i Tr(Λ_k U)
        for (k, g) in w.grad.iter_mut().enumerate() {
            let t: C64 = self.entries[k].iter().map(|&(a, b, v)| v * w.u[b * n + a]).sum();
            *g = -I * t;
        }
    }

    // Vieta eigenvalues plus cross-product eigenvectors; false near degeneracy.
    fn eigen3(&self, norm: f64, w: &mut WindowEval) -> bool {
        let h = &w.h;
        let eps = det3(h).re;
        vieta(norm, eps, &mut w.mu);
        for m in w.mu.iter_mut() {
            // one Newton step on μ³ − r²μ − ε
            let p = *m * *m * *m - norm * norm * *m - eps;
            let dp = 3.0 * *m * *m - norm * norm;
            if dp.abs() > 1e-3 * norm * norm {
                *m -= p / dp;
            }
        }
        let gap = (w.mu[0] - w.mu[1]).min(w.mu[1] - w.mu[2]);
        if gap < 1e-4 * norm {
            return false;
        }
        for j in 0..3 {
            let mu = w.mu[j];
            let row = |a: usize| -> [C64; 3] {
                let mut v = [h[a * 3], h[a * 3 + 1], h[a * 3 + 2]];
                v[a] -= mu;
                v
            };
            let (r0, r1, r2) = (row(0), row(1), row(2));
            let cands = [cross(&r0, &r1), cross(&r0, &r2), cross(&r1, &r2)];
            let mut best = cands[0];
            let mut best_n = norm3(&best);
            for c in &cands[1..] {
                let nc = norm3(c);
                if nc > best_n {
                    best = *c;
                    best_n = nc;
                }
            }
            if best_n <= 1e-300 {
                return false;
            }
            for a in 0..3 {
                w.vecs[a * 3 + j] = best[a] / best_n;
            }
        }
        true
    }
}

/// Scratch space and results of [`GellMannBasis::evaluate_window`].
/// Matrices are stored row-major.
#[derive(Debug, Clone)]
pub struct WindowEval {
    pub mu: Vec<f64>,
    pub u: Vec<C64>,
    pub k: C64,
    pub grad: Vec<C64>,
    h: Vec<C64>,
    vecs: Vec<C64>,
}

impl WindowEval {
    pub fn unitary(&self) -> CMat {
        let n = self.mu.len();
        CMat::from_row_slice(n, n, &self.u)
    }
}

fn det3(h: &[C64]) -> C64 {
    h[0] * (h[4] * h[8] - h[5] * h[7]) - h[1] * (h[3] * h[8] - h[5] * h[6])
        + h[2] * (h[3] * h[7] - h[4] * h[6])
}

fn cross(a: &[C64; 3], b: &[C64; 3]) -> [C64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: &[C64; 3]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn vieta(norm: f64, eps: f64, out: &mut [f64]) {
    let arg = (3.0 * 3f64.sqrt() * eps / (2.0 * norm.powi(3))).clamp(-1.0, 1.0);
    let phi = arg.acos() / 3.0;
    for (j, o) in out.iter_mut().enumerate().take(3) {
        *o = 2.0 * norm / 3f64.sqrt() * (phi - 2.0 * PI * j as f64 / 3.0).cos();
    }
}

/// Eigenvalues of `Λ·r` in descending order.
pub fn eigenvalues_mu(r: &CoeffVector, basis: &GellMannBasis) -> Vec<f64> {
    let n = basis.dim();
    let norm = r.norm();
    if norm == 0.0 {
        return vec![0.0; n];
    }
    match n {
        2 => vec![norm, -norm],
        3 => {
            let h = basis.compose(&r.0);
            let flat: Vec<C64> = (0..9).map(|i| h[(i / 3, i % 3)]).collect();
            let mut mu = vec![0.0; 3];
            vieta(norm, det3(&flat).re, &mut mu);
            mu
        }
        _ => linalg::hermitian_eigen(&basis.compose(&r.0)).0,
    }
}

/// `K(r) = Σ_j exp(−iμ_j)` with its gradient.
pub fn characteristic_fn(r: &CoeffVector, basis: &GellMannBasis) -> CharacteristicFunction {
    let mut w = basis.window();
    basis.evaluate_window(&r.0, &mut w);
    CharacteristicFunction {
        value: w.k,
        gradient: w.grad.clone(),
        eigenvalues: w.mu.clone(),
    }
}

/// `exp(−iΛ·r) = (K/N)·1 + (i/2)∇K·Λ`.
pub fn expand_unitary(r: &CoeffVector, basis: &GellMannBasis) -> CMat {
    let cf = characteristic_fn(r, basis);
    unitary_from_characteristic(&cf, basis)
}

pub fn unitary_from_characteristic(cf: &CharacteristicFunction, basis: &GellMannBasis) -> CMat {
    let n = basis.dim();
    let mut u = linalg::identity(n) * (cf.value / n as f64);
    for (k, g) in cf.gradient.iter().enumerate() {
        for &(a, b, v) in basis.entries(k) {
            u[(a, b)] += 0.5 * I * g * v;
        }
    }
    u
}
