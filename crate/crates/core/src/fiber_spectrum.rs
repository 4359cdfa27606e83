//! Lowest eigenpairs of the fibre pencil (K(chi), M), the small-|chi|
//! scaling of the lowest branches, and Korn-type ratio probes.
//!
//! For planar-symmetric materials the pencil is block diagonal in the two
//! x3-parity classes; each class is solved on its own, so every eigenvector
//! carries a definite parity.

use crate::assembly::{chi_norm, frobenius, Cell, Chi};
use crate::cell_mesh::{Parity, ParityMasks};
use crate::dense;
use crate::fit::{self, FitError, PowerFit};
use crate::sparse::{Cholesky, CsrMatrix, LinearSolveError};
use faer::Mat;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("eigensolver did not converge after {restarts} restarts (worst residual {residual:.3e})")]
    NoConvergence { restarts: usize, residual: f64 },
    #[error("requested {requested} eigenpairs from a space of dimension {dim}")]
    TooMany { requested: usize, dim: usize },
    #[error("dense eigensolve failed")]
    Dense,
    #[error(transparent)]
    Linear(#[from] LinearSolveError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Backward-error tolerance `||Kv - lam Mv|| <= tol (||K|| + |lam| ||M||) ||v||`.
    pub tol: f64,
    /// Subspace dimensions up to this use the dense route.
    pub dense_limit: usize,
    pub max_restarts: usize,
    /// Krylov blocks per restart.
    pub blocks: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-10, dense_limit: 1200, max_restarts: 40, blocks: 8, seed: 7 }
    }
}

/// Eigenpairs with residual diagnostics.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    /// M-orthonormal eigenvectors.
    pub vectors: Vec<Vec<C64>>,
    pub residuals: Vec<f64>,
}

/// Search space: the whole DOF space or one parity class.
#[derive(Clone, Copy)]
pub enum Subspace<'a> {
    Full,
    Class(&'a ParityMasks, Parity),
}

impl Subspace<'_> {
    fn project(&self, v: Vec<C64>) -> Vec<C64> {
        match self {
            Subspace::Full => v,
            Subspace::Class(m, p) => m.project(&v, *p),
        }
    }

    /// Orthonormal basis vectors as (dof, coefficient) lists.
    fn basis(&self, n: usize) -> Vec<Vec<(usize, f64)>> {
        match self {
            Subspace::Full => (0..n).map(|d| vec![(d, 1.0)]).collect(),
            Subspace::Class(m, p) => {
                let mask = if *p == Parity::First { &m.odd_mask } else { &m.even_mask };
                let mut e = vec![ZERO; n];
                let mut out = Vec::new();
                for (j, &keep) in mask.iter().enumerate() {
                    if !keep {
                        continue;
                    }
                    e[j] = C64::new(1.0, 0.0);
                    let b = m.from_parity_coords(&e);
                    e[j] = ZERO;
                    out.push(b.iter().enumerate().filter(|(_, x)| x.norm() > 0.0).map(|(d, x)| (d, x.re)).collect());
                }
                out
            }
        }
    }

    fn dim(&self, n: usize) -> usize {
        match self {
            Subspace::Full => n,
            Subspace::Class(m, p) => {
                let mask = if *p == Parity::First { &m.odd_mask } else { &m.even_mask };
                mask.iter().filter(|b| **b).count()
            }
        }
    }
}

fn inf_norm<T: crate::sparse::Scalar>(a: &CsrMatrix<T>) -> f64 {
    (0..a.n).map(|i| (a.row_ptr[i]..a.row_ptr[i + 1]).map(|p| a.val[p].abs2().sqrt()).sum::<f64>()).fold(0.0, f64::max)
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn residual(k: &CsrMatrix<C64>, m: &CsrMatrix<f64>, lam: f64, v: &[C64], kn: f64, mn: f64) -> f64 {
    let kv = k.mul_vec(v);
    let mv = m.mul_vec(v);
    let r: f64 = kv.iter().zip(&mv).map(|(a, b)| (a - b * lam).norm_sqr()).sum::<f64>().sqrt();
    let vn = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    r / ((kn + lam.abs() * mn) * vn)
}

/// Lowest `nev` eigenpairs of `K v = lam M v` restricted to `space`.
pub fn lowest_eigenpairs_in(
    k: &CsrMatrix<C64>,
    m: &CsrMatrix<f64>,
    nev: usize,
    space: Subspace<'_>,
    opts: &EigenOptions,
) -> Result<Eigenpairs, SpectrumError> {
    let n = k.n;
    let dim = space.dim(n);
    if nev > dim {
        return Err(SpectrumError::TooMany { requested: nev, dim });
    }
    if nev == 0 {
        return Ok(Eigenpairs { values: vec![], vectors: vec![], residuals: vec![] });
    }
    if dim <= opts.dense_limit {
        dense_route(k, m, nev, space)
    } else {
        krylov_route(k, m, nev, space, opts)
    }
}

/// Lowest `nev` eigenpairs over the whole space.
pub fn lowest_eigenpairs(
    k: &CsrMatrix<C64>,
    m: &CsrMatrix<f64>,
    nev: usize,
    opts: &EigenOptions,
) -> Result<Eigenpairs, SpectrumError> {
    lowest_eigenpairs_in(k, m, nev, Subspace::Full, opts)
}

fn dense_route(k: &CsrMatrix<C64>, m: &CsrMatrix<f64>, nev: usize, space: Subspace<'_>) -> Result<Eigenpairs, SpectrumError> {
    let n = k.n;
    let basis = space.basis(n);
    let kd = project_dense(n, &basis, |dof, col, c| {
        for p in k.row_ptr[dof]..k.row_ptr[dof + 1] {
            col[k.col[p]] += k.val[p].conj() * c;
        }
    });
    let md = project_dense(n, &basis, |dof, col, c| {
        for p in m.row_ptr[dof]..m.row_ptr[dof + 1] {
            col[m.col[p]] += C64::new(m.val[p] * c, 0.0);
        }
    });
    let (vals, vecs) = dense::generalized_hermitian_eigen(&kd, &md).ok_or(SpectrumError::Dense)?;
    let kn = inf_norm(k);
    let mn = inf_norm(m);
    let mut out = Eigenpairs { values: vec![], vectors: vec![], residuals: vec![] };
    for i in 0..nev {
        let mut v = vec![ZERO; n];
        for (j, bj) in basis.iter().enumerate() {
            let y = vecs[(j, i)];
            for &(dof, c) in bj {
                v[dof] += y * c;
            }
        }
        let lam = vals[i].max(0.0);
        out.residuals.push(residual(k, m, vals[i], &v, kn, mn));
        out.values.push(lam);
        out.vectors.push(v);
    }
    Ok(out)
}

/// B^H A B for a basis with at most two entries per vector.
fn project_dense(n: usize, basis: &[Vec<(usize, f64)>], add_col: impl Fn(usize, &mut [C64], f64)) -> Mat<C64> {
    let d = basis.len();
    // position of each dof inside the basis (coefficient lists are disjoint)
    let mut owner: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (j, bj) in basis.iter().enumerate() {
        for &(dof, c) in bj {
            owner[dof].push((j, c));
        }
    }
    let mut out = Mat::<C64>::zeros(d, d);
    let mut col = vec![ZERO; n];
    for (j, bj) in basis.iter().enumerate() {
        for &(dof, c) in bj {
            add_col(dof, &mut col, c);
        }
        for (dof, x) in col.iter_mut().enumerate() {
            if *x != ZERO {
                for &(i, c) in &owner[dof] {
                    out[(i, j)] += *x * c;
                }
                *x = ZERO;
            }
        }
    }
    // enforce exact Hermitian symmetry
    Mat::<C64>::from_fn(d, d, |i, j| (out[(i, j)] + out[(j, i)].conj()) * 0.5)
}

struct Basis {
    v: Vec<Vec<C64>>,
    mv: Vec<Vec<C64>>,
}

impl Basis {
    /// M-orthonormalises `w` against the basis (two Gram-Schmidt passes);
    /// returns false when `w` is numerically dependent.
    fn push(&mut self, mut w: Vec<C64>, m: &CsrMatrix<f64>) -> bool {
        let mw0 = m.mul_vec(&w);
        let n0 = dot(&w, &mw0).re.max(0.0).sqrt();
        if n0 == 0.0 {
            return false;
        }
        for _ in 0..2 {
            for (v, mv) in self.v.iter().zip(&self.mv) {
                let c = dot(mv, &w);
                for (x, y) in w.iter_mut().zip(v) {
                    *x -= c * y;
                }
            }
        }
        let mw = m.mul_vec(&w);
        let nn = dot(&w, &mw).re.max(0.0).sqrt();
        if nn < 1e-10 * n0 {
            return false;
        }
        let s = 1.0 / nn;
        self.v.push(w.iter().map(|x| x * s).collect());
        self.mv.push(mw.iter().map(|x| x * s).collect());
        true
    }
}

fn krylov_route(
    k: &CsrMatrix<C64>,
    m: &CsrMatrix<f64>,
    nev: usize,
    space: Subspace<'_>,
    opts: &EigenOptions,
) -> Result<Eigenpairs, SpectrumError> {
    let n = k.n;
    let tr_k: f64 = (0..n).map(|i| k.get(i, i).re).sum();
    let tr_m: f64 = (0..n).map(|i| m.get(i, i)).sum();
    let shift = 1e-8 * tr_k / tr_m;
    let mut shifted = k.clone();
    for (p, v) in shifted.val.iter_mut().enumerate() {
        // k and m share the mesh pattern
        *v += C64::new(shift * m.val[p], 0.0);
    }
    debug_assert_eq!(shifted.col, m.col);
    let chol = Cholesky::new(&shifted)?;
    let kn = inf_norm(k);
    let mn = inf_norm(m);
    let bsize = nev + 3;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start: Vec<Vec<C64>> = (0..bsize)
        .map(|_| space.project((0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()))
        .collect();
    let mut worst = f64::INFINITY;
    for _restart in 0..opts.max_restarts {
        let mut basis = Basis { v: Vec::new(), mv: Vec::new() };
        let mut block = std::mem::take(&mut start);
        for j in 0..opts.blocks {
            let mut added = Vec::new();
            for w in block {
                if basis.push(w, m) {
                    added.push(basis.v.len() - 1);
                }
            }
            if added.is_empty() || j + 1 == opts.blocks {
                break;
            }
            block = added
                .iter()
                .map(|&i| {
                    let mut x = basis.mv[i].clone();
                    chol.solve_in_place(&mut x);
                    space.project(x)
                })
                .collect();
        }
        let p = basis.v.len();
        let kv: Vec<Vec<C64>> = basis.v.iter().map(|v| k.mul_vec(v)).collect();
        let h = Mat::<C64>::from_fn(p, p, |i, j| dot(&basis.v[i], &kv[j]));
        let h = Mat::<C64>::from_fn(p, p, |i, j| (h[(i, j)] + h[(j, i)].conj()) * 0.5);
        let g = Mat::<C64>::from_fn(p, p, |i, j| dot(&basis.v[i], &basis.mv[j]));
        let g = Mat::<C64>::from_fn(p, p, |i, j| (g[(i, j)] + g[(j, i)].conj()) * 0.5);
        let (vals, y) = dense::generalized_hermitian_eigen(&h, &g).ok_or(SpectrumError::Dense)?;
        let keep = bsize.min(p);
        let ritz: Vec<Vec<C64>> = (0..keep)
            .map(|c| {
                let mut v = vec![ZERO; n];
                for (i, bv) in basis.v.iter().enumerate() {
                    let yi = y[(i, c)];
                    for (x, b) in v.iter_mut().zip(bv) {
                        *x += yi * b;
                    }
                }
                v
            })
            .collect();
        let res: Vec<f64> = (0..nev.min(keep)).map(|i| residual(k, m, vals[i], &ritz[i], kn, mn)).collect();
        worst = res.iter().cloned().fold(0.0, f64::max);
        if keep >= nev && worst <= opts.tol {
            return Ok(Eigenpairs {
                values: vals[..nev].iter().map(|l| l.max(0.0)).collect(),
                vectors: ritz[..nev].to_vec(),
                residuals: res,
            });
        }
        start = ritz;
        while start.len() < bsize {
            start.push(space.project((0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, 0.0)).collect()));
        }
    }
    Err(SpectrumError::NoConvergence { restarts: opts.max_restarts, residual: worst })
}

/// Eigenvalues of one fibre with parity labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub chi: Chi,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Parity class of each eigenvector (planar-symmetric materials only).
    pub parity: Option<Vec<Parity>>,
    #[serde(skip)]
    pub vectors: Option<Vec<Vec<C64>>>,
}

/// Lowest `nev` eigenpairs of the fibre at `chi`, split by parity when the
/// material allows it.
pub fn fiber_spectrum(
    cell: &Cell,
    masks: &ParityMasks,
    chi: Chi,
    nev: usize,
    keep_vectors: bool,
    opts: &EigenOptions,
) -> Result<SpectrumRecord, SpectrumError> {
    let k = cell.stiffness(chi);
    let m = cell.mass();
    if !cell.field().planar_symmetric() {
        let e = lowest_eigenpairs(&k, &m, nev, opts)?;
        return Ok(SpectrumRecord {
            chi,
            eigenvalues: e.values,
            residuals: e.residuals,
            parity: None,
            vectors: keep_vectors.then_some(e.vectors),
        });
    }
    let mut all: Vec<(f64, f64, Parity, Vec<C64>)> = Vec::new();
    for p in [Parity::First, Parity::Second] {
        let e = lowest_eigenpairs_in(&k, &m, nev, Subspace::Class(masks, p), opts)?;
        for ((l, r), v) in e.values.into_iter().zip(e.residuals).zip(e.vectors) {
            all.push((l, r, p, v));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    all.truncate(nev);
    Ok(SpectrumRecord {
        chi,
        eigenvalues: all.iter().map(|a| a.0).collect(),
        residuals: all.iter().map(|a| a.1).collect(),
        parity: Some(all.iter().map(|a| a.2).collect()),
        vectors: keep_vectors.then(|| all.into_iter().map(|a| a.3).collect()),
    })
}

/// Slopes of the lowest branches along a ray.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    pub records: Vec<SpectrumRecord>,
    pub slope_first: PowerFit,
    /// Fitted on lam2 + lam3.
    pub slope_pair: PowerFit,
    pub slope_fourth: PowerFit,
    /// min over the sweep of lam1 / |chi|^4.
    pub quartic_constant: f64,
}

/// Eigenvalue sweep along `direction` over `magnitudes` with log-log slopes.
pub fn scaling_sweep(
    cell: &Cell,
    direction: [f64; 2],
    magnitudes: &[f64],
    nev: usize,
    opts: &EigenOptions,
) -> Result<ScalingReport, SpectrumError> {
    let masks = ParityMasks::new(cell.mesh());
    let dn = chi_norm(direction);
    let records = magnitudes
        .par_iter()
        .map(|&t| fiber_spectrum(cell, &masks, [direction[0] * t / dn, direction[1] * t / dn], nev.max(4), false, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let pick = |f: &dyn Fn(&SpectrumRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
    let lam1 = pick(&|r| r.eigenvalues[0]);
    let pair = pick(&|r| r.eigenvalues[1] + r.eigenvalues[2]);
    let lam4 = pick(&|r| r.eigenvalues[3]);
    let quartic_constant = lam1.iter().zip(magnitudes).map(|(l, t)| l / t.powi(4)).fold(f64::INFINITY, f64::min);
    Ok(ScalingReport {
        slope_first: fit::loglog(magnitudes, &lam1, 2, 0.0)?,
        slope_pair: fit::loglog(magnitudes, &pair, 2, 0.0)?,
        slope_fourth: fit::loglog(magnitudes, &lam4, 2, 0.0)?,
        quartic_constant,
        records,
    })
}

/// Convention for the rotation amplitudes a_alpha of the Korn decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KornConvention {
    /// a_alpha = 1/2 int (d3 u_alpha - d_alpha u3): the infinitesimal rotation.
    #[default]
    HalfRotation,
    /// a_alpha = int (d3 u_alpha - d_alpha u3).
    Literal,
}

/// Names of the reported ratios, in column order.
pub const KORN_RATIOS: [&str; 5] = ["ratio_inplane", "ratio_vertical", "ratio_rigid", "ratio_deflection", "ratio_compat"];

/// Korn ratios of one field u = v e_chi. Entries 2..5 are NaN at chi = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KornSample {
    pub sym_norm: f64,
    pub a: [C64; 2],
    pub c: [C64; 3],
    pub ratios: [f64; 5],
}

/// L2 norm of sym grad (v e_chi) over the cell.
pub fn sym_grad_norm(cell: &Cell, v: &[C64], chi: Chi) -> f64 {
    let w = cell.mesh().reference().weight;
    cell.shifted_strain(v, chi).values.iter().map(|s| frobenius(s).powi(2)).sum::<f64>().mul_add(w, 0.0).sqrt()
}

/// Decomposition constants and the five ratios for one sample; `None` when
/// sym grad u vanishes (kernel).
pub fn korn_sample(cell: &Cell, v: &[C64], chi: Chi, conv: KornConvention) -> Option<KornSample> {
    let w = cell.mesh().reference().weight;
    let pts = cell.quad_points();
    let vals = cell.values_at_q(v);
    let grads = cell.gradients_at_q(v);
    let sym_norm = sym_grad_norm(cell, v, chi);
    let scale = v.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if sym_norm <= 1e-12 * scale.max(1e-300) {
        return None;
    }
    // full gradient of u = v e_chi: (d v_c + i chi_d v_c) e_chi
    let phase: Vec<C64> = pts.iter().map(|x| C64::from_polar(1.0, chi[0] * x[0] + chi[1] * x[1])).collect();
    let grad_u = |gq: usize, c: usize, d: usize| -> C64 {
        let shift = if d < 2 { C64::new(0.0, chi[d]) * vals[gq][c] } else { ZERO };
        (grads[gq][c][d] + shift) * phase[gq]
    };
    let fac = match conv {
        KornConvention::HalfRotation => 0.5,
        KornConvention::Literal => 1.0,
    };
    let mut a = [ZERO; 2];
    let mut c = [ZERO; 3];
    for gq in 0..pts.len() {
        for al in 0..2 {
            a[al] += (grad_u(gq, al, 2) - grad_u(gq, 2, al)) * (fac * w);
        }
        for j in 0..3 {
            c[j] += vals[gq][j] * phase[gq] * w;
        }
    }
    // H1 norms of the remainders
    let mut h1 = [0.0f64; 3];
    for (gq, x) in pts.iter().enumerate() {
        for al in 0..2 {
            let r = vals[gq][al] * phase[gq] - a[al] * x[2] - c[al];
            let mut s = r.norm_sqr();
            for d in 0..3 {
                let g = grad_u(gq, al, d) - if d == 2 { a[al] } else { ZERO };
                s += g.norm_sqr();
            }
            h1[al] += s * w;
        }
        let r = vals[gq][2] * phase[gq] + a[0] * x[0] + a[1] * x[1] - c[2];
        let mut s = r.norm_sqr();
        for d in 0..3 {
            let g = grad_u(gq, 2, d) + if d < 2 { a[d] } else { ZERO };
            s += g.norm_sqr();
        }
        h1[2] += s * w;
    }
    let t = chi_norm(chi);
    let inplane = h1[0].sqrt().max(h1[1].sqrt()) / sym_norm;
    let vertical = h1[2].sqrt() / sym_norm;
    let (rigid, deflection, compat) = if t > 0.0 {
        let m = [a[0].norm(), a[1].norm(), c[0].norm(), c[1].norm()].into_iter().fold(0.0, f64::max);
        let s = (0..2)
            .map(|al| ((C64::from_polar(1.0, chi[al]) - 1.0) * c[2] + a[al]).norm())
            .fold(0.0, f64::max);
        (m * t / sym_norm, c[2].norm() * t * t / sym_norm, s / sym_norm)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    Some(KornSample { sym_norm, a, c, ratios: [inplane, vertical, rigid, deflection, compat] })
}

/// Band-limited random periodic field: trigonometric in y, polynomial in x3.
pub fn random_trig_field(cell: &Cell, rng: &mut ChaCha8Rng, modes: i32) -> Vec<C64> {
    let mut terms = Vec::new();
    for c in 0..3 {
        for k1 in -modes..=modes {
            for k2 in -modes..=modes {
                for p in 0..3 {
                    let a = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                    terms.push((c, k1, k2, p, a));
                }
            }
        }
    }
    let tau = 2.0 * std::f64::consts::PI;
    cell.mesh().interpolate(|x| {
        let mut v = [ZERO; 3];
        for &(c, k1, k2, p, a) in &terms {
            v[c] += a * C64::from_polar(1.0, tau * (k1 as f64 * x[0] + k2 as f64 * x[1])) * x[2].powi(p);
        }
        v
    })
}

/// Maxima of the Korn ratios over random and eigenvector samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KornReport {
    pub chi: Chi,
    pub max_ratios: [f64; 5],
    pub samples: usize,
    /// Samples skipped because sym grad u vanished.
    pub skipped: usize,
}

/// Korn ratio probe at `chi`: `n_random` band-limited fields (seeded) plus the
/// `n_eigen` lowest eigenvectors of the fibre.
pub fn korn_probe(
    cell: &Cell,
    chi: Chi,
    n_random: usize,
    n_eigen: usize,
    seed: u64,
    conv: KornConvention,
    opts: &EigenOptions,
) -> Result<KornReport, SpectrumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fields: Vec<Vec<C64>> = (0..n_random).map(|_| random_trig_field(cell, &mut rng, 2)).collect();
    if n_eigen > 0 {
        let masks = ParityMasks::new(cell.mesh());
        let rec = fiber_spectrum(cell, &masks, chi, n_eigen, true, opts)?;
        fields.extend(rec.vectors.unwrap_or_default());
    }
    let mut max_ratios = [0.0f64; 5];
    let mut skipped = 0;
    for v in &fields {
        match korn_sample(cell, v, chi, conv) {
            None => skipped += 1,
            Some(s) => {
                for (m, r) in max_ratios.iter_mut().zip(s.ratios) {
                    *m = if r.is_nan() { f64::NAN } else { m.max(r) };
                }
            }
        }
    }
    Ok(KornReport { chi, max_ratios, samples: fields.len(), skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_mesh::CellMesh;
    use crate::material::{ElasticityTensor, MaterialField};

    fn iso_cell(n: usize, n3: usize) -> Cell {
        let a = ElasticityTensor::isotropic(1.0, 1.0).unwrap();
        Cell::new(CellMesh::new(n, n, n3).unwrap(), MaterialField::homogeneous(a))
    }

    #[test]
    fn kernel_at_zero() {
        let cell = iso_cell(3, 2);
        let masks = ParityMasks::new(cell.mesh());
        let r = fiber_spectrum(&cell, &masks, [0.0, 0.0], 5, true, &EigenOptions::default()).unwrap();
        let l4 = r.eigenvalues[3];
        assert!(l4 > 0.1);
        for l in &r.eigenvalues[..3] {
            assert!(*l <= 1e-10 * l4, "{l}");
        }
    }

    #[test]
    fn dense_and_krylov_agree() {
        let cell = iso_cell(3, 4);
        let k = cell.stiffness([0.3, 0.1]);
        let m = cell.mass();
        let dense = lowest_eigenpairs(&k, &m, 6, &EigenOptions::default()).unwrap();
        let opts = EigenOptions { dense_limit: 0, ..Default::default() };
        let kry = lowest_eigenpairs(&k, &m, 6, &opts).unwrap();
        for (a, b) in dense.values.iter().zip(&kry.values) {
            assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()), "{a} {b}");
        }
        assert!(kry.residuals.iter().all(|r| *r <= 1e-10));
    }

    #[test]
    fn parity_split_matches_full_problem() {
        let cell = iso_cell(3, 2);
        let masks = ParityMasks::new(cell.mesh());
        let chi = [0.5, -0.2];
        let split = fiber_spectrum(&cell, &masks, chi, 6, true, &EigenOptions::default()).unwrap();
        let full = lowest_eigenpairs(&cell.stiffness(chi), &cell.mass(), 6, &EigenOptions::default()).unwrap();
        for (a, b) in split.eigenvalues.iter().zip(&full.values) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b));
        }
        let vecs = split.vectors.unwrap();
        for (v, p) in vecs.iter().zip(split.parity.unwrap()) {
            assert!(masks.class_residual(v, p) < 1e-12);
        }
    }

    #[test]
    fn sym_norm_of_bending_profile() {
        let cell = iso_cell(4, 4);
        let t = 0.2;
        let v = cell.mesh().interpolate(|x| [C64::new(0.0, -t * x[2]), ZERO, C64::new(1.0, 0.0)]);
        let s = sym_grad_norm(&cell, &v, [t, 0.0]);
        // x3-linear fields are exact for trilinear elements
        assert!((s - t * t / 12f64.sqrt()).abs() < 1e-12, "{s}");
    }

    #[test]
    fn sym_norm_of_constant() {
        let cell = iso_cell(2, 2);
        let chi = [0.3, 0.4];
        let v = cell.mesh().interpolate(|_| [C64::new(1.0, 0.0), ZERO, ZERO]);
        let s = sym_grad_norm(&cell, &v, chi);
        let t = 0.5;
        let exact = ((t * t + 0.09) / 2.0f64).sqrt();
        assert!((s - exact).abs() < 1e-13);
        let k = korn_sample(&cell, &v, chi, KornConvention::HalfRotation).unwrap();
        assert!(k.ratios.iter().all(|r| r.is_finite()));
    }

    #[test]
    fn kernel_sample_is_skipped() {
        let cell = iso_cell(2, 2);
        let v = cell.mesh().interpolate(|_| [C64::new(1.0, 0.0), ZERO, ZERO]);
        assert!(korn_sample(&cell, &v, [0.0, 0.0], KornConvention::HalfRotation).is_none());
    }

    #[test]
    fn literal_rotation_constant_blows_up_on_bending_profile() {
        let cell = iso_cell(4, 2);
        let mut last = [0.0; 2];
        for (i, t) in [0.1, 0.01].into_iter().enumerate() {
            let v = cell.mesh().interpolate(|x| [C64::new(0.0, -t * x[2]), ZERO, C64::new(1.0, 0.0)]);
            let half = korn_sample(&cell, &v, [t, 0.0], KornConvention::HalfRotation).unwrap();
            let lit = korn_sample(&cell, &v, [t, 0.0], KornConvention::Literal).unwrap();
            assert!(half.ratios[4] < 2.0, "{}", half.ratios[4]);
            last[i] = lit.ratios[4];
        }
        assert!(last[1] > 5.0 * last[0]);
    }
}
