//! Scaled fibre resolvents, ansatz error measurements with |chi|-rate fits,
//! and fibre-wise operator-norm gaps between the true and homogenised
//! resolvents over epsilon sweeps.

use crate::assembly::{chi_norm, profile_vector, Cell, Chi, PointValues, Vec3};
use crate::cell_mesh::Parity;
use crate::cell_problems::{build_ansatz, run_cascade, CellProblemError, CellSolver, Force, Mode, PARITY_TOL};
use crate::dense;
use crate::fit::{self, FitError, PowerFit};
use crate::homogenised::{self, HomogenisedError};
use crate::sparse::{Cholesky, CsrMatrix, LinearSolveError, SymbolicCholesky};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Debug, Error)]
pub enum ResolventError {
    #[error(transparent)]
    Cell(#[from] CellProblemError),
    #[error(transparent)]
    Linear(#[from] LinearSolveError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("quasimomentum must be non-zero")]
    ZeroChi,
    #[error("power iteration stagnated after {iterations} steps (last relative change {change:.3e})")]
    Stagnation { iterations: usize, change: f64 },
    #[error("{0} requires a planar-symmetric material")]
    NotPlanar(Theorem),
    #[error("force violates the parity class of {theorem} (residual {residual:.3e})")]
    Parity { theorem: Theorem, residual: f64 },
    #[error("invalid parameters: {0}")]
    Parameters(String),
}

impl From<HomogenisedError> for ResolventError {
    fn from(e: HomogenisedError) -> Self {
        ResolventError::Cell(e.into())
    }
}

/// Solution of one scaled fibre resolvent problem.
#[derive(Debug, Clone)]
pub struct FiberSolve {
    pub chi: Chi,
    pub mode: Mode,
    pub u: Vec<C64>,
    /// ||B u - b|| / ||b||.
    pub residual: f64,
    /// Class residual of u for the planar modes.
    pub parity_residual: Option<f64>,
}

/// Force point values with the in-plane rescaling of the |chi|^-4 modes.
pub fn scaled_force(cell: &Cell, chi: Chi, force: &Force, mode: Mode) -> Result<PointValues, ResolventError> {
    let g = force.sample(cell)?;
    if !mode.scales_inplane_force() {
        return Ok(g);
    }
    let t = chi_norm(chi);
    Ok(g.into_iter().map(|v| [v[0] / t, v[1] / t, v[2]]).collect())
}

/// Solves `(|chi|^-p K(chi) + M) u = b` with the mode's scaling p and force scaling.
pub fn solve_fiber_resolvent(solver: &CellSolver, chi: Chi, force: &Force, mode: Mode) -> Result<FiberSolve, ResolventError> {
    let t = chi_norm(chi);
    if t == 0.0 {
        return Err(ResolventError::ZeroChi);
    }
    let cell = solver.cell();
    if let Some(p) = mode.parity() {
        if !cell.field().planar_symmetric() {
            return Err(CellProblemError::NotPlanar(mode).into());
        }
        let r = Force::parity_residual(cell, &force.sample(cell)?, p);
        if r > PARITY_TOL {
            return Err(CellProblemError::Parity { mode, residual: r }.into());
        }
    }
    let g = scaled_force(cell, chi, force, mode)?;
    let b = cell.vector_load(&g);
    let s = t.powi(-mode.operator_power());
    let op = shifted_operator(&cell.stiffness(chi), solver.mass(), s);
    let mut u = b.clone();
    let bn = norm(&b);
    if bn > 0.0 {
        Cholesky::new(&op)?.solve_in_place(&mut u);
    }
    let r = op.mul_vec(&u);
    let residual = if bn > 0.0 { norm(&sub(&r, &b)) / bn } else { 0.0 };
    let parity_residual = mode.parity().map(|p| solver.masks().class_residual(&u, p));
    Ok(FiberSolve { chi, mode, u, residual, parity_residual })
}

/// s K + M on the shared pattern.
fn shifted_operator(k: &CsrMatrix<C64>, m: &CsrMatrix<f64>, s: f64) -> CsrMatrix<C64> {
    let mut op = k.clone();
    for (v, mv) in op.val.iter_mut().zip(&m.val) {
        *v = *v * s + *mv;
    }
    op
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn sub(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Componentwise errors: index 0 in-plane (u1, u2 jointly), 1 vertical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentErrors {
    pub l2: [f64; 2],
    pub h1: [f64; 2],
}

/// L2 and H1 norms of (u - U) e_chi, in-plane and vertical separately.
pub fn error_report(cell: &Cell, chi: Chi, u: &[C64], ansatz: &[C64]) -> ComponentErrors {
    let d = sub(u, ansatz);
    let w = cell.mesh().reference().weight;
    let vals = cell.values_at_q(&d);
    let grads = cell.gradients_at_q(&d);
    let mut l2 = [0.0; 2];
    let mut h1 = [0.0; 2];
    for (v, g) in vals.iter().zip(&grads) {
        for c in 0..3 {
            let slot = usize::from(c == 2);
            let a = v[c].norm_sqr();
            let mut b = 0.0;
            for dd in 0..3 {
                let shift = if dd < 2 { C64::new(0.0, chi[dd]) * v[c] } else { ZERO };
                b += (g[c][dd] + shift).norm_sqr();
            }
            l2[slot] += a * w;
            h1[slot] += (a + b) * w;
        }
    }
    ComponentErrors { l2: l2.map(f64::sqrt), h1: h1.map(f64::sqrt) }
}

/// One row of an ansatz-rate study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRow {
    pub mode: Mode,
    pub depth: usize,
    pub chi_mag: f64,
    pub errors: Option<ComponentErrors>,
    pub status: String,
}

/// Fitted H1 slopes per depth: `[depth][in-plane, vertical]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateStudy {
    pub mode: Mode,
    pub rows: Vec<RateRow>,
    pub slopes: Vec<[Option<PowerFit>; 2]>,
    /// max |m - m(f3 odd part removed)| (second-subspace mode only).
    pub f3_sensitivity: Option<f64>,
}

/// Expected H1 slopes `[depth][in-plane, vertical]` of each mode.
pub fn expected_slopes(mode: Mode) -> [[f64; 2]; 2] {
    match mode {
        Mode::FirstSubspace | Mode::GeneralFirst => [[2.0, 1.0], [3.0, 2.0]],
        Mode::SecondSubspace | Mode::GeneralSecond => [[1.0, 1.0], [2.0, 2.0]],
    }
}

/// Ansatz error study along `direction` for the listed magnitudes.
pub fn ansatz_rates(
    solver: &CellSolver,
    force: &Force,
    mode: Mode,
    direction: [f64; 2],
    magnitudes: &[f64],
) -> Result<RateStudy, ResolventError> {
    let dn = chi_norm(direction);
    let per_chi: Vec<(Vec<RateRow>, Option<f64>)> = magnitudes
        .par_iter()
        .map(|&t| {
            let chi = [direction[0] * t / dn, direction[1] * t / dn];
            let row = |depth: usize, errors: Option<ComponentErrors>, status: String| RateRow {
                mode,
                depth,
                chi_mag: t,
                errors,
                status,
            };
            let run = || -> Result<(Vec<ComponentErrors>, Option<f64>), ResolventError> {
                let sol = solve_fiber_resolvent(solver, chi, force, mode)?;
                let bundle = run_cascade(solver, chi, force, mode, 1)?;
                let mut errs = Vec::new();
                for depth in 0..2 {
                    let ans = build_ansatz(solver, &bundle, depth)?;
                    errs.push(error_report(solver.cell(), chi, &sol.u, &ans));
                }
                let sens = if mode == Mode::SecondSubspace {
                    let no_f3 = without_vertical(solver.cell(), force)?;
                    let b2 = run_cascade(solver, chi, &no_f3, mode, 0)?;
                    Some((0..2).map(|a| (bundle.m[a] - b2.m[a]).norm()).fold(0.0, f64::max))
                } else {
                    None
                };
                Ok((errs, sens))
            };
            match run() {
                Ok((errs, sens)) => {
                    (errs.into_iter().enumerate().map(|(d, e)| row(d, Some(e), "ok".into())).collect(), sens)
                }
                Err(e) => ((0..2).map(|d| row(d, None, format!("error: {e}"))).collect(), None),
            }
        })
        .collect();
    let f3_sensitivity = per_chi.iter().filter_map(|p| p.1).reduce(f64::max);
    let rows: Vec<RateRow> = per_chi.into_iter().flat_map(|p| p.0).collect();
    let mut slopes = Vec::new();
    for depth in 0..2 {
        let sel: Vec<&RateRow> = rows.iter().filter(|r| r.depth == depth && r.errors.is_some()).collect();
        let x: Vec<f64> = sel.iter().map(|r| r.chi_mag).collect();
        let fits = [0, 1].map(|c| {
            let y: Vec<f64> = sel.iter().map(|r| r.errors.unwrap().h1[c]).collect();
            fit::loglog(&x, &y, 5, 1.0).ok()
        });
        slopes.push(fits);
    }
    Ok(RateStudy { mode, rows, slopes, f3_sensitivity })
}

/// The force with its vertical component removed, as nodal values.
fn without_vertical(cell: &Cell, force: &Force) -> Result<Force, ResolventError> {
    match force {
        Force::Terms(t) => Ok(Force::Terms(t.iter().filter(|t| t.component != 2).cloned().collect())),
        Force::Nodal(v) => {
            let mut v = v.clone();
            for a in 0..v.len() / 3 {
                v[3 * a + 2] = ZERO;
            }
            let _ = cell;
            Ok(Force::Nodal(v))
        }
    }
}

/// Which norm-resolvent comparison to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    /// Planar-symmetric, bending class, fourth-order plate comparator.
    Bending,
    /// Planar-symmetric, membrane class, second-order comparator.
    Membrane,
    /// General tensor, coupled comparator.
    General,
}

impl Theorem {
    pub const ALL: [Theorem; 3] = [Theorem::Bending, Theorem::Membrane, Theorem::General];

    pub fn name(self) -> &'static str {
        match self {
            Theorem::Bending => "bending",
            Theorem::Membrane => "membrane",
            Theorem::General => "general",
        }
    }

    /// Exponent of the guaranteed epsilon rate for an output component.
    pub fn predicted_rate(self, gamma: f64, delta: f64, component: OutputComponent) -> f64 {
        match (self, component) {
            (Theorem::Bending, OutputComponent::Vertical) => {
                (gamma + 2.0) / 4.0 + ((gamma + 2.0) / 4.0 - delta).min(0.0)
            }
            (Theorem::Bending, _) => (gamma + 2.0) / 2.0 + ((gamma + 2.0) / 4.0 - delta).min(0.0),
            (Theorem::Membrane, _) => (gamma + 2.0) / 2.0,
            (Theorem::General, OutputComponent::Vertical) => gamma / 4.0,
            (Theorem::General, _) => ((gamma + 2.0) / 2.0).min(3.0 * (gamma + 2.0) / 4.0 - 1.0),
        }
    }

    /// Validates (gamma, delta) against the convergence region.
    pub fn check_parameters(self, gamma: f64, delta: f64) -> Result<(), ResolventError> {
        let ok = match self {
            Theorem::Bending => gamma + 2.0 > delta && delta >= 0.0 && gamma > -2.0,
            Theorem::Membrane => gamma > -2.0,
            Theorem::General => gamma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ResolventError::Parameters(format!("gamma = {gamma}, delta = {delta} outside the range of {self}")))
        }
    }

    fn parity(self) -> Option<Parity> {
        match self {
            Theorem::Bending => Some(Parity::First),
            Theorem::Membrane => Some(Parity::Second),
            Theorem::General => None,
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Theorem {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Theorem::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| format!("unknown theorem '{s}'"))
    }
}

/// Output components on which the gap is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputComponent {
    InPlane,
    Vertical,
    All,
}

impl OutputComponent {
    pub fn name(self) -> &'static str {
        match self {
            OutputComponent::InPlane => "in-plane",
            OutputComponent::Vertical => "vertical",
            OutputComponent::All => "all",
        }
    }

    fn mask(self) -> [f64; 3] {
        match self {
            OutputComponent::InPlane => [1.0, 1.0, 0.0],
            OutputComponent::Vertical => [0.0, 0.0, 1.0],
            OutputComponent::All => [1.0; 3],
        }
    }
}

impl FromStr for OutputComponent {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [OutputComponent::InPlane, OutputComponent::Vertical, OutputComponent::All]
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown component '{s}'"))
    }
}

/// Theorem setup shared by all fibres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    pub theorem: Theorem,
    pub gamma: f64,
    pub delta: f64,
    pub component: OutputComponent,
    /// Relative tolerance of the power iteration.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl GapSpec {
    pub fn new(theorem: Theorem, gamma: f64, delta: f64, component: OutputComponent) -> Self {
        Self { theorem, gamma, delta, component, tol: 1e-3, max_iter: 500, seed: 11 }
    }
}

/// Per-material context for gap computations.
pub struct GapContext<'a> {
    solver: &'a CellSolver,
    symbolic: SymbolicCholesky,
}

impl<'a> GapContext<'a> {
    pub fn new(solver: &'a CellSolver) -> Result<Self, ResolventError> {
        let symbolic = SymbolicCholesky::new(solver.mass())?;
        Ok(Self { solver, symbolic })
    }

    pub fn solver(&self) -> &CellSolver {
        self.solver
    }

    /// Fibre data independent of epsilon.
    pub fn fiber(&self, chi: Chi, theorem: Theorem) -> Result<FiberData, ResolventError> {
        let t = chi_norm(chi);
        if t == 0.0 {
            return Err(ResolventError::ZeroChi);
        }
        let cell = self.solver.cell();
        if theorem.parity().is_some() && !cell.field().planar_symmetric() {
            return Err(ResolventError::NotPlanar(theorem));
        }
        let (symbol, _) = homogenised::compute_a_hom(self.solver, chi)?;
        let mesh = cell.mesh();
        let e = |c: usize| {
            let mut m = [ZERO; 3];
            m[c] = ONE;
            m
        };
        let (phi, amps): (Vec<Vec<C64>>, Vec<usize>) = match theorem {
            Theorem::Bending => (vec![mesh.interpolate(|x| profile_vector(chi, &e(2), x[2]))], vec![2]),
            Theorem::Membrane => (vec![mesh.interpolate(|_| e(0)), mesh.interpolate(|_| e(1))], vec![0, 1]),
            Theorem::General => (
                (0..3).map(|c| mesh.interpolate(|x| profile_vector(chi, &e(c), x[2]))).collect(),
                vec![0, 1, 2],
            ),
        };
        let a: Vec<Vec<C64>> = amps.iter().map(|&k| amps.iter().map(|&j| symbol.a_hom[k][j]).collect()).collect();
        let mphi = phi.iter().map(|p| self.solver.mass().mul_vec(p)).collect();
        Ok(FiberData { chi, k: cell.stiffness(chi), phi, mphi, a_hom: a })
    }

    /// ||P (T - C) W Pi|| in the M-norm for one fibre and epsilon.
    pub fn gap(&self, fiber: &FiberData, eps: f64, spec: &GapSpec) -> Result<f64, ResolventError> {
        let op = self.operator(fiber, eps, spec)?;
        op.norm(spec)
    }

    /// ||P (T - C) W f||_M / ||f||_M for one force (parity-checked).
    pub fn force_gap(&self, fiber: &FiberData, eps: f64, spec: &GapSpec, force: &Force) -> Result<f64, ResolventError> {
        let cell = self.solver.cell();
        if let Some(p) = spec.theorem.parity() {
            let r = Force::parity_residual(cell, &force.sample(cell)?, p);
            if r > PARITY_TOL {
                return Err(ResolventError::Parity { theorem: spec.theorem, residual: r });
            }
        }
        let f = match force {
            Force::Nodal(v) => v.clone(),
            Force::Terms(_) => {
                // L2 projection of the sampled force onto the nodal space
                let b = cell.vector_load(&force.sample(cell)?);
                let n = b.len();
                let mut cols: Vec<f64> = b.iter().map(|z| z.re).chain(b.iter().map(|z| z.im)).collect();
                Cholesky::new(self.solver.mass())?.solve_many_in_place(&mut cols, 2);
                (0..n).map(|i| C64::new(cols[i], cols[n + i])).collect()
            }
        };
        let op = self.operator(fiber, eps, spec)?;
        let gf = op.apply(&f);
        Ok(op.m_norm(&gf) / op.m_norm(&f))
    }

    fn operator<'f>(&'f self, fiber: &'f FiberData, eps: f64, spec: &GapSpec) -> Result<GapOperator<'f>, ResolventError> {
        spec.theorem.check_parameters(spec.gamma, spec.delta)?;
        if eps <= 0.0 {
            return Err(ResolventError::Parameters(format!("eps = {eps} must be positive")));
        }
        let s = eps.powf(-spec.gamma - 2.0);
        let b = shifted_operator(&fiber.k, self.solver.mass(), s);
        let chol = self.symbolic.factor(&b)?;
        let n = fiber.a_hom.len();
        let h: Vec<Vec<C64>> = (0..n)
            .map(|i| (0..n).map(|j| fiber.a_hom[i][j] * s + if i == j { ONE } else { ZERO }).collect())
            .collect();
        let wd = if spec.theorem == Theorem::Bending { eps.powf(-spec.delta) } else { 1.0 };
        Ok(GapOperator {
            ctx: self,
            fiber,
            chol,
            h,
            w: [wd, wd, 1.0],
            p: spec.component.mask(),
            parity: spec.theorem.parity(),
        })
    }
}

/// Fibre operators and comparator ingredients at one chi.
pub struct FiberData {
    pub chi: Chi,
    k: CsrMatrix<C64>,
    phi: Vec<Vec<C64>>,
    mphi: Vec<Vec<C64>>,
    a_hom: Vec<Vec<C64>>,
}

struct GapOperator<'f> {
    ctx: &'f GapContext<'f>,
    fiber: &'f FiberData,
    chol: Cholesky<C64>,
    h: Vec<Vec<C64>>,
    w: [f64; 3],
    p: [f64; 3],
    parity: Option<Parity>,
}

impl GapOperator<'_> {
    fn mass(&self) -> &CsrMatrix<f64> {
        self.ctx.solver.mass()
    }

    fn m_norm(&self, v: &[C64]) -> f64 {
        self.ctx.solver.l2_norm(v)
    }

    fn scale(v: &mut [C64], d: [f64; 3]) {
        for (i, x) in v.iter_mut().enumerate() {
            *x *= d[i % 3];
        }
    }

    fn class(&self, v: Vec<C64>) -> Vec<C64> {
        match self.parity {
            Some(p) => self.ctx.solver.masks().project(&v, p),
            None => v,
        }
    }

    /// (T - C) x = B^-1 M x - Phi H^-1 Phi^H M x.
    fn difference(&self, x: &[C64]) -> Vec<C64> {
        let mx = self.mass().mul_vec(x);
        let mut t = mx.clone();
        self.chol.solve_in_place(&mut t);
        let r: Vec<C64> = self.fiber.mphi.iter().map(|mp| mp.iter().zip(x).map(|(a, b)| a.conj() * b).sum()).collect();
        let m = dense::solve(&self.h, &r);
        for (phi, mk) in self.fiber.phi.iter().zip(&m) {
            for (ti, pi) in t.iter_mut().zip(phi) {
                *ti -= mk * pi;
            }
        }
        t
    }

    /// G x = P (T - C) W Pi x.
    fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = self.class(x.to_vec());
        Self::scale(&mut y, self.w);
        let mut z = self.difference(&y);
        Self::scale(&mut z, self.p);
        z
    }

    /// G* y = Pi W (T - C) P y (T, C and P are M-self-adjoint).
    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        let mut x = y.to_vec();
        Self::scale(&mut x, self.p);
        let mut z = self.difference(&x);
        Self::scale(&mut z, self.w);
        self.class(z)
    }

    /// Largest singular value by power iteration on G*G.
    fn norm(&self, spec: &GapSpec) -> Result<f64, ResolventError> {
        let n = self.fiber.k.n;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut x = self.class((0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect());
        let xn = self.m_norm(&x);
        x.iter_mut().for_each(|v| *v /= xn);
        let mut sigma = 0.0f64;
        let mut change = f64::INFINITY;
        for it in 0..spec.max_iter {
            let gx = self.apply(&x);
            let s_new = self.m_norm(&gx);
            if s_new == 0.0 {
                return Ok(0.0);
            }
            let mut y = self.apply_adjoint(&gx);
            let yn = self.m_norm(&y);
            if yn == 0.0 {
                return Ok(s_new);
            }
            y.iter_mut().for_each(|v| *v /= yn);
            x = y;
            change = (s_new - sigma).abs() / s_new;
            sigma = s_new;
            if it > 1 && change < spec.tol {
                return Ok(sigma);
            }
        }
        if change < spec.tol {
            Ok(sigma)
        } else {
            Err(ResolventError::Stagnation { iterations: spec.max_iter, change })
        }
    }
}

/// Logarithmic shells times equally spaced directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChiGrid {
    pub r_min: f64,
    pub r_max: f64,
    pub shells: usize,
    pub directions: usize,
    /// Magnitudes per direction in the refinement pass (0 disables it).
    pub refine: usize,
}

impl Default for ChiGrid {
    fn default() -> Self {
        Self { r_min: 1e-3, r_max: 3.0, shells: 8, directions: 8, refine: 6 }
    }
}

impl ChiGrid {
    pub fn validate(&self) -> Result<(), ResolventError> {
        if self.shells == 0 || self.directions == 0 || !(self.r_min > 0.0) || self.r_max < self.r_min {
            return Err(ResolventError::Parameters("empty or invalid chi grid".into()));
        }
        if self.r_max > std::f64::consts::PI {
            return Err(ResolventError::Parameters("chi grid leaves the Brillouin zone".into()));
        }
        Ok(())
    }

    fn direction(&self, k: usize) -> [f64; 2] {
        let a = std::f64::consts::PI * 2.0 * k as f64 / self.directions as f64 + 0.1;
        [a.cos(), a.sin()]
    }

    pub fn points(&self) -> Vec<Chi> {
        let radii = fit::logspace(self.r_min, self.r_max, self.shells);
        let mut out = Vec::new();
        for r in radii {
            for k in 0..self.directions {
                let d = self.direction(k);
                out.push([d[0] * r, d[1] * r]);
            }
        }
        out
    }

    /// Refinement points around a maximiser magnitude.
    fn refinement(&self, r: f64) -> Vec<Chi> {
        if self.refine == 0 {
            return Vec::new();
        }
        let ratio = (self.r_max / self.r_min).powf(1.0 / (self.shells.max(2) - 1) as f64);
        let lo = (r / ratio).max(self.r_min);
        let hi = (r * ratio).min(self.r_max);
        let mut out = Vec::new();
        for rr in fit::logspace(lo, hi, self.refine) {
            for k in 0..self.directions {
                let d = self.direction(k);
                out.push([d[0] * rr, d[1] * rr]);
            }
        }
        out
    }
}

/// Supremum of the fibre gaps for one epsilon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremRow {
    pub theorem: Theorem,
    pub component: OutputComponent,
    pub gamma: f64,
    pub delta: f64,
    pub eps: f64,
    pub sup_gap: f64,
    pub argmax_chi_mag: f64,
    pub status: String,
}

/// Result of an epsilon sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremSweep {
    pub rows: Vec<TheoremRow>,
    pub fit: Option<PowerFit>,
    pub predicted: f64,
    /// Slope of log(argmax |chi|) against log eps (diagnostic).
    pub argmax_slope: Option<f64>,
}

/// Max over the chi grid of the fibre gap, for each epsilon, and the
/// epsilon-slope of the maxima.
pub fn theorem_sweep(solver: &CellSolver, spec: &GapSpec, eps_list: &[f64], grid: &ChiGrid) -> Result<TheoremSweep, ResolventError> {
    grid.validate()?;
    spec.theorem.check_parameters(spec.gamma, spec.delta)?;
    if eps_list.is_empty() {
        return Err(ResolventError::Parameters("empty epsilon list".into()));
    }
    let ctx = GapContext::new(solver)?;
    let eval = |points: &[Chi]| -> Vec<Result<Vec<f64>, String>> {
        points
            .par_iter()
            .map(|&chi| {
                let fiber = ctx.fiber(chi, spec.theorem).map_err(|e| e.to_string())?;
                eps_list.iter().map(|&e| ctx.gap(&fiber, e, spec).map_err(|e| e.to_string())).collect()
            })
            .collect()
    };
    let coarse = grid.points();
    let coarse_gaps = eval(&coarse);
    let mut best: Vec<(f64, f64)> = vec![(f64::NEG_INFINITY, 0.0); eps_list.len()];
    let mut failures = vec![0usize; eps_list.len()];
    let absorb = |points: &[Chi], gaps: &[Result<Vec<f64>, String>], best: &mut Vec<(f64, f64)>, failures: &mut Vec<usize>| {
        for (chi, g) in points.iter().zip(gaps) {
            match g {
                Ok(g) => {
                    for (i, v) in g.iter().enumerate() {
                        if *v > best[i].0 {
                            best[i] = (*v, chi_norm(*chi));
                        }
                    }
                }
                Err(_) => failures.iter_mut().for_each(|f| *f += 1),
            }
        }
    };
    absorb(&coarse, &coarse_gaps, &mut best, &mut failures);
    // refinement around each epsilon's maximiser (deduplicated magnitudes)
    let mut centres: Vec<f64> = best.iter().map(|b| b.1).filter(|r| *r > 0.0).collect();
    centres.sort_by(f64::total_cmp);
    centres.dedup();
    let refine: Vec<Chi> = centres.iter().flat_map(|&r| grid.refinement(r)).collect();
    let refine_gaps = eval(&refine);
    absorb(&refine, &refine_gaps, &mut best, &mut failures);
    let rows: Vec<TheoremRow> = eps_list
        .iter()
        .zip(&best)
        .zip(&failures)
        .map(|((&eps, &(g, r)), &fails)| TheoremRow {
            theorem: spec.theorem,
            component: spec.component,
            gamma: spec.gamma,
            delta: spec.delta,
            eps,
            sup_gap: if g.is_finite() { g } else { f64::NAN },
            argmax_chi_mag: r,
            status: if fails == 0 { "ok".into() } else { format!("{fails} fibre failures") },
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.sup_gap).collect();
    let fit = fit::loglog(&x, &y, 2, 0.0).ok();
    let z: Vec<f64> = rows.iter().map(|r| r.argmax_chi_mag).collect();
    let argmax_slope = fit::loglog(&x, &z, 2, 0.0).ok().map(|f| f.slope);
    Ok(TheoremSweep { rows, fit, predicted: spec.theorem.predicted_rate(spec.gamma, spec.delta, spec.component), argmax_slope })
}

/// First-subspace a priori quantities: ||sym grad u|| / (|chi|^2 ||f||) for a
/// first-subspace solve, and ||u|| / ||f|| for a second-subspace solve.
pub fn a_priori_constant(solver: &CellSolver, sol: &FiberSolve, force: &Force) -> Result<f64, ResolventError> {
    let cell = solver.cell();
    let g = force.sample(cell)?;
    let fnorm = cell.l2_pairing(&g, &g).re.sqrt();
    if fnorm == 0.0 {
        return Ok(0.0);
    }
    let t = chi_norm(sol.chi);
    Ok(match sol.mode {
        Mode::FirstSubspace | Mode::GeneralFirst => {
            crate::fiber_spectrum::sym_grad_norm(cell, &sol.u, sol.chi) / (t * t * fnorm)
        }
        _ => solver.l2_norm(&sol.u) / fnorm,
    })
}

/// Random unit complex amplitude (for tests and probes).
pub fn random_amplitude(rng: &mut ChaCha8Rng) -> Vec3 {
    [0, 1, 2].map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_mesh::CellMesh;
    use crate::material::{ElasticityTensor, MaterialField};

    fn iso_solver(n: usize, n3: usize) -> CellSolver {
        let a = ElasticityTensor::isotropic(1.0, 1.0).unwrap();
        CellSolver::new(Cell::new(CellMesh::new(n, n, n3).unwrap(), MaterialField::homogeneous(a))).unwrap()
    }

    #[test]
    fn zero_force_gives_zero() {
        let s = iso_solver(2, 2);
        let f = Force::Nodal(vec![ZERO; s.n_dofs()]);
        let sol = solve_fiber_resolvent(&s, [0.2, 0.0], &f, Mode::GeneralSecond).unwrap();
        assert!(sol.u.iter().all(|x| *x == ZERO));
    }

    #[test]
    fn error_report_identities() {
        let s = iso_solver(3, 2);
        let cell = s.cell();
        let u = cell.mesh().interpolate(|x| [C64::new(x[0], 0.0), C64::new(0.0, x[2]), C64::new(x[1], 1.0)]);
        let zero = error_report(cell, [0.1, 0.2], &u, &u);
        assert_eq!(zero.l2, [0.0, 0.0]);
        let c = C64::new(0.3, -0.4);
        let shifted: Vec<C64> = u.iter().enumerate().map(|(i, x)| if i % 3 == 2 { x + c } else { *x }).collect();
        let e = error_report(cell, [0.1, 0.2], &u, &shifted);
        assert!((e.l2[1] - 0.5).abs() < 1e-14);
        assert!(e.l2[0] == 0.0);
        assert!(e.h1[1] >= e.l2[1]);
    }

    #[test]
    fn wrong_parity_force_is_rejected() {
        let s = iso_solver(2, 2);
        let ctx = GapContext::new(&s).unwrap();
        let fib = ctx.fiber([0.2, 0.1], Theorem::Bending).unwrap();
        let spec = GapSpec::new(Theorem::Bending, 2.0, 1.0, OutputComponent::Vertical);
        let f = Force::preset("inplane_const").unwrap();
        assert!(matches!(ctx.force_gap(&fib, 0.1, &spec, &f), Err(ResolventError::Parity { .. })));
    }

    #[test]
    fn membrane_gap_vanishes_as_eps_decreases() {
        let s = iso_solver(3, 2);
        let ctx = GapContext::new(&s).unwrap();
        let fib = ctx.fiber([0.3, 0.2], Theorem::Membrane).unwrap();
        let spec = GapSpec::new(Theorem::Membrane, 0.0, 0.0, OutputComponent::All);
        let g: Vec<f64> = [0.1, 0.01, 0.001].iter().map(|&e| ctx.gap(&fib, e, &spec).unwrap()).collect();
        assert!(g[1] < g[0] && g[2] < g[1], "{g:?}");
        assert!(g[2] < 1e-3);
    }

    #[test]
    fn parameter_ranges() {
        assert!(Theorem::General.check_parameters(0.0, 0.0).is_err());
        assert!(Theorem::Bending.check_parameters(2.0, 1.0).is_ok());
        assert!(Theorem::Membrane.check_parameters(-2.5, 0.0).is_err());
        assert_eq!(Theorem::Bending.predicted_rate(2.0, 1.0, OutputComponent::Vertical), 1.0);
        assert_eq!(Theorem::Bending.predicted_rate(2.0, 1.0, OutputComponent::InPlane), 2.0);
        assert_eq!(Theorem::General.predicted_rate(1.0, 0.0, OutputComponent::Vertical), 0.25);
    }
}
