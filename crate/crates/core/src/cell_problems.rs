//! Zero-mean periodic corrector problems and the corrector cascades of the
//! four asymptotic modes (two parity subspaces of a planar-symmetric plate,
//! two scalings of a general one).
//!
//! Every corrector solves `(sym grad)* A sym grad v = b` with `int_Q v = 0`.
//! The constraint multipliers have a closed form (the kernel is the
//! constants and `int 1 = 1`), so the solve is a pinned real Cholesky solve
//! followed by removal of the mean; see [`CellSolver::solve_constrained`].

use crate::assembly::{chi_norm, profile_vector, x_sym3, Cell, Chi, PointValues, StrainField, TestOp, Vec3};
use crate::cell_mesh::{Parity, ParityMasks};
use crate::homogenised::{self, FiberSymbol, ForceMoments, HomogenisedError, MassForm};
use crate::sparse::{Cholesky, CsrMatrix, LinearSolveError};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Default refusal threshold for the relative solvability residual.
pub const DEFAULT_SOLVABILITY_TOL: f64 = 1e-8;
/// Parity tolerance for declared force classes.
pub const PARITY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CellProblemError {
    #[error("right-hand side is not orthogonal to constants: relative residual {residual:.3e} in component {component} exceeds {tol:.1e}")]
    Solvability { component: usize, residual: f64, tol: f64 },
    #[error(transparent)]
    Linear(#[from] LinearSolveError),
    #[error("force is not in the parity class required by mode {mode} (residual {residual:.3e})")]
    Parity { mode: Mode, residual: f64 },
    #[error("mode {0} requires a planar-symmetric material")]
    NotPlanar(Mode),
    #[error("quasimomentum must be non-zero")]
    ZeroChi,
    #[error("cascade depth must be 0, 1 or 2 (got {0})")]
    Depth(usize),
    #[error("unknown force preset '{0}'")]
    UnknownPreset(String),
    #[error("nodal force has {got} entries, mesh needs {expected}")]
    ForceLength { got: usize, expected: usize },
    #[error("amplitude solve failed: {0}")]
    Amplitude(String),
}

impl From<HomogenisedError> for CellProblemError {
    fn from(e: HomogenisedError) -> Self {
        match e {
            HomogenisedError::Cell(c) => c,
            HomogenisedError::ZeroChi => CellProblemError::ZeroChi,
        }
    }
}

/// The four asymptotic modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Planar-symmetric, bending class; operator scaled by |chi|^-4.
    FirstSubspace,
    /// Planar-symmetric, membrane class; operator scaled by |chi|^-2.
    SecondSubspace,
    /// General tensor, |chi|^-4 scaling.
    GeneralFirst,
    /// General tensor, |chi|^-2 scaling.
    GeneralSecond,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::FirstSubspace, Mode::SecondSubspace, Mode::GeneralFirst, Mode::GeneralSecond];

    pub fn name(self) -> &'static str {
        match self {
            Mode::FirstSubspace => "first-subspace",
            Mode::SecondSubspace => "second-subspace",
            Mode::GeneralFirst => "general-first",
            Mode::GeneralSecond => "general-second",
        }
    }

    /// Power p of the operator scaling |chi|^-p.
    pub fn operator_power(self) -> i32 {
        match self {
            Mode::FirstSubspace | Mode::GeneralFirst => 4,
            Mode::SecondSubspace | Mode::GeneralSecond => 2,
        }
    }

    /// Whether in-plane force components carry the extra |chi|^-1.
    pub fn scales_inplane_force(self) -> bool {
        self.operator_power() == 4
    }

    /// Required parity class of the force, if any.
    pub fn parity(self) -> Option<Parity> {
        match self {
            Mode::FirstSubspace => Some(Parity::First),
            Mode::SecondSubspace => Some(Parity::Second),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown mode '{s}'"))
    }
}

/// A zero-mean corrector with its residual diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorField {
    pub values: Vec<C64>,
    /// ||K0 v - b'|| / ||b||.
    pub solver_residual: f64,
    /// max_j |int v_j| / ||v||_{L2}.
    pub mean_residual: f64,
    /// |<b, e_j>| / (||b|| ||e_j||) per component.
    pub solvability: [f64; 3],
}

impl CorrectorField {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![ZERO; n], solver_residual: 0.0, mean_residual: 0.0, solvability: [0.0; 3] }
    }

    pub fn max_solvability(&self) -> f64 {
        self.solvability.iter().cloned().fold(0.0, f64::max)
    }
}

/// Cell, mass, the pinned periodic stiffness factor and parity bookkeeping,
/// built once per (mesh, material).
pub struct CellSolver {
    cell: Cell,
    mass: CsrMatrix<f64>,
    k0: CsrMatrix<f64>,
    chol: Cholesky<f64>,
    kept: Vec<usize>,
    /// M e_c restricted to one component (row sums of the scalar mass).
    lumped: Vec<f64>,
    masks: ParityMasks,
    tol_solv: f64,
    /// Roundoff level of a load assembled from `K0`; constant components
    /// below it are not counted as solvability violations.
    rhs_floor: f64,
}

impl CellSolver {
    pub fn new(cell: Cell) -> Result<Self, CellProblemError> {
        let mass = cell.mass();
        let k0 = cell.stiffness_real();
        let (reduced, kept) = k0.without(&[0, 1, 2]);
        let chol = Cholesky::new(&reduced)?;
        let nn = cell.mesh().n_nodes();
        let mut lumped = vec![0.0; nn];
        for (a, l) in lumped.iter_mut().enumerate() {
            let r = 3 * a;
            *l = (mass.row_ptr[r]..mass.row_ptr[r + 1]).map(|p| mass.val[p]).sum();
        }
        let masks = ParityMasks::new(cell.mesh());
        let kmax = k0.val.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rhs_floor = 2.0 * f64::EPSILON * kmax * ((3 * nn) as f64).sqrt();
        Ok(Self { cell, mass, k0, chol, kept, lumped, masks, tol_solv: DEFAULT_SOLVABILITY_TOL, rhs_floor })
    }

    pub fn with_solvability_tol(mut self, tol: f64) -> Self {
        self.tol_solv = tol;
        self
    }

    pub fn cell(&self) -> &Cell {
        &self.cell
    }

    pub fn mass(&self) -> &CsrMatrix<f64> {
        &self.mass
    }

    pub fn k0(&self) -> &CsrMatrix<f64> {
        &self.k0
    }

    pub fn masks(&self) -> &ParityMasks {
        &self.masks
    }

    pub fn n_dofs(&self) -> usize {
        self.cell.n_dofs()
    }

    /// int_Q v_c for a nodal field.
    pub fn mean(&self, v: &[C64]) -> Vec3 {
        let mut s = [ZERO; 3];
        for (a, l) in self.lumped.iter().enumerate() {
            for c in 0..3 {
                s[c] += v[3 * a + c] * *l;
            }
        }
        s
    }

    /// Nodal field of the constant vector c.
    pub fn constant(&self, c: Vec3) -> Vec<C64> {
        let mut v = vec![ZERO; self.n_dofs()];
        for a in 0..self.lumped.len() {
            v[3 * a..3 * a + 3].copy_from_slice(&c);
        }
        v
    }

    /// Relative solvability residual |<b, e_j>| / (||b|| sqrt(n_nodes)). Sums
    /// below the roundoff level of `K0` count as zero, so a load that vanishes
    /// exactly is not judged by its own noise.
    pub fn solvability_residual(&self, rhs: &[C64]) -> [f64; 3] {
        let norm = l2(rhs);
        if norm == 0.0 {
            return [0.0; 3];
        }
        let mut s = [ZERO; 3];
        for a in 0..self.lumped.len() {
            for c in 0..3 {
                s[c] += rhs[3 * a + c];
            }
        }
        let scale = norm * (self.lumped.len() as f64).sqrt();
        s.map(|v| if v.norm() <= self.rhs_floor { 0.0 } else { v.norm() / scale })
    }

    /// Solves `K0 v = rhs` with `int v = 0`; refuses right-hand sides that
    /// are not orthogonal to constants.
    pub fn solve_constrained(&self, rhs: &[C64]) -> Result<CorrectorField, CellProblemError> {
        let n = rhs.len();
        let norm = l2(rhs);
        if norm == 0.0 {
            return Ok(CorrectorField::zeros(n));
        }
        let solv = self.solvability_residual(rhs);
        for (c, &r) in solv.iter().enumerate() {
            if r > self.tol_solv {
                return Err(CellProblemError::Solvability { component: c, residual: r, tol: self.tol_solv });
            }
        }
        // Multipliers lambda_c = <b, e_c> (the Gram matrix of e_c under M is I).
        let mut lam = [ZERO; 3];
        for a in 0..self.lumped.len() {
            for c in 0..3 {
                lam[c] += rhs[3 * a + c];
            }
        }
        let mut b = rhs.to_vec();
        for (a, l) in self.lumped.iter().enumerate() {
            for c in 0..3 {
                b[3 * a + c] -= lam[c] * *l;
            }
        }
        let k = self.kept.len();
        let mut buf = vec![0.0; 2 * k];
        for (r, &d) in self.kept.iter().enumerate() {
            buf[r] = b[d].re;
            buf[k + r] = b[d].im;
        }
        self.chol.solve_many_in_place(&mut buf, 2);
        let mut v = vec![ZERO; n];
        for (r, &d) in self.kept.iter().enumerate() {
            v[d] = C64::new(buf[r], buf[k + r]);
        }
        let mean = self.mean(&v);
        for a in 0..self.lumped.len() {
            for c in 0..3 {
                v[3 * a + c] -= mean[c];
            }
        }
        let kv = self.k0.mul_vec(&v);
        let res: f64 = kv.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let mean = self.mean(&v);
        let vn = self.l2_norm(&v);
        let mean_residual = if vn > 0.0 { mean.iter().map(|m| m.norm()).fold(0.0, f64::max) / vn } else { 0.0 };
        Ok(CorrectorField { values: v, solver_residual: res / norm, mean_residual, solvability: solv })
    }

    /// Corrector for the load `coef (sym grad)* A E`.
    pub fn solve_strain_corrector(&self, e: &StrainField, coef: C64) -> Result<CorrectorField, CellProblemError> {
        let b = self.cell.strain_load(e, TestOp::SymGrad, [0.0, 0.0], coef);
        self.solve_constrained(&b)
    }

    /// ||v||_{L2(Q)} via the mass matrix.
    pub fn l2_norm(&self, v: &[C64]) -> f64 {
        let mv = self.mass.mul_vec(v);
        v.iter().zip(&mv).map(|(a, b)| (a.conj() * b).re).sum::<f64>().max(0.0).sqrt()
    }

    /// N_m: `(sym grad)* A sym grad N = -(sym grad)* A (Xi - i x3 Upsilon)`.
    pub fn solve_n(&self, chi: Chi, m: &Vec3) -> Result<CorrectorField, CellProblemError> {
        let e = StrainField::profile(self.cell.mesh(), chi, m);
        self.solve_strain_corrector(&e, -ONE)
    }

    /// N_m together with its parity split for planar-symmetric materials.
    pub fn solve_n_split(&self, chi: Chi, m: &Vec3) -> Result<NSplit, CellProblemError> {
        let total = self.solve_n(chi, m)?;
        if !self.cell.field().planar_symmetric() {
            return Ok(NSplit { total, bending: None, membrane: None, parity_residual: None });
        }
        let bending = self.solve_n(chi, &[ZERO, ZERO, m[2]])?;
        let membrane = self.solve_n(chi, &[m[0], m[1], ZERO])?;
        let r = self
            .masks
            .class_residual(&bending.values, Parity::First)
            .max(self.masks.class_residual(&membrane.values, Parity::Second));
        Ok(NSplit { total, bending: Some(bending), membrane: Some(membrane), parity_residual: Some(r) })
    }
}

fn l2(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// N_m and its planar split N^(1) (bending class) + N^(2) (membrane class).
#[derive(Debug, Clone)]
pub struct NSplit {
    pub total: CorrectorField,
    pub bending: Option<CorrectorField>,
    pub membrane: Option<CorrectorField>,
    /// Largest class residual of the two parts.
    pub parity_residual: Option<f64>,
}

/// In-plane dependence of a force term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wave {
    One,
    /// cos(2 pi (k1 y1 + k2 y2)).
    Cos([i32; 2]),
    /// sin(2 pi (k1 y1 + k2 y2)).
    Sin([i32; 2]),
}

impl Wave {
    fn eval(self, y: [f64; 2]) -> f64 {
        let tau = 2.0 * std::f64::consts::PI;
        match self {
            Wave::One => 1.0,
            Wave::Cos(k) => (tau * (k[0] as f64 * y[0] + k[1] as f64 * y[1])).cos(),
            Wave::Sin(k) => (tau * (k[0] as f64 * y[0] + k[1] as f64 * y[1])).sin(),
        }
    }
}

/// One closed-form term `coef * x3^power * wave(y)` in component `component`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceTerm {
    pub component: usize,
    pub coef: f64,
    pub x3_power: u32,
    pub wave: Wave,
}

/// Fibre force density, given by its periodic part.
#[derive(Debug, Clone, PartialEq)]
pub enum Force {
    Terms(Vec<ForceTerm>),
    /// Nodal values, interpolated to quadrature points.
    Nodal(Vec<C64>),
}

impl Force {
    pub fn term(component: usize, coef: f64, x3_power: u32, wave: Wave) -> ForceTerm {
        ForceTerm { component, coef, x3_power, wave }
    }

    /// Named closed-form presets.
    pub fn preset(name: &str) -> Result<Force, CellProblemError> {
        use Wave::*;
        let t = Force::term;
        let terms = match name {
            "vertical_const" => vec![t(2, 1.0, 0, One)],
            "inplane_const" => vec![t(0, 1.0, 0, One)],
            "inplane_x3" => vec![t(0, 1.0, 1, One)],
            "vertical_x3" => vec![t(2, 1.0, 1, One)],
            "vertical_x3sq" => vec![t(2, 1.0, 2, One)],
            // bending class: in-plane odd, vertical even
            "first_generic" => vec![
                t(0, 1.0, 1, One),
                t(0, 0.5, 1, Cos([1, 0])),
                t(1, -0.7, 1, Sin([0, 1])),
                t(1, 0.3, 3, One),
                t(2, 1.0, 0, One),
                t(2, 0.6, 2, Cos([1, 1])),
                t(2, 0.4, 0, Sin([1, 0])),
            ],
            // membrane class: in-plane even, vertical odd
            "second_generic" => vec![
                t(0, 1.0, 0, One),
                t(0, 0.4, 0, Cos([1, 0])),
                t(1, 0.5, 0, One),
                t(1, 0.8, 2, Sin([0, 1])),
                t(2, 0.6, 1, One),
                t(2, 0.3, 1, Cos([0, 1])),
            ],
            "generic" => vec![
                t(0, 1.0, 0, One),
                t(0, 0.7, 1, Cos([1, 0])),
                t(1, -0.5, 0, Sin([1, 1])),
                t(1, 0.8, 1, One),
                t(2, 1.0, 0, One),
                t(2, 0.5, 1, Sin([0, 1])),
                t(2, 0.3, 2, One),
            ],
            // small means, dominated by cell-scale oscillation
            "first_oscillating" => vec![
                t(2, 0.05, 0, One),
                t(0, 1.0, 1, Cos([1, 0])),
                t(1, 1.0, 1, Sin([0, 1])),
                t(2, 1.0, 0, Sin([1, 1])),
            ],
            "second_oscillating" => vec![
                t(0, 0.05, 0, One),
                t(0, 1.0, 0, Cos([1, 0])),
                t(1, 1.0, 0, Sin([0, 1])),
                t(2, 1.0, 1, Sin([1, 1])),
            ],
            "oscillating" => vec![
                t(0, 0.05, 0, One),
                t(2, 0.05, 0, One),
                t(0, 1.0, 1, Cos([1, 0])),
                t(1, 1.0, 0, Sin([0, 1])),
                t(1, 0.8, 1, Sin([0, 1])),
                t(2, 1.0, 0, Sin([1, 1])),
                t(2, 0.7, 1, Cos([1, 0])),
            ],
            _ => return Err(CellProblemError::UnknownPreset(name.to_string())),
        };
        Ok(Force::Terms(terms))
    }

    pub const PRESETS: [&'static str; 11] = [
        "vertical_const",
        "inplane_const",
        "inplane_x3",
        "vertical_x3",
        "vertical_x3sq",
        "first_generic",
        "second_generic",
        "generic",
        "first_oscillating",
        "second_oscillating",
        "oscillating",
    ];

    /// Values at the quadrature points of the cell.
    pub fn sample(&self, cell: &Cell) -> Result<PointValues, CellProblemError> {
        match self {
            Force::Terms(terms) => Ok(cell.sample_points(|x| {
                let mut v = [ZERO; 3];
                for t in terms {
                    v[t.component] += C64::new(t.coef * x[2].powi(t.x3_power as i32) * t.wave.eval([x[0], x[1]]), 0.0);
                }
                v
            })),
            Force::Nodal(values) => {
                if values.len() != cell.n_dofs() {
                    return Err(CellProblemError::ForceLength { got: values.len(), expected: cell.n_dofs() });
                }
                Ok(cell.values_at_q(values))
            }
        }
    }

    /// The force restricted to one parity class (quadrature-point reflection).
    pub fn project_points(cell: &Cell, g: &PointValues, parity: Parity) -> PointValues {
        let s = if parity == Parity::First { 1.0 } else { -1.0 };
        let mesh = cell.mesh();
        (0..g.len())
            .map(|gq| {
                let r = &g[mesh.quad_mirror(gq)];
                [(g[gq][0] - r[0] * s) * 0.5, (g[gq][1] - r[1] * s) * 0.5, (g[gq][2] + r[2] * s) * 0.5]
            })
            .collect()
    }

    /// Relative distance of sampled values from a parity class.
    pub fn parity_residual(cell: &Cell, g: &PointValues, parity: Parity) -> f64 {
        let p = Force::project_points(cell, g, parity);
        let num: f64 = g.iter().zip(&p).map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).norm_sqr()).sum::<f64>()).sum();
        let den: f64 = g.iter().map(|a| (0..3).map(|c| a[c].norm_sqr()).sum::<f64>()).sum();
        if den == 0.0 {
            0.0
        } else {
            (num / den).sqrt()
        }
    }
}

/// Amplitudes and corrector fields of one cascade.
#[derive(Debug, Clone)]
pub struct AnsatzBundle {
    pub mode: Mode,
    pub chi: Chi,
    pub depth: usize,
    /// Leading amplitude (cascade form, exact profile mass).
    pub m: Vec3,
    /// Leading amplitude with the simplified (unit) mass.
    pub m_tilde: Vec3,
    pub m1: Option<Vec3>,
    pub m2: Option<Vec3>,
    pub symbol: FiberSymbol,
    pub moments: ForceMoments,
    /// Corrector fields keyed u2, u3_1, ... in solve order.
    pub fields: BTreeMap<String, CorrectorField>,
    /// Solve order of the fields.
    pub order: Vec<String>,
    /// Auxiliary identity residuals (relative).
    pub identities: Vec<(String, f64)>,
}

impl AnsatzBundle {
    pub fn field(&self, name: &str) -> Option<&[C64]> {
        self.fields.get(name).map(|f| f.values.as_slice())
    }

    /// Largest relative solvability residual over every solve of the cascade.
    pub fn max_solvability(&self) -> f64 {
        self.fields.values().map(|f| f.max_solvability()).fold(0.0, f64::max)
    }

    /// Largest class residual of the stored fields (planar modes only).
    pub fn max_parity_residual(&self, solver: &CellSolver) -> Option<f64> {
        let p = self.mode.parity()?;
        Some(self.fields.values().map(|f| solver.masks().class_residual(&f.values, p)).fold(0.0, f64::max))
    }
}

/// Right-hand side under construction.
struct Rhs<'a> {
    cell: &'a Cell,
    chi: Chi,
    b: Vec<C64>,
}

impl<'a> Rhs<'a> {
    fn new(cell: &'a Cell, chi: Chi) -> Self {
        Self { cell, chi, b: vec![ZERO; cell.n_dofs()] }
    }

    /// coef (sym grad)* A E.
    fn div_a(&mut self, coef: C64, e: &StrainField) -> &mut Self {
        self.cell.add_strain_load(&mut self.b, e, TestOp::SymGrad, self.chi, coef);
        self
    }

    /// coef X* A E.
    fn x_a(&mut self, coef: C64, e: &StrainField) -> &mut Self {
        self.cell.add_strain_load(&mut self.b, e, TestOp::X, self.chi, coef);
        self
    }

    /// i (X* A sym grad u - (sym grad)* A X u).
    fn transport(&mut self, u: &[C64]) -> &mut Self {
        let s = self.cell.sym_grad(u);
        let x = self.cell.x_field(u, self.chi);
        self.x_a(I, &s).div_a(-I, &x)
    }

    /// -X* A X u.
    fn xx(&mut self, u: &[C64]) -> &mut Self {
        let x = self.cell.x_field(u, self.chi);
        self.x_a(-ONE, &x)
    }

    fn vector(&mut self, coef: C64, g: &[Vec3]) -> &mut Self {
        self.cell.add_vector_load(&mut self.b, g, coef);
        self
    }

    fn take(&mut self) -> Vec<C64> {
        std::mem::take(&mut self.b)
    }
}

fn add(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn vadd(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Runs the corrector cascade of `mode` for the fibre force `force` up to `depth`.
pub fn run_cascade(
    solver: &CellSolver,
    chi: Chi,
    force: &Force,
    mode: Mode,
    depth: usize,
) -> Result<AnsatzBundle, CellProblemError> {
    if depth > 2 {
        return Err(CellProblemError::Depth(depth));
    }
    let t = chi_norm(chi);
    if t == 0.0 {
        return Err(CellProblemError::ZeroChi);
    }
    let cell = solver.cell();
    let g = force.sample(cell)?;
    if let Some(p) = mode.parity() {
        if !cell.field().planar_symmetric() {
            return Err(CellProblemError::NotPlanar(mode));
        }
        let r = Force::parity_residual(cell, &g, p);
        if r > PARITY_TOL {
            return Err(CellProblemError::Parity { mode, residual: r });
        }
    }
    let (symbol, _) = homogenised::compute_a_hom(solver, chi)?;
    let moments = ForceMoments::from_points(solver, &g);
    let m = homogenised::solve_amplitude(chi, &symbol, &moments, mode, MassForm::Profile)?;
    let m_tilde = homogenised::solve_amplitude(chi, &symbol, &moments, mode, MassForm::Unit)?;
    let mut bundle = AnsatzBundle {
        mode,
        chi,
        depth,
        m,
        m_tilde,
        m1: None,
        m2: None,
        symbol,
        moments,
        fields: BTreeMap::new(),
        order: Vec::new(),
        identities: Vec::new(),
    };
    if depth == 0 {
        return Ok(bundle);
    }
    let ctx = Ctx { solver, chi, t, g: &g };
    match mode {
        Mode::FirstSubspace => ctx.first_subspace(&mut bundle)?,
        Mode::SecondSubspace => ctx.second_subspace(&mut bundle)?,
        Mode::GeneralFirst => ctx.general_first(&mut bundle)?,
        Mode::GeneralSecond => ctx.general_second(&mut bundle)?,
    }
    Ok(bundle)
}

struct Ctx<'a> {
    solver: &'a CellSolver,
    chi: Chi,
    t: f64,
    g: &'a PointValues,
}

impl<'a> Ctx<'a> {
    fn cell(&self) -> &Cell {
        self.solver.cell()
    }

    fn rhs(&self) -> Rhs<'_> {
        Rhs::new(self.cell(), self.chi)
    }

    fn profile(&self, m: &Vec3) -> StrainField {
        StrainField::profile(self.cell().mesh(), self.chi, m)
    }

    fn points(&self, f: impl Fn([f64; 3]) -> Vec3) -> PointValues {
        self.cell().sample_points(f)
    }

    fn store(&self, b: &mut AnsatzBundle, name: &str, rhs: Vec<C64>) -> Result<Vec<C64>, CellProblemError> {
        let f = self.solver.solve_constrained(&rhs)?;
        let v = f.values.clone();
        b.fields.insert(name.to_string(), f);
        b.order.push(name.to_string());
        Ok(v)
    }

    /// Nodal point values of a nodal field (for mass terms).
    fn at_q(&self, v: &[C64]) -> PointValues {
        self.cell().values_at_q(v)
    }

    /// In-plane mass term (i chi_a x3 c, 0) of the bending profile.
    fn rotation_points(&self, c: C64) -> PointValues {
        let chi = self.chi;
        self.points(|x| [I * chi[0] * x[2] * c, I * chi[1] * x[2] * c, ZERO])
    }

    fn vertical_points(&self, c: C64) -> PointValues {
        self.points(|_| [ZERO, ZERO, c])
    }

    /// i X (0,0,1) as a constant strain field.
    fn ix_e3(&self) -> StrainField {
        let s = x_sym3(self.chi, &[ZERO, ZERO, ONE]);
        StrainField::from_fn(self.cell().mesh(), |_| s.map(|v| v * I))
    }

    /// -int A(sym grad a + i X b) : conj(F) for test strain F.
    fn functional(&self, a: &[C64], b: &[C64], test: &StrainField) -> C64 {
        let e = self.cell().sym_grad(a).add(&self.cell().x_field(b, self.chi).scaled(I));
        -self.cell().pairing(&e, test)
    }

    fn record_psi_identity(&self, b: &mut AnsatzBundle, name: &str, lead: &StrainField, u: &[C64]) {
        // int A(lead + sym grad u) : conj(i X e3) vanishes because i X e3 is
        // the symmetric gradient of psi = i x3 (chi1, chi2, 0).
        let e = lead.clone().add(&self.cell().sym_grad(u));
        let test = self.ix_e3();
        let v = self.cell().pairing(&e, &test).norm();
        let scale = (self.cell().pairing(&e, &e).norm() * self.cell().pairing(&test, &test).norm()).sqrt();
        b.identities.push((name.to_string(), if scale > 0.0 { v / scale } else { 0.0 }));
    }

    fn first_subspace(&self, b: &mut AnsatzBundle) -> Result<(), CellProblemError> {
        let t4 = self.t.powi(4);
        let m3 = b.m[2];
        let a1 = b.symbol.a_hom[2][2].re;
        let gram3 = homogenised::profile_gram(self.chi)[2];
        let e0 = self.profile(&[ZERO, ZERO, m3]);
        let g_par: PointValues = self.g.iter().map(|v| [v[0], v[1], ZERO]).collect();
        let g_ver: PointValues = self.g.iter().map(|v| [ZERO, ZERO, v[2]]).collect();

        let u2 = self.store(b, "u2", self.rhs().div_a(-ONE, &e0).take())?;
        self.record_psi_identity(b, "psi_u2", &e0, &u2);
        let r = self
            .rhs()
            .transport(&u2)
            .x_a(I, &e0)
            .vector(C64::new(t4, 0.0), &self.rotation_points(m3))
            .vector(C64::new(self.t.powi(3), 0.0), &g_par)
            .take();
        let u31 = self.store(b, "u3_1", r)?;
        let r = self
            .rhs()
            .transport(&u31)
            .xx(&u2)
            .vector(C64::new(-t4, 0.0), &self.vertical_points(m3))
            .vector(C64::new(t4, 0.0), &g_ver)
            .take();
        let u41 = self.store(b, "u4_1", r)?;
        let ix = self.ix_e3();
        let m31 = self.functional(&u41, &u31, &ix) / (a1 + t4 * gram3);
        b.m1 = Some([ZERO, ZERO, m31]);
        if b.depth < 2 {
            return Ok(());
        }
        let e1 = self.profile(&[ZERO, ZERO, m31]);
        let u32 = self.store(b, "u3_2", self.rhs().div_a(-ONE, &e1).take())?;
        let r = self.rhs().transport(&u32).x_a(I, &e1).vector(C64::new(t4, 0.0), &self.rotation_points(m31)).take();
        let u42 = self.store(b, "u4_2", r)?;
        let u4s = add(&u41, &u42);
        let u3s = add(&u31, &u32);
        let r = self.rhs().transport(&u4s).xx(&u3s).vector(C64::new(-t4, 0.0), &self.vertical_points(m31)).take();
        let u51 = self.store(b, "u5_1", r)?;
        let m32 = self.functional(&u51, &u4s, &ix) / (a1 + t4 * gram3);
        b.m2 = Some([ZERO, ZERO, m32]);
        let e2 = self.profile(&[ZERO, ZERO, m32]);
        let u43 = self.store(b, "u4_3", self.rhs().div_a(-ONE, &e2).take())?;
        let r = self.rhs().transport(&u43).x_a(I, &e2).vector(C64::new(t4, 0.0), &self.rotation_points(m32)).take();
        let u52 = self.store(b, "u5_2", r)?;
        let u5s = add(&u51, &u52);
        let u4all = add(&u4s, &u43);
        let r = self
            .rhs()
            .transport(&u5s)
            .xx(&u4all)
            .vector(C64::new(-t4, 0.0), &self.vertical_points(m32))
            .vector(C64::new(-t4, 0.0), &self.at_q(&u2))
            .take();
        self.store(b, "u6", r)?;
        Ok(())
    }

    fn second_subspace(&self, b: &mut AnsatzBundle) -> Result<(), CellProblemError> {
        let t2 = self.t * self.t;
        let m = [b.m[0], b.m[1], ZERO];
        let xi = self.profile(&m);
        let u1 = self.store(b, "u1", self.rhs().div_a(-ONE, &xi).take())?;
        let r = self
            .rhs()
            .transport(&u1)
            .x_a(I, &xi)
            .vector(C64::new(-t2, 0.0), &self.points(|_| m))
            .vector(C64::new(t2, 0.0), self.g)
            .take();
        let u21 = self.store(b, "u2_1", r)?;
        // (A2 + |chi|^2) m1 . conj(d) = -int A(sym grad u2_1 + iX u1) : conj(iX(d, 0))
        let mut rhs = [ZERO; 2];
        for (al, r) in rhs.iter_mut().enumerate() {
            let mut d = [ZERO; 3];
            d[al] = ONE;
            *r = self.functional(&u21, &u1, &self.profile(&d));
        }
        let a = &b.symbol.a_hom;
        let lhs = vec![vec![a[0][0] + t2, a[0][1]], vec![a[1][0], a[1][1] + t2]];
        let x = crate::dense::solve(&lhs, &rhs);
        let m1 = [x[0], x[1], ZERO];
        b.m1 = Some(m1);
        if b.depth < 2 {
            return Ok(());
        }
        let xi1 = self.profile(&m1);
        let u22 = self.store(b, "u2_2", self.rhs().div_a(-ONE, &xi1).take())?;
        let u2s = add(&u21, &u22);
        let r = self
            .rhs()
            .transport(&u2s)
            .x_a(I, &xi1)
            .xx(&u1)
            .vector(C64::new(-t2, 0.0), &self.points(|_| m1))
            .vector(C64::new(-t2, 0.0), &self.at_q(&u1))
            .take();
        self.store(b, "u3", r)?;
        Ok(())
    }

    /// Correction amplitude (A + s Gram) m' = -int A(sym grad a + iX b) : conj(E_d).
    fn correction(&self, b: &AnsatzBundle, a_field: &[C64], b_field: &[C64], s: f64) -> Vec3 {
        self.correction_with(b, a_field, b_field, s, [ZERO; 3])
    }

    fn correction_with(&self, b: &AnsatzBundle, a_field: &[C64], b_field: &[C64], s: f64, extra: Vec3) -> Vec3 {
        let mut r = extra;
        for (k, rk) in r.iter_mut().enumerate() {
            let mut d = [ZERO; 3];
            d[k] = ONE;
            *rk += self.functional(a_field, b_field, &self.profile(&d));
        }
        homogenised::solve3(&b.symbol.a_hom, 1.0, profile_gram_scaled(self.chi, s), r)
    }

    /// Mass-term points (m_par - i chi x3 m3 + w_par, v3).
    fn mixed_points(&self, m: &Vec3, w: Option<&[C64]>, v3: C64) -> PointValues {
        let chi = self.chi;
        let base = self.points(|x| {
            let p = profile_vector(chi, m, x[2]);
            [p[0], p[1], v3]
        });
        match w {
            None => base,
            Some(w) => {
                let wq = self.at_q(w);
                base.iter().zip(&wq).map(|(p, q)| [p[0] + q[0], p[1] + q[1], p[2]]).collect()
            }
        }
    }

    fn general_first(&self, b: &mut AnsatzBundle) -> Result<(), CellProblemError> {
        let t4 = self.t.powi(4);
        let m = b.m;
        let em = self.profile(&m);
        let g_par: PointValues = self.g.iter().map(|v| [v[0], v[1], ZERO]).collect();
        let g_ver: PointValues = self.g.iter().map(|v| [ZERO, ZERO, v[2]]).collect();
        let u2 = self.store(b, "u2", self.rhs().div_a(-ONE, &em).take())?;
        let r = self
            .rhs()
            .transport(&u2)
            .x_a(I, &em)
            .vector(C64::new(self.t.powi(3), 0.0), &g_par)
            .vector(C64::new(-t4, 0.0), &self.mixed_points(&m, None, ZERO))
            .take();
        let u31 = self.store(b, "u3_1", r)?;
        // the vertical equation also sees the in-plane mass of u2 against the
        // rotation field i x3 (chi1, chi2, 0)
        let u2_par: PointValues = self.at_q(&u2).iter().map(|v| [v[0], v[1], ZERO]).collect();
        let rot = self.rotation_points(ONE);
        let extra = C64::new(t4, 0.0) * self.cell().l2_pairing(&u2_par, &rot);
        let m1 = self.correction_with(b, &u31, &u2, t4, [ZERO, ZERO, extra]);
        b.m1 = Some(m1);
        if b.depth < 2 {
            return Ok(());
        }
        let e1 = self.profile(&m1);
        let u32 = self.store(b, "u3_2", self.rhs().div_a(-ONE, &e1).take())?;
        let u3s = add(&u31, &u32);
        let r = self
            .rhs()
            .transport(&u3s)
            .x_a(I, &e1)
            .xx(&u2)
            .vector(C64::new(t4, 0.0), &g_ver)
            .vector(C64::new(-t4, 0.0), &self.mixed_points(&m1, Some(&u2), m[2]))
            .take();
        let u41 = self.store(b, "u4_1", r)?;
        let m2 = self.correction(b, &u41, &u3s, t4);
        b.m2 = Some(m2);
        let e2 = self.profile(&m2);
        let u42 = self.store(b, "u4_2", self.rhs().div_a(-ONE, &e2).take())?;
        let u4s = add(&u41, &u42);
        let r = self
            .rhs()
            .transport(&u4s)
            .x_a(I, &e2)
            .xx(&u3s)
            .vector(C64::new(-t4, 0.0), &self.mixed_points(&m2, Some(&u3s), m1[2]))
            .take();
        self.store(b, "u5_1", r)?;
        Ok(())
    }

    fn general_second(&self, b: &mut AnsatzBundle) -> Result<(), CellProblemError> {
        let t2 = self.t * self.t;
        let m = b.m;
        let g3 = b.moments.zeroth[2];
        let em = self.profile(&m);
        let u1 = self.store(b, "u1", self.rhs().div_a(-ONE, &em).take())?;
        let r = self
            .rhs()
            .transport(&u1)
            .x_a(I, &em)
            .vector(C64::new(-t2, 0.0), &self.mixed_points(&m, None, ZERO))
            .vector(C64::new(t2, 0.0), self.g)
            .vector(C64::new(-t2, 0.0), &self.vertical_points(g3))
            .take();
        let u21 = self.store(b, "u2_1", r)?;
        let m1 = self.correction(b, &u21, &u1, t2);
        b.m1 = Some(m1);
        if b.depth < 2 {
            return Ok(());
        }
        let e1 = self.profile(&m1);
        let u22 = self.store(b, "u2_2", self.rhs().div_a(-ONE, &e1).take())?;
        let u2s = add(&u21, &u22);
        let u1q = self.at_q(&u1);
        let mass: PointValues = self
            .mixed_points(&m1, Some(&u1), ZERO)
            .iter()
            .zip(&u1q)
            .map(|(p, q)| [p[0], p[1], m[2] + q[2] - g3])
            .collect();
        let r = self.rhs().transport(&u2s).x_a(I, &e1).xx(&u1).vector(C64::new(-t2, 0.0), &mass).take();
        self.store(b, "u3", r)?;
        Ok(())
    }
}

fn profile_gram_scaled(chi: Chi, s: f64) -> [f64; 3] {
    homogenised::profile_gram(chi).map(|g| g * s)
}

/// Leading (depth 0) or corrected (depth 1) ansatz as a nodal field.
pub fn build_ansatz(solver: &CellSolver, bundle: &AnsatzBundle, depth: usize) -> Result<Vec<C64>, CellProblemError> {
    if depth > bundle.depth || depth > 1 {
        return Err(CellProblemError::Depth(depth));
    }
    let mesh = solver.cell().mesh();
    let chi = bundle.chi;
    let m = bundle.m;
    if depth == 0 {
        return Ok(match bundle.mode {
            Mode::SecondSubspace => mesh.interpolate(|_| [m[0], m[1], ZERO]),
            _ => mesh.interpolate(|x| profile_vector(chi, &m, x[2])),
        });
    }
    let m1 = bundle.m1.expect("depth-1 bundle carries m1");
    let mm = vadd(&m, &m1);
    let field = |name: &str| bundle.field(name).expect("corrector present").to_vec();
    let mut u = match bundle.mode {
        Mode::FirstSubspace | Mode::GeneralFirst => mesh.interpolate(|x| profile_vector(chi, &mm, x[2])),
        Mode::SecondSubspace => mesh.interpolate(|_| [mm[0], mm[1], ZERO]),
        Mode::GeneralSecond => mesh.interpolate(|x| {
            let p = profile_vector(chi, &m, x[2]);
            [p[0] + m1[0], p[1] + m1[1], mm[2]]
        }),
    };
    let (name, vertical) = match bundle.mode {
        Mode::FirstSubspace | Mode::GeneralFirst => ("u2", false),
        Mode::SecondSubspace | Mode::GeneralSecond => ("u1", true),
    };
    let w = field(name);
    for a in 0..u.len() / 3 {
        u[3 * a] += w[3 * a];
        u[3 * a + 1] += w[3 * a + 1];
        if vertical {
            u[3 * a + 2] += w[3 * a + 2];
        }
    }
    Ok(u)
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

    fn two_phase_solver(n: usize, n3: usize) -> CellSolver {
        let a = ElasticityTensor::isotropic(1.0, 1.0).unwrap();
        let b = ElasticityTensor::isotropic(5.0, 3.0).unwrap();
        CellSolver::new(Cell::new(CellMesh::new(n, n, n3).unwrap(), MaterialField::checkerboard(a, b, 2))).unwrap()
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let s = iso_solver(2, 2);
        let f = s.solve_constrained(&vec![ZERO; s.n_dofs()]).unwrap();
        assert!(f.values.iter().all(|v| *v == ZERO));
    }

    #[test]
    fn non_mean_free_rhs_is_refused() {
        let s = iso_solver(2, 2);
        let c = s.constant([ZERO, ZERO, ONE]);
        let rhs: Vec<C64> = s.mass().mul_vec(&c);
        assert!(matches!(s.solve_constrained(&rhs), Err(CellProblemError::Solvability { component: 2, .. })));
    }

    #[test]
    fn roundoff_floor_keeps_small_violations() {
        // shear of a homogeneous cell loads nothing, up to roundoff
        let s = iso_solver(4, 4);
        let e = StrainField::from_fn(s.cell().mesh(), |_| [ZERO, ZERO, ZERO, ZERO, ZERO, ONE]);
        let rhs = s.cell().strain_load(&e, TestOp::SymGrad, [0.0, 0.0], -ONE);
        assert!(s.solve_constrained(&rhs).is_ok());
        // a genuinely inconsistent load stays refused however small it is
        let c = s.constant([ZERO, ZERO, C64::new(1e-9, 0.0)]);
        let rhs: Vec<C64> = s.mass().mul_vec(&c);
        assert!(s.solve_constrained(&rhs).is_err());
    }

    #[test]
    fn uniaxial_membrane_corrector_is_linear_in_x3() {
        let s = iso_solver(3, 4);
        let e = StrainField::from_fn(s.cell().mesh(), |_| [ONE, ZERO, ZERO, ZERO, ZERO, ZERO]);
        let v = s.solve_strain_corrector(&e, -ONE).unwrap();
        let exact = s.cell().mesh().interpolate(|x| [ZERO, ZERO, C64::new(-x[2] / 3.0, 0.0)]);
        let err = v.values.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        assert!(v.mean_residual < 1e-12);
    }

    #[test]
    fn n_of_inplane_amplitude_is_exact() {
        let s = iso_solver(2, 4);
        let t = 0.3;
        let v = s.solve_n([t, 0.0], &[ONE, ZERO, ZERO]).unwrap();
        let exact = s.cell().mesh().interpolate(|x| [ZERO, ZERO, -I * (t * x[2] / 3.0)]);
        let err = v.values.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn n_split_parities() {
        let s = two_phase_solver(4, 4);
        let split = s.solve_n_split([0.4, -0.3], &[ONE, C64::new(0.5, 0.2), C64::new(-0.3, 1.0)]).unwrap();
        assert!(split.parity_residual.unwrap() < 1e-10);
        let sum = add(&split.bending.unwrap().values, &split.membrane.unwrap().values);
        let err = sum.iter().zip(&split.total.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn presets_have_declared_parity() {
        let s = iso_solver(4, 4);
        let cell = s.cell();
        for (name, p) in [("first_generic", Parity::First), ("second_generic", Parity::Second), ("inplane_x3", Parity::First)] {
            let g = Force::preset(name).unwrap().sample(cell).unwrap();
            assert!(Force::parity_residual(cell, &g, p) < 1e-14, "{name}");
        }
        let g = Force::preset("generic").unwrap().sample(cell).unwrap();
        assert!(Force::parity_residual(cell, &g, Parity::First) > 0.1);
        assert!(Force::preset("nope").is_err());
    }

    #[test]
    fn wrong_parity_force_is_rejected() {
        let s = two_phase_solver(2, 2);
        let f = Force::preset("inplane_const").unwrap();
        assert!(matches!(run_cascade(&s, [0.2, 0.1], &f, Mode::FirstSubspace, 1), Err(CellProblemError::Parity { .. })));
    }

    #[test]
    fn depth_zero_bundle_is_empty() {
        let s = iso_solver(2, 4);
        let f = Force::preset("vertical_const").unwrap();
        let b = run_cascade(&s, [0.1, 0.0], &f, Mode::FirstSubspace, 0).unwrap();
        assert!(b.fields.is_empty());
        assert_eq!(b.m[0], ZERO);
        assert!(b.m[2].norm() > 0.5);
    }

    #[test]
    fn cascades_are_solvable_and_parity_pure() {
        let s = two_phase_solver(4, 4);
        let chi = [0.3, -0.2];
        for (mode, name) in [
            (Mode::FirstSubspace, "first_generic"),
            (Mode::SecondSubspace, "second_generic"),
            (Mode::GeneralFirst, "generic"),
            (Mode::GeneralSecond, "generic"),
        ] {
            let b = run_cascade(&s, chi, &Force::preset(name).unwrap(), mode, 2).unwrap();
            assert!(b.max_solvability() < 1e-10, "{mode}: {}", b.max_solvability());
            if let Some(r) = b.max_parity_residual(&s) {
                assert!(r < 1e-10, "{mode} parity {r}");
            }
            for (id, r) in &b.identities {
                assert!(*r < 1e-10, "{id} {r}");
            }
        }
    }

    #[test]
    fn ansatz_depth_zero_formulas() {
        let s = iso_solver(2, 4);
        let f = Force::preset("vertical_const").unwrap();
        let b = run_cascade(&s, [0.2, 0.0], &f, Mode::FirstSubspace, 1).unwrap();
        let u = build_ansatz(&s, &b, 0).unwrap();
        let node = s.cell().mesh().node(0, 0, 4);
        assert!((u[3 * node] - (-I * 0.2 * 0.5 * b.m[2])).norm() < 1e-15);
        assert!((u[3 * node + 2] - b.m[2]).norm() < 1e-15);
        assert!(build_ansatz(&s, &b, 2).is_err());
    }
}
