//! Homogenised plate tensors, fibre symbols, force moments and the
//! low-dimensional amplitude equations.
//!
//! Symmetric 2x2 matrices use Voigt-3 coordinates (11, 22, 12) with the
//! engineering factor on the 12 slot, so `L` is a 6x6 matrix acting on
//! `(M1, M2)` = (membrane strain, bending curvature).

use crate::assembly::{chi_norm, Chi, PointValues, StrainField, Vec3};
use crate::cell_problems::{CellProblemError, CellSolver, CorrectorField, Mode};
use crate::dense;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error)]
pub enum HomogenisedError {
    #[error("the in-plane moment functionals need a non-zero quasimomentum")]
    ZeroChi,
    #[error(transparent)]
    Cell(#[from] CellProblemError),
}

/// Basis matrix of Voigt-3 slot `k` as a symmetric 2x2 matrix.
fn voigt3_basis(k: usize) -> [[f64; 2]; 2] {
    match k {
        0 => [[1.0, 0.0], [0.0, 0.0]],
        1 => [[0.0, 0.0], [0.0, 1.0]],
        _ => [[0.0, 0.5], [0.5, 0.0]],
    }
}

/// Voigt-3 coordinates of a symmetric 2x2 matrix.
pub fn voigt3<T: Copy + std::ops::Add<Output = T>>(m: [[T; 2]; 2]) -> [T; 3] {
    [m[0][0], m[1][1], m[0][1] + m[1][0]]
}

/// Effective plate tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenisedTensors {
    /// Quadratic form on (M1, M2), Voigt-3 + Voigt-3.
    pub l: [[f64; 6]; 6],
    /// Bending block.
    pub l1: [[f64; 3]; 3],
    /// Membrane block.
    pub l2: [[f64; 3]; 3],
}

impl HomogenisedTensors {
    /// Cross (membrane-bending) block norm relative to ||L||.
    pub fn cross_block_ratio(&self) -> f64 {
        let mut cross = 0.0;
        let mut total = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let v = self.l[i][j] * self.l[i][j];
                total += v;
                if (i < 3) != (j < 3) {
                    cross += v;
                }
            }
        }
        (cross / total).sqrt()
    }

    /// Sesquilinear form L(v, conj w) on Voigt-3 + Voigt-3 coordinates.
    pub fn form(&self, v: &[C64; 6], w: &[C64; 6]) -> C64 {
        let mut s = ZERO;
        for i in 0..6 {
            for j in 0..6 {
                s += v[i] * self.l[i][j] * w[j].conj();
            }
        }
        s
    }

    /// Upper-triangle entries of L (21), L1 (6), L2 (6), row by row.
    pub fn flat_entries(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(33);
        for i in 0..6 {
            for j in i..6 {
                out.push(self.l[i][j]);
            }
        }
        for b in [&self.l1, &self.l2] {
            for i in 0..3 {
                for j in i..3 {
                    out.push(b[i][j]);
                }
            }
        }
        out
    }
}

/// The strain J(M1 - x3 M2) of a canonical basis pair.
fn canonical_strain(solver: &CellSolver, k: usize) -> StrainField {
    let b = voigt3_basis(k % 3);
    let bending = k >= 3;
    StrainField::from_fn(solver.cell().mesh(), |x| {
        let s = if bending { -x[2] } else { 1.0 };
        [
            C64::new(s * b[0][0], 0.0),
            C64::new(s * b[1][1], 0.0),
            ZERO,
            ZERO,
            ZERO,
            C64::new(s * b[0][1], 0.0),
        ]
    })
}

/// L from six canonical cell solves; off-diagonal entries follow from the
/// bilinear form of the corrected strains (polarisation).
pub fn compute_l(solver: &CellSolver) -> Result<HomogenisedTensors, HomogenisedError> {
    let cell = solver.cell();
    let mut corrected = Vec::with_capacity(6);
    for k in 0..6 {
        let e = canonical_strain(solver, k);
        let psi = solver.solve_strain_corrector(&e, C64::new(-1.0, 0.0))?;
        corrected.push(e.add(&cell.sym_grad(&psi.values)));
    }
    let mut l = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in i..6 {
            let v = cell.pairing(&corrected[i], &corrected[j]).re;
            l[i][j] = v;
            l[j][i] = v;
        }
    }
    let mut l1 = [[0.0; 3]; 3];
    let mut l2 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            l2[i][j] = l[i][j];
            l1[i][j] = l[i + 3][j + 3];
        }
    }
    Ok(HomogenisedTensors { l, l1, l2 })
}

/// A^hom_chi and its planar blocks for one quasimomentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberSymbol {
    pub chi: Chi,
    /// `a_hom[k][j]` so that (A m) . conj(d) = sum_kj a[k][j] m_j conj(d_k).
    pub a_hom: [[C64; 3]; 3],
    /// Bending entry (planar-symmetric materials).
    pub a_hom_1: Option<f64>,
    /// Membrane block (planar-symmetric materials).
    pub a_hom_2: Option<[[C64; 2]; 2]>,
}

impl FiberSymbol {
    /// (A m) . conj(d).
    pub fn form(&self, m: &Vec3, d: &Vec3) -> C64 {
        let mut s = ZERO;
        for k in 0..3 {
            for j in 0..3 {
                s += self.a_hom[k][j] * m[j] * d[k].conj();
            }
        }
        s
    }

    pub fn hermitian_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for k in 0..3 {
            for j in 0..3 {
                d = d.max((self.a_hom[k][j] - self.a_hom[j][k].conj()).norm());
            }
        }
        d
    }
}

/// A^hom_chi from the three correctors N_{e_j}; also returns the correctors.
pub fn compute_a_hom(solver: &CellSolver, chi: Chi) -> Result<(FiberSymbol, Vec<CorrectorField>), HomogenisedError> {
    let cell = solver.cell();
    let mesh = cell.mesh();
    let mut corrected = Vec::with_capacity(3);
    let mut basis = Vec::with_capacity(3);
    let mut ns = Vec::with_capacity(3);
    for j in 0..3 {
        let mut m = [ZERO; 3];
        m[j] = C64::new(1.0, 0.0);
        let e = StrainField::profile(mesh, chi, &m);
        let n = solver.solve_strain_corrector(&e, C64::new(-1.0, 0.0))?;
        corrected.push(e.clone().add(&cell.sym_grad(&n.values)));
        basis.push(e);
        ns.push(n);
    }
    let mut a = [[ZERO; 3]; 3];
    for k in 0..3 {
        for j in 0..3 {
            // Corrected on both sides: equal to the one-sided definition by
            // Galerkin orthogonality, and Hermitian by construction.
            a[k][j] = cell.pairing(&corrected[j], &corrected[k]);
        }
    }
    for k in 0..3 {
        a[k][k] = C64::new(a[k][k].re, 0.0);
        for j in k + 1..3 {
            let v = (a[k][j] + a[j][k].conj()) * 0.5;
            a[k][j] = v;
            a[j][k] = v.conj();
        }
    }
    let planar = cell.field().planar_symmetric();
    let symbol = FiberSymbol {
        chi,
        a_hom: a,
        a_hom_1: planar.then(|| a[2][2].re),
        a_hom_2: planar.then(|| [[a[0][0], a[0][1]], [a[1][0], a[1][1]]]),
    };
    Ok((symbol, ns))
}

/// Per-fibre moments of a force given by its periodic part at quadrature points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceMoments {
    /// int_Q g.
    pub zeroth: Vec3,
    /// int_Q x3 g_alpha.
    pub first_vertical: [C64; 2],
}

impl ForceMoments {
    pub fn from_points(solver: &CellSolver, g: &PointValues) -> Self {
        let cell = solver.cell();
        let zeroth = cell.integral(g);
        let w = cell.mesh().reference().weight;
        let mut first = [ZERO; 2];
        for (x, v) in cell.quad_points().iter().zip(g) {
            first[0] += v[0] * (x[2] * w);
            first[1] += v[1] * (x[2] * w);
        }
        Self { zeroth, first_vertical: first }
    }

    /// S g: the zeroth moment.
    pub fn s(&self) -> Vec3 {
        self.zeroth
    }

    /// S_alpha g = chi_alpha / |chi| int x3 g_alpha.
    pub fn s_alpha(&self, chi: Chi) -> Result<[C64; 2], HomogenisedError> {
        let t = chi_norm(chi);
        if t == 0.0 {
            return Err(HomogenisedError::ZeroChi);
        }
        Ok([self.first_vertical[0] * (chi[0] / t), self.first_vertical[1] * (chi[1] / t)])
    }

    /// S~_alpha g = chi_alpha int x3 g_alpha.
    pub fn s_tilde_alpha(&self, chi: Chi) -> [C64; 2] {
        [self.first_vertical[0] * chi[0], self.first_vertical[1] * chi[1]]
    }
}

/// Mass form used in an amplitude equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MassForm {
    /// Exact L2 Gram matrix of the leading profile: diag(1, 1, 1 + |chi|^2/12).
    Profile,
    /// Identity (the simplified equivalent form).
    Unit,
}

/// Gram matrix of the leading profiles: int profile(e_j) . conj(profile(e_k)).
pub fn profile_gram(chi: Chi) -> [f64; 3] {
    let t2 = chi[0] * chi[0] + chi[1] * chi[1];
    [1.0, 1.0, 1.0 + t2 / 12.0]
}

/// Solves the leading amplitude equation of `mode` for the force moments.
pub fn solve_amplitude(
    chi: Chi,
    symbol: &FiberSymbol,
    moments: &ForceMoments,
    mode: Mode,
    mass: MassForm,
) -> Result<Vec3, HomogenisedError> {
    let t = chi_norm(chi);
    if t == 0.0 {
        return Err(HomogenisedError::ZeroChi);
    }
    let gram = match mass {
        MassForm::Profile => profile_gram(chi),
        MassForm::Unit => [1.0; 3],
    };
    let g = &moments.zeroth;
    let s_alpha = moments.s_alpha(chi)?;
    let a = &symbol.a_hom;
    match mode {
        Mode::FirstSubspace => {
            let r3 = I * (s_alpha[0] + s_alpha[1]) + g[2];
            let m3 = r3 / (a[2][2] / t.powi(4) + gram[2]);
            Ok([ZERO, ZERO, m3])
        }
        Mode::SecondSubspace => {
            let t2 = t * t;
            let lhs = vec![vec![a[0][0] + t2, a[0][1]], vec![a[1][0], a[1][1] + t2]];
            let x = dense::solve(&lhs, &[g[0] * t2, g[1] * t2]);
            Ok([x[0], x[1], ZERO])
        }
        Mode::GeneralFirst => {
            let r = [g[0] / t, g[1] / t, I * (s_alpha[0] + s_alpha[1]) + g[2]];
            Ok(solve3(a, t.powi(-4), gram, r))
        }
        Mode::GeneralSecond => {
            let st = moments.s_tilde_alpha(chi);
            let r = [g[0], g[1], I * (st[0] + st[1]) + g[2]];
            Ok(solve3(a, t.powi(-2), gram, r))
        }
    }
}

/// (scale a + diag(gram)) x = r.
pub(crate) fn solve3(a: &[[C64; 3]; 3], scale: f64, gram: [f64; 3], r: Vec3) -> Vec3 {
    let lhs: Vec<Vec<C64>> = (0..3)
        .map(|k| (0..3).map(|j| a[k][j] * scale + if k == j { C64::new(gram[k], 0.0) } else { ZERO }).collect())
        .collect();
    let x = dense::solve(&lhs, &r);
    [x[0], x[1], x[2]]
}

/// Voigt-3 pair (M1, i M2) of the leading profile with amplitude m, so that
/// A^hom m . conj(d) = L((M1, iM2)(m), conj((M1, iM2)(d))).
pub fn profile_pair(chi: Chi, m: &Vec3) -> [C64; 6] {
    let m1 = [
        [m[0] * chi[0], (m[0] * chi[1] + m[1] * chi[0]) * 0.5],
        [(m[0] * chi[1] + m[1] * chi[0]) * 0.5, m[1] * chi[1]],
    ];
    let m2 = [
        [I * m[2] * chi[0] * chi[0], I * m[2] * chi[0] * chi[1]],
        [I * m[2] * chi[0] * chi[1], I * m[2] * chi[1] * chi[1]],
    ];
    let a = voigt3(m1);
    let b = voigt3(m2);
    [a[0], a[1], a[2], b[0], b[1], b[2]]
}

/// Quadratic-form side of the symbol identity for real m:
/// L2 M1:M1 + L1 M2:M2 with M1 = sym(chi (x) m_par), M2 = m3 chi (x) chi.
pub fn symbol_from_l_real(tensors: &HomogenisedTensors, chi: Chi, m: [f64; 3]) -> f64 {
    let m1 = voigt3([
        [m[0] * chi[0], 0.5 * (m[0] * chi[1] + m[1] * chi[0])],
        [0.5 * (m[0] * chi[1] + m[1] * chi[0]), m[1] * chi[1]],
    ]);
    let m2 = voigt3([
        [m[2] * chi[0] * chi[0], m[2] * chi[0] * chi[1]],
        [m[2] * chi[0] * chi[1], m[2] * chi[1] * chi[1]],
    ]);
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += tensors.l2[i][j] * m1[i] * m1[j] + tensors.l1[i][j] * m2[i] * m2[j];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::Cell;
    use crate::cell_mesh::CellMesh;
    use crate::material::{ElasticityTensor, MaterialField};

    fn iso_solver(n: usize, n3: usize) -> CellSolver {
        let a = ElasticityTensor::isotropic(1.0, 1.0).unwrap();
        let cell = Cell::new(CellMesh::new(n, n, n3).unwrap(), MaterialField::homogeneous(a));
        CellSolver::new(cell).unwrap()
    }

    #[test]
    fn isotropic_membrane_entry_is_plane_stress() {
        let t = compute_l(&iso_solver(2, 4)).unwrap();
        assert!((t.l2[0][0] - 8.0 / 3.0).abs() < 1e-10, "{}", t.l2[0][0]);
        // shear slot: engineering factor gives mu
        assert!((t.l2[2][2] - 1.0).abs() < 1e-10);
        assert!((t.l2[0][1] - 2.0 / 3.0).abs() < 1e-10);
        assert!(t.cross_block_ratio() < 1e-12);
    }

    #[test]
    fn isotropic_bending_block_near_twelfth() {
        let t = compute_l(&iso_solver(2, 8)).unwrap();
        let rel = (t.l1[0][0] - t.l2[0][0] / 12.0).abs() / (t.l2[0][0] / 12.0);
        assert!(rel < 0.02, "{rel}");
    }

    #[test]
    fn a_hom_vanishes_at_zero_and_is_hermitian() {
        let s = iso_solver(2, 4);
        let (sym0, _) = compute_a_hom(&s, [0.0, 0.0]).unwrap();
        assert!(sym0.a_hom.iter().flatten().all(|v| v.norm() < 1e-14));
        let (sym, _) = compute_a_hom(&s, [0.3, -0.2]).unwrap();
        assert!(sym.hermitian_defect() < 1e-14);
        assert!(sym.a_hom_1.is_some());
    }

    #[test]
    fn moments_of_simple_forces() {
        let s = iso_solver(2, 4);
        let g = s.cell().sample_points(|x| [C64::new(x[2], 0.0), ZERO, ZERO]);
        let mo = ForceMoments::from_points(&s, &g);
        assert!(mo.zeroth[0].norm() < 1e-15);
        let st = mo.s_tilde_alpha([0.4, 0.0]);
        assert!((st[0].re - 0.4 / 12.0).abs() < 1e-14);
        let sa = mo.s_alpha([0.4, 0.0]).unwrap();
        assert!((sa[0].re - 1.0 / 12.0).abs() < 1e-14);
        assert!(matches!(mo.s_alpha([0.0, 0.0]), Err(HomogenisedError::ZeroChi)));
        let g3 = s.cell().sample_points(|_| [ZERO, ZERO, C64::new(1.0, 0.0)]);
        let m3 = ForceMoments::from_points(&s, &g3);
        assert!((m3.s()[2].re - 1.0).abs() < 1e-14);
        assert!(m3.s_tilde_alpha([0.3, 0.1]).iter().all(|v| v.norm() < 1e-15));
    }
}
