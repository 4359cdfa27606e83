//! Fibre operators on periodic parts: K(chi) for (sym grad + iX)*A(sym grad + iX),
//! the mass matrix, and weak-form loads.
//!
//! A chi-quasiperiodic field is u = v e_chi with v periodic; every routine
//! here works on v. For a real basis function N e_c the shifted strain is
//! sym(e_c (x) g) with the complex gradient g = grad N + i chi N.

use crate::cell_mesh::CellMesh;
use crate::material::{ElasticityTensor, MaterialField};
use crate::sparse::{CsrMatrix, Pattern};
use num_complex::Complex64 as C64;

pub type Chi = [f64; 2];
pub type Vec3 = [C64; 3];
/// Symmetric 3x3 matrix as tensor components in Voigt order (11,22,33,23,13,12).
pub type Sym3 = [C64; 6];

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn chi_norm(chi: Chi) -> f64 {
    chi[0].hypot(chi[1])
}

pub fn sym3_to_matrix(s: &Sym3) -> [[C64; 3]; 3] {
    [[s[0], s[5], s[4]], [s[5], s[1], s[3]], [s[4], s[3], s[2]]]
}

pub fn matrix_to_sym3(m: &[[C64; 3]; 3]) -> Sym3 {
    [m[0][0], m[1][1], m[2][2], m[1][2], m[0][2], m[0][1]]
}

/// sym(a (x) b).
pub fn sym_outer(a: &Vec3, b: &Vec3) -> Sym3 {
    let h = 0.5;
    [
        a[0] * b[0],
        a[1] * b[1],
        a[2] * b[2],
        (a[1] * b[2] + a[2] * b[1]) * h,
        (a[0] * b[2] + a[2] * b[0]) * h,
        (a[0] * b[1] + a[1] * b[0]) * h,
    ]
}

fn chi3(chi: Chi) -> Vec3 {
    [C64::new(chi[0], 0.0), C64::new(chi[1], 0.0), ZERO]
}

/// The operator X: X phi = sym(phi (x) (chi1, chi2, 0)).
pub fn x_symbol(chi: Chi, phi: Vec3) -> [[C64; 3]; 3] {
    sym3_to_matrix(&x_sym3(chi, &phi))
}

pub fn x_sym3(chi: Chi, phi: &Vec3) -> Sym3 {
    sym_outer(phi, &chi3(chi))
}

/// Xi(chi, m1, m2) = i J([[chi1 m1, (chi1 m2 + chi2 m1)/2], [., chi2 m2]]).
pub fn xi(chi: Chi, m1: C64, m2: C64) -> Sym3 {
    [
        I * chi[0] * m1,
        I * chi[1] * m2,
        ZERO,
        ZERO,
        ZERO,
        I * 0.5 * (chi[0] * m2 + chi[1] * m1),
    ]
}

/// Upsilon(chi, m3) = i m3 J(chi (x) chi).
pub fn upsilon(chi: Chi, m3: C64) -> Sym3 {
    let f = I * m3;
    [f * chi[0] * chi[0], f * chi[1] * chi[1], ZERO, ZERO, ZERO, f * chi[0] * chi[1]]
}

/// Xi(chi, m1, m2) - i x3 Upsilon(chi, m3): the shifted strain of the leading
/// profile (m1 - i chi1 x3 m3, m2 - i chi2 x3 m3, m3).
pub fn profile_strain(chi: Chi, m: &Vec3, x3: f64) -> Sym3 {
    let a = xi(chi, m[0], m[1]);
    let b = upsilon(chi, m[2]);
    let mut out = [ZERO; 6];
    for p in 0..6 {
        out[p] = a[p] - I * x3 * b[p];
    }
    out
}

/// The leading profile vector at height x3.
pub fn profile_vector(chi: Chi, m: &Vec3, x3: f64) -> Vec3 {
    [m[0] - I * chi[0] * x3 * m[2], m[1] - I * chi[1] * x3 * m[2], m[2]]
}

pub fn frobenius(s: &Sym3) -> f64 {
    (s[0].norm_sqr() + s[1].norm_sqr() + s[2].norm_sqr() + 2.0 * (s[3].norm_sqr() + s[4].norm_sqr() + s[5].norm_sqr()))
        .sqrt()
}

#[inline]
fn engineering(s: &Sym3) -> [C64; 6] {
    [s[0], s[1], s[2], s[3] * 2.0, s[4] * 2.0, s[5] * 2.0]
}

/// A E : conj(F) at one point.
#[inline]
pub fn energy_density(a: &ElasticityTensor, e: &Sym3, f: &Sym3) -> C64 {
    let sig = a.stress(&engineering(e));
    let fe = engineering(f);
    let mut s = ZERO;
    for p in 0..6 {
        s += sig[p] * fe[p].conj();
    }
    s
}

/// Strain-like field sampled at quadrature points (index `8 e + q`).
#[derive(Debug, Clone, PartialEq)]
pub struct StrainField {
    pub values: Vec<Sym3>,
}

impl StrainField {
    pub fn zeros(mesh: &CellMesh) -> Self {
        Self { values: vec![[ZERO; 6]; mesh.n_quad()] }
    }

    pub fn from_fn<F: Fn([f64; 3]) -> Sym3>(mesh: &CellMesh, f: F) -> Self {
        let mut values = Vec::with_capacity(mesh.n_quad());
        for e in 0..mesh.n_elements() {
            for q in 0..8 {
                values.push(f(mesh.quad_point(e, q)));
            }
        }
        Self { values }
    }

    /// Xi - i x3 Upsilon for amplitude m.
    pub fn profile(mesh: &CellMesh, chi: Chi, m: &Vec3) -> Self {
        Self::from_fn(mesh, |x| profile_strain(chi, m, x[2]))
    }

    pub fn scaled(mut self, c: C64) -> Self {
        for v in &mut self.values {
            for x in v.iter_mut() {
                *x *= c;
            }
        }
        self
    }

    pub fn add(mut self, other: &StrainField) -> Self {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for p in 0..6 {
                a[p] += b[p];
            }
        }
        self
    }

    pub fn is_symmetric(&self) -> bool {
        // Stored in symmetric form by construction.
        true
    }
}

/// Vector field sampled at quadrature points.
pub type PointValues = Vec<Vec3>;

/// Test-function operator of a strain load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestOp {
    /// phi -> sym grad phi.
    SymGrad,
    /// phi -> X phi.
    X,
    /// phi -> (sym grad + iX) phi.
    Shifted,
}

/// K(chi), M and the quasimomentum.
#[derive(Debug, Clone)]
pub struct FiberOperatorSet {
    pub chi: Chi,
    pub k: CsrMatrix<C64>,
    pub m: CsrMatrix<f64>,
}

impl FiberOperatorSet {
    pub fn dofs(&self) -> usize {
        self.k.n
    }
}

/// Mesh, material and material samples at quadrature points.
#[derive(Debug, Clone)]
pub struct Cell {
    mesh: CellMesh,
    field: MaterialField,
    phase_at_q: Vec<usize>,
    element_dofs: Vec<[usize; 24]>,
    pattern: Pattern,
}

impl Cell {
    pub fn new(mesh: CellMesh, field: MaterialField) -> Self {
        let mut phase_at_q = Vec::with_capacity(mesh.n_quad());
        for e in 0..mesh.n_elements() {
            for q in 0..8 {
                let x = mesh.quad_point(e, q);
                phase_at_q.push(field.phase_index([x[0], x[1]]));
            }
        }
        let element_dofs: Vec<[usize; 24]> = (0..mesh.n_elements())
            .map(|e| {
                let nodes = mesh.element_nodes(e);
                let mut d = [0; 24];
                for l in 0..8 {
                    for c in 0..3 {
                        d[3 * l + c] = 3 * nodes[l] + c;
                    }
                }
                d
            })
            .collect();
        let pattern = Pattern::from_elements(mesh.n_dofs(), &element_dofs);
        Self { mesh, field, phase_at_q, element_dofs, pattern }
    }

    pub fn mesh(&self) -> &CellMesh {
        &self.mesh
    }

    pub fn field(&self) -> &MaterialField {
        &self.field
    }

    pub fn pattern(&self) -> &Pattern {
        &self.pattern
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    #[inline]
    fn tensor_at(&self, gq: usize) -> &ElasticityTensor {
        &self.field.phases()[self.phase_at_q[gq]]
    }

    /// Complex "gradient" of the test or trial basis function for an operator.
    #[inline]
    fn op_gradient(&self, op: TestOp, chi: Chi, q: usize, l: usize) -> Vec3 {
        let r = self.mesh.reference();
        let g = r.grad[q][l];
        let n = r.shape[q][l];
        match op {
            TestOp::SymGrad => [C64::new(g[0], 0.0), C64::new(g[1], 0.0), C64::new(g[2], 0.0)],
            TestOp::X => [C64::new(chi[0] * n, 0.0), C64::new(chi[1] * n, 0.0), ZERO],
            TestOp::Shifted => [C64::new(g[0], chi[0] * n), C64::new(g[1], chi[1] * n), C64::new(g[2], 0.0)],
        }
    }

    /// Hermitian stiffness K(chi).
    pub fn stiffness(&self, chi: Chi) -> CsrMatrix<C64> {
        let mut val = self.pattern.zeros::<C64>();
        let w = self.mesh.reference().weight;
        let mut grads = [[ZERO; 3]; 8];
        let mut ke = [[ZERO; 24]; 24];
        for e in 0..self.mesh.n_elements() {
            for row in ke.iter_mut() {
                row.fill(ZERO);
            }
            for q in 0..8 {
                let a = self.tensor_at(8 * e + q);
                for (l, g) in grads.iter_mut().enumerate() {
                    *g = self.op_gradient(TestOp::Shifted, chi, q, l);
                }
                // Stress of each trial basis function, then contract with test.
                let mut stress = [[ZERO; 6]; 24];
                for l in 0..8 {
                    for c in 0..3 {
                        let mut ec = [ZERO; 3];
                        ec[c] = C64::new(1.0, 0.0);
                        stress[3 * l + c] = a.stress(&engineering(&sym_outer(&ec, &grads[l])));
                    }
                }
                for lr in 0..8 {
                    let gr = [grads[lr][0].conj(), grads[lr][1].conj(), grads[lr][2].conj()];
                    for cr in 0..3 {
                        let r = 3 * lr + cr;
                        for (s, sig) in stress.iter().enumerate() {
                            ke[r][s] += contract_row(sig, cr, &gr) * w;
                        }
                    }
                }
            }
            let base = e * 576;
            for r in 0..24 {
                for s in 0..24 {
                    val[self.pattern.scatter[base + 24 * r + s]] += ke[r][s];
                }
            }
        }
        CsrMatrix::from_pattern(&self.pattern, val)
    }

    /// Real periodic stiffness K(0).
    pub fn stiffness_real(&self) -> CsrMatrix<f64> {
        let k = self.stiffness([0.0, 0.0]);
        CsrMatrix { n: k.n, row_ptr: k.row_ptr, col: k.col, val: k.val.iter().map(|v| v.re).collect() }
    }

    /// Consistent mass matrix (identity in the component index).
    pub fn mass(&self) -> CsrMatrix<f64> {
        let mut val = self.pattern.zeros::<f64>();
        let r = self.mesh.reference();
        let mut me = [[0.0; 8]; 8];
        for q in 0..8 {
            for a in 0..8 {
                for b in 0..8 {
                    me[a][b] += r.weight * r.shape[q][a] * r.shape[q][b];
                }
            }
        }
        for e in 0..self.mesh.n_elements() {
            let base = e * 576;
            for a in 0..8 {
                for b in 0..8 {
                    for c in 0..3 {
                        let (ri, si) = (3 * a + c, 3 * b + c);
                        val[self.pattern.scatter[base + 24 * ri + si]] += me[a][b];
                    }
                }
            }
        }
        CsrMatrix::from_pattern(&self.pattern, val)
    }

    pub fn fiber_operators(&self, chi: Chi) -> FiberOperatorSet {
        FiberOperatorSet { chi, k: self.stiffness(chi), m: self.mass() }
    }

    /// Load vector b_i = coef * int A E : conj(T phi_i) for the real nodal basis.
    pub fn strain_load(&self, e_field: &StrainField, op: TestOp, chi: Chi, coef: C64) -> Vec<C64> {
        let mut b = vec![ZERO; self.n_dofs()];
        self.add_strain_load(&mut b, e_field, op, chi, coef);
        b
    }

    pub fn add_strain_load(&self, b: &mut [C64], e_field: &StrainField, op: TestOp, chi: Chi, coef: C64) {
        let w = self.mesh.reference().weight;
        for e in 0..self.mesh.n_elements() {
            let dofs = &self.element_dofs[e];
            for q in 0..8 {
                let gq = 8 * e + q;
                let ev = &e_field.values[gq];
                if ev.iter().all(|x| *x == ZERO) {
                    continue;
                }
                let sig = self.tensor_at(gq).stress(&engineering(ev));
                for l in 0..8 {
                    let g = self.op_gradient(op, chi, q, l);
                    let gc = [g[0].conj(), g[1].conj(), g[2].conj()];
                    for c in 0..3 {
                        b[dofs[3 * l + c]] += contract_row(&sig, c, &gc) * (coef * w);
                    }
                }
            }
        }
    }

    /// Load vector b_i = coef * int g . conj(phi_i) for g sampled at quadrature points.
    pub fn add_vector_load(&self, b: &mut [C64], g: &[Vec3], coef: C64) {
        let r = self.mesh.reference();
        for e in 0..self.mesh.n_elements() {
            let dofs = &self.element_dofs[e];
            for q in 0..8 {
                let gv = &g[8 * e + q];
                for l in 0..8 {
                    let f = coef * (r.weight * r.shape[q][l]);
                    for c in 0..3 {
                        b[dofs[3 * l + c]] += gv[c] * f;
                    }
                }
            }
        }
    }

    pub fn vector_load(&self, g: &[Vec3]) -> Vec<C64> {
        let mut b = vec![ZERO; self.n_dofs()];
        self.add_vector_load(&mut b, g, C64::new(1.0, 0.0));
        b
    }

    /// Samples a closed-form vector field at quadrature points.
    pub fn sample_points<F: Fn([f64; 3]) -> Vec3>(&self, f: F) -> PointValues {
        let mut out = Vec::with_capacity(self.mesh.n_quad());
        for e in 0..self.mesh.n_elements() {
            for q in 0..8 {
                out.push(f(self.mesh.quad_point(e, q)));
            }
        }
        out
    }

    /// Values of a nodal field at quadrature points.
    pub fn values_at_q(&self, v: &[C64]) -> PointValues {
        let r = self.mesh.reference();
        let mut out = Vec::with_capacity(self.mesh.n_quad());
        for e in 0..self.mesh.n_elements() {
            let dofs = &self.element_dofs[e];
            for q in 0..8 {
                let mut s = [ZERO; 3];
                for l in 0..8 {
                    for c in 0..3 {
                        s[c] += v[dofs[3 * l + c]] * r.shape[q][l];
                    }
                }
                out.push(s);
            }
        }
        out
    }

    /// Gradients d_d v_c at quadrature points: `[c][d]`.
    pub fn gradients_at_q(&self, v: &[C64]) -> Vec<[[C64; 3]; 3]> {
        let r = self.mesh.reference();
        let mut out = Vec::with_capacity(self.mesh.n_quad());
        for e in 0..self.mesh.n_elements() {
            let dofs = &self.element_dofs[e];
            for q in 0..8 {
                let mut g = [[ZERO; 3]; 3];
                for l in 0..8 {
                    for c in 0..3 {
                        let vc = v[dofs[3 * l + c]];
                        for d in 0..3 {
                            g[c][d] += vc * r.grad[q][l][d];
                        }
                    }
                }
                out.push(g);
            }
        }
        out
    }

    /// sym grad v at quadrature points.
    pub fn sym_grad(&self, v: &[C64]) -> StrainField {
        let values = self
            .gradients_at_q(v)
            .iter()
            .map(|g| {
                let h = 0.5;
                [
                    g[0][0],
                    g[1][1],
                    g[2][2],
                    (g[1][2] + g[2][1]) * h,
                    (g[0][2] + g[2][0]) * h,
                    (g[0][1] + g[1][0]) * h,
                ]
            })
            .collect();
        StrainField { values }
    }

    /// X v at quadrature points.
    pub fn x_field(&self, v: &[C64], chi: Chi) -> StrainField {
        let values = self.values_at_q(v).iter().map(|u| x_sym3(chi, u)).collect();
        StrainField { values }
    }

    /// (sym grad + iX) v at quadrature points.
    pub fn shifted_strain(&self, v: &[C64], chi: Chi) -> StrainField {
        self.sym_grad(v).add(&self.x_field(v, chi).scaled(I))
    }

    /// int A E : conj(F).
    pub fn pairing(&self, e_field: &StrainField, f_field: &StrainField) -> C64 {
        let w = self.mesh.reference().weight;
        let mut s = ZERO;
        for (gq, (e, f)) in e_field.values.iter().zip(&f_field.values).enumerate() {
            s += energy_density(self.tensor_at(gq), e, f);
        }
        s * w
    }

    /// int u . conj(v) of point values.
    pub fn l2_pairing(&self, u: &[Vec3], v: &[Vec3]) -> C64 {
        let w = self.mesh.reference().weight;
        let mut s = ZERO;
        for (a, b) in u.iter().zip(v) {
            for c in 0..3 {
                s += a[c] * b[c].conj();
            }
        }
        s * w
    }

    /// int of point values, componentwise.
    pub fn integral(&self, u: &[Vec3]) -> Vec3 {
        let w = self.mesh.reference().weight;
        let mut s = [ZERO; 3];
        for a in u {
            for c in 0..3 {
                s[c] += a[c] * w;
            }
        }
        s
    }

    /// Coordinates of all quadrature points.
    pub fn quad_points(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.mesh.n_quad());
        for e in 0..self.mesh.n_elements() {
            for q in 0..8 {
                out.push(self.mesh.quad_point(e, q));
            }
        }
        out
    }
}

/// sum_d sigma_{c d} g_d with sigma in Voigt tensor components.
#[inline]
fn contract_row(sig: &[C64; 6], c: usize, g: &Vec3) -> C64 {
    match c {
        0 => sig[0] * g[0] + sig[5] * g[1] + sig[4] * g[2],
        1 => sig[5] * g[0] + sig[1] * g[1] + sig[3] * g[2],
        _ => sig[4] * g[0] + sig[3] * g[1] + sig[2] * g[2],
    }
}

/// Hermitian form x^H A y.
pub fn inner<T>(x: &[C64], a: &CsrMatrix<T>, y: &[C64]) -> C64
where
    T: crate::sparse::Scalar,
    C64: std::ops::Mul<T, Output = C64>,
{
    let ay = a.mul_vec(y);
    let ay: Vec<C64> = ay;
    x.iter().zip(&ay).map(|(u, v)| <C64 as std::ops::Mul<C64>>::mul(u.conj(), *v)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::ElasticityTensor;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn iso_cell(n: usize, n3: usize) -> Cell {
        let a = ElasticityTensor::isotropic(1.0, 1.0).unwrap();
        Cell::new(CellMesh::new(n, n, n3).unwrap(), MaterialField::homogeneous(a))
    }

    #[test]
    fn x_symbol_examples() {
        let pi = std::f64::consts::PI;
        let x = x_symbol([pi, 0.0], [ZERO, ZERO, c(1.0)]);
        assert!((x[0][2] - c(pi / 2.0)).norm() < 1e-15 && (x[2][0] - c(pi / 2.0)).norm() < 1e-15);
        assert_eq!(x[0][0], ZERO);
        let y = x_symbol([1.0, 1.0], [c(1.0), ZERO, ZERO]);
        assert_eq!(y[0][0], c(1.0));
        assert_eq!(y[0][1], c(0.5));
        assert_eq!(y[1][0], c(0.5));
        assert_eq!(y[0][2], ZERO);
        assert_eq!(y[2][2], ZERO);
    }

    #[test]
    fn mass_of_simple_fields() {
        let cell = iso_cell(3, 4);
        let m = cell.mass();
        let e1 = cell.mesh().interpolate(|_| [c(1.0), ZERO, ZERO]);
        let e2 = cell.mesh().interpolate(|_| [ZERO, c(1.0), ZERO]);
        let x3 = cell.mesh().interpolate(|x| [ZERO, ZERO, c(x[2])]);
        assert!((inner(&e1, &m, &e1) - c(1.0)).norm() < 1e-12);
        assert!(inner(&e1, &m, &e2).norm() < 1e-15);
        assert!((inner(&x3, &m, &x3) - c(1.0 / 12.0)).norm() < 1e-14);
    }

    #[test]
    fn stiffness_hermitian_and_kernel_at_zero() {
        let cell = iso_cell(3, 2);
        let k = cell.stiffness([0.4, -1.1]);
        assert!(k.hermitian_defect() < 1e-12 * k.frobenius_norm());
        let k0 = cell.stiffness([0.0, 0.0]);
        for comp in 0..3 {
            let v = cell.mesh().interpolate(|_| {
                let mut u = [ZERO; 3];
                u[comp] = c(1.0);
                u
            });
            let kv = k0.mul_vec(&v);
            assert!(kv.iter().map(|x| x.norm()).fold(0.0, f64::max) < 1e-12);
        }
    }

    #[test]
    fn bending_trial_field_rayleigh_quotient() {
        // Exact energy of the bending profile: (lambda + 2 mu) |chi|^4 / 12.
        let cell = iso_cell(4, 4);
        let chi = [0.1, 0.0];
        let p = cell.mesh().interpolate(|x| profile_vector(chi, &[ZERO, ZERO, c(1.0)], x[2]));
        let k = cell.stiffness(chi);
        let m = cell.mass();
        let t4 = 0.1f64.powi(4);
        let rq = inner(&p, &k, &p).re / inner(&p, &m, &p).re;
        let exact = 3.0 * t4 / 12.0 / (1.0 + 0.01 / 12.0);
        assert!((rq - exact).abs() < 1e-8 * exact, "{rq} vs {exact}");
        let nu = 1.0 / 5.0;
        assert!(rq <= t4 / (12.0 * nu) / (1.0 + 0.01 / 12.0));
    }

    #[test]
    fn vector_load_moments() {
        let cell = iso_cell(2, 4);
        let g = cell.sample_points(|_| [ZERO, ZERO, c(1.0)]);
        let b = cell.vector_load(&g);
        let e3 = cell.mesh().interpolate(|_| [ZERO, ZERO, c(1.0)]);
        let dot: C64 = b.iter().zip(&e3).map(|(x, y)| x * y.conj()).sum();
        assert!((dot - c(1.0)).norm() < 1e-14);
        let g = cell.sample_points(|x| [c(x[2]), ZERO, ZERO]);
        let b = cell.vector_load(&g);
        let e1 = cell.mesh().interpolate(|_| [c(1.0), ZERO, ZERO]);
        let x3 = cell.mesh().interpolate(|x| [c(x[2]), ZERO, ZERO]);
        let d1: C64 = b.iter().zip(&e1).map(|(x, y)| x * y.conj()).sum();
        let d2: C64 = b.iter().zip(&x3).map(|(x, y)| x * y.conj()).sum();
        assert!(d1.norm() < 1e-15);
        assert!((d2 - c(1.0 / 12.0)).norm() < 1e-14);
    }

    #[test]
    fn strain_load_zero_and_orthogonal() {
        let cell = iso_cell(2, 2);
        let z = StrainField::zeros(cell.mesh());
        assert!(cell.strain_load(&z, TestOp::SymGrad, [0.0, 0.0], c(1.0)).iter().all(|x| *x == ZERO));
    }
}
