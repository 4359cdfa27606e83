//! Elasticity tensors in Voigt form and piecewise-constant periodic fields.
//!
//! Voigt order is (11, 22, 33, 23, 13, 12). Strains carry engineering shear
//! factors (2E_23, 2E_13, 2E_12), so `voigt[I][J]` is exactly `A_ijkl` and
//! the stress of a strain vector is a plain matrix product.

use faer::{Mat, Side};
use num_complex::Complex64 as C64;
use thiserror::Error;

/// Relative tolerance for the structural planar-symmetry test.
pub const PLANAR_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("isotropic moduli not positive definite: mu = {mu}, 3 lambda + 2 mu = {bulk3}")]
    IsotropicNotPositive { mu: f64, bulk3: f64 },
    #[error("Voigt matrix is not symmetric (residual {0:e})")]
    NotSymmetric(f64),
    #[error("elasticity tensor not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("expected 21 upper-triangular Voigt entries, got {0}")]
    UpperTriangleLength(usize),
    #[error("raster is empty")]
    EmptyRaster,
    #[error("raster row {row} has {got} entries, expected {expected}")]
    RaggedRaster { row: usize, got: usize, expected: usize },
    #[error("raster entry ({i}, {j}) = {index} but only {phases} phases are defined")]
    PhaseOutOfRange { i: usize, j: usize, index: usize, phases: usize },
}

/// Voigt slot of the tensor index pair (i, j).
pub const fn voigt_index(i: usize, j: usize) -> usize {
    match (i, j) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (1, 2) | (2, 1) => 3,
        (0, 2) | (2, 0) => 4,
        _ => 5,
    }
}

/// Tensor index pair of a Voigt slot.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

pub type Full4 = [[[[f64; 3]; 3]; 3]; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityTensor {
    voigt: [[f64; 6]; 6],
    nu_low: f64,
    nu_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryReport {
    pub major_residual: f64,
    pub nu_low: f64,
    pub nu_high: f64,
    pub planar_symmetric: bool,
    /// Largest |A_ijkl| among components with an odd number of indices equal to 3,
    /// relative to the largest entry.
    pub planar_residual: f64,
}

impl ElasticityTensor {
    pub fn from_voigt(voigt: [[f64; 6]; 6]) -> Result<Self, MaterialError> {
        let scale = max_abs(&voigt).max(f64::MIN_POSITIVE);
        let mut asym: f64 = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                asym = asym.max((voigt[i][j] - voigt[j][i]).abs());
            }
        }
        if asym > 1e-14 * scale {
            return Err(MaterialError::NotSymmetric(asym));
        }
        let (nu_low, nu_high) = mandel_extremes(&voigt);
        if nu_low <= 0.0 {
            return Err(MaterialError::NotPositiveDefinite(nu_low));
        }
        Ok(Self { voigt, nu_low, nu_high })
    }

    /// Row-major upper triangle: (0,0), (0,1), ..., (0,5), (1,1), ..., (5,5).
    pub fn from_upper_triangle(entries: &[f64]) -> Result<Self, MaterialError> {
        if entries.len() != 21 {
            return Err(MaterialError::UpperTriangleLength(entries.len()));
        }
        let mut v = [[0.0; 6]; 6];
        let mut it = entries.iter();
        for i in 0..6 {
            for j in i..6 {
                let x = *it.next().unwrap();
                v[i][j] = x;
                v[j][i] = x;
            }
        }
        Self::from_voigt(v)
    }

    pub fn isotropic(lambda: f64, mu: f64) -> Result<Self, MaterialError> {
        let bulk3 = 3.0 * lambda + 2.0 * mu;
        if !(mu > 0.0 && bulk3 > 0.0) {
            return Err(MaterialError::IsotropicNotPositive { mu, bulk3 });
        }
        let mut v = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                v[i][j] = lambda;
            }
            v[i][i] = lambda + 2.0 * mu;
            v[i + 3][i + 3] = mu;
        }
        Self::from_voigt(v)
    }

    /// Cubic symmetry aligned with the coordinate axes.
    pub fn cubic(c11: f64, c12: f64, c44: f64) -> Result<Self, MaterialError> {
        let mut v = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                v[i][j] = c12;
            }
            v[i][i] = c11;
            v[i + 3][i + 3] = c44;
        }
        Self::from_voigt(v)
    }

    pub fn voigt(&self) -> &[[f64; 6]; 6] {
        &self.voigt
    }

    /// Extreme eigenvalues of A on symmetric matrices (Frobenius product).
    pub fn nu_bounds(&self) -> (f64, f64) {
        (self.nu_low, self.nu_high)
    }

    pub fn component(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.voigt[voigt_index(i, j)][voigt_index(k, l)]
    }

    pub fn to_full(&self) -> Full4 {
        let mut a = [[[[0.0; 3]; 3]; 3]; 3];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, blk) in row.iter_mut().enumerate() {
                for (k, col) in blk.iter_mut().enumerate() {
                    for (l, x) in col.iter_mut().enumerate() {
                        *x = self.component(i, j, k, l);
                    }
                }
            }
        }
        a
    }

    pub fn from_full(a: &Full4) -> Result<Self, MaterialError> {
        let mut v = [[0.0; 6]; 6];
        for (p, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            for (q, &(k, l)) in VOIGT_PAIRS.iter().enumerate() {
                v[p][q] = a[i][j][k][l];
            }
        }
        // Exact symmetrisation removes rounding left by rotations.
        for p in 0..6 {
            for q in 0..p {
                let m = 0.5 * (v[p][q] + v[q][p]);
                v[p][q] = m;
                v[q][p] = m;
            }
        }
        Self::from_voigt(v)
    }

    /// Push-forward A'_ijkl = R_ia R_jb R_kc R_ld A_abcd.
    pub fn rotated(&self, r: &[[f64; 3]; 3]) -> Result<Self, MaterialError> {
        let a = self.to_full();
        let mut out = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let mut s = 0.0;
                        for p in 0..3 {
                            for q in 0..3 {
                                for m in 0..3 {
                                    for n in 0..3 {
                                        s += r[i][p] * r[j][q] * r[k][m] * r[l][n] * a[p][q][m][n];
                                    }
                                }
                            }
                        }
                        out[i][j][k][l] = s;
                    }
                }
            }
        }
        Self::from_full(&out)
    }

    /// Conjugation by the reflection x3 -> -x3.
    pub fn reflected_x3(&self) -> Self {
        let mut v = self.voigt;
        for (p, row) in v.iter_mut().enumerate() {
            for (q, x) in row.iter_mut().enumerate() {
                if odd_vertical(p) != odd_vertical(q) {
                    *x = -*x;
                }
            }
        }
        Self { voigt: v, ..*self }
    }

    pub fn validate(&self) -> SymmetryReport {
        let scale = max_abs(&self.voigt).max(f64::MIN_POSITIVE);
        let mut major: f64 = 0.0;
        let mut planar: f64 = 0.0;
        for p in 0..6 {
            for q in 0..6 {
                major = major.max((self.voigt[p][q] - self.voigt[q][p]).abs());
                if odd_vertical(p) != odd_vertical(q) {
                    planar = planar.max(self.voigt[p][q].abs());
                }
            }
        }
        SymmetryReport {
            major_residual: major,
            nu_low: self.nu_low,
            nu_high: self.nu_high,
            planar_symmetric: planar <= PLANAR_TOL * scale,
            planar_residual: planar / scale,
        }
    }

    /// A_{a b c 3} = 0 and A_{a 3 3 3} = 0 for in-plane a, b, c.
    pub fn is_planar_symmetric(&self) -> bool {
        self.validate().planar_symmetric
    }

    /// Stress (tensor components in Voigt order) of an engineering strain.
    #[inline]
    pub fn stress(&self, e: &[C64; 6]) -> [C64; 6] {
        let mut s = [C64::new(0.0, 0.0); 6];
        for (p, sp) in s.iter_mut().enumerate() {
            let row = &self.voigt[p];
            for q in 0..6 {
                *sp += e[q] * row[q];
            }
        }
        s
    }
}

/// Voigt slots 23 and 13 carry one index 3 (odd under x3 -> -x3).
const fn odd_vertical(p: usize) -> bool {
    p == 3 || p == 4
}

fn max_abs(v: &[[f64; 6]; 6]) -> f64 {
    v.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn mandel_extremes(v: &[[f64; 6]; 6]) -> (f64, f64) {
    let d = [1.0, 1.0, 1.0, 2f64.sqrt(), 2f64.sqrt(), 2f64.sqrt()];
    let m = Mat::<f64>::from_fn(6, 6, |i, j| d[i] * v[i][j] * d[j]);
    match m.self_adjoint_eigen(Side::Lower) {
        Ok(eig) => {
            let s = eig.S().column_vector();
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..6 {
                lo = lo.min(s[i]);
                hi = hi.max(s[i]);
            }
            (lo, hi)
        }
        Err(_) => (f64::NAN, f64::NAN),
    }
}

/// Rotation by `angle` (radians) about the y1 axis.
pub fn rotation_about_y1(angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// Piecewise-constant Q_r-periodic field; `raster[i1][i2]` covers the pixel
/// [i1/n_y1, (i1+1)/n_y1) x [i2/n_y2, (i2+1)/n_y2).
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    raster: Vec<Vec<usize>>,
    phases: Vec<ElasticityTensor>,
    planar_symmetric: bool,
}

impl MaterialField {
    pub fn new(raster: Vec<Vec<usize>>, phases: Vec<ElasticityTensor>) -> Result<Self, MaterialError> {
        let Some(first) = raster.first() else {
            return Err(MaterialError::EmptyRaster);
        };
        let n2 = first.len();
        if n2 == 0 {
            return Err(MaterialError::EmptyRaster);
        }
        for (i, row) in raster.iter().enumerate() {
            if row.len() != n2 {
                return Err(MaterialError::RaggedRaster { row: i, got: row.len(), expected: n2 });
            }
            for (j, &index) in row.iter().enumerate() {
                if index >= phases.len() {
                    return Err(MaterialError::PhaseOutOfRange { i, j, index, phases: phases.len() });
                }
            }
        }
        let planar_symmetric = phases.iter().all(ElasticityTensor::is_planar_symmetric);
        Ok(Self { raster, phases, planar_symmetric })
    }

    pub fn homogeneous(a: ElasticityTensor) -> Self {
        Self { planar_symmetric: a.is_planar_symmetric(), raster: vec![vec![0]], phases: vec![a] }
    }

    /// n x n checkerboard alternating between `a` (at pixel (0,0)) and `b`.
    pub fn checkerboard(a: ElasticityTensor, b: ElasticityTensor, n: usize) -> Self {
        let raster = (0..n).map(|i| (0..n).map(|j| (i + j) % 2).collect()).collect();
        Self::new(raster, vec![a, b]).expect("checkerboard indices are valid")
    }

    pub fn raster(&self) -> &[Vec<usize>] {
        &self.raster
    }

    pub fn phases(&self) -> &[ElasticityTensor] {
        &self.phases
    }

    pub fn planar_symmetric(&self) -> bool {
        self.planar_symmetric
    }

    pub fn phase_index(&self, y: [f64; 2]) -> usize {
        let n1 = self.raster.len();
        let n2 = self.raster[0].len();
        let i = pixel(y[0], n1);
        let j = pixel(y[1], n2);
        self.raster[i][j]
    }

    pub fn sample(&self, y: [f64; 2]) -> &ElasticityTensor {
        &self.phases[self.phase_index(y)]
    }
}

fn pixel(t: f64, n: usize) -> usize {
    let w = t.rem_euclid(1.0);
    ((w * n as f64).floor() as usize).min(n - 1)
}
