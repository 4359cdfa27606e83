//! Structured Q1 hexahedral mesh of the cell [0,1)^2 x (-1/2, 1/2).
//!
//! In-plane directions are periodic, so node (n1, j, k) is node (0, j, k).
//! Nodes are numbered lexicographically with x3 fastest; DOF `3*node + c`.

use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeshError {
    #[error("element counts must be at least 2, got ({0}, {1}, {2})")]
    TooCoarse(usize, usize, usize),
    #[error("n3 must be even (got {0}) so that x3 = 0 is a node plane")]
    OddThickness(usize),
}

/// Reference data shared by every element of the uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RefElement {
    /// Quadrature point offsets inside the element, as fractions of h.
    pub points: [[f64; 3]; 8],
    /// Shape function values `shape[q][l]`.
    pub shape: [[f64; 8]; 8],
    /// Physical gradients `grad[q][l]`.
    pub grad: [[[f64; 3]; 8]; 8],
    /// Quadrature weight (identical for every point).
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMesh {
    n: [usize; 3],
    h: [f64; 3],
    reference: RefElement,
}

/// Local corner l = a + 2b + 4c sits at offset (a, b, c).
pub const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

impl CellMesh {
    pub fn new(n1: usize, n2: usize, n3: usize) -> Result<Self, MeshError> {
        if n1 < 2 || n2 < 2 || n3 < 2 {
            return Err(MeshError::TooCoarse(n1, n2, n3));
        }
        if n3 % 2 != 0 {
            return Err(MeshError::OddThickness(n3));
        }
        let h = [1.0 / n1 as f64, 1.0 / n2 as f64, 1.0 / n3 as f64];
        let g = 0.5 / 3f64.sqrt();
        let gauss = [0.5 - g, 0.5 + g];
        let mut reference = RefElement {
            points: [[0.0; 3]; 8],
            shape: [[0.0; 8]; 8],
            grad: [[[0.0; 3]; 8]; 8],
            weight: h[0] * h[1] * h[2] / 8.0,
        };
        for q in 0..8 {
            let xi = [gauss[CORNERS[q][0]], gauss[CORNERS[q][1]], gauss[CORNERS[q][2]]];
            reference.points[q] = xi;
            for (l, corner) in CORNERS.iter().enumerate() {
                let f = |d: usize| if corner[d] == 1 { xi[d] } else { 1.0 - xi[d] };
                let df = |d: usize| if corner[d] == 1 { 1.0 / h[d] } else { -1.0 / h[d] };
                reference.shape[q][l] = f(0) * f(1) * f(2);
                reference.grad[q][l] = [df(0) * f(1) * f(2), f(0) * df(1) * f(2), f(0) * f(1) * df(2)];
            }
        }
        Ok(Self { n: [n1, n2, n3], h, reference })
    }

    pub fn counts(&self) -> [usize; 3] {
        self.n
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.h
    }

    pub fn reference(&self) -> &RefElement {
        &self.reference
    }

    pub fn n_nodes(&self) -> usize {
        self.n[0] * self.n[1] * (self.n[2] + 1)
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.n_nodes()
    }

    pub fn n_elements(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn n_quad(&self) -> usize {
        8 * self.n_elements()
    }

    /// Node index with periodic wrap of the in-plane indices.
    pub fn node(&self, i: usize, j: usize, k: usize) -> usize {
        ((i % self.n[0]) * self.n[1] + (j % self.n[1])) * (self.n[2] + 1) + k
    }

    pub fn node_ijk(&self, node: usize) -> [usize; 3] {
        let k = node % (self.n[2] + 1);
        let ij = node / (self.n[2] + 1);
        [ij / self.n[1], ij % self.n[1], k]
    }

    /// (y1, y2, x3) of a node; y in [0,1).
    pub fn node_coords(&self, node: usize) -> [f64; 3] {
        let [i, j, k] = self.node_ijk(node);
        [i as f64 * self.h[0], j as f64 * self.h[1], -0.5 + k as f64 * self.h[2]]
    }

    pub fn element_ijk(&self, e: usize) -> [usize; 3] {
        let k = e % self.n[2];
        let ij = e / self.n[2];
        [ij / self.n[1], ij % self.n[1], k]
    }

    pub fn element_nodes(&self, e: usize) -> [usize; 8] {
        let [i, j, k] = self.element_ijk(e);
        let mut out = [0; 8];
        for (l, c) in CORNERS.iter().enumerate() {
            out[l] = self.node(i + c[0], j + c[1], k + c[2]);
        }
        out
    }

    /// Coordinates of quadrature point q of element e (y not wrapped past 1).
    pub fn quad_point(&self, e: usize, q: usize) -> [f64; 3] {
        let [i, j, k] = self.element_ijk(e);
        let p = self.reference.points[q];
        [
            (i as f64 + p[0]) * self.h[0],
            (j as f64 + p[1]) * self.h[1],
            -0.5 + (k as f64 + p[2]) * self.h[2],
        ]
    }

    /// Global quadrature index of the mirror image (x3 -> -x3) of point `gq`.
    pub fn quad_mirror(&self, gq: usize) -> usize {
        let (e, q) = (gq / 8, gq % 8);
        let [i, j, k] = self.element_ijk(e);
        let em = (i * self.n[1] + j) * self.n[2] + (self.n[2] - 1 - k);
        let qm = (q % 4) + 4 * (1 - q / 4);
        8 * em + qm
    }

    /// Nodal interpolant of a closed-form vector field.
    pub fn interpolate<F: Fn([f64; 3]) -> [C64; 3]>(&self, f: F) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); self.n_dofs()];
        for node in 0..self.n_nodes() {
            let val = f(self.node_coords(node));
            v[3 * node..3 * node + 3].copy_from_slice(&val);
        }
        v
    }
}

/// The two x3-parity classes of a planar-symmetric plate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parity {
    /// In-plane components odd in x3, vertical component even (bending).
    First,
    /// In-plane components even, vertical component odd (membrane).
    Second,
}

/// Reflection bookkeeping. `R u` negates the in-plane components and mirrors
/// x3; the first class is `R u = u`, the second `R u = -u`.
///
/// The masks refer to the orthonormal parity coordinates produced by
/// [`ParityMasks::to_parity_coords`]: every coordinate belongs to exactly one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityMasks {
    mirror: Vec<usize>,
    sign: Vec<f64>,
    /// Parity coordinates spanning the first class.
    pub odd_mask: Vec<bool>,
    /// Parity coordinates spanning the second class.
    pub even_mask: Vec<bool>,
}

impl ParityMasks {
    pub fn new(mesh: &CellMesh) -> Self {
        let n3 = mesh.counts()[2];
        let nd = mesh.n_dofs();
        let mut mirror = vec![0; nd];
        let mut sign = vec![0.0; nd];
        for node in 0..mesh.n_nodes() {
            let [i, j, k] = mesh.node_ijk(node);
            let m = mesh.node(i, j, n3 - k);
            for c in 0..3 {
                mirror[3 * node + c] = 3 * m + c;
                sign[3 * node + c] = if c == 2 { 1.0 } else { -1.0 };
            }
        }
        let mut odd_mask = vec![false; nd];
        for d in 0..nd {
            let m = mirror[d];
            odd_mask[d] = if d == m { sign[d] > 0.0 } else { d < m };
        }
        let even_mask = odd_mask.iter().map(|b| !b).collect();
        Self { mirror, sign, odd_mask, even_mask }
    }

    pub fn reflect(&self, v: &[C64]) -> Vec<C64> {
        (0..v.len()).map(|d| v[self.mirror[d]] * self.sign[d]).collect()
    }

    /// Orthogonal projection onto one parity class.
    pub fn project(&self, v: &[C64], parity: Parity) -> Vec<C64> {
        let s = match parity {
            Parity::First => 1.0,
            Parity::Second => -1.0,
        };
        let r = self.reflect(v);
        v.iter().zip(&r).map(|(a, b)| (a + b * s) * 0.5).collect()
    }

    /// ||v - P v|| / ||v|| (0 for the zero vector).
    pub fn class_residual(&self, v: &[C64], parity: Parity) -> f64 {
        let p = self.project(v, parity);
        let num: f64 = v.iter().zip(&p).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = v.iter().map(|a| a.norm_sqr()).sum();
        if den == 0.0 {
            0.0
        } else {
            (num / den).sqrt()
        }
    }

    pub fn to_parity_coords(&self, v: &[C64]) -> Vec<C64> {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mut out = vec![C64::new(0.0, 0.0); v.len()];
        for d in 0..v.len() {
            let m = self.mirror[d];
            if d == m {
                out[d] = v[d];
            } else if d < m {
                out[d] = (v[d] + v[m] * self.sign[d]) * r;
                out[m] = (v[d] - v[m] * self.sign[d]) * r;
            }
        }
        out
    }

    pub fn from_parity_coords(&self, w: &[C64]) -> Vec<C64> {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mut out = vec![C64::new(0.0, 0.0); w.len()];
        for d in 0..w.len() {
            let m = self.mirror[d];
            if d == m {
                out[d] = w[d];
            } else if d < m {
                out[d] = (w[d] + w[m]) * r;
                out[m] = (w[d] - w[m]) * r * self.sign[d];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn counts_and_errors() {
        let m = CellMesh::new(2, 2, 2).unwrap();
        assert_eq!(m.n_nodes(), 12);
        assert_eq!(m.n_dofs(), 36);
        assert_eq!(CellMesh::new(2, 2, 3), Err(MeshError::OddThickness(3)));
        assert!(CellMesh::new(1, 2, 2).is_err());
    }

    #[test]
    fn weights_sum_to_unit_volume() {
        let m = CellMesh::new(4, 4, 4).unwrap();
        let total = m.reference().weight * m.n_quad() as f64;
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn periodic_identification_and_span() {
        let m = CellMesh::new(3, 4, 2).unwrap();
        assert_eq!(m.node(3, 1, 1), m.node(0, 1, 1));
        assert_eq!(m.node_coords(m.node(0, 0, 0))[2], -0.5);
        assert_eq!(m.node_coords(m.node(0, 0, 2))[2], 0.5);
    }

    #[test]
    fn partition_of_unity_and_gradients() {
        let m = CellMesh::new(3, 3, 4).unwrap();
        let r = m.reference();
        for q in 0..8 {
            let s: f64 = r.shape[q].iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
            for d in 0..3 {
                let g: f64 = r.grad[q].iter().map(|g| g[d]).sum();
                assert!(g.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parity_members() {
        let m = CellMesh::new(2, 2, 4).unwrap();
        let p = ParityMasks::new(&m);
        let vert = m.interpolate(|_| [c(0.0), c(0.0), c(1.0)]);
        let bend = m.interpolate(|x| [c(x[2]), c(0.0), c(0.0)]);
        let memb = m.interpolate(|_| [c(1.0), c(0.0), c(0.0)]);
        assert!(p.class_residual(&vert, Parity::First) < 1e-15);
        assert!(p.class_residual(&bend, Parity::First) < 1e-15);
        assert!(p.class_residual(&memb, Parity::Second) < 1e-15);
        assert!(p.class_residual(&memb, Parity::First) > 0.5);
        assert_eq!(p.reflect(&p.reflect(&bend)), bend);
        assert!(p.odd_mask.iter().zip(&p.even_mask).all(|(a, b)| a ^ b));
    }
}
