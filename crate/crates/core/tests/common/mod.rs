//! Materials, forces and reporting shared by the integration tests.
#![allow(dead_code)]

use platehomog::assembly::Cell;
use platehomog::cell_mesh::CellMesh;
use platehomog::cell_problems::{CellSolver, Force, ForceTerm, Wave};
use platehomog::material::{rotation_about_y1, ElasticityTensor, MaterialField};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

pub fn iso() -> ElasticityTensor {
    ElasticityTensor::isotropic(1.0, 1.0).unwrap()
}

pub fn stiff() -> ElasticityTensor {
    ElasticityTensor::isotropic(10.0, 10.0).unwrap()
}

pub fn rotated_cubic() -> ElasticityTensor {
    ElasticityTensor::cubic(3.0, 1.0, 1.5).unwrap().rotated(&rotation_about_y1(0.4)).unwrap()
}

/// Three-by-three raster without a centre of symmetry.
pub fn asymmetric_raster() -> Vec<Vec<usize>> {
    vec![vec![0, 1, 1], vec![0, 0, 1], vec![0, 0, 0]]
}

/// Planar-symmetric two-phase field, contrast 10, no in-plane centre of symmetry.
pub fn planar_raster() -> MaterialField {
    MaterialField::new(asymmetric_raster(), vec![iso(), stiff()]).unwrap()
}

/// Two-phase field with a rotated cubic phase (not planar-symmetric).
pub fn general_raster() -> MaterialField {
    MaterialField::new(asymmetric_raster(), vec![rotated_cubic(), stiff()]).unwrap()
}

pub fn checkerboard() -> MaterialField {
    MaterialField::checkerboard(iso(), stiff(), 2)
}

pub fn solver(field: MaterialField, n: [usize; 3]) -> CellSolver {
    CellSolver::new(Cell::new(CellMesh::new(n[0], n[1], n[2]).unwrap(), field)).unwrap()
}

pub fn random_chi(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 2] {
    let r = lo * (hi / lo).powf(rng.random::<f64>());
    let a = rng.random::<f64>() * std::f64::consts::TAU;
    [r * a.cos(), r * a.sin()]
}

/// Random closed-form force. `parity`: Some(true) keeps in-plane odd /
/// vertical even powers of x3, Some(false) the opposite, None anything.
pub fn random_force(rng: &mut ChaCha8Rng, parity: Option<bool>) -> Force {
    let mut terms = Vec::new();
    for _ in 0..5 {
        let component = rng.random_range(0..3);
        let mut p: u32 = rng.random_range(0..3);
        if let Some(first) = parity {
            let want_odd = (component < 2) == first;
            if (p % 2 == 1) != want_odd {
                p += 1;
            }
        }
        let k = [rng.random_range(-1..=1), rng.random_range(-1..=1)];
        let wave = match rng.random_range(0..3) {
            0 => Wave::One,
            1 => Wave::Cos(k),
            _ => Wave::Sin(k),
        };
        terms.push(ForceTerm { component, coef: rng.random::<f64>() * 2.0 - 1.0, x3_power: p, wave });
    }
    Force::Terms(terms)
}

/// Writes one criterion line straight to stderr so it survives output capture.
pub fn report(id: &str, pass: bool, detail: &str) {
    let mut e = std::io::stderr().lock();
    let _ = writeln!(e, "criterion {id:>2}: {}  {detail}", if pass { "PASS" } else { "FAIL" });
}
