//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test -p platehomog --test acceptance -- --test-threads=1`
//! to get the lines in order.

mod common;

use common::*;
use platehomog::assembly::chi_norm;
use platehomog::cell_mesh::ParityMasks;
use platehomog::cell_problems::{run_cascade, CellSolver, Force, Mode};
use platehomog::fiber_spectrum::{fiber_spectrum, korn_probe, scaling_sweep, EigenOptions, KornConvention};
use platehomog::fit::{self, logspace};
use platehomog::homogenised::{compute_a_hom, compute_l, profile_pair};
use platehomog::resolvent_lab::{ansatz_rates, expected_slopes, theorem_sweep, ChiGrid, GapSpec, OutputComponent, Theorem};
use platehomog::sweep_io::{run_plan, AnsatzPlan, MaterialSpec, PhaseSpec, PlanConfig, PlanKind, SpectrumPlan, Tolerances, Values};
use platehomog::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn m_dot(solver: &CellSolver, a: &[C64], b: &[C64]) -> C64 {
    let mb = solver.mass().mul_vec(b);
    a.iter().zip(&mb).map(|(x, y)| x.conj() * y).sum()
}

#[test]
fn criterion_01_kernel_at_zero() {
    let mut ok = true;
    let mut detail = String::new();
    for field in [platehomog::material::MaterialField::homogeneous(iso()), checkerboard()] {
        let s = solver(field, [6, 6, 6]);
        let masks = ParityMasks::new(s.cell().mesh());
        let rec = fiber_spectrum(s.cell(), &masks, [0.0, 0.0], 4, true, &EigenOptions::default()).unwrap();
        let lam = &rec.eigenvalues;
        let small = lam.iter().filter(|&&l| l <= 1e-10 * lam[3]).count();
        let consts: Vec<Vec<C64>> = (0..3)
            .map(|j| {
                let mut e = [C64::new(0.0, 0.0); 3];
                e[j] = C64::new(1.0, 0.0);
                s.constant(e)
            })
            .collect();
        let mut worst: f64 = 0.0;
        for v in rec.vectors.as_ref().unwrap().iter().take(3) {
            let mut r = v.clone();
            for c in &consts {
                let coef = m_dot(&s, c, v) / m_dot(&s, c, c);
                for (ri, ci) in r.iter_mut().zip(c) {
                    *ri -= coef * ci;
                }
            }
            worst = worst.max((m_dot(&s, &r, &r).re / m_dot(&s, v, v).re).sqrt());
        }
        ok &= small == 3 && worst <= 1e-8;
        detail += &format!("[{small} zero eigenvalues, lam4 {:.3e}, constant residual {worst:.1e}] ", lam[3]);
    }
    report("1", ok, &detail);
    assert!(ok);
}

#[test]
fn criterion_02_spectral_scaling() {
    let mags = logspace(0.01, 0.1, 6);
    let mut ok = true;
    let mut detail = String::new();
    for (name, field) in [("iso", platehomog::material::MaterialField::homogeneous(iso())), ("checkerboard", checkerboard())] {
        let t0 = std::time::Instant::now();
        let cell = solver(field, [10, 10, 10]).cell().clone();
        let r = scaling_sweep(&cell, [1.0, 0.0], &mags, 4, &EigenOptions::default()).unwrap();
        let (a, b, c) = (r.slope_first.slope, r.slope_pair.slope, r.slope_fourth.slope);
        ok &= (a - 4.0).abs() <= 0.15 && (b - 2.0).abs() <= 0.15 && c.abs() <= 0.2;
        ok &= t0.elapsed().as_secs() < 300;
        detail += &format!("{name}: {a:.3}/{b:.3}/{c:.3} in {:.0?}; ", t0.elapsed());
    }
    report("2", ok, &detail);
    assert!(ok);
}

#[test]
fn criterion_03_homogenised_tensor_oracle() {
    let l = compute_l(&solver(platehomog::material::MaterialField::homogeneous(iso()), [2, 2, 4])).unwrap();
    let exact = (l.l2[0][0] - 8.0 / 3.0).abs();
    let mut errs = Vec::new();
    for n3 in [4, 8, 16] {
        let t = compute_l(&solver(platehomog::material::MaterialField::homogeneous(iso()), [2, 2, n3])).unwrap();
        let scale = t.l2.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs())) / 12.0;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = t.l2[i][j] / 12.0;
                let d = (t.l1[i][j] - target).abs();
                worst = worst.max(if target.abs() > 1e-12 * scale { d / target.abs() } else { d / scale });
            }
        }
        errs.push(worst);
    }
    let order = fit::loglog(&[4.0, 8.0, 16.0], &errs, 3, 0.0).unwrap().slope.abs();
    let ok = exact <= 1e-10 && errs[1] <= 0.02 && errs[2] <= 0.005 && (order - 2.0).abs() <= 0.3;
    report(
        "3",
        ok,
        &format!("|L2_11 - 8/3| = {exact:.1e}; L1 vs L2/12: n3=8 {:.3}%, n3=16 {:.3}%, order {order:.2}", errs[1] * 100.0, errs[2] * 100.0),
    );
    assert!(ok);
}

#[test]
fn criterion_04_block_decoupling() {
    let s = solver(planar_raster(), [6, 6, 4]);
    let cross = compute_l(&s).unwrap().cross_block_ratio();
    let masks = s.masks();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let n = s.n_dofs();
    for _ in 0..20 {
        let chi = random_chi(&mut rng, 1e-3, 3.0);
        let k = s.cell().stiffness(chi);
        // K in parity coordinates: columns K e_j for the parity basis vectors
        let mut off = 0.0;
        for j in (0..n).step_by(7) {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[j] = C64::new(1.0, 0.0);
            let col = masks.to_parity_coords(&k.mul_vec(&masks.from_parity_coords(&e)));
            let first = masks.odd_mask[j];
            for (i, v) in col.iter().enumerate() {
                if masks.odd_mask[i] != first {
                    off += v.norm_sqr();
                }
            }
        }
        worst = worst.max(off.sqrt() / k.frobenius_norm());
    }
    let ok = cross <= 1e-10 && worst <= 1e-12;
    report("4", ok, &format!("L cross block {cross:.1e}; K parity cross block {worst:.1e} over 20 chi"));
    assert!(ok);
}

#[test]
fn criterion_05_symbol_identity() {
    let fields = [platehomog::material::MaterialField::homogeneous(iso()), checkerboard(), planar_raster(), general_raster()];
    let solvers: Vec<CellSolver> = fields.into_iter().map(|f| solver(f, [4, 4, 4])).collect();
    let tensors: Vec<_> = solvers.iter().map(|s| compute_l(s).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let k = case % solvers.len();
        let chi = random_chi(&mut rng, 1e-2, 2.0);
        let m: [C64; 3] = [0, 1, 2].map(|_| C64::new(rng.random::<f64>() * 2.0 - 1.0, 0.0));
        let (sym, _) = compute_a_hom(&solvers[k], chi).unwrap();
        let lhs = sym.form(&m, &m);
        let p = profile_pair(chi, &m);
        let rhs = tensors[k].form(&p, &p);
        worst = worst.max((lhs - rhs).norm() / rhs.norm().max(1e-300));
    }
    let ok = worst <= 1e-8;
    report("5", ok, &format!("max relative mismatch {worst:.1e} over 50 cases"));
    assert!(ok);
}

#[test]
fn criterion_06_cascade_solvability() {
    let planar = [solver(checkerboard(), [4, 4, 4]), solver(planar_raster(), [3, 3, 4])];
    let general = [solver(general_raster(), [3, 3, 4]), solver(platehomog::material::MaterialField::homogeneous(rotated_cubic()), [2, 2, 4])];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for case in 0..20 {
        let chi = random_chi(&mut rng, 1e-2, 1.0);
        for mode in Mode::ALL {
            let (s, force) = match mode.parity() {
                Some(_) => (&planar[case % 2], random_force(&mut rng, Some(mode == Mode::FirstSubspace))),
                None => (&general[case % 2], random_force(&mut rng, None)),
            };
            let b = run_cascade(s, chi, &force, mode, 2).map_err(|e| format!("case {case} {mode} chi {chi:?}: {e}")).unwrap();
            worst = worst.max(b.max_solvability());
            runs += 1;
        }
    }
    let ok = worst <= 1e-10;
    report("6", ok, &format!("max relative constant component {worst:.1e} over {runs} cascades"));
    assert!(ok);
}

/// Ansatz slope check for one mode; returns (pass, detail).
fn ansatz_case(field: platehomog::material::MaterialField, mode: Mode, force: &str) -> (bool, String) {
    let s = solver(field, [6, 6, 4]);
    let st = ansatz_rates(&s, &Force::preset(force).unwrap(), mode, [1.0, 0.7], &logspace(0.01, 0.1, 6)).unwrap();
    let exp = expected_slopes(mode);
    let mut ok = true;
    let mut detail = format!("{mode}:");
    for (d, fits) in st.slopes.iter().enumerate() {
        let got = [0, 1].map(|c| fits[c].map(|f| f.slope).unwrap_or(f64::NAN));
        for c in 0..2 {
            ok &= (got[c] - exp[d][c]).abs() <= 0.25;
        }
        detail += &format!(" depth {d} in-plane {:.2} (want {}), vertical {:.2} (want {});", got[0], exp[d][0], got[1], exp[d][1]);
    }
    if let Some(sens) = st.f3_sensitivity {
        ok &= sens <= 1e-12;
        detail += &format!(" f3 sensitivity {sens:.1e};");
    }
    (ok, detail)
}

#[test]
fn criterion_07_first_subspace_rates() {
    let (ok, d) = ansatz_case(planar_raster(), Mode::FirstSubspace, "first_oscillating");
    report("7", ok, &d);
    assert!(ok);
}

#[test]
fn criterion_08_second_subspace_rates() {
    let (ok, d) = ansatz_case(planar_raster(), Mode::SecondSubspace, "second_generic");
    report("8", ok, &d);
    assert!(ok);
}

#[test]
fn criterion_09_general_rates() {
    let (a, da) = ansatz_case(general_raster(), Mode::GeneralFirst, "oscillating");
    let (b, db) = ansatz_case(general_raster(), Mode::GeneralSecond, "generic");
    report("9", a && b, &format!("{da} {db}"));
    assert!(a && b);
}

#[test]
fn criterion_10_theorem_rates() {
    let t0 = std::time::Instant::now();
    let eps: Vec<f64> = (3..=6).map(|k| 2f64.powi(-k)).collect();
    let grid = ChiGrid::default();
    let cases = [
        (platehomog::material::MaterialField::homogeneous(iso()), GapSpec::new(Theorem::Membrane, 0.0, 0.0, OutputComponent::All), 1.0, 0.3),
        (planar_raster(), GapSpec::new(Theorem::Bending, 2.0, 1.0, OutputComponent::Vertical), 1.0, 0.3),
        (planar_raster(), GapSpec::new(Theorem::Bending, 2.0, 1.0, OutputComponent::InPlane), 2.0, 0.4),
        (general_raster(), GapSpec::new(Theorem::General, 1.0, 0.0, OutputComponent::Vertical), 0.25, 0.2),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (field, spec, want, tol) in cases {
        let s = solver(field, [8, 8, 8]);
        let sw = theorem_sweep(&s, &spec, &eps, &grid).unwrap();
        let slope = sw.fit.map(|f| f.slope).unwrap_or(f64::NAN);
        let pass = (slope - want).abs() <= tol && sw.rows.iter().all(|r| r.status == "ok");
        ok &= pass;
        detail += &format!(
            "{} {}: slope {slope:.2} (want {want} +- {tol}) {}; ",
            spec.theorem,
            spec.component.name(),
            if pass { "ok" } else { "MISS" }
        );
    }
    ok &= t0.elapsed().as_secs() < 1800;
    detail += &format!("total {:.0?}", t0.elapsed());
    report("10", ok, &detail);
    assert!(ok);
}

#[test]
fn criterion_11_korn_stability() {
    let mut maxes = Vec::new();
    for n in [8, 12] {
        let cell = solver(checkerboard(), [n, n, n]).cell().clone();
        let mut mx = [0.0f64; 5];
        for r in logspace(0.05, 1.0, 4) {
            for k in 0..4 {
                let a = std::f64::consts::PI * k as f64 / 4.0 + 0.1;
                let chi = [r * a.cos(), r * a.sin()];
                assert!(chi_norm(chi) > 0.0);
                let rep = korn_probe(&cell, chi, 8, 4, 5, KornConvention::HalfRotation, &EigenOptions::default()).unwrap();
                for i in 0..5 {
                    mx[i] = mx[i].max(rep.max_ratios[i]);
                }
            }
        }
        maxes.push(mx);
    }
    let change: Vec<f64> = (0..5).map(|i| (maxes[1][i] - maxes[0][i]).abs() / maxes[1][i]).collect();
    let worst = change.iter().cloned().fold(0.0, f64::max);
    let ok = worst < 0.1;
    report("11", ok, &format!("max ratios n=12 {:.3?}; largest relative change {:.2}%", maxes[1], worst * 100.0));
    assert!(ok);
}

#[test]
fn criterion_12_determinism() {
    let cfg = PlanConfig {
        plan: PlanKind::Spectrum,
        mesh: [4, 4, 4],
        seed: 3,
        material: MaterialSpec {
            phases: vec![PhaseSpec::Isotropic { lambda: 1.0, mu: 1.0 }, PhaseSpec::Isotropic { lambda: 10.0, mu: 10.0 }],
            raster: None,
            checkerboard: Some(2),
        },
        spectrum: Some(SpectrumPlan { direction: [1.0, 0.3], magnitudes: Values::Log { min: 0.01, max: 0.1, count: 5 }, nev: 5 }),
        ansatz: None,
        theorem: None,
        korn: None,
        tolerances: Tolerances::default(),
    };
    let mut ansatz_cfg = cfg.clone();
    ansatz_cfg.plan = PlanKind::AnsatzRates;
    ansatz_cfg.ansatz = Some(AnsatzPlan {
        mode: Mode::SecondSubspace,
        force: "second_generic".into(),
        direction: [1.0, 0.7],
        magnitudes: Values::Log { min: 0.01, max: 0.1, count: 6 },
    });
    let run = |c: &PlanConfig| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        pool.install(|| run_plan(c).unwrap().table.to_csv_string().unwrap())
    };
    let mut ok = true;
    let mut detail = String::new();
    for c in [&cfg, &ansatz_cfg] {
        let (a, b) = (run(c), run(c));
        ok &= a == b && !a.is_empty();
        detail += &format!("{:?}: {} bytes, identical = {}; ", c.plan, a.len(), a == b);
    }
    report("12", ok, &detail);
    assert!(ok);
}
