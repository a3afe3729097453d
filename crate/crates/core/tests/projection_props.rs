use proptest::prelude::*;

use epds::geometry::{PolyhedralCone, Sector, SectorLocus, TangentCone};
use epds::oracle::{coarse_spacing, oracle_project, OracleConfig};
use epds::projection::{feasible, project_partial, sector_project, vstar_selector, ProjectionSubspace};
use epds::suites::{projection_instances, ProjectionInstance};
use epds::Vector;

fn instance(seed: u64) -> ProjectionInstance {
    let (mut v, _, _, _) = projection_instances(1, seed, 6).unwrap();
    v.pop().expect("one feasible instance")
}

fn v2(a: f64, b: f64) -> Vector {
    Vector::from_column_slice(&[a, b])
}

fn sector_point(sec: &Sector, kind: u8, e: f64, frac: f64) -> Vector {
    let (lo, hi) = sec.u_interval(e);
    match kind % 4 {
        0 => Vector::zeros(2),
        1 => v2(e, sec.k1() * e),
        2 => v2(e, sec.k2() * e),
        _ => v2(e, lo + (hi - lo) * frac),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_is_minimal(seed in any::<u64>(), comp_seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let inst = instance(seed);
        let (cone, e, v) = (inst.cone(), inst.subspace(), inst.vector());
        let r = project_partial(&cone, &e, &v).unwrap();
        prop_assert!(cone.contains(&r.w));
        let best = r.correction_norm;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(comp_seed);
        // Competitors step from the optimum into the local feasible cone: directions
        // that increase every nearly active row, plus a free null-space part.
        let a = cone.rows();
        let b = a * e.basis();
        let slack = a * &r.w;
        let act: Vec<usize> = (0..a.nrows())
            .filter(|&i| slack[i] <= 1e-8 * (1.0 + r.w.norm()) * (1.0 + a.row(i).norm()))
            .collect();
        let k = e.n_cols();
        let b_act = epds::Matrix::from_fn(act.len(), k, |i, j| b[(act[i], j)]);
        let pinv = if act.is_empty() {
            epds::Matrix::zeros(k, 0)
        } else {
            b_act.clone().pseudo_inverse(1e-12).unwrap()
        };
        let null = epds::Matrix::identity(k, k) - &pinv * &b_act;
        let mut tried = 0;
        let mut attempts = 0;
        while tried < 100 && attempts < 10_000 {
            attempts += 1;
            let s = Vector::from_fn(act.len(), |_, _| rng.random_range(0.1..1.0));
            let z = Vector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
            let d = &pinv * s + &null * z;
            let t = 10f64.powi(rng.random_range(-6..1)) * (1.0 + r.eta.norm()) / d.norm().max(1e-300);
            let w2 = &v + e.basis() * (&r.eta + d * t);
            if a.nrows() > 0 && (a * &w2).min() < 0.0 {
                continue;
            }
            tried += 1;
            prop_assert!((&w2 - &v).norm() >= best - 1e-9);
        }
        prop_assert_eq!(tried, 100);
    }

    #[test]
    fn projection_is_idempotent(seed in any::<u64>()) {
        let inst = instance(seed);
        let (cone, e, v) = (inst.cone(), inst.subspace(), inst.vector());
        let w = project_partial(&cone, &e, &v).unwrap().w;
        let again = project_partial(&cone, &e, &w).unwrap();
        prop_assert_eq!(&again.w, &w);
        prop_assert_eq!(again.correction_norm, 0.0);
    }

    #[test]
    fn members_are_untouched(seed in any::<u64>(), shift in prop::collection::vec(-5.0..5.0f64, 6)) {
        let inst = instance(seed);
        let (cone, e) = (inst.cone(), inst.subspace());
        // Push a random point well inside by adding a positive combination of rows.
        let n = cone.dim();
        let mut x = Vector::from_column_slice(&shift[..n]);
        let rows = cone.rows();
        for i in 0..rows.nrows() {
            let s = (rows.row(i) * &x)[0];
            if s < 0.0 {
                let g = rows.row(i).transpose();
                x -= g * (2.0 * s / rows.row(i).norm_squared());
            }
        }
        prop_assume!(cone.contains(&x));
        let r = project_partial(&cone, &e, &x).unwrap();
        prop_assert_eq!(r.correction_norm, 0.0);
        prop_assert_eq!(r.w, x);
    }

    #[test]
    fn sector_output_is_a_branch_projection(
        k1 in -3.0..3.0f64, width in 0.05..4.0f64, kind in any::<u8>(),
        e in -5.0..5.0f64, frac in 0.0..1.0f64, edot in -5.0..5.0f64, fc1 in -10.0..10.0f64,
    ) {
        let sec = Sector::new(k1, k1 + width).unwrap();
        let s = sector_point(&sec, kind, e, frac);
        let w = v2(edot, fc1);
        let r = sector_project(&sec, &s, &w).unwrap();
        let sub = ProjectionSubspace::sector();
        let expected = match sec.tangent_cone(&s).unwrap() {
            TangentCone::Convex(c) => project_partial(&c, &sub, &w).unwrap().w,
            TangentCone::Union(k, mk) => {
                if feasible(&k, &sub, &w) {
                    project_partial(&k, &sub, &w).unwrap().w
                } else {
                    project_partial(&mk, &sub, &w).unwrap().w
                }
            }
        };
        prop_assert!((&r.w - &expected).norm() <= 1e-12 * (1.0 + w.norm()));
        prop_assert_eq!(r.w[0], edot);
    }

    #[test]
    fn selector_matches_projection(
        k1 in -3.0..3.0f64, width in 0.05..4.0f64, kind in any::<u8>(),
        e in -5.0..5.0f64, frac in 0.0..1.0f64, edot in -5.0..5.0f64, fc1 in -10.0..10.0f64,
        zero_rate in any::<bool>(),
    ) {
        let sec = Sector::new(k1, k1 + width).unwrap();
        let s = sector_point(&sec, kind, e, frac);
        let edot = if zero_rate { 0.0 } else { edot };
        let locus: SectorLocus = sec.locate(&s).unwrap();
        let sel = vstar_selector(&sec, edot, fc1, locus);
        prop_assert!([fc1, sec.k1() * edot, sec.k2() * edot].contains(&sel));
        let r = sector_project(&sec, &s, &v2(edot, fc1)).unwrap();
        prop_assert!((r.w[1] - sel).abs() <= 1e-9);
    }

    #[test]
    fn oracle_answers_are_feasible_and_grid_stable(seed in any::<u64>()) {
        let (mut v, _, _, _) = projection_instances(1, seed, 4).unwrap();
        let inst = v.pop().unwrap();
        let (cone, e, v) = (inst.cone(), inst.subspace(), inst.vector());
        let t = TangentCone::Convex(cone.clone());
        let coarse = OracleConfig { grid_points_per_dim: Some(21), ..Default::default() };
        let fine = OracleConfig { grid_points_per_dim: Some(41), ..Default::default() };
        let a = oracle_project(&t, e.basis(), &v, &coarse).unwrap();
        let b = oracle_project(&t, e.basis(), &v, &fine).unwrap();
        for w in [&a, &b] {
            let tol = 1e-10 * (1.0 + w.norm()) * (1.0 + cone.rows().norm());
            prop_assert!(cone.rows().nrows() == 0 || (cone.rows() * w).min() >= -tol);
        }
        let spacing = coarse_spacing(&v, e.n_cols(), &coarse);
        let e_norm = e.basis().norm();
        prop_assert!((&a - &b).norm() <= 2.0 * spacing * e_norm);
    }
}

#[test]
fn orthant_examples_against_oracle() {
    let cone = PolyhedralCone::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let e = ProjectionSubspace::coordinates(2, &[1]).unwrap();
    for (v, w) in [([1.0, -2.0], [1.0, 0.0]), ([-1.0, 3.0], [-1.0, 3.0])] {
        let v = v2(v[0], v[1]);
        let r = project_partial(&cone, &e, &v);
        if v[0] >= 0.0 {
            assert!((r.unwrap().w - v2(w[0], w[1])).norm() < 1e-12);
            let o = oracle_project(
                &TangentCone::Convex(cone.clone()),
                e.basis(),
                &v,
                &OracleConfig::default(),
            )
            .unwrap();
            assert!((o - v2(w[0], w[1])).norm() < 1e-9);
        } else {
            assert!(r.is_err());
        }
    }
}
