use proptest::prelude::*;

use epds::geometry::{Sector, SectorLocus, TangentCone};
use epds::krasovskii::{krasovskii_vertices, sector_krasovskii_vertices, verify_equality};
use epds::projection::{feasible, project_partial, sector_project};
use epds::suites::draw_fg_instance;
use epds::Vector;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn hulls_nest_and_equality_holds(seed in any::<u64>(), index in 0u64..10_000) {
        let inst = draw_fg_instance(seed, index);
        let cone = inst.set.tangent_cone(&inst.x).unwrap();
        prop_assume!(feasible(&cone, &inst.e, &inst.f));
        let hull = krasovskii_vertices(&inst.set, &inst.e, &inst.x, &inst.f).unwrap();
        prop_assert!(hull.nesting_violations().is_empty());
        prop_assert!(hull.max_subspace_residual(&inst.e) <= 1e-10 * (1.0 + inst.f.norm()));
        let pi = project_partial(&cone, &inst.e, &inst.f).unwrap().w;
        let t = TangentCone::Convex(cone);
        let coarse = verify_equality(&hull, &t, &pi, 0.02).unwrap();
        let fine = verify_equality(&hull, &t, &pi, 0.01).unwrap();
        prop_assert!(coarse.holds, "{:?}", coarse.witnesses);
        prop_assert_eq!(coarse.holds, fine.holds);
    }

    #[test]
    fn sector_failures_only_at_a_moving_corner(
        k1 in -2.0..2.0f64, width in 0.1..3.0f64, kind in 0u8..4, e in -2.0..2.0f64,
        frac in 0.0..1.0f64, edot in -3.0..3.0f64, fc1 in -3.0..3.0f64, zero_rate in any::<bool>(),
    ) {
        let sec = Sector::new(k1, k1 + width).unwrap();
        let (lo, hi) = sec.u_interval(e);
        let s = match kind {
            0 => Vector::zeros(2),
            1 => Vector::from_column_slice(&[e, sec.k1() * e]),
            2 => Vector::from_column_slice(&[e, sec.k2() * e]),
            _ => Vector::from_column_slice(&[e, lo + (hi - lo) * frac]),
        };
        let edot = if zero_rate { 0.0 } else { edot };
        let w = Vector::from_column_slice(&[edot, fc1]);
        let hull = sector_krasovskii_vertices(&sec, &s, &w).unwrap();
        let pi = sector_project(&sec, &s, &w).unwrap().w;
        let rep = verify_equality(&hull, &sec.tangent_cone(&s).unwrap(), &pi, 0.02).unwrap();
        let corner = sec.locate(&s).unwrap() == SectorLocus::Corner;
        prop_assert_eq!(rep.holds, !(corner && edot != 0.0));
        for v in &hull.vertices {
            prop_assert_eq!(v[0], edot);
        }
    }
}
