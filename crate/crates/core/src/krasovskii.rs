//! Explicit Krasovskii hulls and the check `K_F(x) ∩ T_S(x) = {Π(x, f(x))}`.
//!
//! For a finitely generated set under the rank condition the hull is spanned by the
//! projections of `f(x)` onto the relaxed cones `T^J`, one per subset `J` of the
//! active set. For a sector the relevant cones are the tangent cones of all strata
//! touching the point; at the origin there are eight of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{ConstraintSet, PolyhedralCone, Sector, SectorLocus, TangentCone};
use crate::linalg::{lex_cmp, Vector};
use crate::projection::{project_partial, sector_project, ProjectionSubspace};

/// Vertices closer than this are merged.
pub const DEDUP_TOL: f64 = 1e-10;
/// In-cone grid points farther than this from `Π` are witnesses.
pub const WITNESS_TOL: f64 = 1e-6;
/// Default barycentric grid resolution.
pub const DEFAULT_RESOLUTION: f64 = 0.02;
/// Above this many grid points the scan switches to sampling.
pub const GRID_BUDGET: usize = 200_000;
const MAX_WITNESSES: usize = 10_000;

/// Which cone produced a hull vertex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HullLabel {
    /// Subset `J` of the active constraints.
    Subset(Vec<usize>),
    /// Named stratum cone of a sector.
    Stratum(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub label: HullLabel,
    /// Index into `vertices` after deduplication and sorting.
    pub vertex: usize,
    pub correction_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrasovskiiHull {
    pub point: Vector,
    pub field_value: Vector,
    /// Sorted lexicographically, pairwise farther apart than [`DEDUP_TOL`].
    pub vertices: Vec<Vector>,
    pub generators: Vec<Generator>,
}

impl KrasovskiiHull {
    fn build(point: Vector, field_value: Vector, raw: Vec<(HullLabel, Vector)>) -> Self {
        let mut vertices: Vec<Vector> = Vec::new();
        for (_, v) in &raw {
            if !vertices.iter().any(|u| (u - v).norm() <= DEDUP_TOL) {
                vertices.push(v.clone());
            }
        }
        vertices.sort_by(lex_cmp);
        let generators = raw
            .into_iter()
            .map(|(label, v)| {
                let vertex = vertices
                    .iter()
                    .position(|u| (u - &v).norm() <= DEDUP_TOL)
                    .expect("vertex was inserted");
                Generator {
                    label,
                    vertex,
                    correction_norm: (&v - &field_value).norm(),
                }
            })
            .collect();
        Self {
            point,
            field_value,
            vertices,
            generators,
        }
    }

    /// Labels of the generators that produced each vertex.
    pub fn subset_labels(&self) -> Vec<Vec<HullLabel>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for g in &self.generators {
            out[g.vertex].push(g.label.clone());
        }
        out
    }

    /// Pairs `(J, J')` with `J ⊆ J'` whose corrections are out of order, i.e.
    /// `||P_J f - f|| > ||P_J' f - f||` beyond a small tolerance. Subset labels only.
    pub fn nesting_violations(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let tol = 1e-9 * (1.0 + self.field_value.norm());
        let subsets: Vec<(&Vec<usize>, f64)> = self
            .generators
            .iter()
            .filter_map(|g| match &g.label {
                HullLabel::Subset(j) => Some((j, g.correction_norm)),
                HullLabel::Stratum(_) => None,
            })
            .collect();
        let mut bad = Vec::new();
        for (j, cj) in &subsets {
            for (jp, cjp) in &subsets {
                if j.iter().all(|i| jp.contains(i)) && *cj > *cjp + tol {
                    bad.push(((*j).clone(), (*jp).clone()));
                }
            }
        }
        bad
    }

    /// Largest distance of `v - f` from `Im E` over the vertices.
    pub fn max_subspace_residual(&self, e: &ProjectionSubspace) -> f64 {
        self.vertices
            .iter()
            .map(|v| e.residual(&(v - &self.field_value)))
            .fold(0.0, f64::max)
    }
}

/// Hull vertices `P_{T^J, E}(f)` for every `J ⊆ J(x)`.
pub fn krasovskii_vertices(
    set: &ConstraintSet,
    e: &ProjectionSubspace,
    x: &Vector,
    f: &Vector,
) -> Result<KrasovskiiHull> {
    check_dim(set.dim(), f.len())?;
    let active = set.active_set(x, 1.0)?.indices;
    let cq = set.check_cq(x);
    if !cq.holds {
        return Err(Error::CqViolated {
            rank: cq.rank,
            active: cq.active.len(),
        });
    }
    let k = active.len();
    let mut masks: Vec<u32> = (0..(1u32 << k)).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    let mut raw = Vec::with_capacity(masks.len());
    for mask in masks {
        let subset: Vec<usize> = (0..k)
            .filter(|b| mask & (1 << b) != 0)
            .map(|b| active[b])
            .collect();
        let cone = set.relaxed_cone(x, &subset);
        let r = project_partial(&cone, e, f)?;
        raw.push((HullLabel::Subset(subset), r.w));
    }
    Ok(KrasovskiiHull::build(x.clone(), f.clone(), raw))
}

/// Stratum cones of a sector near `s`, labelled.
pub fn sector_strata(sec: &Sector, s: &Vector) -> Result<Vec<(String, TangentCone)>> {
    let (k1, k2) = (sec.k1(), sec.k2());
    let cone = |rows: &[Vec<f64>]| TangentCone::Convex(PolyhedralCone::from_rows(rows));
    Ok(match sec.locate(s)? {
        SectorLocus::Corner => vec![
            ("plane".into(), TangentCone::Convex(PolyhedralCone::whole_space(2))),
            ("below_k2".into(), cone(&[vec![k2, -1.0]])),
            ("above_k1".into(), cone(&[vec![-k1, 1.0]])),
            ("above_k2".into(), cone(&[vec![-k2, 1.0]])),
            ("below_k1".into(), cone(&[vec![k1, -1.0]])),
            ("K".into(), TangentCone::Convex(sec.k_cone())),
            ("minusK".into(), TangentCone::Convex(sec.minus_k_cone())),
            (
                "K_or_minusK".into(),
                TangentCone::Union(sec.k_cone(), sec.minus_k_cone()),
            ),
        ],
        SectorLocus::Branch {
            branch,
            k1_tight,
            k2_tight,
        } => {
            let mut tight = Vec::new();
            if k1_tight {
                tight.push(0);
            }
            if k2_tight {
                tight.push(1);
            }
            let base = sec.branch_cone(branch);
            let mut out = Vec::new();
            for mask in 0..(1u32 << tight.len()) {
                let subset: Vec<usize> = (0..tight.len())
                    .filter(|b| mask & (1 << b) != 0)
                    .map(|b| tight[b])
                    .collect();
                let name = format!("{branch:?}{subset:?}");
                out.push((name, TangentCone::Convex(base.select(&subset))));
            }
            out
        }
    })
}

/// Sector hull: `w` projected along `span{(0,1)}` onto every feasible stratum cone.
pub fn sector_krasovskii_vertices(sec: &Sector, s: &Vector, w: &Vector) -> Result<KrasovskiiHull> {
    check_dim(2, w.len())?;
    let e = ProjectionSubspace::sector();
    let mut raw = Vec::new();
    for (name, cone) in sector_strata(sec, s)? {
        let r = match &cone {
            TangentCone::Convex(c) => project_partial(c, &e, w),
            TangentCone::Union(..) => sector_project(sec, &Vector::zeros(2), w),
        };
        match r {
            Ok(r) => raw.push((HullLabel::Stratum(name), r.w)),
            Err(Error::Infeasible) => {}
            Err(err) => return Err(err),
        }
    }
    Ok(KrasovskiiHull::build(s.clone(), w.clone(), raw))
}

/// Outcome of the hull ∩ cone scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub holds: bool,
    pub point: Vec<f64>,
    pub field: Vec<f64>,
    pub vertices: Vec<Vec<f64>>,
    pub witnesses: Vec<Vec<f64>>,
    /// `false` when the grid was too large and a deterministic sample was scanned.
    pub exhaustive: bool,
    pub combinations_checked: usize,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

// All compositions of `total` into `parts` nonnegative integers with `first` fixed.
fn compositions_with_first(first: usize, total: usize, parts: usize, f: &mut impl FnMut(&[usize])) {
    let mut buf = vec![0; parts];
    buf[0] = first;
    fn rec(buf: &mut [usize], i: usize, left: usize, f: &mut impl FnMut(&[usize])) {
        if i == buf.len() - 1 {
            buf[i] = left;
            f(buf);
            return;
        }
        for a in 0..=left {
            buf[i] = a;
            rec(buf, i + 1, left - a, f);
        }
    }
    if parts == 1 {
        if first == total {
            f(&buf);
        }
        return;
    }
    rec(&mut buf, 1, total - first, f);
}

// Random grid composition by rounding a uniform simplex sample (largest remainder).
fn sample_composition(rng: &mut ChaCha8Rng, total: usize, parts: usize) -> Vec<usize> {
    let mut x: Vec<f64> = (0..parts).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v *= total as f64 / s);
    let mut c: Vec<usize> = x.iter().map(|v| v.floor() as usize).collect();
    let mut rem: Vec<(usize, f64)> = x.iter().enumerate().map(|(i, v)| (i, v - v.floor())).collect();
    rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let short = total - c.iter().sum::<usize>();
    for (i, _) in rem.into_iter().take(short) {
        c[i] += 1;
    }
    c
}

/// Scan convex combinations of the hull vertices on a barycentric grid with step
/// `resolution`; every combination inside `cone` must be within [`WITNESS_TOL`] of `pi`.
pub fn verify_equality(
    hull: &KrasovskiiHull,
    cone: &TangentCone,
    pi: &Vector,
    resolution: f64,
) -> Result<VerificationReport> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "simplex_resolution",
            reason: format!("must lie in (0, 1], got {resolution}"),
        });
    }
    check_dim(cone.dim(), pi.len())?;
    let d = (1.0 / resolution).round().max(1.0) as usize;
    let nv = hull.vertices.len();
    let verts = &hull.vertices;
    let combine = |lam: &[usize]| -> Vector {
        let mut p = Vector::zeros(pi.len());
        for (k, &l) in lam.iter().enumerate() {
            if l > 0 {
                p.axpy(l as f64 / d as f64, &verts[k], 1.0);
            }
        }
        p
    };
    let is_witness = |p: &Vector| cone.contains(p) && (p - pi).norm() > WITNESS_TOL;

    let count = binomial(d + nv - 1, nv - 1);
    let exhaustive = count <= GRID_BUDGET as f64;
    let (mut witnesses, checked): (Vec<Vector>, usize) = if exhaustive {
        let parts: Vec<(Vec<Vector>, usize)> = (0..=d)
            .into_par_iter()
            .map(|first| {
                let mut found = Vec::new();
                let mut n = 0;
                compositions_with_first(first, d, nv, &mut |lam| {
                    n += 1;
                    let p = combine(lam);
                    if found.len() < MAX_WITNESSES && is_witness(&p) {
                        found.push(p);
                    }
                });
                (found, n)
            })
            .collect();
        let n = parts.iter().map(|p| p.1).sum();
        (parts.into_iter().flat_map(|p| p.0).collect(), n)
    } else {
        // Vertices and edge points always, then a fixed-seed sample of the interior.
        let mut lams: Vec<Vec<usize>> = Vec::new();
        for i in 0..nv {
            for j in (i + 1)..nv {
                for a in 0..=d {
                    let mut l = vec![0; nv];
                    l[i] = a;
                    l[j] = d - a;
                    lams.push(l);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x6b72_6173);
        while lams.len() < GRID_BUDGET {
            lams.push(sample_composition(&mut rng, d, nv));
        }
        let found: Vec<Vector> = lams
            .par_iter()
            .map(|l| combine(l))
            .filter(|p| is_witness(p))
            .collect();
        (found, lams.len())
    };
    witnesses.sort_by(lex_cmp);
    witnesses.dedup_by(|a, b| (&*a - &*b).norm() <= 1e-12);
    witnesses.truncate(MAX_WITNESSES);
    let pi_in_hull_and_cone = cone.contains(pi);
    Ok(VerificationReport {
        holds: witnesses.is_empty() && pi_in_hull_and_cone,
        point: hull.point.iter().copied().collect(),
        field: hull.field_value.iter().copied().collect(),
        vertices: verts.iter().map(|v| v.iter().copied().collect()).collect(),
        witnesses: witnesses.iter().map(|v| v.iter().copied().collect()).collect(),
        exhaustive,
        combinations_checked: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScalarConstraint;
    use crate::linalg::vec_from;

    fn verts(h: &KrasovskiiHull) -> Vec<Vec<f64>> {
        h.vertices.iter().map(|v| v.iter().copied().collect()).collect()
    }

    fn assert_verts(h: &KrasovskiiHull, expected: &[&[f64]]) {
        assert_eq!(h.vertices.len(), expected.len(), "{:?}", verts(h));
        for (v, e) in h.vertices.iter().zip(expected) {
            assert!((v - vec_from(e)).norm() <= 1e-9, "{:?}", verts(h));
        }
    }

    #[test]
    fn interior_single_vertex() {
        let set = ConstraintSet::orthant(2);
        let h = krasovskii_vertices(
            &set,
            &ProjectionSubspace::full(2),
            &vec_from(&[1.0, 1.0]),
            &vec_from(&[-3.0, 2.0]),
        )
        .unwrap();
        assert_verts(&h, &[&[-3.0, 2.0]]);
    }

    #[test]
    fn orthant_corner_four_vertices() {
        let set = ConstraintSet::orthant(2);
        let h = krasovskii_vertices(
            &set,
            &ProjectionSubspace::full(2),
            &vec_from(&[0.0, 0.0]),
            &vec_from(&[-1.0, -1.0]),
        )
        .unwrap();
        assert_verts(&h, &[&[-1.0, -1.0], &[-1.0, 0.0], &[0.0, -1.0], &[0.0, 0.0]]);
        assert!(h.nesting_violations().is_empty());
        assert_eq!(h.generators.len(), 4);
    }

    #[test]
    fn half_space_duplicates_merge() {
        let set = ConstraintSet::new(2, vec![ScalarConstraint::affine(vec_from(&[1.0, 0.0]), 0.0)])
            .unwrap();
        let h = krasovskii_vertices(
            &set,
            &ProjectionSubspace::sector(),
            &vec_from(&[0.0, 5.0]),
            &vec_from(&[1.0, 3.0]),
        )
        .unwrap();
        assert_verts(&h, &[&[1.0, 3.0]]);
        assert_eq!(h.subset_labels()[0].len(), 2);
    }

    #[test]
    fn sector_corner_hulls() {
        let sec = Sector::new(0.0, 1.0).unwrap();
        let o = vec_from(&[0.0, 0.0]);
        let h = sector_krasovskii_vertices(&sec, &o, &vec_from(&[1.0, 2.0])).unwrap();
        assert_verts(&h, &[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0]]);
        let h = sector_krasovskii_vertices(&sec, &o, &vec_from(&[0.0, 1.0])).unwrap();
        assert_verts(&h, &[&[0.0, 0.0], &[0.0, 1.0]]);
    }

    #[test]
    fn sector_regular_boundary() {
        let sec = Sector::new(0.0, 1.0).unwrap();
        let h = sector_krasovskii_vertices(&sec, &vec_from(&[1.0, 1.0]), &vec_from(&[0.0, 1.0]))
            .unwrap();
        assert_verts(&h, &[&[0.0, 0.0], &[0.0, 1.0]]);
    }

    #[test]
    fn corner_counterexample_witnesses() {
        let sec = Sector::new(0.0, 1.0).unwrap();
        let o = vec_from(&[0.0, 0.0]);
        let w = vec_from(&[1.0, 2.0]);
        let h = sector_krasovskii_vertices(&sec, &o, &w).unwrap();
        let t = sec.tangent_cone(&o).unwrap();
        let pi = sector_project(&sec, &o, &w).unwrap().w;
        let rep = verify_equality(&h, &t, &pi, DEFAULT_RESOLUTION).unwrap();
        assert!(!rep.holds);
        assert!(rep.exhaustive);
        let has = |p: [f64; 2]| {
            rep.witnesses
                .iter()
                .any(|q| (q[0] - p[0]).abs() <= 1e-12 && (q[1] - p[1]).abs() <= 1e-12)
        };
        assert!(has([1.0, 0.0]));
        assert!(has([1.0, 0.5]));
    }

    #[test]
    fn corner_zero_edot_holds() {
        let sec = Sector::new(0.0, 1.0).unwrap();
        let o = vec_from(&[0.0, 0.0]);
        let w = vec_from(&[0.0, 1.0]);
        let h = sector_krasovskii_vertices(&sec, &o, &w).unwrap();
        let t = sec.tangent_cone(&o).unwrap();
        let pi = sector_project(&sec, &o, &w).unwrap().w;
        assert_eq!(pi, vec_from(&[0.0, 0.0]));
        assert!(verify_equality(&h, &t, &pi, DEFAULT_RESOLUTION).unwrap().holds);
    }

    #[test]
    fn report_json_keys() {
        let sec = Sector::new(0.0, 1.0).unwrap();
        let o = vec_from(&[0.0, 0.0]);
        let w = vec_from(&[0.0, 1.0]);
        let h = sector_krasovskii_vertices(&sec, &o, &w).unwrap();
        let rep =
            verify_equality(&h, &sec.tangent_cone(&o).unwrap(), &Vector::zeros(2), 0.1).unwrap();
        let v = serde_json::to_value(&rep).unwrap();
        for k in ["holds", "point", "field", "vertices", "witnesses"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn sampled_scan_for_many_vertices() {
        // 8 vertices at resolution 0.01 exceeds the budget.
        let set = ConstraintSet::orthant(3);
        let x = Vector::zeros(3);
        let f = vec_from(&[-1.0, -2.0, -3.0]);
        let e = ProjectionSubspace::full(3);
        let h = krasovskii_vertices(&set, &e, &x, &f).unwrap();
        assert_eq!(h.vertices.len(), 8);
        let t = TangentCone::Convex(set.tangent_cone(&x).unwrap());
        let pi = project_partial(&set.tangent_cone(&x).unwrap(), &e, &f).unwrap().w;
        let rep = verify_equality(&h, &t, &pi, 0.01).unwrap();
        assert!(!rep.exhaustive);
        assert!(rep.holds);
    }

    #[test]
    fn bad_resolution() {
        let sec = Sector::new(0.0, 1.0).unwrap();
        let o = vec_from(&[0.0, 0.0]);
        let h = sector_krasovskii_vertices(&sec, &o, &vec_from(&[0.0, 1.0])).unwrap();
        let t = sec.tangent_cone(&o).unwrap();
        assert!(verify_equality(&h, &t, &o, 0.0).is_err());
    }
}
