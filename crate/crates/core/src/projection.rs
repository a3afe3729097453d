//! The partial projection operator.
//!
//! `Π(x, v)` is the point `w = v + E η` of the tangent cone `{w : A w >= 0}` closest to
//! `v`. Writing `B = A E` and `c = A v` this is the small QP
//! `min ηᵀ(EᵀE)η  s.t.  B η >= -c`, solved exactly by enumerating active row subsets.
//! At a sector corner the tangent cone is a union of two cones and the projection is
//! computed per branch.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{PolyhedralCone, Sector, SectorBranch, SectorLocus, TangentCone};
use crate::linalg::{numeric_rank, Matrix, Vector};

/// Dual-sign tolerance, scaled by `1 + ||v||`.
pub const DUAL_TOL: f64 = 1e-10;

/// The correction subspace `Im E`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSubspace {
    basis: Matrix,
}

impl ProjectionSubspace {
    /// Basis columns must be linearly independent.
    pub fn new(basis: Matrix) -> Result<Self> {
        if basis.ncols() == 0 {
            return Err(Error::InvalidParameter {
                name: "E",
                reason: "basis needs at least one column".into(),
            });
        }
        let rank = numeric_rank(&basis);
        if rank < basis.ncols() {
            return Err(Error::BasisRankDeficient {
                rank,
                cols: basis.ncols(),
            });
        }
        Ok(Self { basis })
    }

    /// `E = I`: the classical projection.
    pub fn full(n: usize) -> Self {
        Self {
            basis: Matrix::identity(n, n),
        }
    }

    /// Span of the listed standard basis vectors.
    pub fn coordinates(n: usize, axes: &[usize]) -> Result<Self> {
        let mut b = Matrix::zeros(n, axes.len());
        for (j, &i) in axes.iter().enumerate() {
            if i >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: i + 1,
                });
            }
            b[(i, j)] = 1.0;
        }
        Self::new(b)
    }

    /// `span{(0,1)}` in the `(e,u)` plane.
    pub fn sector() -> Self {
        Self {
            basis: Matrix::from_column_slice(2, 1, &[0.0, 1.0]),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    /// Least-squares residual of `d` against `Im E`.
    pub fn residual(&self, d: &Vector) -> f64 {
        let qr = self.basis.clone().qr();
        let q = qr.q();
        (d - &q * (q.transpose() * d)).norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub w: Vector,
    pub eta: Vector,
    /// Rows held with equality by the accepted KKT subset.
    pub active_indices: Vec<usize>,
    pub branch: Option<SectorBranch>,
    pub correction_norm: f64,
}

impl ProjectionResult {
    fn new(v: &Vector, w: Vector, eta: Vector, active: Vec<usize>) -> Self {
        let correction_norm = (&w - v).norm();
        Self {
            w,
            eta,
            active_indices: active,
            branch: None,
            correction_norm,
        }
    }
}

/// One subset that passed the KKT checks.
#[derive(Debug, Clone, PartialEq)]
pub struct KktCandidate {
    pub subset: Vec<usize>,
    pub eta: Vector,
    pub w: Vector,
    pub multipliers: Vector,
}

/// Does the affine slice `v + Im E` meet the cone?
///
/// Decided by Fourier-Motzkin elimination of `η` from `B η >= -c`.
pub fn feasible(cone: &PolyhedralCone, e: &ProjectionSubspace, v: &Vector) -> bool {
    if cone.dim() != v.len() || e.ambient_dim() != v.len() {
        return false;
    }
    let a = cone.rows();
    let b = a * e.basis();
    let c = a * v;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(a.nrows());
    for i in 0..a.nrows() {
        let s = a.row(i).norm();
        if s == 0.0 {
            continue;
        }
        rows.push((b.row(i).iter().map(|x| x / s).collect(), -c[i] / s));
    }
    fourier_motzkin(rows, 1e-9 * (1.0 + v.norm()))
}

/// Feasibility for either branch of a union cone.
pub fn feasible_any(cone: &TangentCone, e: &ProjectionSubspace, v: &Vector) -> bool {
    cone.branches().iter().any(|c| feasible(c, e, v))
}

// Rows are `g·η >= h`. Coefficients below `ZERO` after normalization count as zero.
fn fourier_motzkin(mut rows: Vec<(Vec<f64>, f64)>, tol: f64) -> bool {
    const ZERO: f64 = 1e-12;
    let n = rows.first().map_or(0, |r| r.0.len());
    for k in (0..n).rev() {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        let mut rest = Vec::new();
        for (g, h) in rows {
            let scale = g.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            if scale <= ZERO {
                if h > tol {
                    return false;
                }
                continue;
            }
            let g: Vec<f64> = g.iter().map(|x| x / scale).collect();
            let h = h / scale;
            if g[k] > ZERO {
                pos.push((g, h));
            } else if g[k] < -ZERO {
                neg.push((g, h));
            } else {
                rest.push((g, h));
            }
        }
        for (gp, hp) in &pos {
            for (gn, hn) in &neg {
                let (a, b) = (1.0 / gp[k], -1.0 / gn[k]);
                let mut g: Vec<f64> = gp.iter().zip(gn).map(|(x, y)| a * x + b * y).collect();
                g[k] = 0.0;
                rest.push((g, a * hp + b * hn));
            }
        }
        rows = rest;
    }
    rows.iter().all(|(_, h)| *h <= tol)
}

/// Subsets of `0..m` in order of increasing size.
fn subsets_by_size(m: usize) -> Vec<Vec<usize>> {
    let mut masks: Vec<u32> = (0..(1u32 << m)).collect();
    masks.sort_by_key(|k| (k.count_ones(), *k));
    masks
        .into_iter()
        .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

struct Kkt<'a> {
    cone: &'a PolyhedralCone,
    e: &'a Matrix,
    v: &'a Vector,
    b: Matrix,
    c: Vector,
    metric: Matrix,
    dual_tol: f64,
}

impl<'a> Kkt<'a> {
    fn new(cone: &'a PolyhedralCone, e: &'a ProjectionSubspace, v: &'a Vector) -> Result<Self> {
        check_dim(cone.dim(), v.len())?;
        check_dim(e.ambient_dim(), v.len())?;
        let e = e.basis();
        let b = cone.rows() * e;
        let c = cone.rows() * v;
        Ok(Self {
            cone,
            e,
            v,
            b,
            c,
            metric: e.transpose() * e,
            dual_tol: DUAL_TOL * (1.0 + v.norm()),
        })
    }

    /// Solve the equality-constrained problem on `subset` and run the checks.
    fn try_subset(&self, subset: &[usize]) -> Option<KktCandidate> {
        let k = self.metric.nrows();
        let p = subset.len();
        let mut bw = Matrix::zeros(p, k);
        for (r, &i) in subset.iter().enumerate() {
            bw.set_row(r, &self.b.row(i));
        }
        if p > 0 && numeric_rank(&bw) < p {
            return None;
        }
        // [M  -B_Wᵀ] [η]   [0   ]
        // [B_W  0  ] [λ] = [-c_W]
        let mut kkt = Matrix::zeros(k + p, k + p);
        kkt.view_mut((0, 0), (k, k)).copy_from(&self.metric);
        kkt.view_mut((0, k), (k, p)).copy_from(&(-bw.transpose()));
        kkt.view_mut((k, 0), (p, k)).copy_from(&bw);
        let mut rhs = Vector::zeros(k + p);
        for (r, &i) in subset.iter().enumerate() {
            rhs[k + r] = -self.c[i];
        }
        let sol = kkt.col_piv_qr().solve(&rhs)?;
        if sol.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let eta = sol.rows(0, k).into_owned();
        let lambda = sol.rows(k, p).into_owned();
        if lambda.iter().any(|&l| l < -self.dual_tol) {
            return None;
        }
        let w = self.v + self.e * &eta;
        if !self.cone.contains(&w) {
            return None;
        }
        Some(KktCandidate {
            subset: subset.to_vec(),
            eta,
            w,
            multipliers: lambda,
        })
    }
}

/// `Π(v)` onto a convex cone along `Im E`; the first subset passing the KKT checks wins.
pub fn project_partial(
    cone: &PolyhedralCone,
    e: &ProjectionSubspace,
    v: &Vector,
) -> Result<ProjectionResult> {
    let kkt = Kkt::new(cone, e, v)?;
    if cone.contains(v) {
        return Ok(ProjectionResult::new(
            v,
            v.clone(),
            Vector::zeros(e.n_cols()),
            Vec::new(),
        ));
    }
    for subset in subsets_by_size(cone.n_rows()) {
        if let Some(cand) = kkt.try_subset(&subset) {
            return Ok(ProjectionResult::new(v, cand.w, cand.eta, cand.subset));
        }
    }
    if feasible(cone, e, v) {
        Err(Error::DegenerateKkt)
    } else {
        Err(Error::Infeasible)
    }
}

/// Every subset passing the KKT checks. Under the rank condition all of them give
/// the same `w`.
pub fn kkt_candidates(
    cone: &PolyhedralCone,
    e: &ProjectionSubspace,
    v: &Vector,
) -> Result<Vec<KktCandidate>> {
    let kkt = Kkt::new(cone, e, v)?;
    Ok(subsets_by_size(cone.n_rows())
        .iter()
        .filter_map(|s| kkt.try_subset(s))
        .collect())
}

/// [`project_partial`] for a tangent cone; union cones are rejected.
pub fn project_tangent(
    cone: &TangentCone,
    e: &ProjectionSubspace,
    v: &Vector,
) -> Result<ProjectionResult> {
    match cone {
        TangentCone::Convex(c) => project_partial(c, e, v),
        TangentCone::Union(..) => Err(Error::NonConvexCone),
    }
}

/// `Π_{S,E'}(s, w)` for a sector with `E' = span{(0,1)}`; `w = (ė, u̇)`.
pub fn sector_project(sec: &Sector, s: &Vector, w: &Vector) -> Result<ProjectionResult> {
    check_dim(2, w.len())?;
    let locus = sec.locate(s)?;
    let e = ProjectionSubspace::sector();
    match locus {
        SectorLocus::Branch {
            branch,
            k1_tight,
            k2_tight,
        } => {
            let idx: Vec<usize> = [(0, k1_tight), (1, k2_tight)]
                .iter()
                .filter(|(_, t)| *t)
                .map(|(i, _)| *i)
                .collect();
            let cone = sec.branch_cone(branch).select(&idx);
            let mut r = project_partial(&cone, &e, w)?;
            r.active_indices = r.active_indices.iter().map(|&i| idx[i]).collect();
            r.branch = Some(branch);
            Ok(r)
        }
        SectorLocus::Corner => {
            let k = corner_branch(sec, SectorBranch::K, w);
            let mk = corner_branch(sec, SectorBranch::MinusK, w);
            match (k, mk) {
                (Some(a), Some(b)) => {
                    let tol = 1e-9 * (1.0 + w.norm());
                    if (&a.w - &b.w).norm() > tol {
                        return Err(Error::BranchContradiction {
                            k: [a.w[0], a.w[1]],
                            minus_k: [b.w[0], b.w[1]],
                        });
                    }
                    Ok(a)
                }
                (Some(a), None) | (None, Some(a)) => Ok(a),
                (None, None) => Err(Error::Infeasible),
            }
        }
    }
}

// Clamp of `u̇` into the branch's admissible interval, `None` when it is empty.
fn corner_branch(sec: &Sector, branch: SectorBranch, w: &Vector) -> Option<ProjectionResult> {
    let edot = w[0];
    let (lo, hi) = match branch {
        SectorBranch::K if edot >= 0.0 => (sec.k1() * edot, sec.k2() * edot),
        SectorBranch::MinusK if edot <= 0.0 => (sec.k2() * edot, sec.k1() * edot),
        _ => return None,
    };
    let v = w[1].clamp(lo, hi);
    let mut active = Vec::new();
    // Row 0 is the k1 ray, row 1 the k2 ray, for either branch.
    let (k1_end, k2_end) = match branch {
        SectorBranch::K => (lo, hi),
        SectorBranch::MinusK => (hi, lo),
    };
    if v == k1_end {
        active.push(0);
    }
    if v == k2_end {
        active.push(1);
    }
    let out = Vector::from_column_slice(&[edot, v]);
    let mut r = ProjectionResult::new(w, out, Vector::from_element(1, v - w[1]), active);
    r.branch = Some(branch);
    Some(r)
}

/// Projected `u̇` from the tight-constraint pattern alone: `fc1` clamped by the
/// bounds `k1 ė`, `k2 ė` that apply.
pub fn vstar_selector(sec: &Sector, edot: f64, fc1: f64, locus: SectorLocus) -> f64 {
    let (k1e, k2e) = (sec.k1() * edot, sec.k2() * edot);
    match locus {
        SectorLocus::Branch {
            branch: SectorBranch::K,
            k1_tight,
            k2_tight,
        } => {
            let mut v = fc1;
            if k1_tight {
                v = v.max(k1e);
            }
            if k2_tight {
                v = v.min(k2e);
            }
            v
        }
        SectorLocus::Branch {
            branch: SectorBranch::MinusK,
            k1_tight,
            k2_tight,
        } => {
            let mut v = fc1;
            if k1_tight {
                v = v.min(k1e);
            }
            if k2_tight {
                v = v.max(k2e);
            }
            v
        }
        SectorLocus::Corner => {
            if edot > 0.0 {
                fc1.clamp(k1e, k2e)
            } else if edot < 0.0 {
                fc1.clamp(k2e, k1e)
            } else {
                0.0
            }
        }
    }
}
