//! Constraint sets, sectors and their tangent cones.
//!
//! A [`ConstraintSet`] is a finitely generated set `{x : h_i(x) >= 0}`. Under linear
//! independence of the active gradients its tangent cone is the polyhedral cone
//! `{v : <grad h_i(x), v> >= 0, i active}`. A [`Sector`] `{(e,u) : (u-k1 e)(u-k2 e) <= 0}`
//! is the union `K ∪ -K` of two polyhedral cones; at the origin its tangent cone is
//! that (non-convex) union itself, carried as [`TangentCone::Union`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{matrix_from_rows, numeric_rank, rank_of, singular_values, Matrix, Vector};

/// Active-set tolerance, scaled by `1 + ||x||`.
pub const EPS_ACT: f64 = 1e-9;
/// Membership tolerance, scaled by `1 + ||x||`.
pub const EPS_MEM: f64 = 1e-9;
/// Cone membership tolerance.
pub const EPS_CONE: f64 = 1e-10;

pub(crate) fn mem_tol(x: &Vector) -> f64 {
    EPS_MEM * (1.0 + x.norm())
}

pub(crate) fn act_tol(x: &Vector) -> f64 {
    EPS_ACT * (1.0 + x.norm())
}

type ValueFn = dyn Fn(&Vector) -> f64 + Send + Sync;
type GradFn = dyn Fn(&Vector) -> Vector + Send + Sync;

/// Constraint given by value and gradient callbacks. Not serializable.
#[derive(Clone)]
pub struct UserConstraint {
    pub label: String,
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
}

impl UserConstraint {
    pub fn new(
        label: impl Into<String>,
        value: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }
}

impl fmt::Debug for UserConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserConstraint").field("label", &self.label).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Affine,
    Quadratic,
    User,
}

/// One scalar constraint `h(x) >= 0`.
#[derive(Debug, Clone)]
pub enum ScalarConstraint {
    /// `h(x) = a·x + b`
    Affine { a: Vector, b: f64 },
    /// `h(x) = xᵀ Q x + c·x + d`
    Quadratic { q: Matrix, c: Vector, d: f64 },
    User(UserConstraint),
}

impl ScalarConstraint {
    pub fn affine(a: Vector, b: f64) -> Self {
        Self::Affine { a, b }
    }

    pub fn quadratic(q: Matrix, c: Vector, d: f64) -> Self {
        Self::Quadratic { q, c, d }
    }

    pub fn kind(&self) -> ConstraintKind {
        match self {
            Self::Affine { .. } => ConstraintKind::Affine,
            Self::Quadratic { .. } => ConstraintKind::Quadratic,
            Self::User(_) => ConstraintKind::User,
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            Self::Affine { a, b } => a.dot(x) + b,
            Self::Quadratic { q, c, d } => x.dot(&(q * x)) + c.dot(x) + d,
            Self::User(u) => (u.value)(x),
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        match self {
            Self::Affine { a, .. } => a.clone(),
            Self::Quadratic { q, c, .. } => q * x + q.transpose() * x + c,
            Self::User(u) => (u.gradient)(x),
        }
    }

    /// Declared dimension, if the constraint carries one.
    fn declared_dim(&self) -> Option<usize> {
        match self {
            Self::Affine { a, .. } => Some(a.len()),
            Self::Quadratic { q, c, .. } => {
                (q.nrows() == q.ncols() && q.nrows() == c.len()).then_some(c.len())
            }
            Self::User(_) => None,
        }
    }
}

/// Indices of constraints that are tight at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
    pub tolerance_used: f64,
}

/// Outcome of the linear-independence check on active gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct CqReport {
    pub holds: bool,
    pub active: Vec<usize>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

/// Finitely generated set `{x ∈ ℝⁿ : h_i(x) >= 0 for all i}`.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    dim: usize,
    constraints: Vec<ScalarConstraint>,
}

impl ConstraintSet {
    pub fn new(dim: usize, constraints: Vec<ScalarConstraint>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: "must be positive".into(),
            });
        }
        for c in &constraints {
            match c.declared_dim() {
                Some(d) => check_dim(dim, d)?,
                None if c.kind() != ConstraintKind::User => {
                    return Err(Error::InvalidParameter {
                        name: "constraints",
                        reason: "quadratic constraint has inconsistent Q/c shapes".into(),
                    })
                }
                None => {}
            }
        }
        Ok(Self { dim, constraints })
    }

    /// `{x : x_i >= 0}`
    pub fn orthant(dim: usize) -> Self {
        let cs = (0..dim)
            .map(|i| {
                let mut a = Vector::zeros(dim);
                a[i] = 1.0;
                ScalarConstraint::affine(a, 0.0)
            })
            .collect();
        Self {
            dim,
            constraints: cs,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constraints(&self) -> &[ScalarConstraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn values(&self, x: &Vector) -> Vec<f64> {
        self.constraints.iter().map(|c| c.value(x)).collect()
    }

    /// Largest amount by which any constraint is violated (0 inside).
    pub fn violation(&self, x: &Vector) -> f64 {
        self.values(x)
            .into_iter()
            .fold(0.0_f64, |acc, h| acc.max(-h))
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.len() == self.dim && self.violation(x) <= mem_tol(x)
    }

    fn require_member(&self, x: &Vector) -> Result<()> {
        check_dim(self.dim, x.len())?;
        let viol = self.violation(x);
        if viol > mem_tol(x) {
            return Err(Error::NotInSet { violation: viol });
        }
        Ok(())
    }

    /// Constraints with `|h_i(x)| <= scale * EPS_ACT * (1 + ||x||)`.
    ///
    /// `scale = 1.0` gives the default tolerance.
    pub fn active_set(&self, x: &Vector, scale: f64) -> Result<ActiveSet> {
        if !(scale >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "scale",
                reason: format!("must be nonnegative, got {scale}"),
            });
        }
        self.require_member(x)?;
        let tol = scale * act_tol(x);
        let indices = self
            .constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| c.value(x).abs() <= tol)
            .map(|(i, _)| i)
            .collect();
        Ok(ActiveSet {
            indices,
            tolerance_used: tol,
        })
    }

    fn gradient_rows(&self, x: &Vector, indices: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(indices.len(), self.dim);
        for (r, &i) in indices.iter().enumerate() {
            let g = self.constraints[i].gradient(x);
            m.set_row(r, &g.transpose());
        }
        m
    }

    /// Rank test on the active gradients. Points outside the set report `holds = false`.
    pub fn check_cq(&self, x: &Vector) -> CqReport {
        let Ok(active) = self.active_set(x, 1.0) else {
            return CqReport {
                holds: false,
                active: Vec::new(),
                rank: 0,
                singular_values: Vec::new(),
            };
        };
        let g = self.gradient_rows(x, &active.indices);
        let sv = singular_values(&g);
        let rank = rank_of(&sv);
        CqReport {
            holds: rank == active.indices.len(),
            active: active.indices,
            rank,
            singular_values: sv,
        }
    }

    /// `T_S(x) = {v : <grad h_i(x), v> >= 0, i ∈ J(x)}`.
    pub fn tangent_cone(&self, x: &Vector) -> Result<PolyhedralCone> {
        self.require_member(x)?;
        let cq = self.check_cq(x);
        if !cq.holds {
            return Err(Error::CqViolated {
                rank: cq.rank,
                active: cq.active.len(),
            });
        }
        Ok(PolyhedralCone::new(self.gradient_rows(x, &cq.active)))
    }

    /// Cone built from the gradients of an arbitrary subset of constraints.
    pub fn relaxed_cone(&self, x: &Vector, subset: &[usize]) -> PolyhedralCone {
        PolyhedralCone::new(self.gradient_rows(x, subset))
    }

    /// Serializable description; fails for user-supplied constraints.
    pub fn to_doc(&self) -> Result<ConstraintSetDoc> {
        let constraints = self
            .constraints
            .iter()
            .map(|c| match c {
                ScalarConstraint::Affine { a, b } => Ok(ConstraintDoc::Affine {
                    a: a.iter().copied().collect(),
                    b: *b,
                }),
                ScalarConstraint::Quadratic { q, c, d } => Ok(ConstraintDoc::Quadratic {
                    q: crate::linalg::matrix_to_rows(q),
                    c: c.iter().copied().collect(),
                    d: *d,
                }),
                ScalarConstraint::User(_) => Err(Error::NotSerializable),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ConstraintSetDoc {
            dim: self.dim,
            constraints,
        })
    }

    pub fn from_doc(doc: &ConstraintSetDoc) -> Result<Self> {
        let cs = doc
            .constraints
            .iter()
            .map(|c| match c {
                ConstraintDoc::Affine { a, b } => Ok(ScalarConstraint::affine(
                    Vector::from_column_slice(a),
                    *b,
                )),
                ConstraintDoc::Quadratic { q, c, d } => {
                    let qm = matrix_from_rows(q).ok_or(Error::InvalidParameter {
                        name: "Q",
                        reason: "rows have different lengths".into(),
                    })?;
                    Ok(ScalarConstraint::quadratic(
                        qm,
                        Vector::from_column_slice(c),
                        *d,
                    ))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(doc.dim, cs)
    }
}

/// JSON form of a [`ConstraintSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSetDoc {
    pub dim: usize,
    pub constraints: Vec<ConstraintDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConstraintDoc {
    Affine {
        a: Vec<f64>,
        b: f64,
    },
    Quadratic {
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
        c: Vec<f64>,
        d: f64,
    },
}

/// `{v : A v >= 0}`. Zero rows means the whole space.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedralCone {
    rows: Matrix,
}

impl PolyhedralCone {
    pub fn new(rows: Matrix) -> Self {
        Self { rows }
    }

    pub fn whole_space(dim: usize) -> Self {
        Self {
            rows: Matrix::zeros(0, dim),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let m = matrix_from_rows(rows).expect("rows of equal length");
        Self { rows: m }
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    /// Tolerance for row `i` at `v`: `EPS_CONE * (1 + ||a_i|| ||v||)`.
    fn row_tol(&self, i: usize, v: &Vector) -> f64 {
        EPS_CONE * (1.0 + self.rows.row(i).norm() * v.norm())
    }

    pub fn contains(&self, v: &Vector) -> bool {
        if v.len() != self.dim() {
            return false;
        }
        let av = &self.rows * v;
        (0..self.n_rows()).all(|i| av[i] >= -self.row_tol(i, v))
    }

    /// Most negative row slack `min_i a_i·v` (`+inf` without rows).
    pub fn min_slack(&self, v: &Vector) -> f64 {
        (&self.rows * v).iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `-C = {v : -A v >= 0}`
    pub fn negated(&self) -> Self {
        Self {
            rows: -&self.rows,
        }
    }

    /// Sub-cone keeping only the listed rows.
    pub fn select(&self, subset: &[usize]) -> Self {
        let mut m = Matrix::zeros(subset.len(), self.dim());
        for (r, &i) in subset.iter().enumerate() {
            m.set_row(r, &self.rows.row(i));
        }
        Self { rows: m }
    }

    /// `{v : A H v >= 0}`
    pub fn pullback(&self, h: &Matrix) -> Self {
        Self {
            rows: &self.rows * h,
        }
    }
}

/// Tangent cone as returned by the geometry layer: convex, or the union of two
/// convex cones (sector origin).
#[derive(Debug, Clone, PartialEq)]
pub enum TangentCone {
    Convex(PolyhedralCone),
    Union(PolyhedralCone, PolyhedralCone),
}

impl TangentCone {
    pub fn is_convex(&self) -> bool {
        matches!(self, Self::Convex(_))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Convex(c) | Self::Union(c, _) => c.dim(),
        }
    }

    pub fn contains(&self, v: &Vector) -> bool {
        self.branches().iter().any(|c| c.contains(v))
    }

    pub fn branches(&self) -> Vec<&PolyhedralCone> {
        match self {
            Self::Convex(c) => vec![c],
            Self::Union(a, b) => vec![a, b],
        }
    }

    pub fn pullback(&self, h: &Matrix) -> Self {
        match self {
            Self::Convex(c) => Self::Convex(c.pullback(h)),
            Self::Union(a, b) => Self::Union(a.pullback(h), b.pullback(h)),
        }
    }
}

/// Tangent cone of `C = {c : H c ∈ D}` from the tangent cone of `D` at `H x`:
/// `T_C(x) = {v : H v ∈ T_D(H x)}`. `H` must have full row rank.
pub fn lifted_tangent_cone(h: &Matrix, low_cone: &TangentCone) -> Result<TangentCone> {
    check_dim(low_cone.dim(), h.nrows())?;
    let rank = numeric_rank(h);
    if rank < h.nrows() {
        return Err(Error::RankDeficient {
            rank,
            rows: h.nrows(),
        });
    }
    Ok(low_cone.pullback(h))
}

/// Which polyhedral cone of a sector a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SectorBranch {
    K,
    MinusK,
}

/// Position of a point relative to a sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectorLocus {
    /// The origin, `K ∩ -K`.
    Corner,
    /// In exactly one branch; flags mark which boundary rays are tight.
    Branch {
        branch: SectorBranch,
        k1_tight: bool,
        k2_tight: bool,
    },
}

impl SectorLocus {
    pub fn is_interior(&self) -> bool {
        matches!(
            self,
            Self::Branch {
                k1_tight: false,
                k2_tight: false,
                ..
            }
        )
    }
}

/// `S = {(e,u) : (u - k1 e)(u - k2 e) <= 0}` with `k1 < k2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    k1: f64,
    k2: f64,
}

impl Sector {
    pub fn new(k1: f64, k2: f64) -> Result<Self> {
        if !(k1.is_finite() && k2.is_finite()) || k1 >= k2 {
            return Err(Error::DegenerateSector { k1, k2 });
        }
        let s = Self { k1, k2 };
        // span{(0,1)} meets S only at 0, and every vertical line meets S.
        debug_assert!(s.residual(0.0, 1.0) > 0.0);
        debug_assert!(s.u_interval(1.0).0 <= s.u_interval(1.0).1);
        Ok(s)
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    /// `max(1, |k1|, |k2|)`
    pub fn slope_bound(&self) -> f64 {
        1.0_f64.max(self.k1.abs()).max(self.k2.abs())
    }

    /// `(u - k1 e)(u - k2 e)`; nonpositive inside the sector.
    pub fn residual(&self, e: f64, u: f64) -> f64 {
        (u - self.k1 * e) * (u - self.k2 * e)
    }

    /// Admissible `u` values for a given `e`: `[min(k1 e, k2 e), max(k1 e, k2 e)]`.
    pub fn u_interval(&self, e: f64) -> (f64, f64) {
        let (a, b) = (self.k1 * e, self.k2 * e);
        (a.min(b), a.max(b))
    }

    /// Distance of `u` from the admissible interval at `e`.
    pub fn violation(&self, e: f64, u: f64) -> f64 {
        let (lo, hi) = self.u_interval(e);
        (lo - u).max(u - hi).max(0.0)
    }

    pub fn contains(&self, s: &Vector) -> bool {
        s.len() == 2 && self.violation(s[0], s[1]) <= mem_tol(s)
    }

    /// Rows of `K = {u >= k1 e, u <= k2 e}`: `[-k1, 1]` and `[k2, -1]`.
    pub fn k_cone(&self) -> PolyhedralCone {
        PolyhedralCone::from_rows(&[vec![-self.k1, 1.0], vec![self.k2, -1.0]])
    }

    pub fn minus_k_cone(&self) -> PolyhedralCone {
        self.k_cone().negated()
    }

    pub fn branch_cone(&self, branch: SectorBranch) -> PolyhedralCone {
        match branch {
            SectorBranch::K => self.k_cone(),
            SectorBranch::MinusK => self.minus_k_cone(),
        }
    }

    pub fn locate(&self, s: &Vector) -> Result<SectorLocus> {
        check_dim(2, s.len())?;
        let (e, u) = (s[0], s[1]);
        let tol = mem_tol(s);
        let lower = u - self.k1 * e;
        let upper = self.k2 * e - u;
        let in_k = lower >= -tol && upper >= -tol;
        let in_mk = -lower >= -tol && -upper >= -tol;
        let atol = act_tol(s);
        match (in_k, in_mk) {
            (true, true) => Ok(SectorLocus::Corner),
            (true, false) => Ok(SectorLocus::Branch {
                branch: SectorBranch::K,
                k1_tight: lower.abs() <= atol,
                k2_tight: upper.abs() <= atol,
            }),
            (false, true) => Ok(SectorLocus::Branch {
                branch: SectorBranch::MinusK,
                k1_tight: lower.abs() <= atol,
                k2_tight: upper.abs() <= atol,
            }),
            (false, false) => Err(Error::NotInSet {
                violation: self.violation(e, u),
            }),
        }
    }

    /// `T_K(s)` on `K \ -K`, `-T_K` analogue on `-K \ K`, and `K ∪ -K` at the origin.
    pub fn tangent_cone(&self, s: &Vector) -> Result<TangentCone> {
        Ok(match self.locate(s)? {
            SectorLocus::Corner => TangentCone::Union(self.k_cone(), self.minus_k_cone()),
            SectorLocus::Branch {
                branch,
                k1_tight,
                k2_tight,
            } => {
                let mut idx = Vec::new();
                if k1_tight {
                    idx.push(0);
                }
                if k2_tight {
                    idx.push(1);
                }
                TangentCone::Convex(self.branch_cone(branch).select(&idx))
            }
        })
    }

    /// The sector as the single quadratic constraint `-(u-k1 e)(u-k2 e) >= 0`.
    /// Its gradient vanishes at the origin, so the rank condition fails there.
    pub fn as_constraint_set(&self) -> ConstraintSet {
        let off = 0.5 * (self.k1 + self.k2);
        let q = Matrix::from_row_slice(2, 2, &[-self.k1 * self.k2, off, off, -1.0]);
        ConstraintSet::new(
            2,
            vec![ScalarConstraint::quadratic(q, Vector::zeros(2), 0.0)],
        )
        .expect("2x2 quadratic")
    }
}

/// Convenience wrapper for sector tangent cones.
pub fn sector_tangent_cone(sec: &Sector, s: &Vector) -> Result<TangentCone> {
    sec.tangent_cone(s)
}
