use thiserror::Error;

/// Errors produced by the geometry, projection and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point is not in the constraint set (worst violation {violation:.3e})")]
    NotInSet { violation: f64 },

    #[error("constraint qualification fails: active gradients have rank {rank} < {active}")]
    CqViolated { rank: usize, active: usize },

    #[error("matrix is not of full row rank (rank {rank}, rows {rows})")]
    RankDeficient { rank: usize, rows: usize },

    #[error("subspace basis is not of full column rank (rank {rank}, columns {cols})")]
    BasisRankDeficient { rank: usize, cols: usize },

    #[error("cone and affine subspace do not intersect")]
    Infeasible,

    #[error("no active subset satisfied the KKT checks")]
    DegenerateKkt,

    #[error("both sector branches feasible with different optima: {k:?} vs {minus_k:?}")]
    BranchContradiction { k: [f64; 2], minus_k: [f64; 2] },

    #[error("operation requires a convex cone, got a union cone")]
    NonConvexCone,

    #[error("sector slopes must satisfy k1 < k2 (got k1={k1}, k2={k2})")]
    DegenerateSector { k1: f64, k2: f64 },

    #[error("plant output row G_p is zero")]
    ZeroOutputRow,

    #[error("grid search found no feasible point in the search box")]
    NoFeasiblePoint,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("initial state is outside the constraint set (violation {violation:.3e})")]
    InitialStateOutsideSet { violation: f64 },

    #[error("state norm {norm:.3e} exceeded blow-up bound at t = {t}")]
    StateExploded { t: f64, norm: f64 },

    #[error("input signal evaluated at t = {t} outside its domain")]
    Extrapolation { t: f64 },

    #[error("user-supplied constraints cannot be serialized")]
    NotSerializable,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
