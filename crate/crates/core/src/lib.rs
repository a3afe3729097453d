//! Extended projected dynamical systems.
//!
//! The crate computes partial projections `Π_{S,E}(x, v)`: the smallest correction of a
//! vector `v`, restricted to a subspace `E`, that makes it an admissible velocity of a
//! constraint set `S` at `x`. Two families of sets are supported: finitely generated sets
//! satisfying a rank condition on active gradients, and the non-convex sectors used by
//! projection-based controllers. On top of that sit a Krasovskii-hull verifier, a
//! closed-loop builder for plant/controller/sector interconnections, and a fixed-step
//! simulator.
//!
//! Module map:
//! - [`geometry`]: constraint sets, sectors, active sets, tangent cones
//! - [`projection`]: the partial projection operator (KKT enumeration, sector path)
//! - [`oracle`]: brute-force reference answers used to certify the solver
//! - [`krasovskii`]: explicit Krasovskii hulls and the hull ∩ cone check
//! - [`pbc`]: closed-loop construction and the projected vector field
//! - [`sim`]: input signals, time stepping, traces
//! - [`scenario`]: JSON scenario files and the builtin model registry
//! - [`suites`]: randomized verification suites shared by the CLI and tests

pub mod error;
pub mod geometry;
pub mod krasovskii;
pub mod linalg;
pub mod oracle;
pub mod pbc;
pub mod projection;
pub mod scenario;
pub mod sim;
pub mod suites;

pub use error::{Error, Result};
pub use geometry::{
    lifted_tangent_cone, sector_tangent_cone, ConstraintSet, PolyhedralCone, ScalarConstraint,
    Sector, SectorBranch, SectorLocus, TangentCone,
};
pub use linalg::{Matrix, Vector};
pub use projection::{
    project_partial, sector_project, vstar_selector, ProjectionResult, ProjectionSubspace,
};

