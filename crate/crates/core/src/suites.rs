//! Randomized verification suites.
//!
//! Every case draws from its own `ChaCha8Rng` seeded by `(seed, case index)`, so reports
//! are identical across runs and thread counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConstraintSet, PolyhedralCone, ScalarConstraint, Sector, TangentCone};
use crate::krasovskii::{
    krasovskii_vertices, sector_krasovskii_vertices, verify_equality, VerificationReport,
};
use crate::linalg::{numeric_rank, singular_values, Matrix, Vector};
use crate::oracle::{oracle_project, OracleConfig};
use crate::projection::{
    feasible, kkt_candidates, project_partial, sector_project, ProjectionSubspace,
};

/// Solver and oracle must agree to this distance.
pub const ORACLE_TOL: f64 = 1e-6;
/// Passing KKT subsets must agree to this distance.
pub const UNIQUENESS_TOL: f64 = 1e-9;
/// Instances with `σ_min(AE) / σ_max(AE)` below this are redrawn.
pub const MIN_CONDITIONING: f64 = 1e-2;
const BATCH: usize = 256;

pub(crate) fn case_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) << 20);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one value per call keeps the stream layout simple.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| gaussian(rng))
}

fn gaussian_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| gaussian(rng))
}

fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    crate::linalg::matrix_to_rows(m)
}

/// One random projection problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionInstance {
    pub index: u64,
    pub cone_rows: Vec<Vec<f64>>,
    pub basis: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

impl ProjectionInstance {
    pub fn cone(&self) -> PolyhedralCone {
        PolyhedralCone::from_rows(&self.cone_rows)
    }

    pub fn subspace(&self) -> ProjectionSubspace {
        let m = crate::linalg::matrix_from_rows(&self.basis).expect("rectangular basis");
        ProjectionSubspace::new(m).expect("full column rank by construction")
    }

    pub fn vector(&self) -> Vector {
        Vector::from_column_slice(&self.v)
    }
}

enum Draw {
    Ok(ProjectionInstance),
    IllConditioned,
    Infeasible,
}

/// Random instance: `n ∈ 2..=max_dim`, `1..=min(4, n)` independent cone rows,
/// `1..=min(3, n)` subspace columns.
fn draw_instance(seed: u64, index: u64, max_dim: usize) -> Draw {
    let mut rng = case_rng(seed, 1, index);
    let n = rng.random_range(2..=max_dim);
    let m = rng.random_range(1..=n.min(4));
    let ne = rng.random_range(1..=n.min(3));
    let a = gaussian_mat(&mut rng, m, n);
    let e = gaussian_mat(&mut rng, n, ne);
    let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];
    let v = gaussian_vec(&mut rng, n) * scale;
    if numeric_rank(&a) < m || numeric_rank(&e) < ne {
        return Draw::IllConditioned;
    }
    let sv = singular_values(&(&a * &e));
    if sv.is_empty() || sv[sv.len() - 1] < MIN_CONDITIONING * sv[0] {
        return Draw::IllConditioned;
    }
    let inst = ProjectionInstance {
        index,
        cone_rows: rows_of(&a),
        basis: rows_of(&e),
        v: to_vec(&v),
    };
    if !feasible(&inst.cone(), &inst.subspace(), &v) {
        return Draw::Infeasible;
    }
    Draw::Ok(inst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSuiteConfig {
    /// Number of feasible instances to check.
    pub count: usize,
    pub seed: u64,
    /// Largest ambient dimension, at least 2 and at most 6.
    pub max_dim: usize,
    /// Sector-origin cases for the branch-agreement check.
    pub sector_cases: usize,
}

impl Default for ProjectionSuiteConfig {
    fn default() -> Self {
        Self {
            count: 10_000,
            seed: 0,
            max_dim: 6,
            sector_cases: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub instance: ProjectionInstance,
    pub solver: Option<Vec<f64>>,
    pub oracle: Option<Vec<f64>>,
    pub distance: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSuiteReport {
    pub config: ProjectionSuiteConfig,
    pub checked: usize,
    pub skipped_infeasible: usize,
    pub skipped_ill_conditioned: usize,
    pub mismatches: usize,
    pub max_discrepancy: f64,
    pub worst_case: Option<Discrepancy>,
    /// Instances where passing KKT subsets disagree or none passes.
    pub uniqueness_failures: usize,
    /// Largest number of passing subsets seen on one instance.
    pub max_passing_subsets: usize,
    pub sector_cases: usize,
    pub branch_contradictions: usize,
    pub sector_mismatches: usize,
    /// Fewer feasible instances than requested were found within the attempt cap.
    pub exhausted: bool,
}

impl ProjectionSuiteReport {
    pub fn passed(&self) -> bool {
        !self.exhausted
            && self.mismatches == 0
            && self.uniqueness_failures == 0
            && self.branch_contradictions == 0
            && self.sector_mismatches == 0
    }
}

struct CaseOutcome {
    distance: f64,
    failure: Option<Discrepancy>,
    unique: bool,
    passing: usize,
}

fn check_instance(inst: &ProjectionInstance, cfg: &OracleConfig) -> CaseOutcome {
    let cone = inst.cone();
    let e = inst.subspace();
    let v = inst.vector();
    let solver = project_partial(&cone, &e, &v);
    let oracle = oracle_project(&TangentCone::Convex(cone.clone()), e.basis(), &v, cfg);
    let cands = kkt_candidates(&cone, &e, &v).unwrap_or_default();
    let (distance, failure) = match (&solver, &oracle) {
        (Ok(s), Ok(o)) => {
            let d = (&s.w - o).norm();
            let fail = d > ORACLE_TOL;
            (
                d,
                fail.then(|| Discrepancy {
                    instance: inst.clone(),
                    solver: Some(to_vec(&s.w)),
                    oracle: Some(to_vec(o)),
                    distance: Some(d),
                    error: None,
                }),
            )
        }
        _ => (
            f64::INFINITY,
            Some(Discrepancy {
                instance: inst.clone(),
                solver: solver.as_ref().ok().map(|s| to_vec(&s.w)),
                oracle: oracle.as_ref().ok().map(to_vec),
                distance: None,
                error: Some(format!(
                    "solver: {:?}; oracle: {:?}",
                    solver.as_ref().err(),
                    oracle.as_ref().err()
                )),
            }),
        ),
    };
    let unique = match &solver {
        Ok(s) => {
            !cands.is_empty()
                && cands
                    .iter()
                    .all(|c| (&c.w - &s.w).norm() <= UNIQUENESS_TOL * (1.0 + v.norm()))
        }
        Err(_) => false,
    };
    CaseOutcome {
        distance,
        failure,
        unique,
        passing: cands.len(),
    }
}

/// Draw `count` feasible instances in index order (skipping infeasible and
/// ill-conditioned draws), at most `50 count` attempts.
pub fn projection_instances(
    count: usize,
    seed: u64,
    max_dim: usize,
) -> Result<(Vec<ProjectionInstance>, usize, usize, bool)> {
    if !(2..=6).contains(&max_dim) {
        return Err(Error::InvalidParameter {
            name: "max_dim",
            reason: format!("must lie in 2..=6, got {max_dim}"),
        });
    }
    let cap = 50 * count.max(1) as u64;
    let mut out = Vec::with_capacity(count);
    let (mut infeasible, mut ill) = (0, 0);
    let mut next = 0u64;
    while out.len() < count && next < cap {
        let hi = (next + BATCH as u64).min(cap);
        let draws: Vec<Draw> = (next..hi)
            .into_par_iter()
            .map(|i| draw_instance(seed, i, max_dim))
            .collect();
        for d in draws {
            if out.len() == count {
                break;
            }
            match d {
                Draw::Ok(inst) => out.push(inst),
                Draw::IllConditioned => ill += 1,
                Draw::Infeasible => infeasible += 1,
            }
        }
        next = hi;
    }
    let exhausted = out.len() < count;
    Ok((out, infeasible, ill, exhausted))
}

/// Solver vs oracle on random feasible instances, uniqueness of the KKT optimum, and
/// branch agreement at sector corners.
pub fn run_projection_suite(cfg: &ProjectionSuiteConfig) -> Result<ProjectionSuiteReport> {
    let (instances, infeasible, ill, exhausted) =
        projection_instances(cfg.count, cfg.seed, cfg.max_dim)?;
    let ocfg = OracleConfig::default();
    let outcomes: Vec<CaseOutcome> = instances
        .par_iter()
        .map(|inst| check_instance(inst, &ocfg))
        .collect();
    let mut report = ProjectionSuiteReport {
        config: cfg.clone(),
        checked: outcomes.len(),
        skipped_infeasible: infeasible,
        skipped_ill_conditioned: ill,
        mismatches: 0,
        max_discrepancy: 0.0,
        worst_case: None,
        uniqueness_failures: 0,
        max_passing_subsets: 0,
        sector_cases: cfg.sector_cases,
        branch_contradictions: 0,
        sector_mismatches: 0,
        exhausted,
    };
    let mut worst = -1.0;
    for (inst, o) in instances.iter().zip(outcomes) {
        if o.failure.is_some() {
            report.mismatches += 1;
        }
        if o.distance.is_finite() {
            report.max_discrepancy = report.max_discrepancy.max(o.distance);
        }
        if o.distance > worst {
            worst = o.distance;
            report.worst_case = Some(o.failure.unwrap_or_else(|| Discrepancy {
                instance: inst.clone(),
                solver: None,
                oracle: None,
                distance: Some(o.distance),
                error: None,
            }));
        }
        if !o.unique {
            report.uniqueness_failures += 1;
        }
        report.max_passing_subsets = report.max_passing_subsets.max(o.passing);
    }
    let sector: Vec<(bool, bool)> = (0..cfg.sector_cases as u64)
        .into_par_iter()
        .map(|i| sector_origin_case(cfg.seed, i, &ocfg))
        .collect();
    report.branch_contradictions = sector.iter().filter(|c| c.0).count();
    report.sector_mismatches = sector.iter().filter(|c| c.1).count();
    Ok(report)
}

/// Random sector and field at the origin: `(contradiction, oracle mismatch)`.
fn sector_origin_case(seed: u64, index: u64, ocfg: &OracleConfig) -> (bool, bool) {
    let mut rng = case_rng(seed, 2, index);
    let k1 = rng.random_range(-3.0..3.0);
    let k2 = k1 + rng.random_range(0.05..4.0);
    let sec = Sector::new(k1, k2).expect("k1 < k2");
    let edot = if rng.random_range(0..10) == 0 {
        0.0
    } else {
        gaussian(&mut rng) * 3.0
    };
    let w = Vector::from_column_slice(&[edot, gaussian(&mut rng) * 3.0]);
    let o = Vector::zeros(2);
    match sector_project(&sec, &o, &w) {
        Err(Error::BranchContradiction { .. }) => (true, false),
        Err(_) => (false, true),
        Ok(r) => {
            let t = sec.tangent_cone(&o).expect("origin is in every sector");
            let e = ProjectionSubspace::sector();
            let mismatch = match oracle_project(&t, e.basis(), &w, ocfg) {
                Ok(ow) => (&ow - &r.w).norm() > ORACLE_TOL,
                Err(_) => true,
            };
            (false, mismatch)
        }
    }
}

/// A finitely generated set with a prescribed number of constraints active at `x`.
#[derive(Debug, Clone)]
pub struct FgInstance {
    pub index: u64,
    pub set: ConstraintSet,
    pub x: Vector,
    pub e: ProjectionSubspace,
    pub f: Vector,
}

/// Random `n ∈ 2..=4` with 0-3 active affine/quadratic constraints (independent
/// gradients) and one or two inactive ones.
pub fn draw_fg_instance(seed: u64, index: u64) -> FgInstance {
    let mut rng = case_rng(seed, 3, index);
    loop {
        let n = rng.random_range(2..=4);
        let x = gaussian_vec(&mut rng, n);
        let active = [0, 1, 1, 2, 2, 2, 3, 3][rng.random_range(0..8)].min(n);
        let inactive = rng.random_range(1..=2);
        let mut cons = Vec::new();
        for k in 0..(active + inactive) {
            let margin = if k < active {
                0.0
            } else {
                rng.random_range(0.1..2.0)
            };
            if rng.random_bool(0.5) {
                let a = gaussian_vec(&mut rng, n);
                let b = -a.dot(&x) + margin;
                cons.push(ScalarConstraint::affine(a, b));
            } else {
                let g = gaussian_mat(&mut rng, n, n);
                let q = (&g + g.transpose()) * 0.25;
                let c = gaussian_vec(&mut rng, n);
                let d = -(x.dot(&(&q * &x)) + c.dot(&x)) + margin;
                cons.push(ScalarConstraint::quadratic(q, c, d));
            }
        }
        let set = ConstraintSet::new(n, cons).expect("dimensions agree");
        let ne = rng.random_range(1..=n.min(3));
        let basis = gaussian_mat(&mut rng, n, ne);
        let f = gaussian_vec(&mut rng, n) * 2.0;
        let Ok(e) = ProjectionSubspace::new(basis) else {
            continue;
        };
        let cq = set.check_cq(&x);
        if !cq.holds || cq.active.len() != active {
            continue;
        }
        return FgInstance {
            index,
            set,
            x,
            e,
            f,
        };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrasovskiiSuiteConfig {
    /// Feasible finitely generated instances to check, and sector points to sweep.
    pub count: usize,
    pub seed: u64,
    pub resolutions: Vec<f64>,
}

impl Default for KrasovskiiSuiteConfig {
    fn default() -> Self {
        Self {
            count: 1_000,
            seed: 0,
            resolutions: vec![0.02, 0.01],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrasovskiiSuiteReport {
    pub config: KrasovskiiSuiteConfig,
    pub fg_checked: usize,
    pub fg_skipped_infeasible: usize,
    /// Instances where equality failed at some resolution.
    pub fg_failures: Vec<u64>,
    /// Instances where the resolutions disagree on `holds`.
    pub grid_disagreements: Vec<u64>,
    pub nesting_violations: usize,
    pub max_subspace_residual: f64,
    pub sector_checked: usize,
    pub sector_expected_failures: usize,
    pub sector_observed_failures: usize,
    /// Sector points whose outcome differs from "fails iff corner with ė ≠ 0".
    pub sector_pattern_mismatches: Vec<u64>,
    /// Sector `(0, 1)` at the origin with `w = (1, 2)`.
    pub corner_example: VerificationReport,
}

impl KrasovskiiSuiteReport {
    pub fn passed(&self) -> bool {
        let corner_ok = !self.corner_example.holds
            && self
                .corner_example
                .witnesses
                .iter()
                .any(|w| (w[0] - 1.0).abs() <= 1e-9 && w[1].abs() <= 1e-9);
        self.fg_checked == self.config.count
            && self.fg_failures.is_empty()
            && self.grid_disagreements.is_empty()
            && self.nesting_violations == 0
            && self.sector_pattern_mismatches.is_empty()
            && corner_ok
    }
}

enum FgOutcome {
    Skipped,
    Checked {
        holds: Vec<bool>,
        nesting: usize,
        residual: f64,
    },
}

fn fg_case(inst: &FgInstance, resolutions: &[f64]) -> Result<FgOutcome> {
    let cone = inst.set.tangent_cone(&inst.x)?;
    if !feasible(&cone, &inst.e, &inst.f) {
        return Ok(FgOutcome::Skipped);
    }
    let hull = krasovskii_vertices(&inst.set, &inst.e, &inst.x, &inst.f)?;
    let pi = project_partial(&cone, &inst.e, &inst.f)?.w;
    let t = TangentCone::Convex(cone);
    let holds = resolutions
        .iter()
        .map(|&r| verify_equality(&hull, &t, &pi, r).map(|rep| rep.holds))
        .collect::<Result<Vec<_>>>()?;
    Ok(FgOutcome::Checked {
        holds,
        nesting: hull.nesting_violations().len(),
        residual: hull.max_subspace_residual(&inst.e) / (1.0 + inst.f.norm()),
    })
}

/// Random sector point (rays, corner, interior) and field: `(expected_fail, holds per res)`.
fn sector_case(seed: u64, index: u64, resolutions: &[f64]) -> Result<(bool, Vec<bool>)> {
    let mut rng = case_rng(seed, 4, index);
    let k1 = rng.random_range(-2.0..2.0);
    let k2 = k1 + rng.random_range(0.1..3.0);
    let sec = Sector::new(k1, k2)?;
    let e = gaussian(&mut rng) * 2.0;
    let s = match rng.random_range(0..6) {
        0 | 1 => Vector::zeros(2),
        2 => Vector::from_column_slice(&[e, k1 * e]),
        3 => Vector::from_column_slice(&[e, k2 * e]),
        _ => {
            let (lo, hi) = sec.u_interval(e);
            Vector::from_column_slice(&[e, lo + (hi - lo) * rng.random::<f64>()])
        }
    };
    let edot = if rng.random_range(0..4) == 0 {
        0.0
    } else {
        gaussian(&mut rng) * 2.0
    };
    let w = Vector::from_column_slice(&[edot, gaussian(&mut rng) * 2.0]);
    let hull = sector_krasovskii_vertices(&sec, &s, &w)?;
    let t = sec.tangent_cone(&s)?;
    let pi = sector_project(&sec, &s, &w)?.w;
    let corner = matches!(sec.locate(&s)?, crate::geometry::SectorLocus::Corner);
    let holds = resolutions
        .iter()
        .map(|&r| verify_equality(&hull, &t, &pi, r).map(|rep| rep.holds))
        .collect::<Result<Vec<_>>>()?;
    Ok((corner && edot != 0.0, holds))
}

/// Krasovskii equality on finitely generated sets, the sector failure pattern, and
/// the corner counterexample.
pub fn run_krasovskii_suite(cfg: &KrasovskiiSuiteConfig) -> Result<KrasovskiiSuiteReport> {
    if cfg.resolutions.is_empty() {
        return Err(Error::InvalidParameter {
            name: "resolutions",
            reason: "at least one resolution is required".into(),
        });
    }
    // Draw until `count` feasible instances are checked; batches keep the result
    // independent of the thread count.
    let mut fg: Vec<(u64, FgOutcome)> = Vec::new();
    let mut feasible_seen = 0;
    let cap = 50 * cfg.count as u64;
    let mut next = 0u64;
    while feasible_seen < cfg.count && next < cap {
        let batch: Vec<(u64, FgOutcome)> = (next..(next + BATCH as u64).min(cap))
            .into_par_iter()
            .map(|i| {
                let inst = draw_fg_instance(cfg.seed, i);
                fg_case(&inst, &cfg.resolutions).map(|o| (i, o))
            })
            .collect::<Result<_>>()?;
        next += BATCH as u64;
        for item in batch {
            if feasible_seen == cfg.count {
                break;
            }
            if matches!(item.1, FgOutcome::Checked { .. }) {
                feasible_seen += 1;
            }
            fg.push(item);
        }
    }
    let sector: Vec<(u64, bool, Vec<bool>)> = (0..cfg.count as u64)
        .into_par_iter()
        .map(|i| sector_case(cfg.seed, i, &cfg.resolutions).map(|(x, h)| (i, x, h)))
        .collect::<Result<_>>()?;

    let sec = Sector::new(0.0, 1.0)?;
    let o = Vector::zeros(2);
    let w = Vector::from_column_slice(&[1.0, 2.0]);
    let hull = sector_krasovskii_vertices(&sec, &o, &w)?;
    let pi = sector_project(&sec, &o, &w)?.w;
    let corner_example = verify_equality(&hull, &sec.tangent_cone(&o)?, &pi, cfg.resolutions[0])?;

    let mut report = KrasovskiiSuiteReport {
        config: cfg.clone(),
        fg_checked: 0,
        fg_skipped_infeasible: 0,
        fg_failures: Vec::new(),
        grid_disagreements: Vec::new(),
        nesting_violations: 0,
        max_subspace_residual: 0.0,
        sector_checked: sector.len(),
        sector_expected_failures: 0,
        sector_observed_failures: 0,
        sector_pattern_mismatches: Vec::new(),
        corner_example,
    };
    for (i, outcome) in fg {
        match outcome {
            FgOutcome::Skipped => report.fg_skipped_infeasible += 1,
            FgOutcome::Checked {
                holds,
                nesting,
                residual,
            } => {
                report.fg_checked += 1;
                if holds.iter().any(|h| !h) {
                    report.fg_failures.push(i);
                }
                if holds.iter().any(|&h| h != holds[0]) {
                    report.grid_disagreements.push(i);
                }
                report.nesting_violations += nesting;
                report.max_subspace_residual = report.max_subspace_residual.max(residual);
            }
        }
    }
    for (i, expect_fail, holds) in sector {
        if expect_fail {
            report.sector_expected_failures += 1;
        }
        if holds.iter().any(|h| !h) {
            report.sector_observed_failures += 1;
        }
        if holds.contains(&expect_fail) {
            report.sector_pattern_mismatches.push(i);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_projection_suite_is_deterministic() {
        let cfg = ProjectionSuiteConfig {
            count: 40,
            seed: 7,
            max_dim: 4,
            sector_cases: 20,
        };
        let a = run_projection_suite(&cfg).unwrap();
        let b = run_projection_suite(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert!(a.passed(), "{a:?}");
    }

    #[test]
    fn narrow_dims_skip_infeasible() {
        let (inst, infeasible, _, _) = projection_instances(50, 3, 2).unwrap();
        assert_eq!(inst.len(), 50);
        assert!(infeasible > 0);
    }

    #[test]
    fn max_dim_validated() {
        assert!(projection_instances(1, 0, 7).is_err());
        assert!(projection_instances(1, 0, 1).is_err());
    }

    #[test]
    fn fg_instances_have_requested_structure() {
        for i in 0..50 {
            let inst = draw_fg_instance(1, i);
            assert!(inst.set.contains(&inst.x));
            assert!(inst.set.check_cq(&inst.x).holds);
        }
    }

    #[test]
    fn small_krasovskii_suite() {
        let cfg = KrasovskiiSuiteConfig {
            count: 30,
            seed: 1,
            resolutions: vec![0.05, 0.025],
        };
        let r = run_krasovskii_suite(&cfg).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
