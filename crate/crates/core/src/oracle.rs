//! Brute-force reference answers for partial projections and tangent-cone membership.
//!
//! Nothing here shares code with the KKT solver in [`crate::projection`]: the
//! projection oracle is a dense grid search over the correction coefficients
//! followed by zoomed grids whose candidates are pushed onto the feasibility
//! boundary by bisection. Two polishes compete with the grid answer: Dykstra's
//! alternating half-space projections in the metric `EᵀE`, and a primal-dual
//! interior-point iteration. Tangent membership is decided from the
//! sequential definition with difference quotients.

use log::debug;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{mem_tol, ConstraintSet, PolyhedralCone, TangentCone, EPS_CONE};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Search box half-width for the coefficients; `None` means `10 (1 + ||v||)`.
    pub eta_box_halfwidth: Option<f64>,
    /// Grid points per coefficient; `None` picks 2001 / 201 / 51 for 1 / 2 / 3 columns.
    pub grid_points_per_dim: Option<usize>,
    /// Number of zoom-and-bisect refinement passes.
    pub refine_iters: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            eta_box_halfwidth: None,
            grid_points_per_dim: None,
            refine_iters: 60,
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if let Some(n) = self.grid_points_per_dim {
            if n < 3 {
                return Err(Error::InvalidParameter {
                    name: "grid_points_per_dim",
                    reason: format!("must be >= 3, got {n}"),
                });
            }
        }
        if self.refine_iters < 1 {
            return Err(Error::InvalidParameter {
                name: "refine_iters",
                reason: "must be >= 1".into(),
            });
        }
        if let Some(r) = self.eta_box_halfwidth {
            if !(r > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "eta_box_halfwidth",
                    reason: format!("must be positive, got {r}"),
                });
            }
        }
        Ok(())
    }

    fn points_for(&self, n_e: usize) -> usize {
        self.grid_points_per_dim.unwrap_or(match n_e {
            1 => 2001,
            2 => 201,
            _ => 51,
        })
    }
}

/// Grid spacing the oracle uses on its first pass for a given problem.
pub fn coarse_spacing(v: &Vector, n_e: usize, cfg: &OracleConfig) -> f64 {
    let r = cfg.eta_box_halfwidth.unwrap_or(10.0 * (1.0 + v.norm()));
    2.0 * r / (cfg.points_for(n_e) - 1) as f64
}

/// `v + E η` minimizing `||E η||` over `v + E η ∈ cone`, by exhaustive search.
pub fn oracle_project(
    cone: &TangentCone,
    e: &Matrix,
    v: &Vector,
    cfg: &OracleConfig,
) -> Result<Vector> {
    cfg.validate()?;
    check_dim(cone.dim(), v.len())?;
    check_dim(v.len(), e.nrows())?;
    let n_e = e.ncols();
    if n_e == 0 || n_e > 3 {
        return Err(Error::InvalidParameter {
            name: "E",
            reason: format!("oracle supports 1..=3 columns, got {n_e}"),
        });
    }
    if cone.contains(v) {
        return Ok(v.clone());
    }
    let mut best: Option<(f64, Vector)> = None;
    for branch in cone.branches() {
        match BranchSearch::new(branch, e, v).solve(cfg) {
            Ok(eta) => {
                let cost = (e * &eta).norm();
                if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                    best = Some((cost, eta));
                }
            }
            Err(Error::NoFeasiblePoint) => {}
            Err(err) => return Err(err),
        }
    }
    best.map(|(_, eta)| v + e * eta)
        .ok_or(Error::NoFeasiblePoint)
}

/// Search over `η` for one convex cone `{w : A w >= 0}` with `w = v + E η`.
struct BranchSearch<'a> {
    e: &'a Matrix,
    v: &'a Vector,
    /// `A E`
    b: Matrix,
    /// `A v`
    c: Vector,
    /// `EᵀE`
    metric: Matrix,
    base_tol: Vec<f64>,
    row_l1: Vec<f64>,
}

impl<'a> BranchSearch<'a> {
    fn new(cone: &'a PolyhedralCone, e: &'a Matrix, v: &'a Vector) -> Self {
        let a = cone.rows();
        let b = a * e;
        let c = a * v;
        let base_tol = (0..a.nrows())
            .map(|i| EPS_CONE * (1.0 + a.row(i).norm() * v.norm()))
            .collect();
        let row_l1 = (0..b.nrows())
            .map(|i| b.row(i).iter().map(|x| x.abs()).sum())
            .collect();
        Self {
            e,
            v,
            metric: e.transpose() * e,
            b,
            c,
            base_tol,
            row_l1,
        }
    }

    fn n_e(&self) -> usize {
        self.e.ncols()
    }

    /// Membership of `v + E η`, loosened by `spacing` times the row's l1 norm.
    fn feasible(&self, eta: &[f64], spacing: f64) -> bool {
        (0..self.b.nrows()).all(|i| {
            let mut s = self.c[i];
            for (j, x) in eta.iter().enumerate() {
                s += self.b[(i, j)] * x;
            }
            s >= -(self.base_tol[i] + spacing * self.row_l1[i])
        })
    }

    fn cost(&self, eta: &[f64]) -> f64 {
        let k = eta.len();
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                s += eta[i] * self.metric[(i, j)] * eta[j];
            }
        }
        s
    }

    fn solve(&self, cfg: &OracleConfig) -> Result<Vector> {
        let base_r = cfg
            .eta_box_halfwidth
            .unwrap_or(10.0 * (1.0 + self.v.norm()));
        let n = cfg.points_for(self.n_e());
        let mut found = None;
        for attempt in 0..12 {
            let r = base_r * f64::from(1 << attempt);
            if let Some(p) = self.coarse(r, n) {
                found = Some((p, 2.0 * r / (n - 1) as f64));
                break;
            }
            debug!("oracle: no feasible grid point in box {r}, doubling");
        }
        let (start, spacing) = found.ok_or(Error::NoFeasiblePoint)?;
        let refined = self.refine(start, spacing, cfg.refine_iters);
        let polished = self.dykstra();
        let interior = self.interior_point();
        // Only strictly feasible candidates count; the cheaper one wins.
        let pick = [Some(refined), polished, interior]
            .into_iter()
            .flatten()
            .filter(|p| self.feasible(p, 0.0))
            .min_by(|a, b| self.cost(a).total_cmp(&self.cost(b)))
            .ok_or(Error::NoFeasiblePoint)?;
        Ok(Vector::from_column_slice(&pick))
    }

    fn grid_point(idx: usize, n: usize, k: usize, center: &[f64], r: f64) -> Vec<f64> {
        let step = 2.0 * r / (n - 1) as f64;
        let mut rem = idx;
        (0..k)
            .map(|d| {
                let i = rem % n;
                rem /= n;
                center[d] - r + step * i as f64
            })
            .collect()
    }

    /// Best feasible point (by cost) on the `n^k` grid over `[-r, r]^k`.
    fn coarse(&self, r: f64, n: usize) -> Option<Vec<f64>> {
        let k = self.n_e();
        let total = n.pow(k as u32);
        let spacing = 2.0 * r / (n - 1) as f64;
        let zero = vec![0.0; k];
        let best = (0..total)
            .into_par_iter()
            .filter_map(|idx| {
                let p = Self::grid_point(idx, n, k, &zero, r);
                self.feasible(&p, spacing).then(|| (self.cost(&p), idx))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))?;
        Some(Self::grid_point(best.1, n, k, &zero, r))
    }

    /// Smallest `t ∈ [0,1]` with `t p` feasible, assuming `p` feasible.
    fn radial_boundary(&self, p: &[f64], spacing: f64) -> Vec<f64> {
        let zero = vec![0.0; p.len()];
        if self.feasible(&zero, spacing) {
            return zero;
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let q: Vec<f64> = p.iter().map(|x| mid * x).collect();
            if self.feasible(&q, spacing) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        p.iter().map(|x| hi * x).collect()
    }

    /// Zoomed 5^k grids around the incumbent, each candidate pulled onto the
    /// boundary along the ray to the origin. A pass that finds a candidate at half
    /// the current slack halves both slack and zoom; otherwise the zoom widens.
    fn refine(&self, start: Vec<f64>, spacing: f64, passes: usize) -> Vec<f64> {
        let k = self.n_e();
        let n: usize = 5;
        let mut slack = spacing;
        let mut best = self.radial_boundary(&start, slack);
        let mut r = spacing;
        for _ in 0..passes {
            let next_slack = slack / 2.0;
            let total = n.pow(k as u32);
            let cand = (0..total)
                .filter_map(|idx| {
                    let p = Self::grid_point(idx, n, k, &best, r);
                    self.feasible(&p, next_slack)
                        .then(|| self.radial_boundary(&p, next_slack))
                })
                .min_by(|a, b| self.cost(a).total_cmp(&self.cost(b)));
            match cand {
                Some(c) => {
                    best = c;
                    slack = next_slack;
                    r *= 0.5;
                }
                None => r *= 2.0,
            }
            let scale: f64 = 1.0 + best.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if r < 1e-15 * scale || r > 1e3 * spacing {
                break;
            }
        }
        best
    }

    /// Infeasible-start primal-dual path following (Mehrotra) on
    /// `min ηᵀ(EᵀE)η  s.t.  B η + c = s,  s >= 0`, after scaling rows to unit norm
    /// and `η` to unit size.
    fn interior_point(&self) -> Option<Vec<f64>> {
        let k = self.n_e();
        let m = self.b.nrows();
        let norms: Vec<f64> = (0..m).map(|i| self.b.row(i).norm()).collect();
        if norms.contains(&0.0) {
            return None;
        }
        let b = Matrix::from_fn(m, k, |i, j| self.b[(i, j)] / norms[i]);
        let c0 = Vector::from_fn(m, |i, _| self.c[i] / norms[i]);
        let scale = 1.0 + c0.amax();
        let c = &c0 / scale;
        let h = &self.metric * (2.0 / self.metric.norm());
        let bt = b.transpose();
        let mut eta = Vector::zeros(k);
        let mut s = Vector::from_element(m, 1.0);
        let mut lam = Vector::from_element(m, 1.0);
        let step_len = |s: &Vector, ds: &Vector, l: &Vector, dl: &Vector| {
            let mut a: f64 = 1.0;
            for i in 0..s.len() {
                if ds[i] < 0.0 {
                    a = a.min(-s[i] / ds[i]);
                }
                if dl[i] < 0.0 {
                    a = a.min(-l[i] / dl[i]);
                }
            }
            a
        };
        for _ in 0..100 {
            let mu = s.dot(&lam) / m as f64;
            let rp = &b * &eta + &c - &s;
            let rd = &h * &eta - &bt * &lam;
            if mu <= 1e-18 && rp.amax() <= 1e-16 && rd.amax() <= 1e-14 {
                break;
            }
            let d = lam.component_div(&s);
            let mut lhs = h.clone();
            for i in 0..m {
                let row = b.row(i);
                lhs += row.transpose() * row * d[i];
            }
            let Some(lu) = Some(lhs.lu()).filter(|f| f.is_invertible()) else { break };
            // Solve for a given complementarity target `t` (entries of `s∘λ` wanted).
            let solve = |t: &Vector| -> Option<(Vector, Vector, Vector)> {
                let inner = Vector::from_fn(m, |i, _| (t[i] - lam[i] * rp[i]) / s[i]);
                let deta = lu.solve(&(-&rd + &bt * inner))?;
                let ds = &b * &deta + &rp;
                let dl = Vector::from_fn(m, |i, _| (t[i] - lam[i] * ds[i]) / s[i]);
                Some((deta, ds, dl))
            };
            let sl = s.component_mul(&lam);
            let Some((_, ds_a, dl_a)) = solve(&-&sl) else { break };
            let a_aff = step_len(&s, &ds_a, &lam, &dl_a);
            let mu_aff = (&s + &ds_a * a_aff).dot(&(&lam + &dl_a * a_aff)) / m as f64;
            let sigma = (mu_aff / mu).powi(3);
            let target = Vector::from_fn(m, |i, _| {
                sigma * mu - sl[i] - ds_a[i] * dl_a[i]
            });
            let Some((deta, ds, dl)) = solve(&target) else { break };
            let alpha = (0.995 * step_len(&s, &ds, &lam, &dl)).min(1.0);
            let next = (&eta + &deta * alpha, &s + &ds * alpha, &lam + &dl * alpha);
            let finite = |x: &Vector| x.iter().all(|y| y.is_finite());
            if !(finite(&next.0) && finite(&next.1) && finite(&next.2))
                || next.1.iter().chain(next.2.iter()).any(|&y| y <= 0.0)
            {
                break;
            }
            (eta, s, lam) = next;
        }
        Some((eta * scale).iter().copied().collect())
    }

    /// Dykstra's method for projecting 0 onto `{η : B η >= -c}` in the `EᵀE` metric.
    fn dykstra(&self) -> Option<Vec<f64>> {
        let k = self.n_e();
        let m = self.b.nrows();
        let minv = self.metric.clone().try_inverse()?;
        let dirs: Vec<Vector> = (0..m)
            .map(|i| &minv * self.b.row(i).transpose())
            .collect();
        let denoms: Vec<f64> = (0..m)
            .map(|i| self.b.row(i).transpose().dot(&dirs[i]))
            .collect();
        let mut x = Vector::zeros(k);
        let mut incr = vec![Vector::zeros(k); m];
        for _ in 0..200_000 {
            let prev = x.clone();
            for i in 0..m {
                if denoms[i] <= 0.0 {
                    if self.c[i] < -self.base_tol[i] {
                        return None;
                    }
                    continue;
                }
                let y = &x + &incr[i];
                let slack = self.b.row(i).transpose().dot(&y) + self.c[i];
                let next = if slack < 0.0 {
                    &y - &dirs[i] * (slack / denoms[i])
                } else {
                    y.clone()
                };
                incr[i] = y - &next;
                x = next;
            }
            let change = (&x - &prev).norm();
            if change <= 1e-16 * (1.0 + x.norm()) {
                return Some(x.iter().copied().collect());
            }
        }
        debug!("oracle: Dykstra iteration cap reached");
        None
    }
}

/// Sequential-definition test of `v ∈ T_S(x)`.
///
/// For `τ = 2^-j`, `j = 4..=24`, the point `x + τ v` is pulled back into the set by
/// Gauss-Newton steps on the violated constraints; `v` is accepted when the
/// difference quotients of the last five levels are within `1e-4 (1 + ||v||)` of `v`.
pub fn oracle_tangent_membership(set: &ConstraintSet, x: &Vector, v: &Vector) -> bool {
    if x.len() != set.dim() || v.len() != set.dim() || !set.contains(x) {
        return false;
    }
    let tol = 1e-4 * (1.0 + v.norm());
    (20..=24).all(|j| {
        let tau = 2f64.powi(-j);
        match correct_into_set(set, &(x + v * tau)) {
            Some(y) => ((y - x) / tau - v).norm() <= tol,
            None => false,
        }
    })
}

/// Quotient errors for every level `j = 4..=24` (diagnostics).
pub fn oracle_quotient_errors(set: &ConstraintSet, x: &Vector, v: &Vector) -> Vec<f64> {
    (4..=24)
        .map(|j| {
            let tau = 2f64.powi(-j);
            correct_into_set(set, &(x + v * tau))
                .map_or(f64::INFINITY, |y| ((y - x) / tau - v).norm())
        })
        .collect()
}

fn correct_into_set(set: &ConstraintSet, y0: &Vector) -> Option<Vector> {
    let mut y = y0.clone();
    for _ in 0..60 {
        let vals = set.values(&y);
        let viol: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] < 0.0).collect();
        let worst = viol.iter().map(|&i| -vals[i]).fold(0.0, f64::max);
        if worst <= 1e-15 * (1.0 + y.norm()) {
            return Some(y);
        }
        let mut g = Matrix::zeros(viol.len(), set.dim());
        let mut h = Vector::zeros(viol.len());
        for (r, &i) in viol.iter().enumerate() {
            g.set_row(r, &set.constraints()[i].gradient(&y).transpose());
            h[r] = vals[i];
        }
        // Minimal-norm step solving G δ = -h.
        let pinv = g.clone().pseudo_inverse(1e-14).ok()?;
        let delta = -(pinv * h);
        if delta.norm() == 0.0 {
            break;
        }
        y += delta;
    }
    (set.violation(&y) <= mem_tol(&y)).then_some(y)
}
