//! Plant / controller / sector interconnections and their projected vector field.
//!
//! The closed-loop state is `ξ = (x, z)`. The sector constrains `(e, u) = H ξ` with
//! `e = G_p x` and `u = z_1`, and corrections act on `z` only. Because of this
//! structure the full projection reduces to the 2-D sector projection of
//! `(ė, f_{c,1})`: only `ż_1` is ever modified.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{lifted_tangent_cone, Sector, SectorBranch, SectorLocus, TangentCone};
use crate::linalg::{Matrix, Vector};
use crate::projection::{sector_project, ProjectionSubspace};

type PlantFn = dyn Fn(&Vector, f64, f64) -> Vector + Send + Sync;
type ControllerFn = dyn Fn(&Vector, f64) -> Vector + Send + Sync;

/// `ẋ = A x + b u + b_w w + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub a: Matrix,
    pub b: Vector,
    pub b_w: Vector,
    pub c: Vector,
}

/// `ż = A z + b e + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearController {
    pub a: Matrix,
    pub b: Vector,
    pub c: Vector,
}

#[derive(Clone)]
pub struct Plant {
    n: usize,
    g_p: Vector,
    f: Arc<PlantFn>,
    linear: Option<LinearPlant>,
}

impl fmt::Debug for Plant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Plant")
            .field("n", &self.n)
            .field("g_p", &self.g_p.as_slice())
            .field("linear", &self.linear.is_some())
            .finish()
    }
}

impl Plant {
    /// Plant with dynamics `f(x, u, w)` and output row `g_p`.
    pub fn new(
        g_p: Vector,
        f: impl Fn(&Vector, f64, f64) -> Vector + Send + Sync + 'static,
    ) -> Result<Self> {
        if g_p.is_empty() {
            return Err(Error::InvalidParameter {
                name: "g_p",
                reason: "plant needs at least one state".into(),
            });
        }
        if g_p.iter().all(|&g| g == 0.0) {
            return Err(Error::ZeroOutputRow);
        }
        Ok(Self {
            n: g_p.len(),
            g_p,
            f: Arc::new(f),
            linear: None,
        })
    }

    pub fn linear(lin: LinearPlant, g_p: Vector) -> Result<Self> {
        let n = g_p.len();
        if lin.a.nrows() != n || lin.a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: lin.a.nrows().max(lin.a.ncols()),
            });
        }
        for v in [&lin.b, &lin.b_w, &lin.c] {
            check_dim(n, v.len())?;
        }
        let l = lin.clone();
        let mut p = Self::new(g_p, move |x, u, w| &l.a * x + &l.b * u + &l.b_w * w + &l.c)?;
        p.linear = Some(lin);
        Ok(p)
    }

    /// `ẋ1 = x2`, `ẋ2 = u + w`, output `e = -x1`.
    pub fn double_integrator() -> Self {
        Self::mass_spring_damper(1.0, 0.0, 0.0).expect("valid parameters")
    }

    /// `m ẍ + d ẋ + k x = u + w` in states `(x, ẋ)`, output `e = -x`.
    pub fn mass_spring_damper(mass: f64, damping: f64, stiffness: f64) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidParameter {
                name: "mass",
                reason: format!("must be positive, got {mass}"),
            });
        }
        let lin = LinearPlant {
            a: Matrix::from_row_slice(2, 2, &[0.0, 1.0, -stiffness / mass, -damping / mass]),
            b: Vector::from_column_slice(&[0.0, 1.0 / mass]),
            b_w: Vector::from_column_slice(&[0.0, 1.0 / mass]),
            c: Vector::zeros(2),
        };
        Self::linear(lin, Vector::from_column_slice(&[-1.0, 0.0]))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn g_p(&self) -> &Vector {
        &self.g_p
    }

    pub fn linear_model(&self) -> Option<&LinearPlant> {
        self.linear.as_ref()
    }

    pub fn eval(&self, x: &Vector, u: f64, w: f64) -> Vector {
        (self.f)(x, u, w)
    }
}

#[derive(Clone)]
pub struct Controller {
    m: usize,
    f: Arc<ControllerFn>,
    linear: Option<LinearController>,
}

impl fmt::Debug for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Controller")
            .field("m", &self.m)
            .field("linear", &self.linear.is_some())
            .finish()
    }
}

impl Controller {
    /// Controller `ż = f(z, e)` with output `u = z_1`.
    pub fn new(
        m: usize,
        f: impl Fn(&Vector, f64) -> Vector + Send + Sync + 'static,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: "controller needs at least one state".into(),
            });
        }
        Ok(Self {
            m,
            f: Arc::new(f),
            linear: None,
        })
    }

    pub fn linear(lin: LinearController) -> Result<Self> {
        let m = lin.b.len();
        if lin.a.nrows() != m || lin.a.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: lin.a.nrows().max(lin.a.ncols()),
            });
        }
        check_dim(m, lin.c.len())?;
        let l = lin.clone();
        let mut c = Self::new(m, move |z, e| &l.a * z + &l.b * e + &l.c)?;
        c.linear = Some(lin);
        Ok(c)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn linear_model(&self) -> Option<&LinearController> {
        self.linear.as_ref()
    }

    pub fn eval(&self, z: &Vector, e: f64) -> Vector {
        (self.f)(z, e)
    }
}

/// Integrator controller `ż = ω_h e` with sector `[0, k_h]`.
pub fn higs_preset(k_h: f64, omega_h: f64) -> Result<(Controller, Sector)> {
    for (name, v) in [("k_h", k_h), ("omega_h", omega_h)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("must be positive, got {v}"),
            });
        }
    }
    let c = Controller::linear(LinearController {
        a: Matrix::zeros(1, 1),
        b: Vector::from_element(1, omega_h),
        c: Vector::zeros(1),
    })?;
    Ok((c, Sector::new(0.0, k_h)?))
}

#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    plant: Plant,
    controller: Controller,
    sector: Sector,
    h: Matrix,
    e: ProjectionSubspace,
}

/// Projected field with the quantities that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsEval {
    pub field: Vector,
    pub unprojected: Vector,
    pub e: f64,
    pub u: f64,
    pub edot: f64,
    pub fc1: f64,
    pub vstar: f64,
    pub locus: SectorLocus,
    pub branch: Option<SectorBranch>,
    pub correction_norm: f64,
}

/// Assemble `H = [G_p 0; 0 e_1ᵀ]` and `E = [0; I_m]`.
pub fn build_closed_loop(
    plant: Plant,
    controller: Controller,
    sector: Sector,
) -> Result<ClosedLoopSystem> {
    if plant.g_p.iter().all(|&g| g == 0.0) {
        return Err(Error::ZeroOutputRow);
    }
    // Re-validate in case the sector was built without `Sector::new`.
    let sector = Sector::new(sector.k1(), sector.k2())?;
    let (n, m) = (plant.n, controller.m);
    let mut h = Matrix::zeros(2, n + m);
    for j in 0..n {
        h[(0, j)] = plant.g_p[j];
    }
    h[(1, n)] = 1.0;
    let mut basis = Matrix::zeros(n + m, m);
    for j in 0..m {
        basis[(n + j, j)] = 1.0;
    }
    Ok(ClosedLoopSystem {
        plant,
        controller,
        sector,
        h,
        e: ProjectionSubspace::new(basis)?,
    })
}

impl ClosedLoopSystem {
    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn sector(&self) -> &Sector {
        &self.sector
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn subspace(&self) -> &ProjectionSubspace {
        &self.e
    }

    pub fn dim(&self) -> usize {
        self.plant.n + self.controller.m
    }

    /// `(e, u) = H ξ`.
    pub fn output(&self, xi: &Vector) -> (f64, f64) {
        let s = &self.h * xi;
        (s[0], s[1])
    }

    pub fn contains(&self, xi: &Vector) -> bool {
        let (e, u) = self.output(xi);
        self.sector.contains(&Vector::from_column_slice(&[e, u]))
    }

    /// Distance of `u` from its admissible interval.
    pub fn violation(&self, xi: &Vector) -> f64 {
        let (e, u) = self.output(xi);
        self.sector.violation(e, u)
    }

    /// `(f_p(x, z_1, w), f_c(z, e))`
    pub fn unprojected(&self, xi: &Vector, w: f64) -> Vector {
        let n = self.plant.n;
        let x = xi.rows(0, n).into_owned();
        let z = xi.rows(n, self.controller.m).into_owned();
        let e = self.plant.g_p.dot(&x);
        let fp = self.plant.eval(&x, z[0], w);
        let fc = self.controller.eval(&z, e);
        let mut f = Vector::zeros(self.dim());
        f.rows_mut(0, n).copy_from(&fp);
        f.rows_mut(n, self.controller.m).copy_from(&fc);
        f
    }

    /// `T_𝒮(ξ) = {v : H v ∈ T_S(H ξ)}`.
    pub fn lifted_cone(&self, xi: &Vector) -> Result<TangentCone> {
        check_dim(self.dim(), xi.len())?;
        let s = &self.h * xi;
        lifted_tangent_cone(&self.h, &self.sector.tangent_cone(&s)?)
    }

    /// Linear closed loop `ξ̇ = A ξ + b_w w + c` when both parts are linear.
    pub fn linear_matrices(&self) -> Option<(Matrix, Vector, Vector)> {
        let p = self.plant.linear.as_ref()?;
        let c = self.controller.linear.as_ref()?;
        let (n, m) = (self.plant.n, self.controller.m);
        let mut a = Matrix::zeros(n + m, n + m);
        a.view_mut((0, 0), (n, n)).copy_from(&p.a);
        a.view_mut((0, n), (n, 1)).copy_from(&p.b);
        a.view_mut((n, 0), (m, n)).copy_from(&(&c.b * self.plant.g_p.transpose()));
        a.view_mut((n, n), (m, m)).copy_from(&c.a);
        let mut bw = Vector::zeros(n + m);
        bw.rows_mut(0, n).copy_from(&p.b_w);
        let mut off = Vector::zeros(n + m);
        off.rows_mut(0, n).copy_from(&p.c);
        off.rows_mut(n, m).copy_from(&c.c);
        Some((a, bw, off))
    }
}

/// `Π_{𝒮,E}(ξ, f(ξ, w))` via the 2-D sector projection of `(ė, f_{c,1})`.
pub fn closed_loop_rhs(sys: &ClosedLoopSystem, xi: &Vector, w: f64) -> Result<RhsEval> {
    check_dim(sys.dim(), xi.len())?;
    let n = sys.plant.n;
    let f = sys.unprojected(xi, w);
    let (e, u) = sys.output(xi);
    let edot = sys.plant.g_p.dot(&f.rows(0, n));
    let fc1 = f[n];
    let s = Vector::from_column_slice(&[e, u]);
    let locus = sys.sector.locate(&s)?;
    let r = sector_project(&sys.sector, &s, &Vector::from_column_slice(&[edot, fc1]))?;
    let vstar = r.w[1];
    let mut field = f.clone();
    field[n] = vstar;
    Ok(RhsEval {
        field,
        unprojected: f,
        e,
        u,
        edot,
        fc1,
        vstar,
        locus,
        branch: r.branch,
        correction_norm: (vstar - fc1).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSample {
    pub xi: Vec<f64>,
    pub w: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// `sup ||Π|| / (1 + ||ξ|| + |w|)` over the samples.
    pub m_prime_observed: f64,
    /// Smallest `c` with `||Π|| <= c · max(1,|k1|,|k2|) · M · (1 + ||ξ|| + |w|)` on the samples.
    pub c_observed: f64,
    /// The `c` the report is judged against: `max(1, |k1|, |k2|)`.
    pub c_limit: f64,
    /// Samples exceeding `c_limit`.
    pub violations: Vec<GrowthSample>,
    /// Samples where `||f|| <= M (1 + ||ξ|| + |w|)` itself fails.
    pub precondition_failures: Vec<GrowthSample>,
    pub samples: usize,
}

impl GrowthReport {
    pub fn precondition_holds(&self) -> bool {
        self.precondition_failures.is_empty()
    }
}

/// Radius of the sampling ball.
pub const GROWTH_RADIUS: f64 = 1e3;

/// A point of `𝒮` with `||ξ|| <= radius`: every third sample lies on a boundary ray,
/// a few sit at the corner, the rest are interior.
pub fn sample_state(sys: &ClosedLoopSystem, rng: &mut ChaCha8Rng, radius: f64) -> Vector {
    let dim = sys.dim();
    let n = sys.plant.n;
    let mut xi = Vector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
    let scale = radius * rng.random::<f64>().powi(2);
    xi *= scale / xi.norm().max(1e-300);
    let kind = rng.random_range(0..10);
    if kind == 0 {
        // Corner: e = 0 by removing the G_p component, u = 0.
        let g = &sys.plant.g_p;
        let x = xi.rows(0, n).into_owned();
        let x = &x - g * (g.dot(&x) / g.norm_squared());
        xi.rows_mut(0, n).copy_from(&x);
        xi[n] = 0.0;
        return xi;
    }
    let e = sys.plant.g_p.dot(&xi.rows(0, n));
    let (lo, hi) = sys.sector.u_interval(e);
    xi[n] = match kind {
        1..=2 => sys.sector.k1() * e,
        3..=4 => sys.sector.k2() * e,
        _ => lo + (hi - lo) * rng.random::<f64>(),
    };
    // The sector is a cone, so rescaling keeps the point in it.
    let norm = xi.norm();
    if norm > radius {
        xi *= radius / norm;
    }
    xi
}

/// Sample the linear-growth bound of the projected field.
pub fn growth_check(
    sys: &ClosedLoopSystem,
    m_bound: f64,
    samples: usize,
    seed: u64,
    w_range: f64,
) -> Result<GrowthReport> {
    if !(m_bound > 0.0) {
        return Err(Error::InvalidParameter {
            name: "M",
            reason: format!("must be positive, got {m_bound}"),
        });
    }
    let kmax = sys.sector.slope_bound();
    let rows: Vec<(GrowthSample, f64, bool)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9));
            let xi = sample_state(sys, &mut rng, GROWTH_RADIUS);
            let w = if w_range > 0.0 {
                rng.random_range(-w_range..=w_range)
            } else {
                0.0
            };
            let denom = 1.0 + xi.norm() + w.abs();
            let r = closed_loop_rhs(sys, &xi, w)?;
            let pre_ok = r.unprojected.norm() <= m_bound * denom * (1.0 + 1e-12);
            let pn = r.field.norm();
            Ok((
                GrowthSample {
                    xi: xi.iter().copied().collect(),
                    w,
                    ratio: pn / (kmax * m_bound * denom),
                },
                pn / denom,
                pre_ok,
            ))
        })
        .collect::<Result<_>>()?;
    let mut report = GrowthReport {
        m_prime_observed: 0.0,
        c_observed: 0.0,
        c_limit: kmax,
        violations: Vec::new(),
        precondition_failures: Vec::new(),
        samples,
    };
    for (s, mp, pre_ok) in rows {
        report.m_prime_observed = report.m_prime_observed.max(mp);
        report.c_observed = report.c_observed.max(s.ratio);
        if !pre_ok {
            report.precondition_failures.push(s.clone());
        }
        if s.ratio > kmax {
            report.violations.push(s);
        }
    }
    Ok(report)
}

/// The linear benchmark: `ẋ1 = x2`, `ẋ2 = -x1 - x2 + u + w`, `e = -x1`, HIGS with the
/// given gains.
pub fn higs_benchmark(k_h: f64, omega_h: f64) -> Result<ClosedLoopSystem> {
    let plant = Plant::mass_spring_damper(1.0, 1.0, 1.0)?;
    let (c, s) = higs_preset(k_h, omega_h)?;
    build_closed_loop(plant, c, s)
}
