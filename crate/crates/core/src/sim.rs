//! Fixed-step integration of the projected closed loop.
//!
//! Each step is explicit Euler on the projected field (optionally midpoint), followed
//! by a drift correction that clamps `u = z_1` back into the sector along the
//! correction subspace. Steps are shortened to land exactly on input breakpoints and
//! on the horizon.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{mem_tol, SectorBranch, SectorLocus};
use crate::linalg::Vector;
use crate::pbc::{closed_loop_rhs, ClosedLoopSystem, RhsEval};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_BLOWUP: f64 = 1e12;
/// A step that would end within `LANDING_RTOL * h` of a breakpoint lands on it.
const LANDING_RTOL: f64 = 1e-6;

/// Closed form of an input on one segment; `τ = t - start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SegmentKind {
    Constant {
        value: f64,
    },
    /// `offset + slope τ`
    Ramp {
        #[serde(default)]
        offset: f64,
        slope: f64,
    },
    /// `offset + amplitude sin(omega τ + phase)`
    Sinusoid {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `Σ c_i τ^i`
    Polynomial {
        coeffs: Vec<f64>,
    },
}

impl SegmentKind {
    fn eval(&self, tau: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Ramp { offset, slope } => offset + slope * tau,
            Self::Sinusoid {
                amplitude,
                omega,
                phase,
                offset,
            } => offset + amplitude * (omega * tau + phase).sin(),
            Self::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * tau + c),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Self::Constant { value } => value.is_finite(),
            Self::Ramp { offset, slope } => offset.is_finite() && slope.is_finite(),
            Self::Sinusoid {
                amplitude,
                omega,
                phase,
                offset,
            } => [amplitude, omega, phase, offset].iter().all(|v| v.is_finite()),
            Self::Polynomial { coeffs } => coeffs.iter().all(|v| v.is_finite()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    #[serde(flatten)]
    pub kind: SegmentKind,
}

/// Piecewise input: segment `k` covers `[start_k, start_{k+1})`, the last one runs to
/// `end` (or forever).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSignal {
    segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<f64>,
}

impl InputSignal {
    pub fn new(segments: Vec<Segment>, end: Option<f64>) -> Result<Self> {
        let sig = Self { segments, end };
        sig.validate()?;
        Ok(sig)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidParameter {
            name: "input",
            reason,
        });
        let Some(first) = self.segments.first() else {
            return bad("at least one segment is required".into());
        };
        if first.start != 0.0 {
            return bad(format!("first segment must start at 0, got {}", first.start));
        }
        for pair in self.segments.windows(2) {
            if !(pair[1].start > pair[0].start) || !pair[1].start.is_finite() {
                return bad(format!(
                    "segment starts must increase strictly ({} then {})",
                    pair[0].start, pair[1].start
                ));
            }
        }
        if let Some(s) = self.segments.iter().find(|s| !s.kind.is_finite()) {
            return bad(format!("non-finite parameter in segment starting at {}", s.start));
        }
        if let Some(end) = self.end {
            let last = self.segments.last().map_or(0.0, |s| s.start);
            if !(end > last) {
                return bad(format!("end {end} must exceed the last segment start {last}"));
            }
        }
        Ok(())
    }

    pub fn constant(value: f64) -> Self {
        Self {
            segments: vec![Segment {
                start: 0.0,
                kind: SegmentKind::Constant { value },
            }],
            end: None,
        }
    }

    /// `before` on `[0, at)`, `after` from `at` on.
    pub fn step(at: f64, before: f64, after: f64) -> Result<Self> {
        Self::new(
            vec![
                Segment {
                    start: 0.0,
                    kind: SegmentKind::Constant { value: before },
                },
                Segment {
                    start: at,
                    kind: SegmentKind::Constant { value: after },
                },
            ],
            None,
        )
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn end(&self) -> Option<f64> {
        self.end
    }

    /// Segment starts after `0`.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }
}

/// Right-continuous evaluation.
pub fn eval_input(sig: &InputSignal, t: f64) -> Result<f64> {
    if !(t >= 0.0) || sig.end.is_some_and(|end| t > end) {
        return Err(Error::Extrapolation { t });
    }
    let k = sig.segments.partition_point(|s| s.start <= t);
    let seg = &sig.segments[k.max(1) - 1];
    Ok(seg.kind.eval(t - seg.start))
}

/// Which part of the sector the state is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "interior")]
    Interior,
    K,
    #[serde(rename = "minusK")]
    MinusK,
    #[serde(rename = "corner")]
    Corner,
}

impl Mode {
    pub fn from_locus(locus: SectorLocus) -> Self {
        match locus {
            SectorLocus::Corner => Self::Corner,
            l if l.is_interior() => Self::Interior,
            SectorLocus::Branch {
                branch: SectorBranch::K,
                ..
            } => Self::K,
            SectorLocus::Branch { .. } => Self::MinusK,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Interior => "interior",
            Self::K => "K",
            Self::MinusK => "minusK",
            Self::Corner => "corner",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    /// State after drift correction.
    pub xi: Vector,
    pub e: f64,
    pub u: f64,
    pub edot: f64,
    pub vstar: f64,
    pub mode: Mode,
    pub correction_norm: f64,
    /// `(u - k1 e)(u - k2 e)` of the Euler prediction, before drift correction.
    pub sector_residual: f64,
    pub drift_corrected: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeInBranch {
    pub interior: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "minusK")]
    pub minus_k: f64,
    pub corner: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub max_sector_residual: f64,
    pub steps: usize,
    pub drift_corrections: usize,
    pub time_in_branch: TimeInBranch,
    pub terminal_state: Vec<f64>,
}

impl Trace {
    /// `max(0, max_k residual_k)`: the worst sector violation along the trace.
    pub fn max_sector_residual(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.sector_residual)
            .fold(0.0, f64::max)
    }

    pub fn steps(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn summary(&self) -> TraceSummary {
        let mut tib = TimeInBranch {
            interior: 0.0,
            k: 0.0,
            minus_k: 0.0,
            corner: 0.0,
        };
        for pair in self.rows.windows(2) {
            let dt = pair[1].t - pair[0].t;
            match pair[0].mode {
                Mode::Interior => tib.interior += dt,
                Mode::K => tib.k += dt,
                Mode::MinusK => tib.minus_k += dt,
                Mode::Corner => tib.corner += dt,
            }
        }
        TraceSummary {
            max_sector_residual: self.max_sector_residual(),
            steps: self.steps(),
            drift_corrections: self.rows.iter().filter(|r| r.drift_corrected).count(),
            time_in_branch: tib,
            terminal_state: self
                .rows
                .last()
                .map(|r| r.xi.iter().copied().collect())
                .unwrap_or_default(),
        }
    }

    pub fn csv_header(dim: usize) -> String {
        let mut cols = vec!["t".to_string()];
        cols.extend((0..dim).map(|i| format!("xi_{i}")));
        cols.extend(
            [
                "e",
                "u",
                "edot",
                "vstar",
                "branch",
                "correction_norm",
                "sector_residual",
                "drift_corrected",
            ]
            .map(String::from),
        );
        cols.join(",")
    }

    /// CSV with 17 significant digits per float.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let dim = self.rows.first().map_or(0, |r| r.xi.len());
        writeln!(out, "{}", Self::csv_header(dim))?;
        for r in &self.rows {
            write!(out, "{:.16e}", r.t)?;
            for x in r.xi.iter() {
                write!(out, ",{x:.16e}")?;
            }
            writeln!(
                out,
                ",{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{}",
                r.e,
                r.u,
                r.edot,
                r.vstar,
                r.mode.as_str(),
                r.correction_norm,
                r.sector_residual,
                r.drift_corrected
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Euler,
    /// Explicit midpoint. No accuracy claim: the projected field is discontinuous.
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub blowup_bound: f64,
    pub scheme: Scheme,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            blowup_bound: DEFAULT_BLOWUP,
            scheme: Scheme::Euler,
        }
    }
}

/// Clamp `z_1` into the admissible interval when the violation exceeds the membership
/// tolerance. Plant states are never touched.
pub fn drift_correct(sys: &ClosedLoopSystem, xi: &Vector) -> (Vector, bool) {
    let (e, u) = sys.output(xi);
    let s = Vector::from_column_slice(&[e, u]);
    if sys.sector().violation(e, u) <= mem_tol(&s) {
        return (xi.clone(), false);
    }
    let (lo, hi) = sys.sector().u_interval(e);
    let mut out = xi.clone();
    out[sys.plant().n()] = u.clamp(lo, hi);
    (out, true)
}

/// Next grid time after `t`: `t + h`, or the next stop if that is within reach.
fn next_time(t: f64, h: f64, stops: &[f64]) -> f64 {
    let target = stops
        .iter()
        .copied()
        .find(|&s| s > t)
        .expect("horizon is always a stop");
    if t + h >= target - LANDING_RTOL * h {
        target
    } else {
        t + h
    }
}

fn stops(input: &InputSignal, horizon: f64) -> Vec<f64> {
    let mut s: Vec<f64> = input
        .breakpoints()
        .into_iter()
        .filter(|&b| b < horizon)
        .collect();
    s.push(horizon);
    s
}

fn check_run(sys: &ClosedLoopSystem, xi0: &Vector, horizon: f64, h: f64) -> Result<()> {
    check_dim(sys.dim(), xi0.len())?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: format!("step must be positive, got {h}"),
        });
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParameter {
            name: "T",
            reason: format!("horizon must be positive, got {horizon}"),
        });
    }
    if !sys.contains(xi0) {
        return Err(Error::InitialStateOutsideSet {
            violation: sys.violation(xi0),
        });
    }
    Ok(())
}

fn residual_of(sys: &ClosedLoopSystem, xi: &Vector) -> f64 {
    let (e, u) = sys.output(xi);
    sys.sector().residual(e, u)
}

fn row(t: f64, xi: Vector, r: &RhsEval, residual: f64, corrected: bool) -> TraceRow {
    TraceRow {
        t,
        xi,
        e: r.e,
        u: r.u,
        edot: r.edot,
        vstar: r.vstar,
        mode: Mode::from_locus(r.locus),
        correction_norm: r.correction_norm,
        sector_residual: residual,
        drift_corrected: corrected,
    }
}

fn check_blowup(xi: &Vector, t: f64, bound: f64) -> Result<()> {
    let norm = xi.norm();
    if !(norm <= bound) {
        return Err(Error::StateExploded { t, norm });
    }
    Ok(())
}

/// One step from `(t, ξ)` with field `f0 = F(ξ, w(t))` to time `t1`.
fn advance(
    sys: &ClosedLoopSystem,
    input: &InputSignal,
    opts: &SimOptions,
    t: f64,
    xi: &Vector,
    f0: &Vector,
    dt: f64,
) -> Result<Vector> {
    match opts.scheme {
        Scheme::Euler => Ok(xi + f0 * dt),
        Scheme::Midpoint => {
            let (mid, _) = drift_correct(sys, &(xi + f0 * (0.5 * dt)));
            let fm = closed_loop_rhs(sys, &mid, eval_input(input, t + 0.5 * dt)?)?;
            Ok(xi + fm.field * dt)
        }
    }
}

/// Integrate `ξ̇ = Π(ξ, f(ξ, w(t)))` on `[0, horizon]` with nominal step `h`.
pub fn integrate(
    sys: &ClosedLoopSystem,
    xi0: &Vector,
    input: &InputSignal,
    horizon: f64,
    h: f64,
    opts: &SimOptions,
) -> Result<Trace> {
    check_run(sys, xi0, horizon, h)?;
    let stops = stops(input, horizon);
    // Preallocate for the nominal grid, but never trust an absurd horizon with memory.
    let mut rows = Vec::with_capacity(((horizon / h).ceil() as usize).min(1 << 20) + stops.len() + 1);
    let mut t = 0.0;
    let mut xi = xi0.clone();
    let mut r = closed_loop_rhs(sys, &xi, eval_input(input, t)?)?;
    rows.push(row(t, xi.clone(), &r, residual_of(sys, &xi), false));
    while t < horizon {
        let t1 = next_time(t, h, &stops);
        let pred = advance(sys, input, opts, t, &xi, &r.field, t1 - t)?;
        check_blowup(&pred, t1, opts.blowup_bound)?;
        let residual = residual_of(sys, &pred);
        let (next, corrected) = drift_correct(sys, &pred);
        t = t1;
        xi = next;
        r = closed_loop_rhs(sys, &xi, eval_input(input, t)?)?;
        rows.push(row(t, xi.clone(), &r, residual, corrected));
    }
    Ok(Trace { rows })
}

/// The closed loop with time as an extra state: `χ = (ξ, t)`, `χ̇ = (Π(ξ, f(ξ, w(t))), 1)`.
/// Corrections never touch the time coordinate.
#[derive(Debug, Clone)]
pub struct TimeEmbedded<'a> {
    pub sys: &'a ClosedLoopSystem,
    pub input: &'a InputSignal,
}

impl<'a> TimeEmbedded<'a> {
    pub fn new(sys: &'a ClosedLoopSystem, input: &'a InputSignal) -> Self {
        Self { sys, input }
    }

    pub fn dim(&self) -> usize {
        self.sys.dim() + 1
    }

    pub fn split(&self, chi: &Vector) -> (Vector, f64) {
        let n = self.sys.dim();
        (chi.rows(0, n).into_owned(), chi[n])
    }

    pub fn join(&self, xi: &Vector, t: f64) -> Vector {
        let mut chi = Vector::zeros(self.dim());
        chi.rows_mut(0, xi.len()).copy_from(xi);
        chi[xi.len()] = t;
        chi
    }

    /// Projected field `(Π, 1)` with diagnostics for the `ξ` part.
    pub fn field(&self, chi: &Vector) -> Result<(Vector, RhsEval)> {
        let (xi, t) = self.split(chi);
        let r = closed_loop_rhs(self.sys, &xi, eval_input(self.input, t)?)?;
        let f = self.join(&r.field, 1.0);
        Ok((f, r))
    }
}

/// Same scheme as [`integrate`], stepping the embedded state. Steps of the time
/// coordinate that end on a breakpoint are snapped onto it exactly.
pub fn integrate_embedded(
    te: &TimeEmbedded,
    xi0: &Vector,
    horizon: f64,
    h: f64,
    opts: &SimOptions,
) -> Result<Trace> {
    let sys = te.sys;
    check_run(sys, xi0, horizon, h)?;
    if opts.scheme != Scheme::Euler {
        return Err(Error::InvalidParameter {
            name: "scheme",
            reason: "the embedded integrator is Euler only".into(),
        });
    }
    let stops = stops(te.input, horizon);
    let mut chi = te.join(xi0, 0.0);
    let (mut f, mut r) = te.field(&chi)?;
    let mut rows = vec![row(0.0, xi0.clone(), &r, residual_of(sys, xi0), false)];
    loop {
        let (_, t) = te.split(&chi);
        if t >= horizon {
            break;
        }
        let t1 = next_time(t, h, &stops);
        let dt = t1 - t;
        let mut pred = &chi + &f * dt;
        let n = sys.dim();
        if stops.contains(&t1) {
            pred[n] = t1;
        }
        let (xi_pred, t_new) = te.split(&pred);
        check_blowup(&xi_pred, t_new, opts.blowup_bound)?;
        let residual = residual_of(sys, &xi_pred);
        let (xi_new, corrected) = drift_correct(sys, &xi_pred);
        chi = te.join(&xi_new, t_new);
        (f, r) = te.field(&chi)?;
        debug_assert_eq!(f[n], 1.0);
        rows.push(row(t_new, xi_new, &r, residual, corrected));
    }
    Ok(Trace { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyEntry {
    pub h: f64,
    pub steps: usize,
    pub max_sector_residual: Option<f64>,
    pub terminal_state: Option<Vec<f64>>,
    /// `||ξ_T(h) - ξ_T(previous h)||`
    pub terminal_delta: Option<f64>,
    /// Set when the run failed, e.g. on a blow-up.
    pub error: Option<String>,
    pub exploded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub entries: Vec<StudyEntry>,
    /// Residual ratio between successive entries.
    pub residual_ratios: Vec<Option<f64>>,
    /// `log(r_i / r_{i+1}) / log(h_i / h_{i+1})`
    pub observed_orders: Vec<Option<f64>>,
}

/// Rerun [`integrate`] for each step size (decreasing) and compare.
pub fn convergence_study(
    sys: &ClosedLoopSystem,
    xi0: &Vector,
    input: &InputSignal,
    horizon: f64,
    h_list: &[f64],
    opts: &SimOptions,
) -> Result<ConvergenceReport> {
    if h_list.is_empty() || h_list.windows(2).any(|p| !(p[1] < p[0])) {
        return Err(Error::InvalidParameter {
            name: "h_list",
            reason: "step sizes must be given in strictly decreasing order".into(),
        });
    }
    let runs: Vec<Result<Trace>> = h_list
        .par_iter()
        .map(|&h| integrate(sys, xi0, input, horizon, h, opts))
        .collect();
    let mut entries: Vec<StudyEntry> = Vec::with_capacity(runs.len());
    for (&h, run) in h_list.iter().zip(runs) {
        let entry = match run {
            Ok(tr) => {
                let term: Vec<f64> = tr.summary().terminal_state;
                let delta = entries.last().and_then(|p| p.terminal_state.as_ref()).map(|p| {
                    p.iter()
                        .zip(&term)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                });
                StudyEntry {
                    h,
                    steps: tr.steps(),
                    max_sector_residual: Some(tr.max_sector_residual()),
                    terminal_state: Some(term),
                    terminal_delta: delta,
                    error: None,
                    exploded: false,
                }
            }
            Err(err @ (Error::StateExploded { .. } | Error::Extrapolation { .. })) => StudyEntry {
                h,
                steps: 0,
                max_sector_residual: None,
                terminal_state: None,
                terminal_delta: None,
                exploded: matches!(err, Error::StateExploded { .. }),
                error: Some(err.to_string()),
            },
            Err(err) => return Err(err),
        };
        entries.push(entry);
    }
    let mut residual_ratios = Vec::new();
    let mut observed_orders = Vec::new();
    for p in entries.windows(2) {
        let ratio = match (p[0].max_sector_residual, p[1].max_sector_residual) {
            (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some(a / b),
            _ => None,
        };
        residual_ratios.push(ratio);
        observed_orders.push(ratio.map(|r| r.ln() / (p[0].h / p[1].h).ln()));
    }
    Ok(ConvergenceReport {
        entries,
        residual_ratios,
        observed_orders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Sector;
    use crate::linalg::vec_from;
    use crate::pbc::{build_closed_loop, higs_benchmark, Controller, Plant};

    fn tracking_system() -> ClosedLoopSystem {
        let plant = Plant::new(vec_from(&[1.0]), |_, _, _| vec_from(&[1.0])).unwrap();
        let ctrl = Controller::new(1, |_, _| vec_from(&[2.0])).unwrap();
        build_closed_loop(plant, ctrl, Sector::new(0.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn input_examples() {
        assert_eq!(eval_input(&InputSignal::constant(1.0), 5.0).unwrap(), 1.0);
        let step = InputSignal::step(1.0, 0.0, 2.0).unwrap();
        assert_eq!(eval_input(&step, 1.0).unwrap(), 2.0);
        assert_eq!(eval_input(&step, 0.999).unwrap(), 0.0);
        let ramp = InputSignal::new(
            vec![Segment {
                start: 0.0,
                kind: SegmentKind::Ramp {
                    offset: 0.0,
                    slope: 3.0,
                },
            }],
            Some(2.0),
        )
        .unwrap();
        assert_eq!(eval_input(&ramp, 1.5).unwrap(), 4.5);
        assert_eq!(eval_input(&ramp, 2.5), Err(Error::Extrapolation { t: 2.5 }));
        assert!(eval_input(&ramp, -0.1).is_err());
    }

    #[test]
    fn polynomial_and_sinusoid() {
        let p = SegmentKind::Polynomial {
            coeffs: vec![1.0, 0.0, 2.0],
        };
        assert_eq!(p.eval(3.0), 19.0);
        let s = SegmentKind::Sinusoid {
            amplitude: 2.0,
            omega: 1.0,
            phase: 0.0,
            offset: 1.0,
        };
        assert!((s.eval(std::f64::consts::FRAC_PI_2) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn bad_signals_rejected() {
        let seg = |start| Segment {
            start,
            kind: SegmentKind::Constant { value: 0.0 },
        };
        assert!(InputSignal::new(vec![], None).is_err());
        assert!(InputSignal::new(vec![seg(0.5)], None).is_err());
        assert!(InputSignal::new(vec![seg(0.0), seg(1.0), seg(1.0)], None).is_err());
        assert!(InputSignal::new(vec![seg(0.0), seg(1.0)], Some(0.5)).is_err());
    }

    #[test]
    fn drift_examples() {
        let sys = higs_benchmark(1.0, 1.0).unwrap();
        let inside = vec_from(&[-1.0, 0.0, 0.5]);
        assert_eq!(drift_correct(&sys, &inside), (inside.clone(), false));
        // e = -x1
        let (c, flag) = drift_correct(&sys, &vec_from(&[-1.0, 3.0, 1.3]));
        assert!(flag);
        assert_eq!(c, vec_from(&[-1.0, 3.0, 1.0]));
        let (c, _) = drift_correct(&sys, &vec_from(&[2.0, 0.0, 0.5]));
        assert_eq!(c[2], 0.0);
    }

    #[test]
    fn zero_field_gives_constant_trace() {
        let plant = Plant::new(vec_from(&[1.0, 0.0]), |_, _, _| Vector::zeros(2)).unwrap();
        let ctrl = Controller::new(1, |_, _| Vector::zeros(1)).unwrap();
        let sys = build_closed_loop(plant, ctrl, Sector::new(0.0, 1.0).unwrap()).unwrap();
        let xi0 = vec_from(&[2.0, 1.0, 1.0]);
        let tr = integrate(&sys, &xi0, &InputSignal::constant(0.0), 1.0, 0.1, &SimOptions::default())
            .unwrap();
        assert_eq!(tr.rows.len(), 11);
        assert!(tr.rows.iter().all(|r| r.xi == xi0));
        assert_eq!(tr.max_sector_residual(), 0.0);
    }

    #[test]
    fn initial_state_checked() {
        let sys = higs_benchmark(1.0, 1.0).unwrap();
        let r = integrate(
            &sys,
            &vec_from(&[-1.0, 0.0, 2.0]),
            &InputSignal::constant(0.0),
            1.0,
            0.1,
            &SimOptions::default(),
        );
        assert!(matches!(r, Err(Error::InitialStateOutsideSet { .. })));
    }

    #[test]
    fn tracking_from_origin() {
        let sys = tracking_system();
        let h = 1e-3;
        let tr = integrate(&sys, &Vector::zeros(2), &InputSignal::constant(0.0), 1.0, h, &SimOptions::default())
            .unwrap();
        assert_eq!(tr.rows[0].mode, Mode::Corner);
        assert_eq!(tr.rows[0].vstar, 1.0);
        for r in &tr.rows {
            assert!((r.u - r.t).abs() <= 2.0 * h);
        }
    }

    #[test]
    fn steps_land_on_breakpoints() {
        let sys = higs_benchmark(1.0, 1.0).unwrap();
        let input = InputSignal::step(0.3337, 0.0, 1.0).unwrap();
        let tr = integrate(&sys, &vec_from(&[-1.0, 0.0, 0.5]), &input, 1.0, 0.01, &SimOptions::default())
            .unwrap();
        assert!(tr.rows.iter().any(|r| r.t == 0.3337));
        assert_eq!(tr.rows.last().unwrap().t, 1.0);
        assert!(tr.rows.windows(2).all(|p| p[1].t > p[0].t));
    }

    #[test]
    fn embedded_matches_direct() {
        let sys = higs_benchmark(1.0, 1.0).unwrap();
        let input = InputSignal::step(0.5, 0.0, 1.0).unwrap();
        let xi0 = vec_from(&[-1.0, 0.0, 0.5]);
        let opts = SimOptions::default();
        let a = integrate(&sys, &xi0, &input, 2.0, 0.01, &opts).unwrap();
        let b = integrate_embedded(&TimeEmbedded::new(&sys, &input), &xi0, 2.0, 0.01, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blowup_detected() {
        let plant = Plant::new(vec_from(&[1.0]), |x, _, _| x * 10.0).unwrap();
        let ctrl = Controller::new(1, |_, _| Vector::zeros(1)).unwrap();
        let sys = build_closed_loop(plant, ctrl, Sector::new(-1.0, 1.0).unwrap()).unwrap();
        let r = integrate(
            &sys,
            &vec_from(&[1.0, 0.0]),
            &InputSignal::constant(0.0),
            10.0,
            0.1,
            &SimOptions::default(),
        );
        assert!(matches!(r, Err(Error::StateExploded { .. })));
    }

    #[test]
    fn csv_shape() {
        let sys = higs_benchmark(1.0, 1.0).unwrap();
        let tr = integrate(&sys, &vec_from(&[-1.0, 0.0, 0.5]), &InputSignal::constant(0.0), 0.1, 0.05, &SimOptions::default())
            .unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "t,xi_0,xi_1,xi_2,e,u,edot,vstar,branch,correction_norm,sector_residual,drift_corrected"
        );
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1].split(',').count(), 12);
    }

    #[test]
    fn midpoint_runs() {
        let sys = higs_benchmark(1.0, 1.0).unwrap();
        let opts = SimOptions {
            scheme: Scheme::Midpoint,
            ..Default::default()
        };
        let tr = integrate(&sys, &vec_from(&[-1.0, 0.0, 0.5]), &InputSignal::constant(0.0), 1.0, 0.01, &opts)
            .unwrap();
        assert_eq!(tr.rows.len(), 101);
    }

    #[test]
    fn study_rejects_increasing_steps() {
        let sys = higs_benchmark(1.0, 1.0).unwrap();
        let r = convergence_study(
            &sys,
            &vec_from(&[-1.0, 0.0, 0.5]),
            &InputSignal::constant(0.0),
            1.0,
            &[0.01, 0.02],
            &SimOptions::default(),
        );
        assert!(r.is_err());
    }
}
