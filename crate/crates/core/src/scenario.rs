//! Scenario files: a closed loop, an initial state, an input and a horizon, as JSON.
//!
//! Parsing reports the JSON path and line of the offending field for both syntax/type
//! errors and semantic ones (zero output row, degenerate sector, initial state outside
//! the set, ...).

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::Sector;
use crate::linalg::{matrix_from_rows, Matrix, Vector};
use crate::pbc::{
    build_closed_loop, higs_preset, ClosedLoopSystem, Controller, LinearController, LinearPlant,
    Plant,
};
use crate::sim::{InputSignal, Scheme, Segment, SegmentKind, DEFAULT_STEP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PlantSpec {
    /// `ẋ = A x + b u + b_w w + c`, `e = g_p x`
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_w: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<Vec<f64>>,
        g_p: Vec<f64>,
    },
    DoubleIntegrator,
    MassSpringDamper {
        mass: f64,
        damping: f64,
        stiffness: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ControllerSpec {
    /// `ż = ω_h e`, sector `[0, k_h]`
    Higs { k_h: f64, omega_h: f64 },
    /// `ż = A z + b e + c`, `u = z_1`
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorSpec {
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub plant: PlantSpec,
    pub controller: ControllerSpec,
    /// Required unless the controller is `higs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector: Option<SectorSpec>,
    pub initial_state: Vec<f64>,
    pub input: InputSignal,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A validation failure pinned to a field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioError {
    /// JSON path, e.g. `plant.g_p` or `initial_state`.
    pub field: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)?;
        if let Some(l) = self.line {
            write!(f, " (line {l})")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioError {}

fn err(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError {
        field: field.into(),
        line: None,
        column: None,
        message: message.into(),
    }
}

fn from_lib(field: &str, e: Error) -> ScenarioError {
    err(field, e.to_string())
}

/// A validated scenario ready to simulate.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub system: ClosedLoopSystem,
    pub xi0: Vector,
    pub step: f64,
}

fn matrix(field: &str, rows: &[Vec<f64>], n: usize) -> Result<Matrix, ScenarioError> {
    let m = matrix_from_rows(rows).ok_or_else(|| err(field, "rows have different lengths"))?;
    if m.nrows() != n || m.ncols() != n {
        return Err(err(
            field,
            format!("expected a {n}x{n} matrix, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(m)
}

fn vector(field: &str, xs: &[f64], n: usize) -> Result<Vector, ScenarioError> {
    if xs.len() != n {
        return Err(err(field, format!("expected length {n}, got {}", xs.len())));
    }
    Ok(Vector::from_column_slice(xs))
}

fn finite(field: &str, xs: impl IntoIterator<Item = f64>) -> Result<(), ScenarioError> {
    if xs.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(err(field, "values must be finite"))
    }
}

impl PlantSpec {
    pub fn build(&self) -> Result<Plant, ScenarioError> {
        match self {
            Self::Linear { a, b, b_w, c, g_p } => {
                let n = g_p.len();
                if n == 0 {
                    return Err(err("plant.g_p", "plant needs at least one state"));
                }
                finite("plant.g_p", g_p.iter().copied())?;
                finite("plant.a", a.iter().flatten().copied())?;
                finite("plant.b", b.iter().copied())?;
                let lin = LinearPlant {
                    a: matrix("plant.a", a, n)?,
                    b: vector("plant.b", b, n)?,
                    b_w: match b_w {
                        Some(v) => vector("plant.b_w", v, n)?,
                        None => Vector::zeros(n),
                    },
                    c: match c {
                        Some(v) => vector("plant.c", v, n)?,
                        None => Vector::zeros(n),
                    },
                };
                Plant::linear(lin, Vector::from_column_slice(g_p)).map_err(|e| from_lib("plant.g_p", e))
            }
            Self::DoubleIntegrator => Ok(Plant::double_integrator()),
            Self::MassSpringDamper {
                mass,
                damping,
                stiffness,
            } => {
                finite("plant", [*mass, *damping, *stiffness])?;
                Plant::mass_spring_damper(*mass, *damping, *stiffness)
                    .map_err(|e| from_lib("plant.mass", e))
            }
        }
    }
}

impl Scenario {
    /// Parse and validate. Errors carry the JSON path and, where possible, a line.
    pub fn from_json(text: &str) -> Result<Loaded, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let mut field = if path == "." { String::new() } else { path };
            // A missing key is reported against its parent; name the key itself.
            let msg = inner.to_string();
            if let Some(key) = msg
                .strip_prefix("missing field `")
                .and_then(|r| r.split('`').next())
            {
                if !field.is_empty() {
                    field.push('.');
                }
                field.push_str(key);
            }
            ScenarioError {
                field,
                line: Some(inner.line()),
                column: Some(inner.column()),
                message: inner.to_string(),
            }
        })?;
        sc.load().map_err(|mut e| {
            if e.line.is_none() {
                e.line = key_line(text, &e.field);
            }
            e
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Build the closed loop and check every invariant.
    pub fn load(&self) -> Result<Loaded, ScenarioError> {
        let plant = self.plant.build()?;
        let (controller, sector) = match &self.controller {
            ControllerSpec::Higs { k_h, omega_h } => {
                let (c, s) = higs_preset(*k_h, *omega_h).map_err(|e| match e {
                    Error::InvalidParameter { name, .. } => {
                        from_lib(&format!("controller.{name}"), e)
                    }
                    other => from_lib("controller", other),
                })?;
                if let Some(given) = self.sector {
                    if given.k1 != s.k1() || given.k2 != s.k2() {
                        return Err(err(
                            "sector",
                            format!(
                                "higs controller implies sector [0, {}], got [{}, {}]",
                                k_h, given.k1, given.k2
                            ),
                        ));
                    }
                }
                (c, s)
            }
            ControllerSpec::Linear { a, b, c } => {
                let m = b.len();
                if m == 0 {
                    return Err(err("controller.b", "controller needs at least one state"));
                }
                finite("controller", a.iter().flatten().chain(b).copied())?;
                let lin = LinearController {
                    a: matrix("controller.a", a, m)?,
                    b: Vector::from_column_slice(b),
                    c: match c {
                        Some(v) => vector("controller.c", v, m)?,
                        None => Vector::zeros(m),
                    },
                };
                let ctrl = Controller::linear(lin).map_err(|e| from_lib("controller", e))?;
                let s = self
                    .sector
                    .ok_or_else(|| err("sector", "required for non-higs controllers"))?;
                let sector = Sector::new(s.k1, s.k2).map_err(|e| from_lib("sector", e))?;
                (ctrl, sector)
            }
        };
        let system = build_closed_loop(plant, controller, sector).map_err(|e| match e {
            Error::ZeroOutputRow => from_lib("plant.g_p", e),
            other => from_lib("sector", other),
        })?;
        finite("initial_state", self.initial_state.iter().copied())?;
        let xi0 = vector("initial_state", &self.initial_state, system.dim())?;
        if !system.contains(&xi0) {
            return Err(err(
                "initial_state",
                format!(
                    "outside the sector set (violation {:.3e})",
                    system.violation(&xi0)
                ),
            ));
        }
        self.input.validate().map_err(|e| from_lib("input", e))?;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(err("horizon", "must be positive and finite"));
        }
        if let Some(end) = self.input.end() {
            if end < self.horizon {
                return Err(err("input", format!("signal ends at {end} before the horizon")));
            }
        }
        let step = self.step.unwrap_or(DEFAULT_STEP);
        if !(step > 0.0) || !step.is_finite() {
            return Err(err("step", "must be positive and finite"));
        }
        Ok(Loaded {
            scenario: self.clone(),
            system,
            xi0,
            step,
        })
    }
}

/// Line of the first occurrence of the last path component as a JSON key.
fn key_line(text: &str, path: &str) -> Option<usize> {
    let key = path.rsplit('.').next().filter(|k| !k.is_empty())?;
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

fn constant_input(value: f64) -> InputSignal {
    InputSignal::constant(value)
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 4] = ["higs_benchmark", "tracking", "step_input", "blowup"];

/// Builtin scenarios.
///
/// - `higs_benchmark`: mass-spring-damper with a HIGS, `k_h = ω_h = 1`, `T = 20`
/// - `tracking`: `ẋ = 1`, `ż = 2`, sector `[0, 1]` from the origin; `u(t) = t`
/// - `step_input`: the benchmark driven by a unit step at `t = 2.5`
/// - `blowup`: `ẋ = 10 x` for a finite-escape-style negative control
pub fn builtin(name: &str) -> Option<Scenario> {
    let msd = PlantSpec::Linear {
        a: vec![vec![0.0, 1.0], vec![-1.0, -1.0]],
        b: vec![0.0, 1.0],
        b_w: Some(vec![0.0, 1.0]),
        c: None,
        g_p: vec![-1.0, 0.0],
    };
    let higs = ControllerSpec::Higs {
        k_h: 1.0,
        omega_h: 1.0,
    };
    Some(match name {
        "higs_benchmark" => Scenario {
            name: name.into(),
            plant: msd,
            controller: higs,
            sector: None,
            initial_state: vec![-1.0, 0.0, 0.5],
            input: constant_input(0.0),
            horizon: 20.0,
            step: Some(1e-3),
            scheme: None,
            seed: None,
        },
        "tracking" => Scenario {
            name: name.into(),
            plant: PlantSpec::Linear {
                a: vec![vec![0.0]],
                b: vec![0.0],
                b_w: None,
                c: Some(vec![1.0]),
                g_p: vec![1.0],
            },
            controller: ControllerSpec::Linear {
                a: vec![vec![0.0]],
                b: vec![0.0],
                c: Some(vec![2.0]),
            },
            sector: Some(SectorSpec { k1: 0.0, k2: 1.0 }),
            initial_state: vec![0.0, 0.0],
            input: constant_input(0.0),
            horizon: 5.0,
            step: Some(1e-3),
            scheme: None,
            seed: None,
        },
        "step_input" => Scenario {
            name: name.into(),
            plant: msd,
            controller: higs,
            sector: None,
            initial_state: vec![-1.0, 0.0, 0.5],
            input: InputSignal::new(
                vec![
                    Segment {
                        start: 0.0,
                        kind: SegmentKind::Constant { value: 0.0 },
                    },
                    Segment {
                        start: 2.5,
                        kind: SegmentKind::Constant { value: 1.0 },
                    },
                ],
                None,
            )
            .expect("valid step"),
            horizon: 10.0,
            step: Some(1e-3),
            scheme: None,
            seed: None,
        },
        "blowup" => Scenario {
            name: name.into(),
            plant: PlantSpec::Linear {
                a: vec![vec![10.0]],
                b: vec![0.0],
                b_w: None,
                c: None,
                g_p: vec![1.0],
            },
            controller: ControllerSpec::Linear {
                a: vec![vec![0.0]],
                b: vec![0.0],
                c: None,
            },
            sector: Some(SectorSpec { k1: -1.0, k2: 1.0 }),
            initial_state: vec![1.0, 0.0],
            input: constant_input(0.0),
            horizon: 10.0,
            step: Some(1e-2),
            scheme: None,
            seed: None,
        },
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_load_and_round_trip() {
        for name in BUILTIN_NAMES {
            let sc = builtin(name).unwrap();
            let text = sc.to_json();
            let loaded = Scenario::from_json(&text).unwrap();
            assert_eq!(loaded.scenario, sc);
            let a: serde_json::Value = serde_json::from_str(&text).unwrap();
            let b = serde_json::to_value(&loaded.scenario).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn initial_state_outside_set() {
        let mut sc = builtin("higs_benchmark").unwrap();
        sc.initial_state = vec![-1.0, 0.0, 3.0];
        let e = Scenario::from_json(&sc.to_json()).unwrap_err();
        assert_eq!(e.field, "initial_state");
        assert!(e.line.is_some());
    }

    #[test]
    fn zero_output_row() {
        let mut sc = builtin("higs_benchmark").unwrap();
        if let PlantSpec::Linear { g_p, .. } = &mut sc.plant {
            *g_p = vec![0.0, 0.0];
        }
        assert_eq!(Scenario::from_json(&sc.to_json()).unwrap_err().field, "plant.g_p");
    }

    #[test]
    fn degenerate_sector() {
        let mut sc = builtin("tracking").unwrap();
        sc.sector = Some(SectorSpec { k1: 1.0, k2: 1.0 });
        assert_eq!(Scenario::from_json(&sc.to_json()).unwrap_err().field, "sector");
    }

    #[test]
    fn type_error_has_path_and_line() {
        let text = builtin("higs_benchmark")
            .unwrap()
            .to_json()
            .replace("\"horizon\": 20.0", "\"horizon\": \"long\"");
        let e = Scenario::from_json(&text).unwrap_err();
        assert_eq!(e.field, "horizon");
        assert!(e.line.is_some());
    }

    #[test]
    fn missing_field_is_named() {
        let e = Scenario::from_json("{\"name\": \"x\"}").unwrap_err();
        assert_eq!(e.field, "plant");
        assert_eq!(e.line, Some(1));
    }

    #[test]
    fn unknown_field_rejected() {
        let text = builtin("tracking")
            .unwrap()
            .to_json()
            .replacen('{', "{\n  \"colour\": 1,", 1);
        assert!(Scenario::from_json(&text).is_err());
    }

    #[test]
    fn missing_sector_for_linear_controller() {
        let mut sc = builtin("tracking").unwrap();
        sc.sector = None;
        assert_eq!(Scenario::from_json(&sc.to_json()).unwrap_err().field, "sector");
    }
}
