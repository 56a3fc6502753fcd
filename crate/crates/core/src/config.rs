//! JSON description of a network and its schedule.
//!
//! ```json
//! {
//!   "network": {
//!     "A": [[2.0]], "Q": [[1.0]], "P0": [[1.0]],
//!     "sensors": [ { "C": [[1.0]], "R": [[1.0]] } ]
//!   },
//!   "schedule": [ { "sensors": [], "prob": 0.5 }, { "sensors": [1], "prob": 0.5 } ]
//! }
//! ```
//!
//! Matrices are row-major nested arrays. Sensors are numbered from 1 in the
//! order they are listed. Unknown keys are rejected, and parsing reports every
//! violation it finds, each tagged with a JSON pointer.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::Result;
use crate::matcone::{CovMatrix, TOL_PSD};
use crate::sysmodel::{Schedule, Sensor, SensorNetwork, SubsetId, MAX_SENSORS, SCHEDULE_SUM_TOL};

/// Relative asymmetry accepted in covariance inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not valid JSON: {source}")]
    Syntax {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{} schema violation(s): {}", .0.len(), join_violations(.0))]
    Schema(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Schema(v) => v,
            _ => &[],
        }
    }
}

/// Accumulates violations while a document is walked.
#[derive(Debug, Default)]
pub struct Violations(Vec<Violation>);

impl Violations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, pointer: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation {
            pointer: pointer.into(),
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_result<T>(self, value: Option<T>) -> std::result::Result<T, ConfigError> {
        match value {
            Some(v) if self.0.is_empty() => Ok(v),
            _ => Err(ConfigError::Schema(self.0)),
        }
    }
}

pub fn pointer_child(parent: &str, key: &str) -> String {
    format!("{parent}/{}", key.replace('~', "~0").replace('/', "~1"))
}

/// Strict reader over one JSON object: every key must be claimed by a
/// `required`/`optional`/`raw` call before `finish`.
pub struct ObjectReader<'a> {
    map: Option<&'a Map<String, Value>>,
    pointer: String,
    claimed: Vec<&'static str>,
}

impl<'a> ObjectReader<'a> {
    pub fn new(value: &'a Value, pointer: &str, errs: &mut Violations) -> Self {
        let map = value.as_object();
        if map.is_none() {
            errs.push(pointer, format!("expected an object, found {}", type_name(value)));
        }
        ObjectReader {
            map,
            pointer: pointer.to_string(),
            claimed: Vec::new(),
        }
    }

    pub fn pointer(&self, key: &str) -> String {
        pointer_child(&self.pointer, key)
    }

    /// Claim `key` and return its value if present.
    pub fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.claimed.push(key);
        self.map.and_then(|m| m.get(key))
    }

    pub fn required<T: DeserializeOwned>(&mut self, key: &'static str, errs: &mut Violations) -> Option<T> {
        match self.raw(key) {
            Some(v) => decode(v, &self.pointer(key), errs),
            None => {
                if self.map.is_some() {
                    errs.push(self.pointer(key), "missing required key");
                }
                None
            }
        }
    }

    /// `Ok(None)` when absent, `Err(())` when present but malformed.
    pub fn optional<T: DeserializeOwned>(
        &mut self,
        key: &'static str,
        errs: &mut Violations,
    ) -> std::result::Result<Option<T>, ()> {
        match self.raw(key) {
            Some(v) => decode(v, &self.pointer(key), errs).map(Some).ok_or(()),
            None => Ok(None),
        }
    }

    pub fn finish(self, errs: &mut Violations) {
        if let Some(m) = self.map {
            for key in m.keys() {
                if !self.claimed.contains(&key.as_str()) {
                    errs.push(
                        pointer_child(&self.pointer, key),
                        format!("unknown key (expected one of: {})", self.claimed.join(", ")),
                    );
                }
            }
        }
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

pub fn decode<T: DeserializeOwned>(v: &Value, pointer: &str, errs: &mut Violations) -> Option<T> {
    match T::deserialize(v) {
        Ok(x) => Some(x),
        Err(e) => {
            errs.push(pointer, e.to_string());
            None
        }
    }
}

/// Row-major nested array to a matrix; rows must be non-empty and of equal length.
pub fn read_matrix(v: &Value, pointer: &str, errs: &mut Violations) -> Option<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = decode(v, pointer, errs)?;
    if rows.is_empty() || rows[0].is_empty() {
        errs.push(pointer, "matrix must have at least one row and one column");
        return None;
    }
    let width = rows[0].len();
    let mut ok = true;
    for (k, r) in rows.iter().enumerate() {
        if r.len() != width {
            errs.push(
                pointer_child(pointer, &k.to_string()),
                format!("row has {} entries, expected {width}", r.len()),
            );
            ok = false;
        }
    }
    ok.then_some(rows)
}

pub fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let ncols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn shape(rows: &[Vec<f64>]) -> (usize, usize) {
    (rows.len(), rows.first().map_or(0, Vec::len))
}

/// Checks a symmetric (semi)definite input and records what is wrong with it.
fn check_covariance(rows: &[Vec<f64>], dim: Option<usize>, definite: bool, pointer: &str, errs: &mut Violations) {
    let (r, c) = shape(rows);
    if r != c {
        errs.push(pointer, format!("expected a square matrix, found {r}x{c}"));
        return;
    }
    if let Some(n) = dim {
        if r != n {
            errs.push(pointer, format!("expected {n}x{n}, found {r}x{c}"));
            return;
        }
    }
    let m = to_dmatrix(rows);
    if m.iter().any(|v| !v.is_finite()) {
        errs.push(pointer, "entries must be finite");
        return;
    }
    let scale = 1.0 + m.amax();
    if (&m - m.transpose()).amax() > SYMMETRY_TOL * scale {
        errs.push(pointer, "matrix is not symmetric");
        return;
    }
    let Ok(cov) = CovMatrix::from_matrix(m) else {
        errs.push(pointer, "matrix is not positive semidefinite");
        return;
    };
    let min = cov.min_eigenvalue();
    if definite && min <= TOL_PSD * scale {
        errs.push(pointer, format!("matrix is not positive definite (min eigenvalue {min:e})"));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorSpec {
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "P0")]
    pub p0: Vec<Vec<f64>>,
    pub sensors: Vec<SensorSpec>,
}

impl NetworkSpec {
    pub fn read(value: &Value, pointer: &str, errs: &mut Violations) -> Option<Self> {
        let mut obj = ObjectReader::new(value, pointer, errs);
        let matrix = |obj: &mut ObjectReader<'_>, key: &'static str, errs: &mut Violations| match obj.raw(key) {
            Some(v) => read_matrix(v, &obj.pointer(key), errs),
            None => {
                if obj.map.is_some() {
                    errs.push(obj.pointer(key), "missing required key");
                }
                None
            }
        };
        let a = matrix(&mut obj, "A", errs);
        let q = matrix(&mut obj, "Q", errs);
        let p0 = matrix(&mut obj, "P0", errs);
        let sensors_value = obj.raw("sensors");
        if sensors_value.is_none() && obj.map.is_some() {
            errs.push(obj.pointer("sensors"), "missing required key");
        }
        let sensors = sensors_value.and_then(|v| {
            let ptr = obj.pointer("sensors");
            let Some(list) = v.as_array() else {
                errs.push(&ptr, format!("expected an array, found {}", type_name(v)));
                return None;
            };
            if list.is_empty() || list.len() > MAX_SENSORS {
                errs.push(&ptr, format!("expected 1 to {MAX_SENSORS} sensors, found {}", list.len()));
            }
            let parsed: Vec<Option<SensorSpec>> = list
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let sp = pointer_child(&ptr, &k.to_string());
                    let mut so = ObjectReader::new(s, &sp, errs);
                    let c = matrix(&mut so, "C", errs);
                    let r = matrix(&mut so, "R", errs);
                    so.finish(errs);
                    Some(SensorSpec { c: c?, r: r? })
                })
                .collect();
            parsed.into_iter().collect::<Option<Vec<_>>>()
        });
        obj.finish(errs);

        let spec = NetworkSpec {
            a: a?,
            q: q?,
            p0: p0?,
            sensors: sensors?,
        };
        spec.check(pointer, errs);
        Some(spec)
    }

    fn check(&self, pointer: &str, errs: &mut Violations) {
        let (r, c) = shape(&self.a);
        let a_ptr = pointer_child(pointer, "A");
        if r != c {
            errs.push(&a_ptr, format!("expected a square matrix, found {r}x{c}"));
            return;
        }
        if self.a.iter().flatten().any(|v| !v.is_finite()) {
            errs.push(&a_ptr, "entries must be finite");
        }
        let n = r;
        check_covariance(&self.q, Some(n), false, &pointer_child(pointer, "Q"), errs);
        check_covariance(&self.p0, Some(n), false, &pointer_child(pointer, "P0"), errs);
        let sensors_ptr = pointer_child(pointer, "sensors");
        for (k, s) in self.sensors.iter().enumerate() {
            let sp = pointer_child(&sensors_ptr, &k.to_string());
            let (m, cc) = shape(&s.c);
            if cc != n {
                errs.push(pointer_child(&sp, "C"), format!("expected {n} columns, found {cc}"));
            }
            if s.c.iter().flatten().any(|v| !v.is_finite()) {
                errs.push(pointer_child(&sp, "C"), "entries must be finite");
            }
            check_covariance(&s.r, Some(m), true, &pointer_child(&sp, "R"), errs);
        }
    }

    pub fn build(&self) -> Result<SensorNetwork> {
        let sensors = self
            .sensors
            .iter()
            .map(|s| Ok(Sensor::new(to_dmatrix(&s.c), CovMatrix::from_matrix(to_dmatrix(&s.r))?)))
            .collect::<Result<Vec<_>>>()?;
        SensorNetwork::new(
            to_dmatrix(&self.a),
            CovMatrix::from_matrix(to_dmatrix(&self.q))?,
            CovMatrix::from_matrix(to_dmatrix(&self.p0))?,
            sensors,
        )
    }

    pub fn from_network(net: &SensorNetwork) -> Self {
        NetworkSpec {
            a: from_dmatrix(net.a()),
            q: from_dmatrix(net.q().as_matrix()),
            p0: from_dmatrix(net.p0().as_matrix()),
            sensors: net
                .sensors()
                .iter()
                .map(|s| SensorSpec {
                    c: from_dmatrix(&s.c),
                    r: from_dmatrix(s.r.as_matrix()),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub sensors: Vec<usize>,
    pub prob: f64,
}

/// Reads a schedule list and checks it against a network with `n_sensors`
/// sensors when that is known.
pub fn read_schedule(
    value: &Value,
    pointer: &str,
    n_sensors: Option<usize>,
    errs: &mut Violations,
) -> Option<Vec<ScheduleEntry>> {
    let entries: Vec<Option<ScheduleEntry>> = match value.as_array() {
        Some(list) => list
            .iter()
            .enumerate()
            .map(|(k, e)| decode(e, &pointer_child(pointer, &k.to_string()), errs))
            .collect(),
        None => {
            errs.push(pointer, format!("expected an array, found {}", type_name(value)));
            return None;
        }
    };
    let entries: Vec<ScheduleEntry> = entries.into_iter().collect::<Option<_>>()?;
    if entries.is_empty() {
        errs.push(pointer, "schedule has no entries");
        return None;
    }
    let mut seen: Vec<(SubsetId, usize)> = Vec::new();
    let mut total = 0.0;
    for (k, e) in entries.iter().enumerate() {
        let ep = pointer_child(pointer, &k.to_string());
        if !(0.0..=1.0).contains(&e.prob) {
            errs.push(pointer_child(&ep, "prob"), format!("probability {} is outside [0, 1]", e.prob));
        }
        total += e.prob;
        let sp = pointer_child(&ep, "sensors");
        let limit = n_sensors.unwrap_or(MAX_SENSORS);
        if let Some(&bad) = e.sensors.iter().find(|&&s| s == 0 || s > limit) {
            errs.push(&sp, format!("sensor {bad} is out of range 1..={limit}"));
            continue;
        }
        let mut sorted = e.sensors.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != e.sensors.len() {
            errs.push(&sp, "sensor listed twice");
            continue;
        }
        if let Ok(id) = SubsetId::from_sensors(&sorted) {
            if let Some((_, first)) = seen.iter().find(|(s, _)| *s == id) {
                errs.push(&sp, format!("subset {id} already listed at entry {first}"));
            } else {
                seen.push((id, k));
            }
        }
    }
    if (total - 1.0).abs() > SCHEDULE_SUM_TOL {
        errs.push(pointer, format!("probabilities sum to {total} (deficit {:e})", 1.0 - total));
    }
    Some(entries)
}

pub fn build_schedule(entries: &[ScheduleEntry]) -> Result<Schedule> {
    let atoms = entries
        .iter()
        .map(|e| Ok((SubsetId::from_sensors(&e.sensors)?, e.prob)))
        .collect::<Result<Vec<_>>>()?;
    Schedule::from_entries(atoms)
}

pub fn schedule_entries(schedule: &Schedule) -> Vec<ScheduleEntry> {
    schedule
        .atoms()
        .iter()
        .map(|&(id, prob)| ScheduleEntry {
            sensors: id.sensors(),
            prob,
        })
        .collect()
}

/// A network together with its schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemSpec {
    pub network: NetworkSpec,
    pub schedule: Vec<ScheduleEntry>,
}

impl SystemSpec {
    /// Claims `network` and `schedule` from an enclosing object.
    pub fn read_fields(obj: &mut ObjectReader<'_>, errs: &mut Violations) -> Option<Self> {
        let network = match obj.raw("network") {
            Some(v) => NetworkSpec::read(v, &obj.pointer("network"), errs),
            None => {
                errs.push(obj.pointer("network"), "missing required key");
                None
            }
        };
        let schedule = match obj.raw("schedule") {
            Some(v) => {
                let n = network.as_ref().map(|n| n.sensors.len());
                read_schedule(v, &obj.pointer("schedule"), n, errs)
            }
            None => {
                errs.push(obj.pointer("schedule"), "missing required key");
                None
            }
        };
        Some(SystemSpec {
            network: network?,
            schedule: schedule?,
        })
    }

    pub fn from_value(value: &Value) -> std::result::Result<Self, ConfigError> {
        let mut errs = Violations::new();
        let mut obj = ObjectReader::new(value, "", &mut errs);
        let spec = Self::read_fields(&mut obj, &mut errs);
        obj.finish(&mut errs);
        errs.into_result(spec)
    }

    pub fn from_json_str(text: &str, origin: &str) -> std::result::Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|source| ConfigError::Syntax {
            path: origin.to_string(),
            source,
        })?;
        Self::from_value(&value)
    }

    pub fn load(path: impl AsRef<Path>) -> std::result::Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = read_file(path)?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn from_parts(net: &SensorNetwork, schedule: &Schedule) -> Self {
        SystemSpec {
            network: NetworkSpec::from_network(net),
            schedule: schedule_entries(schedule),
        }
    }

    pub fn build(&self) -> Result<(SensorNetwork, Schedule)> {
        let net = self.network.build()?;
        let schedule = build_schedule(&self.schedule)?;
        schedule.check_against(&net)?;
        Ok((net, schedule))
    }
}

pub fn read_file(path: &Path) -> std::result::Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}
