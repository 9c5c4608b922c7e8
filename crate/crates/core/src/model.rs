//! Model specification, validation and JSON storage.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::emission::{Emission, EmissionModel};
use crate::error::{HhsmmError, Result};
use crate::sojourn::{sojourn_survival, SojournSpec};

/// Full parameterization of a hidden hybrid Markov/semi-Markov model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec<E = Emission> {
    #[serde(rename = "J")]
    pub j: usize,
    pub init: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub semi: Vec<bool>,
    /// Per-state sojourn truncation bound.
    #[serde(rename = "M")]
    pub m: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sojourn: Option<SojournSpec>,
    pub emission: E,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Where the problem is, e.g. `transition[2][2]`.
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { location: location.into(), message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {}", v.location, v.message)?;
        }
        Ok(())
    }
}

/// Check every invariant of a model and report all violations. Locations
/// use 1-based indices.
pub fn validate_model<E: EmissionModel>(spec: &ModelSpec<E>) -> ValidationReport {
    let mut r = ValidationReport::default();
    let j = spec.j;
    if j == 0 {
        r.push("J", "model needs at least one state");
        return r;
    }
    let dims = [
        ("init", spec.init.len()),
        ("transition", spec.transition.len()),
        ("semi", spec.semi.len()),
        ("M", spec.m.len()),
    ];
    let mut shape_ok = true;
    for (name, len) in dims {
        if len != j {
            r.push(name, format!("has length {len}, expected {j}"));
            shape_ok = false;
        }
    }
    for (i, row) in spec.transition.iter().enumerate() {
        if row.len() != j {
            r.push(format!("transition[{}]", i + 1), format!("has length {}, expected {j}", row.len()));
            shape_ok = false;
        }
    }
    if !shape_ok {
        return r;
    }
    for (i, p) in spec.init.iter().enumerate() {
        if !(0.0..=1.0).contains(p) {
            r.push(format!("init[{}]", i + 1), format!("probability {p} outside [0, 1]"));
        }
    }
    let s: f64 = spec.init.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        r.push("init", format!("init sums to {}", round_sum(s)));
    }
    for (i, row) in spec.transition.iter().enumerate() {
        for (k, p) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                r.push(format!("transition[{}][{}]", i + 1, k + 1), format!("probability {p} outside [0, 1]"));
            }
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            r.push(format!("transition[{}]", i + 1), format!("row sums to {}", round_sum(s)));
        }
        if spec.semi[i] && row[i] != 0.0 {
            r.push(format!("transition[{}][{}]", i + 1, i + 1), "semi-state self-transition nonzero");
        }
    }
    for (i, &m) in spec.m.iter().enumerate() {
        if m == 0 {
            r.push(format!("M[{}]", i + 1), "sojourn bound must be at least 1");
        }
    }
    if spec.semi.iter().any(|&b| b) {
        match &spec.sojourn {
            None => r.push("sojourn", "semi-Markov states need a sojourn specification"),
            Some(soj) => {
                for i in (0..j).filter(|&i| spec.semi[i]) {
                    if let Some(msg) = soj.check_state(i) {
                        r.push(format!("sojourn[{}]", i + 1), msg);
                    }
                }
            }
        }
    }
    if spec.emission.n_states() != j {
        r.push("emission", format!("has {} states, expected {j}", spec.emission.n_states()));
    }
    for msg in spec.emission.violations() {
        r.push("emission", msg);
    }
    r
}

fn round_sum(s: f64) -> f64 {
    (s * 1e10).round() / 1e10
}

/// Sojourn pmf and survival tables of one state.
#[derive(Debug, Clone)]
pub struct SojournTable {
    pub d: Vec<f64>,
    pub surv: Vec<f64>,
}

impl<E: EmissionModel> ModelSpec<E> {
    pub fn validate(&self) -> Result<()> {
        let report = validate_model(self);
        if report.is_ok() {
            Ok(())
        } else {
            Err(HhsmmError::Validation(report.to_string()))
        }
    }

    /// Pmf and survival tables for the semi-Markov states.
    pub fn sojourn_tables(&self) -> Result<Vec<Option<SojournTable>>> {
        (0..self.j)
            .map(|i| {
                if !self.semi[i] {
                    return Ok(None);
                }
                let soj = self
                    .sojourn
                    .as_ref()
                    .ok_or_else(|| HhsmmError::Validation("missing sojourn specification".into()))?;
                let d = soj.pmf(i, self.m[i])?;
                let surv = sojourn_survival(&d);
                Ok(Some(SojournTable { d, surv }))
            })
            .collect()
    }

    /// Free-parameter count used by the information criteria.
    pub fn n_free_params(&self, lock_init: bool) -> usize {
        let j = self.j;
        let init = if lock_init { 0 } else { j.saturating_sub(1) };
        let trans: usize = self
            .semi
            .iter()
            .map(|&s| if s { j.saturating_sub(2) } else { j.saturating_sub(1) })
            .sum();
        let soj: usize = match &self.sojourn {
            Some(s) => (0..j).filter(|&i| self.semi[i]).map(|i| s.n_free_params(i, self.m[i])).sum(),
            None => 0,
        };
        init + trans + soj + self.emission.n_free_params()
    }
}

impl<E: Serialize> ModelSpec<E> {
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }
}

impl<E: DeserializeOwned> ModelSpec<E> {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec> {
    ModelSpec::from_json(&std::fs::read_to_string(path)?)
}

pub fn store_model(spec: &ModelSpec, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, spec.to_json()?)?;
    Ok(())
}
