//! JSON config documents, explicit frequency units and `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{DetuningMode, RawConfig};
use crate::steady_state::Branch;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("override `{0}` is not of the form key=value")]
    MalformedOverride(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("unit `{unit}` is not allowed for `{field}`")]
    UnitNotAllowed { field: &'static str, unit: String },
}

/// How a frequency entry in the document is expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyUnit {
    /// Ordinary frequency in Hz; multiplied by 2π on ingestion.
    HzTimes2pi,
    /// Already angular.
    RadPerS,
    /// Multiple of the (angular) mechanical frequency ω₁. Only accepted for
    /// `detuning_value`.
    Omega1,
}

impl FrequencyUnit {
    fn factor(self, omega1: f64) -> f64 {
        match self {
            FrequencyUnit::HzTimes2pi => std::f64::consts::TAU,
            FrequencyUnit::RadPerS => 1.0,
            FrequencyUnit::Omega1 => omega1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub omega1: FrequencyUnit,
    pub omega2: FrequencyUnit,
    pub kappa: FrequencyUnit,
    pub detuning_value: FrequencyUnit,
}

/// On-disk form of a parameter set. Field names mirror [`RawConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub pump_wavelength: f64,
    pub cavity_length: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub q1: f64,
    pub q2: f64,
    pub m1: f64,
    pub m2: f64,
    pub kappa: f64,
    pub pump_power: f64,
    pub probe_power: f64,
    pub coulomb_lambda: f64,
    pub detuning_mode: DetuningMode,
    pub detuning_value: f64,
    /// Steady-state branch to use when `detuning_mode` is `bare_delta_a`
    /// and the cubic has three roots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    pub units: Units,
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "pump_wavelength",
    "cavity_length",
    "omega1",
    "omega2",
    "q1",
    "q2",
    "m1",
    "m2",
    "kappa",
    "pump_power",
    "probe_power",
    "coulomb_lambda",
    "detuning_mode",
    "detuning_value",
    "branch",
];
const UNIT_KEYS: &[&str] = &["omega1", "omega2", "kappa", "detuning_value"];

impl ConfigFile {
    /// Reference parameter set as it would be written by hand: frequencies in
    /// Hz with the 2π noted, detuning in units of ω₁.
    pub fn reference() -> Self {
        ConfigFile {
            pump_wavelength: 1064e-9,
            cavity_length: 25e-3,
            omega1: 947e3,
            omega2: 947e3,
            q1: 6700.0,
            q2: 6700.0,
            m1: 145e-12,
            m2: 145e-12,
            kappa: 215e3,
            pump_power: 2e-3,
            probe_power: 2e-9,
            coulomb_lambda: 8e35,
            detuning_mode: DetuningMode::EffectiveDelta,
            detuning_value: 1.0,
            branch: None,
            units: Units {
                omega1: FrequencyUnit::HzTimes2pi,
                omega2: FrequencyUnit::HzTimes2pi,
                kappa: FrequencyUnit::HzTimes2pi,
                detuning_value: FrequencyUnit::Omega1,
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        if let Value::Object(map) = &value {
            check_known_keys(map)?;
        }
        let doc: ConfigFile = serde_json::from_value(value)?;
        doc.check_units()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    fn check_units(&self) -> Result<(), ConfigError> {
        let u = &self.units;
        for (field, unit) in [("omega1", u.omega1), ("omega2", u.omega2), ("kappa", u.kappa)] {
            if unit == FrequencyUnit::Omega1 {
                return Err(ConfigError::UnitNotAllowed { field, unit: "omega1".into() });
            }
        }
        Ok(())
    }

    /// Convert to SI angular units.
    pub fn to_raw(&self) -> RawConfig {
        let omega1 = self.omega1 * self.units.omega1.factor(f64::NAN);
        RawConfig {
            pump_wavelength: self.pump_wavelength,
            cavity_length: self.cavity_length,
            omega1,
            omega2: self.omega2 * self.units.omega2.factor(f64::NAN),
            q1: self.q1,
            q2: self.q2,
            m1: self.m1,
            m2: self.m2,
            kappa: self.kappa * self.units.kappa.factor(f64::NAN),
            pump_power: self.pump_power,
            probe_power: self.probe_power,
            coulomb_lambda: self.coulomb_lambda,
            detuning_mode: self.detuning_mode,
            detuning_value: self.detuning_value * self.units.detuning_value.factor(omega1),
        }
    }

    /// Apply `key=value` overrides. Keys are top-level field names or
    /// `units.<field>`; anything else is rejected.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(self)?;
        let map = value.as_object_mut().expect("config serializes to an object");
        for raw in overrides {
            apply_override(map, raw.as_ref())?;
        }
        Self::from_value(value)
    }
}

fn check_known_keys(map: &Map<String, Value>) -> Result<(), ConfigError> {
    for (key, val) in map {
        if key == "units" {
            if let Value::Object(units) = val {
                for k in units.keys() {
                    if !UNIT_KEYS.contains(&k.as_str()) {
                        return Err(ConfigError::UnknownKey(format!("units.{k}")));
                    }
                }
            }
        } else if !TOP_LEVEL_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
    }
    Ok(())
}

/// Parse the right-hand side of an override: JSON literal if it parses,
/// otherwise a bare string.
fn parse_override_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

fn apply_override(map: &mut Map<String, Value>, raw: &str) -> Result<(), ConfigError> {
    let (key, val) = raw.split_once('=').ok_or_else(|| ConfigError::MalformedOverride(raw.to_string()))?;
    let key = key.trim();
    let val = parse_override_value(val.trim());
    if let Some(unit_key) = key.strip_prefix("units.") {
        if !UNIT_KEYS.contains(&unit_key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        let units = map.get_mut("units").and_then(Value::as_object_mut).expect("units block present");
        units.insert(unit_key.to_string(), val);
    } else {
        if !TOP_LEVEL_KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        map.insert(key.to_string(), val);
    }
    Ok(())
}
