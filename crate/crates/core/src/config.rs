//! Environment configuration and its key-value file form.
//!
//! The file is plain `key = value` lines (valid TOML with dotted keys):
//!
//! ```text
//! object.shape = "cuboid"
//! object.mass_g = 156
//! object.mu = 0.3
//! object.dims_mm = [180, 40, 30]
//! goal_min_mm = 30
//! goal_max_mm = 50
//! success_tol_mm = 10
//! drop_radius_mm = 200
//! lambda = 10000
//! horizon = 600
//! control_dt_s = 0.01
//! obs_delay_ticks = 0
//! obs_noise_sd_mm = 0
//! ```
//!
//! Missing keys take their defaults. Unknown keys are rejected by
//! [`EnvConfig::from_kv_str`]; callers that embed the environment keys in a
//! larger file use [`EnvConfig::from_table`] and check the rest themselves.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::physics::{ObjectSpec, PhysicsConfig, Shape};

pub const ENV_KEYS: &[&str] = &[
    "object.shape",
    "object.mass_g",
    "object.mu",
    "object.dims_mm",
    "goal_min_mm",
    "goal_max_mm",
    "success_tol_mm",
    "drop_radius_mm",
    "lambda",
    "horizon",
    "control_dt_s",
    "obs_delay_ticks",
    "obs_noise_sd_mm",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub object: ObjectSpec,
    /// Goals are drawn from `[-max, -min] ∪ [min, max]` millimeters.
    pub goal_min_mm: f64,
    pub goal_max_mm: f64,
    pub success_tol_mm: f64,
    pub drop_radius_mm: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub control_dt_s: f64,
    pub obs_delay_ticks: usize,
    pub obs_noise_sd_mm: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            object: ObjectSpec::training_cuboid(),
            goal_min_mm: 30.0,
            goal_max_mm: 50.0,
            success_tol_mm: 10.0,
            drop_radius_mm: 200.0,
            lambda: 10_000.0,
            horizon: 600,
            control_dt_s: 0.01,
            obs_delay_ticks: 0,
            obs_noise_sd_mm: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn with_object(mut self, object: ObjectSpec) -> Self {
        self.object = object;
        self
    }

    pub fn with_delay(mut self, ticks: usize) -> Self {
        self.obs_delay_ticks = ticks;
        self
    }

    pub fn success_tol(&self) -> f64 {
        self.success_tol_mm * 1e-3
    }

    pub fn drop_radius(&self) -> f64 {
        self.drop_radius_mm * 1e-3
    }

    pub fn obs_noise_sd(&self) -> f64 {
        self.obs_noise_sd_mm * 1e-3
    }

    pub fn physics(&self) -> PhysicsConfig {
        PhysicsConfig {
            drop_radius: self.drop_radius(),
            ..PhysicsConfig::default()
        }
    }

    /// Physics substeps per control step.
    pub fn substeps(&self) -> usize {
        (self.control_dt_s / self.physics().dt_physics).round() as usize
    }

    /// Delay and noise both off: the agent sees ground truth.
    pub fn ideal_channel(&self) -> bool {
        self.obs_delay_ticks == 0 && self.obs_noise_sd_mm == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        self.object.validate()?;
        let finite_pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")))
            }
        };
        finite_pos("goal_min_mm", self.goal_min_mm)?;
        finite_pos("success_tol_mm", self.success_tol_mm)?;
        finite_pos("drop_radius_mm", self.drop_radius_mm)?;
        finite_pos("lambda", self.lambda)?;
        finite_pos("control_dt_s", self.control_dt_s)?;
        if !(self.goal_max_mm.is_finite() && self.goal_max_mm >= self.goal_min_mm) {
            return Err(Error::InvalidConfig(format!(
                "goal_max_mm ({}) must be >= goal_min_mm ({})",
                self.goal_max_mm, self.goal_min_mm
            )));
        }
        if self.success_tol_mm >= self.goal_min_mm {
            return Err(Error::InvalidConfig(format!(
                "success_tol_mm ({}) must be smaller than goal_min_mm ({})",
                self.success_tol_mm, self.goal_min_mm
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be > 0".into()));
        }
        if self.substeps() == 0 {
            return Err(Error::InvalidConfig(format!(
                "control_dt_s ({}) is shorter than one physics substep",
                self.control_dt_s
            )));
        }
        if !(self.obs_noise_sd_mm.is_finite() && self.obs_noise_sd_mm >= 0.0) {
            return Err(Error::InvalidConfig("obs_noise_sd_mm must be >= 0".into()));
        }
        Ok(())
    }

    /// Canonical key-value text. Key order is fixed.
    pub fn to_kv_string(&self) -> String {
        let dims = self
            .object
            .dims_mm
            .iter()
            .map(|d| fmt_num(*d))
            .collect::<Vec<_>>()
            .join(", ");
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("object.shape", format!("\"{}\"", self.object.shape));
        line("object.mass_g", fmt_num(self.object.mass_g));
        line("object.mu", fmt_num(self.object.mu));
        line("object.dims_mm", format!("[{dims}]"));
        line("goal_min_mm", fmt_num(self.goal_min_mm));
        line("goal_max_mm", fmt_num(self.goal_max_mm));
        line("success_tol_mm", fmt_num(self.success_tol_mm));
        line("drop_radius_mm", fmt_num(self.drop_radius_mm));
        line("lambda", fmt_num(self.lambda));
        line("horizon", self.horizon.to_string());
        line("control_dt_s", fmt_num(self.control_dt_s));
        line("obs_delay_ticks", self.obs_delay_ticks.to_string());
        line("obs_noise_sd_mm", fmt_num(self.obs_noise_sd_mm));
        out
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse()?;
        let unknown = unknown_keys(&table, ENV_KEYS);
        if let Some(k) = unknown.first() {
            return Err(Error::InvalidConfig(format!(
                "unknown key {k:?}; expected one of {}",
                ENV_KEYS.join(", ")
            )));
        }
        Self::from_table(&table)
    }

    /// Read the environment keys out of a parsed table, ignoring any others.
    pub fn from_table(table: &toml::Table) -> Result<Self> {
        let mut cfg = EnvConfig::default();
        if let Some(obj) = table.get("object") {
            let obj = obj
                .as_table()
                .ok_or_else(|| Error::InvalidConfig("`object` must hold dotted keys".into()))?;
            if let Some(v) = obj.get("shape") {
                cfg.object.shape = v
                    .as_str()
                    .ok_or_else(|| bad_type("object.shape", "a string"))?
                    .parse::<Shape>()?;
                if !obj.contains_key("dims_mm") && cfg.object.shape == Shape::Cylinder {
                    cfg.object.dims_mm = vec![15.0, 200.0];
                }
            }
            if let Some(v) = obj.get("mass_g") {
                cfg.object.mass_g = number(v, "object.mass_g")?;
            }
            if let Some(v) = obj.get("mu") {
                cfg.object.mu = number(v, "object.mu")?;
            }
            if let Some(v) = obj.get("dims_mm") {
                let arr = v
                    .as_array()
                    .ok_or_else(|| bad_type("object.dims_mm", "an array of numbers"))?;
                cfg.object.dims_mm = arr
                    .iter()
                    .map(|d| number(d, "object.dims_mm"))
                    .collect::<Result<_>>()?;
            }
        }
        let get = |k: &str| table.get(k);
        if let Some(v) = get("goal_min_mm") {
            cfg.goal_min_mm = number(v, "goal_min_mm")?;
        }
        if let Some(v) = get("goal_max_mm") {
            cfg.goal_max_mm = number(v, "goal_max_mm")?;
        }
        if let Some(v) = get("success_tol_mm") {
            cfg.success_tol_mm = number(v, "success_tol_mm")?;
        }
        if let Some(v) = get("drop_radius_mm") {
            cfg.drop_radius_mm = number(v, "drop_radius_mm")?;
        }
        if let Some(v) = get("lambda") {
            cfg.lambda = number(v, "lambda")?;
        }
        if let Some(v) = get("horizon") {
            cfg.horizon = count(v, "horizon")?;
        }
        if let Some(v) = get("control_dt_s") {
            cfg.control_dt_s = number(v, "control_dt_s")?;
        }
        if let Some(v) = get("obs_delay_ticks") {
            cfg.obs_delay_ticks = count(v, "obs_delay_ticks")?;
        }
        if let Some(v) = get("obs_noise_sd_mm") {
            cfg.obs_noise_sd_mm = number(v, "obs_noise_sd_mm")?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short content hash of the canonical key-value form. Trajectories carry
    /// it so trainers can refuse demonstrations recorded under other settings.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Flattened dotted keys of `table` that are not in `known`.
pub fn unknown_keys(table: &toml::Table, known: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in table {
        match v.as_table() {
            Some(sub) => {
                for sk in sub.keys() {
                    let full = format!("{k}.{sk}");
                    if !known.contains(&full.as_str()) {
                        out.push(full);
                    }
                }
            }
            None => {
                if !known.contains(&k.as_str()) {
                    out.push(k.clone());
                }
            }
        }
    }
    out
}

fn fmt_num(v: f64) -> String {
    // Debug formatting round-trips f64 exactly; drop the ".0" on integers.
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

fn bad_type(key: &str, what: &str) -> Error {
    Error::InvalidConfig(format!("{key} must be {what}"))
}

pub(crate) fn number(v: &toml::Value, key: &str) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad_type(key, "a number")),
    }
}

pub(crate) fn count(v: &toml::Value, key: &str) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(bad_type(key, "a non-negative integer")),
    }
}
