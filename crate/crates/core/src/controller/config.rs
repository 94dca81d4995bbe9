use std::path::{Path, PathBuf};

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use super::ControllerError;
use crate::kinematics::{Chain, ChainFile};
use crate::wire::DEFAULT_RTDE_PORT;

pub const DEFAULT_DASHBOARD_PORT: u16 = 29999;
pub const DEFAULT_FREQUENCY: f64 = 500.0;

/// How the control loop is clocked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeMode {
    /// One tick per data package from the control connection; the clock holds otherwise.
    #[default]
    Virtual,
    /// One tick every `1/frequency` seconds of wall-clock time.
    Wall,
}

/// External wrench applied during `[start, end)` of simulated time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectedEvent {
    pub start: f64,
    pub end: f64,
    pub wrench: [f64; 6],
}

impl InjectedEvent {
    /// Parses `t0,t1,fx,fy,fz,tx,ty,tz`.
    pub fn parse(text: &str) -> Result<Self, ControllerError> {
        let v: Vec<f64> = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ControllerError::Config(format!("injected event {text:?}: {e}")))?;
        if v.len() != 8 {
            return Err(ControllerError::Config(format!(
                "injected event {text:?}: expected 8 comma-separated numbers, got {}",
                v.len()
            )));
        }
        Ok(InjectedEvent {
            start: v[0],
            end: v[1],
            wrench: [v[2], v[3], v[4], v[5], v[6], v[7]],
        })
    }

    pub fn active_at(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Contact environment: a horizontal spring plane plus scheduled disturbances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForceEnv {
    pub plane_z: f64,
    /// N/m; 0 disables contact.
    pub stiffness: f64,
    #[serde(rename = "event")]
    pub events: Vec<InjectedEvent>,
}

impl Default for ForceEnv {
    fn default() -> Self {
        ForceEnv {
            plane_z: 0.2,
            stiffness: 1000.0,
            events: Vec::new(),
        }
    }
}

impl ForceEnv {
    /// Checks invariants and sorts events by start time.
    pub fn validated(mut self) -> Result<Self, ControllerError> {
        if !(self.stiffness >= 0.0) {
            return Err(ControllerError::Config("stiffness must be non-negative".into()));
        }
        if !self.plane_z.is_finite() {
            return Err(ControllerError::Config("plane_z must be finite".into()));
        }
        for e in &self.events {
            if !(e.start < e.end) {
                return Err(ControllerError::Config(format!(
                    "injected event must end after it starts ({} .. {})",
                    e.start, e.end
                )));
            }
        }
        self.events.sort_by(|a, b| a.start.total_cmp(&b.start));
        Ok(self)
    }

    /// Sensor reading before bias: spring contact along +Z plus active events.
    pub fn raw_wrench(&self, tcp_z: f64, t: f64) -> Vector6<f64> {
        let mut w = Vector6::zeros();
        w[2] = self.stiffness * (self.plane_z - tcp_z).max(0.0);
        for e in self.events.iter().filter(|e| e.active_at(t)) {
            w += Vector6::from_column_slice(&e.wrench);
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// Built-in chain name or path to a chain file (relative to the config file).
    pub chain: String,
    pub frequency: f64,
    /// Start configuration; defaults to the chain file's `home`, else zeros.
    pub home: Option<Vec<f64>>,
    pub force: ForceEnv,
    pub bind: String,
    pub rtde_port: u16,
    pub dashboard_port: u16,
    pub time_mode: TimeMode,
    /// Statement budget per extension snippet invocation.
    pub step_budget: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            chain: "six_dof_example".into(),
            frequency: DEFAULT_FREQUENCY,
            home: None,
            force: ForceEnv::default(),
            bind: "127.0.0.1".into(),
            rtde_port: DEFAULT_RTDE_PORT,
            dashboard_port: DEFAULT_DASHBOARD_PORT,
            time_mode: TimeMode::Virtual,
            step_budget: crate::script::DEFAULT_STEP_BUDGET,
        }
    }
}

impl ControllerConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ControllerError> {
        toml::from_str(text).map_err(|e| ControllerError::Config(e.message().to_string()))
    }

    /// Loads a config file; a relative chain path is resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ControllerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ControllerError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = ControllerConfig::from_toml_str(&text)?;
        if Chain::builtin(&cfg.chain).is_none() && Path::new(&cfg.chain).is_relative() {
            if let Some(dir) = path.parent() {
                cfg.chain = dir.join(&cfg.chain).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.frequency >= 1.0 && self.frequency <= crate::wire::MAX_FREQUENCY) {
            return Err(ControllerError::Config(format!(
                "frequency must be within [1, {}] Hz, got {}",
                crate::wire::MAX_FREQUENCY,
                self.frequency
            )));
        }
        self.force.clone().validated()?;
        Ok(())
    }

    /// The chain named by `chain`, from the built-ins or from disk.
    pub fn load_chain(&self) -> Result<ChainFile, ControllerError> {
        match Chain::builtin(&self.chain) {
            Some(c) => Ok(c),
            None => Chain::load(PathBuf::from(&self.chain)).map_err(|e| ControllerError::Config(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spring_model() {
        let env = ForceEnv::default();
        let w = env.raw_wrench(0.18, 0.0);
        assert!((w[2] - 20.0).abs() < 1e-9);
        assert_eq!(env.raw_wrench(0.25, 0.0), Vector6::zeros());
    }

    #[test]
    fn injected_events_add() {
        let env = ForceEnv {
            events: vec![InjectedEvent::parse("1,2,15,0,0,0,0,0").unwrap()],
            ..ForceEnv::default()
        };
        let w = env.raw_wrench(0.18, 1.5);
        assert_eq!(w[0], 15.0);
        assert!((w[2] - 20.0).abs() < 1e-9);
        assert_eq!(env.raw_wrench(0.18, 2.0)[0], 0.0);
    }

    #[test]
    fn config_parse_and_validate() {
        let cfg = ControllerConfig::from_toml_str(
            "frequency = 125\ntime_mode = \"wall\"\n[force]\nplane_z = 0.1\n[[force.event]]\nstart = 3\nend = 4\nwrench = [15, 0, 0, 0, 0, 0]\n",
        )
        .unwrap();
        assert_eq!(cfg.frequency, 125.0);
        assert_eq!(cfg.time_mode, TimeMode::Wall);
        assert_eq!(cfg.force.events.len(), 1);
        assert_eq!(cfg.force.stiffness, 1000.0);
        cfg.validate().unwrap();
        let bad = ControllerConfig {
            frequency: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(ControllerConfig::from_toml_str("bogus = 1").is_err());
        assert!(InjectedEvent::parse("1,2,3").is_err());
    }
}
