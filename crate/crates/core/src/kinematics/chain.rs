use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{IsometryMatrix3, Rotation3, Translation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{KinematicsError, Pose6};

/// One revolute joint in standard (distal) Denavit-Hartenberg form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DHJoint {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
    #[serde(default = "default_q_min")]
    pub q_min: f64,
    #[serde(default = "default_q_max")]
    pub q_max: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default = "default_a_max")]
    pub a_max: f64,
}

fn default_q_min() -> f64 {
    -2.0 * PI
}
fn default_q_max() -> f64 {
    2.0 * PI
}
fn default_v_max() -> f64 {
    PI
}
fn default_a_max() -> f64 {
    10.0
}

impl DHJoint {
    pub fn new(a: f64, alpha: f64, d: f64) -> Self {
        DHJoint {
            a,
            alpha,
            d,
            theta_offset: 0.0,
            q_min: default_q_min(),
            q_max: default_q_max(),
            v_max: default_v_max(),
            a_max: default_a_max(),
        }
    }

    pub fn with_limits(mut self, q_min: f64, q_max: f64, v_max: f64, a_max: f64) -> Self {
        self.q_min = q_min;
        self.q_max = q_max;
        self.v_max = v_max;
        self.a_max = a_max;
        self
    }

    fn validate(&self, index: usize) -> Result<(), KinematicsError> {
        let bad = |why: &str| Err(KinematicsError::InvalidJoint { index, reason: why.into() });
        if !(self.q_min < self.q_max) {
            return bad("q_min must be below q_max");
        }
        if !(self.v_max > 0.0) {
            return bad("v_max must be positive");
        }
        if !(self.a_max > 0.0) {
            return bad("a_max must be positive");
        }
        Ok(())
    }

    /// `RotZ(q + θ₀) · TransZ(d) · TransX(a) · RotX(α)`
    pub fn transform(&self, q: f64) -> IsometryMatrix3<f64> {
        let theta = q + self.theta_offset;
        let (st, ct) = theta.sin_cos();
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), theta)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.alpha);
        IsometryMatrix3::from_parts(Translation3::new(self.a * ct, self.a * st, self.d), rot)
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.q_min, self.q_max)
    }
}

/// Serial chain of revolute joints between a base and a tool transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub joints: Vec<DHJoint>,
    pub base: Pose6,
    pub tool: Pose6,
}

impl Chain {
    pub fn new(joints: Vec<DHJoint>) -> Result<Self, KinematicsError> {
        Chain::with_frames(joints, Pose6::identity(), Pose6::identity())
    }

    pub fn with_frames(joints: Vec<DHJoint>, base: Pose6, tool: Pose6) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::EmptyChain);
        }
        for (i, j) in joints.iter().enumerate() {
            j.validate(i)?;
        }
        Ok(Chain { joints, base, tool })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn v_max(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.v_max).collect()
    }

    pub fn a_max(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.a_max).collect()
    }

    /// Sum of link lengths and offsets; an upper bound on the distance the tool can reach.
    pub fn reach(&self) -> f64 {
        self.joints.iter().map(|j| j.a.abs() + j.d.abs()).sum::<f64>() + self.tool.position.norm()
    }

    pub fn check_dim(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() == self.dof() {
            Ok(())
        } else {
            Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            })
        }
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = j.clamp(*v);
        }
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(&self.joints)
            .all(|(v, j)| *v >= j.q_min && *v <= j.q_max)
    }

    /// Frame in which joint `i` rotates (about its local Z), for every joint, plus the TCP frame.
    pub fn frames(&self, q: &[f64]) -> Result<(Vec<IsometryMatrix3<f64>>, IsometryMatrix3<f64>), KinematicsError> {
        self.check_dim(q)?;
        let mut t = self.base.to_isometry();
        let mut frames = Vec::with_capacity(self.dof());
        for (joint, &qi) in self.joints.iter().zip(q) {
            frames.push(t);
            t *= joint.transform(qi);
        }
        Ok((frames, t * self.tool.to_isometry()))
    }

    pub fn from_config_str(text: &str) -> Result<ChainFile, KinematicsError> {
        let raw: RawChainFile =
            toml::from_str(text).map_err(|e| KinematicsError::Config(e.message().to_string()))?;
        let frame = |f: Option<RawFrame>| {
            f.map(|f| Pose6::from_array([
                f.position[0], f.position[1], f.position[2],
                f.rotation[0], f.rotation[1], f.rotation[2],
            ]))
            .unwrap_or_default()
        };
        let chain = Chain::with_frames(raw.joint, frame(raw.base), frame(raw.tool))?;
        if let Some(home) = &raw.home {
            chain.check_dim(home)?;
        }
        Ok(ChainFile {
            chain,
            home: raw.home,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ChainFile, KinematicsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| KinematicsError::Config(format!("{}: {e}", path.display())))?;
        Chain::from_config_str(&text)
    }

    /// Chains shipped with the repository, by file stem.
    pub fn builtin(name: &str) -> Option<ChainFile> {
        let text = match name {
            "one_joint" => include_str!("../../../../chains/one_joint.cfg"),
            "planar2" => include_str!("../../../../chains/planar2.cfg"),
            "six_dof_example" => include_str!("../../../../chains/six_dof_example.cfg"),
            _ => return None,
        };
        Some(Chain::from_config_str(text).expect("shipped chain files are valid"))
    }
}

/// A parsed chain configuration: the chain and an optional home configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainFile {
    pub chain: Chain,
    pub home: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    #[serde(default)]
    position: [f64; 3],
    #[serde(default)]
    rotation: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChainFile {
    home: Option<Vec<f64>>,
    base: Option<RawFrame>,
    tool: Option<RawFrame>,
    #[serde(default)]
    joint: Vec<DHJoint>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_chains_parse() {
        assert_eq!(Chain::builtin("one_joint").unwrap().chain.dof(), 1);
        assert_eq!(Chain::builtin("planar2").unwrap().chain.dof(), 2);
        let six = Chain::builtin("six_dof_example").unwrap();
        assert_eq!(six.chain.dof(), 6);
        assert_eq!(six.home.unwrap().len(), 6);
        assert!(Chain::builtin("nope").is_none());
    }

    #[test]
    fn rejects_bad_limits() {
        let err = Chain::new(vec![DHJoint::new(1.0, 0.0, 0.0).with_limits(1.0, -1.0, 1.0, 1.0)]);
        assert!(matches!(err, Err(KinematicsError::InvalidJoint { index: 0, .. })));
        let err = Chain::new(vec![DHJoint::new(1.0, 0.0, 0.0).with_limits(-1.0, 1.0, 0.0, 1.0)]);
        assert!(err.is_err());
        assert!(matches!(Chain::new(vec![]), Err(KinematicsError::EmptyChain)));
    }

    #[test]
    fn config_errors() {
        assert!(Chain::from_config_str("[[joint]]\na = 1\n").is_err());
        assert!(Chain::from_config_str("bogus = 1\n[[joint]]\na=1\nalpha=0\nd=0\n").is_err());
        let err = Chain::from_config_str("home = [0, 0]\n[[joint]]\na=1\nalpha=0\nd=0\n").unwrap_err();
        assert!(matches!(err, KinematicsError::DimensionMismatch { .. }));
    }

    #[test]
    fn frame_offsets_parse() {
        let text = "[base]\nposition = [0, 0, 0.5]\n[tool]\nposition = [0, 0, 0.1]\n[[joint]]\na = 1\nalpha = 0\nd = 0\nv_max = 2\n";
        let f = Chain::from_config_str(text).unwrap();
        assert_eq!(f.chain.base.position.z, 0.5);
        assert_eq!(f.chain.tool.position.z, 0.1);
        assert_eq!(f.chain.joints[0].v_max, 2.0);
        assert_eq!(f.chain.joints[0].q_max, 2.0 * PI);
    }
}
