use nalgebra::{IsometryMatrix3, Matrix3, Rotation3, Translation3, Vector3};
use serde::{Deserialize, Serialize};

/// Position plus rotation vector (axis · angle), the UR `actual_TCP_pose` convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub position: Vector3<f64>,
    pub rotation: Vector3<f64>,
}

impl Default for Pose6 {
    fn default() -> Self {
        Pose6::identity()
    }
}

impl Pose6 {
    pub fn new(position: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Pose6 { position, rotation }
    }

    pub fn identity() -> Self {
        Pose6::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Pose6::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    pub fn to_array(&self) -> [f64; 6] {
        let p = &self.position;
        let r = &self.rotation;
        [p.x, p.y, p.z, r.x, r.y, r.z]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotvec_to_matrix(&self.rotation)
    }

    pub fn to_isometry(&self) -> IsometryMatrix3<f64> {
        IsometryMatrix3::from_parts(
            Translation3::from(self.position),
            Rotation3::from_matrix_unchecked(self.rotation_matrix()),
        )
    }

    pub fn from_isometry(iso: &IsometryMatrix3<f64>) -> Self {
        Pose6::new(
            iso.translation.vector,
            matrix_to_rotvec(iso.rotation.matrix()),
        )
    }

    /// Same pose with the rotation magnitude folded into `[0, π]`.
    pub fn canonical(&self) -> Self {
        Pose6::new(self.position, matrix_to_rotvec(&self.rotation_matrix()))
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn rotvec_to_matrix(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta = r.norm();
    let k = skew(r);
    if theta < 1e-8 {
        return Matrix3::identity() + k + k * k * 0.5;
    }
    let a = theta.sin() / theta;
    let half = (theta * 0.5).sin();
    let b = 2.0 * half * half / (theta * theta);
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of [`rotvec_to_matrix`], angle in `[0, π]`.
///
/// Above π/2 the axis comes from the symmetric part (largest diagonal element),
/// which stays well conditioned as the angle approaches π.
pub fn matrix_to_rotvec(m: &Matrix3<f64>) -> Vector3<f64> {
    let vee = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) * 0.5;
    let s = vee.norm();
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if c > 0.0 {
        if s == 0.0 {
            return Vector3::zeros();
        }
        return vee * (theta / s);
    }
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * c;
    let one_minus_c = 1.0 - c;
    let i = (0..3)
        .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
        .unwrap();
    let ni = (sym[(i, i)] / one_minus_c).max(0.0).sqrt();
    let mut n = Vector3::zeros();
    for j in 0..3 {
        n[j] = if j == i {
            ni
        } else {
            sym[(i, j)] / (one_minus_c * ni)
        };
    }
    n.normalize_mut();
    if n.dot(&vee) < 0.0 {
        n = -n;
    }
    n * theta
}
