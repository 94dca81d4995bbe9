//! Forward kinematics, geometric Jacobian and damped-least-squares IK over DH chains.

mod chain;
mod pose;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use thiserror::Error;

pub use chain::{Chain, ChainFile, DHJoint};
pub use pose::{matrix_to_rotvec, rotvec_to_matrix, Pose6};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("chain has no joints")]
    EmptyChain,
    #[error("joint {index}: {reason}")]
    InvalidJoint { index: usize, reason: String },
    #[error("invalid solver option: {0}")]
    InvalidOption(&'static str),
    #[error("chain config: {0}")]
    Config(String),
}

pub fn fk(chain: &Chain, q: &[f64]) -> Result<Pose6, KinematicsError> {
    let (_, tcp) = chain.frames(q)?;
    Ok(Pose6::from_isometry(&tcp))
}

/// Geometric Jacobian about the TCP point in the base frame.
///
/// Rows are linear x, y, z followed by angular x, y, z.
pub fn jacobian(chain: &Chain, q: &[f64]) -> Result<DMatrix<f64>, KinematicsError> {
    let (frames, tcp) = chain.frames(q)?;
    let p = tcp.translation.vector;
    let mut j = DMatrix::zeros(6, chain.dof());
    for (i, frame) in frames.iter().enumerate() {
        let z = frame.rotation * Vector3::z();
        let lin = z.cross(&(p - frame.translation.vector));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
    }
    Ok(j)
}

/// Twist taking `current` to `target`: position difference and the rotation
/// vector of `R_target · R_currentᵀ`.
pub fn pose_error(target: &Pose6, current: &Pose6) -> Vector6<f64> {
    let dp = target.position - current.position;
    let rot = target.rotation_matrix() * current.rotation_matrix().transpose();
    let dr = matrix_to_rotvec(&rot);
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            tol: 1e-6,
            max_iter: 200,
            damping: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Final ‖e‖.
    pub error: f64,
    /// ‖e‖ at the seed and after every accepted update.
    pub error_history: Vec<f64>,
}

/// Pose error norm below which the IK damping starts to shrink.
pub const DAMPING_KNEE: f64 = 1e-2;
/// Smallest fraction of the configured damping used by [`ik_dls`].
pub const MIN_DAMPING_RATIO: f64 = 1e-3;

/// Damped-least-squares joint update `(JᵀJ + λ²I)⁻¹ Jᵀ e`.
pub fn dls_delta(
    chain: &Chain,
    q: &[f64],
    error: &Vector6<f64>,
    damping: f64,
) -> Result<DVector<f64>, KinematicsError> {
    let j = jacobian(chain, q)?;
    let n = chain.dof();
    let jt = j.transpose();
    let lhs = &jt * &j + DMatrix::identity(n, n) * (damping * damping);
    let rhs = &jt * DVector::from_column_slice(error.as_slice());
    // λ > 0 keeps the system positive definite.
    Ok(lhs
        .cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(n)))
}

fn apply(chain: &Chain, q: &[f64], dq: &DVector<f64>, scale: f64) -> Vec<f64> {
    let mut next: Vec<f64> = q.iter().zip(dq.iter()).map(|(a, b)| a + scale * b).collect();
    chain.clamp(&mut next);
    next
}

/// One full damped-least-squares update, clamped to the joint limits.
pub fn dls_step(
    chain: &Chain,
    q: &[f64],
    error: &Vector6<f64>,
    damping: f64,
) -> Result<Vec<f64>, KinematicsError> {
    Ok(apply(chain, q, &dls_delta(chain, q, error, damping)?, 1.0))
}

/// Iterates the damped-least-squares update from `seed` until the pose error
/// norm drops to `tol` or `max_iter` iterations have run. Non-convergence is
/// reported in the result.
///
/// The damping `λ` applies while the error is large; once ‖e‖ drops below
/// [`DAMPING_KNEE`] it shrinks in proportion (down to `λ·MIN_DAMPING_RATIO`), so
/// the last digits converge quickly even close to a singularity.
///
/// A step that would increase the error is halved (up to ten times); if no
/// fraction helps the solver has stalled and stops early.
pub fn ik_dls(
    chain: &Chain,
    seed: &[f64],
    target: &Pose6,
    opts: IkOptions,
) -> Result<IkSolution, KinematicsError> {
    if !(opts.tol > 0.0) {
        return Err(KinematicsError::InvalidOption("tol must be positive"));
    }
    if !(opts.damping > 0.0) {
        return Err(KinematicsError::InvalidOption("damping must be positive"));
    }
    chain.check_dim(seed)?;
    let mut q = seed.to_vec();
    let mut e = pose_error(target, &fk(chain, &q)?);
    let mut norm = e.norm();
    let mut history = vec![norm];
    let mut iterations = 0;
    while norm > opts.tol && iterations < opts.max_iter {
        let damping = opts.damping * (norm / DAMPING_KNEE).clamp(MIN_DAMPING_RATIO, 1.0);
        let dq = dls_delta(chain, &q, &e, damping)?;
        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..=10 {
            let candidate = apply(chain, &q, &dq, scale);
            let ce = pose_error(target, &fk(chain, &candidate)?);
            if ce.norm() < norm {
                accepted = Some((candidate, ce));
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        let Some((next, ne)) = accepted else { break };
        q = next;
        e = ne;
        norm = e.norm();
        history.push(norm);
    }
    Ok(IkSolution {
        q,
        converged: norm <= opts.tol,
        iterations,
        error: norm,
        error_history: history,
    })
}
