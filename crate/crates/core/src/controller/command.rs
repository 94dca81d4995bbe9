//! Per-tick integration of the commands the controller can execute.

use nalgebra::{Matrix3, Vector3, Vector6};

use super::layout::{error_code, CONTACT_DECEL, CONTACT_THRESHOLD};
use crate::kinematics::{dls_delta, fk, matrix_to_rotvec, pose_error, rotvec_to_matrix, Chain, Pose6};
use crate::motion::{plan_trapezoid, servo_step, JointSegment, TrapProfile};

/// DLS damping used for per-tick Cartesian tracking.
pub(crate) const TRACKING_DAMPING: f64 = 0.05;
/// Position error (m) beyond which a tick counts as diverged.
pub(crate) const DIVERGENCE_LIMIT: f64 = 0.05;
/// Consecutive diverged ticks that abort a Cartesian command.
pub(crate) const DIVERGENCE_TICKS: u32 = 100;
/// Pose error norm at which a MOVEL counts as arrived.
pub(crate) const SETTLE_TOL: f64 = 1e-7;
/// Ticks a MOVEL may spend settling after its profile ends.
pub(crate) const SETTLE_TICKS: u32 = 500;

pub(crate) struct Ctx<'a> {
    pub chain: &'a Chain,
    pub dt: f64,
    /// Reported wrench of the previous tick.
    pub wrench: &'a Vector6<f64>,
}

pub(crate) enum Step {
    Running,
    Done,
    /// MOVE_UNTIL_CONTACT finished; the flag says whether contact stopped it.
    DoneContact(bool),
    Failed(i32),
}

pub(crate) struct Active {
    pub seq: i32,
    pub asynchronous: bool,
    pub motion: Motion,
}

pub(crate) enum Motion {
    Joint { segment: JointSegment, step: usize },
    Linear(LinearMove),
    Servo { target: Vec<f64> },
    Stop { decel: f64 },
    Contact(ContactMove),
}

impl Motion {
    pub fn is_servo(&self) -> bool {
        matches!(self, Motion::Servo { .. })
    }

    pub fn step(&mut self, q: &mut Vec<f64>, qd: &mut Vec<f64>, ctx: &Ctx) -> Step {
        match self {
            Motion::Joint { segment, step } => {
                *step += 1;
                let (nq, nqd) = segment.at_step(*step);
                *q = nq;
                *qd = nqd;
                if *step >= segment.steps {
                    Step::Done
                } else {
                    Step::Running
                }
            }
            Motion::Linear(m) => m.step(q, qd, ctx),
            Motion::Servo { target } => {
                let next = servo_step(q, target, &ctx.chain.v_max(), ctx.dt).expect("servo target dimension checked");
                set_velocity(qd, q, &next, ctx.dt);
                *q = next;
                Step::Running
            }
            Motion::Stop { decel } => {
                if stop_step(q, qd, *decel, ctx) {
                    Step::Done
                } else {
                    Step::Running
                }
            }
            Motion::Contact(m) => m.step(q, qd, ctx),
        }
    }
}

fn set_velocity(qd: &mut [f64], q: &[f64], next: &[f64], dt: f64) {
    for ((v, a), b) in qd.iter_mut().zip(q).zip(next) {
        *v = (b - a) / dt;
    }
}

/// Ramps every joint velocity toward zero at `decel`; returns true once all joints are still.
pub(crate) fn stop_step(q: &mut [f64], qd: &mut [f64], decel: f64, ctx: &Ctx) -> bool {
    for (j, joint) in ctx.chain.joints.iter().enumerate() {
        let v0 = qd[j];
        let v1 = v0.signum() * (v0.abs() - decel * ctx.dt).max(0.0);
        q[j] += 0.5 * (v0 + v1) * ctx.dt;
        qd[j] = v1;
        if q[j] < joint.q_min || q[j] > joint.q_max {
            q[j] = joint.clamp(q[j]);
            qd[j] = 0.0;
        }
    }
    qd.iter().all(|v| *v == 0.0)
}

struct Tracked {
    next: Vec<f64>,
    tcp: Pose6,
    /// A joint limit cut the update short.
    limited: bool,
}

/// One damped-least-squares update toward `reference`, clamped to joint and velocity limits.
fn track(q: &[f64], reference: &Pose6, ctx: &Ctx) -> Tracked {
    let chain = ctx.chain;
    let current = fk(chain, q).expect("dimension checked");
    let e = pose_error(reference, &current);
    let dq = dls_delta(chain, q, &e, TRACKING_DAMPING).expect("dimension checked");
    let raw: Vec<f64> = q.iter().zip(dq.iter()).map(|(a, b)| a + b).collect();
    let mut clamped = raw.clone();
    chain.clamp(&mut clamped);
    let limited = clamped != raw;
    let next = servo_step(q, &clamped, &chain.v_max(), ctx.dt).expect("dimension checked");
    let tcp = fk(chain, &next).expect("dimension checked");
    Tracked { next, tcp, limited }
}

/// Straight-line Cartesian move: position lerp plus rotation-vector slerp, timed by a
/// trapezoid on arc length (or on rotation angle for pure reorientation).
pub(crate) struct LinearMove {
    start_position: Vector3<f64>,
    start_rotation: Matrix3<f64>,
    delta: Vector3<f64>,
    omega: Vector3<f64>,
    target: Pose6,
    profile: TrapProfile,
    step: u64,
    diverged: u32,
    settling: u32,
}

impl LinearMove {
    pub fn plan(start: &Pose6, target: &Pose6, speed: f64, accel: f64) -> Option<LinearMove> {
        let start_rotation = start.rotation_matrix();
        let delta = target.position - start.position;
        let omega = matrix_to_rotvec(&(target.rotation_matrix() * start_rotation.transpose()));
        let length = if delta.norm() > 1e-9 { delta.norm() } else { omega.norm() };
        let profile = plan_trapezoid(length, speed, accel).ok()?;
        Some(LinearMove {
            start_position: start.position,
            start_rotation,
            delta,
            omega,
            target: *target,
            profile,
            step: 0,
            diverged: 0,
            settling: 0,
        })
    }

    fn reference(&self, u: f64) -> Pose6 {
        let rot = rotvec_to_matrix(&(self.omega * u)) * self.start_rotation;
        Pose6::new(self.start_position + self.delta * u, matrix_to_rotvec(&rot))
    }

    fn step(&mut self, q: &mut Vec<f64>, qd: &mut Vec<f64>, ctx: &Ctx) -> Step {
        self.step += 1;
        let t = self.step as f64 * ctx.dt;
        let total = self.profile.distance;
        let u = if total > 0.0 { self.profile.sample(t).0 / total } else { 1.0 };
        let reference = self.reference(u);
        let tracked = track(q, &reference, ctx);
        set_velocity(qd, q, &tracked.next, ctx.dt);
        *q = tracked.next;
        if (reference.position - tracked.tcp.position).norm() > DIVERGENCE_LIMIT {
            self.diverged += 1;
            if self.diverged >= DIVERGENCE_TICKS {
                return Step::Failed(error_code::TRACKING);
            }
        } else {
            self.diverged = 0;
        }
        if t >= self.profile.t_total {
            if pose_error(&self.target, &tracked.tcp).norm() < SETTLE_TOL {
                return Step::Done;
            }
            self.settling += 1;
            if self.settling > SETTLE_TICKS {
                return Step::Failed(error_code::TRACKING);
            }
        }
        Step::Running
    }
}

/// Constant Cartesian twist until the sensed wrench exceeds the internal threshold.
pub(crate) struct ContactMove {
    linear: Vector3<f64>,
    angular: Vector3<f64>,
    position: Vector3<f64>,
    rotation: Matrix3<f64>,
    diverged: u32,
    stopping: Option<bool>,
}

impl ContactMove {
    pub fn new(start: &Pose6, twist: [f64; 6]) -> ContactMove {
        ContactMove {
            linear: Vector3::new(twist[0], twist[1], twist[2]),
            angular: Vector3::new(twist[3], twist[4], twist[5]),
            position: start.position,
            rotation: start.rotation_matrix(),
            diverged: 0,
            stopping: None,
        }
    }

    fn step(&mut self, q: &mut Vec<f64>, qd: &mut Vec<f64>, ctx: &Ctx) -> Step {
        if self.stopping.is_none() && ctx.wrench.norm() > CONTACT_THRESHOLD {
            self.stopping = Some(true);
        }
        if let Some(contact) = self.stopping {
            return if stop_step(q, qd, CONTACT_DECEL, ctx) {
                Step::DoneContact(contact)
            } else {
                Step::Running
            };
        }
        self.position += self.linear * ctx.dt;
        self.rotation = rotvec_to_matrix(&(self.angular * ctx.dt)) * self.rotation;
        let reference = Pose6::new(self.position, matrix_to_rotvec(&self.rotation));
        let tracked = track(q, &reference, ctx);
        set_velocity(qd, q, &tracked.next, ctx.dt);
        *q = tracked.next;
        if (reference.position - tracked.tcp.position).norm() > DIVERGENCE_LIMIT {
            self.diverged += 1;
        } else {
            self.diverged = 0;
        }
        if tracked.limited || self.diverged >= DIVERGENCE_TICKS {
            self.stopping = Some(false);
        }
        Step::Running
    }
}
