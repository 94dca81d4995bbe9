//! Trapezoidal velocity profiles, waypoint time-parameterization and the servo step law.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("velocity and acceleration limits must be positive")]
    NonPositiveLimit,
    #[error("time step must be positive")]
    NonPositiveDt,
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("path needs at least two waypoints, got {0}")]
    PathTooShort(usize),
}

/// Single-axis trapezoidal (or triangular) velocity profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapProfile {
    /// Signed travel.
    pub distance: f64,
    pub v_peak: f64,
    pub accel: f64,
    pub t_acc: f64,
    pub t_cruise: f64,
    pub t_total: f64,
}

impl TrapProfile {
    fn rest(distance: f64, duration: f64) -> Self {
        TrapProfile {
            distance,
            v_peak: 0.0,
            accel: 0.0,
            t_acc: 0.0,
            t_cruise: duration,
            t_total: duration,
        }
    }

    /// Position and velocity at time `t`; both are signed like `distance`.
    pub fn sample(&self, t: f64) -> (f64, f64) {
        sample_profile(self, t)
    }
}

fn check_limits(v_max: f64, a_max: f64) -> Result<(), MotionError> {
    if v_max > 0.0 && a_max > 0.0 {
        Ok(())
    } else {
        Err(MotionError::NonPositiveLimit)
    }
}

/// Fastest profile covering `distance` under the given limits.
///
/// Trapezoidal when `|distance| ≥ v_max²/a_max`, triangular otherwise.
pub fn plan_trapezoid(distance: f64, v_max: f64, a_max: f64) -> Result<TrapProfile, MotionError> {
    check_limits(v_max, a_max)?;
    let d = distance.abs();
    if d == 0.0 {
        return Ok(TrapProfile::rest(distance, 0.0));
    }
    if d >= v_max * v_max / a_max {
        let t_acc = v_max / a_max;
        let t_cruise = d / v_max - v_max / a_max;
        Ok(TrapProfile {
            distance,
            v_peak: v_max,
            accel: a_max,
            t_acc,
            t_cruise,
            t_total: 2.0 * t_acc + t_cruise,
        })
    } else {
        let v_peak = (d * a_max).sqrt();
        let t_acc = v_peak / a_max;
        Ok(TrapProfile {
            distance,
            v_peak,
            accel: a_max,
            t_acc,
            t_cruise: 0.0,
            t_total: 2.0 * t_acc,
        })
    }
}

/// Profile covering `distance` in exactly `duration`, accelerating at `a_max`.
///
/// `duration` must be at least the minimum time under `a_max`; the peak velocity
/// is the smaller root of `v² − a·T·v + a·d = 0`.
pub fn profile_with_duration(distance: f64, a_max: f64, duration: f64) -> Result<TrapProfile, MotionError> {
    if !(a_max > 0.0) {
        return Err(MotionError::NonPositiveLimit);
    }
    let d = distance.abs();
    if d == 0.0 || duration <= 0.0 {
        return Ok(TrapProfile::rest(distance, duration.max(0.0)));
    }
    let at = a_max * duration;
    let disc = (at * at - 4.0 * a_max * d).max(0.0);
    let v_peak = 2.0 * a_max * d / (at + disc.sqrt());
    let t_acc = v_peak / a_max;
    Ok(TrapProfile {
        distance,
        v_peak,
        accel: a_max,
        t_acc,
        t_cruise: (duration - 2.0 * t_acc).max(0.0),
        t_total: duration,
    })
}

/// Evaluates `profile` at `t`; times past the end clamp to `(distance, 0)`.
pub fn sample_profile(profile: &TrapProfile, t: f64) -> (f64, f64) {
    let sign = profile.distance.signum();
    let d = profile.distance.abs();
    let TrapProfile {
        v_peak,
        accel,
        t_acc,
        t_cruise,
        t_total,
        ..
    } = *profile;
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= t_total || d == 0.0 {
        return (profile.distance, 0.0);
    }
    let (s, v) = if t < t_acc {
        (0.5 * accel * t * t, accel * t)
    } else if t < t_acc + t_cruise {
        (0.5 * accel * t_acc * t_acc + v_peak * (t - t_acc), v_peak)
    } else {
        let td = t_total - t;
        (d - 0.5 * accel * td * td, accel * td)
    };
    (sign * s, sign * v)
}

fn check_dim(expected: usize, got: usize) -> Result<(), MotionError> {
    if expected == got {
        Ok(())
    } else {
        Err(MotionError::DimensionMismatch { expected, got })
    }
}

/// Synchronized joint-space move between two configurations.
///
/// The duration is the slowest joint's minimum time rounded up to whole time
/// steps; every joint runs its own trapezoid stretched to that duration, so
/// all joints start and stop together.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSegment {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub profiles: Vec<TrapProfile>,
    pub steps: usize,
    pub dt: f64,
}

impl JointSegment {
    pub fn plan(
        start: &[f64],
        end: &[f64],
        v_max: &[f64],
        a_max: &[f64],
        dt: f64,
    ) -> Result<Self, MotionError> {
        if !(dt > 0.0) {
            return Err(MotionError::NonPositiveDt);
        }
        let n = start.len();
        check_dim(n, end.len())?;
        check_dim(n, v_max.len())?;
        check_dim(n, a_max.len())?;
        let mut t_seg = 0.0f64;
        for j in 0..n {
            t_seg = t_seg.max(plan_trapezoid(end[j] - start[j], v_max[j], a_max[j])?.t_total);
        }
        let steps = (t_seg / dt - 1e-9).ceil().max(0.0) as usize;
        let duration = steps as f64 * dt;
        let profiles = (0..n)
            .map(|j| profile_with_duration(end[j] - start[j], a_max[j], duration))
            .collect::<Result<_, _>>()?;
        Ok(JointSegment {
            start: start.to_vec(),
            end: end.to_vec(),
            profiles,
            steps,
            dt,
        })
    }

    pub fn duration(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Positions and velocities after `step` time steps; the last step lands exactly on `end`.
    pub fn at_step(&self, step: usize) -> (Vec<f64>, Vec<f64>) {
        if step >= self.steps {
            return (self.end.clone(), vec![0.0; self.end.len()]);
        }
        let t = step as f64 * self.dt;
        self.profiles
            .iter()
            .zip(&self.start)
            .map(|(p, s0)| {
                let (s, v) = p.sample(t);
                (s0 + s, v)
            })
            .unzip()
    }
}

/// Joint trajectory sampled at a fixed time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    pub dt: f64,
    pub points: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    /// Sample index at which each waypoint is reached.
    pub waypoint_indices: Vec<usize>,
}

impl SampledTrajectory {
    pub fn duration(&self) -> f64 {
        self.points.len().saturating_sub(1) as f64 * self.dt
    }
}

/// Time-parameterizes a joint-space path with a full stop at every waypoint.
pub fn parameterize_path(
    waypoints: &[Vec<f64>],
    v_max: &[f64],
    a_max: &[f64],
    dt: f64,
) -> Result<SampledTrajectory, MotionError> {
    if waypoints.len() < 2 {
        return Err(MotionError::PathTooShort(waypoints.len()));
    }
    if !(dt > 0.0) {
        return Err(MotionError::NonPositiveDt);
    }
    let n = waypoints[0].len();
    for w in waypoints {
        check_dim(n, w.len())?;
    }
    let mut traj = SampledTrajectory {
        dt,
        points: vec![waypoints[0].clone()],
        velocities: vec![vec![0.0; n]],
        waypoint_indices: vec![0],
    };
    for pair in waypoints.windows(2) {
        let seg = JointSegment::plan(&pair[0], &pair[1], v_max, a_max, dt)?;
        for step in 1..=seg.steps {
            let (q, v) = seg.at_step(step);
            traj.points.push(q);
            traj.velocities.push(v);
        }
        traj.waypoint_indices.push(traj.points.len() - 1);
    }
    Ok(traj)
}

/// Rate-limited step toward `target`: each joint moves at most `v_max·dt`.
pub fn servo_step(q: &[f64], target: &[f64], v_max: &[f64], dt: f64) -> Result<Vec<f64>, MotionError> {
    if !(dt > 0.0) {
        return Err(MotionError::NonPositiveDt);
    }
    check_dim(q.len(), target.len())?;
    check_dim(q.len(), v_max.len())?;
    Ok(q.iter()
        .zip(target)
        .zip(v_max)
        .map(|((qi, ti), vi)| {
            let limit = vi * dt;
            qi + (ti - qi).clamp(-limit, limit)
        })
        .collect())
}
