//! Poses, twists and sampled trajectories.
//!
//! Orientation is a roll/pitch/yaw triple. The world frame has x pointing from
//! the arm toward the goal container, z up. Pitch is positive when the scoop
//! lip is raised (nose-up), so tilting the lip down to pour is a negative
//! pitch. RPY is kept instead of quaternions because coaching acts directly on
//! these coordinates; the gimbal singularity at |pitch| = π/2 is never reached
//! by the planar scooping motions.

use std::f64::consts::{PI, TAU};

use nalgebra::{Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into (−π, π].
pub fn normalize_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap(theta))
}

pub(crate) fn wrap(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let r = theta.rem_euclid(TAU);
    let r = if r > PI { r - TAU } else { r };
    // rem_euclid can round up to exactly TAU − ε → −π after the shift
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Unit step of a rate: 1 when `x ≥ 0`, 0 otherwise.
pub fn step_indicator(x: f64) -> u8 {
    u8::from(x >= 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Meters.
    pub position: Vector3<f64>,
    /// Roll, pitch, yaw in radians, each in (−π, π].
    pub orientation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose {
            position: Vector3::zeros(),
            orientation: Vector3::zeros(),
        }
    }
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: Vector3<f64>) -> Result<Self> {
        if position.iter().chain(orientation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        Ok(Pose {
            position,
            orientation: orientation.map(wrap),
        })
    }

    /// Planar pose in the x–z plane with the given pitch.
    pub fn planar(x: f64, z: f64, pitch: f64) -> Self {
        Pose {
            position: Vector3::new(x, 0.0, z),
            orientation: Vector3::new(0.0, wrap(pitch), 0.0),
        }
    }

    pub fn x(&self) -> f64 {
        self.position.x
    }

    pub fn y(&self) -> f64 {
        self.position.y
    }

    pub fn z(&self) -> f64 {
        self.position.z
    }

    pub fn roll(&self) -> f64 {
        self.orientation.x
    }

    pub fn pitch(&self) -> f64 {
        self.orientation.y
    }

    pub fn yaw(&self) -> f64 {
        self.orientation.z
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.orientation.iter()).all(|v| v.is_finite())
    }

    /// Body rotation. Pitch enters with a flipped sign so that a positive
    /// pitch raises the tool's +x axis.
    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll(), -self.pitch(), self.yaw())
    }

    /// 6-vector `target ⊖ self`: position difference, then wrapped angle
    /// differences.
    pub fn error_to(&self, target: &Pose) -> Vector6<f64> {
        let dp = target.position - self.position;
        let da = target.orientation - self.orientation;
        Vector6::new(dp.x, dp.y, dp.z, wrap(da.x), wrap(da.y), wrap(da.z))
    }

    /// Adds a 6-vector increment, wrapping the angles.
    pub fn offset(&self, delta: &Vector6<f64>) -> Pose {
        Pose {
            position: self.position + delta.fixed_rows::<3>(0),
            orientation: (self.orientation + delta.fixed_rows::<3>(3)).map(wrap),
        }
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.orientation.x,
            self.orientation.y,
            self.orientation.z,
        )
    }

    /// Interpolates along the shortest angular arc.
    pub fn lerp(&self, other: &Pose, s: f64) -> Pose {
        let e = self.error_to(other);
        self.offset(&(e * s))
    }

    /// Midpoint that is exactly symmetric in its arguments.
    pub fn midpoint(&self, other: &Pose) -> Pose {
        let position = (self.position + other.position) * 0.5;
        let orientation = Vector3::from_fn(|i, _| {
            let (a, b) = (self.orientation[i], other.orientation[i]);
            let mid = 0.5 * (a + b);
            if (a - b).abs() > PI {
                wrap(mid + PI)
            } else {
                mid
            }
        });
        Pose {
            position,
            orientation,
        }
    }
}

/// Linear velocity plus orientation rates (d/dt of roll, pitch, yaw).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    /// m/s.
    pub linear: Vector3<f64>,
    /// rad/s, as roll/pitch/yaw rates.
    pub angular: Vector3<f64>,
}

impl Default for Twist {
    fn default() -> Self {
        Twist {
            linear: Vector3::zeros(),
            angular: Vector3::zeros(),
        }
    }
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Result<Self> {
        if linear.iter().chain(angular.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("twist"));
        }
        Ok(Twist { linear, angular })
    }

    /// Finite-difference twist between two poses `dt` apart.
    pub fn between(from: &Pose, to: &Pose, dt: f64) -> Twist {
        let e = from.error_to(to) / dt;
        Twist {
            linear: e.fixed_rows::<3>(0).into(),
            angular: e.fixed_rows::<3>(3).into(),
        }
    }

    /// Physical angular velocity in the world frame for the given
    /// orientation.
    pub fn angular_velocity(&self, orientation: &Vector3<f64>) -> Vector3<f64> {
        // R = Rz(yaw) Ry(−pitch) Rx(roll)
        let (roll_rate, pitch_rate, yaw_rate) = (self.angular.x, self.angular.y, self.angular.z);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), orientation.z);
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), -orientation.y);
        Vector3::z() * yaw_rate + rz * Vector3::y() * (-pitch_rate) + rz * ry * Vector3::x() * roll_rate
    }

    pub fn is_zero(&self) -> bool {
        self.linear.norm() == 0.0 && self.angular.norm() == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub time: f64,
    pub pose: Pose,
}

/// Time-stamped poses with strictly increasing times and at least two
/// samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TrajectorySample>", into = "Vec<TrajectorySample>")]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl TryFrom<Vec<TrajectorySample>> for Trajectory {
    type Error = Error;

    fn try_from(samples: Vec<TrajectorySample>) -> Result<Self> {
        Trajectory::new(samples)
    }
}

impl From<Trajectory> for Vec<TrajectorySample> {
    fn from(t: Trajectory) -> Self {
        t.samples
    }
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidTrajectory(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        for s in &samples {
            if !s.time.is_finite() || !s.pose.is_finite() {
                return Err(Error::NonFinite("trajectory sample"));
            }
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].time <= w[0].time) {
            return Err(Error::InvalidTrajectory(format!(
                "times must be strictly increasing ({} then {})",
                w[0].time, w[1].time
            )));
        }
        Ok(Trajectory { samples })
    }

    /// Poses spaced `dt` apart starting at t = 0.
    pub fn from_poses(poses: &[Pose], dt: f64) -> Result<Self> {
        Trajectory::new(
            poses
                .iter()
                .enumerate()
                .map(|(i, pose)| TrajectorySample {
                    time: i as f64 * dt,
                    pose: *pose,
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> + '_ {
        self.samples.iter().map(|s| &s.pose)
    }

    pub fn first(&self) -> &Pose {
        &self.samples[0].pose
    }

    pub fn last(&self) -> &Pose {
        &self.samples[self.samples.len() - 1].pose
    }

    pub fn duration(&self) -> f64 {
        self.samples[self.samples.len() - 1].time - self.samples[0].time
    }

    /// Pose at time `t`, interpolated between samples and held constant
    /// outside the sampled interval.
    pub fn pose_at(&self, t: f64) -> Pose {
        let s = &self.samples;
        if t <= s[0].time {
            return s[0].pose;
        }
        let i = s.partition_point(|x| x.time <= t);
        if i >= s.len() {
            return s[s.len() - 1].pose;
        }
        let (a, b) = (&s[i - 1], &s[i]);
        a.pose.lerp(&b.pose, (t - a.time) / (b.time - a.time))
    }

    /// Inserts `k − 1` linearly interpolated samples inside every segment.
    pub fn densify(&self, k: usize) -> Trajectory {
        let k = k.max(1);
        let mut out = Vec::with_capacity((self.samples.len() - 1) * k + 1);
        for w in self.samples.windows(2) {
            for j in 0..k {
                let s = j as f64 / k as f64;
                out.push(TrajectorySample {
                    time: w[0].time + s * (w[1].time - w[0].time),
                    pose: w[0].pose.lerp(&w[1].pose, s),
                });
            }
        }
        out.push(self.samples[self.samples.len() - 1]);
        Trajectory { samples: out }
    }

    /// Same path traversed backwards, re-timed from zero.
    pub fn reversed(&self) -> Trajectory {
        let end = self.samples[self.samples.len() - 1].time;
        Trajectory {
            samples: self
                .samples
                .iter()
                .rev()
                .map(|s| TrajectorySample {
                    time: end - s.time,
                    pose: s.pose,
                })
                .collect(),
        }
    }

    /// Uniformly rescales time.
    pub fn rescaled(&self, factor: f64) -> Trajectory {
        Trajectory {
            samples: self
                .samples
                .iter()
                .map(|s| TrajectorySample {
                    time: s.time * factor,
                    pose: s.pose,
                })
                .collect(),
        }
    }

    /// Total translational path length.
    pub fn length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].pose.position - w[0].pose.position).norm())
            .sum()
    }
}
