//! Deterministic scooping world.
//!
//! A 3-link planar arm in the x–z plane carries the scoop blade at its tip;
//! the last joint is the wrist pitch. The blade interacts with a box-shaped
//! granular bed through the RFT model, captures material in proportion to the
//! volume its face sweeps horizontally, and pours according to a
//! piecewise-linear function of lip tilt. Masses move only between bed, scoop
//! and goal container, so their sum is conserved exactly up to rounding.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};

use nalgebra::{Matrix6x3, Vector3, Vector6};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap, Pose, Trajectory, Twist};
use crate::media::{self, FlatBlade, Intruder, MediaParams, Wrench};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmModel {
    /// Shoulder position, meters.
    pub base: [f64; 3],
    /// Upper arm, forearm, wrist-to-blade-centre, meters.
    pub link_lengths: [f64; 3],
    /// Viscous joint damping, N·m·s/rad.
    pub joint_damping: f64,
    /// Symmetric joint limit, radians.
    pub joint_limit: f64,
}

impl Default for ArmModel {
    fn default() -> Self {
        ArmModel {
            base: [0.0, 0.0, 0.40],
            link_lengths: [0.45, 0.40, 0.10],
            joint_damping: 8.0,
            joint_limit: 3.0,
        }
    }
}

impl ArmModel {
    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::config("sim.arm.link_lengths", "link lengths must be > 0"));
        }
        if !(self.joint_damping > 0.0) {
            return Err(Error::config("sim.arm.joint_damping", "must be > 0"));
        }
        if !(self.joint_limit > 0.0) {
            return Err(Error::config("sim.arm.joint_limit", "must be > 0"));
        }
        Ok(())
    }

    fn cumulative(&self, q: &[f64; 3]) -> [f64; 3] {
        [q[0], q[0] + q[1], q[0] + q[1] + q[2]]
    }

    /// Shoulder, elbow, wrist and blade-centre positions.
    pub fn joint_positions(&self, q: &[f64; 3]) -> [Vector3<f64>; 4] {
        let phi = self.cumulative(q);
        let mut pts = [Vector3::from(self.base); 4];
        for k in 0..3 {
            pts[k + 1] = pts[k]
                + Vector3::new(phi[k].cos(), 0.0, phi[k].sin()) * self.link_lengths[k];
        }
        pts
    }

    pub fn forward(&self, q: &[f64; 3]) -> Pose {
        let tip = self.joint_positions(q)[3];
        Pose {
            position: tip,
            orientation: Vector3::new(0.0, wrap(self.cumulative(q)[2]), 0.0),
        }
    }

    /// Maps joint rates to `[v; roll, pitch, yaw rates]` of the blade.
    pub fn jacobian(&self, q: &[f64; 3]) -> Matrix6x3<f64> {
        let phi = self.cumulative(q);
        let l = self.link_lengths;
        let mut j = Matrix6x3::zeros();
        for col in 0..3 {
            for k in col..3 {
                j[(0, col)] -= l[k] * phi[k].sin();
                j[(2, col)] += l[k] * phi[k].cos();
            }
            j[(4, col)] = 1.0;
        }
        j
    }

    /// Closed-form inverse kinematics; of the two elbow branches the one
    /// nearest to `near` is returned.
    pub fn inverse(&self, pose: &Pose, near: &[f64; 3]) -> Result<[f64; 3]> {
        let [l1, l2, l3] = self.link_lengths;
        let theta = pose.pitch();
        let wx = pose.x() - self.base[0] - l3 * theta.cos();
        let wz = pose.z() - self.base[2] - l3 * theta.sin();
        let d = (wx * wx + wz * wz - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if !d.is_finite() || d.abs() > 1.0 + 1e-12 {
            return Err(Error::Unreachable(format!(
                "wrist at ({wx:.4}, {wz:.4}) relative to the shoulder is out of reach"
            )));
        }
        let d = d.clamp(-1.0, 1.0);
        let mut best: Option<([f64; 3], f64)> = None;
        for sign in [1.0, -1.0] {
            let q2 = sign * d.acos();
            let q1 = wrap(wz.atan2(wx) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos()));
            let q3 = wrap(theta - q1 - q2);
            let q = [q1, q2, q3];
            let dist: f64 = q.iter().zip(near).map(|(a, b)| wrap(a - b).powi(2)).sum();
            if best.map_or(true, |(_, bd)| dist < bd) {
                best = Some((q, dist));
            }
        }
        Ok(best.expect("two branches evaluated").0)
    }
}

/// 6×3 blade Jacobian of the planar arm.
pub fn jacobian(arm: &ArmModel, joints: &[f64; 3]) -> Matrix6x3<f64> {
    arm.jacobian(joints)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Minimum corner of the bed box, meters.
    pub bed_origin: [f64; 3],
    /// Bed box extent (x, y, z), meters.
    pub bed_size: [f64; 3],
    /// Height of the media above the bed floor, meters.
    pub fill_height: f64,
    /// kg/m³.
    pub bulk_density: f64,
    pub blade: FlatBlade,
    /// kg.
    pub scoop_capacity: f64,
    /// Lip tilt at which material starts to pour, radians.
    pub hold_angle: f64,
    /// Lip tilt at which all held material has poured, radians.
    pub full_pour_angle: f64,
    /// s.
    pub dt: f64,
    /// Centre of the goal container opening.
    pub goal_container_pose: Pose,
    /// Half-width of the goal container opening, meters.
    pub goal_container_half_width: f64,
    /// Mass that counts as a successful scoop, kg.
    pub mass_min: f64,
    /// Standard deviation of wrist force noise, N.
    pub ft_noise_sigma: f64,
    pub arm: ArmModel,
    /// Resting pose of the scoop at the start of an episode.
    pub home_pose: Pose,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            bed_origin: [0.30, -0.15, 0.0],
            bed_size: [0.30, 0.30, 0.10],
            fill_height: 0.08,
            bulk_density: 1500.0,
            blade: FlatBlade::default(),
            scoop_capacity: 0.3,
            hold_angle: FRAC_PI_6,
            full_pour_angle: FRAC_PI_2,
            dt: 0.01,
            goal_container_pose: Pose::planar(0.80, 0.10, 0.0),
            goal_container_half_width: 0.08,
            mass_min: 0.15,
            ft_noise_sigma: 0.0,
            arm: ArmModel::default(),
            home_pose: Pose::planar(0.30, 0.25, 0.0),
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("sim.{key}"), msg))
            }
        };
        check(self.bed_size.iter().all(|s| *s > 0.0), "bed_size", "must be positive")?;
        check(
            self.fill_height >= 0.0 && self.fill_height <= self.bed_size[2],
            "fill_height",
            "must lie in [0, bed_size z]",
        )?;
        check(self.bulk_density > 0.0, "bulk_density", "must be > 0")?;
        check(self.scoop_capacity > 0.0, "scoop_capacity", "must be > 0")?;
        check(
            self.hold_angle > 0.0 && self.hold_angle < self.full_pour_angle,
            "hold_angle",
            "must satisfy 0 < hold_angle < full_pour_angle",
        )?;
        check(
            self.full_pour_angle <= FRAC_PI_2,
            "full_pour_angle",
            "must be <= pi/2",
        )?;
        check(self.dt > 0.0 && self.dt.is_finite(), "dt", "must be > 0")?;
        check(
            self.goal_container_half_width > 0.0,
            "goal_container_half_width",
            "must be > 0",
        )?;
        check(self.mass_min >= 0.0, "mass_min", "must be >= 0")?;
        check(self.ft_noise_sigma >= 0.0, "ft_noise_sigma", "must be >= 0")?;
        check(
            self.blade.length > 0.0 && self.blade.width > 0.0,
            "blade",
            "blade dimensions must be > 0",
        )?;
        check(
            self.blade.n_length >= 1 && self.blade.n_width >= 1,
            "blade",
            "blade needs at least one element per side",
        )?;
        self.arm.validate()
    }

    pub fn surface_height(&self) -> f64 {
        self.bed_origin[2] + self.fill_height
    }

    pub fn initial_bed_mass(&self) -> f64 {
        self.bulk_density * self.bed_size[0] * self.bed_size[1] * self.fill_height
    }

    pub fn bed_extent(&self) -> [f64; 4] {
        [
            self.bed_origin[0],
            self.bed_origin[0] + self.bed_size[0],
            self.bed_origin[1],
            self.bed_origin[1] + self.bed_size[1],
        ]
    }

    /// Centre of the media free surface.
    pub fn bed_surface_center(&self) -> Pose {
        Pose::planar(
            self.bed_origin[0] + 0.5 * self.bed_size[0],
            self.surface_height(),
            0.0,
        )
    }
}

/// Fraction of the held load that has poured out at a given lip tilt
/// (tilt = −pitch).
pub fn pour_fraction(tilt: f64, params: &SimParams) -> f64 {
    if tilt <= params.hold_angle {
        0.0
    } else if tilt >= params.full_pour_angle {
        1.0
    } else {
        (tilt - params.hold_angle) / (params.full_pour_angle - params.hold_angle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub scoop_pose: Pose,
    pub scoop_twist: Twist,
    pub mass_in_scoop: f64,
    pub mass_in_bed: f64,
    pub mass_transferred: f64,
    /// Load held when the lip was last at or below the hold angle.
    pub pour_reference: f64,
    pub arm_joint_angles: [f64; 3],
    pub time: f64,
    /// Latest media reaction on the blade.
    pub media_wrench: Wrench,
    pub initial_mass: f64,
}

impl WorldState {
    pub fn total_mass(&self) -> f64 {
        self.mass_in_bed + self.mass_in_scoop + self.mass_transferred
    }

    pub fn conservation_error(&self) -> f64 {
        (self.initial_mass - self.total_mass()).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Command {
    Hold,
    JointTorques([f64; 3]),
    /// `[dx, dy, dz, droll, dpitch, dyaw]`; only x, z and pitch act on the
    /// planar arm.
    PoseIncrement([f64; 6]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: WorldState,
    /// Work done against the media during the step, J.
    pub work: f64,
    pub clamped: bool,
    pub unreachable: bool,
}

/// One line of an episode log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time: f64,
    pub pose: Pose,
    pub twist: Twist,
    pub mass_in_scoop: f64,
    pub mass_in_bed: f64,
    pub mass_transferred: f64,
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl From<&WorldState> for LogRecord {
    fn from(s: &WorldState) -> Self {
        LogRecord {
            time: s.time,
            pose: s.scoop_pose,
            twist: s.scoop_twist,
            mass_in_scoop: s.mass_in_scoop,
            mass_in_bed: s.mass_in_bed,
            mass_transferred: s.mass_transferred,
            force: s.media_wrench.force,
            torque: s.media_wrench.torque,
        }
    }
}

/// Outcome of sweeping the blade along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoopResult {
    pub effort: f64,
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    params: SimParams,
    media: MediaParams,
}

impl Simulator {
    /// The bed defines the free surface and horizontal extent of the media;
    /// those two fields of `media` are overridden.
    pub fn new(media: MediaParams, params: SimParams) -> Result<Self> {
        params.validate()?;
        let media = MediaParams {
            surface_height: params.surface_height(),
            extent: Some(params.bed_extent()),
            ..media
        };
        media.validate()?;
        Ok(Simulator { params, media })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn media(&self) -> &MediaParams {
        &self.media
    }

    pub fn blade(&self) -> &FlatBlade {
        &self.params.blade
    }

    /// Fresh world with the scoop at `pose` and an empty scoop.
    pub fn initial_state(&self, pose: &Pose) -> Result<WorldState> {
        let planar = Pose::planar(pose.x(), pose.z(), pose.pitch());
        let joints = self.params.arm.inverse(&planar, &[0.0, -1.0, 0.0])?;
        let bed = self.params.initial_bed_mass();
        Ok(WorldState {
            scoop_pose: self.params.arm.forward(&joints),
            scoop_twist: Twist::default(),
            mass_in_scoop: 0.0,
            mass_in_bed: bed,
            mass_transferred: 0.0,
            pour_reference: 0.0,
            arm_joint_angles: joints,
            time: 0.0,
            media_wrench: Wrench::default(),
            initial_mass: bed,
        })
    }

    /// Moves `amount` (clipped to what is available) from bed to scoop.
    pub fn preload(&self, state: &WorldState, amount: f64) -> WorldState {
        let amount = amount
            .min(self.params.scoop_capacity - state.mass_in_scoop)
            .min(state.mass_in_bed)
            .max(0.0);
        let mut s = *state;
        s.mass_in_bed -= amount;
        s.mass_in_scoop += amount;
        s.pour_reference = s.mass_in_scoop;
        s
    }

    /// Volume swept into the scoop face by horizontal motion of submerged
    /// elements between two poses, m³.
    pub fn capture_volume(&self, a: &Pose, b: &Pose) -> f64 {
        let blade = &self.params.blade;
        let ea = blade.elements(a);
        let eb = blade.elements(b);
        let em = blade.elements(&a.midpoint(b));
        capture_volume_elements(&ea, &eb, &em, &self.media)
    }

    pub fn is_over_goal(&self, pose: &Pose) -> bool {
        let g = &self.params.goal_container_pose;
        let hw = self.params.goal_container_half_width;
        (pose.x() - g.x()).abs() <= hw && (pose.y() - g.y()).abs() <= hw && pose.z() > g.z()
    }

    pub fn step(&self, state: &WorldState, command: &Command) -> Result<StepOutcome> {
        let arm = &self.params.arm;
        let q = state.arm_joint_angles;
        let mut unreachable = false;
        let target_q = match command {
            Command::Hold => self.integrate_torques(state, &[0.0; 3])?,
            Command::JointTorques(tau) => self.integrate_torques(state, tau)?,
            Command::PoseIncrement(delta) => {
                if delta.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("pose increment"));
                }
                let p = &state.scoop_pose;
                let target = Pose::planar(p.x() + delta[0], p.z() + delta[2], p.pitch() + delta[4]);
                match arm.inverse(&target, &q) {
                    Ok(q) => q,
                    Err(_) => {
                        unreachable = true;
                        q
                    }
                }
            }
        };
        let limit = arm.joint_limit;
        let clamped = target_q.iter().any(|v| v.abs() > limit);
        let new_q = target_q.map(|v| v.clamp(-limit, limit));
        let pose = arm.forward(&new_q);
        let (mut next, work) = self.transition(state, &pose, self.params.dt);
        next.arm_joint_angles = new_q;
        Ok(StepOutcome {
            state: next,
            work,
            clamped,
            unreachable,
        })
    }

    fn integrate_torques(&self, state: &WorldState, tau: &[f64; 3]) -> Result<[f64; 3]> {
        if tau.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("joint torques"));
        }
        let arm = &self.params.arm;
        let q = state.arm_joint_angles;
        let ext = arm.jacobian(&q).transpose() * generalized_wrench(&state.media_wrench);
        let dt = self.params.dt;
        Ok([0, 1, 2].map(|i| q[i] + (tau[i] + ext[i]) / arm.joint_damping * dt))
    }

    /// Physics of moving the blade from the current pose to `pose` over `dt`:
    /// media work, reaction, capture and pour. Joints are left untouched.
    pub fn transition(&self, state: &WorldState, pose: &Pose, dt: f64) -> (WorldState, f64) {
        let blade = &self.params.blade;
        let from = state.scoop_pose;
        let ea = blade.elements(&from);
        let eb = blade.elements(pose);
        let em = blade.elements(&from.midpoint(pose));
        let work = media::segment_work_elements(&ea, &eb, &em, &self.media);
        let twist = Twist::between(&from, pose, dt);
        let wrench = media::intruder_force(&eb, &twist, pose, &self.media).unwrap_or_default();

        let mut s = *state;
        s.scoop_pose = *pose;
        s.scoop_twist = twist;
        s.media_wrench = wrench;
        s.time += dt;

        let volume = capture_volume_elements(&ea, &eb, &em, &self.media);
        let captured = (volume * self.params.bulk_density)
            .min(self.params.scoop_capacity - s.mass_in_scoop)
            .min(s.mass_in_bed)
            .max(0.0);
        s.mass_in_bed -= captured;
        s.mass_in_scoop += captured;

        let tilt = -pose.pitch();
        if tilt <= self.params.hold_angle {
            s.pour_reference = s.mass_in_scoop;
        } else {
            s.pour_reference += captured;
            let retained = s.pour_reference * (1.0 - pour_fraction(tilt, &self.params));
            if s.mass_in_scoop > retained {
                let out = s.mass_in_scoop - retained;
                s.mass_in_scoop = retained;
                if self.is_over_goal(pose) {
                    s.mass_transferred += out;
                } else {
                    // spilled material is assumed to fall back into the bed
                    s.mass_in_bed += out;
                }
            }
        }
        (s, work)
    }

    /// Kinematic sweep along a trajectory starting from an empty scoop.
    pub fn replay(&self, traj: &Trajectory) -> ScoopResult {
        let bed = self.params.initial_bed_mass();
        let mut state = WorldState {
            scoop_pose: *traj.first(),
            scoop_twist: Twist::default(),
            mass_in_scoop: 0.0,
            mass_in_bed: bed,
            mass_transferred: 0.0,
            pour_reference: 0.0,
            arm_joint_angles: [0.0; 3],
            time: traj.samples()[0].time,
            media_wrench: Wrench::default(),
            initial_mass: bed,
        };
        let mut effort = 0.0;
        for w in traj.samples().windows(2) {
            let (next, work) = self.transition(&state, &w[1].pose, w[1].time - w[0].time);
            state = next;
            effort += work;
        }
        ScoopResult {
            effort,
            mass: state.mass_in_scoop,
        }
    }

    /// Wrist force/torque: material weight plus media reaction, expressed at
    /// the wrist. Noise is drawn from `rng` when `ft_noise_sigma > 0`.
    pub fn wrist_ft_reading(&self, state: &WorldState, rng: Option<&mut impl Rng>) -> Wrench {
        let g = self.media.g;
        let mut force = Vector3::new(0.0, 0.0, -state.mass_in_scoop * g) + state.media_wrench.force;
        let joints = self.params.arm.joint_positions(&state.arm_joint_angles);
        let lever = state.scoop_pose.position - joints[2];
        let mut torque = lever.cross(&force) + state.media_wrench.torque;
        if self.params.ft_noise_sigma > 0.0 {
            if let Some(rng) = rng {
                let normal = Normal::new(0.0, self.params.ft_noise_sigma).expect("sigma validated");
                force += Vector3::from_fn(|_, _| normal.sample(rng));
                torque += Vector3::from_fn(|_, _| normal.sample(rng));
            }
        }
        Wrench { force, torque }
    }

    /// Held mass from a static in-air wrist reading, kg.
    pub fn estimate_mass(&self, reading: &Wrench) -> f64 {
        -reading.force.z / self.media.g
    }

    pub fn effort_along(&self, traj: &Trajectory) -> f64 {
        media::path_work(traj, &self.params.blade, &self.media)
    }
}

/// `[F; roll, pitch, yaw generalized torques]` matching the Jacobian rows.
/// Pitch is positive nose-up, i.e. about −y.
pub fn generalized_wrench(w: &Wrench) -> Vector6<f64> {
    Vector6::new(w.force.x, w.force.y, w.force.z, w.torque.x, -w.torque.y, w.torque.z)
}

fn capture_volume_elements(
    ea: &[media::PlateElement],
    eb: &[media::PlateElement],
    em: &[media::PlateElement],
    params: &MediaParams,
) -> f64 {
    let mut volume = 0.0;
    for ((a, b), m) in ea.iter().zip(eb).zip(em) {
        if params.depth_at(&m.centroid) <= 0.0 {
            continue;
        }
        let dr = b.centroid - a.centroid;
        let horizontal = Vector3::new(dr.x, dr.y, 0.0);
        volume += horizontal.dot(&m.normal).max(0.0) * m.area;
    }
    volume
}
