//! A priori skills and their controllers.

use nalgebra::{Matrix3, Vector3, Vector6};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demo::{Policy, SkillStep};
use crate::error::{Error, Result};
use crate::geom::{Pose, Trajectory};
use crate::media::Wrench;
use crate::sim::{generalized_wrench, ArmModel, Command, LogRecord, Simulator, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillClass {
    Approach,
    Grasp,
    Transport,
    Retract,
    Scoop,
    Unscoop,
    GuardedMove,
    VisualServo,
    MoveWithContact,
    MoveToContact,
    Lift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    ForceBased,
    Positional,
}

impl SkillClass {
    pub const ALL: [SkillClass; 11] = [
        SkillClass::Approach,
        SkillClass::Grasp,
        SkillClass::Transport,
        SkillClass::Retract,
        SkillClass::Scoop,
        SkillClass::Unscoop,
        SkillClass::GuardedMove,
        SkillClass::VisualServo,
        SkillClass::MoveWithContact,
        SkillClass::MoveToContact,
        SkillClass::Lift,
    ];

    pub fn mode(self) -> ControlMode {
        match self {
            SkillClass::Scoop
            | SkillClass::GuardedMove
            | SkillClass::MoveWithContact
            | SkillClass::MoveToContact => ControlMode::ForceBased,
            _ => ControlMode::Positional,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SkillClass::Approach => "approach",
            SkillClass::Grasp => "grasp",
            SkillClass::Transport => "transport",
            SkillClass::Retract => "retract",
            SkillClass::Scoop => "scoop",
            SkillClass::Unscoop => "unscoop",
            SkillClass::GuardedMove => "guarded_move",
            SkillClass::VisualServo => "visual_servo",
            SkillClass::MoveWithContact => "move_with_contact",
            SkillClass::MoveToContact => "move_to_contact",
            SkillClass::Lift => "lift",
        }
    }
}

impl std::fmt::Display for SkillClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Gains of the kinematic (Eq. 2) and impedance (Eq. 3) laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    pub k1: f64,
    pub k2: f64,
    /// K1 on position error, N/m.
    pub impedance_k1: f64,
    /// K1 on orientation error, N·m/rad.
    pub impedance_k1_angular: f64,
    /// K2, s.
    pub impedance_k2: f64,
    /// Desired blade wrench F_d.
    pub f_d: Wrench,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            k1: 0.2,
            k2: 0.1,
            impedance_k1: 50.0,
            impedance_k1_angular: 1.0,
            impedance_k2: 0.1,
            f_d: Wrench::default(),
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("control.gains.{key}"), msg))
            }
        };
        check(self.k1 > 0.0 && self.k1.is_finite(), "k1", "must be > 0")?;
        check(self.k2 >= 0.0 && self.k2.is_finite(), "k2", "must be >= 0")?;
        check(self.impedance_k1 > 0.0 && self.impedance_k1.is_finite(), "impedance_k1", "must be > 0")?;
        check(
            self.impedance_k1_angular > 0.0 && self.impedance_k1_angular.is_finite(),
            "impedance_k1_angular",
            "must be > 0",
        )?;
        check(
            self.impedance_k2 >= 0.0 && self.impedance_k2.is_finite(),
            "impedance_k2",
            "must be >= 0",
        )?;
        check(
            self.f_d.force.iter().chain(self.f_d.torque.iter()).all(|v| v.is_finite()),
            "f_d",
            "must be finite",
        )
    }

    fn stiffness(&self) -> Vector6<f64> {
        let (a, b) = (self.impedance_k1, self.impedance_k1_angular);
        Vector6::new(a, a, a, b, b, b)
    }
}

/// Gains plus goal tolerances and the skill time budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlParams {
    pub gains: ControllerGains,
    /// m.
    pub position_tol: f64,
    /// rad.
    pub angle_tol: f64,
    /// Contact wrench magnitude that counts as touching, N.
    pub contact_threshold: f64,
    /// Allowed error on a commanded pour amount, kg.
    pub transfer_tol: f64,
    /// Simulated time budget per skill, s.
    pub t_max: f64,
    /// Duration of a straight scoop stroke when no planned path is given, s.
    pub default_scoop_duration: f64,
    /// Fastest the unscoop reference tilts, rad/s.
    pub pour_rate: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlParams {
            gains: ControllerGains::default(),
            position_tol: 1e-3,
            angle_tol: 0.5f64.to_radians(),
            contact_threshold: 0.5,
            transfer_tol: 0.005,
            t_max: 10.0,
            default_scoop_duration: 2.0,
            pour_rate: 60f64.to_radians(),
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        let check = |ok: bool, key: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("control.{key}"), "must be > 0"))
            }
        };
        check(self.position_tol > 0.0, "position_tol")?;
        check(self.angle_tol > 0.0, "angle_tol")?;
        check(self.contact_threshold > 0.0, "contact_threshold")?;
        check(self.transfer_tol > 0.0, "transfer_tol")?;
        check(self.t_max > 0.0 && self.t_max.is_finite(), "t_max")?;
        check(self.default_scoop_duration > 0.0, "default_scoop_duration")?;
        check(self.pour_rate > 0.0 && self.pour_rate.is_finite(), "pour_rate")
    }

    pub fn pose_reached(&self, pose: &Pose, target: &Pose) -> bool {
        let e = pose.error_to(target);
        e.fixed_rows::<3>(0).norm() <= self.position_tol
            && e.fixed_rows::<3>(3).iter().all(|a| a.abs() <= self.angle_tol)
    }
}

/// Eq. 2: `x_{t+1} = x_t + k1·(f + k2·ḟ)` with `f = x_d ⊖ x_t` and `ḟ` the
/// per-tick backward difference against `f_prev` (zero when absent).
/// Returns the next pose and `f`.
pub fn kinematic_step(
    x_t: &Pose,
    x_d: &Pose,
    f_prev: Option<&Vector6<f64>>,
    gains: &ControllerGains,
) -> (Pose, Vector6<f64>) {
    let f = x_t.error_to(x_d);
    let f_dot = f_prev.map_or_else(Vector6::zeros, |p| f - p);
    (x_t.offset(&((f + f_dot * gains.k2) * gains.k1)), f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceOutput {
    pub torques: [f64; 3],
    /// Pose error `f` used this tick.
    pub error: Vector6<f64>,
    /// Jacobian lost rank; torques are still returned.
    pub singular: bool,
}

/// Eq. 3 with the feedback term mapped through Jᵀ:
/// `τ = Jᵀ·(F_d + K1·(f + K2·ḟ))`, `ḟ = (f − f_prev)/dt`.
pub fn impedance_step(
    arm: &ArmModel,
    joints: &[f64; 3],
    x_d: &Pose,
    f_prev: Option<&Vector6<f64>>,
    gains: &ControllerGains,
    dt: f64,
) -> ImpedanceOutput {
    let j = arm.jacobian(joints);
    let f = arm.forward(joints).error_to(x_d);
    let f_dot = f_prev.map_or_else(Vector6::zeros, |p| (f - p) / dt);
    let feedback = (f + f_dot * gains.impedance_k2).component_mul(&gains.stiffness());
    let tau = j.transpose() * (generalized_wrench(&gains.f_d) + feedback);
    ImpedanceOutput {
        torques: [tau[0], tau[1], tau[2]],
        error: f,
        singular: j.rank(1e-9) < 3,
    }
}

/// What an unscoop should do: tip to `pose`, optionally stopping once
/// `amount` kg has left the scoop, then return to the starting tilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnscoopTarget {
    pub pose: Pose,
    pub amount: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillOutcome {
    pub class: SkillClass,
    pub reached_goal: bool,
    pub final_state: WorldState,
    /// Work against the media, J.
    pub effort: f64,
    pub trace: Vec<LogRecord>,
    pub halt_reason: Option<String>,
    /// Mass that reached the goal container during the skill, kg.
    pub transferred: f64,
    pub clamped: bool,
    pub unreachable: bool,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub outcomes: Vec<SkillOutcome>,
    pub final_state: WorldState,
    /// Index of the skill that failed.
    pub halted_at: Option<usize>,
    pub halt_reason: Option<String>,
}

impl PolicyOutcome {
    pub fn succeeded(&self) -> bool {
        self.halted_at.is_none()
    }
}

struct Run<'a> {
    sim: &'a Simulator,
    params: &'a ControlParams,
    class: SkillClass,
    start: WorldState,
    state: WorldState,
    effort: f64,
    trace: Vec<LogRecord>,
    clamped: bool,
    unreachable: bool,
    singular: bool,
}

impl<'a> Run<'a> {
    fn new(sim: &'a Simulator, params: &'a ControlParams, class: SkillClass, world: &WorldState) -> Self {
        Run {
            sim,
            params,
            class,
            start: *world,
            state: *world,
            effort: 0.0,
            trace: Vec::new(),
            clamped: false,
            unreachable: false,
            singular: false,
        }
    }

    fn elapsed(&self) -> f64 {
        self.state.time - self.start.time
    }

    fn out_of_time(&self) -> bool {
        // half a tick of slack absorbs rounding in the accumulated time
        self.elapsed() + 0.5 * self.sim.params().dt >= self.params.t_max
    }

    fn apply(&mut self, command: &Command) -> Result<()> {
        let out = self.sim.step(&self.state, command)?;
        self.effort += out.work;
        self.clamped |= out.clamped;
        self.unreachable |= out.unreachable;
        self.state = out.state;
        self.trace.push(LogRecord::from(&self.state));
        Ok(())
    }

    fn contact(&self) -> f64 {
        self.state.media_wrench.force.norm()
    }

    /// Eq. 2 toward `target` until `done` holds or time runs out. Returns
    /// whether `done` held.
    fn kinematic(&mut self, target: &Pose, done: impl FnMut(&Self) -> bool) -> Result<bool> {
        self.kinematic_ramped(target, None, done)
    }

    /// As `kinematic`, but with the reference orientation slewing toward
    /// the target at no more than `rate` rad/s.
    fn kinematic_ramped(
        &mut self,
        target: &Pose,
        rate: Option<f64>,
        mut done: impl FnMut(&Self) -> bool,
    ) -> Result<bool> {
        let mut f_prev = None;
        let mut reference = Pose {
            position: target.position,
            orientation: self.state.scoop_pose.orientation,
        };
        let max_turn = rate.map_or(f64::INFINITY, |r| r * self.sim.params().dt);
        loop {
            if done(self) {
                return Ok(true);
            }
            if self.out_of_time() {
                return Ok(false);
            }
            let turn = reference.error_to(target);
            let largest = turn.fixed_rows::<3>(3).amax();
            reference = if largest <= max_turn {
                *target
            } else {
                let mut d = Vector6::zeros();
                d.fixed_rows_mut::<3>(3).copy_from(&(turn.fixed_rows::<3>(3) * (max_turn / largest)));
                reference.offset(&d)
            };
            let (next, f) = kinematic_step(&self.state.scoop_pose, &reference, f_prev.as_ref(), &self.params.gains);
            let d = self.state.scoop_pose.error_to(&next);
            self.apply(&Command::PoseIncrement([d[0], d[1], d[2], d[3], d[4], d[5]]))?;
            f_prev = Some(f);
        }
    }

    fn finish(self, reached_goal: bool, halt_reason: Option<String>) -> SkillOutcome {
        let halt_reason = match (reached_goal, halt_reason) {
            (false, None) => Some(format!("{} timed out after {:.2} s", self.class, self.elapsed())),
            (_, r) => r,
        };
        SkillOutcome {
            class: self.class,
            reached_goal,
            transferred: self.state.mass_transferred - self.start.mass_transferred,
            final_state: self.state,
            effort: self.effort,
            trace: self.trace,
            halt_reason,
            clamped: self.clamped,
            unreachable: self.unreachable,
            singular: self.singular,
        }
    }
}

/// Straight stroke from `from` to `to`, sampled at `dt`.
pub fn straight_path(from: &Pose, to: &Pose, duration: f64, dt: f64) -> Result<Trajectory> {
    let n = ((duration / dt).round() as usize).max(1);
    let poses: Vec<Pose> = (0..=n).map(|i| from.lerp(to, i as f64 / n as f64)).collect();
    Trajectory::from_poses(&poses, duration / n as f64)
}

/// Tracks `path` with Eq. 3. Motion feed-forward inverts the damped joint
/// dynamics for the desired velocity, and the measured contact wrench is
/// compensated, so the impedance term only corrects the residual.
fn track_scoop(run: &mut Run<'_>, path: &Trajectory) -> Result<()> {
    let arm = run.sim.params().arm;
    let dt = run.sim.params().dt;
    let t0 = path.samples()[0].time;
    let ticks = (path.duration() / dt).round() as usize;
    let mut f_prev = None;
    for k in 0..ticks {
        if run.out_of_time() {
            break;
        }
        let now = path.pose_at(t0 + k as f64 * dt);
        let next = path.pose_at(t0 + (k + 1) as f64 * dt);
        let q = run.state.arm_joint_angles;
        let out = impedance_step(&arm, &q, &next, f_prev.as_ref(), &run.params.gains, dt);
        run.singular |= out.singular;
        f_prev = Some(out.error);

        let j = arm.jacobian(&q);
        let jp = Matrix3::from_rows(&[j.row(0).into_owned(), j.row(2).into_owned(), j.row(4).into_owned()]);
        let d = now.error_to(&next);
        let mut tau = Vector3::from(out.torques);
        match jp.lu().solve(&Vector3::new(d[0], d[2], d[4])) {
            Some(dq) => tau += dq * (arm.joint_damping / dt),
            None => run.singular = true,
        }
        tau -= j.transpose() * generalized_wrench(&run.state.media_wrench);
        run.apply(&Command::JointTorques([tau[0], tau[1], tau[2]]))?;
    }
    Ok(())
}

fn execute_scoop(
    mut run: Run<'_>,
    goal: &Pose,
    path: Option<&Trajectory>,
) -> Result<SkillOutcome> {
    let params = run.sim.params();
    let owned;
    let path = match path {
        Some(p) => p,
        None => {
            owned = straight_path(&run.state.scoop_pose, goal, run.params.default_scoop_duration, params.dt)?;
            &owned
        }
    };
    // the stroke is sensitive to where it starts, so line up more tightly
    // than the generic pose tolerance before tracking
    let start = *path.first();
    let align = run.params.position_tol * 1e-3;
    run.kinematic(&start, |r| {
        let e = r.state.scoop_pose.error_to(&start);
        e.fixed_rows::<3>(0).norm() <= align && e.fixed_rows::<3>(3).amax() <= align
    })?;
    track_scoop(&mut run, path)?;
    let end = *path.last();
    let mass_min = params.mass_min;
    let settled = run.kinematic(&end, |r| r.params.pose_reached(&r.state.scoop_pose, &end))?;
    if run.state.mass_in_scoop >= mass_min {
        return Ok(run.finish(true, None));
    }
    let reason = if settled {
        format!(
            "scoop holds {:.4} kg, below mass_min {:.4} kg",
            run.state.mass_in_scoop, mass_min
        )
    } else {
        format!("scoop did not settle at the end of its path within {:.1} s", run.params.t_max)
    };
    Ok(run.finish(false, Some(reason)))
}

fn execute_unscoop(
    mut run: Run<'_>,
    target: &UnscoopTarget,
    sensor: &mut ChaCha8Rng,
) -> Result<SkillOutcome> {
    let home = run.state.scoop_pose;
    let tol = run.params.transfer_tol;
    let m0 = run.sim.estimate_mass(&run.sim.wrist_ft_reading(&run.state, Some(&mut *sensor)));
    let mut poured = 0.0;
    let mut hit = |r: &Run<'_>, poured: &mut f64| {
        *poured = m0 - r.sim.estimate_mass(&r.sim.wrist_ft_reading(&r.state, Some(&mut *sensor)));
        target.amount.is_some_and(|a| (*poured - a).abs() <= tol)
    };
    let mut amount_hit = false;
    let rate = Some(run.params.pour_rate);
    let tipped = run.kinematic_ramped(&target.pose, rate, |r| {
        amount_hit = hit(r, &mut poured);
        amount_hit || r.params.pose_reached(&r.state.scoop_pose, &target.pose)
    })?;
    if amount_hit {
        return Ok(run.finish(true, None));
    }
    if !tipped {
        return Ok(run.finish(false, None));
    }
    let returned = run.kinematic_ramped(&home, rate, |r| r.params.pose_reached(&r.state.scoop_pose, &home))?;
    let _ = hit(&run, &mut poured);
    match target.amount {
        _ if !returned => Ok(run.finish(false, None)),
        None => Ok(run.finish(true, None)),
        Some(a) if (poured - a).abs() <= tol => Ok(run.finish(true, None)),
        Some(a) => {
            let reason = format!("poured {:.4} kg of the commanded {:.4} kg", poured.max(0.0), a);
            Ok(run.finish(false, Some(reason)))
        }
    }
}

/// Pour pose of a demonstrated unscoop: the goal position at the steepest
/// tilt seen in the segment.
pub fn unscoop_target(step: &SkillStep) -> UnscoopTarget {
    let mut pose = step.goal.hand_pose;
    if let Some(seg) = &step.segment {
        if let Some(p) = seg.hand_trajectory.poses().min_by(|a, b| a.pitch().total_cmp(&b.pitch())) {
            pose.orientation = p.orientation;
        }
    }
    UnscoopTarget { pose, amount: None }
}

/// Runs one skill from `world` until its goal predicate holds or `t_max`
/// elapses. The world is not stepped after the predicate first holds.
///
/// Grasp, visual servo and move-with-contact have no controllers of their
/// own and move to the goal pose with Eq. 2.
pub fn execute_skill(
    sim: &Simulator,
    step: &SkillStep,
    world: &WorldState,
    params: &ControlParams,
    scoop_path: Option<&Trajectory>,
    sensor: &mut ChaCha8Rng,
) -> Result<SkillOutcome> {
    params.validate()?;
    let mut run = Run::new(sim, params, step.class, world);
    let goal = step.goal.hand_pose;
    let threshold = params.contact_threshold;
    let reached = match step.class {
        SkillClass::Scoop => return execute_scoop(run, &goal, scoop_path),
        SkillClass::Unscoop => return execute_unscoop(run, &unscoop_target(step), sensor),
        SkillClass::MoveToContact => run.kinematic(&goal, |r| r.contact() >= threshold)?,
        SkillClass::GuardedMove => run.kinematic(&goal, |r| {
            r.contact() >= threshold || r.params.pose_reached(&r.state.scoop_pose, &goal)
        })?,
        _ => run.kinematic(&goal, |r| r.params.pose_reached(&r.state.scoop_pose, &goal))?,
    };
    Ok(run.finish(reached, None))
}

/// Unscoop driven by an explicit target, as used by coaching.
pub fn execute_unscoop_to(
    sim: &Simulator,
    target: &UnscoopTarget,
    world: &WorldState,
    params: &ControlParams,
    sensor: &mut ChaCha8Rng,
) -> Result<SkillOutcome> {
    params.validate()?;
    execute_unscoop(Run::new(sim, params, SkillClass::Unscoop, world), target, sensor)
}

/// Executes the steps in order, halting at the first that misses its goal.
pub fn execute_policy(
    sim: &Simulator,
    policy: &Policy,
    world: &WorldState,
    params: &ControlParams,
    scoop_path: Option<&Trajectory>,
    sensor: &mut ChaCha8Rng,
) -> Result<PolicyOutcome> {
    let mut state = *world;
    let mut outcomes = Vec::with_capacity(policy.steps.len());
    for (i, step) in policy.steps.iter().enumerate() {
        let out = execute_skill(sim, step, &state, params, scoop_path, sensor)?;
        state = out.final_state;
        let failed = !out.reached_goal;
        let reason = out.halt_reason.clone();
        outcomes.push(out);
        if failed {
            tracing::warn!(step = i, skill = %step.class, "policy halted");
            return Ok(PolicyOutcome {
                outcomes,
                final_state: state,
                halted_at: Some(i),
                halt_reason: reason,
            });
        }
    }
    Ok(PolicyOutcome {
        outcomes,
        final_state: state,
        halted_at: None,
        halt_reason: None,
    })
}
