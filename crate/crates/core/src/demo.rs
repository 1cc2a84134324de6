//! Demonstrations: synthetic generation, contact-change segmentation,
//! segment features, rule-based skill classification and policy assembly.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::SkillClass;
use crate::error::{Error, Result};
use crate::geom::{self, step_indicator, Pose, Trajectory, TrajectorySample};
use crate::sim::SimParams;

/// Radius converting rotation into an equivalent hand displacement when
/// comparing rotation with translation, meters.
pub const ROTATION_RADIUS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectClass {
    ScoopTool,
    GranularBed,
    GoalContainer,
    RigidSurface,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] = [
        ObjectClass::ScoopTool,
        ObjectClass::GranularBed,
        ObjectClass::GoalContainer,
        ObjectClass::RigidSurface,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub id: String,
    pub class: ObjectClass,
    pub grasp_orientation: Pose,
    pub states: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoFrame {
    pub time: f64,
    pub hand_pose: Pose,
    /// Hand (through the held tool) in contact with an object.
    pub phi: u8,
    /// Held object in contact with another object.
    pub psi: u8,
    pub held_object_id: Option<String>,
    pub nearest_object_id: String,
    pub object_poses: BTreeMap<String, Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub objects: Vec<ObjectMeta>,
    /// Ground-truth skill sequence when the demo was generated.
    pub labels: Option<Vec<SkillClass>>,
    pub frames: Vec<DemoFrame>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum DemoRecord {
    Objects {
        objects: Vec<ObjectMeta>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<SkillClass>>,
    },
    Frame(DemoFrame),
}

impl Demo {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDemo(m));
        if self.frames.len() < 2 {
            return bad(format!("need at least 2 frames, got {}", self.frames.len()));
        }
        let known = |id: &str| self.objects.iter().any(|o| o.id == id);
        for (i, f) in self.frames.iter().enumerate() {
            if !f.time.is_finite() || !f.hand_pose.is_finite() {
                return bad(format!("frame {i} is not finite"));
            }
            if i > 0 && f.time <= self.frames[i - 1].time {
                return bad(format!("frame {i} time does not increase"));
            }
            if f.phi > 1 || f.psi > 1 {
                return bad(format!("frame {i} contact flags must be 0 or 1"));
            }
            if !known(&f.nearest_object_id) {
                return bad(format!("frame {i}: unknown object {}", f.nearest_object_id));
            }
            if let Some(h) = &f.held_object_id {
                if !known(h) {
                    return bad(format!("frame {i}: unknown object {h}"));
                }
            }
            if let Some(id) = f.object_poses.keys().find(|id| !known(id)) {
                return bad(format!("frame {i}: unknown object {id}"));
            }
        }
        Ok(())
    }

    pub fn object(&self, id: &str) -> Option<&ObjectMeta> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Line-delimited JSON: an object-table record followed by one record
    /// per frame.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let header = DemoRecord::Objects {
            objects: self.objects.clone(),
            labels: self.labels.clone(),
        };
        out.push_str(&serde_json::to_string(&header).expect("serializable"));
        out.push('\n');
        for f in &self.frames {
            out.push_str(&serde_json::to_string(&DemoRecord::Frame(f.clone())).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Demo> {
        let mut objects = None;
        let mut labels = None;
        let mut frames = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: DemoRecord = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
            match record {
                DemoRecord::Objects { objects: o, labels: l } => {
                    if objects.is_some() {
                        return Err(Error::InvalidDemo("duplicate object table".into()));
                    }
                    objects = Some(o);
                    labels = l;
                }
                DemoRecord::Frame(f) => frames.push(f),
            }
        }
        let objects = objects.ok_or_else(|| Error::InvalidDemo("missing object table".into()))?;
        let demo = Demo {
            objects,
            labels,
            frames,
        };
        demo.validate()?;
        Ok(demo)
    }
}

/// Frame indices where the contact pair changes.
pub fn detect_piks(frames: &[DemoFrame]) -> Vec<usize> {
    (1..frames.len())
        .filter(|&i| (frames[i].phi, frames[i].psi) != (frames[i - 1].phi, frames[i - 1].psi))
        .collect()
}

/// Half-open frame ranges between consecutive PIKs.
pub fn segment_ranges(n_frames: usize, piks: &[usize]) -> Vec<(usize, usize)> {
    let mut bounds = Vec::with_capacity(piks.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(piks);
    bounds.push(n_frames);
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Contact flags from a separation signal, entering below `threshold` and
/// leaving above twice that.
pub fn contacts_from_distance(distances: &[f64], threshold: f64) -> Vec<u8> {
    let mut inside = false;
    distances
        .iter()
        .map(|&d| {
            if inside {
                inside = d <= 2.0 * threshold;
            } else {
                inside = d < threshold;
            }
            u8::from(inside)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Half-open frame range.
    pub start: usize,
    pub end: usize,
    pub phi: u8,
    pub psi: u8,
    /// Hand pose relative to the interacting object.
    pub relative_trajectory: Trajectory,
    pub hand_trajectory: Trajectory,
    pub u_dx: u8,
    pub u_dy: u8,
    pub rotation_dominant: bool,
    pub interacting_object_id: String,
    /// The object came from the proximity fallback rather than the
    /// following segment.
    pub object_fallback: bool,
}

impl Segment {
    pub fn features(&self) -> SegmentFeatures {
        SegmentFeatures {
            phi: self.phi,
            psi: self.psi,
            u_dx: self.u_dx,
            u_dy: self.u_dy,
            rotation_dominant: self.rotation_dominant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentFeatures {
    pub phi: u8,
    pub psi: u8,
    pub u_dx: u8,
    pub u_dy: u8,
    pub rotation_dominant: bool,
}

fn relative_pose(hand: &Pose, object: &Pose) -> Pose {
    Pose {
        position: hand.position - object.position,
        orientation: (hand.orientation - object.orientation).map(geom::wrap),
    }
}

fn object_pose(frame: &DemoFrame, id: &str) -> Pose {
    frame.object_poses.get(id).copied().unwrap_or_default()
}

/// Frames used for a segment's motion: its own range plus the first frame
/// of the following segment, so every segment spans at least one step.
fn motion_span(n_frames: usize, range: (usize, usize)) -> (usize, usize) {
    let (a, b) = range;
    if b < n_frames {
        (a, b + 1)
    } else if b - a >= 2 {
        (a, b)
    } else {
        (a.saturating_sub(1), b)
    }
}

/// Builds segment `index` of `ranges`; for out-of-contact segments the
/// interacting object is taken from the next segment.
pub fn extract_segment(
    frames: &[DemoFrame],
    ranges: &[(usize, usize)],
    index: usize,
    v_eps: f64,
) -> Result<Segment> {
    let (start, end) = *ranges
        .get(index)
        .ok_or_else(|| Error::InvalidDemo(format!("segment {index} out of range")))?;
    if start >= end || end > frames.len() {
        return Err(Error::InvalidDemo(format!("bad segment range {start}..{end}")));
    }
    let first = &frames[start];
    let (object, fallback) = if first.phi == 0 {
        match ranges.get(index + 1) {
            Some(&(next, _)) => (frames[next].nearest_object_id.clone(), false),
            None => (first.nearest_object_id.clone(), true),
        }
    } else {
        (first.nearest_object_id.clone(), false)
    };

    let (a, b) = motion_span(frames.len(), (start, end));
    let span = &frames[a..b];
    let hand = Trajectory::new(
        span.iter()
            .map(|f| TrajectorySample {
                time: f.time,
                pose: f.hand_pose,
            })
            .collect(),
    )?;
    let relative = Trajectory::new(
        span.iter()
            .map(|f| TrajectorySample {
                time: f.time,
                pose: relative_pose(&f.hand_pose, &object_pose(f, &object)),
            })
            .collect(),
    )?;

    let rel = relative.samples();
    let duration = relative.duration();
    let separation_rate =
        (rel[rel.len() - 1].pose.position.norm() - rel[0].pose.position.norm()) / duration;
    let mut translation = 0.0;
    let mut rotation = 0.0;
    for w in hand.samples().windows(2) {
        translation += (w[1].pose.position - w[0].pose.position).norm();
        rotation += w[0].pose.error_to(&w[1].pose).fixed_rows::<3>(3).norm();
    }
    let mean_speed = (translation + ROTATION_RADIUS * rotation) / duration;

    Ok(Segment {
        start,
        end,
        phi: first.phi,
        psi: first.psi,
        relative_trajectory: relative,
        hand_trajectory: hand,
        u_dx: step_indicator(separation_rate),
        u_dy: step_indicator(mean_speed - v_eps),
        rotation_dominant: ROTATION_RADIUS * rotation > translation,
        interacting_object_id: object,
        object_fallback: fallback,
    })
}

fn carrying(prev: Option<SkillClass>) -> bool {
    matches!(
        prev,
        Some(SkillClass::Scoop | SkillClass::Lift | SkillClass::Transport)
    )
}

/// Fixed rule tree. Features are consulted in the order φ, ψ, u_dX,
/// dominance, object class, previous class.
pub fn classify_segment(
    features: &SegmentFeatures,
    class: ObjectClass,
    prev: Option<SkillClass>,
) -> SkillClass {
    use ObjectClass::*;
    use SkillClass as S;
    if features.phi == 0 {
        if features.u_dy == 0 {
            return S::VisualServo;
        }
        if features.u_dx == 1 {
            return S::Retract;
        }
        return match class {
            GranularBed | ScoopTool => S::Approach,
            GoalContainer if carrying(prev) => S::Transport,
            GoalContainer => S::Approach,
            RigidSurface => S::GuardedMove,
        };
    }
    if features.psi == 1 {
        return match class {
            GranularBed => S::Scoop,
            RigidSurface => S::MoveWithContact,
            _ => S::GuardedMove,
        };
    }
    if features.u_dy == 0 {
        return S::Grasp;
    }
    match (features.u_dx, features.rotation_dominant, class) {
        (_, true, GoalContainer) => S::Unscoop,
        (1, false, GranularBed) => S::Lift,
        (0, false, GranularBed | RigidSurface) => S::MoveToContact,
        (_, _, ScoopTool) => S::Grasp,
        _ => S::GuardedMove,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalState {
    pub object_id: String,
    pub object_class: ObjectClass,
    /// Object state the skill should leave behind.
    pub object_state: String,
    pub hand_pose: Pose,
    /// Hand position relative to the object.
    pub relative_position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillStep {
    pub class: SkillClass,
    pub goal: GoalState,
    pub segment: Option<Segment>,
    /// Added as a connector rather than observed.
    pub inserted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub steps: Vec<SkillStep>,
}

impl Policy {
    pub fn classes(&self) -> Vec<SkillClass> {
        self.steps.iter().map(|s| s.class).collect()
    }

    pub fn step_of(&self, class: SkillClass) -> Option<&SkillStep> {
        self.steps.iter().find(|s| s.class == class)
    }
}

fn object_state(meta: &ObjectMeta, skill: SkillClass) -> String {
    let idx = match (meta.class, skill) {
        (ObjectClass::GranularBed, SkillClass::Scoop) => 1,
        (ObjectClass::GoalContainer, SkillClass::Unscoop) => 1,
        _ => 0,
    };
    meta.states
        .get(idx)
        .or_else(|| meta.states.first())
        .cloned()
        .unwrap_or_default()
}

fn goal_for(
    meta: &ObjectMeta,
    skill: SkillClass,
    hand: &Pose,
    object: &Pose,
) -> GoalState {
    GoalState {
        object_id: meta.id.clone(),
        object_class: meta.class,
        object_state: object_state(meta, skill),
        hand_pose: *hand,
        relative_position: hand.position - object.position,
    }
}

fn scoop_ready(prev: Option<&SkillStep>, object_id: &str) -> bool {
    match prev {
        None => true,
        Some(p) => match p.class {
            SkillClass::Approach => p.goal.object_id == object_id,
            SkillClass::MoveToContact | SkillClass::GuardedMove => true,
            _ => false,
        },
    }
}

fn unscoop_ready(prev: Option<&SkillStep>) -> bool {
    match prev {
        None => false,
        Some(p) => {
            p.class == SkillClass::Transport
                || (p.class == SkillClass::Approach
                    && p.goal.object_class == ObjectClass::GoalContainer)
        }
    }
}

/// Adds connector skills where a step's precondition is not met by the
/// step before it.
pub fn insert_transitions(steps: Vec<SkillStep>) -> Vec<SkillStep> {
    let mut out: Vec<SkillStep> = Vec::with_capacity(steps.len() + 2);
    for step in steps {
        let connector = match step.class {
            SkillClass::Scoop if !scoop_ready(out.last(), &step.goal.object_id) => {
                Some(SkillClass::MoveToContact)
            }
            SkillClass::Unscoop if !unscoop_ready(out.last()) => Some(SkillClass::Approach),
            _ => None,
        };
        if let Some(class) = connector {
            let start = step
                .segment
                .as_ref()
                .map_or(step.goal.hand_pose, |s| *s.hand_trajectory.first());
            let rel = step
                .segment
                .as_ref()
                .map_or(step.goal.relative_position, |s| {
                    s.relative_trajectory.first().position
                });
            out.push(SkillStep {
                class,
                goal: GoalState {
                    object_id: step.goal.object_id.clone(),
                    object_class: step.goal.object_class,
                    object_state: String::new(),
                    hand_pose: start,
                    relative_position: rel,
                },
                segment: None,
                inserted: true,
            });
        }
        out.push(step);
    }
    out
}

/// Minimum mean hand speed for a segment to count as moving, m/s.
pub const DEFAULT_V_EPS: f64 = 0.005;

pub fn infer_policy(demo: &Demo, v_eps: f64) -> Result<Policy> {
    demo.validate()?;
    let frames = &demo.frames;
    let ranges = segment_ranges(frames.len(), &detect_piks(frames));
    let mut steps = Vec::with_capacity(ranges.len());
    let mut prev = None;
    for i in 0..ranges.len() {
        let seg = extract_segment(frames, &ranges, i, v_eps)?;
        let meta = demo
            .object(&seg.interacting_object_id)
            .ok_or_else(|| Error::InvalidDemo(format!("unknown object {}", seg.interacting_object_id)))?;
        let class = classify_segment(&seg.features(), meta.class, prev);
        let last = &frames[seg.end - 1];
        let goal = goal_for(
            meta,
            class,
            seg.hand_trajectory.last(),
            &object_pose(last, &meta.id),
        );
        steps.push(SkillStep {
            class,
            goal,
            segment: Some(seg),
            inserted: false,
        });
        prev = Some(class);
    }
    if steps.is_empty() {
        return Err(Error::InvalidDemo("no segments".into()));
    }
    Ok(Policy {
        steps: insert_transitions(steps),
    })
}

/// Kinematic script of a scooping demonstration. Poses are in the x–z
/// plane; pitch is positive nose-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoScript {
    pub frame_rate: f64,
    /// Where the blade enters the media, m.
    pub entry_x: f64,
    pub stroke_length: f64,
    /// Depth at the bottom of the stroke, m.
    pub depth: f64,
    /// Share of the stroke spent diving to full depth.
    pub dive_fraction: f64,
    pub entry_pitch: f64,
    pub exit_pitch: f64,
    pub lift_height: f64,
    /// Peak lip tilt while pouring, radians.
    pub unscoop_tilt: f64,
    pub approach_frames: usize,
    pub dive_frames: usize,
    pub drag_frames: usize,
    pub lift_frames: usize,
    pub transport_frames: usize,
    pub unscoop_frames: usize,
    pub retract_frames: usize,
    pub retract: bool,
    /// Start with the blade already at the entry pose, touching the media.
    pub start_in_contact: bool,
    /// Standard deviation of hand position noise, m.
    pub pose_noise: f64,
}

impl Default for DemoScript {
    fn default() -> Self {
        DemoScript {
            frame_rate: 30.0,
            entry_x: 0.36,
            stroke_length: 0.16,
            depth: 0.035,
            dive_fraction: 0.3,
            entry_pitch: -0.45,
            exit_pitch: -0.2,
            lift_height: 0.22,
            unscoop_tilt: 80f64.to_radians(),
            approach_frames: 45,
            dive_frames: 18,
            drag_frames: 36,
            lift_frames: 30,
            transport_frames: 45,
            unscoop_frames: 40,
            retract_frames: 30,
            retract: false,
            start_in_contact: false,
            pose_noise: 0.0,
        }
    }
}

impl DemoScript {
    /// A script with every shape parameter drawn from a plausible range.
    pub fn randomized(rng: &mut impl Rng) -> DemoScript {
        DemoScript {
            entry_x: rng.random_range(0.34..0.38),
            stroke_length: rng.random_range(0.12..0.17),
            depth: rng.random_range(0.025..0.045),
            dive_fraction: rng.random_range(0.2..0.4),
            entry_pitch: rng.random_range(-0.5..-0.35),
            exit_pitch: rng.random_range(-0.3..-0.15),
            lift_height: rng.random_range(0.18..0.25),
            unscoop_tilt: rng.random_range(70f64..85.0).to_radians(),
            approach_frames: rng.random_range(30..60),
            dive_frames: rng.random_range(12..24),
            drag_frames: rng.random_range(24..48),
            lift_frames: rng.random_range(20..40),
            transport_frames: rng.random_range(30..60),
            unscoop_frames: rng.random_range(30..50),
            retract_frames: rng.random_range(20..40),
            retract: rng.random_bool(0.5),
            start_in_contact: rng.random_bool(0.3),
            ..DemoScript::default()
        }
    }

    pub fn entry_pose(&self, sim: &SimParams) -> Pose {
        Pose::planar(self.entry_x, sim.surface_height(), self.entry_pitch)
    }

    pub fn bottom_pose(&self, sim: &SimParams) -> Pose {
        Pose::planar(
            self.entry_x + self.stroke_length,
            sim.surface_height() - self.depth,
            self.exit_pitch,
        )
    }

    pub fn validate(&self, sim: &SimParams) -> Result<()> {
        let bad = |m: &str| Err(Error::InfeasibleScript(m.to_string()));
        let [x0, x1, _, _] = sim.bed_extent();
        let margin = 0.5 * sim.blade.length;
        if !(self.frame_rate > 0.0) {
            return bad("frame rate must be > 0");
        }
        if !(self.depth > 0.0 && self.depth < sim.fill_height) {
            return bad("stroke depth must lie inside the media");
        }
        if !(self.stroke_length > 0.0) {
            return bad("stroke length must be > 0");
        }
        if self.entry_x - margin < x0 || self.entry_x + self.stroke_length + margin > x1 {
            return bad("stroke leaves the bed");
        }
        if !(self.dive_fraction > 0.0 && self.dive_fraction < 1.0) {
            return bad("dive fraction must lie in (0, 1)");
        }
        for p in [self.entry_pitch, self.exit_pitch] {
            if !(p > -FRAC_PI_2 && p <= 0.0) || -p > sim.hold_angle {
                return bad("stroke pitch must hold the load");
            }
        }
        if !(self.lift_height > sim.surface_height() + sim.blade.length)
            || self.lift_height <= sim.goal_container_pose.z()
        {
            return bad("lift height must clear the bed and the container");
        }
        if !(self.unscoop_tilt > sim.hold_angle && self.unscoop_tilt <= sim.full_pour_angle) {
            return bad("unscoop tilt must lie between the hold and full pour angles");
        }
        let frames = [
            self.dive_frames,
            self.drag_frames,
            self.lift_frames,
            self.transport_frames,
            self.unscoop_frames,
        ];
        if frames.iter().any(|n| *n < 2)
            || (!self.start_in_contact && self.approach_frames < 2)
            || (self.retract && self.retract_frames < 2)
        {
            return bad("every phase needs at least 2 frames");
        }
        if !(self.pose_noise >= 0.0) {
            return bad("pose noise must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDemo {
    pub demo: Demo,
    /// Ground-truth skill per phase.
    pub labels: Vec<SkillClass>,
    /// First frame of every phase after the first.
    pub boundaries: Vec<usize>,
}

struct Phase {
    label: SkillClass,
    phi: u8,
    psi: u8,
    /// Key poses with the number of frames spent moving to each.
    keys: Vec<(Pose, usize)>,
}

pub const SCOOP_ID: &str = "scoop";
pub const BED_ID: &str = "bed";
pub const GOAL_ID: &str = "goal";

pub fn scene_objects() -> Vec<ObjectMeta> {
    let meta = |id: &str, class, states: [&str; 2]| ObjectMeta {
        id: id.to_string(),
        class,
        grasp_orientation: Pose::default(),
        states: states.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        meta(SCOOP_ID, ObjectClass::ScoopTool, ["empty", "loaded"]),
        meta(BED_ID, ObjectClass::GranularBed, ["level", "disturbed"]),
        meta(GOAL_ID, ObjectClass::GoalContainer, ["empty", "filled"]),
    ]
}

/// Scripted scooping demonstration with ground-truth contacts and labels.
pub fn generate_demo(script: &DemoScript, sim: &SimParams, seed: u64) -> Result<GeneratedDemo> {
    script.validate(sim)?;
    for pose in [&sim.home_pose, &script.entry_pose(sim), &script.bottom_pose(sim)] {
        sim.arm
            .inverse(pose, &[0.0, -1.0, 0.0])
            .map_err(|e| Error::InfeasibleScript(e.to_string()))?;
    }
    let entry = script.entry_pose(sim);
    let bottom = script.bottom_pose(sim);
    let dive = Pose::planar(
        script.entry_x + script.dive_fraction * script.stroke_length,
        bottom.z(),
        script.entry_pitch,
    );
    let goal = sim.goal_container_pose;
    let top = Pose::planar(bottom.x(), script.lift_height, 0.0);
    let over_goal = Pose::planar(goal.x(), script.lift_height, 0.0);
    let tipped = Pose::planar(goal.x(), script.lift_height, -script.unscoop_tilt);
    let half = script.unscoop_frames / 2;

    let mut phases = Vec::new();
    if !script.start_in_contact {
        phases.push(Phase {
            label: SkillClass::Approach,
            phi: 0,
            psi: 0,
            keys: vec![(entry, script.approach_frames)],
        });
    }
    phases.push(Phase {
        label: SkillClass::Scoop,
        phi: 1,
        psi: 1,
        keys: vec![(dive, script.dive_frames), (bottom, script.drag_frames)],
    });
    phases.push(Phase {
        label: SkillClass::Lift,
        phi: 1,
        psi: 0,
        keys: vec![(top, script.lift_frames)],
    });
    phases.push(Phase {
        label: SkillClass::Transport,
        phi: 0,
        psi: 0,
        keys: vec![(over_goal, script.transport_frames)],
    });
    phases.push(Phase {
        label: SkillClass::Unscoop,
        phi: 1,
        psi: 0,
        keys: vec![(tipped, half), (over_goal, script.unscoop_frames - half)],
    });
    if script.retract {
        let away = Pose::planar(goal.x() - 0.1, script.lift_height + 0.08, 0.0);
        phases.push(Phase {
            label: SkillClass::Retract,
            phi: 0,
            psi: 0,
            keys: vec![(away, script.retract_frames)],
        });
    }

    let mut object_poses = BTreeMap::new();
    object_poses.insert(BED_ID.to_string(), sim.bed_surface_center());
    object_poses.insert(GOAL_ID.to_string(), goal);

    let mut noise_rng = crate::stream_rng(seed, crate::Stream::DemoNoise);
    let noise = Normal::new(0.0, script.pose_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InfeasibleScript(e.to_string()))?;

    let mut frames = Vec::new();
    let mut boundaries = Vec::new();
    let mut cursor = if script.start_in_contact { entry } else { sim.home_pose };
    let mut push = |pose: Pose, phi: u8, psi: u8, frames: &mut Vec<DemoFrame>| {
        let mut hand = pose;
        if script.pose_noise > 0.0 {
            hand.position += Vector3::from_fn(|_, _| noise.sample(&mut noise_rng));
        }
        let nearest = [BED_ID, GOAL_ID]
            .into_iter()
            .min_by(|a, b| {
                let da = (object_poses[*a].position - pose.position).norm();
                let db = (object_poses[*b].position - pose.position).norm();
                da.total_cmp(&db)
            })
            .expect("two candidates");
        let mut poses = object_poses.clone();
        poses.insert(SCOOP_ID.to_string(), hand);
        frames.push(DemoFrame {
            time: frames.len() as f64 / script.frame_rate,
            hand_pose: hand,
            phi,
            psi,
            held_object_id: Some(SCOOP_ID.to_string()),
            nearest_object_id: nearest.to_string(),
            object_poses: poses,
        });
    };
    for (k, phase) in phases.iter().enumerate() {
        if k > 0 {
            boundaries.push(frames.len());
        }
        for (target, n) in &phase.keys {
            for j in 0..*n {
                push(cursor.lerp(target, j as f64 / *n as f64), phase.phi, phase.psi, &mut frames);
            }
            cursor = *target;
        }
    }
    let last = phases.last().expect("non-empty");
    push(cursor, last.phi, last.psi, &mut frames);

    let labels: Vec<SkillClass> = phases.iter().map(|p| p.label).collect();
    Ok(GeneratedDemo {
        demo: Demo {
            objects: scene_objects(),
            labels: Some(labels.clone()),
            frames,
        },
        labels,
        boundaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_demo() -> GeneratedDemo {
        generate_demo(&DemoScript::default(), &SimParams::default(), 1).unwrap()
    }

    fn frames_with(flags: &[(u8, u8)]) -> Vec<DemoFrame> {
        let mut poses = BTreeMap::new();
        poses.insert(BED_ID.to_string(), Pose::default());
        flags
            .iter()
            .enumerate()
            .map(|(i, &(phi, psi))| DemoFrame {
                time: i as f64 * 0.1,
                hand_pose: Pose::planar(0.1 * i as f64, 0.2, 0.0),
                phi,
                psi,
                held_object_id: None,
                nearest_object_id: BED_ID.into(),
                object_poses: poses.clone(),
            })
            .collect()
    }

    #[test]
    fn piks_on_constructed_input() {
        assert!(detect_piks(&frames_with(&[(0, 0); 10])).is_empty());
        let mut flags = vec![(0u8, 0u8); 120];
        for f in flags.iter_mut().take(80).skip(40) {
            f.0 = 1;
        }
        assert_eq!(detect_piks(&frames_with(&flags)), vec![40, 80]);
    }

    #[test]
    fn default_demo_has_four_piks() {
        let g = default_demo();
        let piks = detect_piks(&g.demo.frames);
        assert_eq!(piks, g.boundaries);
        assert_eq!(piks.len(), 4);
        assert_eq!(segment_ranges(g.demo.frames.len(), &piks).len(), 5);
        assert_eq!(g.labels.len(), 5);
    }

    #[test]
    fn default_demo_infers_canonical_policy() {
        let g = default_demo();
        let policy = infer_policy(&g.demo, DEFAULT_V_EPS).unwrap();
        use SkillClass::*;
        assert_eq!(policy.classes(), vec![Approach, Scoop, Lift, Transport, Unscoop]);
        assert!(policy.steps.iter().all(|s| !s.inserted));
        let scoop = policy.step_of(Scoop).unwrap();
        assert_eq!(scoop.goal.object_id, BED_ID);
        assert_eq!(scoop.goal.object_state, "disturbed");
        let seg = scoop.segment.as_ref().unwrap();
        let sim = SimParams::default();
        assert_eq!(seg.hand_trajectory.first(), &DemoScript::default().entry_pose(&sim));
        assert_eq!(seg.hand_trajectory.last(), &DemoScript::default().bottom_pose(&sim));
    }

    #[test]
    fn segment_feature_examples() {
        let g = default_demo();
        let frames = &g.demo.frames;
        let ranges = segment_ranges(frames.len(), &detect_piks(frames));
        let approach = extract_segment(frames, &ranges, 0, DEFAULT_V_EPS).unwrap();
        assert_eq!(approach.u_dx, 0);
        assert_eq!(approach.interacting_object_id, BED_ID);
        let lift = extract_segment(frames, &ranges, 2, DEFAULT_V_EPS).unwrap();
        assert_eq!(lift.u_dx, 1);
        assert!(!lift.rotation_dominant);
        let transport = extract_segment(frames, &ranges, 3, DEFAULT_V_EPS).unwrap();
        assert_eq!(transport.interacting_object_id, GOAL_ID);
        let unscoop = extract_segment(frames, &ranges, 4, DEFAULT_V_EPS).unwrap();
        assert!(unscoop.rotation_dominant);
        assert_eq!(unscoop.u_dy, 1);

        // stationary hold
        let mut still = frames_with(&[(1, 0); 5]);
        for f in &mut still {
            f.hand_pose = Pose::planar(0.3, 0.2, 0.0);
        }
        let seg = extract_segment(&still, &[(0, 5)], 0, DEFAULT_V_EPS).unwrap();
        assert_eq!(seg.u_dy, 0);
    }

    #[test]
    fn retract_uses_fallback_object() {
        let script = DemoScript {
            retract: true,
            ..DemoScript::default()
        };
        let g = generate_demo(&script, &SimParams::default(), 0).unwrap();
        let frames = &g.demo.frames;
        let ranges = segment_ranges(frames.len(), &detect_piks(frames));
        let last = extract_segment(frames, &ranges, ranges.len() - 1, DEFAULT_V_EPS).unwrap();
        assert!(last.object_fallback);
        assert_eq!(last.u_dx, 1);
        let policy = infer_policy(&g.demo, DEFAULT_V_EPS).unwrap();
        assert_eq!(policy.classes().last(), Some(&SkillClass::Retract));
    }

    #[test]
    fn classify_examples() {
        let f = |phi, psi, u_dx, rot| SegmentFeatures {
            phi,
            psi,
            u_dx,
            u_dy: 1,
            rotation_dominant: rot,
        };
        assert_eq!(
            classify_segment(&f(0, 0, 0, false), ObjectClass::GranularBed, None),
            SkillClass::Approach
        );
        assert_eq!(
            classify_segment(&f(1, 1, 0, false), ObjectClass::GranularBed, Some(SkillClass::Approach)),
            SkillClass::Scoop
        );
        assert_eq!(
            classify_segment(&f(1, 0, 1, true), ObjectClass::GoalContainer, Some(SkillClass::Transport)),
            SkillClass::Unscoop
        );
        assert_eq!(
            classify_segment(&f(0, 0, 0, false), ObjectClass::GoalContainer, Some(SkillClass::Lift)),
            SkillClass::Transport
        );
        assert_eq!(
            classify_segment(&f(0, 0, 0, false), ObjectClass::GoalContainer, None),
            SkillClass::Approach
        );
    }

    /// Expected class for every point of the feature lattice, written out
    /// independently of the rule tree's branch order.
    fn expected(f: &SegmentFeatures, class: ObjectClass, prev: Option<SkillClass>) -> SkillClass {
        use ObjectClass::*;
        use SkillClass as S;
        let carry = matches!(prev, Some(S::Scoop | S::Lift | S::Transport));
        match (f.phi, f.psi, f.u_dx, f.u_dy, f.rotation_dominant, class) {
            (0, _, _, 0, _, _) => S::VisualServo,
            (0, _, 1, 1, _, _) => S::Retract,
            (0, _, 0, 1, _, GranularBed | ScoopTool) => S::Approach,
            (0, _, 0, 1, _, GoalContainer) => {
                if carry {
                    S::Transport
                } else {
                    S::Approach
                }
            }
            (0, _, 0, 1, _, RigidSurface) => S::GuardedMove,
            (1, 1, _, _, _, GranularBed) => S::Scoop,
            (1, 1, _, _, _, RigidSurface) => S::MoveWithContact,
            (1, 1, _, _, _, _) => S::GuardedMove,
            (1, 0, _, 0, _, _) => S::Grasp,
            (1, 0, _, 1, true, GoalContainer) => S::Unscoop,
            (1, 0, 1, 1, false, GranularBed) => S::Lift,
            (1, 0, 0, 1, false, GranularBed | RigidSurface) => S::MoveToContact,
            (1, 0, _, 1, _, ScoopTool) => S::Grasp,
            _ => S::GuardedMove,
        }
    }

    #[test]
    fn rule_tree_matches_table_over_lattice() {
        let prevs: Vec<Option<SkillClass>> =
            std::iter::once(None).chain(SkillClass::ALL.iter().copied().map(Some)).collect();
        let mut seen = std::collections::BTreeSet::new();
        for bits in 0..32u8 {
            let f = SegmentFeatures {
                phi: bits & 1,
                psi: (bits >> 1) & 1,
                u_dx: (bits >> 2) & 1,
                u_dy: (bits >> 3) & 1,
                rotation_dominant: (bits >> 4) & 1 == 1,
            };
            for class in ObjectClass::ALL {
                for prev in &prevs {
                    let got = classify_segment(&f, class, *prev);
                    assert_eq!(got, expected(&f, class, *prev), "{f:?} {class:?} {prev:?}");
                    assert_eq!(got, classify_segment(&f, class, *prev));
                    seen.insert(got);
                }
            }
        }
        // every class except transport-free ones is reachable
        assert!(seen.len() >= 10, "{seen:?}");
    }

    #[test]
    fn start_in_contact_skips_connector() {
        let script = DemoScript {
            start_in_contact: true,
            ..DemoScript::default()
        };
        let g = generate_demo(&script, &SimParams::default(), 0).unwrap();
        let policy = infer_policy(&g.demo, DEFAULT_V_EPS).unwrap();
        assert_eq!(policy.classes(), g.labels);
        assert_eq!(policy.classes()[0], SkillClass::Scoop);
    }

    #[test]
    fn connectors_inserted_and_idempotent() {
        let g = default_demo();
        let policy = infer_policy(&g.demo, DEFAULT_V_EPS).unwrap();
        // drop approach and transport so both preconditions fail
        let mut steps = policy.steps.clone();
        steps.retain(|s| !matches!(s.class, SkillClass::Approach | SkillClass::Transport));
        let mut lifted = steps.clone();
        lifted.insert(0, policy.steps[2].clone());
        let fixed = insert_transitions(lifted);
        use SkillClass::*;
        assert_eq!(
            fixed.iter().map(|s| s.class).collect::<Vec<_>>(),
            vec![Lift, MoveToContact, Scoop, Lift, Approach, Unscoop]
        );
        assert!(fixed[1].inserted && fixed[4].inserted);
        assert_eq!(fixed[4].goal.object_id, GOAL_ID);
        assert_eq!(insert_transitions(fixed.clone()), fixed);
        assert_eq!(insert_transitions(policy.steps.clone()), policy.steps);
    }

    #[test]
    fn ndjson_roundtrip_is_byte_identical() {
        let script = DemoScript {
            pose_noise: 0.001,
            retract: true,
            ..DemoScript::default()
        };
        let g = generate_demo(&script, &SimParams::default(), 3).unwrap();
        let text = g.demo.to_ndjson();
        let back = Demo::from_ndjson(&text).unwrap();
        assert_eq!(back, g.demo);
        assert_eq!(back.to_ndjson(), text);
    }

    #[test]
    fn reading_rejects_bad_files() {
        let g = default_demo();
        let text = g.demo.to_ndjson();
        let no_header: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(Demo::from_ndjson(&no_header), Err(Error::InvalidDemo(_))));
        assert!(matches!(Demo::from_ndjson("{not json"), Err(Error::Parse(_))));
        let one: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(Demo::from_ndjson(&one).is_err());
        let unknown = text.replacen("\"nearest_object_id\":\"bed\"", "\"nearest_object_id\":\"ghost\"", 1);
        assert!(Demo::from_ndjson(&unknown).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let script = DemoScript {
            pose_noise: 0.002,
            ..DemoScript::default()
        };
        let sim = SimParams::default();
        assert_eq!(generate_demo(&script, &sim, 9).unwrap(), generate_demo(&script, &sim, 9).unwrap());
        assert_ne!(generate_demo(&script, &sim, 9).unwrap(), generate_demo(&script, &sim, 10).unwrap());
        let clean = DemoScript::default();
        assert_eq!(generate_demo(&clean, &sim, 1).unwrap().demo, generate_demo(&clean, &sim, 2).unwrap().demo);
    }

    #[test]
    fn infeasible_scripts_rejected() {
        let sim = SimParams::default();
        let deep = DemoScript {
            depth: 0.2,
            ..DemoScript::default()
        };
        assert!(matches!(generate_demo(&deep, &sim, 0), Err(Error::InfeasibleScript(_))));
        let long = DemoScript {
            stroke_length: 0.5,
            ..DemoScript::default()
        };
        assert!(generate_demo(&long, &sim, 0).is_err());
    }

    #[test]
    fn randomized_corpus_matches_labels() {
        let sim = SimParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..10 {
            let script = DemoScript::randomized(&mut rng);
            let g = generate_demo(&script, &sim, seed).unwrap();
            let policy = infer_policy(&g.demo, DEFAULT_V_EPS).unwrap();
            assert_eq!(policy.classes(), g.labels, "{script:?}");
        }
    }

    #[test]
    fn hysteresis_suppresses_chatter() {
        let d = [0.01, 0.0002, 0.0004, 0.0002, 0.0005, 0.0007, 0.01];
        assert_eq!(contacts_from_distance(&d, 0.0003), vec![0, 1, 1, 1, 1, 0, 0]);
    }

    proptest! {
        #[test]
        fn segments_partition_frames(flags in proptest::collection::vec((0u8..2, 0u8..2), 2..60)) {
            let frames = frames_with(&flags);
            let piks = detect_piks(&frames);
            prop_assert!(piks.windows(2).all(|w| w[0] < w[1]));
            let ranges = segment_ranges(frames.len(), &piks);
            prop_assert_eq!(ranges[0].0, 0);
            prop_assert_eq!(ranges.last().unwrap().1, frames.len());
            for w in ranges.windows(2) {
                prop_assert_eq!(w[0].1, w[1].0);
                let a = &frames[w[0].0];
                let b = &frames[w[1].0];
                prop_assert_ne!((a.phi, a.psi), (b.phi, b.psi));
            }
            for r in &ranges {
                prop_assert!(r.0 < r.1);
            }
        }

        #[test]
        fn piks_invariant_under_time_rescaling(
            flags in proptest::collection::vec((0u8..2, 0u8..2), 2..40),
            scale in 0.01f64..100.0,
        ) {
            let frames = frames_with(&flags);
            let mut scaled = frames.clone();
            for f in &mut scaled {
                f.time *= scale;
            }
            prop_assert_eq!(detect_piks(&frames), detect_piks(&scaled));
        }
    }
}
