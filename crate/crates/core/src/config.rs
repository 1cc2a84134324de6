//! Run configuration: every tunable of the pipeline under one TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::ControlParams;
use crate::demo::DemoScript;
use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::learn::{ActionBounds, LearnParams};
use crate::media::MediaParams;
use crate::planner::{PathProblem, PlannerParams};
use crate::sim::SimParams;

/// Shape of the least-effort scoop problem; the endpoints come from the
/// inferred policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoopPlanConfig {
    pub n_waypoints: usize,
    /// `[min, max]` blade pitch along the path, rad.
    pub pitch_bounds: [f64; 2],
    /// m below the free surface.
    pub depth_max: f64,
    pub optimize_depth: bool,
    /// s.
    pub duration: f64,
}

impl Default for ScoopPlanConfig {
    fn default() -> Self {
        ScoopPlanConfig {
            n_waypoints: 7,
            pitch_bounds: [-0.5, -0.1],
            depth_max: 0.06,
            optimize_depth: true,
            duration: 2.0,
        }
    }
}

impl ScoopPlanConfig {
    pub fn problem(&self, start: Pose, end: Pose) -> PathProblem {
        PathProblem {
            start,
            end,
            n_waypoints: self.n_waypoints,
            pitch_bounds: self.pitch_bounds,
            depth_max: self.depth_max,
            optimize_depth: self.optimize_depth,
            duration: self.duration,
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("scoop.{key}"), msg))
            }
        };
        check(self.n_waypoints >= 3, "n_waypoints", "must be >= 3")?;
        check(
            self.pitch_bounds[0] <= self.pitch_bounds[1],
            "pitch_bounds",
            "must be [min, max] with min <= max",
        )?;
        check(self.depth_max >= 0.0, "depth_max", "must be >= 0")?;
        check(self.duration > 0.0, "duration", "must be > 0")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoachConfig {
    pub bounds: ActionBounds,
    /// Height of the blade above the goal container while pouring, m.
    pub pour_height: f64,
}

impl Default for CoachConfig {
    fn default() -> Self {
        CoachConfig {
            bounds: ActionBounds::default(),
            pour_height: 0.12,
        }
    }
}

impl CoachConfig {
    /// Level blade above the goal container, where every coaching episode
    /// starts.
    pub fn pour_pose(&self, sim: &SimParams) -> Pose {
        let g = &sim.goal_container_pose;
        Pose::planar(g.x(), g.z() + self.pour_height, 0.0)
    }

    fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if b.steps == 0 {
            return Err(Error::config("coach.bounds.steps", "must be > 0"));
        }
        if !(b.angular_step > 0.0) {
            return Err(Error::config("coach.bounds.angular_step", "must be > 0"));
        }
        if !(b.linear_step > 0.0) {
            return Err(Error::config("coach.bounds.linear_step", "must be > 0"));
        }
        if b.limits.iter().any(|[lo, hi]| !(lo <= hi)) {
            return Err(Error::config("coach.bounds.limits", "each entry must be [min, max]"));
        }
        if !(self.pour_height > 0.0) {
            return Err(Error::config("coach.pour_height", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub media: MediaParams,
    pub sim: SimParams,
    pub rl: LearnParams,
    pub planner: PlannerParams,
    pub scoop: ScoopPlanConfig,
    pub control: ControlParams,
    pub demo: DemoScript,
    pub coach: CoachConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            media: MediaParams::default(),
            sim: SimParams::default(),
            rl: LearnParams::default(),
            planner: PlannerParams::default(),
            scoop: ScoopPlanConfig::default(),
            control: ControlParams::default(),
            demo: DemoScript::default(),
            coach: CoachConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config("config", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.media.validate()?;
        self.sim.validate()?;
        self.rl.validate()?;
        self.planner.validate()?;
        self.scoop.validate()?;
        self.control.validate()?;
        self.demo
            .validate(&self.sim)
            .map_err(|e| Error::config("demo", e.to_string()))?;
        self.coach.validate()
    }

    /// SHA-256 of the resolved configuration without the seed, hex encoded.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("seed");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Header line stamped on every artifact.
    pub fn header(&self) -> String {
        format!("# scoopcoach config_hash={} seed={}", self.hash(), self.seed)
    }
}
