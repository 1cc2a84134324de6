//! The end-to-end pipeline: demonstration, inference, planning,
//! self-evaluation, execution and coaching, all driven by one `RunConfig`.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::control::{execute_policy, execute_unscoop_to, PolicyOutcome, SkillClass, UnscoopTarget};
use crate::demo::{generate_demo, infer_policy, Demo, GeneratedDemo, Policy, DEFAULT_V_EPS};
use crate::error::{Error, Result};
use crate::geom::{Pose, Trajectory};
use crate::learn::{self_evaluate, ActionGrid, CoachInput, CoachSession, EpisodeReport, SelfEvalResult};
use crate::planner::{solve_least_effort, PathProblem, PlannedPath};
use crate::sim::Simulator;
use crate::{stream_rng, Stream};

/// Least-effort scoop stroke together with the demonstrated one it
/// replaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoopPlan {
    pub problem: PathProblem,
    pub path: PlannedPath,
    pub demo_trajectory: Trajectory,
    /// Media work along the demonstrated stroke, J.
    pub demo_effort: f64,
    /// Mass the demonstrated stroke captures, kg.
    pub demo_mass: f64,
}

/// Everything a full run produces, in a form that serializes stably.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub seed: u64,
    pub demo_labels: Vec<SkillClass>,
    pub policy: Vec<SkillClass>,
    pub planned_work: f64,
    pub demo_effort: f64,
    pub tuned_offsets: Vec<f64>,
    pub tuned_effort: f64,
    pub tuned_mass: f64,
    pub execution: Vec<ExecutionSummary>,
    pub coaching: Vec<EpisodeReport>,
    pub greedy_action: f64,
    pub greedy_grams: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionSummary {
    pub skill: SkillClass,
    pub reached_goal: bool,
    pub effort: f64,
    pub mass_in_scoop: f64,
    pub transferred: f64,
    pub duration: f64,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    config: RunConfig,
    sim: Simulator,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let sim = Simulator::new(config.media, config.sim)?;
        Ok(Pipeline { config, sim })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn generate_demo(&self) -> Result<GeneratedDemo> {
        generate_demo(&self.config.demo, &self.config.sim, self.config.seed)
    }

    pub fn infer(&self, demo: &Demo) -> Result<Policy> {
        infer_policy(demo, DEFAULT_V_EPS)
    }

    /// Plans the least-effort stroke between the ends of the demonstrated
    /// scoop. Endpoints are projected onto the arm plane and into the pitch
    /// bounds.
    pub fn plan(&self, policy: &Policy) -> Result<ScoopPlan> {
        let step = policy
            .step_of(SkillClass::Scoop)
            .ok_or_else(|| Error::InvalidProblem("policy has no scoop skill".into()))?;
        let seg = step
            .segment
            .as_ref()
            .ok_or_else(|| Error::InvalidProblem("scoop skill has no demonstrated segment".into()))?;
        let [lo, hi] = self.config.scoop.pitch_bounds;
        let project = |p: &Pose| Pose::planar(p.x(), p.z(), p.pitch().clamp(lo, hi));
        let demo_trajectory = seg.hand_trajectory.clone();
        let problem = self
            .config
            .scoop
            .problem(project(demo_trajectory.first()), project(&step.goal.hand_pose));
        let path = solve_least_effort(&problem, self.sim.media(), self.sim.blade(), &self.config.planner)?;
        let demo = self.sim.replay(&demo_trajectory);
        Ok(ScoopPlan {
            problem,
            path,
            demo_trajectory,
            demo_effort: demo.effort,
            demo_mass: demo.mass,
        })
    }

    /// Tunes pitch offsets around the planned stroke. Effort is rewarded
    /// relative to the demonstrated stroke.
    pub fn self_evaluate(&self, plan: &ScoopPlan) -> Result<SelfEvalResult> {
        let grid = ActionGrid::new(plan.path.interior_count(), &self.config.rl.offsets_deg)?;
        let mut rng = stream_rng(self.config.seed, Stream::SelfEval);
        self_evaluate(
            &plan.path,
            &grid,
            |t| self.sim.replay(t),
            plan.demo_effort,
            self.config.sim.mass_min,
            &self.config.rl,
            &mut rng,
        )
    }

    /// Runs the policy from the home pose, scooping along `scoop_path`.
    pub fn execute(&self, policy: &Policy, scoop_path: Option<&Trajectory>) -> Result<PolicyOutcome> {
        let world = self.sim.initial_state(&self.config.sim.home_pose)?;
        let mut rng = stream_rng(self.config.seed, Stream::Sensor);
        execute_policy(&self.sim, policy, &world, &self.config.control, scoop_path, &mut rng)
    }

    pub fn pour_pose(&self) -> Pose {
        self.config.coach.pour_pose(&self.config.sim)
    }

    /// A coaching session whose episodes start above the goal container
    /// with a full scoop.
    pub fn coach_session(&self, input: CoachInput) -> Result<CoachSession> {
        let capacity = self.config.sim.scoop_capacity;
        CoachSession::new(
            input,
            self.pour_pose(),
            self.config.coach.bounds,
            self.config.rl.clone(),
            capacity,
            self.loaded_mass()?,
            stream_rng(self.config.seed, Stream::Coaching),
        )
    }

    fn loaded_mass(&self) -> Result<f64> {
        let world = self.sim.initial_state(&self.pour_pose())?;
        Ok(self.sim.preload(&world, self.config.sim.scoop_capacity).mass_in_scoop)
    }

    /// One unscoop with the coached DOF set to `action`; returns the mass
    /// that reached the goal container, kg.
    pub fn coach_transfer(&self, input: &CoachInput, action: f64) -> Result<f64> {
        let pour = self.pour_pose();
        let world = self.sim.initial_state(&pour)?;
        let world = self.sim.preload(&world, self.config.sim.scoop_capacity);
        let target = UnscoopTarget {
            pose: input.dof.with_value(&pour, action),
            amount: None,
        };
        let mut rng = stream_rng(self.config.seed, Stream::Sensor);
        let out = execute_unscoop_to(&self.sim, &target, &world, &self.config.control, &mut rng)?;
        Ok(out.transferred)
    }

    pub fn coach_step(&self, session: &mut CoachSession) -> Result<EpisodeReport> {
        let input = *session.input();
        session.step(|a| self.coach_transfer(&input, a))
    }

    /// Runs `episodes` coaching episodes, or `rl.max_episodes` when `None`.
    pub fn coach(&self, input: CoachInput, episodes: Option<usize>) -> Result<CoachSession> {
        let mut session = self.coach_session(input)?;
        for _ in 0..episodes.unwrap_or(self.config.rl.max_episodes) {
            self.coach_step(&mut session)?;
        }
        Ok(session)
    }

    /// Demonstration through coaching in one call.
    pub fn run_all(&self, input: CoachInput) -> Result<PipelineReport> {
        let generated = self.generate_demo()?;
        let policy = self.infer(&generated.demo)?;
        let plan = self.plan(&policy)?;
        let tuned = self.self_evaluate(&plan)?;
        let outcome = self.execute(&policy, Some(&tuned.trajectory))?;
        let session = self.coach(input, None)?;
        let greedy_action = session.greedy_action();
        let greedy_grams = self.coach_transfer(&input, greedy_action)? * 1000.0;
        Ok(PipelineReport {
            config_hash: self.config.hash(),
            seed: self.config.seed,
            demo_labels: generated.labels,
            policy: policy.classes(),
            planned_work: plan.path.work,
            demo_effort: plan.demo_effort,
            tuned_offsets: tuned.offsets,
            tuned_effort: tuned.effort,
            tuned_mass: tuned.mass,
            execution: outcome
                .outcomes
                .iter()
                .map(|o| ExecutionSummary {
                    skill: o.class,
                    reached_goal: o.reached_goal,
                    effort: o.effort,
                    mass_in_scoop: o.final_state.mass_in_scoop,
                    transferred: o.transferred,
                    duration: o.trace.len() as f64 * self.config.sim.dt,
                })
                .collect(),
            coaching: session.history().to_vec(),
            greedy_action,
            greedy_grams,
        })
    }
}

/// Line-delimited coaching log: the config header, then one JSON record per
/// episode.
pub fn episode_log(config: &RunConfig, reports: &[EpisodeReport]) -> String {
    let mut out = config.header();
    out.push('\n');
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("episode report serializes"));
        out.push('\n');
    }
    out
}
