//! Self-evaluation over pitch offsets along the planned scoop path, and the
//! coaching bandit that learns how far to move along a coached DOF.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector6;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Pose, Trajectory};
use crate::planner::PlannedPath;
use crate::sim::ScoopResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Reward for reaching the goal state.
    pub c1: f64,
    /// Penalty for missing it.
    pub c2: f64,
    /// Weight of the effort term in the success reward.
    pub beta: f64,
    pub epsilon0: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    /// Coaching episodes per session.
    pub max_episodes: usize,
    /// Self-evaluation episodes.
    pub selfeval_episodes: usize,
    /// Pitch offsets tried at every waypoint, degrees.
    pub offsets_deg: [f64; 5],
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams {
            alpha: 0.5,
            gamma: 0.9,
            c1: 1.0,
            c2: 2.0,
            beta: 1.0,
            epsilon0: 1.0,
            epsilon_decay: 0.85,
            epsilon_min: 0.05,
            max_episodes: 30,
            selfeval_episodes: 12_000,
            offsets_deg: [-10.0, -5.0, 0.0, 5.0, 10.0],
        }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("rl.{key}"), msg))
            }
        };
        check(self.alpha > 0.0 && self.alpha <= 1.0, "alpha", "must lie in (0, 1]")?;
        check(self.gamma >= 0.0 && self.gamma < 1.0, "gamma", "must lie in [0, 1)")?;
        check(self.c1 > 0.0, "c1", "must be > 0")?;
        check(self.c2 > self.c1, "c2", "must be greater than c1")?;
        check(self.beta >= 0.0 && self.beta.is_finite(), "beta", "must be >= 0")?;
        check(
            self.epsilon0 > 0.0 && self.epsilon0 <= 1.0,
            "epsilon0",
            "must lie in (0, 1]",
        )?;
        check(
            self.epsilon_decay > 0.0 && self.epsilon_decay < 1.0,
            "epsilon_decay",
            "must lie in (0, 1)",
        )?;
        check(
            self.epsilon_min >= 0.0 && self.epsilon_min <= self.epsilon0,
            "epsilon_min",
            "must lie in [0, epsilon0]",
        )?;
        check(self.max_episodes > 0, "max_episodes", "must be > 0")?;
        check(self.selfeval_episodes > 0, "selfeval_episodes", "must be > 0")?;
        let o = &self.offsets_deg;
        let symmetric = (0..o.len()).all(|i| (o[i] + o[o.len() - 1 - i]).abs() < 1e-12);
        let sorted = o.windows(2).all(|w| w[0] < w[1]);
        check(
            symmetric && sorted && o.iter().all(|v| v.abs() <= 45.0),
            "offsets_deg",
            "must be increasing, symmetric about 0 and within 45 degrees",
        )
    }

    /// Largest reward magnitude a single transition can produce.
    pub fn r_max(&self) -> f64 {
        (self.c1 + self.beta).abs().max(self.c2)
    }

    pub fn next_epsilon(&self, epsilon: f64) -> f64 {
        (epsilon * self.epsilon_decay).max(self.epsilon_min)
    }
}

/// Goal reward with effort shaping. The relative saving is clamped to
/// [−1, 1] so the reward stays bounded for very costly paths.
pub fn reward(success: bool, effort: f64, w_ref: f64, params: &LearnParams) -> f64 {
    if success {
        let saving = ((w_ref - effort) / w_ref).clamp(-1.0, 1.0);
        params.c1 + params.beta * saving
    } else {
        -params.c2
    }
}

pub fn q_update(q: f64, r: f64, max_next: f64, params: &LearnParams) -> f64 {
    q + params.alpha * (r + params.gamma * max_next - q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QRow {
    pub values: Vec<f64>,
    pub visits: Vec<u32>,
}

/// Action values keyed by the offsets already chosen along the path. The
/// key length is the waypoint index, so a key names a state of the chain
/// together with the history that determines its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "QTableRepr", into = "QTableRepr")]
pub struct QTable {
    /// Action magnitudes, used for tie-breaking.
    pub actions: Vec<f64>,
    /// Value of state-action pairs not yet updated.
    pub initial: f64,
    rows: BTreeMap<Vec<usize>, QRow>,
}

#[derive(Serialize, Deserialize)]
struct QTableRepr {
    actions: Vec<f64>,
    initial: f64,
    rows: Vec<(Vec<usize>, QRow)>,
}

impl From<QTableRepr> for QTable {
    fn from(r: QTableRepr) -> Self {
        QTable {
            actions: r.actions,
            initial: r.initial,
            rows: r.rows.into_iter().collect(),
        }
    }
}

impl From<QTable> for QTableRepr {
    fn from(q: QTable) -> Self {
        QTableRepr {
            actions: q.actions,
            initial: q.initial,
            rows: q.rows.into_iter().collect(),
        }
    }
}

impl QTable {
    pub fn new(actions: Vec<f64>, initial: f64) -> Self {
        QTable {
            actions,
            initial,
            rows: BTreeMap::new(),
        }
    }

    /// Number of states that have been updated.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, state: &[usize]) -> Option<&QRow> {
        self.rows.get(state)
    }

    pub fn values(&self, state: &[usize]) -> Vec<f64> {
        self.rows
            .get(state)
            .map_or_else(|| vec![self.initial; self.actions.len()], |r| r.values.clone())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<usize>, &QRow)> {
        self.rows.iter()
    }

    pub fn max(&self, state: &[usize]) -> f64 {
        self.values(state).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Best action; ties go to the action of smallest magnitude, then the
    /// lowest index.
    pub fn greedy(&self, state: &[usize]) -> usize {
        let row = self.values(state);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (0..row.len())
            .filter(|&a| row[a] == best)
            .min_by(|&a, &b| {
                self.actions[a]
                    .abs()
                    .total_cmp(&self.actions[b].abs())
                    .then(a.cmp(&b))
            })
            .expect("non-empty action set")
    }

    pub fn update(&mut self, state: &[usize], action: usize, r: f64, max_next: f64, params: &LearnParams) {
        let n = self.actions.len();
        let initial = self.initial;
        let row = self.rows.entry(state.to_vec()).or_insert_with(|| QRow {
            values: vec![initial; n],
            visits: vec![0; n],
        });
        row.values[action] = q_update(row.values[action], r, max_next, params);
        row.visits[action] += 1;
    }

    /// Greedy action sequence of length `depth` from the start state.
    pub fn greedy_path(&self, depth: usize) -> Vec<usize> {
        let mut path = Vec::with_capacity(depth);
        for _ in 0..depth {
            path.push(self.greedy(&path));
        }
        path
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub n_waypoints: usize,
    /// Pitch offsets, radians.
    pub offsets: Vec<f64>,
}

impl ActionGrid {
    pub fn new(n_waypoints: usize, offsets_deg: &[f64]) -> Result<Self> {
        if n_waypoints == 0 {
            return Err(Error::InvalidProblem("action grid needs a waypoint".into()));
        }
        if offsets_deg.is_empty() {
            return Err(Error::EmptyActionSet);
        }
        Ok(ActionGrid {
            n_waypoints,
            offsets: offsets_deg.iter().map(|d| d.to_radians()).collect(),
        })
    }

    pub fn zero_action(&self) -> usize {
        (0..self.offsets.len())
            .min_by(|&a, &b| self.offsets[a].abs().total_cmp(&self.offsets[b].abs()))
            .expect("non-empty")
    }

    pub fn offsets_of(&self, actions: &[usize]) -> Vec<f64> {
        actions.iter().map(|&a| self.offsets[a]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfEvalEpisode {
    pub episode: usize,
    pub actions: Vec<usize>,
    pub effort: f64,
    pub mass: f64,
    pub success: bool,
    pub reward: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfEvalResult {
    pub offsets: Vec<f64>,
    pub trajectory: Trajectory,
    pub effort: f64,
    pub mass: f64,
    pub success: bool,
    /// No episode succeeded and the offsets fell back to zero.
    pub fell_back: bool,
    pub q: QTable,
    pub episodes: Vec<SelfEvalEpisode>,
}

fn pick(rng: &mut ChaCha8Rng, epsilon: f64, n: usize, greedy: usize) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..n)
    } else {
        greedy
    }
}

/// Q-learning along the chain of waypoints: at waypoint k the agent picks a
/// pitch offset, and the episode ends with a sweep of the perturbed path
/// through `evaluate` and the goal reward. Unvisited pairs start at
/// `c1 + beta`, which no reward exceeds, so the greedy policy keeps trying
/// untested offsets until their values are known.
pub fn self_evaluate(
    baseline: &PlannedPath,
    grid: &ActionGrid,
    mut evaluate: impl FnMut(&Trajectory) -> ScoopResult,
    w_ref: f64,
    mass_min: f64,
    params: &LearnParams,
    rng: &mut ChaCha8Rng,
) -> Result<SelfEvalResult> {
    params.validate()?;
    if grid.n_waypoints != baseline.interior_count() {
        return Err(Error::InvalidProblem(format!(
            "grid has {} waypoints, path has {}",
            grid.n_waypoints,
            baseline.interior_count()
        )));
    }
    if !(w_ref > 0.0) {
        return Err(Error::InvalidProblem("reference effort must be > 0".into()));
    }
    let m = grid.n_waypoints;
    let n = grid.offsets.len();
    let mut q = QTable::new(grid.offsets.clone(), params.c1 + params.beta);
    let mut epsilon = params.epsilon0;
    let mut episodes = Vec::with_capacity(params.selfeval_episodes);
    let mut actions = Vec::with_capacity(m);
    for episode in 0..params.selfeval_episodes {
        actions.clear();
        for _ in 0..m {
            let a = pick(rng, epsilon, n, q.greedy(&actions));
            actions.push(a);
        }
        let traj = baseline.with_pitch_offsets(&grid.offsets_of(&actions))?;
        let out = evaluate(&traj);
        let success = out.mass >= mass_min;
        let r = reward(success, out.effort, w_ref, params);
        for k in (0..m).rev() {
            let (rk, max_next) = if k + 1 == m {
                (r, 0.0)
            } else {
                (0.0, q.max(&actions[..=k]))
            };
            q.update(&actions[..k], actions[k], rk, max_next, params);
        }
        episodes.push(SelfEvalEpisode {
            episode,
            actions: actions.clone(),
            effort: out.effort,
            mass: out.mass,
            success,
            reward: r,
            epsilon,
        });
        epsilon = params.next_epsilon(epsilon);
    }

    let any_success = episodes.iter().any(|e| e.success);
    let chosen = if any_success {
        q.greedy_path(m)
    } else {
        vec![grid.zero_action(); m]
    };
    let offsets = grid.offsets_of(&chosen);
    let trajectory = baseline.with_pitch_offsets(&offsets)?;
    let out = evaluate(&trajectory);
    Ok(SelfEvalResult {
        offsets,
        trajectory,
        effort: out.effort,
        mass: out.mass,
        success: out.mass >= mass_min,
        fell_back: !any_success,
        q,
        episodes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dof {
    X,
    Y,
    Z,
    Roll,
    Pitch,
    Yaw,
}

impl Dof {
    pub fn is_angular(self) -> bool {
        matches!(self, Dof::Roll | Dof::Pitch | Dof::Yaw)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn value(self, pose: &Pose) -> f64 {
        pose.as_vector()[self.index()]
    }

    /// `pose` with this DOF replaced by `v`.
    pub fn with_value(self, pose: &Pose, v: f64) -> Pose {
        let mut delta = Vector6::zeros();
        delta[self.index()] = v - self.value(pose);
        pose.offset(&delta)
    }
}

impl FromStr for Dof {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "x" => Dof::X,
            "y" => Dof::Y,
            "z" => Dof::Z,
            "roll" => Dof::Roll,
            "pitch" => Dof::Pitch,
            "yaw" => Dof::Yaw,
            other => return Err(Error::InvalidCoachInput(format!("unknown dof '{other}'"))),
        })
    }
}

impl fmt::Display for Dof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dof::X => "x",
            Dof::Y => "y",
            Dof::Z => "z",
            Dof::Roll => "roll",
            Dof::Pitch => "pitch",
            Dof::Yaw => "yaw",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[serde(alias = "up")]
    Positive,
    #[serde(alias = "down")]
    Negative,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Positive => 1.0,
            Direction::Negative => -1.0,
        }
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "up" | "+" => Ok(Direction::Positive),
            "negative" | "down" | "-" => Ok(Direction::Negative),
            other => Err(Error::InvalidCoachInput(format!("unknown direction '{other}'"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Positive => "positive",
            Direction::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoachInput {
    pub goal_grams: f64,
    pub dof: Dof,
    pub direction: Direction,
}

impl CoachInput {
    pub fn validate(&self, capacity_kg: f64) -> Result<()> {
        if !(self.goal_grams > 0.0 && self.goal_grams.is_finite()) {
            return Err(Error::InvalidCoachInput("goal must be a positive number of grams".into()));
        }
        if self.goal_grams > capacity_kg * 1000.0 {
            return Err(Error::InvalidCoachInput(format!(
                "goal {} g exceeds scoop capacity {} g",
                self.goal_grams,
                capacity_kg * 1000.0
            )));
        }
        Ok(())
    }
}

/// Per-DOF `[min, max]` limits for coached actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionBounds {
    pub limits: [[f64; 2]; 6],
    /// Radians.
    pub angular_step: f64,
    /// Meters.
    pub linear_step: f64,
    pub steps: usize,
}

impl Default for ActionBounds {
    fn default() -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        ActionBounds {
            limits: [
                [0.0, 1.0],
                [-0.5, 0.5],
                [0.0, 0.8],
                [-PI, PI],
                [-FRAC_PI_2, FRAC_PI_2],
                [-PI, PI],
            ],
            angular_step: 5f64.to_radians(),
            linear_step: 0.01,
            steps: 19,
        }
    }
}

/// Grid stepping away from the start value in the coached direction,
/// clipped to the bounds. Values equal to the start are dropped.
pub fn build_action_set(input: &CoachInput, start: &Pose, bounds: &ActionBounds) -> Result<Vec<f64>> {
    let dof = input.dof;
    let step = if dof.is_angular() {
        bounds.angular_step
    } else {
        bounds.linear_step
    };
    let [lo, hi] = bounds.limits[dof.index()];
    let x0 = dof.value(start);
    let mut out: Vec<f64> = Vec::with_capacity(bounds.steps);
    for i in 1..=bounds.steps {
        let v = (x0 + input.direction.sign() * i as f64 * step).clamp(lo, hi);
        if v == x0 || out.last() == Some(&v) {
            continue;
        }
        if input.direction.sign() * (v - x0) < 0.0 {
            continue;
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub actions: Vec<f64>,
    pub values: Vec<f64>,
    pub counts: Vec<u32>,
    pub episode: usize,
    pub epsilon: f64,
}

/// Starting estimate of untried actions. Rewards are at most 1, so the
/// greedy choice sweeps every action once before it settles.
pub const OPTIMISTIC_VALUE: f64 = 2.0;

impl BanditState {
    pub fn new(actions: Vec<f64>, epsilon: f64) -> Self {
        let n = actions.len();
        BanditState {
            actions,
            values: vec![OPTIMISTIC_VALUE; n],
            counts: vec![0; n],
            episode: 0,
            epsilon,
        }
    }

    /// Highest estimate, lowest index on ties.
    pub fn greedy(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn select(&self, rng: &mut ChaCha8Rng) -> usize {
        pick(rng, self.epsilon, self.actions.len(), self.greedy())
    }

    pub fn update(&mut self, action: usize, r: f64) {
        self.counts[action] += 1;
        self.values[action] += (r - self.values[action]) / f64::from(self.counts[action]);
    }

    pub fn all_pulled(&self) -> bool {
        self.counts.iter().all(|c| *c > 0)
    }
}

pub fn coach_reward(transferred_kg: f64, goal_kg: f64) -> f64 {
    (1.0 - (transferred_kg - goal_kg).abs() / goal_kg).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode: usize,
    pub action_index: usize,
    pub action: f64,
    pub transferred_grams: f64,
    pub reward: f64,
    /// Exploration rate used to choose this episode's action.
    pub epsilon: f64,
}

/// One coaching session: a bandit over the coached DOF values.
#[derive(Debug, Clone)]
pub struct CoachSession {
    input: CoachInput,
    bandit: BanditState,
    params: LearnParams,
    bounds: ActionBounds,
    start: Pose,
    rng: ChaCha8Rng,
    history: Vec<EpisodeReport>,
    boundaries: Vec<usize>,
    warnings: Vec<String>,
}

impl CoachSession {
    /// `loaded_kg` is the mass held at the start of every episode.
    pub fn new(
        input: CoachInput,
        start: Pose,
        bounds: ActionBounds,
        params: LearnParams,
        capacity_kg: f64,
        loaded_kg: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        params.validate()?;
        input.validate(capacity_kg)?;
        let actions = build_action_set(&input, &start, &bounds)?;
        let mut session = CoachSession {
            input,
            bandit: BanditState::new(actions, params.epsilon0),
            params,
            bounds,
            start,
            rng,
            history: Vec::new(),
            boundaries: Vec::new(),
            warnings: Vec::new(),
        };
        session.check_load(loaded_kg);
        Ok(session)
    }

    fn check_load(&mut self, loaded_kg: f64) {
        if self.input.goal_grams > loaded_kg * 1000.0 {
            self.warnings.push(format!(
                "goal {} g exceeds the loaded {:.1} g",
                self.input.goal_grams,
                loaded_kg * 1000.0
            ));
        }
    }

    pub fn input(&self) -> &CoachInput {
        &self.input
    }

    pub fn bandit(&self) -> &BanditState {
        &self.bandit
    }

    pub fn history(&self) -> &[EpisodeReport] {
        &self.history
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn greedy_action(&self) -> f64 {
        self.bandit.actions[self.bandit.greedy()]
    }

    /// Runs one episode. `transfer` executes the action and returns the
    /// transferred mass in kg.
    pub fn step(&mut self, transfer: impl FnOnce(f64) -> Result<f64>) -> Result<EpisodeReport> {
        let idx = self.bandit.select(&mut self.rng);
        let action = self.bandit.actions[idx];
        let m = transfer(action)?;
        let r = coach_reward(m, self.input.goal_grams / 1000.0);
        self.bandit.update(idx, r);
        let report = EpisodeReport {
            episode: self.bandit.episode,
            action_index: idx,
            action,
            transferred_grams: m * 1000.0,
            reward: r,
            epsilon: self.bandit.epsilon,
        };
        self.bandit.episode += 1;
        self.bandit.epsilon = self.params.next_epsilon(self.bandit.epsilon);
        self.history.push(report);
        Ok(report)
    }

    /// Episodes at which a new coach input took effect.
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// New coach input mid-session: rebuilds the action set and restarts
    /// the value estimates and exploration; episode numbering continues.
    /// Returns false, changing nothing, when the input is unchanged.
    pub fn feedback(&mut self, input: CoachInput, capacity_kg: f64, loaded_kg: f64) -> Result<bool> {
        if input == self.input {
            return Ok(false);
        }
        input.validate(capacity_kg)?;
        let actions = build_action_set(&input, &self.start, &self.bounds)?;
        let episode = self.bandit.episode;
        self.input = input;
        self.bandit = BanditState::new(actions, self.params.epsilon0);
        self.bandit.episode = episode;
        self.boundaries.push(episode);
        self.check_load(loaded_kg);
        Ok(true)
    }
}
