//! One coaching session. A blocking actor owns the pipeline and learner;
//! requests reach it over a channel and readers see published snapshots.

use std::collections::HashMap;
use std::sync::Arc;

use tokio::sync::{broadcast, mpsc, oneshot, watch, OwnedSemaphorePermit, Semaphore};

use scoopcoach_core::learn::{CoachInput, CoachSession, EpisodeReport};
use scoopcoach_core::pipeline::Pipeline;
use scoopcoach_core::{RunConfig, Trajectory};

use crate::wire::{Boundary, ErrorBody, ErrorCode, Event, Phase, Scene, Snapshot};

#[derive(Debug, Clone, PartialEq)]
pub struct Ack {
    pub phase: Phase,
    pub changed: bool,
    pub warnings: Vec<String>,
}

type Reply<T> = oneshot::Sender<Result<T, ErrorBody>>;

enum Command {
    Submit(CoachInput, Reply<Ack>),
    Step(Option<String>, Reply<EpisodeReport>),
    Run(Option<usize>, mpsc::Sender<Event>),
    Feedback(CoachInput, Reply<Ack>),
}

/// Client side of a session actor. Mutating calls fail with `session_busy`
/// while another one is in flight.
#[derive(Clone)]
pub struct SessionHandle {
    tx: mpsc::Sender<(Command, OwnedSemaphorePermit)>,
    gate: Arc<Semaphore>,
    snapshot: watch::Receiver<Arc<Snapshot>>,
    events: broadcast::Sender<Event>,
    config: Arc<RunConfig>,
}

impl SessionHandle {
    pub fn spawn(id: String, config: RunConfig) -> Result<Self, ErrorBody> {
        let pipeline = Pipeline::new(config.clone())?;
        let (tx, rx) = mpsc::channel(1);
        let (events, _) = broadcast::channel(256);
        let mut actor = Actor {
            id,
            pipeline,
            phase: Phase::Idle,
            coach: None,
            trajectory: None,
            boundaries: Vec::new(),
            replies: HashMap::new(),
            events: events.clone(),
            snapshot: None,
        };
        let (snap_tx, snap_rx) = watch::channel(Arc::new(actor.snapshot()));
        actor.snapshot = Some(snap_tx);
        tokio::task::spawn_blocking(move || actor.run(rx));
        Ok(SessionHandle {
            tx,
            gate: Arc::new(Semaphore::new(1)),
            snapshot: snap_rx,
            events,
            config: Arc::new(config),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.borrow().clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Event> {
        self.events.subscribe()
    }

    fn permit(&self) -> Result<OwnedSemaphorePermit, ErrorBody> {
        self.gate
            .clone()
            .try_acquire_owned()
            .map_err(|_| ErrorBody::new(ErrorCode::SessionBusy, "session is busy with another request"))
    }

    async fn send(&self, cmd: Command, permit: OwnedSemaphorePermit) -> Result<(), ErrorBody> {
        self.tx
            .send((cmd, permit))
            .await
            .map_err(|_| ErrorBody::new(ErrorCode::Runtime, "session actor stopped"))
    }

    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ErrorBody> {
        let permit = self.permit()?;
        let (reply, rx) = oneshot::channel();
        self.send(make(reply), permit).await?;
        rx.await
            .map_err(|_| ErrorBody::new(ErrorCode::Runtime, "session actor dropped the request"))?
    }

    pub async fn submit(&self, input: CoachInput) -> Result<Ack, ErrorBody> {
        self.call(|r| Command::Submit(input, r)).await
    }

    pub async fn step(&self, idempotency_key: Option<String>) -> Result<EpisodeReport, ErrorBody> {
        self.call(|r| Command::Step(idempotency_key, r)).await
    }

    pub async fn feedback(&self, input: CoachInput) -> Result<Ack, ErrorBody> {
        self.call(|r| Command::Feedback(input, r)).await
    }

    /// Starts a run; events arrive on the returned channel, ending with
    /// `RunComplete` or `Error`.
    pub async fn run(&self, episodes: Option<usize>) -> Result<mpsc::Receiver<Event>, ErrorBody> {
        let permit = self.permit()?;
        if self.snapshot().coach_input.is_none() {
            return Err(no_coach_input());
        }
        let (tx, rx) = mpsc::channel(64);
        self.send(Command::Run(episodes, tx), permit).await?;
        Ok(rx)
    }
}

fn no_coach_input() -> ErrorBody {
    ErrorBody::new(
        ErrorCode::NoCoachInput,
        "no coach input yet; send SubmitCoachInput first",
    )
}

struct Actor {
    id: String,
    pipeline: Pipeline,
    phase: Phase,
    coach: Option<CoachSession>,
    trajectory: Option<Trajectory>,
    boundaries: Vec<Boundary>,
    /// Reports already returned, by idempotency key.
    replies: HashMap<String, EpisodeReport>,
    events: broadcast::Sender<Event>,
    snapshot: Option<watch::Sender<Arc<Snapshot>>>,
}

impl Actor {
    fn run(mut self, mut rx: mpsc::Receiver<(Command, OwnedSemaphorePermit)>) {
        // Each permit is released before the reply goes out, so a client
        // that saw the reply can send its next request immediately.
        while let Some((cmd, permit)) = rx.blocking_recv() {
            match cmd {
                Command::Submit(input, reply) => {
                    let r = self.submit(input);
                    drop(permit);
                    let _ = reply.send(r);
                }
                Command::Step(key, reply) => {
                    let r = self.step(key);
                    drop(permit);
                    let _ = reply.send(r);
                }
                Command::Feedback(input, reply) => {
                    let r = self.feedback(input);
                    drop(permit);
                    let _ = reply.send(r);
                }
                Command::Run(episodes, tx) => {
                    let last = self.run_episodes(episodes, &tx);
                    drop(permit);
                    if let Some(event) = last {
                        let _ = tx.blocking_send(event);
                    }
                }
            }
        }
        tracing::debug!(session = %self.id, "session closed");
    }

    fn snapshot(&self) -> Snapshot {
        let cfg = self.pipeline.config();
        Snapshot {
            session_id: self.id.clone(),
            phase: self.phase,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            coach_input: self.coach.as_ref().map(|c| *c.input()),
            episode_history: self.coach.as_ref().map_or_else(Vec::new, |c| c.history().to_vec()),
            boundaries: self.boundaries.clone(),
            greedy_action: self.coach.as_ref().map(|c| c.greedy_action()),
            current_trajectory: self.trajectory.clone(),
            warnings: self.coach.as_ref().map_or_else(Vec::new, |c| c.warnings().to_vec()),
            scene: Scene {
                surface_height: cfg.sim.surface_height(),
                goal_container_pose: cfg.sim.goal_container_pose,
                goal_container_half_width: cfg.sim.goal_container_half_width,
                pour_pose: self.pipeline.pour_pose(),
            },
        }
    }

    fn publish(&self) {
        if let Some(tx) = &self.snapshot {
            tx.send_replace(Arc::new(self.snapshot()));
        }
    }

    fn ack(&self, changed: bool) -> Ack {
        Ack {
            phase: self.phase,
            changed,
            warnings: self.coach.as_ref().map_or_else(Vec::new, |c| c.warnings().to_vec()),
        }
    }

    /// Tunes the scoop stroke: demonstration, inference, planning and
    /// self-evaluation.
    fn self_evaluate(&mut self) -> Result<(), ErrorBody> {
        self.phase = Phase::SelfEval;
        self.publish();
        let p = &self.pipeline;
        let result = p
            .generate_demo()
            .and_then(|g| p.infer(&g.demo))
            .and_then(|policy| p.plan(&policy))
            .and_then(|plan| p.self_evaluate(&plan));
        match result {
            Ok(tuned) => {
                self.trajectory = Some(tuned.trajectory);
                Ok(())
            }
            Err(e) => {
                self.phase = Phase::Idle;
                self.publish();
                Err(e.into())
            }
        }
    }

    fn submit(&mut self, input: CoachInput) -> Result<Ack, ErrorBody> {
        if self.coach.is_some() {
            return self.feedback(input);
        }
        // Reject bad input before paying for self-evaluation.
        input.validate(self.pipeline.config().sim.scoop_capacity)?;
        if self.phase == Phase::Idle {
            self.self_evaluate()?;
        }
        let session = self.pipeline.coach_session(input).inspect_err(|_| {
            self.phase = Phase::Idle;
            self.publish();
        })?;
        self.coach = Some(session);
        self.phase = Phase::Coaching;
        self.publish();
        Ok(self.ack(true))
    }

    fn step_once(&mut self) -> Result<EpisodeReport, ErrorBody> {
        let coach = self.coach.as_mut().ok_or_else(no_coach_input)?;
        let report = self.pipeline.coach_step(coach)?;
        self.publish();
        let _ = self.events.send(Event::EpisodeReport { report });
        Ok(report)
    }

    fn step(&mut self, key: Option<String>) -> Result<EpisodeReport, ErrorBody> {
        if let Some(r) = key.as_ref().and_then(|k| self.replies.get(k)) {
            return Ok(*r);
        }
        let report = self.step_once()?;
        if let Some(k) = key {
            self.replies.insert(k, report);
        }
        Ok(report)
    }

    /// Runs the episodes and returns the final event, or `None` if the
    /// reader went away.
    fn run_episodes(&mut self, episodes: Option<usize>, tx: &mpsc::Sender<Event>) -> Option<Event> {
        let n = episodes.unwrap_or(self.pipeline.config().rl.max_episodes);
        for _ in 0..n {
            match self.step_once() {
                Ok(report) => {
                    if tx.blocking_send(Event::EpisodeReport { report }).is_err() {
                        return None;
                    }
                }
                Err(e) => return Some(Event::Error(e)),
            }
        }
        let greedy_action = self.coach.as_ref().map_or(0.0, |c| c.greedy_action());
        Some(Event::RunComplete {
            episodes: n,
            greedy_action,
        })
    }

    fn feedback(&mut self, input: CoachInput) -> Result<Ack, ErrorBody> {
        let capacity = self.pipeline.config().sim.scoop_capacity;
        let coach = self.coach.as_mut().ok_or_else(no_coach_input)?;
        let changed = coach.feedback(input, capacity, capacity)?;
        if changed {
            let episode = coach.bandit().episode;
            self.boundaries.push(Boundary { episode, input });
            self.publish();
            let _ = self.events.send(Event::PhaseBoundary { episode, input });
        }
        Ok(self.ack(changed))
    }
}
