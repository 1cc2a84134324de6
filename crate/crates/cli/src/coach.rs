//! `scoopcoach coach`: headless when goal, DOF and direction come as flags,
//! otherwise prompts for them and then for feedback after each run.

use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use clap::Args;

use scoopcoach_client::wire::{ErrorCode, Event};
use scoopcoach_client::{Client, ClientError};
use scoopcoach_core::learn::{CoachInput, CoachSession, Direction, Dof, EpisodeReport};
use scoopcoach_core::pipeline::{episode_log, Pipeline};
use scoopcoach_core::RunConfig;

use crate::{artifact, CliError};

#[derive(Args)]
pub struct CoachArgs {
    /// Material to transfer, grams.
    #[arg(long)]
    goal_grams: Option<f64>,
    /// Coached degree of freedom: x, y, z, roll, pitch or yaw.
    #[arg(long)]
    dof: Option<Dof>,
    /// up/positive or down/negative.
    #[arg(long)]
    direction: Option<Direction>,
    /// Episodes per run. Default `rl.max_episodes`.
    #[arg(long)]
    episodes: Option<usize>,
    /// Coach through a running `scoopcoach serve` instead of in process.
    #[arg(long)]
    server: Option<String>,
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e.api() {
            Some(body) if body.code == ErrorCode::InvalidConfig => CliError::Config {
                key: body.key.clone().unwrap_or_default(),
                message: body.message.clone(),
            },
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

struct Prompter {
    lines: std::io::Lines<std::io::StdinLock<'static>>,
}

impl Prompter {
    fn new() -> Self {
        Prompter {
            lines: std::io::stdin().lock().lines(),
        }
    }

    /// `None` at end of input.
    fn line(&mut self, prompt: &str) -> Result<Option<String>, CliError> {
        eprint!("{prompt}: ");
        match self.lines.next() {
            None => {
                eprintln!();
                Ok(None)
            }
            Some(line) => line
                .map(|l| Some(l.trim().to_string()))
                .map_err(|e| CliError::Runtime(format!("stdin: {e}"))),
        }
    }

    fn ask<T: FromStr>(&mut self, prompt: &str, flag: &str, default: Option<T>) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        loop {
            let Some(line) = self.line(prompt)? else {
                return Err(CliError::Usage(format!("{flag} not given and standard input closed")));
            };
            if line.is_empty() {
                if let Some(d) = default {
                    return Ok(d);
                }
                continue;
            }
            match line.parse() {
                Ok(v) => return Ok(v),
                Err(e) => eprintln!("{e}"),
            }
        }
    }
}

/// Where episodes run.
enum Backend<'a> {
    Local {
        pipeline: &'a Pipeline,
        session: CoachSession,
    },
    Remote {
        rt: tokio::runtime::Runtime,
        session: scoopcoach_client::Session,
    },
}

fn print_report(r: &EpisodeReport) {
    eprintln!(
        "episode {:>3}  action {:+.4}  transferred {:>7.2} g  reward {:+.4}  epsilon {:.4}",
        r.episode, r.action, r.transferred_grams, r.reward, r.epsilon
    );
}

impl<'a> Backend<'a> {
    fn local(pipeline: &'a Pipeline, input: CoachInput) -> Result<Self, CliError> {
        let session = pipeline.coach_session(input)?;
        for w in session.warnings() {
            eprintln!("warning: {w}");
        }
        Ok(Backend::Local { pipeline, session })
    }

    fn remote(url: &str, config: &RunConfig, input: CoachInput) -> Result<Self, CliError> {
        let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
        let session = rt.block_on(async {
            let client = Client::new(url);
            let session = client
                .create_session(Some(config.to_toml_string()), Some(config.seed))
                .await?;
            if session.config_hash != config.hash() {
                return Err(CliError::Runtime(format!(
                    "server resolved config_hash={}, expected {}",
                    session.config_hash,
                    config.hash()
                )));
            }
            eprintln!("session {} on {url}; self-evaluating", session.id);
            let ack = session.submit(input).await?;
            for w in ack.warnings {
                eprintln!("warning: {w}");
            }
            Ok(session)
        })?;
        Ok(Backend::Remote { rt, session })
    }

    /// Runs `n` episodes and returns the greedy action.
    fn run(&mut self, n: usize) -> Result<f64, CliError> {
        match self {
            Backend::Local { pipeline, session } => {
                for _ in 0..n {
                    print_report(&pipeline.coach_step(session)?);
                }
                Ok(session.greedy_action())
            }
            Backend::Remote { rt, session } => {
                let events = rt.block_on(session.run(Some(n), |e| {
                    if let Event::EpisodeReport { report } = e {
                        print_report(report);
                    }
                }))?;
                match events.last() {
                    Some(Event::RunComplete { greedy_action, .. }) => Ok(*greedy_action),
                    other => Err(CliError::Runtime(format!("run ended without RunComplete: {other:?}"))),
                }
            }
        }
    }

    fn feedback(&mut self, input: CoachInput, capacity: f64) -> Result<bool, CliError> {
        match self {
            Backend::Local { session, .. } => Ok(session.feedback(input, capacity, capacity)?),
            Backend::Remote { rt, session } => Ok(rt.block_on(session.feedback(input))?.changed),
        }
    }

    fn log(&self, config: &RunConfig) -> Result<String, CliError> {
        match self {
            Backend::Local { session, .. } => Ok(episode_log(config, session.history())),
            Backend::Remote { rt, session } => Ok(rt.block_on(session.log())?),
        }
    }
}

pub fn run(config: &RunConfig, args: &CoachArgs, out: Option<&Path>) -> Result<(), CliError> {
    let mut prompt = Prompter::new();
    let interactive = args.goal_grams.is_none() || args.dof.is_none() || args.direction.is_none();
    let goal_grams = match args.goal_grams {
        Some(g) => g,
        None => prompt.ask("goal grams", "--goal-grams", None)?,
    };
    let dof = match args.dof {
        Some(d) => d,
        None => prompt.ask("dof (x y z roll pitch yaw) [pitch]", "--dof", Some(Dof::Pitch))?,
    };
    let direction = match args.direction {
        Some(d) => d,
        None => prompt.ask("direction (up/down) [down]", "--direction", Some(Direction::Negative))?,
    };
    let mut input = CoachInput {
        goal_grams,
        dof,
        direction,
    };

    let pipeline = Pipeline::new(config.clone())?;
    let mut backend = match &args.server {
        Some(url) => Backend::remote(url, config, input)?,
        None => Backend::local(&pipeline, input)?,
    };
    let episodes = args.episodes.unwrap_or(config.rl.max_episodes);
    let capacity = config.sim.scoop_capacity;
    let report = |backend: &mut Backend, input: &CoachInput| -> Result<(), CliError> {
        let greedy = backend.run(episodes)?;
        let grams = pipeline.coach_transfer(input, greedy)? * 1000.0;
        eprintln!("greedy {dof} {greedy:+.4} transfers {grams:.2} g (goal {} g)", input.goal_grams);
        Ok(())
    };
    report(&mut backend, &input)?;
    while interactive {
        let Some(line) = prompt.line("new goal grams, blank to finish")? else {
            break;
        };
        if line.is_empty() {
            break;
        }
        let goal_grams: f64 = match line.parse() {
            Ok(g) => g,
            Err(e) => {
                eprintln!("{e}");
                continue;
            }
        };
        let direction = prompt.ask(
            &format!("direction (up/down) [{}]", input.direction),
            "--direction",
            Some(input.direction),
        )?;
        let next = CoachInput {
            goal_grams,
            direction,
            ..input
        };
        match backend.feedback(next, capacity) {
            Ok(true) => {
                input = next;
                report(&mut backend, &input)?;
            }
            Ok(false) => eprintln!("unchanged"),
            Err(e) => eprintln!("{}", e.line()),
        }
    }
    artifact::write(out, &backend.log(config)?)
}
