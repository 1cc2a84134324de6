//! `scoopcoach`: runs the scooping pipeline one stage at a time. Each stage
//! reads the previous stage's artifact and writes its own; every artifact
//! starts with a `# scoopcoach config_hash=... seed=...` line.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 runtime.

mod artifact;
mod coach;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scoopcoach_core::control::PolicyOutcome;
use scoopcoach_core::demo::{Demo, Policy};
use scoopcoach_core::learn::SelfEvalResult;
use scoopcoach_core::media::work_profile;
use scoopcoach_core::pipeline::{Pipeline, ScoopPlan};
use scoopcoach_core::{Pose, RunConfig, Trajectory};

#[derive(Parser)]
#[command(name = "scoopcoach", version, about = "Learn, tune and coach a granular scooping skill")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration, TOML. Built-in defaults when absent.
    #[arg(long, global = true, env = "SCOOPCOACH_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output artifact; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scooping demonstration (NDJSON frames).
    GenDemo,
    /// Segment and classify a demonstration into a skill policy.
    Infer {
        #[arg(long)]
        demo: PathBuf,
    },
    /// Plan the least-effort scoop stroke for a policy.
    Plan {
        #[arg(long)]
        policy: PathBuf,
        /// Demonstrated and planned paths, CSV. Default `<out stem>.path.csv`.
        #[arg(long)]
        path_csv: Option<PathBuf>,
        /// Work per optimizer iteration, CSV. Default `<out stem>.work.csv`.
        #[arg(long)]
        work_log: Option<PathBuf>,
        /// Media force and cumulative work along the planned path, CSV.
        /// Default `<out stem>.profile.csv`.
        #[arg(long)]
        profile_csv: Option<PathBuf>,
    },
    /// Tune the planned stroke by self-evaluation.
    Selfeval {
        #[arg(long)]
        plan: PathBuf,
        /// Per-episode log, CSV. Default `<out stem>.episodes.csv`.
        #[arg(long)]
        episodes_csv: Option<PathBuf>,
    },
    /// Replay a policy in simulation and write its trace as CSV.
    Execute {
        #[arg(long)]
        policy: PathBuf,
        /// Self-evaluation result whose stroke replaces the demonstrated scoop.
        #[arg(long)]
        tuned: Option<PathBuf>,
    },
    /// Coach the pour; prompts for anything not given as a flag.
    Coach(coach::CoachArgs),
    /// Serve coaching sessions over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 1)]
        max_sessions: usize,
    },
    /// Render CSV and episode logs as SVG plots into the `--out` directory.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config { key: String, message: String },
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config { .. } => 3,
            CliError::Runtime(_) => 4,
        }
    }

    /// `error kind=<kind> [key=<key>] message=<json string>`
    fn line(&self) -> String {
        let quote = |m: &str| serde_json::to_string(m).expect("string serializes");
        match self {
            CliError::Usage(m) => format!("error kind=usage message={}", quote(m)),
            CliError::Config { key, message } => {
                format!("error kind=config key={key} message={}", quote(message))
            }
            CliError::Runtime(m) => format!("error kind=runtime message={}", quote(m)),
        }
    }
}

impl From<scoopcoach_core::Error> for CliError {
    fn from(e: scoopcoach_core::Error) -> Self {
        match e {
            scoopcoach_core::Error::Config { key, message } => CliError::Config { key, message },
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn pose_cells(p: &Pose) -> [f64; 6] {
    [p.x(), p.y(), p.z(), p.roll(), p.pitch(), p.yaw()]
}

fn path_rows(label: f64, t: &Trajectory) -> impl Iterator<Item = Vec<f64>> + '_ {
    t.samples().iter().map(move |s| {
        let mut row = vec![label, s.time];
        row.extend(pose_cells(&s.pose));
        row
    })
}

fn gen_demo(config: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let generated = Pipeline::new(config.clone())?.generate_demo()?;
    artifact::write_stamped(config, out, &generated.demo.to_ndjson())
}

fn infer(config: &RunConfig, demo: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let body = artifact::read_body(config, demo)?;
    let demo = Demo::from_ndjson(&body)?;
    let policy = Pipeline::new(config.clone())?.infer(&demo)?;
    let classes: Vec<String> = policy.classes().iter().map(|c| c.to_string()).collect();
    eprintln!("policy: {}", classes.join(" "));
    artifact::write_stamped(config, out, &artifact::json_line(&policy))
}

fn plan(
    config: &RunConfig,
    policy: &Path,
    out: Option<&Path>,
    side: [Option<PathBuf>; 3],
) -> Result<(), CliError> {
    let policy: Policy = artifact::read_json(config, policy)?;
    let pipeline = Pipeline::new(config.clone())?;
    let plan = pipeline.plan(&policy)?;
    eprintln!(
        "planned work {:.6} J in {} iterations (demonstrated {:.6} J)",
        plan.path.work, plan.path.iterations, plan.demo_effort
    );
    artifact::write_stamped(config, out, &artifact::json_line(&plan))?;

    let [path_csv, work_log, profile_csv] = side;
    if let Some(p) = artifact::side_path(path_csv, out, "path.csv") {
        // path 0 is the demonstrated stroke, 1 the planned one
        let rows = path_rows(0.0, &plan.demo_trajectory).chain(path_rows(1.0, &plan.path.trajectory));
        let cols = ["path", "time", "x", "y", "z", "roll", "pitch", "yaw"];
        artifact::write_stamped(config, Some(&p), &artifact::csv(&cols, rows))?;
    }
    if let Some(p) = artifact::side_path(work_log, out, "work.csv") {
        let rows = plan
            .path
            .history
            .iter()
            .map(|h| [h.iteration as f64, h.work, h.grad_norm.unwrap_or(f64::NAN)]);
        artifact::write_stamped(config, Some(&p), &artifact::csv(&["iteration", "work", "grad_norm"], rows))?;
    }
    if let Some(p) = artifact::side_path(profile_csv, out, "profile.csv") {
        let sim = pipeline.simulator();
        let rows = work_profile(&plan.path.trajectory, sim.blade(), sim.media()).into_iter().map(|r| {
            let mut row = vec![r.time];
            row.extend(pose_cells(&r.pose));
            row.extend([r.depth, r.force.x, r.force.y, r.force.z, r.cumulative_work]);
            row
        });
        let cols = [
            "time", "x", "y", "z", "roll", "pitch", "yaw", "depth", "fx", "fy", "fz", "cumulative_work",
        ];
        artifact::write_stamped(config, Some(&p), &artifact::csv(&cols, rows))?;
    }
    Ok(())
}

fn selfeval(config: &RunConfig, plan: &Path, out: Option<&Path>, episodes_csv: Option<PathBuf>) -> Result<(), CliError> {
    let plan: ScoopPlan = artifact::read_json(config, plan)?;
    let result = Pipeline::new(config.clone())?.self_evaluate(&plan)?;
    eprintln!(
        "tuned effort {:.6} J (demonstrated {:.6} J), mass {:.1} g, success {}",
        result.effort,
        plan.demo_effort,
        result.mass * 1000.0,
        result.success
    );
    if result.fell_back {
        eprintln!("warning: no self-evaluation episode succeeded; offsets fell back to zero");
    }
    artifact::write_stamped(config, out, &artifact::json_line(&result))?;
    if let Some(p) = artifact::side_path(episodes_csv, out, "episodes.csv") {
        let rows = result.episodes.iter().map(|e| {
            [e.episode as f64, e.reward, e.effort, e.mass, f64::from(u8::from(e.success)), e.epsilon]
        });
        let cols = ["episode", "reward", "effort", "mass", "success", "epsilon"];
        artifact::write_stamped(config, Some(&p), &artifact::csv(&cols, rows))?;
    }
    Ok(())
}

fn trace_csv(outcome: &PolicyOutcome) -> String {
    let cols = [
        "skill", "time", "x", "y", "z", "roll", "pitch", "yaw", "mass_in_scoop", "mass_in_bed",
        "mass_transferred", "fx", "fy", "fz", "tx", "ty", "tz",
    ];
    let rows = outcome.outcomes.iter().flat_map(|o| {
        o.trace.iter().map(move |r| {
            let mut row = vec![o.class.to_string(), r.time.to_string()];
            let nums = pose_cells(&r.pose).into_iter().chain([
                r.mass_in_scoop,
                r.mass_in_bed,
                r.mass_transferred,
                r.force.x,
                r.force.y,
                r.force.z,
                r.torque.x,
                r.torque.y,
                r.torque.z,
            ]);
            row.extend(nums.map(|v| v.to_string()));
            row
        })
    });
    artifact::csv(&cols, rows)
}

fn execute(config: &RunConfig, policy: &Path, tuned: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let policy: Policy = artifact::read_json(config, policy)?;
    let tuned: Option<SelfEvalResult> = tuned.map(|p| artifact::read_json(config, p)).transpose()?;
    let outcome = Pipeline::new(config.clone())?.execute(&policy, tuned.as_ref().map(|t| &t.trajectory))?;
    for o in &outcome.outcomes {
        eprintln!(
            "{:<14} goal {:<5} effort {:.6} J, in scoop {:.1} g, transferred {:.1} g",
            o.class.to_string(),
            o.reached_goal,
            o.effort,
            o.final_state.mass_in_scoop * 1000.0,
            o.transferred * 1000.0
        );
    }
    artifact::write_stamped(config, out, &trace_csv(&outcome))?;
    match outcome.halted_at {
        None => Ok(()),
        Some(i) => Err(CliError::Runtime(format!(
            "policy halted at step {i} ({}): {}",
            outcome.outcomes[i].class,
            outcome.halt_reason.as_deref().unwrap_or("goal not reached")
        ))),
    }
}

fn serve(config: RunConfig, host: &str, port: u16, max_sessions: usize) -> Result<(), CliError> {
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| CliError::Runtime(format!("bind {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("{}", config.header());
        println!("listening on http://{addr}");
        let service = scoopcoach_service::ServiceConfig {
            base: config,
            max_sessions,
        };
        scoopcoach_service::serve(listener, service)
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli.common.out.as_deref();
    if let Command::Report { inputs } = &cli.command {
        let dir = out.unwrap_or(Path::new("."));
        for input in inputs {
            println!("{}", report::render(input, dir)?.display());
        }
        return Ok(());
    }
    let config = load_config(&cli.common)?;
    match cli.command {
        Command::GenDemo => gen_demo(&config, out),
        Command::Infer { demo } => infer(&config, &demo, out),
        Command::Plan {
            policy,
            path_csv,
            work_log,
            profile_csv,
        } => plan(&config, &policy, out, [path_csv, work_log, profile_csv]),
        Command::Selfeval { plan, episodes_csv } => selfeval(&config, &plan, out, episodes_csv),
        Command::Execute { policy, tuned } => execute(&config, &policy, tuned.as_deref(), out),
        Command::Coach(args) => coach::run(&config, &args, out),
        Command::Serve {
            port,
            host,
            max_sessions,
        } => serve(config, &host, port, max_sessions),
        Command::Report { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code())
        }
    }
}
