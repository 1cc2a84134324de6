//! One-shot scooping skill learning on a simulated granular bed.
//!
//! The crate covers the whole offline pipeline: a synthetic demonstration is
//! segmented at contact changes and classified into a priori skills, the scoop
//! stroke is re-planned as a least-work path through the media using resistive
//! force theory, a tabular Q-learner tunes blade pitch around that path, and an
//! ε-greedy bandit driven by coach input learns how far to tilt when pouring.

pub mod config;
pub mod control;
pub mod demo;
pub mod error;
pub mod geom;
pub mod learn;
pub mod media;
pub mod pipeline;
pub mod planner;
pub mod sim;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use geom::{normalize_angle, step_indicator, Pose, Trajectory, Twist};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    DemoNoise = 1,
    SelfEval = 2,
    Coaching = 3,
    Sensor = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
