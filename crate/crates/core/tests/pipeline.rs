use std::time::Instant;

use scoopcoach_core::control::SkillClass;
use scoopcoach_core::learn::{CoachInput, Direction, Dof};
use scoopcoach_core::pipeline::Pipeline;
use scoopcoach_core::{Error, RunConfig};

fn input(goal: f64) -> CoachInput {
    CoachInput {
        goal_grams: goal,
        dof: Dof::Pitch,
        direction: Direction::Negative,
    }
}

fn pipeline() -> Pipeline {
    Pipeline::new(RunConfig::default()).unwrap()
}

#[test]
fn coaching_reaches_goal_within_thirty_episodes() {
    let start = Instant::now();
    let p = pipeline();
    let session = p.coach(input(100.0), Some(30)).unwrap();
    assert_eq!(session.history().len(), 30);
    let grams = p.coach_transfer(&input(100.0), session.greedy_action()).unwrap() * 1000.0;
    assert!((grams - 100.0).abs() <= 10.0, "{grams} g");
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn greedy_matches_enumerated_argmin_once_all_actions_pulled() {
    let p = pipeline();
    let mut session = p.coach_session(input(100.0)).unwrap();
    let actions = session.bandit().actions.clone();
    assert!(actions.len() <= 19);
    while !session.bandit().all_pulled() {
        p.coach_step(&mut session).unwrap();
    }
    let oracle = enumerate_argmin(&p, &input(100.0), &actions);
    assert_eq!(session.greedy_action(), actions[oracle]);
}

fn enumerate_argmin(p: &Pipeline, input: &CoachInput, actions: &[f64]) -> usize {
    let goal = input.goal_grams / 1000.0;
    let mut best = 0;
    let mut best_err = f64::INFINITY;
    for (i, &a) in actions.iter().enumerate() {
        let err = (p.coach_transfer(input, a).unwrap() - goal).abs();
        if err < best_err {
            best = i;
            best_err = err;
        }
    }
    best
}

#[test]
fn pour_model_maps_minus_fifty_degrees_to_one_hundred_grams() {
    let p = pipeline();
    let grams = p.coach_transfer(&input(100.0), (-50.0f64).to_radians()).unwrap() * 1000.0;
    assert!((grams - 100.0).abs() < 5.0, "{grams}");
    let level = p.coach_transfer(&input(100.0), 0.0).unwrap();
    assert_eq!(level, 0.0);
}

#[test]
fn feedback_restarts_enumeration_for_new_goal() {
    let p = pipeline();
    let cap = p.config().sim.scoop_capacity;
    let mut session = p.coach_session(input(100.0)).unwrap();
    for _ in 0..25 {
        p.coach_step(&mut session).unwrap();
    }
    assert!(session.feedback(input(150.0), cap, cap).unwrap());
    assert_eq!(session.boundaries(), &[25]);
    assert!(!session.bandit().all_pulled());
    let actions = session.bandit().actions.clone();
    while !session.bandit().all_pulled() {
        p.coach_step(&mut session).unwrap();
    }
    assert_eq!(session.history()[25].episode, 25);
    let oracle = enumerate_argmin(&p, &input(150.0), &actions);
    assert_eq!(session.greedy_action(), actions[oracle]);
    let grams = p.coach_transfer(&input(150.0), session.greedy_action()).unwrap() * 1000.0;
    assert!((grams - 150.0).abs() <= 10.0, "{grams}");
}

#[test]
fn unchanged_feedback_is_a_no_op() {
    let p = pipeline();
    let cap = p.config().sim.scoop_capacity;
    let mut session = p.coach_session(input(100.0)).unwrap();
    p.coach_step(&mut session).unwrap();
    let before = session.bandit().clone();
    assert!(!session.feedback(input(100.0), cap, cap).unwrap());
    assert_eq!(session.bandit(), &before);
    assert!(session.boundaries().is_empty());
}

#[test]
fn direction_with_no_room_is_an_empty_action_set() {
    let mut cfg = RunConfig::default();
    // Pitch already at its upper limit: no positive actions remain.
    cfg.coach.bounds.limits[4] = [-1.5, 0.0];
    let p = Pipeline::new(cfg).unwrap();
    let err = p
        .coach_session(CoachInput {
            direction: Direction::Positive,
            ..input(100.0)
        })
        .unwrap_err();
    assert!(matches!(err, Error::EmptyActionSet), "{err:?}");
}

#[test]
fn full_run_is_consistent_and_deterministic() {
    let p = pipeline();
    let a = p.run_all(input(100.0)).unwrap();
    let b = p.run_all(input(100.0)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

    use SkillClass::*;
    assert_eq!(a.demo_labels, vec![Approach, Scoop, Lift, Transport, Unscoop]);
    assert_eq!(a.policy, a.demo_labels);
    assert!(a.execution.iter().all(|e| e.reached_goal));
    assert!(a.planned_work <= a.demo_effort);
    assert!(a.tuned_effort <= a.demo_effort);
    assert!(a.tuned_mass >= p.config().sim.mass_min);
    assert!((a.greedy_grams - 100.0).abs() <= 10.0);
    assert_eq!(a.config_hash, p.config().hash());
}
