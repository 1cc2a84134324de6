use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scoopcoach_core::media::{path_work, FlatBlade, MediaParams};
use scoopcoach_core::planner::{work_gradient, PathProblem, Planner, PlannerParams};
use scoopcoach_core::Pose;

fn media() -> MediaParams {
    MediaParams::default()
}

fn random_problem(rng: &mut ChaCha8Rng, surface: f64) -> PathProblem {
    let x0 = rng.random_range(0.0..0.1);
    let len = rng.random_range(0.08..0.2);
    let d1 = rng.random_range(0.01..0.05);
    PathProblem {
        start: Pose::planar(x0, surface, rng.random_range(-0.5..-0.2)),
        end: Pose::planar(x0 + len, surface - d1, rng.random_range(-0.4..-0.1)),
        n_waypoints: rng.random_range(4..8),
        pitch_bounds: [-0.6, 0.0],
        depth_max: 0.06,
        optimize_depth: true,
        duration: 2.0,
    }
}

#[test]
fn twenty_random_problems_never_lose_to_the_initializer() {
    let m = media();
    let blade = FlatBlade::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let problem = random_problem(&mut rng, m.surface_height);
        let planner = Planner::new(problem, &m, &blade, PlannerParams::default()).unwrap();
        let straight = planner.objective(&planner.initializer());
        let sol = planner.solve().unwrap();
        assert!(sol.work <= straight, "{} > {}", sol.work, straight);
        assert!(sol.work >= 0.0);
        assert_eq!(sol.trajectory.first(), &problem.start);
        assert_eq!(sol.trajectory.last(), &problem.end);
        assert!(sol.history.windows(2).all(|w| w[1].work <= w[0].work));
    }
}

#[test]
fn gradient_is_consistent_under_step_refinement() {
    let m = media();
    let blade = FlatBlade::default();
    let params = PlannerParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 10 {
        let problem = random_problem(&mut rng, m.surface_height);
        let planner = Planner::new(problem, &m, &blade, params).unwrap();
        let x0 = planner.initializer();
        let x = planner.project(&DVector::from_fn(x0.len(), |i, _| x0[i] + rng.random_range(-0.05..0.05) * 0.2));
        let g = work_gradient(&problem, &x, &m, &blade, &params).unwrap();
        let fine = planner.gradient_with_step(&x, params.fd_step / 10.0);
        let scale = g.norm().max(1e-12);
        if g.norm() == 0.0 {
            continue;
        }
        assert!((&g - &fine).norm() / scale <= 1e-4, "{g} vs {fine}");
        checked += 1;
    }
}

#[test]
fn gradient_rejects_wrong_dimension() {
    let m = media();
    let blade = FlatBlade::default();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let problem = random_problem(&mut rng, m.surface_height);
    let x = DVector::zeros(problem.dimension() + 1);
    assert!(work_gradient(&problem, &x, &m, &blade, &PlannerParams::default()).is_err());
}

#[test]
fn doubling_samples_changes_solution_work_by_under_one_percent() {
    let m = media();
    let blade = FlatBlade::default();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..5 {
        let problem = random_problem(&mut rng, m.surface_height);
        let params = PlannerParams::default();
        let sol = Planner::new(problem, &m, &blade, params).unwrap().solve().unwrap();
        let twice = PlannerParams {
            samples_per_segment: 2 * params.samples_per_segment,
            ..params
        };
        let planner = Planner::new(problem, &m, &blade, twice).unwrap();
        let x = decision_vector(&problem, &sol.waypoints, m.surface_height);
        let refined = planner.objective(&x);
        assert!((refined - sol.work).abs() / sol.work < 0.01, "{} vs {}", refined, sol.work);
    }
}

fn decision_vector(problem: &PathProblem, waypoints: &[Pose], surface: f64) -> DVector<f64> {
    let interior = &waypoints[1..waypoints.len() - 1];
    let mut v: Vec<f64> = interior.iter().map(|p| p.pitch()).collect();
    if problem.optimize_depth {
        v.extend(interior.iter().map(|p| surface - p.z()));
    }
    assert_eq!(v.len(), problem.dimension());
    DVector::from_vec(v)
}

#[test]
fn matches_exhaustive_search_over_pitch_levels() {
    let m = media();
    let blade = FlatBlade::default();
    let s = m.surface_height;
    let problem = PathProblem {
        start: Pose::planar(0.0, s, -0.4),
        end: Pose::planar(0.15, s - 0.03, -0.2),
        n_waypoints: 5,
        pitch_bounds: [-0.6, 0.0],
        depth_max: 0.06,
        optimize_depth: false,
        duration: 2.0,
    };
    let planner = Planner::new(problem, &m, &blade, PlannerParams::default()).unwrap();
    let sol = planner.solve().unwrap();

    let levels: Vec<f64> = (0..5).map(|i| -0.6 + 0.15 * i as f64).collect();
    let mut best = f64::INFINITY;
    for a in &levels {
        for b in &levels {
            for c in &levels {
                let x = DVector::from_vec(vec![*a, *b, *c]);
                best = best.min(path_work(&planner.trajectory(&x), &blade, &m));
            }
        }
    }
    assert!(sol.work <= 1.05 * best, "{} vs brute force {}", sol.work, best);
}

#[test]
fn blade_width_rows_do_not_change_planar_work() {
    let m = media();
    let s = m.surface_height;
    let problem = PathProblem {
        start: Pose::planar(0.0, s, -0.4),
        end: Pose::planar(0.15, s - 0.03, -0.2),
        n_waypoints: 6,
        pitch_bounds: [-0.6, 0.0],
        depth_max: 0.06,
        optimize_depth: true,
        duration: 2.0,
    };
    let coarse = FlatBlade::default();
    let grid = FlatBlade {
        n_width: 10,
        ..coarse
    };
    let a = Planner::new(problem, &m, &coarse, PlannerParams::default()).unwrap();
    let b = Planner::new(problem, &m, &grid, PlannerParams::default()).unwrap();
    let x = a.initializer();
    let (wa, wb) = (a.objective(&x), b.objective(&x));
    assert!((wa - wb).abs() <= 1e-12 * wa.abs().max(1.0), "{wa} vs {wb}");
}
