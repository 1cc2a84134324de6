//! Acceptance run: one PASS/FAIL line per criterion with its tolerance and
//! wall time. Exits nonzero when any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scoopcoach_core::control::{impedance_step, kinematic_step, ControllerGains, SkillClass};
use scoopcoach_core::demo::{generate_demo, infer_policy, DemoScript, DEFAULT_V_EPS};
use scoopcoach_core::learn::{ActionGrid, CoachInput, Direction, Dof};
use scoopcoach_core::media::{element_force, f_perp, path_work, FlatBlade, MediaParams, PlateElement};
use scoopcoach_core::pipeline::Pipeline;
use scoopcoach_core::planner::{work_gradient, PathProblem, Planner, PlannerParams};
use scoopcoach_core::sim::{generalized_wrench, pour_fraction, ArmModel, Command, SimParams, Simulator};
use scoopcoach_core::{Pose, RunConfig, Trajectory};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn coach_input(goal: f64) -> CoachInput {
    CoachInput {
        goal_grams: goal,
        dof: Dof::Pitch,
        direction: Direction::Negative,
    }
}

fn pipeline() -> Result<Pipeline, String> {
    Pipeline::new(RunConfig::default()).map_err(|e| e.to_string())
}

fn coaching_convergence() -> Check {
    let p = pipeline()?;
    let input = coach_input(100.0);
    let session = p.coach(input, Some(30)).map_err(|e| e.to_string())?;
    let grams = p.coach_transfer(&input, session.greedy_action()).map_err(|e| e.to_string())? * 1000.0;
    ensure((grams - 100.0).abs() <= 10.0, || format!("greedy transfers {grams:.2} g"))?;
    Ok(format!(
        "greedy {:.1} deg -> {grams:.2} g after 30 episodes",
        session.greedy_action().to_degrees()
    ))
}

fn coaching_oracle() -> Check {
    let p = pipeline()?;
    let input = coach_input(100.0);
    let mut session = p.coach_session(input).map_err(|e| e.to_string())?;
    let actions = session.bandit().actions.clone();
    ensure(actions.len() <= 19, || format!("{} actions", actions.len()))?;
    while !session.bandit().all_pulled() {
        p.coach_step(&mut session).map_err(|e| e.to_string())?;
    }
    let mut best = (0, f64::INFINITY);
    for (i, &a) in actions.iter().enumerate() {
        let err = (p.coach_transfer(&input, a).map_err(|e| e.to_string())? - 0.1).abs();
        if err < best.1 {
            best = (i, err);
        }
    }
    ensure(session.greedy_action() == actions[best.0], || {
        format!(
            "greedy {:.1} deg, argmin {:.1} deg",
            session.greedy_action().to_degrees(),
            actions[best.0].to_degrees()
        )
    })?;
    Ok(format!(
        "{} actions, all pulled after {} episodes",
        actions.len(),
        session.history().len()
    ))
}

fn self_eval_oracle() -> Check {
    let p = pipeline()?;
    let err = |e: scoopcoach_core::Error| e.to_string();
    let demo = p.generate_demo().map_err(err)?;
    let policy = p.infer(&demo.demo).map_err(err)?;
    let plan = p.plan(&policy).map_err(err)?;
    ensure(plan.path.interior_count() == 5, || "expected 5 interior waypoints".into())?;
    let tuned = p.self_evaluate(&plan).map_err(err)?;
    let grid = ActionGrid::new(5, &p.config().rl.offsets_deg).map_err(err)?;
    let mass_min = p.config().sim.mass_min;
    let n = grid.offsets.len();
    let mut best = f64::INFINITY;
    for code in 0..n.pow(5) {
        let actions: Vec<usize> = (0..5).map(|k| code / n.pow(k) % n).collect();
        let traj = plan.path.with_pitch_offsets(&grid.offsets_of(&actions)).map_err(err)?;
        let r = p.simulator().replay(&traj);
        if r.mass >= mass_min {
            best = best.min(r.effort);
        }
    }
    ensure(tuned.success, || "tuned path misses mass_min".into())?;
    ensure(tuned.effort <= 1.05 * best, || {
        format!("greedy {:.4} J vs exhaustive {best:.4} J", tuned.effort)
    })?;
    ensure(tuned.effort <= plan.demo_effort, || {
        format!("tuned {:.4} J above demo {:.4} J", tuned.effort, plan.demo_effort)
    })?;
    Ok(format!(
        "greedy {:.4} J, exhaustive {best:.4} J over {} assignments, demo {:.4} J",
        tuned.effort,
        n.pow(5),
        plan.demo_effort
    ))
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

fn planner_checks() -> Check {
    let m = MediaParams::default();
    let blade = FlatBlade::default();
    let params = PlannerParams::default();
    let err = |e: scoopcoach_core::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst_grad: f64 = 0.0;
    let mut worst_refine: f64 = 0.0;
    for _ in 0..20 {
        let problem = random_problem(&mut rng, m.surface_height);
        let planner = Planner::new(problem, &m, &blade, params).map_err(err)?;
        let x0 = planner.initializer();
        let straight = planner.objective(&x0);
        let sol = planner.solve().map_err(err)?;
        ensure(sol.work <= straight, || format!("{} > initializer {}", sol.work, straight))?;

        let g = work_gradient(&problem, &x0, &m, &blade, &params).map_err(err)?;
        let fine = planner.gradient_with_step(&x0, params.fd_step / 10.0);
        if g.norm() > 0.0 {
            worst_grad = worst_grad.max((&g - &fine).norm() / g.norm());
        }

        let twice = PlannerParams {
            samples_per_segment: 2 * params.samples_per_segment,
            ..params
        };
        let refined = Planner::new(problem, &m, &blade, twice).map_err(err)?.objective(&x0);
        worst_refine = worst_refine.max((refined - straight).abs() / straight);
    }
    ensure(worst_grad <= 1e-4, || format!("gradient h vs h/10 differs by {worst_grad:e}"))?;
    ensure(worst_refine < 0.01, || format!("N -> 2N changes work by {worst_refine:e}"))?;

    // 5 waypoints, pitch only, against every 5-level assignment.
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
    let planner = Planner::new(problem, &m, &blade, params).map_err(err)?;
    let sol = planner.solve().map_err(err)?;
    let levels: Vec<f64> = (0..5).map(|i| -0.6 + 0.15 * i as f64).collect();
    let mut brute = f64::INFINITY;
    for a in &levels {
        for b in &levels {
            for c in &levels {
                let x = nalgebra::DVector::from_vec(vec![*a, *b, *c]);
                brute = brute.min(path_work(&planner.trajectory(&x), &blade, &m));
            }
        }
    }
    ensure(sol.work <= 1.05 * brute, || format!("{} vs brute force {brute}", sol.work))?;
    Ok(format!(
        "20 problems; grad rel diff {worst_grad:.1e}; refine {worst_refine:.1e}; 5^3 brute {brute:.4} vs {:.4}",
        sol.work
    ))
}

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let phi = rng.random_range(-PI..PI);
    let z: f64 = rng.random_range(-1.0..1.0);
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

fn rft_suite() -> Check {
    let p = MediaParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    let mut worst_lin: f64 = 0.0;
    while checked < 1000 {
        let n = unit(&mut rng);
        let t = n.cross(&unit(&mut rng));
        if t.norm() < 1e-3 {
            continue;
        }
        let area = rng.random_range(1e-6..1e-2);
        let el = PlateElement::new(Vector3::zeros(), n, t.normalize(), area).map_err(|e| e.to_string())?;
        let v = unit(&mut rng);
        let depth = rng.random_range(0.0..0.2);
        let f = element_force(&el, &v, depth, &p).map_err(|e| e.to_string())?;
        ensure(f.dot(&v) <= 1e-15, || format!("power {} > 0", f.dot(&v)))?;

        let scale = f.norm().max(1e-300);
        for q in [
            MediaParams { rho: 2.0 * p.rho, ..p },
            MediaParams { k: 2.0 * p.k, ..p },
        ] {
            let g = element_force(&el, &v, depth, &q).map_err(|e| e.to_string())?;
            worst_lin = worst_lin.max((g - 2.0 * f).norm() / scale);
        }
        let g = element_force(&el, &v, 2.0 * depth, &p).map_err(|e| e.to_string())?;
        worst_lin = worst_lin.max((g - 2.0 * f).norm() / scale);
        checked += 1;
    }
    ensure(worst_lin <= 1e-9, || format!("linearity error {worst_lin:e}"))?;

    let mut prev = f64::NEG_INFINITY;
    for i in 0..=1000 {
        let x = -1.0 + 2.0 * i as f64 / 1000.0;
        let y = f_perp(x, &p);
        ensure(y == -f_perp(-x, &p), || format!("f_perp not odd at {x}"))?;
        ensure(y > prev, || format!("f_perp not increasing at {x}"))?;
        prev = y;
    }
    let one = f_perp(1.0, &p);
    ensure((one - 1.8660).abs() <= 1e-4, || format!("f_perp(1) = {one}"))?;
    Ok(format!("1000 states dissipative; linearity {worst_lin:.1e}; f_perp(1) = {one:.6}"))
}

fn inference_corpus() -> Check {
    let sim = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..10 {
        let script = DemoScript::randomized(&mut rng);
        let g = generate_demo(&script, &sim, seed).map_err(|e| e.to_string())?;
        let policy = infer_policy(&g.demo, DEFAULT_V_EPS).map_err(|e| e.to_string())?;
        ensure(policy.classes() == g.labels, || format!("demo {seed}: {:?} vs {:?}", policy.classes(), g.labels))?;
    }
    let g = generate_demo(&DemoScript::default(), &sim, 1).map_err(|e| e.to_string())?;
    let policy = infer_policy(&g.demo, DEFAULT_V_EPS).map_err(|e| e.to_string())?;
    use SkillClass::*;
    ensure(policy.classes() == vec![Approach, Scoop, Lift, Transport, Unscoop], || {
        format!("canonical demo inferred {:?}", policy.classes())
    })?;
    Ok("10/10 randomized demos and the canonical demo".into())
}

fn sim_conservation() -> Check {
    let sim = Simulator::new(MediaParams::default(), SimParams::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for _ in 0..100 {
        let start = Pose::planar(rng.random_range(0.38..0.5), rng.random_range(0.05..0.12), rng.random_range(-0.5..0.0));
        let mut state = sim.initial_state(&start).map_err(|e| e.to_string())?;
        for _ in 0..rng.random_range(20..200) {
            let kind = rng.random_range(0..3);
            let mut r = || rng.random_range(-1.0..1.0);
            let cmd = match kind {
                0 => Command::Hold,
                1 => Command::JointTorques([r(), r(), r()]),
                _ => Command::PoseIncrement([0.01 * r(), 0.0, 0.01 * r(), 0.0, 0.1 * r(), 0.0]),
            };
            state = sim.step(&state, &cmd).map_err(|e| e.to_string())?.state;
            worst = worst.max(state.conservation_error());
            steps += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("conservation error {worst:e} kg"))?;
    let params = SimParams::default();
    let mut prev = f64::NEG_INFINITY;
    for i in 0..1000 {
        let tilt = -PI + 2.0 * PI * i as f64 / 999.0;
        let f = pour_fraction(tilt, &params);
        ensure(f >= prev, || format!("pour_fraction decreases at {tilt}"))?;
        prev = f;
    }
    Ok(format!("max error {worst:.1e} kg over {steps} steps; pour sweep monotone"))
}

fn fd_statics(arm: &ArmModel, q: &[f64; 3], w: &scoopcoach_core::media::Wrench) -> [f64; 3] {
    let h = 1e-6;
    let gw = generalized_wrench(w);
    [0, 1, 2].map(|i| {
        let (mut qp, mut qm) = (*q, *q);
        qp[i] += h;
        qm[i] -= h;
        let (a, b) = (arm.forward(&qp), arm.forward(&qm));
        let dx = Vector6::new(a.x() - b.x(), a.y() - b.y(), a.z() - b.z(), 0.0, a.pitch() - b.pitch(), 0.0) / (2.0 * h);
        gw.dot(&dx)
    })
}

fn controller_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..100 {
        let k1 = rng.random_range(0.01..0.99);
        let gains = ControllerGains {
            k1,
            k2: 0.0,
            ..ControllerGains::default()
        };
        let d = Pose::planar(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0));
        let mut x = Pose::planar(0.0, 0.0, 0.0);
        let mut e = x.error_to(&d).norm();
        // Stop before the error reaches position round-off.
        while e > 1e-6 {
            x = kinematic_step(&x, &d, None, &gains).0;
            let next = x.error_to(&d).norm();
            worst_ratio = worst_ratio.max((next / e - (1.0 - k1)).abs());
            e = next;
        }
    }
    ensure(worst_ratio <= 1e-6, || format!("contraction ratio off by {worst_ratio:e}"))?;

    let arm = ArmModel::default();
    let mut worst_tau: f64 = 0.0;
    for _ in 0..50 {
        let q = [rng.random_range(-1.0..1.0), rng.random_range(-2.0..-0.3), rng.random_range(-1.0..1.0)];
        let f_d = scoopcoach_core::media::Wrench {
            force: Vector3::new(rng.random_range(-5.0..5.0), 0.0, rng.random_range(-5.0..5.0)),
            torque: Vector3::new(0.0, rng.random_range(-1.0..1.0), 0.0),
        };
        let gains = ControllerGains {
            f_d,
            ..ControllerGains::default()
        };
        let out = impedance_step(&arm, &q, &arm.forward(&q), None, &gains, 0.01);
        let expect = fd_statics(&arm, &q, &f_d);
        for i in 0..3 {
            worst_tau = worst_tau.max((out.torques[i] - expect[i]).abs());
        }
    }
    ensure(worst_tau <= 1e-6, || format!("J^T statics off by {worst_tau:e}"))?;
    Ok(format!("ratio error {worst_ratio:.1e}; statics error {worst_tau:.1e} N·m"))
}

fn episode_log(p: &Pipeline) -> Result<String, String> {
    let err = |e: scoopcoach_core::Error| e.to_string();
    let demo = p.generate_demo().map_err(err)?;
    let policy = p.infer(&demo.demo).map_err(err)?;
    let plan = p.plan(&policy).map_err(err)?;
    let scoop: &Trajectory = &plan.path.trajectory;
    let outcome = p.execute(&policy, Some(scoop)).map_err(err)?;
    let session = p.coach(coach_input(100.0), None).map_err(err)?;
    let mut out = p.config().header();
    out.push('\n');
    out.push_str(&demo.demo.to_ndjson());
    for o in &outcome.outcomes {
        for r in &o.trace {
            out.push_str(&serde_json::to_string(r).map_err(|e| e.to_string())?);
            out.push('\n');
        }
    }
    for r in session.history() {
        out.push_str(&serde_json::to_string(r).map_err(|e| e.to_string())?);
        out.push('\n');
    }
    Ok(out)
}

fn determinism() -> Check {
    let a = episode_log(&pipeline()?)?;
    let b = episode_log(&pipeline()?)?;
    ensure(a.as_bytes() == b.as_bytes(), || "logs differ".into())?;
    Ok(format!("{} bytes identical", a.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, f64, fn() -> Check); 9] = [
        ("coaching-convergence", "|m - 100 g| <= 10 g in <= 30 episodes", 10.0, coaching_convergence),
        ("coaching-oracle", "greedy == enumerated argmin, exact", 5.0, coaching_oracle),
        ("self-eval-oracle", "effort <= 1.05 x exhaustive(3125), <= demo", 60.0, self_eval_oracle),
        ("planner", "work <= init; grad 1e-4 rel; N->2N < 1%; 5% of brute", 30.0, planner_checks),
        ("rft", "P <= 0; linearity 1e-9; f_perp(1) = 1.8660 +- 1e-4", 10.0, rft_suite),
        ("inference", "100% on 10 randomized + canonical", 10.0, inference_corpus),
        ("sim-conservation", "<= 1e-9 kg per step; pour monotone", 10.0, sim_conservation),
        ("controllers", "ratio (1 - k1) 1e-6; J^T statics 1e-6", 5.0, controller_checks),
        ("determinism", "byte-identical logs", 30.0, determinism),
    ];
    let mut failed = 0;
    for (name, tol, budget, check) in criteria {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match result {
            Ok(d) if secs < budget => (true, d),
            Ok(d) => (false, format!("{d}; over {budget} s budget")),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {name:<22} tol: {tol} | {secs:.2}s (< {budget} s) | {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
