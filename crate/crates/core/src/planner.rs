//! Least-effort scoop path through the media.
//!
//! The path is a chain of waypoints with uniform horizontal progress from the
//! start pose to the end pose. Endpoints are fixed, so the boundary
//! conditions hold identically and the constrained problem reduces to an
//! unconstrained one over the interior waypoints' blade pitch and depth,
//! subject to box bounds. It is solved with projected gradient descent, a
//! backtracking Armijo line search and central finite-difference gradients.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Pose, Trajectory, TrajectorySample};
use crate::media::{path_work, FlatBlade, MediaParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    pub max_iters: usize,
    /// Improvement below which the descent stops, J.
    pub tol: f64,
    /// Projected-gradient norm below which the descent stops.
    pub grad_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Finite-difference step, in each coordinate's unit (rad or m).
    pub fd_step: f64,
    /// Largest coordinate change of the first trial step.
    pub initial_step: f64,
    /// Interpolated samples per waypoint segment when integrating work.
    pub samples_per_segment: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            max_iters: 500,
            tol: 1e-6,
            grad_tol: 1e-6,
            armijo_c: 1e-4,
            fd_step: 1e-6,
            initial_step: 0.05,
            samples_per_segment: 8,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("planner.{key}"), msg))
            }
        };
        check(self.max_iters > 0, "max_iters", "must be > 0")?;
        check(self.tol > 0.0, "tol", "must be > 0")?;
        check(self.grad_tol > 0.0, "grad_tol", "must be > 0")?;
        check(self.armijo_c > 0.0 && self.armijo_c < 1.0, "armijo_c", "must lie in (0, 1)")?;
        check(self.fd_step > 0.0, "fd_step", "must be > 0")?;
        check(self.initial_step > 0.0, "initial_step", "must be > 0")?;
        check(self.samples_per_segment >= 1, "samples_per_segment", "must be >= 1")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathProblem {
    pub start: Pose,
    pub end: Pose,
    /// Including both endpoints; at least 3.
    pub n_waypoints: usize,
    /// `[min, max]` blade pitch of interior waypoints, radians.
    pub pitch_bounds: [f64; 2],
    /// Deepest allowed interior waypoint, meters below the free surface.
    pub depth_max: f64,
    /// When false only pitch is optimised and depths stay on the straight
    /// line between the endpoints.
    pub optimize_depth: bool,
    /// Time to traverse the path, s.
    pub duration: f64,
}

impl PathProblem {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidProblem(m.to_string()));
        if !self.start.is_finite() || !self.end.is_finite() {
            return bad("endpoints must be finite");
        }
        if self.start == self.end {
            return bad("start and end poses coincide");
        }
        if self.n_waypoints < 3 {
            return bad("need at least 3 waypoints");
        }
        let [lo, hi] = self.pitch_bounds;
        if !(lo <= hi) {
            return bad("pitch bounds are empty");
        }
        if !(self.depth_max >= 0.0) {
            return bad("depth_max must be >= 0");
        }
        if !(self.duration > 0.0) {
            return bad("duration must be > 0");
        }
        for (name, p) in [("start", &self.start), ("end", &self.end)] {
            if p.pitch() < lo || p.pitch() > hi {
                return Err(Error::InvalidProblem(format!("{name} pitch outside bounds")));
            }
        }
        Ok(())
    }

    fn interior(&self) -> usize {
        self.n_waypoints - 2
    }

    pub fn dimension(&self) -> usize {
        if self.optimize_depth {
            2 * self.interior()
        } else {
            self.interior()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub work: f64,
    /// Projected-gradient norm at this iterate; absent for the final one.
    pub grad_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedPath {
    pub waypoints: Vec<Pose>,
    /// Waypoints densified the way the objective integrates them.
    pub trajectory: Trajectory,
    pub work: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationLog>,
    pub samples_per_segment: usize,
    pub duration: f64,
}

impl PlannedPath {
    /// Interior waypoints of the path.
    pub fn interior_count(&self) -> usize {
        self.waypoints.len() - 2
    }

    /// The path with per-interior-waypoint pitch offsets added, densified
    /// like the planned trajectory. Endpoints stay fixed.
    pub fn with_pitch_offsets(&self, offsets: &[f64]) -> Result<Trajectory> {
        if offsets.len() != self.interior_count() {
            return Err(Error::InvalidProblem(format!(
                "expected {} offsets, got {}",
                self.interior_count(),
                offsets.len()
            )));
        }
        let mut poses = self.waypoints.clone();
        for (p, d) in poses[1..].iter_mut().zip(offsets) {
            p.orientation.y = crate::geom::wrap(p.orientation.y + d);
        }
        let dt = self.duration / (poses.len() - 1) as f64;
        Ok(Trajectory::from_poses(&poses, dt)?.densify(self.samples_per_segment))
    }
}

/// Evaluates and optimises one path problem.
#[derive(Debug, Clone)]
pub struct Planner<'a> {
    problem: PathProblem,
    media: &'a MediaParams,
    blade: &'a FlatBlade,
    params: PlannerParams,
}

impl<'a> Planner<'a> {
    pub fn new(
        problem: PathProblem,
        media: &'a MediaParams,
        blade: &'a FlatBlade,
        params: PlannerParams,
    ) -> Result<Self> {
        problem.validate()?;
        params.validate()?;
        Ok(Planner {
            problem,
            media,
            blade,
            params,
        })
    }

    pub fn problem(&self) -> &PathProblem {
        &self.problem
    }

    fn depth_of(&self, p: &Pose) -> f64 {
        self.media.surface_height - p.z()
    }

    fn depth_bounds(&self) -> [f64; 2] {
        let lo = 0f64
            .min(self.depth_of(&self.problem.start))
            .min(self.depth_of(&self.problem.end));
        [lo, self.problem.depth_max.max(lo)]
    }

    fn fraction(&self, i: usize) -> f64 {
        i as f64 / (self.problem.n_waypoints - 1) as f64
    }

    /// The straight-line path between the endpoints.
    pub fn initializer(&self) -> DVector<f64> {
        let m = self.problem.interior();
        let (a, b) = (&self.problem.start, &self.problem.end);
        let mut x = DVector::zeros(self.problem.dimension());
        for k in 0..m {
            let s = self.fraction(k + 1);
            x[k] = a.lerp(b, s).pitch();
            if self.problem.optimize_depth {
                x[m + k] = self.depth_of(a) + s * (self.depth_of(b) - self.depth_of(a));
            }
        }
        self.project(&x)
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = self.problem.interior();
        let [plo, phi] = self.problem.pitch_bounds;
        let [dlo, dhi] = self.depth_bounds();
        DVector::from_fn(x.len(), |i, _| {
            if i < m {
                x[i].clamp(plo, phi)
            } else {
                x[i].clamp(dlo, dhi)
            }
        })
    }

    pub fn waypoints(&self, x: &DVector<f64>) -> Vec<Pose> {
        let n = self.problem.n_waypoints;
        let m = self.problem.interior();
        let (a, b) = (&self.problem.start, &self.problem.end);
        (0..n)
            .map(|i| {
                if i == 0 {
                    return *a;
                }
                if i == n - 1 {
                    return *b;
                }
                let s = self.fraction(i);
                let mut p = a.lerp(b, s);
                p.orientation.y = x[i - 1];
                if self.problem.optimize_depth {
                    p.position.z = self.media.surface_height - x[m + i - 1];
                }
                p
            })
            .collect()
    }

    pub fn waypoint_trajectory(&self, x: &DVector<f64>) -> Trajectory {
        let n = self.problem.n_waypoints;
        let dt = self.problem.duration / (n - 1) as f64;
        let samples = self
            .waypoints(x)
            .into_iter()
            .enumerate()
            .map(|(i, pose)| TrajectorySample {
                time: i as f64 * dt,
                pose,
            })
            .collect();
        Trajectory::new(samples).expect("uniform times are increasing")
    }

    pub fn trajectory(&self, x: &DVector<f64>) -> Trajectory {
        self.waypoint_trajectory(x).densify(self.params.samples_per_segment)
    }

    /// Work of the path encoded by `x`, J.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        path_work(&self.trajectory(x), self.blade, self.media)
    }

    /// Central finite-difference gradient with step `h`.
    pub fn gradient_with_step(&self, x: &DVector<f64>, h: f64) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        let mut probe = x.clone();
        for i in 0..x.len() {
            probe[i] = x[i] + h;
            let plus = self.objective(&probe);
            probe[i] = x[i] - h;
            let minus = self.objective(&probe);
            probe[i] = x[i];
            g[i] = (plus - minus) / (2.0 * h);
        }
        g
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.gradient_with_step(x, self.params.fd_step)
    }

    pub fn solve(&self) -> Result<PlannedPath> {
        let p = &self.params;
        let mut x = self.initializer();
        let mut f = self.objective(&x);
        if !f.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: 0 });
        }
        let mut history = vec![IterationLog {
            iteration: 0,
            work: f,
            grad_norm: None,
        }];
        let mut alpha: Option<f64> = None;
        let mut converged = false;
        let mut last_improvement = f64::INFINITY;
        let mut iterations = 0;

        while iterations < p.max_iters {
            let g = self.gradient(&x);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteObjective {
                    iteration: iterations,
                });
            }
            let pg = &x - self.project(&(&x - &g));
            let grad_norm = pg.norm();
            history.last_mut().expect("seeded").grad_norm = Some(grad_norm);
            if grad_norm < p.grad_tol || g.amax() == 0.0 {
                converged = true;
                break;
            }
            let mut a = alpha.map_or(p.initial_step / g.amax(), |a| 2.0 * a);
            let mut accepted = None;
            for _ in 0..60 {
                let trial = self.project(&(&x - &g * a));
                let d = &trial - &x;
                if d.amax() == 0.0 {
                    break;
                }
                let ft = self.objective(&trial);
                if !ft.is_finite() {
                    return Err(Error::NonFiniteObjective {
                        iteration: iterations + 1,
                    });
                }
                if ft <= f + p.armijo_c * g.dot(&d) {
                    accepted = Some((trial, ft));
                    break;
                }
                a *= 0.5;
            }
            let Some((trial, ft)) = accepted else {
                converged = true;
                break;
            };
            iterations += 1;
            alpha = Some(a);
            last_improvement = f - ft;
            x = trial;
            f = ft;
            history.push(IterationLog {
                iteration: iterations,
                work: f,
                grad_norm: None,
            });
            if last_improvement < p.tol {
                converged = true;
                break;
            }
        }
        if !converged && last_improvement < p.tol {
            converged = true;
        }
        Ok(PlannedPath {
            waypoints: self.waypoints(&x),
            trajectory: self.trajectory(&x),
            work: f,
            iterations,
            converged,
            history,
            samples_per_segment: self.params.samples_per_segment,
            duration: self.problem.duration,
        })
    }
}

/// Plans the least-effort path for `problem`.
pub fn solve_least_effort(
    problem: &PathProblem,
    media: &MediaParams,
    blade: &FlatBlade,
    params: &PlannerParams,
) -> Result<PlannedPath> {
    Planner::new(*problem, media, blade, *params)?.solve()
}

/// Finite-difference gradient of the path work at decision vector `x`.
pub fn work_gradient(
    problem: &PathProblem,
    x: &DVector<f64>,
    media: &MediaParams,
    blade: &FlatBlade,
    params: &PlannerParams,
) -> Result<DVector<f64>> {
    let planner = Planner::new(*problem, media, blade, *params)?;
    if x.len() != problem.dimension() {
        return Err(Error::InvalidProblem(format!(
            "decision vector has {} entries, expected {}",
            x.len(),
            problem.dimension()
        )));
    }
    Ok(planner.gradient(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn media() -> MediaParams {
        MediaParams::default()
    }

    fn blade() -> FlatBlade {
        FlatBlade {
            n_length: 10,
            n_width: 10,
            ..FlatBlade::default()
        }
    }

    fn problem(media: &MediaParams) -> PathProblem {
        let s = media.surface_height;
        PathProblem {
            start: Pose::planar(0.38, s, -0.35),
            end: Pose::planar(0.50, s - 0.035, -0.1),
            n_waypoints: 7,
            pitch_bounds: [-0.9, 0.3],
            depth_max: 0.06,
            optimize_depth: true,
            duration: 2.0,
        }
    }

    #[test]
    fn rejects_degenerate_problems() {
        let m = media();
        let mut p = problem(&m);
        p.end = p.start;
        assert!(matches!(p.validate(), Err(Error::InvalidProblem(_))));
        let mut p = problem(&m);
        p.n_waypoints = 2;
        assert!(p.validate().is_err());
        let mut p = problem(&m);
        p.pitch_bounds = [0.5, -0.5];
        assert!(p.validate().is_err());
    }

    #[test]
    fn surface_arc_is_trivial() {
        let m = media();
        let b = blade();
        let s = m.surface_height + 0.05;
        let p = PathProblem {
            start: Pose::planar(0.3, s, 0.0),
            end: Pose::planar(0.5, s, 0.0),
            n_waypoints: 5,
            pitch_bounds: [-0.5, 0.5],
            depth_max: 0.05,
            optimize_depth: false,
            duration: 1.0,
        };
        let out = solve_least_effort(&p, &m, &b, &PlannerParams::default()).unwrap();
        assert!(out.work.abs() < 1e-12);
        assert!(out.converged);
    }

    #[test]
    fn solution_improves_on_straight_line_and_keeps_endpoints() {
        let m = media();
        let b = blade();
        let p = problem(&m);
        let planner = Planner::new(p, &m, &b, PlannerParams::default()).unwrap();
        let init = planner.objective(&planner.initializer());
        let out = planner.solve().unwrap();
        assert!(out.work <= init);
        assert!(out.work < 0.9 * init, "{} vs {}", out.work, init);
        assert_eq!(out.trajectory.first(), &p.start);
        assert_eq!(out.trajectory.last(), &p.end);
        assert!(out.history.windows(2).all(|w| w[1].work <= w[0].work));
        assert_relative_eq!(out.work, path_work(&out.trajectory, &b, &m), max_relative = 1e-12);
        assert_eq!(out.with_pitch_offsets(&[0.0; 5]).unwrap(), out.trajectory);
        let bent = out.with_pitch_offsets(&[0.1, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(bent.first(), &p.start);
        assert_eq!(bent.last(), &p.end);
        assert!(out.with_pitch_offsets(&[0.0; 4]).is_err());
    }

    #[test]
    fn gradient_examples() {
        let m = media();
        let b = blade();
        // above the surface everywhere
        let s = m.surface_height + 0.1;
        let air = PathProblem {
            start: Pose::planar(0.3, s, 0.0),
            end: Pose::planar(0.5, s, 0.0),
            n_waypoints: 5,
            pitch_bounds: [-0.5, 0.5],
            depth_max: 0.05,
            optimize_depth: true,
            duration: 1.0,
        };
        let x = Planner::new(air, &m, &b, PlannerParams::default()).unwrap().initializer();
        let g = work_gradient(&air, &x, &m, &b, &PlannerParams::default()).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));

        let p = problem(&m);
        let planner = Planner::new(p, &m, &b, PlannerParams::default()).unwrap();
        let x = planner.initializer();
        let g = planner.gradient(&x);
        let mid_depth = 5 + 2;
        assert!(g[mid_depth] > 0.0);
        assert!(work_gradient(&p, &DVector::zeros(3), &m, &b, &PlannerParams::default()).is_err());
    }

    #[test]
    fn solve_is_deterministic() {
        let m = media();
        let b = blade();
        let p = problem(&m);
        let a = solve_least_effort(&p, &m, &b, &PlannerParams::default()).unwrap();
        let c = solve_least_effort(&p, &m, &b, &PlannerParams::default()).unwrap();
        assert_eq!(a, c);
    }
}
