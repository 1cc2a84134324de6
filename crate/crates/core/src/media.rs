//! Resistive force theory for a rigid intruder in dry granular media.
//!
//! Each surface element at depth |z| below the free surface feels a
//! hydrostatic-like pressure `2kρg|z|` scaled by a normal term
//! `f⊥(v̂·n̂)` and a tangential term `v̂·t̂`. Forces are returned as acting
//! on the intruder, so they always oppose the element velocity.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Pose, Trajectory, Twist};

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediaParams {
    /// Dimensionless material constant (2.5 for 0.3 mm glass beads).
    pub k: f64,
    /// Effective density, kg/m³.
    pub rho: f64,
    /// m/s².
    pub g: f64,
    /// Dimensionless constant of the normal-force shape function.
    pub c: f64,
    /// Internal friction angle, radians.
    pub gamma0: f64,
    /// Meters.
    pub grain_diameter: f64,
    /// Height of the free surface, meters.
    pub surface_height: f64,
    /// Horizontal extent `[x_min, x_max, y_min, y_max]` of the bed. Points
    /// outside it are never submerged. `None` means an unbounded bed.
    pub extent: Option<[f64; 4]>,
}

impl Default for MediaParams {
    fn default() -> Self {
        MediaParams {
            k: 2.5,
            rho: 2500.0,
            g: 9.81,
            c: 1.0,
            gamma0: 30f64.to_radians(),
            grain_diameter: 0.3e-3,
            surface_height: 0.08,
            extent: None,
        }
    }
}

impl MediaParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("media.{key}"), msg))
            }
        };
        check(self.k.is_finite() && self.k > 0.0, "k", "must be > 0")?;
        check(self.rho.is_finite() && self.rho > 0.0, "rho", "must be > 0")?;
        check(self.g.is_finite() && self.g > 0.0, "g", "must be > 0")?;
        check(self.c.is_finite() && self.c >= 0.0, "c", "must be >= 0")?;
        check(
            self.gamma0 > 0.0 && self.gamma0 < FRAC_PI_2,
            "gamma0",
            "must lie in (0, pi/2)",
        )?;
        check(
            self.grain_diameter.is_finite() && self.grain_diameter > 0.0,
            "grain_diameter",
            "must be > 0",
        )?;
        check(self.surface_height.is_finite(), "surface_height", "must be finite")?;
        if let Some([x0, x1, y0, y1]) = self.extent {
            check(x0 < x1 && y0 < y1, "extent", "must be [x_min, x_max, y_min, y_max] with min < max")?;
        }
        Ok(())
    }

    /// `2kρg`, the pressure per unit depth, Pa/m.
    pub fn pressure_gradient(&self) -> f64 {
        2.0 * self.k * self.rho * self.g
    }

    /// Depth of a point below the free surface; zero above it or outside
    /// the bed extent.
    pub fn depth_at(&self, p: &Vector3<f64>) -> f64 {
        if let Some([x0, x1, y0, y1]) = self.extent {
            if p.x < x0 || p.x > x1 || p.y < y0 || p.y > y1 {
                return 0.0;
            }
        }
        (self.surface_height - p.z).max(0.0)
    }
}

/// A flat surface patch of the intruder. `area` carries the element measure
/// (the line element times the plate width).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateElement {
    pub centroid: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub tangent: Vector3<f64>,
    pub area: f64,
}

impl PlateElement {
    pub fn new(
        centroid: Vector3<f64>,
        normal: Vector3<f64>,
        tangent: Vector3<f64>,
        area: f64,
    ) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > 1e-9 || (tangent.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidElement("normal and tangent must be unit".into()));
        }
        if normal.dot(&tangent).abs() > 1e-9 {
            return Err(Error::InvalidElement("normal and tangent must be orthogonal".into()));
        }
        if !(area > 0.0) || !area.is_finite() {
            return Err(Error::InvalidElement("area must be > 0".into()));
        }
        Ok(PlateElement {
            centroid,
            normal,
            tangent,
            area,
        })
    }
}

/// Normal-force shape function `(1 + C/√(tan²γ0 + vn²))·vn`.
pub fn f_perp(vn: f64, params: &MediaParams) -> f64 {
    let t = params.gamma0.tan();
    (1.0 + params.c / (t * t + vn * vn).sqrt()) * vn
}

/// Force on one element moving along unit `velocity_dir` at `depth`.
pub fn element_force(
    el: &PlateElement,
    velocity_dir: &Vector3<f64>,
    depth: f64,
    params: &MediaParams,
) -> Result<Vector3<f64>> {
    let norm = velocity_dir.norm();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NonUnitDirection(norm));
    }
    Ok(element_force_unchecked(el, velocity_dir, depth, params))
}

fn element_force_unchecked(
    el: &PlateElement,
    v: &Vector3<f64>,
    depth: f64,
    params: &MediaParams,
) -> Vector3<f64> {
    if depth <= 0.0 {
        return Vector3::zeros();
    }
    let vn = v.dot(&el.normal).clamp(-1.0, 1.0);
    let vt = v.dot(&el.tangent);
    let shape = el.normal * f_perp(vn, params) + el.tangent * vt;
    -shape * (params.pressure_gradient() * depth * el.area)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    /// N.
    pub force: Vector3<f64>,
    /// N·m, about the intruder reference point.
    pub torque: Vector3<f64>,
}

/// Integrates element forces over the submerged part of the intruder.
///
/// Element velocities come from the rigid-body twist about `reference`.
pub fn intruder_force(
    elements: &[PlateElement],
    body_twist: &Twist,
    reference: &Pose,
    params: &MediaParams,
) -> Result<Wrench> {
    if elements.is_empty() {
        return Err(Error::EmptyElements);
    }
    let omega = body_twist.angular_velocity(&reference.orientation);
    let mut wrench = Wrench::default();
    for el in elements {
        let depth = params.depth_at(&el.centroid);
        if depth <= 0.0 {
            continue;
        }
        let lever = el.centroid - reference.position;
        let v = body_twist.linear + omega.cross(&lever);
        let speed = v.norm();
        if speed < 1e-12 {
            continue;
        }
        let f = element_force_unchecked(el, &(v / speed), depth, params);
        wrench.force += f;
        wrench.torque += lever.cross(&f);
    }
    Ok(wrench)
}

/// Geometry of an intruder: produces its surface elements at a pose.
pub trait Intruder {
    fn elements(&self, pose: &Pose) -> Vec<PlateElement>;
}

/// Flat rectangular scoop blade centred on the pose, long axis along the
/// tool x axis, normal along the tool z axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatBlade {
    pub length: f64,
    pub width: f64,
    pub n_length: usize,
    pub n_width: usize,
}

impl Default for FlatBlade {
    fn default() -> Self {
        FlatBlade {
            length: 0.08,
            width: 0.06,
            n_length: 10,
            // rows across the width share one depth while roll is zero
            n_width: 1,
        }
    }
}

impl FlatBlade {
    pub fn element_area(&self) -> f64 {
        self.length * self.width / (self.n_length * self.n_width) as f64
    }
}

impl Intruder for FlatBlade {
    fn elements(&self, pose: &Pose) -> Vec<PlateElement> {
        let rot = pose.rotation();
        let along = rot * Vector3::x();
        let across = rot * Vector3::y();
        let normal = rot * Vector3::z();
        let area = self.element_area();
        let dl = self.length / self.n_length as f64;
        let dw = self.width / self.n_width as f64;
        let mut out = Vec::with_capacity(self.n_length * self.n_width);
        for i in 0..self.n_length {
            let s = -0.5 * self.length + (i as f64 + 0.5) * dl;
            for j in 0..self.n_width {
                let w = -0.5 * self.width + (j as f64 + 0.5) * dw;
                out.push(PlateElement {
                    centroid: pose.position + along * s + across * w,
                    normal,
                    tangent: along,
                    area,
                });
            }
        }
        out
    }
}

/// Work done against the media while the intruder moves from `a` to `b`.
///
/// Each element moves along the chord between its positions at the two
/// poses; force is evaluated at the midpoint pose.
pub fn segment_work(a: &Pose, b: &Pose, intruder: &impl Intruder, params: &MediaParams) -> f64 {
    let ea = intruder.elements(a);
    let eb = intruder.elements(b);
    let em = intruder.elements(&a.midpoint(b));
    segment_work_elements(&ea, &eb, &em, params)
}

pub(crate) fn segment_work_elements(
    ea: &[PlateElement],
    eb: &[PlateElement],
    em: &[PlateElement],
    params: &MediaParams,
) -> f64 {
    let mut work = 0.0;
    for ((a, b), m) in ea.iter().zip(eb).zip(em) {
        let dr = b.centroid - a.centroid;
        let len = dr.norm();
        if len < 1e-15 {
            continue;
        }
        let depth = params.depth_at(&m.centroid);
        if depth <= 0.0 {
            continue;
        }
        let f = element_force_unchecked(m, &(dr / len), depth, params);
        work -= f.dot(&dr);
    }
    work
}

/// Total work against the media along a sampled path, joules. Always ≥ 0.
pub fn path_work(traj: &Trajectory, intruder: &impl Intruder, params: &MediaParams) -> f64 {
    let mut prev = intruder.elements(traj.first());
    let mut work = 0.0;
    for w in traj.samples().windows(2) {
        let next = intruder.elements(&w[1].pose);
        let mid = intruder.elements(&w[0].pose.midpoint(&w[1].pose));
        work += segment_work_elements(&prev, &next, &mid, params);
        prev = next;
    }
    work
}

/// One row of a force/work export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkRecord {
    pub time: f64,
    pub pose: Pose,
    /// Depth of the intruder reference point.
    pub depth: f64,
    pub force: Vector3<f64>,
    pub cumulative_work: f64,
}

/// Per-sample force and cumulative work along a path, for plotting.
pub fn work_profile(
    traj: &Trajectory,
    intruder: &impl Intruder,
    params: &MediaParams,
) -> Vec<WorkRecord> {
    let samples = traj.samples();
    let mut out = Vec::with_capacity(samples.len());
    let mut cumulative = 0.0;
    for (i, s) in samples.iter().enumerate() {
        if i > 0 {
            cumulative += segment_work(&samples[i - 1].pose, &s.pose, intruder, params);
        }
        let twist = if i + 1 < samples.len() {
            Twist::between(&s.pose, &samples[i + 1].pose, samples[i + 1].time - s.time)
        } else {
            Twist::between(&samples[i - 1].pose, &s.pose, s.time - samples[i - 1].time)
        };
        let force = intruder_force(&intruder.elements(&s.pose), &twist, &s.pose, params)
            .map(|w| w.force)
            .unwrap_or_default();
        out.push(WorkRecord {
            time: s.time,
            pose: s.pose,
            depth: params.depth_at(&s.pose.position),
            force,
            cumulative_work: cumulative,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::TrajectorySample;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn flat_element(area: f64) -> PlateElement {
        PlateElement::new(Vector3::new(0.0, 0.0, 0.03), Vector3::z(), Vector3::x(), area).unwrap()
    }

    #[test]
    fn f_perp_examples() {
        let p = MediaParams::default();
        assert_eq!(f_perp(0.0, &p), 0.0);
        let no_c = MediaParams { c: 0.0, ..p };
        assert_relative_eq!(f_perp(1.0, &no_c), 1.0);
        let hand = 1.0 + 1.0 / (1.0f64 / 3.0 + 1.0).sqrt();
        assert_relative_eq!(f_perp(1.0, &p), hand, epsilon = 1e-12);
        assert!((f_perp(1.0, &p) - 1.8660).abs() < 1e-4);
    }

    #[test]
    fn element_force_examples() {
        let p = MediaParams::default();
        let el = flat_element(1e-4);
        let v = Vector3::new(0.6, 0.0, 0.8);
        assert_eq!(element_force(&el, &v, 0.0, &p).unwrap(), Vector3::zeros());
        // orthogonal to both n and t
        assert_eq!(element_force(&el, &Vector3::y(), 0.05, &p).unwrap(), Vector3::zeros());
        let f = element_force(&el, &Vector3::z(), 0.05, &p).unwrap();
        let expected = -2.0 * 2.5 * 2500.0 * 9.81 * 0.05 * (1.0 + 1.0 / (4.0f64 / 3.0).sqrt()) * 1e-4;
        assert_relative_eq!(f.z, expected, epsilon = 1e-12);
        assert!((f.z + 1.1441).abs() < 1e-4);
        assert_eq!(f.x, 0.0);
        assert!(element_force(&el, &Vector3::new(1.0, 1.0, 0.0), 0.05, &p).is_err());
    }

    #[test]
    fn element_rejects_bad_geometry() {
        let z = Vector3::z();
        assert!(PlateElement::new(Vector3::zeros(), z * 2.0, Vector3::x(), 1.0).is_err());
        assert!(PlateElement::new(Vector3::zeros(), z, z, 1.0).is_err());
        assert!(PlateElement::new(Vector3::zeros(), z, Vector3::x(), 0.0).is_err());
    }

    #[test]
    fn intruder_force_cases() {
        let p = MediaParams::default();
        assert_eq!(
            intruder_force(&[], &Twist::default(), &Pose::default(), &p),
            Err(Error::EmptyElements)
        );
        let blade = FlatBlade::default();
        let air = Pose::planar(0.0, 0.5, 0.0);
        let twist = Twist::new(Vector3::new(0.1, 0.0, -0.1), Vector3::new(0.0, 0.3, 0.0)).unwrap();
        let w = intruder_force(&blade.elements(&air), &twist, &air, &p).unwrap();
        assert_eq!(w, Wrench::default());

        // single element translating along its normal
        let el = PlateElement::new(Vector3::new(0.05, 0.0, 0.03), Vector3::z(), Vector3::x(), 1e-4).unwrap();
        let reference = Pose::planar(0.0, 0.03, 0.0);
        let down = Twist::new(Vector3::new(0.0, 0.0, 0.2), Vector3::zeros()).unwrap();
        let w = intruder_force(&[el], &down, &reference, &p).unwrap();
        let f = element_force(&el, &Vector3::z(), 0.05, &p).unwrap();
        assert_relative_eq!(w.force, f, epsilon = 1e-12);
        assert_relative_eq!(w.torque, Vector3::new(0.05, 0.0, 0.0).cross(&f), epsilon = 1e-12);
    }

    #[test]
    fn intruder_force_doubles_with_rho() {
        let p = MediaParams::default();
        let blade = FlatBlade::default();
        let pose = Pose::planar(0.0, 0.02, -0.3);
        let twist = Twist::new(Vector3::new(0.1, 0.0, -0.05), Vector3::new(0.0, 0.2, 0.0)).unwrap();
        let els = blade.elements(&pose);
        let a = intruder_force(&els, &twist, &pose, &p).unwrap();
        let b = intruder_force(&els, &twist, &pose, &MediaParams { rho: 2.0 * p.rho, ..p }).unwrap();
        assert_relative_eq!(b.force, a.force * 2.0, max_relative = 1e-12);
        assert_relative_eq!(b.torque, a.torque * 2.0, max_relative = 1e-12);
    }

    fn drag(n: usize, depth: f64, length: f64) -> Trajectory {
        let p = MediaParams::default();
        let z = p.surface_height - depth;
        let poses: Vec<_> = (0..=n)
            .map(|i| Pose::planar(length * i as f64 / n as f64, z, 0.0))
            .collect();
        Trajectory::from_poses(&poses, 0.01).unwrap()
    }

    #[test]
    fn horizontal_drag_matches_closed_form() {
        let p = MediaParams::default();
        let blade = FlatBlade::default();
        let (depth, length) = (0.03, 0.1);
        // level blade dragged along its tangent: f⊥ term vanishes, v̂·t̂ = 1
        let expected = p.pressure_gradient() * depth * blade.length * blade.width * length;
        let w = path_work(&drag(10, depth, length), &blade, &p);
        assert_relative_eq!(w, expected, max_relative = 1e-6);
    }

    #[test]
    fn path_work_above_surface_is_zero() {
        let p = MediaParams::default();
        let poses: Vec<_> = (0..5).map(|i| Pose::planar(0.01 * i as f64, 0.3, 0.1 * i as f64)).collect();
        let t = Trajectory::from_poses(&poses, 0.1).unwrap();
        assert_eq!(path_work(&t, &FlatBlade::default(), &p), 0.0);
    }

    #[test]
    fn zero_length_segments_are_skipped() {
        let p = MediaParams::default();
        let a = Pose::planar(0.0, 0.05, -0.2);
        let t = Trajectory::new(vec![
            TrajectorySample { time: 0.0, pose: a },
            TrajectorySample { time: 1.0, pose: a },
        ])
        .unwrap();
        assert_eq!(path_work(&t, &FlatBlade::default(), &p), 0.0);
    }

    #[test]
    fn refinement_changes_work_by_less_than_one_percent() {
        let p = MediaParams::default();
        let blade = FlatBlade::default();
        let poses: Vec<_> = (0..=8)
            .map(|i| {
                let s = i as f64 / 8.0;
                Pose::planar(0.12 * s, p.surface_height - 0.04 * (PI * s).sin(), -0.4 + 0.6 * s)
            })
            .collect();
        let coarse = Trajectory::from_poses(&poses, 0.1).unwrap();
        let w1 = path_work(&coarse.densify(4), &blade, &p);
        let w2 = path_work(&coarse.densify(8), &blade, &p);
        assert!(((w2 - w1) / w1).abs() < 0.01, "{w1} vs {w2}");
    }

    #[test]
    fn extent_limits_submersion() {
        let p = MediaParams {
            extent: Some([0.0, 1.0, -1.0, 1.0]),
            ..MediaParams::default()
        };
        assert!(p.depth_at(&Vector3::new(0.5, 0.0, 0.0)) > 0.0);
        assert_eq!(p.depth_at(&Vector3::new(1.5, 0.0, 0.0)), 0.0);
    }

    fn unit_vec() -> impl Strategy<Value = Vector3<f64>> {
        (-PI..PI, -1.0f64..1.0).prop_map(|(phi, z)| {
            let r = (1.0 - z * z).sqrt();
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn element_force_is_dissipative(
            n in unit_vec(), helper in unit_vec(), v in unit_vec(),
            depth in 0.0f64..0.2, area in 1e-6f64..1e-2,
            c in 0.0f64..3.0, gamma0 in 0.05f64..1.5,
        ) {
            let t = n.cross(&helper);
            prop_assume!(t.norm() > 1e-3);
            let el = PlateElement::new(Vector3::zeros(), n, t.normalize(), area).unwrap();
            let p = MediaParams { c, gamma0, ..MediaParams::default() };
            let f = element_force(&el, &v, depth, &p).unwrap();
            prop_assert!(f.dot(&v) <= 1e-15);
        }

        #[test]
        fn f_perp_odd_and_increasing(x in 0.0f64..1.0, dx in 1e-6f64..0.5) {
            let p = MediaParams::default();
            prop_assert_eq!(f_perp(-x, &p), -f_perp(x, &p));
            let y = (x + dx).min(1.0);
            if y > x {
                prop_assert!(f_perp(y, &p) > f_perp(x, &p));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn path_work_nonnegative_and_reversible(
            zs in proptest::collection::vec(0.0f64..0.12, 3..8),
            pitches in proptest::collection::vec(-1.2f64..1.2, 8),
        ) {
            let p = MediaParams::default();
            let blade = FlatBlade { n_length: 6, n_width: 4, ..FlatBlade::default() };
            let poses: Vec<_> = zs.iter().enumerate()
                .map(|(i, z)| Pose::planar(0.02 * i as f64, *z, pitches[i]))
                .collect();
            let t = Trajectory::from_poses(&poses, 0.1).unwrap();
            let w = path_work(&t, &blade, &p);
            let r = path_work(&t.reversed(), &blade, &p);
            prop_assert!(w >= 0.0);
            prop_assert!((w - r).abs() <= 1e-12 * w.max(1e-12));
        }
    }
}
