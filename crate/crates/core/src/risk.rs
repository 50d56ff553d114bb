//! Collision-risk estimation between vehicle pairs: each vehicle casts an
//! anisotropic Gaussian potential field stretched along its motion, the pair
//! fields combine into a joint uncertainty over the relative displacement,
//! and the collision probability is the joint mass falling inside a
//! physical conflict area. A time-to-contact estimate and a staged
//! advisory signal sit on top.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::{Error, Result};

// ============================================================================
// Vehicle state and field construction
// ============================================================================

/// Kinematic state of one vehicle in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: Vec2,
    /// Heading angle, radians, measured from world +x.
    pub heading: f64,
    /// Scalar forward speed, m/s.
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn direction(&self) -> Vec2 {
        Vec2::new(self.heading.cos(), self.heading.sin())
    }

    pub fn velocity(&self) -> Vec2 {
        self.direction() * self.speed
    }
}

/// Field shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldParams {
    /// Base longitudinal spread, m.
    pub sigma_x: f64,
    /// Longitudinal growth per m/s of closing speed, s.
    pub reaction_time: f64,
    /// Lateral-to-longitudinal spread ratio.
    pub lateral_ratio: f64,
    /// Lateral spread cap, m.
    pub sigma_y_max: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams {
            sigma_x: 2.1,
            reaction_time: 0.4,
            lateral_ratio: 0.3,
            sigma_y_max: 1.75,
        }
    }
}

/// Gaussian potential field of one vehicle: axis-aligned with the vehicle's
/// heading, spreads in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialField {
    pub mean: Vec2,
    pub heading: f64,
    pub sigma_long: f64,
    pub sigma_lat: f64,
}

/// Builds a vehicle's field for one interaction. The longitudinal spread
/// grows with the closing speed while the pair is converging and shrinks
/// (floored at a tenth of the base) once the faster vehicle is past; the
/// lateral spread follows at `lateral_ratio`, capped at `sigma_y_max`.
pub fn build_field(
    state: &VehicleState,
    delta_v: f64,
    passed: bool,
    params: &FieldParams,
) -> PotentialField {
    let dv = delta_v.abs();
    let sigma_long = if passed {
        (params.sigma_x - params.reaction_time * dv).max(0.1 * params.sigma_x)
    } else {
        params.sigma_x + params.reaction_time * dv
    };
    let sigma_lat = (params.lateral_ratio * sigma_long).min(params.sigma_y_max);
    PotentialField {
        mean: state.position,
        heading: state.heading,
        sigma_long,
        sigma_lat,
    }
}

impl PotentialField {
    /// World-frame covariance of the field.
    pub fn world_cov(&self) -> Matrix2<f64> {
        let u = Vec2::new(self.heading.cos(), self.heading.sin());
        let n = Vec2::new(-u.y, u.x);
        self.sigma_long * self.sigma_long * u * u.transpose()
            + self.sigma_lat * self.sigma_lat * n * n.transpose()
    }
}

// ============================================================================
// Joint field
// ============================================================================

/// Combined uncertainty of the relative displacement between two vehicles,
/// expressed in its own principal-axis (conflict) frame. The axes are the
/// eigenvectors of the summed covariance, major first, with signs chosen so
/// both components of the mean offset are non-negative; that fixes the
/// frame deterministically and makes downstream quantities invariant under
/// rigid motions of the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct JointField {
    pub lambda_major: f64,
    pub lambda_minor: f64,
    /// Mean relative offset (target minus ego) in conflict coordinates,
    /// both components >= 0 by construction.
    pub offset: Vec2,
    pub axis_major: Vec2,
    pub axis_minor: Vec2,
}

/// Eigen decomposition of a symmetric 2x2 matrix, eigenvalues descending.
fn symmetric_eigen_2x2(c: &Matrix2<f64>) -> (f64, f64, Vec2, Vec2) {
    let (a, b, d) = (c[(0, 0)], c[(0, 1)], c[(1, 1)]);
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let l1 = half_tr + disc;
    let l2 = half_tr - disc;
    let e1 = if disc < 1e-300 {
        Vec2::new(1.0, 0.0)
    } else {
        // Two candidate eigenvector expressions; take the better conditioned.
        let c1 = Vec2::new(b, l1 - a);
        let c2 = Vec2::new(l1 - d, b);
        let v = if c1.norm_squared() >= c2.norm_squared() { c1 } else { c2 };
        v / v.norm()
    };
    let e2 = Vec2::new(-e1.y, e1.x);
    (l1, l2, e1, e2)
}

fn canonical_sign(mu: f64, axis: Vec2) -> (f64, Vec2) {
    if mu < 0.0 {
        (-mu, -axis)
    } else if mu == 0.0 {
        // No offset along this axis: orient by the axis itself.
        if axis.x < 0.0 || (axis.x == 0.0 && axis.y < 0.0) {
            (0.0, -axis)
        } else {
            (0.0, axis)
        }
    } else {
        (mu, axis)
    }
}

/// Combines the pair fields: covariances add, the mean offset is the target
/// mean minus the ego mean, and everything is re-expressed in the joint
/// principal frame.
pub fn joint_field(ego: &PotentialField, target: &PotentialField) -> Result<JointField> {
    let cov = ego.world_cov() + target.world_cov();
    let (l1, l2, e1, e2) = symmetric_eigen_2x2(&cov);
    if !(l2 > 1e-12) {
        return Err(Error::SingularCovariance(l2));
    }
    let rel = target.mean - ego.mean;
    let (mx, ax_major) = canonical_sign(rel.dot(&e1), e1);
    let (my, ax_minor) = canonical_sign(rel.dot(&e2), e2);
    Ok(JointField {
        lambda_major: l1,
        lambda_minor: l2,
        offset: Vec2::new(mx, my),
        axis_major: ax_major,
        axis_minor: ax_minor,
    })
}

impl JointField {
    /// Joint density at a point given in conflict coordinates.
    pub fn pdf(&self, x: Vec2) -> f64 {
        let det = self.lambda_major * self.lambda_minor;
        let dx = x.x - self.offset.x;
        let dy = x.y - self.offset.y;
        let q = dx * dx / self.lambda_major + dy * dy / self.lambda_minor;
        (2.0 * std::f64::consts::PI).recip() * det.sqrt().recip() * (-0.5 * q).exp()
    }
}

// ============================================================================
// Conflict area and collision probability
// ============================================================================

/// Where the conflict rectangle sits along the major (approach) axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaAnchor {
    /// Rectangle centered on the target vehicle.
    TargetCentered,
    /// Rectangle spanning from the target toward the approaching vehicle.
    ApproachSide,
}

/// Physical conflict rectangle, axis-aligned with the conflict frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConflictArea {
    /// Extent along the major axis, m.
    pub length: f64,
    /// Extent along the minor axis, m.
    pub width: f64,
    pub anchor: AreaAnchor,
}

impl Default for ConflictArea {
    fn default() -> Self {
        ConflictArea {
            length: 17.0,
            width: 4.0,
            anchor: AreaAnchor::TargetCentered,
        }
    }
}

impl ConflictArea {
    /// Integration bounds `(x0, x1, y0, y1)` in conflict coordinates. The
    /// offset is canonically non-negative, so the approach side is +x.
    fn bounds(&self) -> (f64, f64, f64, f64) {
        match self.anchor {
            AreaAnchor::TargetCentered => (
                -0.5 * self.length,
                0.5 * self.length,
                -0.5 * self.width,
                0.5 * self.width,
            ),
            AreaAnchor::ApproachSide => (0.0, self.length, -0.5 * self.width, 0.5 * self.width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "conflict area must have positive extent ({} x {})",
                self.length, self.width
            )));
        }
        Ok(())
    }
}

/// Composite Simpson quadrature of `f` over `[x0,x1] x [y0,y1]` on an
/// `n x n` grid (n odd).
fn simpson_2d(f: impl Fn(f64, f64) -> f64, bounds: (f64, f64, f64, f64), n: usize) -> f64 {
    debug_assert!(n >= 3 && n % 2 == 1);
    let (x0, x1, y0, y1) = bounds;
    let hx = (x1 - x0) / (n - 1) as f64;
    let hy = (y1 - y0) / (n - 1) as f64;
    let w = |i: usize| -> f64 {
        if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let mut acc = 0.0;
    for j in 0..n {
        let y = y0 + hy * j as f64;
        let wy = w(j);
        let mut row = 0.0;
        for i in 0..n {
            row += w(i) * f(x0 + hx * i as f64, y);
        }
        acc += wy * row;
    }
    acc * hx * hy / 9.0
}

/// Simpson grid: 129 points per axis, doubled until successive estimates
/// agree to 1e-4 (at most 4 doublings).
const SIMPSON_BASE_N: usize = 129;
const SIMPSON_TOL: f64 = 1e-4;
const SIMPSON_MAX_REFINES: usize = 4;

/// Probability mass of the joint field inside the conflict area.
pub fn collision_probability(joint: &JointField, area: &ConflictArea) -> Result<f64> {
    area.validate()?;
    if !(joint.lambda_minor > 1e-12) {
        return Err(Error::SingularCovariance(joint.lambda_minor));
    }
    let bounds = area.bounds();
    let f = |x: f64, y: f64| joint.pdf(Vec2::new(x, y));
    let mut n = SIMPSON_BASE_N;
    let mut estimate = simpson_2d(f, bounds, n);
    for _ in 0..SIMPSON_MAX_REFINES {
        n = 2 * (n - 1) + 1;
        let refined = simpson_2d(f, bounds, n);
        let delta = (refined - estimate).abs();
        estimate = refined;
        if delta < SIMPSON_TOL {
            break;
        }
    }
    Ok(estimate.clamp(0.0, 1.0))
}

// ============================================================================
// Time to contact and advisory signal
// ============================================================================

/// Time until the bumper gap closes, assuming constant speeds along the
/// same line: infinite when the follower is not faster, zero when the
/// bumpers already overlap.
pub fn time_to_contact(
    center_gap: f64,
    len_follower: f64,
    len_leader: f64,
    v_follower: f64,
    v_leader: f64,
) -> f64 {
    if v_follower <= v_leader {
        return f64::INFINITY;
    }
    let gap = center_gap - 0.5 * len_follower - 0.5 * len_leader;
    if gap <= 0.0 {
        return 0.0;
    }
    gap / (v_follower - v_leader)
}

/// Staged advisory level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskSignal {
    None,
    Reminding,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskThresholds {
    pub reminding: f64,
    pub warning: f64,
}

impl Default for RiskThresholds {
    fn default() -> Self {
        RiskThresholds {
            reminding: 0.15,
            warning: 0.3,
        }
    }
}

pub fn risk_signal(probability: f64, t: &RiskThresholds) -> RiskSignal {
    if probability >= t.warning {
        RiskSignal::Warning
    } else if probability >= t.reminding {
        RiskSignal::Reminding
    } else {
        RiskSignal::None
    }
}

// ============================================================================
// Pair evaluation
// ============================================================================

/// Full risk assessment of one vehicle pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskEstimate {
    /// Closing speed along the ego heading, m/s (>= 0).
    pub delta_v: f64,
    /// True once the ego center is ahead of the target along its heading.
    pub passed: bool,
    pub time_to_contact: f64,
    pub probability: f64,
    pub signal: RiskSignal,
    pub joint: JointField,
}

/// Evaluates the ego-target pair: relative kinematics, both potential
/// fields, the joint field, the conflict-area mass, and the advisory level.
pub fn evaluate_pair(
    ego: &VehicleState,
    target: &VehicleState,
    params: &FieldParams,
    area: &ConflictArea,
    thresholds: &RiskThresholds,
) -> Result<RiskEstimate> {
    let dir = ego.direction();
    let delta_v = (ego.velocity() - target.velocity()).dot(&dir).abs();
    let passed = (ego.position - target.position).dot(&dir) > 0.0;
    let ego_field = build_field(ego, delta_v, passed, params);
    let target_field = build_field(target, delta_v, passed, params);
    let joint = joint_field(&ego_field, &target_field)?;
    let probability = collision_probability(&joint, area)?;
    let center_gap = (ego.position - target.position).norm();
    let ttc = time_to_contact(center_gap, ego.length, target.length, ego.speed, target.speed);
    Ok(RiskEstimate {
        delta_v,
        passed,
        time_to_contact: ttc,
        probability,
        signal: risk_signal(probability, thresholds),
        joint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    fn state(x: f64, y: f64, heading: f64, speed: f64) -> VehicleState {
        VehicleState {
            position: v(x, y),
            heading,
            speed,
            length: 4.2,
            width: 1.8,
        }
    }

    // ------------------------------------------------------------------
    // Field construction
    // ------------------------------------------------------------------

    #[test]
    fn field_spread_grows_while_closing_and_shrinks_after_passing() {
        let p = FieldParams::default();
        let s = state(0.0, 0.0, 0.0, 20.0);
        let approaching = build_field(&s, 6.0, false, &p);
        assert_abs_diff_eq!(approaching.sigma_long, 2.1 + 0.4 * 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            approaching.sigma_lat,
            (0.3f64 * (2.1 + 0.4 * 6.0)).min(1.75),
            epsilon = 1e-12
        );

        let passed = build_field(&s, 6.0, true, &p);
        assert_abs_diff_eq!(passed.sigma_long, 0.21, epsilon = 1e-12);

        // Monotone in closing speed on the approach side.
        let mut last = 0.0;
        for dv in [0.0, 2.0, 5.0, 9.0] {
            let f = build_field(&s, dv, false, &p);
            assert!(f.sigma_long > last);
            last = f.sigma_long;
        }
    }

    #[test]
    fn lateral_spread_saturates() {
        let p = FieldParams::default();
        let s = state(0.0, 0.0, 0.0, 30.0);
        let f = build_field(&s, 20.0, false, &p);
        assert_abs_diff_eq!(f.sigma_lat, p.sigma_y_max, epsilon = 1e-12);
    }

    #[test]
    fn world_covariance_aligns_with_heading() {
        let f = PotentialField {
            mean: v(0.0, 0.0),
            heading: std::f64::consts::FRAC_PI_2,
            sigma_long: 3.0,
            sigma_lat: 1.0,
        };
        let c = f.world_cov();
        // Heading +y: longitudinal variance lands on the yy entry.
        assert_abs_diff_eq!(c[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[(1, 1)], 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[(0, 1)], 0.0, epsilon = 1e-12);
    }

    // ------------------------------------------------------------------
    // Joint field
    // ------------------------------------------------------------------

    #[test]
    fn eigen_decomposition_reconstructs_random_covariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a: f64 = rng.gen_range(0.1..9.0);
            let d: f64 = rng.gen_range(0.1..9.0);
            let b: f64 = rng.gen_range(-1.0..1.0) * (a * d).sqrt() * 0.99;
            let m = Matrix2::new(a, b, b, d);
            let (l1, l2, e1, e2) = symmetric_eigen_2x2(&m);
            assert!(l1 >= l2);
            assert!(l2 > 0.0, "psd input must give positive eigenvalues");
            let r1 = m * e1 - e1 * l1;
            let r2 = m * e2 - e2 * l2;
            assert!(r1.norm() < 1e-9 * l1.max(1.0));
            assert!(r2.norm() < 1e-9 * l1.max(1.0));
            assert_abs_diff_eq!(e1.dot(&e2), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn joint_offset_components_are_canonically_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let ego = PotentialField {
                mean: v(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)),
                heading: rng.gen_range(-3.0..3.0),
                sigma_long: rng.gen_range(0.5..8.0),
                sigma_lat: rng.gen_range(0.3..2.0),
            };
            let target = PotentialField {
                mean: v(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)),
                heading: rng.gen_range(-3.0..3.0),
                sigma_long: rng.gen_range(0.5..8.0),
                sigma_lat: rng.gen_range(0.3..2.0),
            };
            let j = joint_field(&ego, &target).unwrap();
            assert!(j.offset.x >= 0.0 && j.offset.y >= 0.0);
            assert!(j.lambda_major >= j.lambda_minor);
        }
    }

    #[test]
    fn joint_pdf_peak_matches_the_unit_determinant_value() {
        // Two unit-circle halves summing to the identity covariance.
        let half = (0.5f64).sqrt();
        let ego = PotentialField {
            mean: v(0.0, 0.0),
            heading: 0.0,
            sigma_long: half,
            sigma_lat: half,
        };
        let target = PotentialField {
            mean: v(3.0, 4.0),
            heading: 1.0,
            sigma_long: half,
            sigma_lat: half,
        };
        let j = joint_field(&ego, &target).unwrap();
        assert_abs_diff_eq!(j.lambda_major, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(j.lambda_minor, 1.0, epsilon = 1e-12);
        let peak = j.pdf(j.offset);
        assert_abs_diff_eq!(peak, 1.59154943091895346e-01, epsilon = 1e-15);
    }

    #[test]
    fn collision_probability_is_invariant_under_scene_rotation() {
        let base_ego = state(0.0, 0.0, 0.5, 20.0);
        let base_target = state(14.0, 3.0, 0.6, 14.0);
        let area = ConflictArea::default();
        let p = FieldParams::default();
        let t = RiskThresholds::default();
        let reference = evaluate_pair(&base_ego, &base_target, &p, &area, &t).unwrap();

        let rot = 0.7f64;
        let (s, c) = rot.sin_cos();
        let spin = |p: Vec2| v(c * p.x - s * p.y, s * p.x + c * p.y);
        let ego = VehicleState {
            position: spin(base_ego.position),
            heading: base_ego.heading + rot,
            ..base_ego
        };
        let target = VehicleState {
            position: spin(base_target.position),
            heading: base_target.heading + rot,
            ..base_target
        };
        let rotated = evaluate_pair(&ego, &target, &p, &area, &t).unwrap();
        assert_abs_diff_eq!(
            rotated.probability,
            reference.probability,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(rotated.delta_v, reference.delta_v, epsilon = 1e-9);
    }

    // ------------------------------------------------------------------
    // Collision probability
    // ------------------------------------------------------------------

    #[test]
    fn probability_over_a_huge_area_approaches_one() {
        let j = JointField {
            lambda_major: 4.0,
            lambda_minor: 1.0,
            offset: v(1.0, 0.5),
            axis_major: v(1.0, 0.0),
            axis_minor: v(0.0, 1.0),
        };
        let area = ConflictArea {
            length: 16.0 * 2.0 + 2.0, // +- 8 sigma around any offset this small
            width: 16.0 * 1.0 + 1.0,
            anchor: AreaAnchor::TargetCentered,
        };
        let p = collision_probability(&j, &area).unwrap();
        assert!((p - 1.0).abs() < 1e-6, "total mass came out as {p}");
    }

    /// Monte Carlo oracle: sample the joint law directly in conflict
    /// coordinates and count rectangle hits.
    fn mc_probability(j: &JointField, area: &ConflictArea, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nx = Normal::new(j.offset.x, j.lambda_major.sqrt()).unwrap();
        let ny = Normal::new(j.offset.y, j.lambda_minor.sqrt()).unwrap();
        let (x0, x1, y0, y1) = area.bounds();
        let mut hits = 0usize;
        for _ in 0..n {
            let x = nx.sample(&mut rng);
            let y = ny.sample(&mut rng);
            if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
                hits += 1;
            }
        }
        hits as f64 / n as f64
    }

    #[test]
    fn quadrature_matches_monte_carlo() {
        let cases = [
            (JointField {
                lambda_major: 47.6,
                lambda_minor: 4.3,
                offset: v(6.1, 1.75),
                axis_major: v(1.0, 0.0),
                axis_minor: v(0.0, 1.0),
            }, ConflictArea::default()),
            (JointField {
                lambda_major: 173.7,
                lambda_minor: 0.85,
                offset: v(20.9, 0.0),
                axis_major: v(1.0, 0.0),
                axis_minor: v(0.0, 1.0),
            }, ConflictArea {
                length: 19.0,
                width: 4.2,
                anchor: AreaAnchor::ApproachSide,
            }),
            (JointField {
                lambda_major: 9.0,
                lambda_minor: 2.0,
                offset: v(0.5, 0.2),
                axis_major: v(1.0, 0.0),
                axis_minor: v(0.0, 1.0),
            }, ConflictArea::default()),
        ];
        for (i, (j, area)) in cases.iter().enumerate() {
            let q = collision_probability(j, area).unwrap();
            let mc = mc_probability(j, area, 200_000, 40 + i as u64);
            assert!(
                (q - mc).abs() < 0.01,
                "case {i}: quadrature {q} vs monte carlo {mc}"
            );
        }
    }

    #[test]
    fn approach_side_anchor_integrates_toward_the_ego() {
        // Mass far on the approach side: the shifted rectangle catches more
        // of it than the centered one.
        let j = JointField {
            lambda_major: 100.0,
            lambda_minor: 1.0,
            offset: v(15.0, 0.0),
            axis_major: v(1.0, 0.0),
            axis_minor: v(0.0, 1.0),
        };
        let centered = collision_probability(&j, &ConflictArea::default()).unwrap();
        let shifted = collision_probability(
            &j,
            &ConflictArea {
                anchor: AreaAnchor::ApproachSide,
                ..ConflictArea::default()
            },
        )
        .unwrap();
        assert!(shifted > centered);
    }

    #[test]
    fn degenerate_area_and_covariance_are_rejected() {
        let j = JointField {
            lambda_major: 1.0,
            lambda_minor: 1.0,
            offset: v(0.0, 0.0),
            axis_major: v(1.0, 0.0),
            axis_minor: v(0.0, 1.0),
        };
        assert!(matches!(
            collision_probability(
                &j,
                &ConflictArea {
                    length: 0.0,
                    ..ConflictArea::default()
                }
            ),
            Err(Error::InvalidConfig(_))
        ));
        let bad = JointField {
            lambda_minor: 0.0,
            ..j
        };
        assert!(matches!(
            collision_probability(&bad, &ConflictArea::default()),
            Err(Error::SingularCovariance(_))
        ));
    }

    // ------------------------------------------------------------------
    // Time to contact and signal
    // ------------------------------------------------------------------

    #[test]
    fn time_to_contact_reference_case() {
        let ttc = time_to_contact(50.0, 4.2, 4.2, 22.22, 15.28);
        assert_abs_diff_eq!(ttc, 6.599423631123919, epsilon = 1e-12);
    }

    #[test]
    fn time_to_contact_edge_cases() {
        assert_eq!(time_to_contact(50.0, 4.2, 4.2, 10.0, 15.0), f64::INFINITY);
        assert_eq!(time_to_contact(50.0, 4.2, 4.2, 10.0, 10.0), f64::INFINITY);
        assert_eq!(time_to_contact(4.0, 4.2, 4.2, 15.0, 10.0), 0.0);
        // Monotone in the gap.
        let near = time_to_contact(20.0, 4.2, 4.2, 15.0, 10.0);
        let far = time_to_contact(40.0, 4.2, 4.2, 15.0, 10.0);
        assert!(near < far);
    }

    #[test]
    fn signal_thresholds() {
        let t = RiskThresholds::default();
        assert_eq!(risk_signal(0.0, &t), RiskSignal::None);
        assert_eq!(risk_signal(0.1499, &t), RiskSignal::None);
        assert_eq!(risk_signal(0.15, &t), RiskSignal::Reminding);
        assert_eq!(risk_signal(0.2999, &t), RiskSignal::Reminding);
        assert_eq!(risk_signal(0.3, &t), RiskSignal::Warning);
        assert_eq!(risk_signal(0.9, &t), RiskSignal::Warning);
        assert!(RiskSignal::None < RiskSignal::Reminding);
        assert!(RiskSignal::Reminding < RiskSignal::Warning);
    }

    // ------------------------------------------------------------------
    // Pair evaluation
    // ------------------------------------------------------------------

    #[test]
    fn pair_evaluation_detects_passing_and_closing() {
        let p = FieldParams::default();
        let area = ConflictArea::default();
        let t = RiskThresholds::default();
        // Ego behind a slower target, same lane, heading +y.
        let ego = state(0.0, 0.0, std::f64::consts::FRAC_PI_2, 22.22);
        let target = state(0.0, 50.0, std::f64::consts::FRAC_PI_2, 15.28);
        let est = evaluate_pair(&ego, &target, &p, &area, &t).unwrap();
        assert!(!est.passed);
        assert_abs_diff_eq!(est.delta_v, 6.94, epsilon = 1e-12);
        assert_abs_diff_eq!(est.time_to_contact, 6.599423631123919, epsilon = 1e-9);

        // At matched longitudinal gaps, the contracted post-pass field
        // carries far less probability than the approach-side field.
        let ego_near = state(0.0, 40.0, std::f64::consts::FRAC_PI_2, 22.22);
        let est_near = evaluate_pair(&ego_near, &target, &p, &area, &t).unwrap();
        assert!(!est_near.passed);
        let ego_ahead = state(0.0, 60.0, std::f64::consts::FRAC_PI_2, 22.22);
        let est2 = evaluate_pair(&ego_ahead, &target, &p, &area, &t).unwrap();
        assert!(est2.passed);
        assert!(est2.probability < 1e-3);
        assert!(est2.probability < est_near.probability);
    }

    #[test]
    fn closer_pairs_carry_more_risk() {
        let p = FieldParams::default();
        let area = ConflictArea::default();
        let t = RiskThresholds::default();
        let ego = state(0.0, 0.0, std::f64::consts::FRAC_PI_2, 20.0);
        let mut last = 1.1;
        for gap in [10.0, 20.0, 30.0, 50.0] {
            let target = state(0.0, gap, std::f64::consts::FRAC_PI_2, 14.0);
            let est = evaluate_pair(&ego, &target, &p, &area, &t).unwrap();
            assert!(
                est.probability < last,
                "gap {gap}: {} not below {last}",
                est.probability
            );
            last = est.probability;
        }
    }
}
