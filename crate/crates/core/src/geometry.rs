//! Camera calibration and ground-plane geometry.
//!
//! One pinhole camera is mounted at height `h` above a locally flat road,
//! pitched down by `pitch` and yawed by `yaw` relative to the vehicle frame.
//!
//! Frames:
//!
//! ```text
//! vehicle frame: x lateral (right positive), y forward, z up,
//!                origin on the ground directly below the optical center
//! camera frame:  x left, y down, z along the optical axis
//! image frame:   u right, v down, origin top-left, units px
//! ```
//!
//! Everything here is f64; the projective guard rejects homogeneous scale
//! factors below `W_EPS` instead of dividing by a near-zero denominator.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Homogeneous / ray denominators smaller than this are treated as zero.
pub const W_EPS: f64 = 1e-9;

/// 2-D point or offset in whatever frame the context dictates.
pub type Vec2 = Vector2<f64>;

/// Intrinsics plus mounting extrinsics of the forward camera.
///
/// `fu`, `fv` are focal lengths in px, `(cu, cv)` the principal point in px,
/// `h` the optical-center height in meters, `pitch` the downward tilt and
/// `yaw` the heading offset, both in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraCalibration {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    pub h: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Default for CameraCalibration {
    fn default() -> Self {
        CameraCalibration {
            fu: 800.0,
            fv: 800.0,
            cu: 320.0,
            cv: 240.0,
            h: 1.2,
            pitch: 0.05,
            yaw: 0.0,
        }
    }
}

impl CameraCalibration {
    /// Checks the physical plausibility constraints: positive focal lengths,
    /// positive mounting height, both angles strictly inside (-pi/2, pi/2).
    pub fn validate(&self) -> Result<()> {
        if !(self.fu > 0.0 && self.fv > 0.0) {
            return Err(Error::InvalidCalibration(format!(
                "focal lengths must be positive (fu={}, fv={})",
                self.fu, self.fv
            )));
        }
        if !(self.h > 0.0) {
            return Err(Error::InvalidCalibration(format!(
                "camera height must be positive (h={})",
                self.h
            )));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.pitch.abs() < half_pi) || !(self.yaw.abs() < half_pi) {
            return Err(Error::InvalidCalibration(format!(
                "pitch and yaw must lie strictly inside (-pi/2, pi/2) (pitch={}, yaw={})",
                self.pitch, self.yaw
            )));
        }
        if !(self.fu.is_finite()
            && self.fv.is_finite()
            && self.cu.is_finite()
            && self.cv.is_finite()
            && self.h.is_finite())
        {
            return Err(Error::InvalidCalibration("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Camera basis vectors expressed in the vehicle frame:
    /// (left, down, forward). Orthonormal for any pitch/yaw.
    fn camera_axes(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let (s1, c1) = self.pitch.sin_cos();
        let (s2, c2) = self.yaw.sin_cos();
        // Optical axis: forward, yawed right by `yaw`, tilted down by `pitch`.
        let fwd = Vector3::new(c1 * s2, c1 * c2, -s1);
        let left = Vector3::new(-c2, s2, 0.0);
        let down = Vector3::new(-s1 * s2, -s1 * c2, -c1);
        (left, down, fwd)
    }

    /// Image row of the horizon (ground rays become parallel). Pixels at or
    /// above this row do not intersect the road plane ahead.
    pub fn horizon_row(&self) -> f64 {
        self.cv - self.fv * self.pitch.tan()
    }
}

/// Planar pose: position in meters, heading in radians, world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2D {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Unit heading vector.
    pub fn heading(&self) -> Vec2 {
        Vec2::new(self.theta.cos(), self.theta.sin())
    }
}

/// Frame a covariance or offset is expressed in. Conversions happen only
/// through the functions of this crate, never by reinterpreting raw numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    /// Axes aligned with one vehicle's heading.
    VehicleLocal,
    /// Shared scenario frame.
    World,
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let a = (theta + std::f64::consts::PI).rem_euclid(two_pi);
    if a == 0.0 {
        std::f64::consts::PI
    } else {
        a - std::f64::consts::PI
    }
}

/// Counter-clockwise planar rotation matrix.
pub fn rotation_matrix(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Homogeneous image-to-ground transform of the inverse perspective mapping,
/// with shorthand c1 = cos(pitch), c2 = cos(yaw), s1 = sin(pitch),
/// s2 = sin(yaw):
///
/// ```text
///     | -h/fu c2      h/fv s1 s2    h/fu cu c2 - h/fv cv s1 s2 - h c1 s2   0 |
/// T = |  h/fu s2      h/fv s1 c1   -h/fu cu c2 - h/fv cv s1 c2 - h c1 c2   0 |
///     |  0            h/fv c1      -h/fv cv c1 + h s1                      0 |
///     |  0           -1/fv c1       1/fv cv c1 - s1                        0 |
/// ```
///
/// Rows 1-3 scale linearly with the mounting height; the last row carries
/// the perspective division and is height-free.
pub fn build_ipm_matrix(calib: &CameraCalibration) -> Result<Matrix4<f64>> {
    calib.validate()?;
    let (s1, c1) = calib.pitch.sin_cos();
    let (s2, c2) = calib.yaw.sin_cos();
    let (h, fu, fv, cu, cv) = (calib.h, calib.fu, calib.fv, calib.cu, calib.cv);

    #[rustfmt::skip]
    let t = Matrix4::new(
        -h / fu * c2,  h / fv * s1 * s2,  h / fu * cu * c2 - h / fv * cv * s1 * s2 - h * c1 * s2, 0.0,
         h / fu * s2,  h / fv * s1 * c1, -h / fu * cu * c2 - h / fv * cv * s1 * c2 - h * c1 * c2, 0.0,
         0.0,          h / fv * c1,      -h / fv * cv * c1 + h * s1,                              0.0,
         0.0,         -1.0 / fv * c1,     1.0 / fv * cv * c1 - s1,                                0.0,
    );
    Ok(t)
}

/// Intersects the viewing ray of pixel `(u, v)` with the road plane and
/// returns the ground point in the vehicle frame (meters).
///
/// Fails for pixels at or above the horizon: their rays never reach the
/// ground ahead of the vehicle.
pub fn pixel_to_ground(u: f64, v: f64, calib: &CameraCalibration) -> Result<Vec2> {
    calib.validate()?;
    let (left, down, fwd) = calib.camera_axes();
    // Normalized camera-frame ray components; u grows rightward while the
    // camera x axis points left, hence the sign flip.
    let a = (calib.cu - u) / calib.fu;
    let b = (v - calib.cv) / calib.fv;
    let ray = a * left + b * down + fwd;
    if ray.z >= -W_EPS {
        return Err(Error::NoGroundIntersection { u, v });
    }
    let t = -calib.h / ray.z;
    Ok(Vec2::new(t * ray.x, t * ray.y))
}

/// Projects a vehicle-frame ground point (meters) into the image (px).
/// Inverse of [`pixel_to_ground`] wherever both are defined.
pub fn ground_to_pixel(ground: Vec2, calib: &CameraCalibration) -> Result<(f64, f64)> {
    calib.validate()?;
    let (left, down, fwd) = calib.camera_axes();
    let p = Vector3::new(ground.x, ground.y, -calib.h);
    let z = p.dot(&fwd);
    if z <= W_EPS {
        return Err(Error::BehindCamera {
            x: ground.x,
            y: ground.y,
        });
    }
    let u = calib.cu - calib.fu * p.dot(&left) / z;
    let v = calib.cv + calib.fv * p.dot(&down) / z;
    Ok((u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn test_calib() -> CameraCalibration {
        CameraCalibration {
            fu: 800.0,
            fv: 800.0,
            cu: 320.0,
            cv: 240.0,
            h: 1.2,
            pitch: 0.05,
            yaw: 0.02,
        }
    }

    /// Symbolic per-entry evaluation of the transform, written out
    /// independently of the implementation, plus the frozen numbers it
    /// produced for the reference calibration.
    #[test]
    fn ipm_matrix_matches_symbolic_entries() {
        let calib = test_calib();
        let t = build_ipm_matrix(&calib).unwrap();

        let (c1, s1) = (calib.pitch.cos(), calib.pitch.sin());
        let (c2, s2) = (calib.yaw.cos(), calib.yaw.sin());
        let (h, fu, fv, cu, cv) = (calib.h, calib.fu, calib.fv, calib.cu, calib.cv);
        let expected = [
            [
                -(h / fu) * c2,
                (h / fv) * s1 * s2,
                (h / fu) * cu * c2 - (h / fv) * cv * s1 * s2 - h * c1 * s2,
                0.0,
            ],
            [
                (h / fu) * s2,
                (h / fv) * s1 * c1,
                -(h / fu) * cu * c2 - (h / fv) * cv * s1 * c2 - h * c1 * c2,
                0.0,
            ],
            [0.0, (h / fv) * c1, -(h / fv) * cv * c1 + h * s1, 0.0],
            [0.0, -(1.0 / fv) * c1, (1.0 / fv) * cv * c1 - s1, 0.0],
        ];
        for r in 0..4 {
            for c in 0..4 {
                assert_abs_diff_eq!(t[(r, c)], expected[r][c], epsilon = 1e-15);
            }
        }

        // Frozen values from the same per-entry evaluation.
        let frozen = [
            [
                -1.49970000999986668e-03,
                1.49927512178095638e-06,
                4.55575768889707633e-01,
                0.0,
            ],
            [
                2.99980000399996196e-05,
                7.48750624851211123e-05,
                -1.69615352615852255e+00,
                0.0,
            ],
            [
                0.0,
                1.49812539059244955e-03,
                -2.99575090617373863e-01,
                0.0,
            ],
            [
                0.0,
                -1.24843782549370792e-03,
                2.49645908847811543e-01,
                0.0,
            ],
        ];
        for r in 0..4 {
            for c in 0..4 {
                assert_abs_diff_eq!(t[(r, c)], frozen[r][c], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn ipm_matrix_level_camera_reduction() {
        // pitch = yaw = 0: s1 = s2 = 0, c1 = c2 = 1.
        let calib = CameraCalibration {
            pitch: 0.0,
            yaw: 0.0,
            ..test_calib()
        };
        let t = build_ipm_matrix(&calib).unwrap();
        let (h, fu, fv, cu, cv) = (calib.h, calib.fu, calib.fv, calib.cu, calib.cv);

        #[rustfmt::skip]
        let expected = [
            -h / fu, 0.0,       h * cu / fu,       0.0,
            0.0,     0.0,      -h * cu / fu - h,   0.0,
            0.0,     h / fv,   -h * cv / fv,       0.0,
            0.0,     -1.0 / fv, cv / fv,           0.0,
        ];
        for (i, &e) in expected.iter().enumerate() {
            assert_abs_diff_eq!(t[(i / 4, i % 4)], e, epsilon = 1e-15);
        }
    }

    #[test]
    fn ipm_matrix_height_scales_first_three_rows() {
        let base = test_calib();
        let doubled = CameraCalibration {
            h: 2.0 * base.h,
            ..base
        };
        let t1 = build_ipm_matrix(&base).unwrap();
        let t2 = build_ipm_matrix(&doubled).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert_abs_diff_eq!(t2[(r, c)], 2.0 * t1[(r, c)], epsilon = 1e-15);
            }
        }
        for c in 0..4 {
            assert_abs_diff_eq!(t2[(3, c)], t1[(3, c)], epsilon = 1e-15);
        }
    }

    #[test]
    fn ipm_matrix_rejects_degenerate_angles() {
        let bad = CameraCalibration {
            pitch: std::f64::consts::FRAC_PI_2,
            ..test_calib()
        };
        assert!(matches!(
            build_ipm_matrix(&bad),
            Err(Error::InvalidCalibration(_))
        ));
        let bad_h = CameraCalibration {
            h: 0.0,
            ..test_calib()
        };
        assert!(build_ipm_matrix(&bad_h).is_err());
    }

    #[test]
    fn principal_column_maps_to_zero_lateral_offset() {
        // Zero yaw: the principal column looks straight down the road.
        let calib = CameraCalibration {
            yaw: 0.0,
            ..test_calib()
        };
        for v in [300.0, 350.0, 420.0, 479.0] {
            let g = pixel_to_ground(calib.cu, v, &calib).unwrap();
            assert_abs_diff_eq!(g.x, 0.0, epsilon = 1e-12);
            assert!(g.y > 0.0);
        }
    }

    #[test]
    fn horizon_row_has_no_ground_intersection() {
        let calib = test_calib();
        let vh = calib.horizon_row();
        assert!(matches!(
            pixel_to_ground(320.0, vh, &calib),
            Err(Error::NoGroundIntersection { .. })
        ));
        // Above the horizon is just as hopeless.
        assert!(pixel_to_ground(320.0, vh - 10.0, &calib).is_err());
        // Just below it, the ray lands (far away).
        let g = pixel_to_ground(320.0, vh + 5.0, &calib).unwrap();
        assert!(g.y > 50.0);
    }

    #[test]
    fn nearer_image_rows_are_nearer_ground_points() {
        let calib = test_calib();
        let far = pixel_to_ground(320.0, 300.0, &calib).unwrap();
        let near = pixel_to_ground(320.0, 450.0, &calib).unwrap();
        assert!(near.y < far.y);
        assert!(near.y > 0.0);
    }

    #[test]
    fn ground_pixel_round_trip_below_half_pixel() {
        let calib = test_calib();
        for &(u, v) in &[
            (320.0, 300.0),
            (100.5, 350.25),
            (600.0, 470.0),
            (10.0, 250.0),
        ] {
            let g = pixel_to_ground(u, v, &calib).unwrap();
            let (u2, v2) = ground_to_pixel(g, &calib).unwrap();
            assert!(
                (u - u2).hypot(v - v2) < 0.5,
                "round trip drifted: ({u},{v}) -> ({u2},{v2})"
            );
        }
    }

    #[test]
    fn angle_normalization_covers_boundaries() {
        use std::f64::consts::PI;
        assert_abs_diff_eq!(normalize_angle(PI), PI);
        assert_abs_diff_eq!(normalize_angle(-PI), PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI), PI);
        assert_abs_diff_eq!(normalize_angle(0.0), 0.0);
        assert_abs_diff_eq!(normalize_angle(2.5 * PI), 0.5 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-0.5 * PI), -0.5 * PI);
    }

    #[test]
    fn rotation_matrix_basics() {
        let r = rotation_matrix(std::f64::consts::FRAC_PI_2);
        let v = r * Vec2::new(1.0, 0.0);
        assert_abs_diff_eq!(v.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.y, 1.0, epsilon = 1e-15);
        // Orthonormality: R * R^T = I.
        let i = r * r.transpose();
        assert_abs_diff_eq!(i[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(i[(0, 1)], 0.0, epsilon = 1e-15);
    }
}
