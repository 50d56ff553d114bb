//! Whole-frame lane detection: camera frame in, metric lane templates out.
//!
//! Chain: static attention window -> bird's-eye warp -> adaptive search
//! window -> oriented ridge filter -> sample-space extraction -> per-cluster
//! template search -> conversion of the winning curves to ground meters.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PerceptionConfig;
use crate::geometry::Vec2;
use crate::image::{FloatImage, GrayImage};
use crate::lane::{classify_color, ransac_fit, BezierCurve, ClusterStats, MarkingColor};
use crate::pipeline::{
    build_kernel, compute_dynamic_roi, compute_static_roi, extract_sample_space, warp_to_birdeye,
};
use crate::{Error, Result};

/// Smallest frame edge the detector accepts, px.
pub const MIN_FRAME_EDGE: usize = 16;

/// Curve samples taken when re-expressing a raster-space template in ground
/// coordinates.
const GROUND_FIT_SAMPLES: usize = 64;

/// One detected lane marking in ground coordinates (vehicle frame, meters,
/// x right / y forward). Control-point y values are evenly spaced over the
/// report span, so the curve reads as x being a polynomial in y.
#[derive(Debug, Clone)]
pub struct LaneTemplate {
    pub curve: BezierCurve,
    /// Control-point count: 2 straight, 3 quadratic, 4 cubic.
    pub order: usize,
    pub color: MarkingColor,
    pub score: f64,
    pub likelihood: f64,
    pub credibility: f64,
    pub inlier_count: usize,
    /// Lateral position at the 10 m station; templates are sorted by it.
    pub lateral_m: f64,
}

/// Detection result for one frame.
#[derive(Debug, Clone, Default)]
pub struct Detection {
    /// Accepted templates, left to right.
    pub templates: Vec<LaneTemplate>,
    /// Per-cluster search diagnostics, in cluster order.
    pub cluster_stats: Vec<ClusterStats>,
    pub sample_count: usize,
    pub cluster_count: usize,
    /// Search rectangle on the bird's-eye raster, `(x0, y0, x1, y1)`.
    pub window: (usize, usize, usize, usize),
}

/// Runs the full detection chain on one grayscale frame.
///
/// `speed_mps` grows the search window with ego speed; `lane_change` widens
/// it toward the neighbor lane; `lateral_dev_px` shifts its center by the
/// (signed) current lateral deviation estimate on the raster, 0 when
/// unknown.
pub fn detect_lanes(
    img: &GrayImage,
    cfg: &PerceptionConfig,
    speed_mps: f64,
    lane_change: bool,
    lateral_dev_px: f64,
) -> Result<Detection> {
    cfg.validate()?;
    if img.width() < MIN_FRAME_EDGE || img.height() < MIN_FRAME_EDGE {
        return Err(Error::Image(format!(
            "frame {}x{} below the {}px minimum",
            img.width(),
            img.height(),
            MIN_FRAME_EDGE
        )));
    }

    // Attention window around the vanishing-point estimate.
    let calib = &cfg.calibration;
    let center = (
        calib.cu + cfg.static_roi.dx,
        calib.cv + cfg.static_roi.dy_frac_of_height * img.height() as f64,
    );
    let sroi = compute_static_roi(
        img.width(),
        img.height(),
        cfg.static_roi.k,
        cfg.static_roi.l,
        center,
    )?;

    let warped = warp_to_birdeye(img, calib, &sroi, &cfg.birdeye)?;

    // Speed/intent-adapted search rectangle on the raster.
    let droi = compute_dynamic_roi(
        &cfg.dynamic_roi.base,
        speed_mps,
        lane_change,
        &cfg.dynamic_roi.limits,
    );
    let (wx0, wy0, wx1, wy1) = droi.rect(warped.width(), warped.height(), lateral_dev_px);
    if wx0 >= wx1 || wy0 >= wy1 {
        return Err(Error::EmptyRoi(format!(
            "search window [{wx0},{wx1})x[{wy0},{wy1}) is empty"
        )));
    }
    let (crop_w, crop_h) = (wx1 - wx0, wy1 - wy0);
    let mut crop = FloatImage::new(crop_w, crop_h);
    for py in 0..crop_h {
        for px in 0..crop_w {
            crop.set(px, py, warped.get(wx0 + px, wy0 + py) as f64);
        }
    }

    // Marking-width ridge across, road-length smoothing along.
    let sigma_u = cfg.filter.sigma_u_px;
    let sigma_v = cfg.filter.sigma_v_frac_of_height * crop_h as f64;
    let radius = (cfg.filter.radius_sigmas * sigma_u.max(sigma_v)).ceil() as usize;
    let kernel = build_kernel(0.0, sigma_u, sigma_v, radius)?;
    let response = kernel.apply(&crop);

    let space = extract_sample_space(&response, &cfg.threshold);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.ransac.seed);
    let mut templates = Vec::new();
    let mut cluster_stats = Vec::new();
    for cluster in &space.clusters {
        // Color from the warped luminance under the candidate pixels,
        // weighted by ridge response so stripe centers dominate.
        let mut lum = 0.0f64;
        let mut wsum = 0.0f64;
        for &i in &cluster.point_idx {
            let p = space.points[i];
            let x = (p.x.round() as usize).min(crop_w - 1);
            let y = (p.y.round() as usize).min(crop_h - 1);
            lum += p.weight * warped.get(wx0 + x, wy0 + y) as f64;
            wsum += p.weight;
        }
        let color = if wsum > 0.0 {
            classify_color(lum / wsum, &cfg.color)
        } else {
            MarkingColor::White
        };

        let (fit, stats) = ransac_fit(&space, cluster, crop_h as f64, color, &cfg.ransac, &mut rng);
        cluster_stats.push(stats);
        let Some(fit) = fit else { continue };
        let Some(template) = to_ground_template(&fit.curve, cfg, (wx0, wy0), fit.order).map(
            |(curve, lateral_m)| LaneTemplate {
                curve,
                order: fit.order,
                color,
                score: fit.score,
                likelihood: fit.likelihood,
                credibility: fit.credibility,
                inlier_count: fit.inlier_count,
                lateral_m,
            },
        ) else {
            continue;
        };
        templates.push(template);
    }

    // Keep the strongest, then report left to right.
    templates.sort_by(|a, b| b.score.total_cmp(&a.score));
    templates.truncate(cfg.max_templates);
    templates.sort_by(|a, b| a.lateral_m.total_cmp(&b.lateral_m));

    Ok(Detection {
        templates,
        cluster_stats,
        sample_count: space.len(),
        cluster_count: space.clusters.len(),
        window: (wx0, wy0, wx1, wy1),
    })
}

/// Re-expresses a raster-space template over the full metric report span
/// `[y_min, y_max]` of the bird's-eye raster. The raster curve is sampled,
/// mapped to ground meters, and refit as x = P(y); the polynomial is then
/// written back as a curve whose control-point y values are evenly spaced,
/// which keeps the y(t) mapping linear and x_at_y exact.
fn to_ground_template(
    raster_curve: &BezierCurve,
    cfg: &PerceptionConfig,
    crop_origin: (usize, usize),
    order: usize,
) -> Option<(BezierCurve, f64)> {
    let be = &cfg.birdeye;
    let (lo, hi) = (be.y_min, be.y_max);
    let span = hi - lo;

    let mut s = Vec::with_capacity(GROUND_FIT_SAMPLES);
    let mut x = Vec::with_capacity(GROUND_FIT_SAMPLES);
    for i in 0..GROUND_FIT_SAMPLES {
        let t = i as f64 / (GROUND_FIT_SAMPLES - 1) as f64;
        let p = raster_curve.eval(t).ok()?;
        let g = be.cell_to_ground(crop_origin.0 as f64 + p.x, crop_origin.1 as f64 + p.y);
        s.push((g.y - lo) / span);
        x.push(g.x);
    }

    let coeffs = fit_poly(&s, &x, order - 1)?;
    let vals = poly_to_bezier_1d(&coeffs);
    let m = vals.len() - 1;
    let ctrl = vals
        .iter()
        .enumerate()
        .map(|(i, &v)| Vec2::new(v, lo + span * i as f64 / m as f64))
        .collect();
    let curve = BezierCurve::new(ctrl);

    let station = 10.0f64.clamp(lo, hi);
    let lateral = curve.x_at_y(station)?;
    Some((curve, lateral))
}

/// Least-squares coefficients of x = sum c_k s^k through the samples.
fn fit_poly(s: &[f64], x: &[f64], degree: usize) -> Option<Vec<f64>> {
    let n = s.len();
    if n <= degree {
        return None;
    }
    let a = DMatrix::from_fn(n, degree + 1, |r, c| s[r].powi(c as i32));
    let b = DVector::from_column_slice(x);
    let at = a.transpose();
    let sol = (&at * &a).lu().solve(&(&at * b))?;
    Some(sol.iter().copied().collect())
}

/// Rewrites a power-basis polynomial over [0, 1] as Bernstein control
/// values: p_i = sum_{k<=i} C(i,k)/C(m,k) c_k.
fn poly_to_bezier_1d(coeffs: &[f64]) -> Vec<f64> {
    let m = coeffs.len() - 1;
    (0..=m)
        .map(|i| {
            (0..=i)
                .map(|k| binomial(i, k) / binomial(m, k) * coeffs[k])
                .sum()
        })
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut v = 1.0f64;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}
