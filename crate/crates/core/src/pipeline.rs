//! Front end of lane perception: region-of-interest selection, the inverse
//! perspective warp to a metric bird's-eye raster, directional ridge
//! filtering, and extraction of the weighted candidate-pixel sample space
//! that the template fitter consumes.

use serde::{Deserialize, Serialize};

use crate::geometry::{ground_to_pixel, CameraCalibration, Vec2};
use crate::image::{FloatImage, GrayImage};
use crate::{Error, Result};

// ============================================================================
// Regions of interest
// ============================================================================

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)` in source-image px.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticRoi {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl StaticRoi {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Fixed attention window: a `k * img_w` by `l * img_h` rectangle centered on
/// the vanishing-point estimate (plus configured offsets), clipped to the
/// image. The center is given in image px.
pub fn compute_static_roi(
    img_w: usize,
    img_h: usize,
    k: f64,
    l: f64,
    center: (f64, f64),
) -> Result<StaticRoi> {
    if !(k > 0.0 && k <= 1.0 && l > 0.0 && l <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "roi fractions must lie in (0, 1] (k={k}, l={l})"
        )));
    }
    let half_w = k * img_w as f64 / 2.0;
    let half_h = l * img_h as f64 / 2.0;
    let x0 = (center.0 - half_w).round().max(0.0) as usize;
    let y0 = (center.1 - half_h).round().max(0.0) as usize;
    let x1 = ((center.0 + half_w).round().min(img_w as f64)).max(0.0) as usize;
    let y1 = ((center.1 + half_h).round().min(img_h as f64)).max(0.0) as usize;
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::EmptyRoi(format!(
            "static ROI centered at ({:.1}, {:.1}) misses the {}x{} image",
            center.0, center.1, img_w, img_h
        )));
    }
    Ok(StaticRoi { x0, y0, x1, y1 })
}

/// Search window on the bird's-eye raster. Width/height are in raster px;
/// the window is anchored at the bottom (nearest ground rows) and centered
/// on the vehicle axis, shifted by `deviation_coeff` times the current
/// lateral deviation estimate when one is available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicRoi {
    pub width_px: usize,
    pub height_px: usize,
    /// Lateral deviation weight `a`; lowered when a lane change widens the
    /// search to the neighbor lane.
    pub deviation_coeff: f64,
    /// Extra window height per m/s of ego speed, raster px.
    pub speed_coeff: f64,
}

impl Default for DynamicRoi {
    fn default() -> Self {
        DynamicRoi {
            width_px: 240,
            height_px: 320,
            deviation_coeff: 1.0,
            speed_coeff: 0.8,
        }
    }
}

/// Bounds and gains for the speed/intent adaptation of [`DynamicRoi`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynRoiLimits {
    pub h_min: usize,
    pub h_max: usize,
    /// Width gain applied while a lane change is signalled.
    pub widen: f64,
    /// Multiplier applied to `deviation_coeff` while a lane change is
    /// signalled.
    pub deviation_shrink: f64,
}

impl Default for DynRoiLimits {
    fn default() -> Self {
        DynRoiLimits {
            h_min: 120,
            h_max: 440,
            widen: 1.5,
            deviation_shrink: 0.5,
        }
    }
}

/// Adapts the base window to ego speed and lane-change intent:
/// height grows linearly with speed (clamped), and a signalled lane change
/// widens the window while relaxing the deviation weighting.
pub fn compute_dynamic_roi(
    base: &DynamicRoi,
    speed_mps: f64,
    lane_change: bool,
    limits: &DynRoiLimits,
) -> DynamicRoi {
    let h = base.height_px as f64 + base.speed_coeff * speed_mps.max(0.0);
    let h = h.clamp(limits.h_min as f64, limits.h_max as f64).round() as usize;
    let (w, a) = if lane_change {
        (
            (base.width_px as f64 * limits.widen).round() as usize,
            base.deviation_coeff * limits.deviation_shrink,
        )
    } else {
        (base.width_px, base.deviation_coeff)
    };
    DynamicRoi {
        width_px: w,
        height_px: h,
        deviation_coeff: a,
        speed_coeff: base.speed_coeff,
    }
}

impl DynamicRoi {
    /// Concrete half-open rectangle on a `raster_w x raster_h` bird's-eye
    /// raster. `lateral_dev_px` is the signed lateral deviation estimate of
    /// the vehicle from its lane center (0 when unknown).
    pub fn rect(
        &self,
        raster_w: usize,
        raster_h: usize,
        lateral_dev_px: f64,
    ) -> (usize, usize, usize, usize) {
        let center = raster_w as f64 / 2.0 + self.deviation_coeff * lateral_dev_px;
        let half_w = self.width_px as f64 / 2.0;
        let x0 = (center - half_w).round().clamp(0.0, raster_w as f64) as usize;
        let x1 = (center + half_w).round().clamp(0.0, raster_w as f64) as usize;
        let y1 = raster_h;
        let y0 = raster_h.saturating_sub(self.height_px);
        (x0, y0, x1, y1)
    }
}

// ============================================================================
// Bird's-eye raster
// ============================================================================

/// Metric raster the camera view is warped onto. Columns span
/// `[x_min, x_max]` laterally, rows span `[y_min, y_max]` ahead of the
/// vehicle; the bottom row is the nearest. Cell size `res_m` meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BirdEyeSpec {
    pub res_m: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for BirdEyeSpec {
    fn default() -> Self {
        BirdEyeSpec {
            res_m: 0.05,
            x_min: -7.0,
            x_max: 7.0,
            y_min: 3.0,
            y_max: 25.0,
        }
    }
}

impl BirdEyeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.res_m > 0.0) || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::InvalidConfig(format!(
                "degenerate bird's-eye spec {self:?}"
            )));
        }
        Ok(())
    }

    pub fn cols(&self) -> usize {
        ((self.x_max - self.x_min) / self.res_m).round() as usize
    }

    pub fn rows(&self) -> usize {
        ((self.y_max - self.y_min) / self.res_m).round() as usize
    }

    /// Ground point (vehicle frame, meters) at a raster cell center.
    pub fn cell_to_ground(&self, col: f64, row: f64) -> Vec2 {
        Vec2::new(
            self.x_min + (col + 0.5) * self.res_m,
            self.y_max - (row + 0.5) * self.res_m,
        )
    }

    /// Fractional raster coordinates of a ground point.
    pub fn ground_to_cell(&self, g: Vec2) -> (f64, f64) {
        (
            (g.x - self.x_min) / self.res_m - 0.5,
            (self.y_max - g.y) / self.res_m - 0.5,
        )
    }
}

/// Resamples the camera image onto the metric bird's-eye raster. Every
/// raster cell is projected into the source image and sampled bilinearly;
/// cells whose projection leaves `roi` (or the image) become 0.
pub fn warp_to_birdeye(
    img: &GrayImage,
    calib: &CameraCalibration,
    roi: &StaticRoi,
    spec: &BirdEyeSpec,
) -> Result<GrayImage> {
    calib.validate()?;
    spec.validate()?;
    let cols = spec.cols();
    let rows = spec.rows();
    let mut out = GrayImage::new(cols, rows);
    let bounds = (
        roi.x0,
        roi.y0,
        roi.x1.min(img.width()),
        roi.y1.min(img.height()),
    );
    for row in 0..rows {
        for col in 0..cols {
            let g = spec.cell_to_ground(col as f64, row as f64);
            let Ok((u, v)) = ground_to_pixel(g, calib) else {
                continue;
            };
            if let Some(s) = img.sample_bilinear(u, v, bounds) {
                out.set(col, row, s.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(out)
}

// ============================================================================
// Directional ridge filter
// ============================================================================

/// Separable directional filter: a zero-mean second-derivative profile
/// across the marking (width sigma_u) times a smoothing Gaussian along the
/// road direction (sigma_v), steerable to angle `theta` by forming the
/// rotated composite
///
/// ```text
/// G_theta = cos(theta) * ridge(u) smooth(v)  +  sin(theta) * ridge(v) smooth(u)
/// ```
///
/// with (u, v) the kernel axes rotated by `theta`. At `theta = 0` this
/// collapses to the plain product kernel.
#[derive(Debug, Clone)]
pub struct AnisotropicKernel {
    pub theta: f64,
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub radius: usize,
    /// Zero-mean ridge profile, length 2*radius+1.
    cross_taps: Vec<f64>,
    /// Unit-sum smoothing profile, length 2*radius+1.
    along_taps: Vec<f64>,
    /// Dense (2r+1)^2 grid for theta != 0, row-major, zero mean.
    dense: Option<Vec<f64>>,
}

/// Inclusive index range of the taps whose magnitude still matters; the
/// remainder contribute less than 1e-15 of the peak and can be skipped
/// without measurably changing the convolution.
fn effective_span(taps: &[f64]) -> (usize, usize) {
    let peak = taps.iter().fold(0.0f64, |m, &t| m.max(t.abs()));
    let threshold = peak * 1e-15;
    let lo = taps
        .iter()
        .position(|&t| t.abs() > threshold)
        .unwrap_or(0);
    let hi = taps
        .iter()
        .rposition(|&t| t.abs() > threshold)
        .unwrap_or(taps.len().saturating_sub(1));
    (lo, hi)
}

fn mexican_hat(d: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    (1.0 / s2) * (1.0 - d * d / s2) * (-d * d / (2.0 * s2)).exp()
}

fn gaussian(d: f64, sigma: f64) -> f64 {
    (-d * d / (2.0 * sigma * sigma)).exp()
}

pub fn build_kernel(
    theta: f64,
    sigma_u: f64,
    sigma_v: f64,
    radius: usize,
) -> Result<AnisotropicKernel> {
    if !(sigma_u > 0.0 && sigma_v > 0.0 && sigma_u.is_finite() && sigma_v.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "filter widths must be positive (sigma_u={sigma_u}, sigma_v={sigma_v})"
        )));
    }
    let required = (3.0 * sigma_u.max(sigma_v)).ceil() as usize;
    if radius < required {
        return Err(Error::KernelTruncation { radius, required });
    }

    let n = 2 * radius + 1;
    let mut cross: Vec<f64> = (0..n)
        .map(|i| mexican_hat(i as f64 - radius as f64, sigma_u))
        .collect();
    // Re-center the sampled taps so the discrete filter is exactly zero-mean
    // (the continuous profile integrates to zero; its samples do not).
    let mean = cross.iter().sum::<f64>() / n as f64;
    for t in cross.iter_mut() {
        *t -= mean;
    }

    let mut along: Vec<f64> = (0..n)
        .map(|i| gaussian(i as f64 - radius as f64, sigma_v))
        .collect();
    let sum: f64 = along.iter().sum();
    for t in along.iter_mut() {
        *t /= sum;
    }

    let dense = if theta.abs() < 1e-12 {
        None
    } else {
        let (s, c) = theta.sin_cos();
        let mut grid = vec![0.0f64; n * n];
        for dy in 0..n {
            for dx in 0..n {
                let x = dx as f64 - radius as f64;
                let y = dy as f64 - radius as f64;
                // Kernel-frame coordinates after rotating the axes by theta.
                let u = c * x + s * y;
                let v = -s * x + c * y;
                grid[dy * n + dx] = c * mexican_hat(u, sigma_u) * gaussian(v, sigma_v)
                    + s * mexican_hat(v, sigma_u) * gaussian(u, sigma_v);
            }
        }
        let mean = grid.iter().sum::<f64>() / (n * n) as f64;
        for t in grid.iter_mut() {
            *t -= mean;
        }
        Some(grid)
    };

    Ok(AnisotropicKernel {
        theta,
        sigma_u,
        sigma_v,
        radius,
        cross_taps: cross,
        along_taps: along,
        dense,
    })
}

impl AnisotropicKernel {
    pub fn cross_taps(&self) -> &[f64] {
        &self.cross_taps
    }

    pub fn along_taps(&self) -> &[f64] {
        &self.along_taps
    }

    /// Full tap grid, row-major `(2r+1)^2`. For `theta = 0` this is the
    /// outer product of the separable profiles.
    pub fn dense_taps(&self) -> Vec<f64> {
        if let Some(d) = &self.dense {
            return d.clone();
        }
        let n = 2 * self.radius + 1;
        let mut grid = vec![0.0f64; n * n];
        for dy in 0..n {
            for dx in 0..n {
                grid[dy * n + dx] = self.cross_taps[dx] * self.along_taps[dy];
            }
        }
        grid
    }

    /// Convolves the image with the kernel, replicating edge pixels.
    /// Separable fast path for `theta = 0`, dense otherwise; both equal the
    /// brute-force dense convolution of [`Self::dense_taps`].
    pub fn apply(&self, img: &FloatImage) -> FloatImage {
        let (w, h) = (img.width(), img.height());
        let r = self.radius as isize;
        let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;

        if self.dense.is_none() {
            // Horizontal ridge pass, then vertical smoothing pass. Both
            // profiles share one nominal radius, but when their widths differ
            // the narrow one decays to nothing long before the support ends,
            // so each pass convolves only the taps that still carry weight.
            let (u_lo, u_hi) = effective_span(&self.cross_taps);
            let mut tmp = FloatImage::new(w, h);
            {
                let src = img.data();
                let dst = tmp.data_mut();
                for y in 0..h {
                    let row = &src[y * w..(y + 1) * w];
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    for (x, o) in out_row.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (i, &t) in self.cross_taps[u_lo..=u_hi].iter().enumerate() {
                            let sx = clamp(x as isize + (u_lo + i) as isize - r, w);
                            acc += t * row[sx];
                        }
                        *o = acc;
                    }
                }
            }
            // Accumulate whole source rows into each output row so both
            // passes stream contiguous memory.
            let (v_lo, v_hi) = effective_span(&self.along_taps);
            let mut out = FloatImage::new(w, h);
            {
                let src = tmp.data();
                let dst = out.data_mut();
                for y in 0..h {
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    for i in v_lo..=v_hi {
                        let sy = clamp(y as isize + i as isize - r, h);
                        let t = self.along_taps[i];
                        let in_row = &src[sy * w..(sy + 1) * w];
                        for (o, &s) in out_row.iter_mut().zip(in_row) {
                            *o += t * s;
                        }
                    }
                }
            }
            out
        } else {
            let taps = self.dense.as_ref().unwrap();
            let n = 2 * self.radius + 1;
            let mut out = FloatImage::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for dy in 0..n {
                        let sy = clamp(y as isize + dy as isize - r, h);
                        for dx in 0..n {
                            let sx = clamp(x as isize + dx as isize - r, w);
                            acc += taps[dy * n + dx] * img.get(sx, sy);
                        }
                    }
                    out.set(x, y, acc);
                }
            }
            out
        }
    }
}

// ============================================================================
// Candidate sample space
// ============================================================================

/// Candidate lane-marking pixel: position in the coordinates of the filtered
/// image it was extracted from, with its mean-relative response as weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

/// Contiguous run of admitted columns, one marking candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub col_start: usize,
    pub col_end: usize,
    /// Indices into [`SampleSpace::points`].
    pub point_idx: Vec<usize>,
}

/// Weighted candidate pixels plus their column clustering.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSpace {
    pub points: Vec<SamplePoint>,
    pub clusters: Vec<Cluster>,
    /// Mean-relative column intensity profile (diagnostics).
    pub profile: Vec<f64>,
}

impl SampleSpace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sum of all candidate weights (normalization base for consistency
    /// scores).
    pub fn total_weight(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }
}

/// Mean-relative admission rule for columns of the filter response.
/// A column is admitted when its profile exceeds the profile mean by
/// `column_sigma` standard deviations and clears the absolute floor
/// `min_profile`; admitted columns closer than `max_gap_cols` merge into one
/// cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdRule {
    pub column_sigma: f64,
    pub min_profile: f64,
    pub max_gap_cols: usize,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule {
            column_sigma: 1.0,
            min_profile: 0.0,
            max_gap_cols: 2,
        }
    }
}

/// Compresses the filter response into a column profile, thresholds it, and
/// returns the admitted pixels with mean-relative weights. All statistics
/// are taken relative to the response mean, so adding a constant offset to
/// `filtered` does not change the result.
pub fn extract_sample_space(filtered: &FloatImage, rule: &ThresholdRule) -> SampleSpace {
    let (w, h) = (filtered.width(), filtered.height());
    if w == 0 || h == 0 {
        return SampleSpace::default();
    }
    let mean = filtered.data().iter().sum::<f64>() / (w * h) as f64;

    // Column sums of the centered response.
    let mut profile = vec![0.0f64; w];
    for y in 0..h {
        for x in 0..w {
            profile[x] += filtered.get(x, y) - mean;
        }
    }
    let p_mean = profile.iter().sum::<f64>() / w as f64;
    let p_var = profile.iter().map(|p| (p - p_mean) * (p - p_mean)).sum::<f64>() / w as f64;
    let p_std = p_var.sqrt();

    let admitted: Vec<usize> = (0..w)
        .filter(|&x| profile[x] > p_mean + rule.column_sigma * p_std && profile[x] > rule.min_profile)
        .collect();

    let mut space = SampleSpace {
        profile,
        ..Default::default()
    };
    if admitted.is_empty() {
        return space;
    }

    // Group admitted columns into runs, tolerating small gaps.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = admitted[0];
    let mut prev = admitted[0];
    for &col in &admitted[1..] {
        if col - prev > rule.max_gap_cols + 1 {
            runs.push((start, prev));
            start = col;
        }
        prev = col;
    }
    runs.push((start, prev));

    for (c0, c1) in runs {
        let mut idx = Vec::new();
        for x in c0..=c1 {
            for y in 0..h {
                let v = filtered.get(x, y) - mean;
                if v > 0.0 {
                    idx.push(space.points.len());
                    space.points.push(SamplePoint {
                        x: x as f64,
                        y: y as f64,
                        weight: v,
                    });
                }
            }
        }
        space.clusters.push(Cluster {
            col_start: c0,
            col_end: c1,
            point_idx: idx,
        });
    }
    space
}
