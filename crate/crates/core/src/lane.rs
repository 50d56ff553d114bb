//! Lane-marking templates: Bezier curves fitted to the candidate sample
//! space, scored for pixel consistency and shape credibility, and selected
//! per cluster by a RANSAC search that escalates the template order only
//! when a simpler template cannot explain the cluster.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::pipeline::{Cluster, SampleSpace};
use crate::{Error, Result};

// ============================================================================
// Bezier curve
// ============================================================================

/// Polynomial template of order `ctrl.len()` (control-point count); a
/// template of order N traces a degree N-1 polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct BezierCurve {
    pub ctrl: Vec<Vec2>,
}

/// In-place de Casteljau reduction; `pts` must be non-empty.
#[inline]
fn de_casteljau(pts: &mut [Vec2], t: f64) -> Vec2 {
    for level in (1..pts.len()).rev() {
        for i in 0..level {
            pts[i] = pts[i] * (1.0 - t) + pts[i + 1] * t;
        }
    }
    pts[0]
}

impl BezierCurve {
    pub fn new(ctrl: Vec<Vec2>) -> Self {
        assert!(ctrl.len() >= 2, "a curve needs at least two control points");
        BezierCurve { ctrl }
    }

    pub fn order(&self) -> usize {
        self.ctrl.len()
    }

    /// Point at parameter `t` in `[0, 1]` (de Casteljau recursion).
    pub fn eval(&self, t: f64) -> Result<Vec2> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::CurveDomain(t));
        }
        Ok(self.eval_unchecked(t))
    }

    fn eval_unchecked(&self, t: f64) -> Vec2 {
        // Stack buffer keeps the hot path allocation-free; template orders
        // are tiny, so the spill branch is effectively dead.
        if self.ctrl.len() <= 8 {
            let mut pts = [Vec2::zeros(); 8];
            pts[..self.ctrl.len()].copy_from_slice(&self.ctrl);
            return de_casteljau(&mut pts[..self.ctrl.len()], t);
        }
        let mut pts = self.ctrl.clone();
        de_casteljau(&mut pts, t)
    }

    /// First derivative with respect to `t`.
    pub fn derivative(&self, t: f64) -> Vec2 {
        let n = self.ctrl.len();
        let deg = (n - 1) as f64;
        if n <= 8 {
            let mut hodo = [Vec2::zeros(); 7];
            for (h, w) in hodo.iter_mut().zip(self.ctrl.windows(2)) {
                *h = (w[1] - w[0]) * deg;
            }
            return de_casteljau(&mut hodo[..n - 1], t);
        }
        let mut hodo: Vec<Vec2> = self
            .ctrl
            .windows(2)
            .map(|w| (w[1] - w[0]) * deg)
            .collect();
        de_casteljau(&mut hodo, t)
    }

    fn second_derivative(&self, t: f64) -> Vec2 {
        let n = self.ctrl.len();
        if n < 3 {
            return Vec2::zeros();
        }
        let d1 = (n - 1) as f64;
        let d2 = (n - 2) as f64;
        if n <= 8 {
            let mut hodo = [Vec2::zeros(); 6];
            for i in 0..n - 2 {
                hodo[i] =
                    (self.ctrl[i + 2] - self.ctrl[i + 1] * 2.0 + self.ctrl[i]) * (d1 * d2);
            }
            return de_casteljau(&mut hodo[..n - 2], t);
        }
        let mut hodo: Vec<Vec2> = (0..n - 2)
            .map(|i| (self.ctrl[i + 2] - self.ctrl[i + 1] * 2.0 + self.ctrl[i]) * (d1 * d2))
            .collect();
        de_casteljau(&mut hodo, t)
    }

    /// Parameter of the point on the curve nearest to `p`: coarse scan
    /// followed by Newton steps on the stationarity condition
    /// `(B(t) - p) . B'(t) = 0`, clamped to `[0, 1]`.
    pub fn project(&self, p: Vec2) -> f64 {
        let mut best_t = 0.0;
        let mut best_d = f64::MAX;
        for i in 0..=32 {
            let t = i as f64 / 32.0;
            let d = (self.eval_unchecked(t) - p).norm_squared();
            if d < best_d {
                best_d = d;
                best_t = t;
            }
        }
        let mut t = best_t;
        for _ in 0..16 {
            let b = self.eval_unchecked(t);
            let d1 = self.derivative(t);
            let d2 = self.second_derivative(t);
            let g = (b - p).dot(&d1);
            let gp = d1.norm_squared() + (b - p).dot(&d2);
            if gp.abs() < 1e-18 {
                break;
            }
            let next = (t - g / gp).clamp(0.0, 1.0);
            if !next.is_finite() || (next - t).abs() < 1e-14 {
                t = if next.is_finite() { next } else { t };
                break;
            }
            t = next;
        }
        if (self.eval_unchecked(t) - p).norm_squared() <= best_d {
            t
        } else {
            best_t
        }
    }

    /// Parameter where the curve's y component crosses `y`, or `None` when
    /// `y` lies outside the curve's y range. Bisection; intended for the
    /// road-aligned curves this crate produces, whose y component is
    /// monotone in `t`.
    pub fn solve_t_for_y(&self, y: f64) -> Option<f64> {
        let ya = self.eval_unchecked(0.0).y;
        let yb = self.eval_unchecked(1.0).y;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let (ymin, ymax) = (ya.min(yb), ya.max(yb));
        if y < ymin - 1e-12 || y > ymax + 1e-12 {
            return None;
        }
        let rising = yb >= ya;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let ym = self.eval_unchecked(mid).y;
            if (ym < y) == rising {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// Lateral x offset of the curve at a given y, if the curve reaches it.
    pub fn x_at_y(&self, y: f64) -> Option<f64> {
        self.solve_t_for_y(y).map(|t| self.eval_unchecked(t).x)
    }
}

/// Power-basis conversion matrix: entry `[c][i]` is the coefficient of
/// `t^(n-c)` in the i-th basis polynomial of an (n+1)-point template,
///
/// ```text
/// M[c][i] = C(n,i) * C(n-i, n-c-i) * (-1)^(n-c-i)
/// ```
///
/// so row 0 holds the highest power. Out-of-range combinations are zero.
pub fn bernstein_matrix(n_ctrl: usize) -> DMatrix<f64> {
    assert!(n_ctrl >= 2);
    let n = n_ctrl - 1;
    let binom = |a: usize, b: usize| -> f64 {
        if b > a {
            return 0.0;
        }
        let mut v = 1.0f64;
        for k in 0..b.min(a - b) {
            v = v * (a - k) as f64 / (k + 1) as f64;
        }
        v
    };
    DMatrix::from_fn(n_ctrl, n_ctrl, |c, i| {
        if n < c + i {
            return 0.0;
        }
        let e = n - c - i;
        let sign = if e % 2 == 0 { 1.0 } else { -1.0 };
        binom(n, i) * binom(n - i, e) * sign
    })
}

/// Basis-function values `B_i(t)` for an (n+1)-point template, evaluated
/// through the power-basis matrix.
fn basis_row(m: &DMatrix<f64>, t: f64) -> Vec<f64> {
    let n_ctrl = m.ncols();
    let n = n_ctrl - 1;
    // powers[c] = t^(n-c), matching the matrix row convention.
    let mut powers = vec![1.0f64; n_ctrl];
    for c in (0..n).rev() {
        powers[c] = powers[c + 1] * t;
    }
    (0..n_ctrl)
        .map(|i| (0..n_ctrl).map(|c| powers[c] * m[(c, i)]).sum())
        .collect()
}

// ============================================================================
// Fitting
// ============================================================================

/// Normalized chord-length parameters for an ordered point run. Consecutive
/// duplicates (or an all-coincident run) have no usable arc length.
pub fn chord_length_params(points: &[Vec2]) -> Result<Vec<f64>> {
    let mut t = Vec::with_capacity(points.len());
    t.push(0.0);
    let mut acc = 0.0;
    for w in points.windows(2) {
        let d = (w[1] - w[0]).norm();
        if d < 1e-12 {
            return Err(Error::DegenerateParameterization);
        }
        acc += d;
        t.push(acc);
    }
    if acc < 1e-12 {
        return Err(Error::DegenerateParameterization);
    }
    for v in t.iter_mut() {
        *v /= acc;
    }
    Ok(t)
}

fn solve_least_squares(
    m: &DMatrix<f64>,
    points: &[Vec2],
    params: &[f64],
    n_ctrl: usize,
) -> Result<BezierCurve> {
    let rows = points.len();
    let mut a = DMatrix::<f64>::zeros(rows, n_ctrl);
    let mut bx = DMatrix::<f64>::zeros(rows, 2);
    for (j, (&t, p)) in params.iter().zip(points).enumerate() {
        for (i, v) in basis_row(m, t).into_iter().enumerate() {
            a[(j, i)] = v;
        }
        bx[(j, 0)] = p.x;
        bx[(j, 1)] = p.y;
    }
    let sol = if rows == n_ctrl {
        a.lu().solve(&bx)
    } else {
        let at = a.transpose();
        (&at * &a).lu().solve(&(&at * &bx))
    }
    .ok_or(Error::DegenerateParameterization)?;
    Ok(BezierCurve::new(
        (0..n_ctrl).map(|i| Vec2::new(sol[(i, 0)], sol[(i, 1)])).collect(),
    ))
}

/// Fits an `n_ctrl`-point template to an ordered point run: chord-length
/// initialization, then alternating least squares and foot-point parameter
/// refinement. Noise-free samples of a same-order curve are recovered to
/// machine precision.
pub fn fit_control_points(points: &[Vec2], n_ctrl: usize) -> Result<BezierCurve> {
    // The damped joint step spends its first few rounds shrinking the
    // damping before convergence turns quadratic; 16 rounds covers every
    // template order with margin.
    fit_with_refinement(points, n_ctrl, 16)
}

pub fn fit_with_refinement(
    points: &[Vec2],
    n_ctrl: usize,
    refine_iters: usize,
) -> Result<BezierCurve> {
    if !(2..=8).contains(&n_ctrl) {
        return Err(Error::InvalidConfig(format!(
            "template order {n_ctrl} out of range"
        )));
    }
    if points.len() < n_ctrl {
        return Err(Error::TooFewSamples {
            got: points.len(),
            need: n_ctrl,
            order: n_ctrl,
        });
    }
    let m = bernstein_matrix(n_ctrl);
    let mut params = chord_length_params(points)?;
    let mut curve = solve_least_squares(&m, points, &params, n_ctrl)?;
    if points.len() == n_ctrl {
        // Interpolation: the system is square, residuals are already zero.
        return Ok(curve);
    }

    // Joint Gauss-Newton over control points and the interior sample
    // parameters, Levenberg-damped. The first and last parameters stay
    // pinned at 0 and 1, fixing the parameter gauge so the fitted segment
    // spans the sample run. Alternating projection/least-squares rounds
    // converge linearly with a ratio near one on these curves; the joint
    // step reaches the zero-residual solution quadratically.
    let n_pts = points.len();
    let n_vars = 2 * n_ctrl + n_pts - 2;
    let mut ssq = residual_ssq(&curve, &params, points);
    let mut lambda = 1e-3f64;
    let mut steps = 0usize;
    'outer: while steps < refine_iters && ssq > 1e-20 {
        let mut jac = DMatrix::<f64>::zeros(2 * n_pts, n_vars);
        let mut res = DVector::<f64>::zeros(2 * n_pts);
        for (i, (&t, p)) in params.iter().zip(points).enumerate() {
            let b = curve.eval_unchecked(t);
            res[2 * i] = b.x - p.x;
            res[2 * i + 1] = b.y - p.y;
            for (j, v) in basis_row(&m, t).into_iter().enumerate() {
                jac[(2 * i, j)] = v;
                jac[(2 * i + 1, n_ctrl + j)] = v;
            }
            if i > 0 && i < n_pts - 1 {
                let d = curve.derivative(t);
                jac[(2 * i, 2 * n_ctrl + i - 1)] = d.x;
                jac[(2 * i + 1, 2 * n_ctrl + i - 1)] = d.y;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;

        loop {
            let mut damped = jtj.clone();
            for k in 0..n_vars {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = damped.lu().solve(&(-&jtr));
            let improved = step.and_then(|delta| {
                let ctrl: Vec<Vec2> = (0..n_ctrl)
                    .map(|j| {
                        curve.ctrl[j] + Vec2::new(delta[j], delta[n_ctrl + j])
                    })
                    .collect();
                let trial_curve = BezierCurve::new(ctrl);
                let mut trial_params = params.clone();
                for (i, tp) in trial_params.iter_mut().enumerate().take(n_pts - 1).skip(1) {
                    *tp = (*tp + delta[2 * n_ctrl + i - 1]).clamp(0.0, 1.0);
                }
                let trial_ssq = residual_ssq(&trial_curve, &trial_params, points);
                (trial_ssq < ssq).then_some((trial_curve, trial_params, trial_ssq))
            });
            match improved {
                Some((c, p, s)) => {
                    let relative_gain = (ssq - s) / ssq.max(1e-300);
                    curve = c;
                    params = p;
                    ssq = s;
                    lambda = (lambda * 0.3).max(1e-12);
                    steps += 1;
                    if relative_gain < 1e-12 {
                        break 'outer;
                    }
                    break;
                }
                None => {
                    lambda *= 10.0;
                    if lambda > 1e12 {
                        break 'outer;
                    }
                }
            }
        }
    }
    Ok(curve)
}

fn residual_ssq(curve: &BezierCurve, params: &[f64], points: &[Vec2]) -> f64 {
    params
        .iter()
        .zip(points)
        .map(|(&t, p)| (curve.eval_unchecked(t) - p).norm_squared())
        .sum()
}

/// A few Newton steps on the foot-point condition `(B(t) - p) . B'(t) = 0`
/// from a warm start, clamped to `[0, 1]`. Unlike [`BezierCurve::project`]
/// there is no global scan, so this is only safe when `t0` is already near
/// the right foot.
fn newton_foot(curve: &BezierCurve, p: Vec2, t0: f64) -> f64 {
    let mut t = t0;
    for _ in 0..4 {
        let b = curve.eval_unchecked(t);
        let d1 = curve.derivative(t);
        let d2 = curve.second_derivative(t);
        let g = (b - p).dot(&d1);
        let gp = d1.norm_squared() + (b - p).dot(&d2);
        if gp.abs() < 1e-18 {
            break;
        }
        let next = t - g / gp;
        if !next.is_finite() {
            break;
        }
        let next = next.clamp(0.0, 1.0);
        let done = (next - t).abs() < 1e-12;
        t = next;
        if done {
            break;
        }
    }
    t
}

/// Cheap fit used inside the consensus sampling loop: chord-length
/// initialization, a least-squares solve, then `rounds` alternations of
/// warm-started foot-point updates and re-solving. Much looser than
/// [`fit_with_refinement`] but a small fraction of its cost; the winning
/// candidate gets the full joint refinement afterwards.
fn quick_refit(points: &[Vec2], n_ctrl: usize, rounds: usize) -> Result<BezierCurve> {
    if points.len() < n_ctrl {
        return Err(Error::TooFewSamples {
            got: points.len(),
            need: n_ctrl,
            order: n_ctrl,
        });
    }
    let m = bernstein_matrix(n_ctrl);
    let mut params = chord_length_params(points)?;
    let mut curve = solve_least_squares(&m, points, &params, n_ctrl)?;
    if points.len() == n_ctrl {
        return Ok(curve);
    }
    for _ in 0..rounds {
        for (p, t) in points.iter().zip(params.iter_mut()) {
            *t = newton_foot(&curve, *p, *t);
        }
        match solve_least_squares(&m, points, &params, n_ctrl) {
            Ok(c) => curve = c,
            Err(_) => break,
        }
    }
    Ok(curve)
}

// ============================================================================
// Band membership
// ============================================================================

/// Piecewise-linear sampling of a curve with per-row segment buckets, for
/// fast distance-to-curve queries against many candidate pixels.
struct CurveBand {
    stations: Vec<Vec2>,
    /// buckets[row] lists segment indices whose band may cover that row.
    buckets: Vec<Vec<u32>>,
    row_lo: isize,
}

const BAND_SEGMENTS: usize = 256;

impl CurveBand {
    /// `rows` is the row window of the candidate set. The hypothesis is
    /// extended along its polynomial beyond `t` in `[0, 1]` until it leaves
    /// that window (or a hard parameter cap), so a template fitted on part
    /// of a marking collects supporters over the marking's whole extent;
    /// two samples drawn from the middle rows still reach both ends.
    fn new(curve: &BezierCurve, band_px: f64, rows: (f64, f64)) -> Self {
        let pad = band_px + 1.0;
        let (win_lo, win_hi) = (rows.0 - pad, rows.1 + pad);
        let inside = |t: f64| {
            let y = curve.eval_unchecked(t).y;
            y >= win_lo && y <= win_hi
        };
        const T_STEP: f64 = 0.05;
        const T_CAP: f64 = 400.0;
        // Exponential march to bracket the exit, then bisection to localize
        // it; a curve that never leaves the window stops at the cap.
        let march = |sign: f64| -> f64 {
            let start = if sign < 0.0 { 0.0 } else { 1.0 };
            if !inside(start) {
                return start;
            }
            let mut reach = 0.0f64;
            let mut step = T_STEP;
            loop {
                let probe = (reach + step).min(T_CAP);
                if inside(start + sign * probe) {
                    if probe >= T_CAP {
                        return start + sign * T_CAP;
                    }
                    reach = probe;
                    step *= 2.0;
                    continue;
                }
                let (mut in_r, mut out_r) = (reach, probe);
                for _ in 0..24 {
                    let mid = 0.5 * (in_r + out_r);
                    if inside(start + sign * mid) {
                        in_r = mid;
                    } else {
                        out_r = mid;
                    }
                }
                return start + sign * in_r;
            }
        };
        let t_lo = march(-1.0);
        let t_hi = march(1.0);

        // A two-point template is exactly its own chord.
        let segments = if curve.ctrl.len() == 2 {
            1
        } else {
            ((BAND_SEGMENTS as f64 * (t_hi - t_lo)) as usize)
                .clamp(BAND_SEGMENTS, 4 * BAND_SEGMENTS)
        };
        let stations: Vec<Vec2> = (0..=segments)
            .map(|i| {
                curve.eval_unchecked(t_lo + (t_hi - t_lo) * i as f64 / segments as f64)
            })
            .collect();
        let mut y_min = f64::MAX;
        let mut y_max = f64::MIN;
        for s in &stations {
            y_min = y_min.min(s.y);
            y_max = y_max.max(s.y);
        }
        let row_lo = (y_min - band_px - 1.0).floor() as isize;
        let row_hi = (y_max + band_px + 1.0).ceil() as isize;
        let mut buckets = vec![Vec::new(); (row_hi - row_lo + 1).max(1) as usize];
        for i in 0..segments {
            let (a, b) = (stations[i], stations[i + 1]);
            let lo = ((a.y.min(b.y) - band_px - 1.0).floor() as isize - row_lo).max(0) as usize;
            let hi = ((a.y.max(b.y) + band_px + 1.0).ceil() as isize - row_lo)
                .min(buckets.len() as isize - 1) as usize;
            for bucket in buckets.iter_mut().take(hi + 1).skip(lo) {
                bucket.push(i as u32);
            }
        }
        CurveBand {
            stations,
            buckets,
            row_lo,
        }
    }

    fn seg_dist_sq(&self, i: usize, p: Vec2) -> f64 {
        let a = self.stations[i];
        let b = self.stations[i + 1];
        let ab = b - a;
        let len_sq = ab.norm_squared();
        let t = if len_sq < 1e-24 {
            0.0
        } else {
            ((p - a).dot(&ab) / len_sq).clamp(0.0, 1.0)
        };
        (a + ab * t - p).norm_squared()
    }

    fn distance(&self, p: Vec2) -> f64 {
        let row = p.y.round() as isize - self.row_lo;
        let within = if row >= 0 && (row as usize) < self.buckets.len() {
            &self.buckets[row as usize]
        } else {
            return self.brute_distance(p);
        };
        if within.is_empty() {
            return self.brute_distance(p);
        }
        within
            .iter()
            .map(|&i| self.seg_dist_sq(i as usize, p))
            .fold(f64::MAX, f64::min)
            .sqrt()
    }

    fn brute_distance(&self, p: Vec2) -> f64 {
        (0..self.stations.len() - 1)
            .map(|i| self.seg_dist_sq(i, p))
            .fold(f64::MAX, f64::min)
            .sqrt()
    }
}

// ============================================================================
// Scoring
// ============================================================================

/// Marking color class; colored markings carry more weight in the
/// consistency score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarkingColor {
    White,
    Yellow,
}

impl MarkingColor {
    pub fn coefficient(&self) -> f64 {
        match self {
            MarkingColor::White => 1.0,
            MarkingColor::Yellow => 1.5,
        }
    }
}

/// Luminance split for the grayscale color classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorRule {
    /// Mean marking luminance at or below this classifies as yellow.
    pub yellow_max_luminance: f64,
}

impl Default for ColorRule {
    fn default() -> Self {
        ColorRule {
            yellow_max_luminance: 180.0,
        }
    }
}

pub fn classify_color(mean_luminance: f64, rule: &ColorRule) -> MarkingColor {
    if mean_luminance <= rule.yellow_max_luminance {
        MarkingColor::Yellow
    } else {
        MarkingColor::White
    }
}

/// Scoring weights for template selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreWeights {
    /// Weight of the normalized pixel-consistency term.
    pub k_likelihood: f64,
    /// Weight of the shape-credibility term.
    pub k_credibility: f64,
    /// Credibility: weight of the covered-span ratio.
    pub k_span: f64,
    /// Credibility: weight of the mean turn-smoothness term.
    pub k_smooth: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            k_likelihood: 0.02,
            k_credibility: 1.0,
            k_span: 0.5,
            k_smooth: 0.5,
        }
    }
}

/// Shape credibility of a template given its on-curve supporters:
/// `k_span * (l / v)` for the spatial extent `l` of the supporters relative
/// to the window height `v`, plus the mean cosine of the turn angles along
/// the supporter chain, weighted `k_smooth`. The chain is thinned to at
/// most 32 points so isolated pixel jitter does not dominate the angles.
pub fn credibility(inliers: &[Vec2], window_height_px: f64, w: &ScoreWeights) -> f64 {
    if inliers.len() < 2 || window_height_px <= 0.0 {
        return 0.0;
    }
    let mut chain: Vec<Vec2> = inliers.to_vec();
    chain.sort_by(|a, b| (a.y, a.x).partial_cmp(&(b.y, b.x)).unwrap());
    if chain.len() > 32 {
        let m = chain.len();
        chain = (0..32)
            .map(|i| chain[i * (m - 1) / 31])
            .collect();
    }

    let mut l = 0.0f64;
    for i in 0..chain.len() {
        for j in i + 1..chain.len() {
            l = l.max((chain[j] - chain[i]).norm());
        }
    }
    let span_term = w.k_span * (l / window_height_px).min(1.0);

    // Mean turn cosine: +1 for a perfectly straight chain.
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for win in chain.windows(3) {
        let a = win[1] - win[0];
        let b = win[2] - win[1];
        let na = a.norm();
        let nb = b.norm();
        if na < 1e-12 || nb < 1e-12 {
            continue;
        }
        sum += a.dot(&b) / (na * nb);
        count += 1;
    }
    let smooth_term = if count > 0 {
        w.k_smooth * (sum / count as f64)
    } else {
        // Two supporters define a straight segment.
        w.k_smooth
    };
    span_term + smooth_term
}

// ============================================================================
// RANSAC template search
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations_per_order: usize,
    /// Half-width of the supporter band around a hypothesis, raster px.
    pub band_px: f64,
    /// Smallest and largest template order (control-point count) tried.
    pub min_order: usize,
    pub max_order: usize,
    /// A template is accepted when its score reaches this value...
    pub score_threshold: f64,
    /// ...and its normalized consistency reaches this floor.
    pub min_likelihood: f64,
    /// Cap on supporters used in the least-squares refit.
    pub refit_cap: usize,
    /// Clusters with fewer candidates are skipped outright.
    pub min_cluster_points: usize,
    pub weights: ScoreWeights,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iterations_per_order: 50,
            // Wide enough that a centered template owns a three-column
            // stripe outright: adjacent columns sit at distance 1, and a
            // band of exactly 1 puts them on a knife edge where tilted
            // near-ties can outscore the centered fit.
            band_px: 1.5,
            min_order: 2,
            max_order: 4,
            score_threshold: 0.5,
            min_likelihood: 0.2,
            refit_cap: 64,
            min_cluster_points: 8,
            weights: ScoreWeights::default(),
            seed: 0,
        }
    }
}

/// Best template found for one cluster, in the coordinates of the filtered
/// window the sample space came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFit {
    pub curve: BezierCurve,
    /// Control-point count of the accepted template.
    pub order: usize,
    pub score: f64,
    /// Supporter weight as a fraction of the cluster weight.
    pub likelihood: f64,
    pub credibility: f64,
    pub inlier_count: usize,
}

/// Search trace for one cluster: which orders ran before one was accepted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterStats {
    pub orders_evaluated: Vec<usize>,
    pub chosen_order: Option<usize>,
}

fn draw_distinct(rng: &mut ChaCha8Rng, len: usize, n: usize) -> Vec<usize> {
    debug_assert!(n <= len);
    let mut picked: Vec<usize> = Vec::with_capacity(n);
    while picked.len() < n {
        let c = rng.gen_range(0..len);
        if !picked.contains(&c) {
            picked.push(c);
        }
    }
    picked
}

/// Weight share and supporter set of a hypothesis within a cluster.
fn band_support(
    band: &CurveBand,
    space: &SampleSpace,
    cluster: &Cluster,
    band_px: f64,
) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut weight = 0.0;
    for &idx in &cluster.point_idx {
        let p = space.points[idx];
        if band.distance(Vec2::new(p.x, p.y)) <= band_px {
            inliers.push(idx);
            weight += p.weight;
        }
    }
    (inliers, weight)
}

/// RANSAC over template orders for one cluster. Orders are tried from
/// simplest to most flexible; the first order whose best hypothesis clears
/// both the consistency floor and the score threshold wins. Returns `None`
/// when no order produces an acceptable template.
pub fn ransac_fit(
    space: &SampleSpace,
    cluster: &Cluster,
    window_height_px: f64,
    color: MarkingColor,
    cfg: &RansacConfig,
    rng: &mut ChaCha8Rng,
) -> (Option<ClusterFit>, ClusterStats) {
    let mut stats = ClusterStats::default();
    let n_pts = cluster.point_idx.len();
    if n_pts < cfg.min_cluster_points.max(cfg.min_order) {
        return (None, stats);
    }
    let cluster_weight: f64 = cluster
        .point_idx
        .iter()
        .map(|&i| space.points[i].weight)
        .sum();
    if cluster_weight <= 0.0 {
        return (None, stats);
    }
    let rows = cluster.point_idx.iter().fold((f64::MAX, f64::MIN), |acc, &i| {
        let y = space.points[i].y;
        (acc.0.min(y), acc.1.max(y))
    });

    // Supporter positions of a candidate, row-ordered and thinned to the
    // refit cap.
    let supporters = |curve: &BezierCurve| -> Vec<Vec2> {
        let band = CurveBand::new(curve, cfg.band_px, rows);
        let (inliers, _) = band_support(&band, space, cluster, cfg.band_px);
        let mut support: Vec<Vec2> = inliers
            .iter()
            .map(|&i| Vec2::new(space.points[i].x, space.points[i].y))
            .collect();
        support.sort_by(|a, b| (a.y, a.x).partial_cmp(&(b.y, b.x)).unwrap());
        if support.len() > cfg.refit_cap {
            let m = support.len();
            support = (0..cfg.refit_cap)
                .map(|i| support[i * (m - 1) / (cfg.refit_cap - 1)])
                .collect();
        }
        support
    };

    // Scores a candidate curve: likelihood from the captured weight share,
    // credibility from supporter span and smoothness.
    let evaluate = |curve: BezierCurve, order: usize| -> Option<ClusterFit> {
        let band = CurveBand::new(&curve, cfg.band_px, rows);
        let (inliers, weight) = band_support(&band, space, cluster, cfg.band_px);
        if inliers.len() < order.max(2) {
            return None;
        }
        let positions: Vec<Vec2> = inliers
            .iter()
            .map(|&i| Vec2::new(space.points[i].x, space.points[i].y))
            .collect();
        let likelihood = color.coefficient() * weight / cluster_weight;
        let cred = credibility(&positions, window_height_px, &cfg.weights);
        let score = cfg.weights.k_likelihood * likelihood + cfg.weights.k_credibility * cred;
        Some(ClusterFit {
            curve,
            order,
            score,
            likelihood,
            credibility: cred,
            inlier_count: inliers.len(),
        })
    };

    for order in cfg.min_order..=cfg.max_order.min(n_pts) {
        stats.orders_evaluated.push(order);
        let mut best: Option<ClusterFit> = None;

        for _ in 0..cfg.iterations_per_order {
            let mut draw: Vec<Vec2> = draw_distinct(rng, n_pts, order)
                .into_iter()
                .map(|i| {
                    let p = space.points[cluster.point_idx[i]];
                    Vec2::new(p.x, p.y)
                })
                .collect();
            draw.sort_by(|a, b| (a.y, a.x).partial_cmp(&(b.y, b.x)).unwrap());
            let Ok(hypo) = fit_control_points(&draw, order) else {
                continue;
            };

            // Refit on (a thinned subset of) the hypothesis supporters with
            // the cheap alternation, then rescore; the expensive joint
            // refinement runs once per order, on the winner.
            let support = supporters(&hypo);
            if support.len() < order.max(2) {
                continue;
            }
            let curve = quick_refit(&support, order, 2).unwrap_or(hypo);
            let Some(cand) = evaluate(curve, order) else {
                continue;
            };
            if best.as_ref().map_or(true, |b| cand.score > b.score) {
                best = Some(cand);
            }
        }

        if let Some(mut b) = best {
            let support = supporters(&b.curve);
            if support.len() >= order.max(2) {
                if let Ok(polished) = fit_with_refinement(&support, order, 8) {
                    if let Some(cand) = evaluate(polished, order) {
                        if cand.score >= b.score {
                            b = cand;
                        }
                    }
                }
            }
            if b.score >= cfg.score_threshold && b.likelihood >= cfg.min_likelihood {
                stats.chosen_order = Some(b.order);
                return (Some(b), stats);
            }
        }
    }
    (None, stats)
}

// ============================================================================
// Evaluation helpers
// ============================================================================

/// RMS lateral offset between two road-aligned curves over the y interval
/// `[y_lo, y_hi]`, sampled at `stations` evenly spaced y values that both
/// curves reach. `None` when fewer than two stations overlap.
pub fn lateral_rms(
    a: &BezierCurve,
    b: &BezierCurve,
    y_lo: f64,
    y_hi: f64,
    stations: usize,
) -> Option<f64> {
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for i in 0..stations {
        let y = y_lo + (y_hi - y_lo) * i as f64 / (stations - 1) as f64;
        if let (Some(xa), Some(xb)) = (a.x_at_y(y), b.x_at_y(y)) {
            acc += (xa - xb) * (xa - xb);
            n += 1;
        }
    }
    if n < 2 {
        None
    } else {
        Some((acc / n as f64).sqrt())
    }
}
