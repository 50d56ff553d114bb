//! Synthetic road scenes with exact ground truth: lane markings are painted
//! onto a metric ground-plane grid, projected through the camera model into
//! a grayscale frame, and degraded with a brightness gradient, an optional
//! shadow band, and seeded Gaussian noise. The marking curves double as the
//! truth sidecar for detector evaluation.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{pixel_to_ground, CameraCalibration, Vec2};
use crate::image::GrayImage;
use crate::lane::BezierCurve;
use crate::{Error, Result};

// ============================================================================
// Scene description
// ============================================================================

/// One painted lane marking: a polynomial centerline in ground meters
/// (vehicle frame: x right, y forward), a stripe width, and optional
/// y intervals where the paint is missing (dashed or worn sections).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkingSpec {
    /// Control points, 2 to 4 of them, as `[x, y]` meters.
    pub ctrl: Vec<(f64, f64)>,
    pub width_m: f64,
    pub luminance: f64,
    /// Removed y intervals `[start, end)`, meters.
    #[serde(default)]
    pub gaps: Vec<(f64, f64)>,
}

impl MarkingSpec {
    pub fn curve(&self) -> BezierCurve {
        BezierCurve::new(self.ctrl.iter().map(|&(x, y)| Vec2::new(x, y)).collect())
    }

    fn in_gap(&self, y: f64) -> bool {
        self.gaps.iter().any(|&(a, b)| y >= a && y < b)
    }
}

/// Darkened ground band crossing the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowSpec {
    pub y_start: f64,
    pub y_end: f64,
    pub factor: f64,
}

/// Full scene description; everything needed to render one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub calib: CameraCalibration,
    pub img_w: usize,
    pub img_h: usize,
    pub road_half_width_m: f64,
    pub road_luminance: f64,
    pub off_road_luminance: f64,
    pub sky_luminance: f64,
    pub markings: Vec<MarkingSpec>,
    #[serde(default)]
    pub shadow: Option<ShadowSpec>,
    /// Fractional brightness tilt from image top to bottom.
    #[serde(default)]
    pub brightness_gradient: f64,
    /// Standard deviation of the additive pixel noise.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Ground paint grid resolution, m.
    pub grid_res_m: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            calib: CameraCalibration::default(),
            img_w: 640,
            img_h: 480,
            road_half_width_m: 5.25,
            road_luminance: 90.0,
            off_road_luminance: 60.0,
            sky_luminance: 40.0,
            markings: vec![
                MarkingSpec {
                    ctrl: vec![(-1.75, 0.0), (-1.75, 30.0)],
                    width_m: 0.15,
                    luminance: 220.0,
                    gaps: vec![],
                },
                MarkingSpec {
                    ctrl: vec![(1.75, 0.0), (1.75, 30.0)],
                    width_m: 0.15,
                    luminance: 220.0,
                    gaps: vec![],
                },
            ],
            shadow: None,
            brightness_gradient: 0.0,
            noise_sigma: 0.0,
            grid_res_m: 0.025,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.calib.validate()?;
        if self.img_w == 0 || self.img_h == 0 {
            return Err(Error::InvalidConfig("empty image".into()));
        }
        if !(self.grid_res_m > 0.0) || !(self.road_half_width_m > 0.0) {
            return Err(Error::InvalidConfig(
                "grid resolution and road width must be positive".into(),
            ));
        }
        for (i, m) in self.markings.iter().enumerate() {
            if !(2..=4).contains(&m.ctrl.len()) {
                return Err(Error::InvalidConfig(format!(
                    "marking {i} needs 2 to 4 control points"
                )));
            }
            if !(m.width_m > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "marking {i} needs a positive width"
                )));
            }
        }
        Ok(())
    }
}

// ============================================================================
// Rendering
// ============================================================================

/// Ground paint grid: x spans +-half_x around the vehicle axis, y spans
/// [0, y_max] ahead.
struct GroundGrid {
    lum: Vec<f64>,
    cols: usize,
    rows: usize,
    res: f64,
    half_x: f64,
}

impl GroundGrid {
    fn paint(spec: &SceneSpec) -> Self {
        let half_x = spec.road_half_width_m.max(2.0) + 4.0;
        let y_max = 32.0;
        let res = spec.grid_res_m;
        let cols = (2.0 * half_x / res).ceil() as usize;
        let rows = (y_max / res).ceil() as usize;
        let mut lum = vec![0.0f64; cols * rows];

        // Base: road strip flanked by shoulders.
        for c in 0..cols {
            let x = -half_x + (c as f64 + 0.5) * res;
            let base = if x.abs() <= spec.road_half_width_m {
                spec.road_luminance
            } else {
                spec.off_road_luminance
            };
            for r in 0..rows {
                lum[r * cols + c] = base;
            }
        }

        // Markings, one centerline solve per grid row.
        for m in &spec.markings {
            let curve = m.curve();
            let half_w = 0.5 * m.width_m;
            for r in 0..rows {
                let y = (r as f64 + 0.5) * res;
                if m.in_gap(y) {
                    continue;
                }
                let Some(xc) = curve.x_at_y(y) else {
                    continue;
                };
                let c0 = (((xc - half_w + half_x) / res).floor().max(0.0)) as usize;
                let c1 = (((xc + half_w + half_x) / res).ceil()).min(cols as f64) as usize;
                for c in c0..c1 {
                    let x = -half_x + (c as f64 + 0.5) * res;
                    if (x - xc).abs() <= half_w {
                        lum[r * cols + c] = m.luminance;
                    }
                }
            }
        }

        // Shadow multiplies whatever is painted underneath.
        if let Some(sh) = &spec.shadow {
            let r0 = ((sh.y_start / res).floor().max(0.0)) as usize;
            let r1 = ((sh.y_end / res).ceil()).min(rows as f64) as usize;
            for r in r0..r1 {
                for c in 0..cols {
                    lum[r * cols + c] *= sh.factor;
                }
            }
        }

        GroundGrid {
            lum,
            cols,
            rows,
            res,
            half_x,
        }
    }

    /// Bilinear luminance at a ground point; base coloring outside the grid.
    fn sample(&self, g: Vec2, spec: &SceneSpec) -> f64 {
        let fx = (g.x + self.half_x) / self.res - 0.5;
        let fy = g.y / self.res - 0.5;
        if fx < 0.0 || fy < 0.0 || fx > (self.cols - 1) as f64 || fy > (self.rows - 1) as f64 {
            return if g.x.abs() <= spec.road_half_width_m && g.y >= 0.0 {
                spec.road_luminance
            } else {
                spec.off_road_luminance
            };
        }
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.cols - 1);
        let y1 = (y0 + 1).min(self.rows - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let at = |r: usize, c: usize| self.lum[r * self.cols + c];
        at(y0, x0) * (1.0 - tx) * (1.0 - ty)
            + at(y0, x1) * tx * (1.0 - ty)
            + at(y1, x0) * (1.0 - tx) * ty
            + at(y1, x1) * tx * ty
    }
}

/// Renders one camera frame of the scene. The same spec and seed always
/// produce the same image.
pub fn render_frame(spec: &SceneSpec, noise_seed: u64) -> Result<GrayImage> {
    spec.validate()?;
    let grid = GroundGrid::paint(spec);
    let mut img = GrayImage::new(spec.img_w, spec.img_h);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|e| {
            Error::InvalidConfig(format!("noise width {}: {e}", spec.noise_sigma))
        })?)
    } else {
        None
    };

    for v in 0..spec.img_h {
        // Linear brightness tilt, +gradient/2 at the top row.
        let tilt = 1.0
            + spec.brightness_gradient
                * (0.5 - v as f64 / (spec.img_h.max(2) - 1) as f64);
        for u in 0..spec.img_w {
            let base = match pixel_to_ground(u as f64 + 0.5, v as f64 + 0.5, &spec.calib) {
                Ok(g) => grid.sample(g, spec),
                Err(_) => spec.sky_luminance,
            };
            let mut val = base * tilt;
            if let Some(n) = &noise {
                val += n.sample(&mut rng);
            }
            img.set(u, v, val.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(img)
}

// ============================================================================
// Ground-truth sidecar
// ============================================================================

/// Writes marking centerlines as CSV: one row per marking with the control
/// points in ground meters, short templates padded with empty fields.
pub fn write_truth_csv(path: &Path, markings: &[MarkingSpec]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "marking_id,order,p0x,p0y,p1x,p1y,p2x,p2y,p3x,p3y,width_m"
    )?;
    for (i, m) in markings.iter().enumerate() {
        let mut fields: Vec<String> = vec![i.to_string(), m.ctrl.len().to_string()];
        for k in 0..4 {
            match m.ctrl.get(k) {
                Some(&(x, y)) => {
                    fields.push(format!("{x:.9}"));
                    fields.push(format!("{y:.9}"));
                }
                None => {
                    fields.push(String::new());
                    fields.push(String::new());
                }
            }
        }
        fields.push(format!("{:.9}", m.width_m));
        writeln!(f, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Reads a truth sidecar back into centerline curves.
pub fn read_truth_csv(path: &Path) -> Result<Vec<MarkingSpec>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Decode(format!(
                "truth line {} has {} fields, want 11",
                lineno + 1,
                fields.len()
            )));
        }
        let order: usize = fields[1]
            .parse()
            .map_err(|e| Error::Decode(format!("truth line {}: {e}", lineno + 1)))?;
        if !(2..=4).contains(&order) {
            return Err(Error::Decode(format!(
                "truth line {}: order {order} out of range",
                lineno + 1
            )));
        }
        let mut ctrl = Vec::with_capacity(order);
        for k in 0..order {
            let x: f64 = fields[2 + 2 * k]
                .parse()
                .map_err(|e| Error::Decode(format!("truth line {}: {e}", lineno + 1)))?;
            let y: f64 = fields[3 + 2 * k]
                .parse()
                .map_err(|e| Error::Decode(format!("truth line {}: {e}", lineno + 1)))?;
            ctrl.push((x, y));
        }
        let width_m: f64 = fields[10]
            .parse()
            .map_err(|e| Error::Decode(format!("truth line {}: {e}", lineno + 1)))?;
        out.push(MarkingSpec {
            ctrl,
            width_m,
            luminance: 220.0,
            gaps: vec![],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ground_to_pixel;

    #[test]
    fn rendering_is_deterministic() {
        let spec = SceneSpec {
            noise_sigma: 6.0,
            brightness_gradient: 0.1,
            ..SceneSpec::default()
        };
        let a = render_frame(&spec, 17).unwrap();
        let b = render_frame(&spec, 17).unwrap();
        assert_eq!(a.data(), b.data());
        let c = render_frame(&spec, 18).unwrap();
        assert_ne!(a.data(), c.data(), "different seeds must differ somewhere");
    }

    #[test]
    fn truth_stations_reproject_onto_bright_pixels() {
        // Zero noise, no gaps: every visible truth station must land on a
        // pixel far brighter than the road.
        let spec = SceneSpec::default();
        let img = render_frame(&spec, 0).unwrap();
        let mut checked = 0;
        for m in &spec.markings {
            let curve = m.curve();
            for i in 0..=40 {
                let y = 5.0 + 20.0 * i as f64 / 40.0;
                let Some(x) = curve.x_at_y(y) else { continue };
                let Ok((u, v)) = ground_to_pixel(Vec2::new(x, y), &spec.calib) else {
                    continue;
                };
                let (ui, vi) = (u.round() as isize, v.round() as isize);
                if ui < 1 || vi < 1 || ui >= spec.img_w as isize - 1 || vi >= spec.img_h as isize - 1
                {
                    continue;
                }
                // Sample a 3x3 patch: the projection may straddle pixels.
                let mut best = 0u8;
                for dv in -1..=1isize {
                    for du in -1..=1isize {
                        best = best
                            .max(img.get((ui + du) as usize, (vi + dv) as usize));
                    }
                }
                assert!(
                    best as f64 >= spec.road_luminance + 60.0,
                    "station y={y} only reached luminance {best}"
                );
                checked += 1;
            }
        }
        assert!(checked > 40, "too few visible stations ({checked})");
    }

    #[test]
    fn gaps_remove_paint() {
        let mut spec = SceneSpec::default();
        spec.markings[0].gaps = vec![(8.0, 12.0)];
        let with_gap = render_frame(&spec, 0).unwrap();
        let solid = render_frame(&SceneSpec::default(), 0).unwrap();
        let curve = spec.markings[0].curve();
        let x = curve.x_at_y(10.0).unwrap();
        let (u, v) = ground_to_pixel(Vec2::new(x, 10.0), &spec.calib).unwrap();
        let (u, v) = (u.round() as usize, v.round() as usize);
        let lum_gap = with_gap.get(u, v);
        let lum_solid = solid.get(u, v);
        assert!(lum_solid as f64 >= 200.0);
        assert!((lum_gap as f64) < 120.0, "gap pixel still bright: {lum_gap}");
    }

    #[test]
    fn shadow_band_darkens_the_road() {
        let spec = SceneSpec {
            shadow: Some(ShadowSpec {
                y_start: 10.0,
                y_end: 14.0,
                factor: 0.6,
            }),
            ..SceneSpec::default()
        };
        let img = render_frame(&spec, 0).unwrap();
        let plain = render_frame(&SceneSpec::default(), 0).unwrap();
        let (u, v) = ground_to_pixel(Vec2::new(0.0, 12.0), &spec.calib).unwrap();
        let (u, v) = (u.round() as usize, v.round() as usize);
        let shaded = img.get(u, v) as f64;
        let bare = plain.get(u, v) as f64;
        assert!((shaded - bare * 0.6).abs() <= 1.5, "{shaded} vs 0.6*{bare}");
    }

    #[test]
    fn truth_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        let markings = vec![
            MarkingSpec {
                ctrl: vec![(-1.75, 0.0), (-1.6, 12.0), (-1.9, 30.0)],
                width_m: 0.15,
                luminance: 220.0,
                gaps: vec![],
            },
            MarkingSpec {
                ctrl: vec![(1.75, 0.0), (1.75, 30.0)],
                width_m: 0.12,
                luminance: 220.0,
                gaps: vec![],
            },
        ];
        write_truth_csv(&path, &markings).unwrap();
        let back = read_truth_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&markings) {
            assert_eq!(a.ctrl.len(), b.ctrl.len());
            for (&(ax, ay), &(bx, by)) in a.ctrl.iter().zip(&b.ctrl) {
                assert!((ax - bx).abs() < 1e-8);
                assert!((ay - by).abs() < 1e-8);
            }
            assert!((a.width_m - b.width_m).abs() < 1e-8);
        }
    }

    #[test]
    fn malformed_truth_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "header\n1,2,0.0,0.0\n").unwrap();
        assert!(matches!(read_truth_csv(&path), Err(Error::Decode(_))));
        std::fs::write(
            &path,
            "header\n0,7,0,0,0,1,0,2,0,3,0.15\n",
        )
        .unwrap();
        assert!(matches!(read_truth_csv(&path), Err(Error::Decode(_))));
    }
}
