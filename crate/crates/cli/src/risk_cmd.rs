//! Conflict-probability sweeps over staged straight-road encounters.
//!
//! Two sweep kinds, selected by the `kind` key of the config TOML:
//!
//! * `peak_spread` — one overtaking pass evaluated against a list of
//!   conflict-area lengths; reports each peak probability and the relative
//!   spread across areas.
//! * `closing_crossings` — three canonical closing geometries (front, rear,
//!   side) at one closing speed; reports when each one crosses the warning
//!   threshold, as lead time before contact.

use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;

use overtake_core::geometry::Vec2;
use overtake_core::risk::{
    evaluate_pair, AreaAnchor, ConflictArea, FieldParams, RiskSignal, RiskThresholds,
    VehicleState,
};

use crate::report::RunReport;
use crate::{io_ctx, CliError};

// ============================================================================
// Arguments and config schema
// ============================================================================

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct RiskArgs {
    /// Sweep description TOML (see `RiskSweep`).
    #[arg(long)]
    pub config: PathBuf,

    /// Directory for per-step probability series CSVs.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskSweep {
    PeakSpread(PeakSpreadConfig),
    ClosingCrossings(ClosingCrossingsConfig),
}

/// One faster vehicle passes a slower one with a timed lane change; the
/// probability series is evaluated once per conflict-area length.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeakSpreadConfig {
    pub field: FieldParams,
    pub thresholds: RiskThresholds,
    pub dt_s: f64,
    pub duration_s: f64,
    pub ego_speed_mps: f64,
    pub target_speed_mps: f64,
    /// Target's head start along the lane, m.
    pub initial_gap_m: f64,
    pub lane_change_duration_s: f64,
    /// Lateral offset of the passing lane, m.
    pub lane_offset_m: f64,
    pub area_lengths_m: Vec<f64>,
    pub area_width_m: f64,
    pub vehicle_length_m: f64,
    pub vehicle_width_m: f64,
}

impl Default for PeakSpreadConfig {
    fn default() -> Self {
        PeakSpreadConfig {
            field: FieldParams::default(),
            thresholds: RiskThresholds::default(),
            dt_s: 0.05,
            duration_s: 12.0,
            ego_speed_mps: 22.22,
            target_speed_mps: 15.28,
            initial_gap_m: 20.0,
            lane_change_duration_s: 4.0,
            lane_offset_m: 3.5,
            area_lengths_m: vec![17.5, 18.0, 18.5, 19.0],
            area_width_m: 4.2,
            vehicle_length_m: 4.2,
            vehicle_width_m: 1.8,
        }
    }
}

impl PeakSpreadConfig {
    fn validate(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        if !(self.dt_s > 0.0) {
            bad.push(format!("dt_s must be positive, got {}", self.dt_s));
        }
        if !(self.duration_s > 0.0) {
            bad.push(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.ego_speed_mps > self.target_speed_mps) {
            bad.push(format!(
                "ego must close on the target (ego {} <= target {})",
                self.ego_speed_mps, self.target_speed_mps
            ));
        }
        if !(self.lane_change_duration_s > 0.0) {
            bad.push("lane_change_duration_s must be positive".into());
        }
        if self.area_lengths_m.is_empty() {
            bad.push("area_lengths_m must list at least one length".into());
        }
        if self.area_lengths_m.iter().any(|&l| !(l > 0.0)) || !(self.area_width_m > 0.0) {
            bad.push("conflict areas must have positive extents".into());
        }
        if !(self.vehicle_length_m > 0.0 && self.vehicle_width_m > 0.0) {
            bad.push("vehicle extents must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(bad.join("; ")))
        }
    }
}

/// Straight-line closing at a fixed rate, evaluated for the three canonical
/// relative geometries until bumper contact.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosingCrossingsConfig {
    pub field: FieldParams,
    pub thresholds: RiskThresholds,
    pub dt_s: f64,
    pub closing_speed_mps: f64,
    /// Speed of the slower vehicle; the closer moves this much faster.
    pub base_speed_mps: f64,
    pub start_gap_m: f64,
    /// Center distance at bumper contact, m.
    pub contact_gap_m: f64,
    /// Lateral offset of the `side` geometry, m.
    pub side_lateral_m: f64,
    pub area: ConflictArea,
    pub vehicle_length_m: f64,
    pub vehicle_width_m: f64,
}

impl Default for ClosingCrossingsConfig {
    fn default() -> Self {
        ClosingCrossingsConfig {
            field: FieldParams {
                reaction_time: 1.3,
                sigma_y_max: 0.65,
                ..FieldParams::default()
            },
            thresholds: RiskThresholds::default(),
            dt_s: 0.02,
            closing_speed_mps: 5.556,
            base_speed_mps: 13.89,
            start_gap_m: 40.0,
            contact_gap_m: 4.2,
            side_lateral_m: 0.8,
            area: ConflictArea {
                length: 19.0,
                width: 4.2,
                anchor: AreaAnchor::ApproachSide,
            },
            vehicle_length_m: 4.2,
            vehicle_width_m: 1.8,
        }
    }
}

impl ClosingCrossingsConfig {
    fn validate(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        if !(self.dt_s > 0.0) {
            bad.push(format!("dt_s must be positive, got {}", self.dt_s));
        }
        if !(self.closing_speed_mps > 0.0) {
            bad.push("closing_speed_mps must be positive".into());
        }
        if !(self.base_speed_mps >= 0.0) {
            bad.push("base_speed_mps must be non-negative".into());
        }
        if !(self.start_gap_m > self.contact_gap_m && self.contact_gap_m > 0.0) {
            bad.push(format!(
                "gaps must run start > contact > 0 (start {}, contact {})",
                self.start_gap_m, self.contact_gap_m
            ));
        }
        if !(self.area.length > 0.0 && self.area.width > 0.0) {
            bad.push("conflict area must have positive extents".into());
        }
        if !(self.vehicle_length_m > 0.0 && self.vehicle_width_m > 0.0) {
            bad.push("vehicle extents must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(bad.join("; ")))
        }
    }
}

// ============================================================================
// Shared helpers
// ============================================================================

fn signal_str(s: RiskSignal) -> &'static str {
    match s {
        RiskSignal::None => "none",
        RiskSignal::Reminding => "reminding",
        RiskSignal::Warning => "warning",
    }
}

fn smoothstep(p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    p * p * (3.0 - 2.0 * p)
}

fn write_series(
    dir: &Option<PathBuf>,
    name: &str,
    rows: &[(f64, f64, f64, RiskSignal)],
    outputs: &mut Vec<String>,
) -> Result<(), CliError> {
    let Some(dir) = dir else { return Ok(()) };
    std::fs::create_dir_all(dir).map_err(|e| io_ctx(&format!("csv dir {}", dir.display()), e))?;
    let mut csv = String::from("t_s,gap_m,probability,signal\n");
    for (t, gap, p, sig) in rows {
        csv.push_str(&format!("{t:.3},{gap:.4},{p:.6},{}\n", signal_str(*sig)));
    }
    let path = dir.join(format!("{name}.csv"));
    std::fs::write(&path, csv).map_err(|e| io_ctx(&format!("series {}", path.display()), e))?;
    outputs.push(path.display().to_string());
    Ok(())
}

// ============================================================================
// peak_spread
// ============================================================================

fn run_peak_spread(
    cfg: &PeakSpreadConfig,
    csv_dir: &Option<PathBuf>,
) -> Result<RunReport, CliError> {
    cfg.validate()?;
    let steps = (cfg.duration_s / cfg.dt_s).round() as usize;
    let mut outputs = Vec::new();
    let mut peaks = Vec::new();

    for &length in &cfg.area_lengths_m {
        let area = ConflictArea {
            length,
            width: cfg.area_width_m,
            anchor: AreaAnchor::TargetCentered,
        };
        let mut series = Vec::with_capacity(steps + 1);
        let mut peak = (0.0f64, 0.0f64); // (probability, t)
        for k in 0..=steps {
            let t = k as f64 * cfg.dt_s;
            let ego = VehicleState {
                position: Vec2::new(
                    cfg.lane_offset_m * smoothstep(t / cfg.lane_change_duration_s),
                    cfg.ego_speed_mps * t,
                ),
                heading: FRAC_PI_2,
                speed: cfg.ego_speed_mps,
                length: cfg.vehicle_length_m,
                width: cfg.vehicle_width_m,
            };
            let target = VehicleState {
                position: Vec2::new(0.0, cfg.initial_gap_m + cfg.target_speed_mps * t),
                heading: FRAC_PI_2,
                speed: cfg.target_speed_mps,
                length: cfg.vehicle_length_m,
                width: cfg.vehicle_width_m,
            };
            let est = evaluate_pair(&ego, &target, &cfg.field, &area, &cfg.thresholds)?;
            let gap = target.position.y - ego.position.y;
            series.push((t, gap, est.probability, est.signal));
            if est.probability > peak.0 {
                peak = (est.probability, t);
            }
        }
        write_series(
            csv_dir,
            &format!("spread_len_{length:.1}"),
            &series,
            &mut outputs,
        )?;
        peaks.push(json!({
            "area_length_m": length,
            "peak_probability": peak.0,
            "peak_t_s": peak.1,
        }));
    }

    let values: Vec<f64> = peaks
        .iter()
        .map(|p| p["peak_probability"].as_f64().unwrap_or(0.0))
        .collect();
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    let spread_pct = if max > 0.0 { 100.0 * (max - min) / max } else { 0.0 };

    let metrics = json!({
        "peaks": peaks,
        "max_peak": max,
        "min_peak": min,
        "spread_pct": spread_pct,
    });
    Ok(RunReport::new(
        "risk",
        json!({"kind": "peak_spread", "config": cfg}),
        metrics,
    )
    .with_outputs(outputs))
}

// ============================================================================
// closing_crossings
// ============================================================================

fn run_closing_crossings(
    cfg: &ClosingCrossingsConfig,
    csv_dir: &Option<PathBuf>,
) -> Result<RunReport, CliError> {
    cfg.validate()?;
    let t_contact = (cfg.start_gap_m - cfg.contact_gap_m) / cfg.closing_speed_mps;
    let steps = (t_contact / cfg.dt_s).ceil() as usize;
    let mut outputs = Vec::new();
    let mut modes = Vec::new();
    let mut leads = Vec::new();

    for mode in ["front", "rear", "side"] {
        let lateral = if mode == "side" { cfg.side_lateral_m } else { 0.0 };
        let mut series = Vec::with_capacity(steps + 1);
        let mut cross_t: Option<f64> = None;
        let mut peak = 0.0f64;
        for k in 0..=steps {
            let t = (k as f64 * cfg.dt_s).min(t_contact);
            let gap = cfg.start_gap_m - cfg.closing_speed_mps * t;
            // The assessment always runs in the closing vehicle's frame;
            // `rear` mirrors `front` with the roles swapped, so the threat
            // behind the slower vehicle is assessed from the closer's seat.
            let slower = VehicleState {
                position: Vec2::new(0.0, cfg.base_speed_mps * t + cfg.start_gap_m),
                heading: FRAC_PI_2,
                speed: cfg.base_speed_mps,
                length: cfg.vehicle_length_m,
                width: cfg.vehicle_width_m,
            };
            let closer = VehicleState {
                position: Vec2::new(
                    lateral,
                    cfg.base_speed_mps * t + cfg.start_gap_m - gap,
                ),
                heading: FRAC_PI_2,
                speed: cfg.base_speed_mps + cfg.closing_speed_mps,
                length: cfg.vehicle_length_m,
                width: cfg.vehicle_width_m,
            };
            let est = evaluate_pair(&closer, &slower, &cfg.field, &cfg.area, &cfg.thresholds)?;
            series.push((t, gap, est.probability, est.signal));
            peak = peak.max(est.probability);
            if cross_t.is_none() && est.probability >= cfg.thresholds.warning {
                cross_t = Some(t);
            }
            if t >= t_contact {
                break;
            }
        }
        write_series(csv_dir, &format!("crossing_{mode}"), &series, &mut outputs)?;
        let lead = cross_t.map(|t| t_contact - t);
        if let Some(l) = lead {
            leads.push(l);
        }
        modes.push(json!({
            "mode": mode,
            "cross_t_s": cross_t,
            "lead_s": lead,
            "peak_probability": peak,
        }));
    }

    let band = if leads.len() == modes.len() && !leads.is_empty() {
        let max = leads.iter().cloned().fold(f64::MIN, f64::max);
        let min = leads.iter().cloned().fold(f64::MAX, f64::min);
        Some(max - min)
    } else {
        None
    };
    let min_lead = leads.iter().cloned().fold(f64::MAX, f64::min);

    let metrics = json!({
        "time_to_contact_s": t_contact,
        "modes": modes,
        "min_lead_s": if leads.is_empty() { None } else { Some(min_lead) },
        "lead_band_s": band,
        "all_modes_crossed": leads.len() == 3,
    });
    Ok(RunReport::new(
        "risk",
        json!({"kind": "closing_crossings", "config": cfg}),
        metrics,
    )
    .with_outputs(outputs))
}

// ============================================================================
// Command
// ============================================================================

pub fn run(args: &RiskArgs) -> Result<RunReport, CliError> {
    let raw = std::fs::read_to_string(&args.config)
        .map_err(|e| io_ctx(&format!("config {}", args.config.display()), e))?;
    let sweep: RiskSweep = toml::from_str(&raw)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", args.config.display())))?;
    match &sweep {
        RiskSweep::PeakSpread(cfg) => run_peak_spread(cfg, &args.csv_dir),
        RiskSweep::ClosingCrossings(cfg) => run_closing_crossings(cfg, &args.csv_dir),
    }
}
