//! Corpus-scale lane detection with ground-truth scoring.
//!
//! The corpus is a directory of `.pgm` frames, each with a `.csv` sidecar
//! describing the true markings in ground coordinates. A frame counts as
//! failed when at least one true marking has no detected template within
//! the lateral-RMS threshold over the evaluation span.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use overtake_core::config::PerceptionConfig;
use overtake_core::detect::detect_lanes;
use overtake_core::image::GrayImage;
use overtake_core::lane::lateral_rms;
use overtake_core::synth::read_truth_csv;

use crate::report::RunReport;
use crate::{io_ctx, CliError};

// ============================================================================
// Arguments
// ============================================================================

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct DetectArgs {
    /// Directory of .pgm frames with .csv truth sidecars.
    #[arg(long)]
    pub corpus: PathBuf,

    /// Perception settings TOML; omitted means built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Assumed ego speed, m/s; deepens the adaptive search window.
    #[arg(long, default_value_t = 15.0)]
    pub speed: f64,

    /// Lateral RMS acceptance threshold per marking, m.
    #[arg(long, default_value_t = 0.3)]
    pub rms_threshold: f64,

    /// Near edge of the evaluation span, m ahead.
    #[arg(long, default_value_t = 5.0)]
    pub eval_near: f64,

    /// Far edge of the evaluation span, m ahead.
    #[arg(long, default_value_t = 25.0)]
    pub eval_far: f64,

    /// Stations sampled across the evaluation span.
    #[arg(long, default_value_t = 41)]
    pub eval_stations: usize,

    /// Worker threads; 0 keeps the rayon default.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,

    /// Also write a per-frame CSV here.
    #[arg(long)]
    pub frame_csv: Option<PathBuf>,
}

// ============================================================================
// Per-frame outcome
// ============================================================================

#[derive(Debug, Clone, Serialize)]
struct FrameRecord {
    name: String,
    /// ok | failed | skipped_no_truth | corrupt
    status: &'static str,
    /// Detection wall time, ms; 0 when the frame never reached the detector.
    ms: f64,
    templates: usize,
    truth_count: usize,
    matched: usize,
    /// Worst best-match RMS over the truth markings, m.
    worst_rms_m: Option<f64>,
    detail: Option<String>,
}

fn process_frame(path: &Path, cfg: &PerceptionConfig, args: &DetectArgs) -> FrameRecord {
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let record = |status, ms, detail: Option<String>| FrameRecord {
        name: name.clone(),
        status,
        ms,
        templates: 0,
        truth_count: 0,
        matched: 0,
        worst_rms_m: None,
        detail,
    };

    let truth_path = path.with_extension("csv");
    if !truth_path.exists() {
        return record("skipped_no_truth", 0.0, None);
    }
    let truth = match read_truth_csv(&truth_path) {
        Ok(t) => t,
        Err(e) => return record("corrupt", 0.0, Some(format!("truth: {e}"))),
    };
    let img = match GrayImage::read_pgm(path) {
        Ok(i) => i,
        Err(e) => return record("corrupt", 0.0, Some(format!("frame: {e}"))),
    };

    let started = Instant::now();
    let detection = match detect_lanes(&img, cfg, args.speed, false, 0.0) {
        Ok(d) => d,
        Err(e) => {
            let ms = started.elapsed().as_secs_f64() * 1e3;
            return record("failed", ms, Some(format!("detector: {e}")));
        }
    };
    let ms = started.elapsed().as_secs_f64() * 1e3;

    // Every true marking must be explained by some template.
    let mut matched = 0usize;
    let mut worst: Option<f64> = None;
    for spec in &truth {
        let truth_curve = spec.curve();
        let best = detection
            .templates
            .iter()
            .filter_map(|t| {
                lateral_rms(
                    &truth_curve,
                    &t.curve,
                    args.eval_near,
                    args.eval_far,
                    args.eval_stations,
                )
            })
            .fold(f64::INFINITY, f64::min);
        if best <= args.rms_threshold {
            matched += 1;
        }
        if best.is_finite() {
            worst = Some(worst.map_or(best, |w: f64| w.max(best)));
        }
    }

    FrameRecord {
        name,
        status: if matched == truth.len() { "ok" } else { "failed" },
        ms,
        templates: detection.templates.len(),
        truth_count: truth.len(),
        matched,
        worst_rms_m: worst,
        detail: None,
    }
}

// ============================================================================
// Command
// ============================================================================

pub fn run(args: &DetectArgs) -> Result<RunReport, CliError> {
    if args.rms_threshold <= 0.0 {
        return Err(CliError::Validation(format!(
            "rms threshold must be positive, got {}",
            args.rms_threshold
        )));
    }
    if !(args.eval_far > args.eval_near) || args.eval_stations < 2 {
        return Err(CliError::Validation(format!(
            "evaluation span must run near < far with at least 2 stations \
             (near {}, far {}, stations {})",
            args.eval_near, args.eval_far, args.eval_stations
        )));
    }
    if args.speed < 0.0 {
        return Err(CliError::Validation(format!(
            "speed must be non-negative, got {}",
            args.speed
        )));
    }

    let cfg = match &args.config {
        Some(p) => PerceptionConfig::from_path(p)?,
        None => PerceptionConfig::standard(),
    };
    cfg.validate()?;

    let mut frames: Vec<PathBuf> = std::fs::read_dir(&args.corpus)
        .map_err(|e| io_ctx(&format!("corpus {}", args.corpus.display()), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    frames.sort();
    if frames.is_empty() {
        return Err(CliError::Validation(format!(
            "corpus {} contains no .pgm frames",
            args.corpus.display()
        )));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    let records: Vec<FrameRecord> =
        pool.install(|| frames.par_iter().map(|p| process_frame(p, &cfg, args)).collect());

    for r in &records {
        match r.status {
            "skipped_no_truth" => eprintln!("warning: {} has no truth sidecar, skipped", r.name),
            "corrupt" => eprintln!(
                "warning: {} unreadable ({}), recorded and skipped",
                r.name,
                r.detail.as_deref().unwrap_or("?")
            ),
            _ => {}
        }
    }

    let evaluated: Vec<&FrameRecord> = records
        .iter()
        .filter(|r| r.status == "ok" || r.status == "failed")
        .collect();
    let failed = evaluated.iter().filter(|r| r.status == "failed").count();
    let corrupt: Vec<&str> = records
        .iter()
        .filter(|r| r.status == "corrupt")
        .map(|r| r.name.as_str())
        .collect();
    let skipped: Vec<&str> = records
        .iter()
        .filter(|r| r.status == "skipped_no_truth")
        .map(|r| r.name.as_str())
        .collect();
    let timings: Vec<f64> = evaluated.iter().map(|r| r.ms).collect();
    let mean_ms = if timings.is_empty() {
        0.0
    } else {
        timings.iter().sum::<f64>() / timings.len() as f64
    };
    let max_ms = timings.iter().cloned().fold(0.0, f64::max);

    let mut outputs = Vec::new();
    if let Some(csv_path) = &args.frame_csv {
        let mut csv = String::from("name,status,ms,templates,truth,matched,worst_rms_m\n");
        for r in &records {
            csv.push_str(&format!(
                "{},{},{:.3},{},{},{},{}\n",
                r.name,
                r.status,
                r.ms,
                r.templates,
                r.truth_count,
                r.matched,
                r.worst_rms_m.map_or(String::new(), |v| format!("{v:.4}")),
            ));
        }
        std::fs::write(csv_path, csv)
            .map_err(|e| io_ctx(&format!("frame csv {}", csv_path.display()), e))?;
        outputs.push(csv_path.display().to_string());
    }

    let parameters = json!({
        "args": args,
        "perception": cfg,
    });
    let metrics = json!({
        "frames_total": records.len(),
        "frames_evaluated": evaluated.len(),
        "frames_failed": failed,
        "failure_rate": if evaluated.is_empty() { 0.0 } else { failed as f64 / evaluated.len() as f64 },
        "mean_ms_per_frame": mean_ms,
        "max_ms_per_frame": max_ms,
        "corrupt_frames": corrupt,
        "skipped_frames": skipped,
    });
    Ok(RunReport::new("detect", parameters, metrics).with_outputs(outputs))
}
