//! Synthetic corpus renderer: one straight-road scene per frame with seeded
//! per-frame variation, plus a ground-truth CSV sidecar for every frame.
//!
//! Frame `i` depends only on `(seed, i)`, so corpora are reproducible and
//! frames can be re-rendered individually.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use overtake_core::synth::{render_frame, write_truth_csv, MarkingSpec, SceneSpec, ShadowSpec};

use crate::report::RunReport;
use crate::{io_ctx, CliError};

// ============================================================================
// Arguments
// ============================================================================

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct RenderArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,

    /// Number of frames to render.
    #[arg(long, default_value_t = 100)]
    pub frames: usize,

    /// Corpus seed; frame i derives its own stream from (seed, i).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 640)]
    pub width: usize,

    #[arg(long, default_value_t = 480)]
    pub height: usize,

    /// Additive pixel noise sigma.
    #[arg(long, default_value_t = 8.0)]
    pub noise_sigma: f64,

    /// Probability that a frame's markings bow sideways.
    #[arg(long, default_value_t = 0.5)]
    pub curve_prob: f64,

    /// Largest lateral bow at the far end, m.
    #[arg(long, default_value_t = 0.5)]
    pub curve_max_m: f64,

    /// Probability that the right marking is dashed.
    #[arg(long, default_value_t = 0.4)]
    pub dash_prob: f64,

    /// Probability of a shadow band across the road.
    #[arg(long, default_value_t = 0.3)]
    pub shadow_prob: f64,

    /// Largest top-to-bottom brightness tilt (fraction).
    #[arg(long, default_value_t = 0.2)]
    pub gradient_max: f64,
}

impl RenderArgs {
    fn validate(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        if self.frames == 0 {
            bad.push("frames must be at least 1".to_string());
        }
        for (name, p) in [
            ("curve_prob", self.curve_prob),
            ("dash_prob", self.dash_prob),
            ("shadow_prob", self.shadow_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                bad.push(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.curve_max_m < 0.0 || self.gradient_max < 0.0 || self.noise_sigma < 0.0 {
            bad.push("curve_max_m, gradient_max and noise_sigma must be non-negative".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(bad.join("; ")))
        }
    }
}

// ============================================================================
// Frame synthesis
// ============================================================================

/// Splits one marking into its ground-truth spec, bowing it when `drift`
/// is non-zero; the bow is shared by both markings so the lane keeps width.
fn marking(x: f64, drift: f64, gaps: Vec<(f64, f64)>) -> MarkingSpec {
    let ctrl = if drift == 0.0 {
        vec![(x, 0.0), (x, 30.0)]
    } else {
        vec![(x, 0.0), (x, 15.0), (x + drift, 30.0)]
    };
    MarkingSpec {
        ctrl,
        width_m: 0.15,
        luminance: 220.0,
        gaps,
    }
}

/// Dash pattern: 3 m of paint every 9 m, phase-shifted per frame. Returns
/// the removed intervals.
fn dash_gaps(phase: f64) -> Vec<(f64, f64)> {
    let mut gaps = Vec::new();
    let mut start = phase - 9.0;
    while start < 30.0 {
        let a = start + 3.0;
        let b = start + 9.0;
        if b > 0.0 && a < 30.0 {
            gaps.push((a.max(0.0), b.min(30.0)));
        }
        start += 9.0;
    }
    gaps
}

fn frame_spec(args: &RenderArgs, index: usize) -> (SceneSpec, u64) {
    // Distinct stream per frame: the base seed is combined with the frame
    // index through an odd multiplier so low seeds do not collide.
    let stream = args
        .seed
        .wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);

    // Draw every knob unconditionally so a frame's look depends only on
    // (seed, index), not on which knobs happened to fire.
    let drift_draw: f64 = rng.gen_range(-args.curve_max_m..=args.curve_max_m);
    let drift_on = rng.gen_bool(args.curve_prob);
    let dash_phase: f64 = rng.gen_range(0.0..9.0);
    let dash_on = rng.gen_bool(args.dash_prob);
    let shadow_start: f64 = rng.gen_range(5.0..15.0);
    let shadow_len: f64 = rng.gen_range(2.0..6.0);
    let shadow_factor: f64 = rng.gen_range(0.5..0.8);
    let shadow_on = rng.gen_bool(args.shadow_prob);
    let gradient: f64 = if args.gradient_max > 0.0 {
        rng.gen_range(-args.gradient_max..=args.gradient_max)
    } else {
        0.0
    };
    let noise_seed: u64 = rng.gen();

    let drift = if drift_on { drift_draw } else { 0.0 };
    let right_gaps = if dash_on { dash_gaps(dash_phase) } else { Vec::new() };

    let spec = SceneSpec {
        img_w: args.width,
        img_h: args.height,
        markings: vec![
            marking(-1.75, drift, Vec::new()),
            marking(1.75, drift, right_gaps),
        ],
        shadow: shadow_on.then_some(ShadowSpec {
            y_start: shadow_start,
            y_end: shadow_start + shadow_len,
            factor: shadow_factor,
        }),
        brightness_gradient: gradient,
        noise_sigma: args.noise_sigma,
        ..SceneSpec::default()
    };
    (spec, noise_seed)
}

// ============================================================================
// Command
// ============================================================================

pub fn run(args: &RenderArgs) -> Result<RunReport, CliError> {
    args.validate()?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| io_ctx(&format!("out dir {}", args.out_dir.display()), e))?;

    let mut outputs = Vec::new();
    for i in 0..args.frames {
        let (spec, noise_seed) = frame_spec(args, i);
        spec.validate()?;
        let img = render_frame(&spec, noise_seed)?;
        let frame_path = args.out_dir.join(format!("frame_{i:04}.pgm"));
        let truth_path = args.out_dir.join(format!("frame_{i:04}.csv"));
        img.write_pgm(&frame_path)?;
        write_truth_csv(&truth_path, &spec.markings)?;
        outputs.push(frame_path.display().to_string());
        outputs.push(truth_path.display().to_string());
    }

    let parameters = json!({"args": args});
    let metrics = json!({
        "frames_written": args.frames,
        "directory": args.out_dir.display().to_string(),
    });
    Ok(RunReport::new("render", parameters, metrics).with_outputs(outputs))
}
