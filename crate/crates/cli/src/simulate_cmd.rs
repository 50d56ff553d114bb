//! Scenario runner: loads a scenario TOML, expands its sweep, runs every
//! variant, and writes the per-variant trace CSVs.

use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;

use overtake_core::sim::{run_sweep, Scenario, SimOutput};

use crate::report::RunReport;
use crate::{io_ctx, CliError};

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct SimulateArgs {
    /// Scenario TOML; may contain a sweep block.
    #[arg(long)]
    pub scenario: PathBuf,

    /// Directory for per-variant states/pairs/deliveries CSVs.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// CSV-safe variant label: keep word characters, dots and dashes.
fn sanitize(label: &str) -> String {
    let cleaned: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if cleaned.is_empty() { "variant".into() } else { cleaned }
}

fn variant_metrics(out: &SimOutput) -> serde_json::Value {
    let delivered = out.deliveries.iter().filter(|d| d.delivered).count();
    let summaries: Vec<_> = out
        .summaries
        .iter()
        .map(|s| {
            json!({
                "other": s.other,
                "peak_probability": s.peak_probability,
                "peak_t_ms": s.peak_t_ms,
                "first_reminding_ms": s.first_reminding_ms,
                "first_warning_ms": s.first_warning_ms,
                "min_time_to_contact_s": if s.min_time_to_contact.is_finite() {
                    Some(s.min_time_to_contact)
                } else {
                    None
                },
            })
        })
        .collect();
    json!({
        "label": out.label,
        "state_rows": out.states.len(),
        "pair_rows": out.pairs.len(),
        "messages_sent": out.deliveries.len(),
        "messages_delivered": delivered,
        "delivered_fraction": if out.deliveries.is_empty() {
            0.0
        } else {
            delivered as f64 / out.deliveries.len() as f64
        },
        "peak_probability": out.peak_probability(),
        "first_warning_ms": out.first_warning_ms(),
        "maneuver_started_ms": out.maneuver_started_ms,
        "maneuver_completed_ms": out.maneuver_completed_ms,
        "events": out.events.iter().map(|(t, e)| json!([t, e])).collect::<Vec<_>>(),
        "pair_summaries": summaries,
    })
}

pub fn run(args: &SimulateArgs) -> Result<RunReport, CliError> {
    let scenario = Scenario::from_path(&args.scenario)?;
    let results = run_sweep(&scenario)?;

    let mut outputs = Vec::new();
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| io_ctx(&format!("out dir {}", dir.display()), e))?;
        for out in &results {
            let tag = sanitize(if out.label.is_empty() { "run" } else { &out.label });
            for (name, body) in [
                ("states", out.states_csv()),
                ("pairs", out.pairs_csv()),
                ("deliveries", out.deliveries_csv()),
            ] {
                let path = dir.join(format!("{name}_{tag}.csv"));
                std::fs::write(&path, body)
                    .map_err(|e| io_ctx(&format!("trace {}", path.display()), e))?;
                outputs.push(path.display().to_string());
            }
        }
    }

    let parameters = json!({
        "scenario_path": args.scenario.display().to_string(),
        "scenario": scenario,
    });
    let metrics = json!({
        "variants": results.iter().map(variant_metrics).collect::<Vec<_>>(),
    });
    Ok(RunReport::new("simulate", parameters, metrics).with_outputs(outputs))
}
