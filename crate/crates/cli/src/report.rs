//! Machine-readable run summary shared by every command.

use serde::Serialize;
use serde_json::Value;

/// Emitted as JSON on stdout after a successful run. `parameters` echoes
/// every resolved input (defaults filled in), so a run can be reproduced
/// from its report alone; `outputs` lists the files the command wrote.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub parameters: Value,
    pub metrics: Value,
    pub outputs: Vec<String>,
}

impl RunReport {
    pub fn new(command: &'static str, parameters: Value, metrics: Value) -> Self {
        RunReport {
            command,
            parameters,
            metrics,
            outputs: Vec::new(),
        }
    }

    pub fn with_outputs(mut self, outputs: Vec<String>) -> Self {
        self.outputs = outputs;
        self
    }
}
