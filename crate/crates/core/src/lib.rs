//! Cooperative-overtaking stack: monocular lane perception on a bird's-eye
//! warp, probabilistic collision-risk fields, and a deterministic scenario
//! simulator with simulated vehicle-to-vehicle messaging.
//!
//! The crate is organized as a pipeline plus two consumers:
//!
//! * [`geometry`]   — camera calibration, ground-plane projection, warps
//! * [`image`]      — 8-bit grayscale buffers and PGM (P5) I/O
//! * [`pipeline`]   — regions of interest, directional filtering, candidate
//!   extraction
//! * [`lane`]       — Bezier lane templates, fitting, RANSAC order search
//! * [`detect`]     — the assembled frame-to-templates detection chain
//! * [`risk`]       — conflict potential fields and collision probability
//! * [`v2v`]        — basic safety messages and a lossy broadcast channel
//! * [`synth`]      — synthetic road-scene rendering with ground truth
//! * [`sim`]        — scenario engine driving all of the above per tick
//! * [`config`]     — TOML-backed run configuration shared by the binaries

pub mod config;
pub mod detect;
pub mod error;
pub mod geometry;
pub mod image;
pub mod lane;
pub mod pipeline;
pub mod risk;
pub mod sim;
pub mod synth;
pub mod v2v;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
