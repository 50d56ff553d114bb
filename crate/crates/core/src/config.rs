//! Perception configuration: one TOML-backed struct bundling every knob of
//! the detection pipeline, with defaults matching the shipped tuning.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::CameraCalibration;
use crate::lane::{ColorRule, RansacConfig};
use crate::pipeline::{BirdEyeSpec, DynRoiLimits, DynamicRoi, ThresholdRule};
use crate::{Error, Result};

/// Static attention-window parameters: fractional size plus the offset of
/// the window center from the vanishing-point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticRoiParams {
    pub k: f64,
    pub l: f64,
    /// Center offset from the vanishing point, px.
    pub dx: f64,
    pub dy_frac_of_height: f64,
}

impl Default for StaticRoiParams {
    fn default() -> Self {
        StaticRoiParams {
            k: 0.9,
            l: 0.5,
            dx: 0.0,
            dy_frac_of_height: 0.1,
        }
    }
}

/// Ridge-filter parameters. The along-road width scales with the search
/// window height so the smoothing span follows the visible road length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub sigma_u_px: f64,
    pub sigma_v_frac_of_height: f64,
    /// Tap radius in units of the larger sigma.
    pub radius_sigmas: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            sigma_u_px: 1.5,
            sigma_v_frac_of_height: 0.125,
            radius_sigmas: 3.0,
        }
    }
}

/// Complete lane-perception configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub calibration: CameraCalibration,
    pub birdeye: BirdEyeSpec,
    pub static_roi: StaticRoiParams,
    pub dynamic_roi: DynamicRoiParams,
    pub filter: FilterParams,
    pub threshold: ThresholdRule,
    pub ransac: RansacConfig,
    pub color: ColorRule,
    /// Cap on templates returned per frame.
    pub max_templates: usize,
}

/// Search-window base plus adaptation limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicRoiParams {
    pub base: DynamicRoi,
    pub limits: DynRoiLimits,
}

impl Default for DynamicRoiParams {
    fn default() -> Self {
        DynamicRoiParams {
            base: DynamicRoi::default(),
            limits: DynRoiLimits::default(),
        }
    }
}

impl PerceptionConfig {
    pub fn standard() -> Self {
        PerceptionConfig {
            max_templates: 4,
            ..Default::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: PerceptionConfig = toml::from_str(s)
            .map_err(|e| Error::InvalidConfig(format!("perception config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        self.birdeye.validate()?;
        let p = &self.static_roi;
        if !(p.k > 0.0 && p.k <= 1.0 && p.l > 0.0 && p.l <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "static ROI fractions out of (0, 1]: k={}, l={}",
                p.k, p.l
            )));
        }
        let f = &self.filter;
        if !(f.sigma_u_px > 0.0 && f.sigma_v_frac_of_height > 0.0 && f.radius_sigmas >= 3.0) {
            return Err(Error::InvalidConfig(
                "filter needs positive widths and a radius of at least 3 sigma".into(),
            ));
        }
        let d = &self.dynamic_roi;
        if d.base.width_px == 0 || d.base.height_px == 0 || d.limits.h_min > d.limits.h_max {
            return Err(Error::InvalidConfig("degenerate search window".into()));
        }
        let r = &self.ransac;
        if r.min_order < 2 || r.max_order > 4 || r.min_order > r.max_order {
            return Err(Error::InvalidConfig(format!(
                "template order range {}..={} outside 2..=4",
                r.min_order, r.max_order
            )));
        }
        if r.iterations_per_order == 0 || !(r.band_px > 0.0) {
            return Err(Error::InvalidConfig(
                "template search needs iterations and a positive band".into(),
            ));
        }
        if self.max_templates == 0 {
            return Err(Error::InvalidConfig("max_templates must be positive".into()));
        }
        Ok(())
    }
}
