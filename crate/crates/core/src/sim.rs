//! Deterministic fixed-step scenario simulator: lane-locked point-mass
//! kinematics, a scripted cooperative-overtaking maneuver with a risk gate,
//! broadcast messaging between vehicles, and per-tick logging shaped for
//! byte-stable CSV export.
//!
//! Tick order: kinematics (skipped at t=0) -> periodic broadcast -> channel
//! poll -> perception -> risk evaluation and logging -> maneuver
//! transitions. Every random draw flows from the scenario seed, so a run is
//! a pure function of the scenario file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::PerceptionConfig;
use crate::detect::detect_lanes;
use crate::geometry::{normalize_angle, Vec2};
use crate::lane::{fit_control_points, BezierCurve};
use crate::risk::{
    evaluate_pair, ConflictArea, FieldParams, RiskEstimate, RiskSignal, RiskThresholds,
    VehicleState,
};
use crate::synth::{render_frame, MarkingSpec, SceneSpec};
use crate::v2v::{BsmMessage, Channel, ChannelModel, DeliveryRecord};
use crate::{Error, Result};

/// Longitudinal and lateral acceleration bound, m/s^2.
pub const ACCEL_LIMIT_MPS2: f64 = 2.7;
/// Speed envelope, m/s.
pub const SPEED_MAX_MPS: f64 = 35.0;

// ============================================================================
// Road geometry
// ============================================================================

/// Lane centerline family: a straight road along +y or a constant-radius
/// arc. Arc-length `s` runs along lane 0; positive `lateral` points to the
/// left of travel, and lane `i` is centered at `i * lane_width` leftward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LanePath {
    Straight,
    Arc { radius: f64 },
}

impl LanePath {
    /// World point at arc length `s` and signed lateral offset, meters.
    pub fn point(&self, s: f64, lateral: f64) -> Vec2 {
        match *self {
            LanePath::Straight => Vec2::new(-lateral, s),
            LanePath::Arc { radius } => {
                let a = s / radius;
                Vec2::new(-radius + (radius - lateral) * a.cos(), (radius - lateral) * a.sin())
            }
        }
    }

    /// Path tangent direction at arc length `s`, radians from world +x.
    pub fn heading(&self, s: f64) -> f64 {
        match *self {
            LanePath::Straight => std::f64::consts::FRAC_PI_2,
            LanePath::Arc { radius } => std::f64::consts::FRAC_PI_2 + s / radius,
        }
    }

    /// Inverse of [`LanePath::point`]: `(s, lateral)` for a world point.
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        match *self {
            LanePath::Straight => (p.y, -p.x),
            LanePath::Arc { radius } => {
                let d = Vec2::new(p.x + radius, p.y);
                let r = d.norm();
                (radius * d.y.atan2(d.x), radius - r)
            }
        }
    }
}

// ============================================================================
// Scenario schema
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Straight,
    Arc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadSpec {
    pub path: PathKind,
    /// Arc radius, m; required when `path = "arc"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub lane_width: f64,
    pub lanes: usize,
}

impl Default for RoadSpec {
    fn default() -> Self {
        RoadSpec {
            path: PathKind::Straight,
            radius: None,
            lane_width: 3.5,
            lanes: 3,
        }
    }
}

impl RoadSpec {
    pub fn lane_path(&self) -> LanePath {
        match self.path {
            PathKind::Straight => LanePath::Straight,
            PathKind::Arc => LanePath::Arc {
                radius: self.radius.unwrap_or(0.0),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub duration_s: f64,
    pub dt_ms: u64,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            duration_s: 20.0,
            dt_ms: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub field: FieldParams,
    pub area: ConflictArea,
    pub thresholds: RiskThresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptionMode {
    /// Lane beliefs come straight from road geometry.
    GroundTruth,
    /// Lane beliefs come from the detection chain run on rendered frames.
    Camera,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionSpec {
    pub mode: PerceptionMode,
    pub period_ms: u64,
}

impl Default for PerceptionSpec {
    fn default() -> Self {
        PerceptionSpec {
            mode: PerceptionMode::GroundTruth,
            period_ms: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ego,
    Traffic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Start only when the advisory is below warning and the target lane
    /// window is clear.
    Enforce,
    /// Start at the scripted time regardless (for scripted sweeps).
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManeuverSpec {
    pub target_lane: usize,
    pub start_time_s: f64,
    pub duration_s: f64,
    /// Defaults to `duration_s` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub return_duration_s: Option<f64>,
    pub gate: GateMode,
    /// Vehicle being overtaken; inferred (nearest ahead in the home lane)
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_id: Option<u32>,
    /// Return begins once the longitudinal clearance over the target
    /// reaches this many base field widths plus half the two lengths.
    pub return_clearance_sigmas: f64,
    /// Occupancy window behind/ahead (travel direction) for the lane gate, m.
    pub occupancy_behind_m: f64,
    pub occupancy_ahead_m: f64,
}

impl Default for ManeuverSpec {
    fn default() -> Self {
        ManeuverSpec {
            target_lane: 1,
            start_time_s: 0.0,
            duration_s: 4.0,
            return_duration_s: None,
            gate: GateMode::Enforce,
            target_id: None,
            return_clearance_sigmas: 2.0,
            occupancy_behind_m: 6.0,
            occupancy_ahead_m: 30.0,
        }
    }
}

fn default_one() -> i8 {
    1
}

fn default_length() -> f64 {
    4.2
}

fn default_width() -> f64 {
    1.8
}

fn default_role() -> Role {
    Role::Traffic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub id: u32,
    #[serde(default = "default_role")]
    pub role: Role,
    pub lane: usize,
    /// Initial arc length along the road, m.
    #[serde(default)]
    pub s0: f64,
    pub speed_mps: f64,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    /// +1 with the path direction, -1 oncoming.
    #[serde(default = "default_one")]
    pub direction: i8,
    /// Speed setpoints `(t_s, speed_mps)`; the latest one at or before t
    /// applies, approached under the acceleration limit.
    #[serde(default)]
    pub speed_profile: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maneuver: Option<ManeuverSpec>,
}

/// One-dimensional scripted parameter sweep over the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Maneuver start-time variants, s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_time_s: Option<Vec<f64>>,
    /// Ego initial-speed variants, m/s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ego_speed_mps: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub road: RoadSpec,
    pub sim: SimParams,
    pub channel: ChannelModel,
    pub risk: RiskConfig,
    pub perception: PerceptionSpec,
    #[serde(rename = "vehicle")]
    pub vehicles: Vec<VehicleSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "scenario".into(),
            road: RoadSpec::default(),
            sim: SimParams::default(),
            channel: ChannelModel::default(),
            risk: RiskConfig::default(),
            perception: PerceptionSpec::default(),
            vehicles: Vec::new(),
            sweep: None,
        }
    }
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Scenario =
            toml::from_str(s).map_err(|e| Error::InvalidScenario(format!("parse: {e}")))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Checks the whole scenario and reports every violation at once.
    pub fn validate(&self) -> Result<()> {
        let mut v: Vec<String> = Vec::new();

        if self.road.lanes == 0 {
            v.push("road needs at least one lane".into());
        }
        if !(self.road.lane_width > 0.0) {
            v.push(format!("lane width {} not positive", self.road.lane_width));
        }
        if self.road.path == PathKind::Arc {
            match self.road.radius {
                Some(r) if r > 0.0 => {}
                other => v.push(format!("arc road needs a positive radius, got {other:?}")),
            }
        }

        if !(self.sim.duration_s > 0.0) {
            v.push(format!("duration {} s not positive", self.sim.duration_s));
        }
        if self.sim.dt_ms == 0 {
            v.push("dt must be at least 1 ms".into());
        } else {
            if self.channel.period_ms % self.sim.dt_ms != 0 {
                v.push(format!(
                    "dt {} ms must divide the broadcast period {} ms",
                    self.sim.dt_ms, self.channel.period_ms
                ));
            }
            if self.perception.period_ms % self.sim.dt_ms != 0 {
                v.push(format!(
                    "dt {} ms must divide the perception period {} ms",
                    self.sim.dt_ms, self.perception.period_ms
                ));
            }
        }
        if let Err(e) = self.channel.validate() {
            v.push(e.to_string());
        }
        if let Err(e) = self.risk.area.validate() {
            v.push(e.to_string());
        }
        let th = &self.risk.thresholds;
        if !(th.reminding > 0.0 && th.reminding < th.warning && th.warning < 1.0) {
            v.push(format!(
                "thresholds need 0 < reminding {} < warning {} < 1",
                th.reminding, th.warning
            ));
        }
        let f = &self.risk.field;
        if !(f.sigma_x > 0.0 && f.sigma_y_max > 0.0 && f.lateral_ratio > 0.0 && f.reaction_time >= 0.0)
        {
            v.push("field parameters must be positive (reaction time may be zero)".into());
        }

        let mut ids = BTreeMap::new();
        let mut egos = 0usize;
        for (i, veh) in self.vehicles.iter().enumerate() {
            if let Some(prev) = ids.insert(veh.id, i) {
                v.push(format!("vehicles {prev} and {i} share id {}", veh.id));
            }
            if veh.role == Role::Ego {
                egos += 1;
            }
            if veh.lane >= self.road.lanes.max(1) {
                v.push(format!(
                    "vehicle {} starts in lane {} of a {}-lane road",
                    veh.id, veh.lane, self.road.lanes
                ));
            }
            if !(0.0..=SPEED_MAX_MPS).contains(&veh.speed_mps) {
                v.push(format!(
                    "vehicle {} speed {} outside [0, {}] m/s",
                    veh.id, veh.speed_mps, SPEED_MAX_MPS
                ));
            }
            for &(t, sp) in &veh.speed_profile {
                if t < 0.0 || !(0.0..=SPEED_MAX_MPS).contains(&sp) {
                    v.push(format!(
                        "vehicle {} setpoint ({t} s, {sp} m/s) outside limits",
                        veh.id
                    ));
                }
            }
            if !(veh.length > 0.0 && veh.width > 0.0) {
                v.push(format!("vehicle {} needs positive dimensions", veh.id));
            }
            if veh.direction != 1 && veh.direction != -1 {
                v.push(format!(
                    "vehicle {} direction {} must be 1 or -1",
                    veh.id, veh.direction
                ));
            }
            if let Some(m) = &veh.maneuver {
                if veh.role != Role::Ego {
                    v.push(format!("vehicle {} is not ego but has a maneuver", veh.id));
                }
                if m.target_lane >= self.road.lanes.max(1) {
                    v.push(format!(
                        "maneuver target lane {} outside the {}-lane road",
                        m.target_lane, self.road.lanes
                    ));
                }
                if m.target_lane == veh.lane {
                    v.push(format!(
                        "maneuver target lane {} equals the starting lane",
                        m.target_lane
                    ));
                }
                if m.start_time_s < 0.0 {
                    v.push(format!("maneuver start {} s negative", m.start_time_s));
                }
                let delta = (m.target_lane as f64 - veh.lane as f64).abs() * self.road.lane_width;
                for (label, dur) in [
                    ("lane change", m.duration_s),
                    ("return", m.return_duration_s.unwrap_or(m.duration_s)),
                ] {
                    if !(dur > 0.0) {
                        v.push(format!("{label} duration {dur} s not positive"));
                    } else {
                        let peak = 6.0 * delta / (dur * dur);
                        if peak > ACCEL_LIMIT_MPS2 + 1e-12 {
                            v.push(format!(
                                "{label} over {delta:.2} m in {dur} s needs {peak:.2} m/s^2 \
                                 lateral acceleration, over the {ACCEL_LIMIT_MPS2} limit"
                            ));
                        }
                    }
                }
                if let Some(tid) = m.target_id {
                    if !self.vehicles.iter().any(|o| o.id == tid) {
                        v.push(format!("maneuver target id {tid} is not in the scenario"));
                    }
                }
                if !(m.return_clearance_sigmas >= 0.0) {
                    v.push("return clearance must be non-negative".into());
                }
            }
        }
        if self.vehicles.is_empty() {
            v.push("scenario has no vehicles".into());
        }
        if egos > 1 {
            v.push(format!("found {egos} ego vehicles, expected at most one"));
        }

        if let Some(sw) = &self.sweep {
            let dims = sw.start_time_s.is_some() as usize + sw.ego_speed_mps.is_some() as usize;
            if dims > 1 {
                v.push("sweep may vary only one parameter".into());
            }
            if matches!(&sw.start_time_s, Some(l) if l.is_empty())
                || matches!(&sw.ego_speed_mps, Some(l) if l.is_empty())
            {
                v.push("sweep list is empty".into());
            }
            if sw.start_time_s.is_some()
                && !self.vehicles.iter().any(|veh| veh.maneuver.is_some())
            {
                v.push("start-time sweep needs a maneuver".into());
            }
            if let Some(list) = &sw.ego_speed_mps {
                for &sp in list {
                    if !(0.0..=SPEED_MAX_MPS).contains(&sp) {
                        v.push(format!("sweep speed {sp} outside [0, {SPEED_MAX_MPS}] m/s"));
                    }
                }
            }
        }

        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidScenario(v.join("; ")))
        }
    }

    /// Variant labels/scenarios implied by the sweep section; a single
    /// unlabeled entry when there is none.
    pub fn expand_sweep(&self) -> Vec<(String, Scenario)> {
        let Some(sw) = &self.sweep else {
            return vec![(String::new(), self.clone())];
        };
        let mut out = Vec::new();
        if let Some(starts) = &sw.start_time_s {
            for &t in starts {
                let mut sc = self.clone();
                sc.sweep = None;
                for veh in &mut sc.vehicles {
                    if let Some(m) = &mut veh.maneuver {
                        m.start_time_s = t;
                    }
                }
                out.push((format!("start_{t:.1}s"), sc));
            }
        } else if let Some(speeds) = &sw.ego_speed_mps {
            for &sp in speeds {
                let mut sc = self.clone();
                sc.sweep = None;
                for veh in &mut sc.vehicles {
                    if veh.role == Role::Ego {
                        veh.speed_mps = sp;
                    }
                }
                out.push((format!("speed_{sp:.2}mps"), sc));
            }
        }
        if out.is_empty() {
            out.push((String::new(), self.clone()));
        }
        out
    }
}

// ============================================================================
// Maneuver profile
// ============================================================================

/// Maneuver state machine. Phase names match the trace vocabulary:
/// `keep`, `lane_change_out`, `pass`, `return`, `done`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Keep,
    LaneChangeOut,
    Pass,
    Return,
    Done,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Keep => "keep",
            Phase::LaneChangeOut => "lane_change_out",
            Phase::Pass => "pass",
            Phase::Return => "return",
            Phase::Done => "done",
        }
    }
}

/// Smoothstep blend used for the lateral lane-change trajectory. It is the
/// closed form of a cubic Bezier whose inner control points sit a third of
/// the way in at the start/end offsets, so the offset is continuous with
/// zero slope at both phase joins and its peak lateral acceleration over a
/// phase of length T meters covered in T_s seconds is 6*delta/T_s^2.
fn smoothstep(p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    p * p * (3.0 - 2.0 * p)
}

// ============================================================================
// Runtime state
// ============================================================================

#[derive(Debug, Clone, Copy)]
struct Belief {
    msg: BsmMessage,
}

#[derive(Debug)]
struct Actor {
    spec: VehicleSpec,
    s: f64,
    speed: f64,
    /// Current lateral offset, m (left of lane 0 center positive).
    lat: f64,
    phase: Phase,
    phase_start_ms: u64,
    lat_from: f64,
    lat_to: f64,
    started_ms: Option<u64>,
    completed_ms: Option<u64>,
    /// Vehicle being overtaken, resolved at maneuver start.
    overtake_target: Option<u32>,
    gate_blocked_logged: bool,
    beliefs: BTreeMap<u32, Belief>,
    lane_curves: Vec<BezierCurve>,
}

impl Actor {
    fn new(spec: &VehicleSpec, lane_width: f64) -> Self {
        let home = spec.lane as f64 * lane_width;
        Actor {
            spec: spec.clone(),
            s: spec.s0,
            speed: spec.speed_mps,
            lat: home,
            phase: Phase::Keep,
            phase_start_ms: 0,
            lat_from: home,
            lat_to: home,
            started_ms: None,
            completed_ms: None,
            overtake_target: None,
            gate_blocked_logged: false,
            beliefs: BTreeMap::new(),
            lane_curves: Vec::new(),
        }
    }

    fn home_lat(&self, lane_width: f64) -> f64 {
        self.spec.lane as f64 * lane_width
    }

    /// True while the lateral position is moving or about to move.
    fn lane_change_intent(&self, t_s: f64) -> bool {
        match self.phase {
            Phase::LaneChangeOut | Phase::Return => true,
            Phase::Keep => self
                .spec
                .maneuver
                .as_ref()
                .is_some_and(|m| t_s + 1.0 >= m.start_time_s && self.completed_ms.is_none()),
            _ => false,
        }
    }

    fn speed_setpoint(&self, t_s: f64) -> f64 {
        let mut sp = self.spec.speed_mps;
        for &(t, v) in &self.spec.speed_profile {
            if t <= t_s {
                sp = v;
            }
        }
        sp
    }

    /// Lateral offset at time `t_ms` from the phase closed form.
    fn lateral_at(&self, t_ms: u64, dur_ms: u64) -> f64 {
        match self.phase {
            Phase::Keep | Phase::Done => self.lat_to,
            Phase::Pass => self.lat_to,
            Phase::LaneChangeOut | Phase::Return => {
                let p = (t_ms.saturating_sub(self.phase_start_ms)) as f64 / dur_ms as f64;
                self.lat_from + (self.lat_to - self.lat_from) * smoothstep(p)
            }
        }
    }

    fn world_state(&self, path: &LanePath) -> VehicleState {
        let heading = if self.spec.direction >= 0 {
            path.heading(self.s)
        } else {
            normalize_angle(path.heading(self.s) + std::f64::consts::PI)
        };
        VehicleState {
            position: path.point(self.s, self.lat),
            heading,
            speed: self.speed,
            length: self.spec.length,
            width: self.spec.width,
        }
    }
}

/// Point-mass advance over one step: ramp the speed toward the setpoint
/// under the acceleration limit, clamp to the envelope, advance arc length.
fn step_kinematics(speed: f64, setpoint: f64, dt_s: f64) -> f64 {
    let dv = (setpoint - speed).clamp(-ACCEL_LIMIT_MPS2 * dt_s, ACCEL_LIMIT_MPS2 * dt_s);
    (speed + dv).clamp(0.0, SPEED_MAX_MPS)
}

// ============================================================================
// Output
// ============================================================================

#[derive(Debug, Clone, PartialEq)]
pub struct StateRow {
    pub t_ms: u64,
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub s: f64,
    pub lateral: f64,
    pub phase: Phase,
    pub lanes_seen: usize,
    /// Highest pair probability seen by this vehicle this tick (ego only).
    pub max_risk: f64,
    pub signal: RiskSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub t_ms: u64,
    pub ego: u32,
    pub other: u32,
    pub probability: f64,
    pub signal: RiskSignal,
    pub time_to_contact: f64,
    pub delta_v: f64,
    pub passed: bool,
    pub gap_m: f64,
    pub belief_age_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSummary {
    pub other: u32,
    pub peak_probability: f64,
    pub peak_t_ms: u64,
    pub first_reminding_ms: Option<u64>,
    pub first_warning_ms: Option<u64>,
    pub min_time_to_contact: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SimOutput {
    pub scenario_name: String,
    pub label: String,
    pub states: Vec<StateRow>,
    pub pairs: Vec<PairRow>,
    pub deliveries: Vec<DeliveryRecord>,
    pub events: Vec<(u64, String)>,
    pub summaries: Vec<PairSummary>,
    pub maneuver_started_ms: Option<u64>,
    pub maneuver_completed_ms: Option<u64>,
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_ttc(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "inf".into()
    }
}

fn signal_str(s: RiskSignal) -> &'static str {
    match s {
        RiskSignal::None => "none",
        RiskSignal::Reminding => "reminding",
        RiskSignal::Warning => "warning",
    }
}

impl SimOutput {
    pub fn states_csv(&self) -> String {
        let mut out =
            String::from("t_ms,id,x,y,heading,speed,s,lateral,phase,lanes_seen,max_risk,signal\n");
        for r in &self.states {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t_ms,
                r.id,
                fmt_f(r.x),
                fmt_f(r.y),
                fmt_f(r.heading),
                fmt_f(r.speed),
                fmt_f(r.s),
                fmt_f(r.lateral),
                r.phase.as_str(),
                r.lanes_seen,
                fmt_f(r.max_risk),
                signal_str(r.signal),
            );
        }
        out
    }

    pub fn pairs_csv(&self) -> String {
        let mut out = String::from(
            "t_ms,ego,other,probability,signal,ttc,delta_v,passed,gap,belief_age_ms\n",
        );
        for r in &self.pairs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.t_ms,
                r.ego,
                r.other,
                fmt_f(r.probability),
                signal_str(r.signal),
                fmt_ttc(r.time_to_contact),
                fmt_f(r.delta_v),
                u8::from(r.passed),
                fmt_f(r.gap_m),
                r.belief_age_ms,
            );
        }
        out
    }

    pub fn deliveries_csv(&self) -> String {
        let mut out = String::from("sent_ms,sender,seq,receiver,delivered,deliver_ms\n");
        for d in &self.deliveries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                d.sent_ms,
                d.sender,
                d.seq,
                d.receiver,
                u8::from(d.delivered),
                d.deliver_ms,
            );
        }
        out
    }

    /// Highest pair probability over the whole run, 0 with no pairs.
    pub fn peak_probability(&self) -> f64 {
        self.summaries
            .iter()
            .map(|s| s.peak_probability)
            .fold(0.0, f64::max)
    }

    /// Earliest warning crossing over all pairs.
    pub fn first_warning_ms(&self) -> Option<u64> {
        self.summaries.iter().filter_map(|s| s.first_warning_ms).min()
    }
}

// ============================================================================
// Engine
// ============================================================================

/// Runs every sweep variant of the scenario.
pub fn run_sweep(sc: &Scenario) -> Result<Vec<SimOutput>> {
    sc.validate()?;
    sc.expand_sweep()
        .into_iter()
        .map(|(label, variant)| {
            let mut out = run_scenario(&variant)?;
            out.label = label;
            Ok(out)
        })
        .collect()
}

/// Runs one scenario to completion.
pub fn run_scenario(sc: &Scenario) -> Result<SimOutput> {
    sc.validate()?;
    let path = sc.road.lane_path();
    let w = sc.road.lane_width;
    let dt_ms = sc.sim.dt_ms;
    let dt_s = dt_ms as f64 / 1000.0;
    let n_steps = (sc.sim.duration_s * 1000.0 / dt_ms as f64).round() as u64;

    let mut actors: Vec<Actor> = sc.vehicles.iter().map(|v| Actor::new(v, w)).collect();
    let mut channel = Channel::new(sc.channel, sc.sim.seed)?;
    let perception_cfg = PerceptionConfig::standard();

    let mut out = SimOutput {
        scenario_name: sc.name.clone(),
        ..SimOutput::default()
    };

    for k in 0..=n_steps {
        let t_ms = k * dt_ms;
        let t_s = t_ms as f64 / 1000.0;

        // -- kinematics ----------------------------------------------------
        if k > 0 {
            for a in &mut actors {
                let setpoint = a.speed_setpoint(t_s);
                a.speed = step_kinematics(a.speed, setpoint, dt_s);
                a.s += a.spec.direction as f64 * a.speed * dt_s;
                let dur_ms = phase_duration_ms(a);
                a.lat = a.lateral_at(t_ms, dur_ms);
            }
        }

        // -- broadcast -----------------------------------------------------
        if t_ms % sc.channel.period_ms == 0 {
            let positions: Vec<(u32, Vec2)> = actors
                .iter()
                .map(|a| (a.spec.id, path.point(a.s, a.lat)))
                .collect();
            for i in 0..actors.len() {
                let intent = actors[i].lane_change_intent(t_s);
                let state = actors[i].world_state(&path);
                let seq = channel.take_seq(actors[i].spec.id);
                let msg = BsmMessage::from_state(actors[i].spec.id, seq, t_ms, &state, intent);
                channel.broadcast(&msg, state.position, &positions, t_ms);
            }
        }

        // -- delivery ------------------------------------------------------
        for (receiver, msg) in channel.poll(t_ms) {
            if let Some(a) = actors.iter_mut().find(|a| a.spec.id == receiver) {
                let newer = a
                    .beliefs
                    .get(&msg.sender_id)
                    .is_none_or(|b| msg.timestamp_ms >= b.msg.timestamp_ms);
                if newer {
                    a.beliefs.insert(msg.sender_id, Belief { msg });
                }
            }
        }

        // -- perception ----------------------------------------------------
        if t_ms % sc.perception.period_ms == 0 {
            if let Some(ego) = actors.iter_mut().find(|a| a.spec.role == Role::Ego) {
                match perceive_lanes(sc, &path, ego, &perception_cfg, t_ms) {
                    Ok(curves) => ego.lane_curves = curves,
                    Err(e) => {
                        ego.lane_curves.clear();
                        out.events.push((t_ms, format!("lane perception failed: {e}")));
                    }
                }
            }
        }

        // -- risk evaluation + logging --------------------------------------
        let mut ego_desires: Vec<(u32, RiskEstimate)> = Vec::new();
        let ego_idx = actors.iter().position(|a| a.spec.role == Role::Ego);
        if let Some(i) = ego_idx {
            let ego_state = actors[i].world_state(&path);
            for (&sender, belief) in &actors[i].beliefs {
                let other = belief.msg.to_state();
                let est = evaluate_pair(
                    &ego_state,
                    &other,
                    &sc.risk.field,
                    &sc.risk.area,
                    &sc.risk.thresholds,
                )?;
                out.pairs.push(PairRow {
                    t_ms,
                    ego: actors[i].spec.id,
                    other: sender,
                    probability: est.probability,
                    signal: est.signal,
                    time_to_contact: est.time_to_contact,
                    delta_v: est.delta_v,
                    passed: est.passed,
                    gap_m: (ego_state.position - other.position).norm(),
                    belief_age_ms: t_ms - belief.msg.timestamp_ms,
                });
                ego_desires.push((sender, est));
            }
        }

        for (idx, a) in actors.iter().enumerate() {
            let st = a.world_state(&path);
            let (max_risk, signal) = if Some(idx) == ego_idx {
                ego_desires.iter().fold(
                    (0.0f64, RiskSignal::None),
                    |(p, s), (_, est)| (p.max(est.probability), s.max(est.signal)),
                )
            } else {
                (0.0, RiskSignal::None)
            };
            out.states.push(StateRow {
                t_ms,
                id: a.spec.id,
                x: st.position.x,
                y: st.position.y,
                heading: st.heading,
                speed: st.speed,
                s: a.s,
                lateral: a.lat,
                phase: a.phase,
                lanes_seen: a.lane_curves.len(),
                max_risk,
                signal,
            });
        }

        // -- maneuver transitions -------------------------------------------
        if let Some(i) = ego_idx {
            let worst = ego_desires
                .iter()
                .map(|(_, e)| e.signal)
                .max()
                .unwrap_or(RiskSignal::None);
            advance_maneuver(&mut actors, i, sc, &path, t_ms, t_s, worst, &mut out.events);
        }
    }

    out.deliveries = channel.log().to_vec();
    if let Some(ego) = actors.iter().find(|a| a.spec.role == Role::Ego) {
        out.maneuver_started_ms = ego.started_ms;
        out.maneuver_completed_ms = ego.completed_ms;
    }
    out.summaries = summarize(&out.pairs);
    Ok(out)
}

fn phase_duration_ms(a: &Actor) -> u64 {
    let Some(m) = &a.spec.maneuver else { return 1 };
    let dur_s = match a.phase {
        Phase::Return => m.return_duration_s.unwrap_or(m.duration_s),
        _ => m.duration_s,
    };
    ((dur_s * 1000.0).round() as u64).max(1)
}

/// True when any believed neighbor occupies the window around the ego in
/// the given lane.
/// Along-road separation `s_a - s_b`. Arc-length coordinates integrate
/// without bound while projected positions land on the principal branch, so
/// on a circular path the raw difference can be off by whole laps; fold it
/// to the nearest equivalent.
fn s_delta(path: &LanePath, s_a: f64, s_b: f64) -> f64 {
    match path {
        LanePath::Straight => s_a - s_b,
        LanePath::Arc { radius } => {
            let period = 2.0 * std::f64::consts::PI * radius;
            let mut d = (s_a - s_b) % period;
            if d > period / 2.0 {
                d -= period;
            } else if d < -period / 2.0 {
                d += period;
            }
            d
        }
    }
}

fn lane_window_occupied(
    actors: &[Actor],
    ego_idx: usize,
    path: &LanePath,
    lane_width: f64,
    lane: usize,
    behind_m: f64,
    ahead_m: f64,
) -> Option<u32> {
    let ego = &actors[ego_idx];
    let dir = ego.spec.direction as f64;
    for (&sender, belief) in &ego.beliefs {
        let p = Vec2::new(belief.msg.x, belief.msg.y);
        let (s_b, lat_b) = path.project(p);
        if (lat_b - lane as f64 * lane_width).abs() > lane_width / 2.0 {
            continue;
        }
        let ds = s_delta(path, s_b, ego.s) * dir;
        if ds >= -behind_m && ds <= ahead_m {
            return Some(sender);
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn advance_maneuver(
    actors: &mut [Actor],
    ego_idx: usize,
    sc: &Scenario,
    path: &LanePath,
    t_ms: u64,
    t_s: f64,
    worst_signal: RiskSignal,
    events: &mut Vec<(u64, String)>,
) {
    let w = sc.road.lane_width;
    let Some(m) = actors[ego_idx].spec.maneuver.clone() else {
        return;
    };

    match actors[ego_idx].phase {
        Phase::Keep => {
            if t_s + 1e-9 < m.start_time_s {
                return;
            }
            if m.gate == GateMode::Enforce {
                if worst_signal >= RiskSignal::Warning {
                    if !actors[ego_idx].gate_blocked_logged {
                        events.push((t_ms, "maneuver blocked: warning-level risk".into()));
                        actors[ego_idx].gate_blocked_logged = true;
                    }
                    return;
                }
                if let Some(by) = lane_window_occupied(
                    actors,
                    ego_idx,
                    path,
                    w,
                    m.target_lane,
                    m.occupancy_behind_m,
                    m.occupancy_ahead_m,
                ) {
                    if !actors[ego_idx].gate_blocked_logged {
                        events.push((
                            t_ms,
                            format!("maneuver blocked: lane {} occupied by {by}", m.target_lane),
                        ));
                        actors[ego_idx].gate_blocked_logged = true;
                    }
                    return;
                }
            }
            // Resolve who is being overtaken before leaving the lane.
            let target = m.target_id.or_else(|| {
                let ego = &actors[ego_idx];
                let dir = ego.spec.direction as f64;
                ego.beliefs
                    .iter()
                    .filter_map(|(&id, b)| {
                        let (s_b, lat_b) = path.project(Vec2::new(b.msg.x, b.msg.y));
                        let ds = s_delta(path, s_b, ego.s) * dir;
                        let same_lane =
                            (lat_b - ego.home_lat(w)).abs() <= w / 2.0;
                        (same_lane && ds > 0.0).then_some((id, ds))
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(id, _)| id)
            });
            let ego = &mut actors[ego_idx];
            ego.overtake_target = target;
            ego.phase = Phase::LaneChangeOut;
            ego.phase_start_ms = t_ms;
            ego.lat_from = ego.home_lat(w);
            ego.lat_to = m.target_lane as f64 * w;
            ego.started_ms = Some(t_ms);
            events.push((t_ms, format!("lane change out toward lane {}", m.target_lane)));
        }
        Phase::LaneChangeOut => {
            if t_ms >= actors[ego_idx].phase_start_ms + phase_duration_ms(&actors[ego_idx]) {
                let ego = &mut actors[ego_idx];
                ego.lat = ego.lat_to;
                ego.phase = Phase::Pass;
                ego.phase_start_ms = t_ms;
                ego.lat_from = ego.lat_to;
                events.push((t_ms, "pass phase".into()));
            }
        }
        Phase::Pass => {
            let ego = &actors[ego_idx];
            let dir = ego.spec.direction as f64;
            let clearance_needed = |len_other: f64| {
                m.return_clearance_sigmas * sc.risk.field.sigma_x
                    + (ego.spec.length + len_other) / 2.0
            };
            let clear = match ego.overtake_target.and_then(|id| ego.beliefs.get(&id)) {
                Some(b) => {
                    let (s_b, _) = path.project(Vec2::new(b.msg.x, b.msg.y));
                    s_delta(path, ego.s, s_b) * dir
                        >= clearance_needed(b.msg.length_cm as f64 / 100.0)
                }
                // No tracked target: fall back to the occupancy window on
                // the home lane.
                None => lane_window_occupied(
                    actors,
                    ego_idx,
                    path,
                    w,
                    ego.spec.lane,
                    m.occupancy_behind_m,
                    m.occupancy_ahead_m,
                )
                .is_none(),
            };
            if clear {
                let ego = &mut actors[ego_idx];
                ego.phase = Phase::Return;
                ego.phase_start_ms = t_ms;
                ego.lat_from = ego.lat_to;
                ego.lat_to = ego.home_lat(w);
                events.push((t_ms, "returning to the home lane".into()));
            }
        }
        Phase::Return => {
            if t_ms >= actors[ego_idx].phase_start_ms + phase_duration_ms(&actors[ego_idx]) {
                let ego = &mut actors[ego_idx];
                ego.lat = ego.lat_to;
                ego.phase = Phase::Done;
                ego.completed_ms = Some(t_ms);
                events.push((t_ms, "maneuver complete".into()));
            }
        }
        Phase::Done => {}
    }
}

// ============================================================================
// In-sim lane perception
// ============================================================================

/// Lane boundary curves in the ego vehicle frame (x right, y forward, m),
/// either exact from road geometry or recovered by the detection chain on a
/// rendered frame.
fn perceive_lanes(
    sc: &Scenario,
    path: &LanePath,
    ego: &Actor,
    cfg: &PerceptionConfig,
    t_ms: u64,
) -> Result<Vec<BezierCurve>> {
    let truth = boundary_curves_ego_frame(sc, path, ego)?;
    match sc.perception.mode {
        PerceptionMode::GroundTruth => Ok(truth),
        PerceptionMode::Camera => {
            let spec = SceneSpec {
                calib: cfg.calibration,
                road_half_width_m: sc.road.lanes as f64 * sc.road.lane_width,
                markings: truth
                    .iter()
                    .map(|c| MarkingSpec {
                        ctrl: c.ctrl.iter().map(|p| (p.x, p.y)).collect(),
                        width_m: 0.15,
                        luminance: 220.0,
                        gaps: Vec::new(),
                    })
                    .collect(),
                noise_sigma: 4.0,
                ..SceneSpec::default()
            };
            let frame = render_frame(&spec, sc.sim.seed ^ t_ms)?;
            let nearest = (ego.lat / sc.road.lane_width).round() * sc.road.lane_width;
            let dev_px = (ego.lat - nearest) / cfg.birdeye.res_m;
            let det = detect_lanes(
                &frame,
                cfg,
                ego.speed,
                ego.lane_change_intent(t_ms as f64 / 1000.0),
                dev_px,
            )?;
            Ok(det.templates.into_iter().map(|t| t.curve).collect())
        }
    }
}

/// Boundary centerlines visible ahead of the ego, fitted in its frame.
fn boundary_curves_ego_frame(
    sc: &Scenario,
    path: &LanePath,
    ego: &Actor,
) -> Result<Vec<BezierCurve>> {
    let w = sc.road.lane_width;
    let ego_pos = path.point(ego.s, ego.lat);
    let heading = if ego.spec.direction >= 0 {
        path.heading(ego.s)
    } else {
        normalize_angle(path.heading(ego.s) + std::f64::consts::PI)
    };
    let fwd = Vec2::new(heading.cos(), heading.sin());
    let right = Vec2::new(heading.sin(), -heading.cos());
    let dir = ego.spec.direction as f64;

    let mut curves = Vec::new();
    for j in 0..=sc.road.lanes {
        let lat_b = (j as f64 - 0.5) * w;
        let mut pts = Vec::new();
        for k in 0..14 {
            let ahead = 2.0 + 2.0 * k as f64;
            let p = path.point(ego.s + dir * ahead, lat_b);
            let d = p - ego_pos;
            let (x, y) = (d.dot(&right), d.dot(&fwd));
            if (2.0..=28.0).contains(&y) && x.abs() <= 8.0 {
                pts.push(Vec2::new(x, y));
            }
        }
        if pts.len() >= 6 {
            if let Ok(curve) = fit_control_points(&pts, 3) {
                curves.push(curve);
            }
        }
    }
    Ok(curves)
}

fn summarize(pairs: &[PairRow]) -> Vec<PairSummary> {
    let mut map: BTreeMap<u32, PairSummary> = BTreeMap::new();
    for r in pairs {
        let e = map.entry(r.other).or_insert(PairSummary {
            other: r.other,
            peak_probability: -1.0,
            peak_t_ms: 0,
            first_reminding_ms: None,
            first_warning_ms: None,
            min_time_to_contact: f64::INFINITY,
        });
        if r.probability > e.peak_probability {
            e.peak_probability = r.probability;
            e.peak_t_ms = r.t_ms;
        }
        if r.signal >= RiskSignal::Reminding && e.first_reminding_ms.is_none() {
            e.first_reminding_ms = Some(r.t_ms);
        }
        if r.signal >= RiskSignal::Warning && e.first_warning_ms.is_none() {
            e.first_warning_ms = Some(r.t_ms);
        }
        if r.time_to_contact < e.min_time_to_contact {
            e.min_time_to_contact = r.time_to_contact;
        }
    }
    map.into_values().collect()
}
