//! Run configuration: a JSON document with one section per module, dotted-key
//! overrides and an aggregated validation report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::behavior::{RouteSearch, TurnOnsetConfig};
use crate::controller::ControllerParams;
use crate::dynamics::{IdmRanges, MobilParams, DEFAULT_MAX_DECEL};
use crate::metrics::RealismConfig;
use crate::road_graph::GraphConfig;
use crate::scene_ingest::IngestConfig;
use crate::sim_engine::{EgoMode, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    pub max_variants: usize,
    pub lane_changes: bool,
    pub lane_change_cooldown: f64,
    pub epsilon_std: f64,
    pub profile_noise_std: f64,
    pub max_lane_deviation: f64,
    pub v0_floor: f64,
    pub max_decel: f64,
    pub route_horizon: f64,
    pub max_routes: usize,
    pub ego: EgoMode,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            dt: s.dt,
            horizon: s.horizon,
            max_variants: s.max_variants,
            lane_changes: s.lane_changes,
            lane_change_cooldown: s.lane_change_cooldown,
            epsilon_std: s.epsilon_std,
            profile_noise_std: s.profile_noise_std,
            max_lane_deviation: s.max_lane_deviation,
            v0_floor: s.v0_floor,
            max_decel: DEFAULT_MAX_DECEL,
            route_horizon: s.route_search.horizon_dist,
            max_routes: s.route_search.max_routes,
            ego: s.ego,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub res: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { h: 256, w: 256, res: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Prediction horizons reported, s.
    pub horizons: Vec<f64>,
    pub n_components: usize,
    pub n_eval: usize,
    pub n_points: usize,
    pub rate_hz: f64,
    pub pca_subset: usize,
    /// Slack beyond half a lane width for graph-mode validity, m.
    pub validity_margin: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let r = RealismConfig::default();
        Self {
            horizons: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            n_components: r.n_components,
            n_eval: r.n_eval,
            n_points: r.n_points,
            rate_hz: r.rate_hz,
            pca_subset: r.pca_subset,
            validity_margin: 0.5,
        }
    }
}

impl MetricsSection {
    pub fn realism(&self) -> RealismConfig {
        RealismConfig {
            n_components: self.n_components,
            n_eval: self.n_eval,
            n_points: self.n_points,
            rate_hz: self.rate_hz,
            pca_subset: self.pca_subset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sim: SimSection,
    pub idm: IdmRanges,
    pub mobil: MobilParams,
    pub controller: ControllerParams,
    pub graph: GraphConfig,
    pub ingest: IngestConfig,
    pub onset: TurnOnsetConfig,
    pub grid: GridSection,
    pub metrics: MetricsSection,
    pub sensing_range: f64,
    pub log_level: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sim: SimSection::default(),
            idm: IdmRanges::default(),
            mobil: MobilParams::default(),
            controller: ControllerParams::default(),
            graph: GraphConfig::default(),
            ingest: IngestConfig::default(),
            onset: TurnOnsetConfig::default(),
            grid: GridSection::default(),
            metrics: MetricsSection::default(),
            sensing_range: 100.0,
            log_level: "warn".into(),
        }
    }
}

impl RunConfig {
    pub fn sim_config(&self, master_seed: u64) -> SimConfig {
        SimConfig {
            dt: self.sim.dt,
            horizon: self.sim.horizon,
            max_variants: self.sim.max_variants,
            master_seed,
            idm_ranges: self.idm,
            max_decel: self.sim.max_decel,
            v0_floor: self.sim.v0_floor,
            mobil: self.mobil,
            lane_changes: self.sim.lane_changes,
            lane_change_cooldown: self.sim.lane_change_cooldown,
            controller: self.controller,
            epsilon_std: self.sim.epsilon_std,
            sensing_range: self.sensing_range,
            profile_noise_std: self.sim.profile_noise_std,
            route_search: RouteSearch {
                horizon_dist: self.sim.route_horizon,
                max_routes: self.sim.max_routes,
            },
            onset: self.onset,
            graph: self.graph,
            max_lane_deviation: self.sim.max_lane_deviation,
            ego: self.sim.ego,
        }
    }
}

/// All problems found in a configuration document.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        let mut cur = &mut root;
        for p in &parts[..parts.len() - 1] {
            cur = cur
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("keys validated against the schema");
        }
        cur.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Parses a `key=value` override; the value is read as JSON, falling back to a string.
pub fn parse_override(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("override '{s}' is not of the form key=value"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Merges `raw` and `overrides` over the defaults, then checks key names, value types
/// and every numeric invariant. All violations are reported together.
pub fn validate_config(raw: &Value, overrides: &[(String, Value)]) -> Result<RunConfig, ConfigErrors> {
    let mut errs = Vec::new();
    let mut schema = BTreeMap::new();
    flatten("", &serde_json::to_value(RunConfig::default()).expect("defaults serialize"), &mut schema);

    if !raw.is_object() {
        return Err(ConfigErrors(vec![format!("configuration must be a JSON object, got {}", kind(raw))]));
    }
    let mut given = BTreeMap::new();
    flatten("", raw, &mut given);
    given.remove("");
    for (k, v) in overrides {
        given.insert(k.clone(), v.clone());
    }
    let mut merged = schema.clone();
    for (k, v) in given {
        match schema.get(&k) {
            None => errs.push(format!("{k}: unknown key")),
            Some(d) if kind(d) != kind(&v) => errs.push(format!("{k}: expected {}, got {}", kind(d), kind(&v))),
            Some(_) => {
                merged.insert(k, v);
            }
        }
    }
    // semantic checks still run on the well-formed keys so the report is complete
    let cfg: RunConfig = match serde_json::from_value(unflatten(&merged)) {
        Ok(c) => c,
        Err(e) => {
            errs.push(e.to_string());
            return Err(ConfigErrors(errs));
        }
    };
    check(&cfg, &mut errs);
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errs))
    }
}

fn check(c: &RunConfig, errs: &mut Vec<String>) {
    let mut need = |ok: bool, msg: String| {
        if !ok {
            errs.push(msg);
        }
    };
    let positive = |v: f64| v > 0.0 && v.is_finite();
    let s = &c.sim;
    need(positive(s.dt), format!("sim.dt: must be > 0, got {}", s.dt));
    need(positive(s.horizon), format!("sim.horizon: must be > 0, got {}", s.horizon));
    if positive(s.dt) && positive(s.horizon) {
        let r = s.horizon / s.dt;
        need(
            (r - r.round()).abs() <= 1e-6,
            format!("sim.horizon: {} is not a multiple of sim.dt = {}", s.horizon, s.dt),
        );
    }
    need(s.max_variants >= 1, "sim.max_variants: must be >= 1".into());
    need(s.lane_change_cooldown >= 0.0, "sim.lane_change_cooldown: must be >= 0".into());
    need(s.epsilon_std >= 0.0, "sim.epsilon_std: must be >= 0".into());
    need(s.profile_noise_std >= 0.0, "sim.profile_noise_std: must be >= 0".into());
    need(positive(s.max_lane_deviation), "sim.max_lane_deviation: must be > 0".into());
    need(positive(s.v0_floor), "sim.v0_floor: must be > 0".into());
    need(positive(s.max_decel), "sim.max_decel: must be > 0".into());
    need(positive(s.route_horizon), "sim.route_horizon: must be > 0".into());
    need(s.max_routes >= 1, "sim.max_routes: must be >= 1".into());

    let i = &c.idm;
    need(positive(i.delta), "idm.delta: must be > 0".into());
    for (name, (lo, hi), allow_zero) in [("t_gap", i.t_gap, true), ("s0", i.s0, false), ("a", i.a, false), ("b", i.b, false)] {
        let lo_ok = if allow_zero { lo >= 0.0 } else { lo > 0.0 };
        need(lo_ok && hi >= lo && hi.is_finite(), format!("idm.{name}: range [{lo}, {hi}] invalid"));
    }
    need(c.mobil.p >= 0.0, "mobil.p: must be >= 0".into());
    need(positive(c.mobil.b_safe), "mobil.b_safe: must be > 0".into());
    need(c.mobil.da_th.is_finite() && c.mobil.da_bias.is_finite(), "mobil.da_th/da_bias: must be finite".into());

    let k = &c.controller;
    need(positive(k.kp_lateral), "controller.kp_lateral: must be > 0".into());
    need(positive(k.kp_heading), "controller.kp_heading: must be > 0".into());
    need(positive(k.kp_speed), "controller.kp_speed: must be > 0".into());
    need(positive(k.v_eps), "controller.v_eps: must be > 0".into());
    need(k.lookahead_time >= 0.0, "controller.lookahead_time: must be >= 0".into());
    need(k.lookahead_min >= 0.0, "controller.lookahead_min: must be >= 0".into());
    need(
        k.phi_max > 0.0 && k.phi_max < std::f64::consts::FRAC_PI_2,
        "controller.phi_max: must be in (0, pi/2) radians".into(),
    );
    need(
        k.psi_req_max > 0.0 && k.psi_req_max <= std::f64::consts::FRAC_PI_2,
        "controller.psi_req_max: must be in (0, pi/2] radians".into(),
    );

    let g = &c.graph;
    need(g.join_tolerance >= 0.0, "graph.join_tolerance: must be >= 0".into());
    need(positive(g.max_snap_distance), "graph.max_snap_distance: must be > 0".into());
    need(positive(g.default_lane_width), "graph.default_lane_width: must be > 0".into());
    need(
        g.straight_threshold_deg > 0.0 && g.straight_threshold_deg < g.u_turn_threshold_deg,
        "graph.straight_threshold_deg: must be > 0 and below graph.u_turn_threshold_deg".into(),
    );
    need(c.ingest.min_spawn_gap >= 0.0, "ingest.min_spawn_gap: must be >= 0".into());
    need(positive(c.ingest.max_snap_distance), "ingest.max_snap_distance: must be > 0".into());
    need(positive(c.ingest.fd_half_window), "ingest.fd_half_window: must be > 0".into());
    let o = &c.onset;
    need(positive(o.rate_threshold), "onset.rate_threshold: must be > 0".into());
    need(o.sustain >= 0.0, "onset.sustain: must be >= 0".into());
    need(o.min_step >= 0.0, "onset.min_step: must be >= 0".into());
    need(positive(o.nominal_speed), "onset.nominal_speed: must be > 0".into());
    need(positive(o.route_step), "onset.route_step: must be > 0".into());
    need(positive(o.route_heading_window), "onset.route_heading_window: must be > 0".into());

    need(c.grid.h > 0 && c.grid.h <= u32::MAX as usize, "grid.H: must be positive".into());
    need(c.grid.w > 0 && c.grid.w <= u32::MAX as usize, "grid.W: must be positive".into());
    need(positive(c.grid.res), "grid.res: must be > 0".into());

    let m = &c.metrics;
    need(
        !m.horizons.is_empty() && m.horizons.iter().all(|&h| positive(h)),
        "metrics.horizons: must be a non-empty list of positive seconds".into(),
    );
    need(
        m.n_components >= 1 && m.n_components <= 2 * m.n_points,
        "metrics.n_components: must be in 1..=2*metrics.n_points".into(),
    );
    need(m.n_eval >= 1, "metrics.n_eval: must be >= 1".into());
    need(m.n_points >= 1, "metrics.n_points: must be >= 1".into());
    need(positive(m.rate_hz), "metrics.rate_hz: must be > 0".into());
    need(m.pca_subset >= 2, "metrics.pca_subset: must be >= 2".into());
    need(m.validity_margin >= 0.0, "metrics.validity_margin: must be >= 0".into());

    need(positive(c.sensing_range), "sensing_range: must be > 0".into());
    need(
        ["error", "warn", "info", "debug", "trace", "off"].contains(&c.log_level.as_str()),
        format!("log_level: '{}' is not one of error|warn|info|debug|trace|off", c.log_level),
    );
}
