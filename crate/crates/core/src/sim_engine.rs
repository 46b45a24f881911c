//! Per-scene closed-loop rollout and dataset orchestration.
//!
//! Every step decides against a frozen snapshot of the previous states and then advances
//! all agents at once, so results do not depend on agent order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{
    feature_for_behavior, match_profile, sample_behaviors, BehaviorError, ProfilePool, RouteSearch,
    TurnOnsetConfig, VariantPlan, VelocityProfile,
};
use crate::controller::{
    heading_rate, lateral_velocity, longitudinal_command, required_heading, step_kinematics,
    steering_from_rate, ControllerParams, VehicleGeometry, VehicleState,
};
use crate::dynamics::{
    find_leader_from, idm_accel, mobil_decide, sample_idm_params_in, AgentSnapshot, IdmParams, IdmRanges,
    LaneDecision, LeaderInfo, MobilAccels, MobilParams, Side, DEFAULT_MAX_DECEL,
};
use crate::geom::{wrap_angle, Vec2};
use crate::road_graph::{
    classify_maneuver, enumerate_routes, sample_centerline, EdgeId, GraphConfig, Maneuver, RoadGraph, Route,
};
use crate::scene_ingest::{finite_difference, interpolate_pose, Scene, Tracklet};
use crate::seed::{agent_seed, digest_hex, SeedPath};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("assignment references unknown agent {0}")]
    UnknownAgent(i64),
    #[error("agent {0} has no assignment")]
    MissingAssignment(i64),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error("log format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EgoMode {
    /// The ego vehicle gets a behavior like every other agent.
    #[default]
    Simulate,
    /// The ego vehicle follows its recorded tracklet.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub max_variants: usize,
    pub master_seed: u64,
    pub idm_ranges: IdmRanges,
    pub max_decel: f64,
    /// Lower bound on the IDM desired speed so that stopped profiles stay well defined, m/s.
    pub v0_floor: f64,
    pub mobil: MobilParams,
    pub lane_changes: bool,
    /// Minimum time between two lane changes of one agent, s.
    pub lane_change_cooldown: f64,
    pub controller: ControllerParams,
    /// Standard deviation of the per-agent lateral offset bias, m.
    pub epsilon_std: f64,
    pub sensing_range: f64,
    /// Standard deviation of the per-sample noise on matched velocity profiles, m/s.
    pub profile_noise_std: f64,
    pub route_search: RouteSearch,
    pub onset: TurnOnsetConfig,
    pub graph: GraphConfig,
    pub max_lane_deviation: f64,
    pub ego: EgoMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 7.0,
            max_variants: 3,
            master_seed: 0,
            idm_ranges: IdmRanges::default(),
            max_decel: DEFAULT_MAX_DECEL,
            v0_floor: 1.0,
            mobil: MobilParams::default(),
            lane_changes: true,
            lane_change_cooldown: 3.0,
            controller: ControllerParams::default(),
            epsilon_std: 0.2,
            sensing_range: 100.0,
            profile_noise_std: 1.0,
            route_search: RouteSearch::default(),
            onset: TurnOnsetConfig::default(),
            graph: GraphConfig::default(),
            max_lane_deviation: 3.0,
            ego: EgoMode::Simulate,
        }
    }
}

impl SimConfig {
    /// Number of integration steps; the log holds one more state than this.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut errs = Vec::new();
        if !(self.dt > 0.0) {
            errs.push("dt must be positive".to_string());
        }
        if !(self.horizon > 0.0) {
            errs.push("horizon must be positive".to_string());
        } else if self.dt > 0.0 {
            let r = self.horizon / self.dt;
            if (r - r.round()).abs() > 1e-6 {
                errs.push(format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt));
            }
        }
        if self.max_variants == 0 {
            errs.push("max_variants must be at least 1".into());
        }
        if !(self.max_decel > 0.0) {
            errs.push("max_decel must be positive".into());
        }
        if !(self.v0_floor > 0.0) {
            errs.push("v0_floor must be positive".into());
        }
        if !(self.mobil.b_safe > 0.0) || !(self.mobil.p >= 0.0) {
            errs.push("mobil requires b_safe > 0 and p >= 0".into());
        }
        if !self.controller.is_valid() {
            errs.push("controller parameters out of range".into());
        }
        if !(self.epsilon_std >= 0.0) || !(self.profile_noise_std >= 0.0) {
            errs.push("noise standard deviations must be >= 0".into());
        }
        if !(self.sensing_range > 0.0) {
            errs.push("sensing_range must be positive".into());
        }
        let r = &self.idm_ranges;
        for (name, (lo, hi)) in [("t_gap", r.t_gap), ("s0", r.s0), ("a", r.a), ("b", r.b)] {
            let positive = if name == "t_gap" { lo >= 0.0 } else { lo > 0.0 };
            if !(positive && hi >= lo) {
                errs.push(format!("idm {name} range [{lo}, {hi}] invalid"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::Config(errs.join("; ")))
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        digest_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Behavior of one agent for a single rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentAssignment {
    pub agent_id: i64,
    /// `None` keeps the agent parked at its initial position.
    pub route: Option<Route>,
    pub profile: Option<VelocityProfile>,
    pub idm: IdmParams,
    pub epsilon: f64,
}

/// Turns a variant plan into concrete assignments: matched profile, IDM draw and lateral
/// bias per agent, each seeded from `(master, scene, variant, agent)`.
pub fn assign_behaviors(
    scene: &Scene,
    plan: &VariantPlan,
    pool: &ProfilePool,
    cfg: &SimConfig,
) -> Result<Vec<AgentAssignment>, SimError> {
    let eps_dist = Normal::new(0.0, cfg.epsilon_std).map_err(|e| SimError::Config(e.to_string()))?;
    let seed = |id, purpose| agent_seed(cfg.master_seed, &scene.scene_id, plan.variant, id, purpose);
    plan.choices
        .iter()
        .map(|c| {
            let agent = scene
                .agents
                .iter()
                .find(|a| a.agent_id == c.agent_id)
                .ok_or(SimError::UnknownAgent(c.agent_id))?;
            let profile = match &c.route {
                Some(route) => {
                    let feature = feature_for_behavior(agent, route, &cfg.onset);
                    Some(match_profile(
                        pool,
                        route.maneuver,
                        feature,
                        seed(c.agent_id, "profile"),
                        cfg.profile_noise_std,
                    )?)
                }
                None => None,
            };
            let v0 = profile.as_ref().map_or(0.0, |p| p.speed_at(0.0)).max(cfg.v0_floor);
            let idm = sample_idm_params_in(&cfg.idm_ranges, seed(c.agent_id, "idm"), v0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed(c.agent_id, "epsilon"));
            Ok(AgentAssignment {
                agent_id: c.agent_id,
                route: c.route.clone(),
                profile,
                idm,
                epsilon: eps_dist.sample(&mut rng),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneChange {
    pub step: usize,
    pub from_edge: EdgeId,
    pub to_edge: EdgeId,
}

/// Everything about one agent's rollout except the state series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub agent_id: i64,
    pub label: Maneuver,
    #[serde(rename = "static")]
    pub is_static: bool,
    pub replayed: bool,
    pub length: f64,
    pub width: f64,
    pub route_edges: Vec<EdgeId>,
    pub route_length: f64,
    pub idm: Option<IdmParams>,
    pub epsilon: f64,
    pub profile_feature: Option<f64>,
    pub exit_step: Option<usize>,
    pub lane_changes: Vec<LaneChange>,
    pub max_lateral_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentLog {
    pub meta: AgentMeta,
    pub states: Vec<VehicleState>,
}

/// Provenance and per-agent parameters stored next to the state CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub scene_id: String,
    pub variant: usize,
    pub master_seed: u64,
    pub config_digest: String,
    pub dt: f64,
    pub t0: f64,
    pub steps: usize,
    pub ego_id: Option<i64>,
    pub agents: Vec<AgentMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub scene_id: String,
    pub variant: usize,
    pub master_seed: u64,
    pub config_digest: String,
    pub dt: f64,
    pub t0: f64,
    pub steps: usize,
    pub ego_id: Option<i64>,
    pub agents: Vec<AgentLog>,
}

struct Runtime<'a> {
    id: i64,
    geometry: VehicleGeometry,
    state: VehicleState,
    kind: Kind<'a>,
    active: bool,
    exit_step: Option<usize>,
    states: Vec<VehicleState>,
}

enum Kind<'a> {
    Parked { edge: EdgeId, arc: f64 },
    Replay(&'a Tracklet),
    Driven(Box<Driven>),
}

struct Driven {
    route: Route,
    route_s: f64,
    lateral: f64,
    profile: VelocityProfile,
    idm: IdmParams,
    epsilon: f64,
    last_change: f64,
    in_transition: bool,
    lane_changes: Vec<LaneChange>,
    max_dev: f64,
}

/// Snapshot entry plus the quantities the decision pass needs about each agent.
struct Frozen {
    snap: AgentSnapshot,
    state: VehicleState,
    length: f64,
}

/// Per-agent outcome of the first decision pass.
#[derive(Clone, Copy)]
struct Following {
    leader: Option<LeaderInfo>,
    a_idm: f64,
}

/// Pose of a replayed track at absolute time `t`.
fn replay_state(track: &Tracklet, t: f64, prev: Option<&VehicleState>, fd_half: f64) -> Option<VehicleState> {
    let pose = interpolate_pose(track, t).ok()?;
    let fd = finite_difference(track, t, fd_half);
    let v = pose
        .speed
        .or_else(|| fd.map(|(d, dt)| d.norm() / dt))
        .unwrap_or(0.0)
        .max(0.0);
    let psi = pose
        .heading
        .or_else(|| fd.filter(|(d, _)| d.norm() > 1e-3).map(|(d, _)| d.heading()))
        .or(prev.map(|p| p.psi))
        .unwrap_or(0.0);
    Some(VehicleState {
        position: pose.position,
        v,
        psi: wrap_angle(psi),
        a: 0.0,
        phi: 0.0,
    })
}

/// Route position of `p` past the end of the route, measured along the final heading.
fn extended_route_s(route: &Route, s: f64, p: Vec2) -> f64 {
    if s < route.total_length - 1e-9 {
        return s;
    }
    let pts = route.polyline();
    let end = pts[pts.len() - 1];
    let dir = (end - pts[pts.len() - 2]).normalized();
    route.total_length + (p - end).dot(dir)
}

fn project_progress(route: &Route, p: Vec2, prev_s: f64, v: f64, dt: f64) -> (f64, f64) {
    route.project_window(p, prev_s - 5.0, prev_s + v * dt + 5.0)
}

/// Runs one rollout of `scene` under `assignments`.
pub fn simulate_scene(
    scene: &Scene,
    graph: &RoadGraph,
    assignments: &[AgentAssignment],
    cfg: &SimConfig,
    variant: usize,
) -> Result<SimLog, SimError> {
    cfg.validate()?;
    let mut by_id: BTreeMap<i64, &AgentAssignment> = BTreeMap::new();
    for a in assignments {
        if !scene.agents.iter().any(|s| s.agent_id == a.agent_id) {
            return Err(SimError::UnknownAgent(a.agent_id));
        }
        by_id.insert(a.agent_id, a);
    }
    let replay_ego = match (cfg.ego, &scene.ego_track) {
        (EgoMode::Replay, Some(track)) => Some(track),
        _ => None,
    };
    let dt = cfg.dt;
    let steps = cfg.steps();

    let mut agents: Vec<Runtime> = Vec::with_capacity(scene.agents.len());
    for init in &scene.agents {
        let replay = replay_ego.filter(|t| t.agent_id == init.agent_id);
        let (kind, state) = if let Some(track) = replay {
            let st = replay_state(track, scene.t0, None, 0.1).unwrap_or(init.state);
            (Kind::Replay(track), st)
        } else {
            let asg = by_id.get(&init.agent_id).ok_or(SimError::MissingAssignment(init.agent_id))?;
            match (&asg.route, &asg.profile) {
                (Some(route), Some(profile)) => {
                    let (s, lateral) = route.project_window(init.state.position, 0.0, 1.0);
                    (
                        Kind::Driven(Box::new(Driven {
                            route: route.clone(),
                            route_s: s,
                            lateral,
                            profile: profile.clone(),
                            idm: asg.idm,
                            epsilon: asg.epsilon,
                            last_change: f64::NEG_INFINITY,
                            in_transition: false,
                            lane_changes: Vec::new(),
                            max_dev: lateral.abs(),
                        })),
                        init.state,
                    )
                }
                _ => (
                    Kind::Parked {
                        edge: init.lane.edge_id,
                        arc: init.lane.arc_s,
                    },
                    VehicleState { v: 0.0, a: 0.0, phi: 0.0, ..init.state },
                ),
            }
        };
        agents.push(Runtime {
            id: init.agent_id,
            geometry: init.geometry,
            state,
            kind,
            active: true,
            exit_step: None,
            states: vec![state],
        });
    }

    for k in 0..steps {
        let t = k as f64 * dt;
        let frozen = freeze(&agents, graph, cfg);
        let snaps: Vec<AgentSnapshot> = frozen.iter().map(|f| f.snap).collect();

        // pass 1: leaders and IDM accelerations
        let following: Vec<Option<Following>> = agents
            .iter()
            .map(|ag| {
                let Kind::Driven(d) = &ag.kind else { return None };
                if !ag.active {
                    return None;
                }
                let me = &snaps[index_of(&frozen, ag.id)?];
                let idm = d.idm.with_v0(d.profile.speed_at(t).max(cfg.v0_floor));
                let leader = find_leader_from(&snaps, me, &d.route, d.route_s, cfg.sensing_range);
                Some(Following {
                    leader,
                    a_idm: idm_accel(&idm, leader.as_ref(), ag.state.v, cfg.max_decel),
                })
            })
            .collect();

        // pass 2: lane-change decisions
        let mut changes: Vec<Option<(Route, LaneChange)>> = agents
            .iter()
            .enumerate()
            .map(|(i, ag)| lane_change_decision(i, ag, &agents, &frozen, &following, graph, cfg, t, k))
            .collect();

        // pass 3: controls and integration
        let mut next: Vec<Option<VehicleState>> = Vec::with_capacity(agents.len());
        for (i, ag) in agents.iter_mut().enumerate() {
            if !ag.active {
                next.push(None);
                continue;
            }
            let st = match &mut ag.kind {
                Kind::Parked { .. } => Some(ag.state),
                Kind::Replay(track) => replay_state(track, scene.t0 + (k + 1) as f64 * dt, Some(&ag.state), 0.1),
                Kind::Driven(d) => {
                    if let Some((route, change)) = changes[i].take() {
                        let (s, lateral) = route.project_window(ag.state.position, 0.0, 2.0);
                        d.route = route;
                        d.route_s = s;
                        d.lateral = lateral;
                        d.last_change = t;
                        d.in_transition = true;
                        d.lane_changes.push(change);
                    }
                    let f = following[i].expect("driven agents have a following entry");
                    let c = &cfg.controller;
                    let v = ag.state.v;
                    let s_future = (d.route_s + c.lookahead(v)).min(d.route.total_length);
                    let (_, psi_future) = sample_centerline(&d.route, s_future).expect("within route");
                    let v_lat = lateral_velocity(c.kp_lateral, d.lateral, d.epsilon);
                    let psi_req = required_heading(v, v_lat, c.v_eps, c.psi_req_max);
                    let psi_dot = heading_rate(c.kp_heading, psi_future, psi_req, ag.state.psi);
                    let phi = steering_from_rate(ag.geometry.length, v, psi_dot, c.v_eps, c.phi_max);
                    let v_ref = d.profile.speed_at(t);
                    let a_cmd = longitudinal_command(v, v_ref, c.kp_speed, f.a_idm, cfg.max_decel, d.idm.a);
                    Some(step_kinematics(&ag.state, a_cmd, phi, &ag.geometry, dt))
                }
            };
            next.push(st);
        }

        for (ag, st) in agents.iter_mut().zip(next) {
            if !ag.active {
                continue;
            }
            let Some(mut st) = st else {
                ag.active = false;
                ag.exit_step = Some(k + 1);
                continue;
            };
            if let Kind::Driven(d) = &mut ag.kind {
                let (s, lateral) = project_progress(&d.route, st.position, d.route_s, ag.state.v, dt);
                if extended_route_s(&d.route, s, st.position) >= d.route.total_length {
                    ag.active = false;
                    ag.exit_step = Some(k + 1);
                    continue;
                }
                d.route_s = s;
                d.lateral = lateral;
                if d.in_transition && (lateral + d.epsilon).abs() < 0.5 {
                    d.in_transition = false;
                }
                if !d.in_transition {
                    d.max_dev = d.max_dev.max(lateral.abs());
                }
            }
            if let Kind::Replay(_) = ag.kind {
                st.a = (st.v - ag.state.v) / dt;
                let rate = wrap_angle(st.psi - ag.state.psi) / dt;
                st.phi = (ag.geometry.length * rate / st.v.max(cfg.controller.v_eps)).atan();
            }
            ag.state = st;
            ag.states.push(st);
        }
    }

    let agents = agents
        .into_iter()
        .map(|ag| {
            let (label, is_static, replayed, route_edges, route_length, idm, epsilon, feature, lane_changes, max_dev) =
                match ag.kind {
                    Kind::Parked { .. } => (Maneuver::Straight, true, false, vec![], 0.0, None, 0.0, None, vec![], 0.0),
                    Kind::Replay(_) => {
                        let pts: Vec<Vec2> = ag.states.iter().map(|s| s.position).collect();
                        let label = classify_maneuver(&dedup_points(&pts), cfg.graph.straight_threshold());
                        (label, false, true, vec![], 0.0, None, 0.0, None, vec![], 0.0)
                    }
                    Kind::Driven(d) => {
                        if d.max_dev > cfg.max_lane_deviation {
                            log::warn!(
                                "scene {} variant {variant}: agent {} deviated {:.2} m from its lane",
                                scene.scene_id,
                                ag.id,
                                d.max_dev
                            );
                        }
                        (
                            d.route.maneuver,
                            false,
                            false,
                            d.route.edge_ids.clone(),
                            d.route.total_length,
                            Some(d.idm),
                            d.epsilon,
                            Some(d.profile.feature),
                            d.lane_changes,
                            d.max_dev,
                        )
                    }
                };
            AgentLog {
                meta: AgentMeta {
                    agent_id: ag.id,
                    label,
                    is_static,
                    replayed,
                    length: ag.geometry.length,
                    width: ag.geometry.width,
                    route_edges,
                    route_length,
                    idm,
                    epsilon,
                    profile_feature: feature,
                    exit_step: ag.exit_step,
                    lane_changes,
                    max_lateral_deviation: max_dev,
                },
                states: ag.states,
            }
        })
        .collect();

    Ok(SimLog {
        scene_id: scene.scene_id.clone(),
        variant,
        master_seed: cfg.master_seed,
        config_digest: cfg.digest(),
        dt,
        t0: scene.t0,
        steps,
        ego_id: scene.ego_id(),
        agents,
    })
}

fn dedup_points(pts: &[Vec2]) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(pts.len());
    for &p in pts {
        if out.last().is_none_or(|l| l.distance(p) > 0.05) {
            out.push(p);
        }
    }
    out
}

fn index_of(frozen: &[Frozen], id: i64) -> Option<usize> {
    frozen.iter().position(|f| f.snap.agent_id == id)
}

fn freeze(agents: &[Runtime], graph: &RoadGraph, cfg: &SimConfig) -> Vec<Frozen> {
    agents
        .iter()
        .filter(|a| a.active)
        .map(|a| {
            let (edge_id, arc_s, route_s) = match &a.kind {
                Kind::Parked { edge, arc } => (Some(*edge), *arc, 0.0),
                Kind::Replay(_) => match graph.project_to_lane(a.state.position, Some(a.state.psi), cfg.graph.max_snap_distance) {
                    Ok(c) => (Some(c.edge_id), c.arc_s, 0.0),
                    Err(_) => (None, 0.0, 0.0),
                },
                Kind::Driven(d) => {
                    let (_, e, arc) = d.route.locate(d.route_s);
                    (Some(e), arc, d.route_s)
                }
            };
            Frozen {
                snap: AgentSnapshot {
                    agent_id: a.id,
                    edge_id,
                    arc_s,
                    route_s,
                    length: a.geometry.length,
                    speed: a.state.v,
                },
                state: a.state,
                length: a.geometry.length,
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn lane_change_decision(
    i: usize,
    ag: &Runtime,
    agents: &[Runtime],
    frozen: &[Frozen],
    following: &[Option<Following>],
    graph: &RoadGraph,
    cfg: &SimConfig,
    t: f64,
    k: usize,
) -> Option<(Route, LaneChange)> {
    if !cfg.lane_changes || !ag.active {
        return None;
    }
    let Kind::Driven(d) = &ag.kind else { return None };
    if d.in_transition || t - d.last_change < cfg.lane_change_cooldown {
        return None;
    }
    let mine = following[i]?;
    let me = frozen[index_of(frozen, ag.id)?].snap;
    let (_, edge_id, _) = d.route.locate(d.route_s);
    let edge = graph.edge(edge_id)?;
    let remaining = d.route.total_length - d.route_s;
    let idm_now = d.idm.with_v0(d.profile.speed_at(t).max(cfg.v0_floor));
    let snaps: Vec<AgentSnapshot> = frozen.iter().map(|f| f.snap).collect();

    let accel_of = |j: usize| -> Option<(IdmParams, f64)> {
        let Kind::Driven(od) = &agents[j].kind else { return None };
        let f = following[j]?;
        Some((od.idm.with_v0(od.profile.speed_at(t).max(cfg.v0_floor)), f.a_idm))
    };
    let runtime_index = |id: i64| agents.iter().position(|a| a.id == id);

    // current follower: nearest agent whose leader is the subject
    let old_follower = following
        .iter()
        .enumerate()
        .filter_map(|(j, f)| {
            let f = (*f)?;
            let l = f.leader?;
            (l.leader_id == ag.id && j != i).then_some((l.gap_s, agents[j].id, j, l))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut best: Option<(f64, Route, LaneChange)> = None;
    for (side, target) in [(Side::Left, edge.left_neighbor), (Side::Right, edge.right_neighbor)] {
        let Some(target) = target else { continue };
        let coord = graph.project_onto_edge(target, ag.state.position).ok()?;
        let target_edge = graph.edge(target)?;
        if target_edge.length - coord.arc_s < 1.0 {
            continue;
        }
        let Some(new_route) = enumerate_routes(
            graph,
            coord,
            remaining,
            cfg.route_search.max_routes,
            &cfg.graph,
        )
        .into_iter()
        .find(|r| r.maneuver == d.route.maneuver) else {
            continue;
        };

        let new_leader = find_leader_from(&snaps, &me, &new_route, 0.0, cfg.sensing_range);
        let mut acc = MobilAccels {
            ac_old: mine.a_idm,
            ac_new: idm_accel(&idm_now, new_leader.as_ref(), ag.state.v, cfg.max_decel),
            ..Default::default()
        };

        // prospective follower: nearest agent behind the subject's projection on the target lane
        let new_follower = frozen
            .iter()
            .filter(|f| f.snap.agent_id != ag.id)
            .filter_map(|f| {
                let e = f.snap.edge_id?;
                let dist = if e == target && f.snap.arc_s < coord.arc_s {
                    coord.arc_s - f.snap.arc_s
                } else if graph.incoming(target_edge.from_node).contains(&e) {
                    coord.arc_s + graph.edge(e)?.length - f.snap.arc_s
                } else {
                    return None;
                };
                (dist <= cfg.sensing_range).then_some((dist, f))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.snap.agent_id.cmp(&b.1.snap.agent_id)));
        if let Some((dist, f)) = new_follower {
            if let Some((idm_n, a_n)) = runtime_index(f.snap.agent_id).and_then(accel_of) {
                let gap = (dist - 0.5 * (f.length + ag.geometry.length)).max(0.01);
                let info = LeaderInfo {
                    leader_id: ag.id,
                    gap_s: gap,
                    dv: f.state.v - ag.state.v,
                };
                acc.an_old = a_n;
                acc.an_new = idm_accel(&idm_n, Some(&info), f.state.v, cfg.max_decel);
            }
        }

        if let Some((gap_o, _, j, _)) = old_follower {
            if let Some((idm_o, a_o)) = accel_of(j) {
                let v_o = agents[j].state.v;
                let info = mine.leader.map(|l| LeaderInfo {
                    leader_id: l.leader_id,
                    gap_s: gap_o + ag.geometry.length + l.gap_s,
                    dv: v_o - (ag.state.v - l.dv),
                });
                acc.ao_old = a_o;
                acc.ao_new = idm_accel(&idm_o, info.as_ref(), v_o, cfg.max_decel);
            }
        }

        let params = cfg.mobil.biased_toward(side);
        if mobil_decide(&params, &acc) == LaneDecision::Change {
            let score = acc.incentive(params.p) + params.da_bias;
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((
                    score,
                    new_route,
                    LaneChange {
                        step: k,
                        from_edge: edge_id,
                        to_edge: target,
                    },
                ));
            }
        }
    }
    best.map(|(_, r, c)| (r, c))
}

/// Failure of one scene or variant in a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFailure {
    pub scene_id: String,
    pub variant: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct Dataset {
    pub logs: Vec<SimLog>,
    pub failures: Vec<SceneFailure>,
}

fn run_one(scene: &Scene, graph: &RoadGraph, pool: &ProfilePool, cfg: &SimConfig) -> (Vec<SimLog>, Vec<SceneFailure>) {
    let seed = SeedPath::new(cfg.master_seed).str(&scene.scene_id).str("behavior").finish();
    let plans = sample_behaviors(scene, graph, seed, cfg.max_variants, &cfg.route_search, &cfg.graph);
    let mut logs = Vec::new();
    let mut failures = Vec::new();
    for plan in &plans {
        let res = assign_behaviors(scene, plan, pool, cfg)
            .and_then(|asg| simulate_scene(scene, graph, &asg, cfg, plan.variant));
        match res {
            Ok(log) => logs.push(log),
            Err(e) => failures.push(SceneFailure {
                scene_id: scene.scene_id.clone(),
                variant: Some(plan.variant),
                reason: e.to_string(),
            }),
        }
    }
    (logs, failures)
}

/// Simulates every scene under up to `max_variants` behavior variants on `jobs` threads.
/// Output order and content do not depend on `jobs`.
pub fn run_dataset(
    scenes: &[Scene],
    graph: &RoadGraph,
    pool: &ProfilePool,
    cfg: &SimConfig,
    jobs: usize,
) -> Result<Dataset, SimError> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(SimError::Config("no scenes to simulate".into()));
    }
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SimError::Config(e.to_string()))?;
    let results: Vec<_> = threads.install(|| scenes.par_iter().map(|s| run_one(s, graph, pool, cfg)).collect());
    let mut out = Dataset::default();
    for (logs, failures) in results {
        out.logs.extend(logs);
        out.failures.extend(failures);
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "scene_id,variant,agent_id,t,x,y,v,psi,a,phi,label";

impl SimLog {
    pub fn meta(&self) -> LogMeta {
        LogMeta {
            scene_id: self.scene_id.clone(),
            variant: self.variant,
            master_seed: self.master_seed,
            config_digest: self.config_digest.clone(),
            dt: self.dt,
            t0: self.t0,
            steps: self.steps,
            ego_id: self.ego_id,
            agents: self.agents.iter().map(|a| a.meta.clone()).collect(),
        }
    }

    /// State table, one row per agent and step; time is relative to the scene start.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for a in &self.agents {
            for (k, s) in a.states.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.3},{},{},{},{},{},{},{}",
                    csv_field(&self.scene_id),
                    self.variant,
                    a.meta.agent_id,
                    k as f64 * self.dt,
                    s.position.x,
                    s.position.y,
                    s.v,
                    s.psi,
                    s.a,
                    s.phi,
                    a.meta.label
                );
            }
        }
        out
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&self.meta()).expect("meta serializes")
    }

    /// File stem shared by the CSV and the sidecar.
    pub fn file_stem(&self) -> String {
        format!("{}_v{}", sanitize(&self.scene_id), self.variant)
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), SimError> {
        let stem = self.file_stem();
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        std::fs::write(dir.join(format!("{stem}.json")), self.sidecar_json())?;
        Ok(())
    }

    /// Rebuilds a log from its CSV table and sidecar.
    pub fn from_parts(csv_text: &str, meta: LogMeta) -> Result<Self, SimError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| SimError::Format(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.join(",") != CSV_HEADER {
            return Err(SimError::Format(format!("unexpected header {}", header.join(","))));
        }
        let mut series: BTreeMap<i64, Vec<VehicleState>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| SimError::Format(e.to_string()))?;
            let num = |i: usize| -> Result<f64, SimError> {
                rec[i].parse::<f64>().map_err(|e| SimError::Format(format!("column {i}: {e}")))
            };
            let id: i64 = rec[2].parse().map_err(|e| SimError::Format(format!("agent id: {e}")))?;
            series.entry(id).or_default().push(VehicleState {
                position: Vec2::new(num(4)?, num(5)?),
                v: num(6)?,
                psi: num(7)?,
                a: num(8)?,
                phi: num(9)?,
            });
        }
        let agents = meta
            .agents
            .iter()
            .map(|m| {
                let states = series
                    .remove(&m.agent_id)
                    .ok_or_else(|| SimError::Format(format!("no rows for agent {}", m.agent_id)))?;
                Ok(AgentLog { meta: m.clone(), states })
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        if let Some(id) = series.keys().next() {
            return Err(SimError::Format(format!("rows for agent {id} missing from sidecar")));
        }
        Ok(SimLog {
            scene_id: meta.scene_id,
            variant: meta.variant,
            master_seed: meta.master_seed,
            config_digest: meta.config_digest,
            dt: meta.dt,
            t0: meta.t0,
            steps: meta.steps,
            ego_id: meta.ego_id,
            agents,
        })
    }

    /// Reads `<stem>.csv` and `<stem>.json`.
    pub fn read_from(csv_path: &Path) -> Result<Self, SimError> {
        let csv_text = std::fs::read_to_string(csv_path)?;
        let meta_text = std::fs::read_to_string(csv_path.with_extension("json"))?;
        let meta: LogMeta = serde_json::from_str(&meta_text).map_err(|e| SimError::Format(e.to_string()))?;
        Self::from_parts(&csv_text, meta)
    }
}

/// Loads every log in `dir`, ordered by file name.
pub fn read_log_dir(dir: &Path) -> Result<Vec<SimLog>, SimError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.with_extension("json").exists())
        .collect();
    paths.sort();
    paths.iter().map(|p| SimLog::read_from(p)).collect()
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
