//! Longitudinal car following (Intelligent Driver Model), leader search along a route,
//! and MOBIL lane-change decisions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::road_graph::{EdgeId, Route};

/// Default emergency braking bound, m/s².
pub const DEFAULT_MAX_DECEL: f64 = 8.0;

/// IDM parameters for one agent. `v0` tracks the reference profile and changes per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed, m/s.
    pub v0: f64,
    /// Free-acceleration exponent.
    pub delta: f64,
    /// Safety time gap, s.
    pub t_gap: f64,
    /// Standstill distance, m.
    pub s0: f64,
    /// Comfortable acceleration, m/s².
    pub a: f64,
    /// Comfortable deceleration, m/s².
    pub b: f64,
}

impl IdmParams {
    pub fn with_v0(self, v0: f64) -> Self {
        Self { v0, ..self }
    }

    pub fn is_valid(&self) -> bool {
        self.a > 0.0 && self.b > 0.0 && self.t_gap >= 0.0 && self.s0 > 0.0 && self.delta > 0.0 && self.v0 > 0.0
    }
}

/// Sampling ranges for IDM parameters: `(low, high)` uniform bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmRanges {
    pub delta: f64,
    pub t_gap: (f64, f64),
    pub s0: (f64, f64),
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl Default for IdmRanges {
    fn default() -> Self {
        Self {
            delta: 4.0,
            t_gap: (0.5, 2.5),
            s0: (0.5, 4.0),
            a: (1.0, 2.0),
            b: (1.5, 2.5),
        }
    }
}

/// Draws per-agent IDM parameters; the same seed always yields the same parameters.
pub fn sample_idm_params(rng_seed: u64, v0: f64) -> IdmParams {
    sample_idm_params_in(&IdmRanges::default(), rng_seed, v0)
}

pub fn sample_idm_params_in(ranges: &IdmRanges, rng_seed: u64, v0: f64) -> IdmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
    let t_gap = draw(ranges.t_gap);
    let s0 = draw(ranges.s0);
    let a = draw(ranges.a);
    let b = draw(ranges.b);
    IdmParams {
        v0,
        delta: ranges.delta,
        t_gap,
        s0,
        a,
        b,
    }
}

/// Leading vehicle as seen by a follower.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderInfo {
    pub leader_id: i64,
    /// Bumper-to-bumper distance, m.
    pub gap_s: f64,
    /// Closing speed `v_follower - v_leader`, m/s.
    pub dv: f64,
}

/// Desired dynamic gap `s* = s0 + max(0, v T + v dv / (2 sqrt(a b)))`.
pub fn desired_gap(params: &IdmParams, v: f64, dv: f64) -> f64 {
    let dynamic = v * params.t_gap + v * dv / (2.0 * (params.a * params.b).sqrt());
    params.s0 + dynamic.max(0.0)
}

/// IDM acceleration clamped to `[-max_decel, a]`. Without a leader only the free-road
/// term applies.
pub fn idm_accel(params: &IdmParams, leader: Option<&LeaderInfo>, v: f64, max_decel: f64) -> f64 {
    let free = 1.0 - (v / params.v0).powf(params.delta);
    let raw = match leader {
        None => params.a * free,
        Some(l) if l.gap_s <= 0.0 => -max_decel,
        Some(l) => {
            let ratio = desired_gap(params, v, l.dv) / l.gap_s;
            params.a * (free - ratio * ratio)
        }
    };
    raw.clamp(-max_decel, params.a)
}

/// Lane position of one agent in the frozen snapshot a step is computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSnapshot {
    pub agent_id: i64,
    /// Current lane, `None` when the agent is not on the map.
    pub edge_id: Option<EdgeId>,
    pub arc_s: f64,
    /// Progress along the agent's own route, m.
    pub route_s: f64,
    pub length: f64,
    pub speed: f64,
}

/// Nearest agent ahead of `subject` on its route within `sensing_range`.
pub fn find_leader(
    agents: &[AgentSnapshot],
    subject: i64,
    route: &Route,
    sensing_range: f64,
) -> Option<LeaderInfo> {
    let me = agents.iter().find(|a| a.agent_id == subject)?;
    find_leader_from(agents, me, route, me.route_s, sensing_range)
}

/// Leader search for `me` placed at `subject_s` along `route`.
///
/// Walks the route's edges from the one holding `subject_s`; any other agent whose lane
/// lies on those edges ahead and within range is a candidate. The gap is the arc
/// distance minus both half lengths, floored at 0.01 m.
pub fn find_leader_from(
    agents: &[AgentSnapshot],
    me: &AgentSnapshot,
    route: &Route,
    subject_s: f64,
    sensing_range: f64,
) -> Option<LeaderInfo> {
    let (start_idx, _, _) = route.locate(subject_s);
    let mut best: Option<(f64, &AgentSnapshot)> = None;
    for other in agents {
        if other.agent_id == me.agent_id {
            continue;
        }
        let Some(edge) = other.edge_id else { continue };
        let hit = route.edge_ids[start_idx..]
            .iter()
            .enumerate()
            .filter(|(_, &e)| e == edge)
            .map(|(k, _)| route.edge_starts()[start_idx + k] + other.arc_s)
            .find(|&s| s > subject_s || (s == subject_s && other.agent_id < me.agent_id));
        let Some(s_other) = hit else { continue };
        let dist = s_other - subject_s;
        if dist > sensing_range {
            continue;
        }
        let closer = match best {
            None => true,
            Some((bd, b)) => dist < bd || (dist == bd && other.agent_id < b.agent_id),
        };
        if closer {
            best = Some((dist, other));
        }
    }
    best.map(|(dist, l)| LeaderInfo {
        leader_id: l.agent_id,
        gap_s: (dist - 0.5 * (me.length + l.length)).max(0.01),
        dv: me.speed - l.speed,
    })
}

/// MOBIL parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilParams {
    /// Politeness factor.
    pub p: f64,
    /// Lane-change threshold, m/s².
    pub da_th: f64,
    /// Maximum safe deceleration, m/s².
    pub b_safe: f64,
    /// Bias toward the rightmost lane, m/s².
    pub da_bias: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        Self {
            p: 0.3,
            da_th: 0.1,
            b_safe: 4.0,
            da_bias: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl MobilParams {
    /// Parameters with the lane bias signed for a change toward `side`: the bias lowers
    /// the threshold toward the right and raises it toward the left.
    pub fn biased_toward(self, side: Side) -> Self {
        let da_bias = match side {
            Side::Right => self.da_bias,
            Side::Left => -self.da_bias,
        };
        Self { da_bias, ..self }
    }
}

/// Current (`*_old`) and prospective (`*_new`) accelerations of the subject `c`, the new
/// follower `n` and the old follower `o`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MobilAccels {
    pub ac_old: f64,
    pub ac_new: f64,
    pub an_old: f64,
    pub an_new: f64,
    pub ao_old: f64,
    pub ao_new: f64,
}

impl MobilAccels {
    /// Left-hand side of the incentive inequality.
    pub fn incentive(&self, p: f64) -> f64 {
        (self.ac_new - self.ac_old) + p * ((self.an_new - self.an_old) + (self.ao_new - self.ao_old))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneDecision {
    Keep,
    Change,
}

/// Change only if the incentive clears `da_th - da_bias` and neither the new follower
/// nor the subject has to brake harder than `b_safe` because of it.
pub fn mobil_decide(params: &MobilParams, acc: &MobilAccels) -> LaneDecision {
    let incentive = acc.incentive(params.p) > params.da_th - params.da_bias;
    let safe_follower = acc.an_new - acc.an_old > -params.b_safe;
    let safe_self = acc.ac_new - acc.ac_old > -params.b_safe;
    if incentive && safe_follower && safe_self {
        LaneDecision::Change
    } else {
        LaneDecision::Keep
    }
}
