//! Behavior generation: maneuver sampling per agent and reference velocity profiles
//! matched from a pool of real trajectories.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{cumulative_lengths, sample_polyline, wrap_angle, Vec2};
use crate::road_graph::{classify_maneuver, enumerate_routes, GraphConfig, Maneuver, RoadGraph, Route};
use crate::scene_ingest::{AgentInit, Scene};
use crate::seed::SeedPath;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BehaviorError {
    #[error("profile pool has no {0} profiles")]
    MissingProfile(Maneuver),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

/// A timestamped position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPoint {
    pub t: f64,
    pub position: Vec2,
}

/// Reference speed series with its matching feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityProfile {
    pub dt: f64,
    pub samples: Vec<f64>,
    /// Distance before turn (m) for turns, mean speed (m/s) for straight profiles.
    pub feature: f64,
    pub maneuver: Maneuver,
}

impl VelocityProfile {
    /// Reference speed at time `t`, interpolated; holds the last value past the end.
    pub fn speed_at(&self, t: f64) -> f64 {
        let n = self.samples.len();
        if n == 0 {
            return 0.0;
        }
        let x = (t / self.dt).max(0.0);
        let i = x.floor() as usize;
        if i + 1 >= n {
            return self.samples[n - 1];
        }
        let u = x - i as f64;
        self.samples[i] + (self.samples[i + 1] - self.samples[i]) * u
    }
}

/// Immutable pool of reference profiles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfilePool {
    pub dt: f64,
    pub profiles: Vec<VelocityProfile>,
}

impl ProfilePool {
    /// Profiles with `label`, with their pool indices.
    pub fn partition(&self, label: Maneuver) -> impl Iterator<Item = (usize, &VelocityProfile)> {
        self.profiles
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.maneuver == label)
    }

    pub fn count(&self, label: Maneuver) -> usize {
        self.partition(label).count()
    }
}

#[derive(Serialize, Deserialize)]
struct PoolFile {
    dt: f64,
    profiles: Vec<PoolEntry>,
}

#[derive(Serialize, Deserialize)]
struct PoolEntry {
    label: Maneuver,
    feature: f64,
    samples: Vec<f64>,
}

impl Serialize for ProfilePool {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoolFile {
            dt: self.dt,
            profiles: self
                .profiles
                .iter()
                .map(|p| PoolEntry {
                    label: p.maneuver,
                    feature: p.feature,
                    samples: p.samples.clone(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProfilePool {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let f = PoolFile::deserialize(d)?;
        if !(f.dt > 0.0) {
            return Err(D::Error::custom("pool dt must be positive"));
        }
        let mut profiles = Vec::with_capacity(f.profiles.len());
        for (i, e) in f.profiles.into_iter().enumerate() {
            if !e.feature.is_finite() || e.samples.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(D::Error::custom(format!("profile {i}: samples must be finite and >= 0")));
            }
            profiles.push(VelocityProfile {
                dt: f.dt,
                samples: e.samples,
                feature: e.feature,
                maneuver: e.label,
            });
        }
        Ok(ProfilePool { dt: f.dt, profiles })
    }
}

/// Recorded trajectories on disk: `{"trajectories": [[[t, x, y], ...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub trajectories: Vec<Vec<[f64; 3]>>,
}

impl TrajectoryFile {
    pub fn from_points(trajs: &[Vec<TimedPoint>]) -> Self {
        Self {
            trajectories: trajs
                .iter()
                .map(|t| t.iter().map(|p| [p.t, p.position.x, p.position.y]).collect())
                .collect(),
        }
    }

    pub fn points(&self) -> Vec<Vec<TimedPoint>> {
        self.trajectories
            .iter()
            .map(|t| {
                t.iter()
                    .map(|&[t, x, y]| TimedPoint { t, position: Vec2::new(x, y) })
                    .collect()
            })
            .collect()
    }
}

/// Turn-onset detection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnOnsetConfig {
    /// Heading-rate magnitude marking a turn, rad/s.
    pub rate_threshold: f64,
    /// The rate must stay above the threshold this long, s.
    pub sustain: f64,
    /// Positions closer than this to the previous kept one are ignored, m.
    pub min_step: f64,
    /// Speed used to give route geometry a time axis, m/s.
    pub nominal_speed: f64,
    /// Resampling step along route geometry, m.
    pub route_step: f64,
    /// Half-width of the chord used for route headings, m.
    pub route_heading_window: f64,
}

impl Default for TurnOnsetConfig {
    fn default() -> Self {
        Self {
            rate_threshold: 0.1,
            sustain: 0.5,
            min_step: 0.05,
            nominal_speed: 10.0,
            route_step: 0.5,
            route_heading_window: 1.0,
        }
    }
}

/// One heading-rate sample: where the change shows up, how long it covers, its value.
struct RateSample {
    arc: f64,
    duration: f64,
    rate: f64,
}

/// Arc position of the first sustained above-threshold run, if any.
fn onset_arc(rates: &[RateSample], cfg: &TurnOnsetConfig) -> Option<f64> {
    let mut run_start: Option<usize> = None;
    let mut run_time = 0.0;
    for (i, r) in rates.iter().enumerate() {
        if r.rate.abs() > cfg.rate_threshold {
            if run_start.is_none() {
                run_start = Some(i);
                run_time = 0.0;
            }
            run_time += r.duration;
            if run_time >= cfg.sustain - 1e-9 {
                let k = run_start.unwrap();
                // already turning when the record starts
                return Some(if k == 0 { 0.0 } else { rates[k].arc });
            }
        } else {
            run_start = None;
        }
    }
    None
}

/// Drops points that barely moved so that heading estimates stay meaningful.
fn moving_points(traj: &[TimedPoint], min_step: f64) -> Vec<TimedPoint> {
    let mut out: Vec<TimedPoint> = Vec::with_capacity(traj.len());
    for p in traj {
        match out.last() {
            Some(last) if last.position.distance(p.position) < min_step => {}
            _ => out.push(*p),
        }
    }
    out
}

/// Arc length travelled before the heading rate first exceeds the threshold for the
/// sustain period; the full arc length when the trajectory never turns.
pub fn distance_before_turn(traj: &[TimedPoint], cfg: &TurnOnsetConfig) -> f64 {
    let pts = moving_points(traj, cfg.min_step);
    let positions: Vec<Vec2> = pts.iter().map(|p| p.position).collect();
    let cum = cumulative_lengths(&positions);
    let total = cum.last().copied().unwrap_or(0.0);
    if pts.len() < 3 {
        return total;
    }
    let seg: Vec<(f64, f64)> = pts
        .windows(2)
        .map(|w| ((w[1].position - w[0].position).heading(), 0.5 * (w[0].t + w[1].t)))
        .collect();
    let rates: Vec<RateSample> = seg
        .windows(2)
        .enumerate()
        .filter_map(|(k, w)| {
            let duration = w[1].1 - w[0].1;
            (duration > 0.0).then(|| RateSample {
                arc: cum[k + 1],
                duration,
                rate: wrap_angle(w[1].0 - w[0].0) / duration,
            })
        })
        .collect();
    onset_arc(&rates, cfg).unwrap_or(total)
}

/// Onset distance along a polyline, using chord-smoothed headings at a constant arc step
/// and a nominal speed for the time axis.
pub fn distance_before_turn_on_path(points: &[Vec2], cfg: &TurnOnsetConfig) -> f64 {
    let cum = cumulative_lengths(points);
    let total = cum.last().copied().unwrap_or(0.0);
    if points.len() < 2 || total <= 0.0 {
        return 0.0;
    }
    let n = (total / cfg.route_step).floor() as usize;
    let hw = cfg.route_heading_window;
    let heading_at = |s: f64| {
        let (a, _) = sample_polyline(points, &cum, (s - hw).max(0.0));
        let (b, _) = sample_polyline(points, &cum, (s + hw).min(total));
        (b - a).heading()
    };
    let samples: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let s = i as f64 * cfg.route_step;
            (s, heading_at(s))
        })
        .collect();
    let duration = cfg.route_step / cfg.nominal_speed;
    let rates: Vec<RateSample> = samples
        .windows(2)
        .map(|w| RateSample {
            arc: w[0].0,
            duration,
            rate: wrap_angle(w[1].1 - w[0].1) / duration,
        })
        .collect();
    onset_arc(&rates, cfg).unwrap_or(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTrajectory {
    pub index: usize,
    pub reason: String,
}

/// Per-vertex speeds (central differences, one-sided at the ends) resampled at `dt`.
fn resampled_speeds(traj: &[TimedPoint], dt: f64) -> Vec<f64> {
    let n = traj.len();
    let vertex: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            traj[b].position.distance(traj[a].position) / (traj[b].t - traj[a].t)
        })
        .collect();
    let t0 = traj[0].t;
    let span = traj[n - 1].t - t0;
    let count = (span / dt + 1e-9).floor() as usize + 1;
    let mut k = 0;
    (0..count)
        .map(|i| {
            let t = t0 + i as f64 * dt;
            while k + 2 < n && traj[k + 1].t <= t {
                k += 1;
            }
            let (ta, tb) = (traj[k].t, traj[k + 1].t);
            let u = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            vertex[k] + (vertex[k + 1] - vertex[k]) * u
        })
        .collect()
}

/// Builds the reference profile pool from real trajectories.
///
/// Trajectories with fewer than three points or non-increasing timestamps are skipped
/// and reported.
pub fn build_profile_pool(
    real_trajs: &[Vec<TimedPoint>],
    dt: f64,
    graph_cfg: &GraphConfig,
    onset: &TurnOnsetConfig,
) -> (ProfilePool, Vec<SkippedTrajectory>) {
    let mut profiles = Vec::new();
    let mut skipped = Vec::new();
    for (index, traj) in real_trajs.iter().enumerate() {
        if traj.len() < 3 {
            skipped.push(SkippedTrajectory {
                index,
                reason: "fewer than 3 points".into(),
            });
            continue;
        }
        if traj.windows(2).any(|w| !(w[1].t > w[0].t)) {
            skipped.push(SkippedTrajectory {
                index,
                reason: "timestamps not strictly increasing".into(),
            });
            continue;
        }
        let samples = resampled_speeds(traj, dt);
        let moving: Vec<Vec2> = moving_points(traj, onset.min_step)
            .iter()
            .map(|p| p.position)
            .collect();
        let maneuver = classify_maneuver(&moving, graph_cfg.straight_threshold());
        let feature = if maneuver.is_turn() {
            distance_before_turn(traj, onset)
        } else {
            samples.iter().sum::<f64>() / samples.len() as f64
        };
        profiles.push(VelocityProfile {
            dt,
            samples,
            feature,
            maneuver,
        });
    }
    (ProfilePool { dt, profiles }, skipped)
}

/// Nearest-neighbour profile by feature (ties to the lower pool index) with i.i.d.
/// Gaussian noise of `noise_std` added per sample, clamped at zero.
pub fn match_profile(
    pool: &ProfilePool,
    label: Maneuver,
    feature_query: f64,
    rng_seed: u64,
    noise_std: f64,
) -> Result<VelocityProfile, BehaviorError> {
    let mut best: Option<(f64, &VelocityProfile)> = None;
    for (_, p) in pool.partition(label) {
        let d = (p.feature - feature_query).abs();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, p));
        }
    }
    let (_, nearest) = best.ok_or(BehaviorError::MissingProfile(label))?;
    let mut out = nearest.clone();
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std)
            .map_err(|e| BehaviorError::InvalidProfile(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for v in &mut out.samples {
            *v = (*v + normal.sample(&mut rng)).max(0.0);
        }
    }
    Ok(out)
}

/// Matching feature for an agent on a route: its speed for straight routes, the
/// distance to turn onset along the route for turns.
pub fn feature_for_behavior(agent: &AgentInit, route: &Route, onset: &TurnOnsetConfig) -> f64 {
    if route.maneuver.is_turn() {
        distance_before_turn_on_path(route.polyline(), onset)
    } else {
        agent.state.v
    }
}

/// Route choice of one agent within a behavior variant; `None` keeps it static.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentChoice {
    pub agent_id: i64,
    pub route: Option<Route>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantPlan {
    pub variant: usize,
    pub choices: Vec<AgentChoice>,
}

impl VariantPlan {
    /// Multiset of (agent, label) pairs that defines variant identity.
    pub fn signature(&self) -> Vec<(i64, Option<Maneuver>)> {
        let mut sig: Vec<_> = self
            .choices
            .iter()
            .map(|c| (c.agent_id, c.route.as_ref().map(|r| r.maneuver)))
            .collect();
        sig.sort();
        sig
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteSearch {
    pub horizon_dist: f64,
    pub max_routes: usize,
}

impl Default for RouteSearch {
    fn default() -> Self {
        Self {
            horizon_dist: 120.0,
            max_routes: 16,
        }
    }
}

/// Samples up to `max_variants` mutually distinct behavior variants for a scene.
///
/// For every agent the distinct maneuver labels are shuffled, then the routes within each
/// label. The first candidates walk the shuffled labels round-robin (variant `k` takes
/// label `k mod L` and route `k / L` within it), so every label of every agent appears
/// early; later candidates draw a label and route per agent at random. A candidate whose
/// (agent, label) multiset repeats an earlier variant is discarded. At most
/// `8 * max_variants` candidates are tried.
pub fn sample_behaviors(
    scene: &Scene,
    graph: &RoadGraph,
    rng_seed: u64,
    max_variants: usize,
    search: &RouteSearch,
    graph_cfg: &GraphConfig,
) -> Vec<VariantPlan> {
    let per_agent: Vec<(i64, Vec<Vec<Route>>)> = scene
        .agents
        .iter()
        .map(|a| {
            let routes = enumerate_routes(graph, a.lane, search.horizon_dist, search.max_routes, graph_cfg);
            let mut by_label: BTreeMap<Maneuver, Vec<Route>> = BTreeMap::new();
            for r in routes {
                by_label.entry(r.maneuver).or_default().push(r);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(SeedPath::new(rng_seed).int(a.agent_id).finish());
            let mut groups: Vec<Vec<Route>> = by_label.into_values().collect();
            groups.shuffle(&mut rng);
            for g in &mut groups {
                g.shuffle(&mut rng);
            }
            (a.agent_id, groups)
        })
        .collect();
    let round_robin = per_agent.iter().map(|(_, g)| g.len()).max().unwrap_or(0).max(1);

    let mut plans: Vec<VariantPlan> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for k in 0..8 * max_variants {
        if plans.len() >= max_variants {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(SeedPath::new(rng_seed).str("variant").int(k as i64).finish());
        let choices = per_agent
            .iter()
            .map(|(id, groups)| {
                let route = (!groups.is_empty()).then(|| {
                    let (gi, ri) = if k < round_robin {
                        (k % groups.len(), k / groups.len())
                    } else {
                        (rng.random_range(0..groups.len()), rng.random_range(0..usize::MAX))
                    };
                    let g = &groups[gi];
                    g[ri % g.len()].clone()
                });
                AgentChoice { agent_id: *id, route }
            })
            .collect();
        let plan = VariantPlan {
            variant: plans.len(),
            choices,
        };
        if seen.insert(plan.signature()) {
            plans.push(plan);
        }
    }
    plans
}
