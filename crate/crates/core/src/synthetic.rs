//! Synthetic inputs: a four-way intersection map, scenes of tracked vehicles on it and a
//! generator of smooth reference trajectories that stands in for recorded driving.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::TimedPoint;
use crate::geom::Vec2;
use crate::road_graph::{CenterlineSpec, MapSpec};
use crate::scene_ingest::{PoseRecord, TrackRecord, TrackletFile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntersectionLayout {
    /// Arm length beyond the junction box, m.
    pub arm_length: f64,
    /// Half size of the junction box, m.
    pub junction_half: f64,
    pub lane_width: f64,
    /// Points per connector curve.
    pub connector_points: usize,
}

impl Default for IntersectionLayout {
    fn default() -> Self {
        Self {
            arm_length: 150.0,
            junction_half: 15.0,
            lane_width: 3.5,
            connector_points: 24,
        }
    }
}

fn line(a: Vec2, b: Vec2, n: usize) -> Vec<Vec2> {
    (0..n).map(|i| a.lerp(b, i as f64 / (n - 1) as f64)).collect()
}

/// Quarter circle around `center` from angle `from` turning by `sweep` radians.
fn arc(center: Vec2, radius: f64, from: f64, sweep: f64, n: usize) -> Vec<Vec2> {
    (0..n)
        .map(|i| center + Vec2::from_heading(from + sweep * i as f64 / (n - 1) as f64) * radius)
        .collect()
}

/// Four two-lane one-way approaches, four two-lane one-way exits and single-lane
/// connectors: the left lane continues straight or turns left, the right lane continues
/// straight or turns right. Right-hand traffic.
///
/// Centerline ids: approaches `0..4`, exits `4..8`, connectors from `100`.
pub fn intersection_map(layout: &IntersectionLayout) -> MapSpec {
    let (j, w, l) = (layout.junction_half, layout.lane_width, layout.arm_length);
    let mut centerlines = Vec::new();
    let rot = |k: usize, p: Vec2| p.rotate(k as f64 * FRAC_PI_2);
    // local frame: approach from the south heading north
    for k in 0..4 {
        centerlines.push(CenterlineSpec {
            id: k as i64,
            points: vec![rot(k, Vec2::new(w, -j - l)), rot(k, Vec2::new(w, -j))],
            lanes: 2,
            oneway: true,
            lane_width: Some(w),
        });
    }
    for k in 0..4 {
        centerlines.push(CenterlineSpec {
            id: 4 + k as i64,
            points: vec![rot(k, Vec2::new(w, j)), rot(k, Vec2::new(w, j + l))],
            lanes: 2,
            oneway: true,
            lane_width: Some(w),
        });
    }
    let n = layout.connector_points.max(3);
    let mut id = 100;
    for k in 0..4 {
        let (right_x, left_x) = (1.5 * w, 0.5 * w);
        let curves = [
            // straight, right lane and left lane
            line(Vec2::new(right_x, -j), Vec2::new(right_x, j), n),
            line(Vec2::new(left_x, -j), Vec2::new(left_x, j), n),
            // right turn into the eastbound exit's right lane
            arc(Vec2::new(j, -j), j - right_x, PI, -FRAC_PI_2, n),
            // left turn into the westbound exit's left lane
            arc(Vec2::new(-j, -j), j + left_x, 0.0, FRAC_PI_2, n),
        ];
        for c in curves {
            centerlines.push(CenterlineSpec {
                id,
                points: c.into_iter().map(|p| rot(k, p)).collect(),
                lanes: 1,
                oneway: true,
                lane_width: Some(w),
            });
            id += 1;
        }
    }
    MapSpec { centerlines }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub min_agents: usize,
    pub max_agents: usize,
    /// Distance range before the junction at which agents start, m.
    pub start_distance: (f64, f64),
    pub speed: (f64, f64),
    /// Minimum spacing between agents in one lane, m.
    pub spacing: f64,
    /// Track duration and sample interval, s.
    pub duration: f64,
    pub dt: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            min_agents: 3,
            max_agents: 6,
            start_distance: (25.0, 110.0),
            speed: (5.0, 14.0),
            spacing: 12.0,
            duration: 7.0,
            dt: 0.1,
        }
    }
}

/// Tracks of vehicles approaching the junction on random lanes at constant speed.
pub fn intersection_scene(layout: &IntersectionLayout, params: &SceneParams, scene_id: &str, seed: u64) -> TrackletFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (j, w) = (layout.junction_half, layout.lane_width);
    let count = rng.random_range(params.min_agents..=params.max_agents);
    let mut placed: Vec<(usize, usize, f64)> = Vec::new();
    let mut tracks = Vec::new();
    let mut attempts = 0;
    while tracks.len() < count && attempts < 200 {
        attempts += 1;
        let arm = rng.random_range(0..4usize);
        let lane = rng.random_range(0..2usize);
        let d = rng.random_range(params.start_distance.0..params.start_distance.1);
        if placed.iter().any(|&(a, l, pd)| a == arm && l == lane && (pd - d).abs() < params.spacing) {
            continue;
        }
        placed.push((arm, lane, d));
        let v = rng.random_range(params.speed.0..params.speed.1);
        let x = if lane == 0 { 1.5 * w } else { 0.5 * w };
        let heading = FRAC_PI_2 + arm as f64 * FRAC_PI_2;
        let steps = (params.duration / params.dt).round() as usize;
        let poses = (0..=steps)
            .map(|k| {
                let t = k as f64 * params.dt;
                let p = Vec2::new(x, -j - d + v * t).rotate(arm as f64 * FRAC_PI_2);
                PoseRecord {
                    t,
                    x: p.x,
                    y: p.y,
                    heading: Some(crate::geom::wrap_angle(heading)),
                    speed: Some(v),
                }
            })
            .collect();
        tracks.push(TrackRecord {
            agent_id: tracks.len() as i64,
            length: Some(4.5),
            width: Some(1.8),
            poses,
        });
    }
    TrackletFile {
        scene_id: scene_id.to_string(),
        tracks,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceParams {
    pub dt: f64,
    pub duration: f64,
    pub speed: (f64, f64),
    /// Amplitude range of the slow speed oscillation, m/s.
    pub speed_wobble: (f64, f64),
    pub turn_share: f64,
    pub turn_radius: (f64, f64),
    /// Straight distance before a turn, m.
    pub turn_distance: (f64, f64),
    /// Amplitude of the lateral weave on straight driving, m.
    pub lateral_wobble: f64,
    /// Lateral acceleration limit that sets the cornering speed, m/s².
    pub max_lateral_accel: f64,
    /// Braking before and accelerating after a turn, m/s².
    pub turn_decel: f64,
    pub turn_accel: f64,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            duration: 7.0,
            speed: (6.0, 14.0),
            speed_wobble: (0.2, 1.0),
            turn_share: 0.4,
            turn_radius: (10.0, 25.0),
            turn_distance: (5.0, 40.0),
            lateral_wobble: 0.3,
            max_lateral_accel: 2.5,
            turn_decel: 2.0,
            turn_accel: 1.5,
        }
    }
}

/// Smooth driving trajectories: a cruise speed with a slow oscillation, and either a
/// gently weaving straight path or a straight approach followed by a 90 degree turn
/// taken at a speed bounded by the lateral acceleration limit.
pub fn reference_trajectories(params: &ReferenceParams, n: usize, seed: u64) -> Vec<Vec<TimedPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v0 = rng.random_range(params.speed.0..params.speed.1);
            let amp = rng.random_range(params.speed_wobble.0..params.speed_wobble.1);
            let period = rng.random_range(4.0..10.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let turn = rng.random::<f64>() < params.turn_share;
            let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let radius = rng.random_range(params.turn_radius.0..params.turn_radius.1);
            let before = rng.random_range(params.turn_distance.0..params.turn_distance.1);
            let weave = rng.random_range(-params.lateral_wobble..=params.lateral_wobble);
            let weave_len = rng.random_range(40.0..120.0);
            let heading0 = rng.random_range(-PI..PI);
            let origin = Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let steps = (params.duration / params.dt).round() as usize;
            let arc = radius * FRAC_PI_2;
            let v_turn = (params.max_lateral_accel * radius).sqrt();
            // speed cap from braking into and accelerating out of the curve
            let cap = |s: f64| -> f64 {
                if !turn {
                    f64::INFINITY
                } else if s < before {
                    (v_turn * v_turn + 2.0 * params.turn_decel * (before - s)).sqrt()
                } else if s <= before + arc {
                    v_turn
                } else {
                    (v_turn * v_turn + 2.0 * params.turn_accel * (s - before - arc)).sqrt()
                }
            };
            let mut s = 0.0;
            (0..=steps)
                .map(|k| {
                    let t = k as f64 * params.dt;
                    if k > 0 {
                        let tm = t - 0.5 * params.dt;
                        let cruise = v0 + amp * (2.0 * PI * tm / period + phase).sin();
                        s += cruise.min(cap(s)).max(0.5) * params.dt;
                    }
                    let local = if turn {
                        if s <= before {
                            Vec2::new(s, 0.0)
                        } else if s <= before + arc {
                            let a = (s - before) / radius;
                            Vec2::new(before + radius * a.sin(), dir * radius * (1.0 - a.cos()))
                        } else {
                            Vec2::new(before + radius, dir * (radius + s - before - arc))
                        }
                    } else {
                        Vec2::new(s, weave * (2.0 * PI * s / weave_len).sin())
                    };
                    TimedPoint {
                        t,
                        position: origin + local.rotate(heading0),
                    }
                })
                .collect()
        })
        .collect()
}
