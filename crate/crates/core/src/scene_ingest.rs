//! Scene reconstruction: snaps recorded tracklets onto the lane graph and derives each
//! agent's initial state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{VehicleGeometry, VehicleState};
use crate::geom::{wrap_angle, Vec2};
use crate::road_graph::{GraphError, LaneCoordinate, RoadGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("scene {0} has no usable agents")]
    EmptyScene(String),
    #[error("time {t} outside tracklet span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("tracklet {0} has no poses")]
    NoPoses(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackletPose {
    pub t: f64,
    pub position: Vec2,
    pub heading: Option<f64>,
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub agent_id: i64,
    pub poses: Vec<TrackletPose>,
    pub geometry: VehicleGeometry,
}

impl Tracklet {
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.poses.first()?.t, self.poses.last()?.t))
    }
}

/// Pose at time `t`: linear position and speed, shortest-arc heading.
pub fn interpolate_pose(tracklet: &Tracklet, t: f64) -> Result<TrackletPose, IngestError> {
    let (start, end) = tracklet.span().ok_or(IngestError::NoPoses(tracklet.agent_id))?;
    if !(start..=end).contains(&t) {
        return Err(IngestError::OutOfRange { t, start, end });
    }
    let poses = &tracklet.poses;
    // first pose with time >= t
    let k = poses.partition_point(|p| p.t < t);
    let hi = poses[k];
    if hi.t == t || k == 0 {
        return Ok(hi);
    }
    let lo = poses[k - 1];
    let u = (t - lo.t) / (hi.t - lo.t);
    let heading = match (lo.heading, hi.heading) {
        (Some(a), Some(b)) => Some(wrap_angle(a + wrap_angle(b - a) * u)),
        _ => None,
    };
    let speed = match (lo.speed, hi.speed) {
        (Some(a), Some(b)) => Some(a + (b - a) * u),
        _ => None,
    };
    Ok(TrackletPose {
        t,
        position: lo.position.lerp(hi.position, u),
        heading,
        speed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentInit {
    pub agent_id: i64,
    pub lane: LaneCoordinate,
    pub state: VehicleState,
    pub geometry: VehicleGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedAgent {
    pub agent_id: i64,
    pub reason: String,
}

/// A reconstructed scene. The lane graph is shared and passed alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub t0: f64,
    /// Retained agents, ascending id.
    pub agents: Vec<AgentInit>,
    pub dropped: Vec<DroppedAgent>,
    /// Recorded track of the lowest-id retained agent, used when the ego is replayed.
    pub ego_track: Option<Tracklet>,
}

impl Scene {
    pub fn ego_id(&self) -> Option<i64> {
        self.agents.first().map(|a| a.agent_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Minimum bumper distance between agents spawned on the same edge, m.
    pub min_spawn_gap: f64,
    pub max_snap_distance: f64,
    /// Half-window for finite-difference speed and heading, s.
    pub fd_half_window: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            min_spawn_gap: 2.0,
            max_snap_distance: 10.0,
            fd_half_window: 0.1,
        }
    }
}

/// Central-difference displacement over `t ± h`, clipped to the tracklet span.
pub(crate) fn finite_difference(tracklet: &Tracklet, t: f64, h: f64) -> Option<(Vec2, f64)> {
    let (start, end) = tracklet.span()?;
    let (ta, tb) = ((t - h).max(start), (t + h).min(end));
    if tb <= ta {
        return None;
    }
    let a = interpolate_pose(tracklet, ta).ok()?;
    let b = interpolate_pose(tracklet, tb).ok()?;
    Some((b.position - a.position, tb - ta))
}

/// Snaps each tracklet's pose at `t0` onto the graph.
///
/// Agents are processed by ascending id. Agents without a pose at `t0`, farther than the
/// snap limit from any lane, or closer than `min_spawn_gap` (bumper to bumper) to an
/// already placed agent on the same edge are dropped and reported.
pub fn instantiate_agents(
    graph: &RoadGraph,
    scene_id: &str,
    tracklets: &[Tracklet],
    t0: f64,
    cfg: &IngestConfig,
) -> Result<Scene, IngestError> {
    if tracklets.is_empty() {
        return Err(IngestError::EmptyScene(scene_id.to_string()));
    }
    let mut order: Vec<&Tracklet> = tracklets.iter().collect();
    order.sort_by_key(|t| t.agent_id);

    let mut agents: Vec<AgentInit> = Vec::new();
    let mut dropped = Vec::new();
    for tr in order {
        let drop = |reason: String| DroppedAgent {
            agent_id: tr.agent_id,
            reason,
        };
        let pose = match interpolate_pose(tr, t0) {
            Ok(p) => p,
            Err(e) => {
                dropped.push(drop(format!("no pose at t0: {e}")));
                continue;
            }
        };
        if !pose.position.is_finite() {
            dropped.push(drop("non-finite position".into()));
            continue;
        }
        let fd = finite_difference(tr, t0, cfg.fd_half_window);
        let hint = pose.heading.or_else(|| {
            fd.filter(|(d, _)| d.norm() > 1e-3).map(|(d, _)| d.heading())
        });
        let speed = pose
            .speed
            .or_else(|| fd.map(|(d, dt)| d.norm() / dt))
            .unwrap_or(0.0)
            .max(0.0);
        let lane = match graph.project_to_lane(pose.position, hint, cfg.max_snap_distance) {
            Ok(c) => c,
            Err(GraphError::OffMap { distance }) => {
                dropped.push(drop(format!("off-map ({distance:.2} m from nearest lane)")));
                continue;
            }
            Err(e) => {
                dropped.push(drop(format!("off-map ({e})")));
                continue;
            }
        };
        let geometry = tr.geometry;
        let crowded = agents.iter().find(|a| {
            a.lane.edge_id == lane.edge_id
                && (a.lane.arc_s - lane.arc_s).abs() - 0.5 * (a.geometry.length + geometry.length)
                    < cfg.min_spawn_gap
        });
        if let Some(other) = crowded {
            dropped.push(drop(format!("spawn gap to agent {} below minimum", other.agent_id)));
            continue;
        }
        agents.push(AgentInit {
            agent_id: tr.agent_id,
            lane,
            state: VehicleState {
                position: pose.position,
                v: speed,
                psi: lane.lane_heading,
                a: 0.0,
                phi: 0.0,
            },
            geometry,
        });
    }
    if agents.is_empty() {
        return Err(IngestError::EmptyScene(scene_id.to_string()));
    }
    let ego_track = tracklets
        .iter()
        .find(|t| t.agent_id == agents[0].agent_id)
        .cloned();
    Ok(Scene {
        scene_id: scene_id.to_string(),
        t0,
        agents,
        dropped,
        ego_track,
    })
}

/// Tracklet document as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletFile {
    pub scene_id: String,
    pub tracks: Vec<TrackRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub agent_id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    pub poses: Vec<PoseRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
}

impl TrackletFile {
    /// Converts records into tracklets, sorting poses by time. Rejects empty tracks,
    /// duplicate agent ids and ids that do not fit the raster id channel.
    pub fn tracklets(&self) -> Result<Vec<Tracklet>, String> {
        let defaults = VehicleGeometry::default();
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(self.tracks.len());
        for tr in &self.tracks {
            if !seen.insert(tr.agent_id) {
                return Err(format!("duplicate agent_id {} in scene {}", tr.agent_id, self.scene_id));
            }
            if !(0..i32::MAX as i64).contains(&tr.agent_id) {
                return Err(format!("agent_id {} outside [0, {})", tr.agent_id, i32::MAX));
            }
            if tr.poses.is_empty() {
                return Err(format!("agent {} has no poses", tr.agent_id));
            }
            let mut poses: Vec<TrackletPose> = tr
                .poses
                .iter()
                .map(|p| TrackletPose {
                    t: p.t,
                    position: Vec2::new(p.x, p.y),
                    heading: p.heading,
                    speed: p.speed,
                })
                .collect();
            poses.sort_by(|a, b| a.t.total_cmp(&b.t));
            out.push(Tracklet {
                agent_id: tr.agent_id,
                poses,
                geometry: VehicleGeometry {
                    length: tr.length.unwrap_or(defaults.length),
                    width: tr.width.unwrap_or(defaults.width),
                },
            });
        }
        Ok(out)
    }

    /// Earliest pose time over all tracks.
    pub fn first_time(&self) -> Option<f64> {
        self.tracks
            .iter()
            .flat_map(|t| t.poses.iter().map(|p| p.t))
            .min_by(|a, b| a.total_cmp(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road_graph::{build_graph, CenterlineSpec, GraphConfig, MapSpec};
    use std::f64::consts::PI;

    fn road() -> RoadGraph {
        build_graph(
            &MapSpec {
                centerlines: vec![CenterlineSpec {
                    id: 1,
                    points: vec![[0.0, 0.0].into(), [200.0, 0.0].into()],
                    lanes: 1,
                    oneway: true,
                    lane_width: None,
                }],
            },
            &GraphConfig::default(),
        )
        .unwrap()
    }

    fn track(id: i64, poses: &[(f64, f64, f64)], speed: Option<f64>) -> Tracklet {
        Tracklet {
            agent_id: id,
            poses: poses
                .iter()
                .map(|&(t, x, y)| TrackletPose { t, position: Vec2::new(x, y), heading: None, speed })
                .collect(),
            geometry: VehicleGeometry::default(),
        }
    }

    #[test]
    fn interpolation_examples() {
        let tr = track(1, &[(0.0, 0.0, 0.0), (1.0, 10.0, 0.0)], None);
        assert_eq!(interpolate_pose(&tr, 1.0).unwrap().position, Vec2::new(10.0, 0.0));
        assert_eq!(interpolate_pose(&tr, 0.5).unwrap().position, Vec2::new(5.0, 0.0));
        assert!(interpolate_pose(&tr, 1.5).is_err());

        let mut tr = tr;
        tr.poses[0].heading = Some(170f64.to_radians());
        tr.poses[1].heading = Some(-170f64.to_radians());
        let h = interpolate_pose(&tr, 0.5).unwrap().heading.unwrap();
        assert!((h.abs() - PI).abs() < 1e-12, "{h}");
    }

    #[test]
    fn single_agent_on_lane() {
        let g = road();
        let tr = track(3, &[(0.0, 50.0, 0.0), (0.1, 51.0, 0.0)], Some(10.0));
        let scene = instantiate_agents(&g, "s", &[tr], 0.0, &IngestConfig::default()).unwrap();
        assert_eq!(scene.agents.len(), 1);
        let a = scene.agents[0];
        assert_eq!(a.state.v, 10.0);
        assert_eq!(a.state.psi, 0.0);
        assert!(a.lane.lateral_offset.abs() < 1e-12);
    }

    #[test]
    fn speed_from_finite_difference() {
        let g = road();
        let tr = track(3, &[(0.0, 50.0, 0.0), (0.1, 51.0, 0.0), (0.2, 52.0, 0.0)], None);
        let scene = instantiate_agents(&g, "s", &[tr], 0.1, &IngestConfig::default()).unwrap();
        assert!((scene.agents[0].state.v - 10.0).abs() < 1e-9);
    }

    #[test]
    fn off_map_and_spawn_gap() {
        let g = road();
        let far = track(1, &[(0.0, 50.0, 30.0)], None);
        let a = track(2, &[(0.0, 80.0, 0.0)], None);
        let b = track(3, &[(0.0, 81.0, 0.0)], None);
        let scene = instantiate_agents(&g, "s", &[b, far, a], 0.0, &IngestConfig::default()).unwrap();
        assert_eq!(scene.agents.iter().map(|a| a.agent_id).collect::<Vec<_>>(), vec![2]);
        assert_eq!(scene.dropped.len(), 2);
        assert_eq!(scene.dropped[0].agent_id, 1);
        assert!(scene.dropped[0].reason.contains("off-map"));
        assert_eq!(scene.dropped[1].agent_id, 3);
        assert_eq!(scene.ego_id(), Some(2));
    }

    #[test]
    fn empty_scene_errors() {
        let g = road();
        assert!(matches!(
            instantiate_agents(&g, "s", &[], 0.0, &IngestConfig::default()),
            Err(IngestError::EmptyScene(_))
        ));
        let far = track(1, &[(0.0, 50.0, 30.0)], None);
        assert!(instantiate_agents(&g, "s", &[far], 0.0, &IngestConfig::default()).is_err());
    }
}
