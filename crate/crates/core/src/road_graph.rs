//! Directed lane-centerline graph: construction from a centerline map, nearest-lane
//! projection, depth-first route enumeration and maneuver labelling.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    cumulative_lengths, project_polyline, sample_polyline, wrap_angle, PolylineProjection, Vec2,
};

pub type NodeId = u32;
pub type EdgeId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("centerline {id}: {reason}")]
    DegenerateCenterline { id: i64, reason: String },
    #[error("point is off-map: nearest lane is {distance:.3} m away")]
    OffMap { distance: f64 },
    #[error("graph has no edges")]
    Empty,
    #[error("unknown edge id {0}")]
    UnknownEdge(EdgeId),
    #[error("arc position {s} outside [0, {length}]")]
    OutOfBounds { s: f64, length: f64 },
    #[error("inconsistent graph: {0}")]
    Inconsistent(String),
}

/// Input map description: a list of road centerlines.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MapSpec {
    pub centerlines: Vec<CenterlineSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CenterlineSpec {
    pub id: i64,
    pub points: Vec<Vec2>,
    pub lanes: u32,
    pub oneway: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane_width: Option<f64>,
}

/// Tunables for graph construction and queries.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct GraphConfig {
    /// Endpoints closer than this are merged into one node, meters.
    pub join_tolerance: f64,
    /// Projections farther than this are rejected as off-map, meters.
    pub max_snap_distance: f64,
    /// Lane width used when a centerline does not give one, meters.
    pub default_lane_width: f64,
    /// Cumulative heading change separating straight from turning routes, degrees.
    pub straight_threshold_deg: f64,
    /// Routes turning more than this are flagged as U-turn-like, degrees.
    pub u_turn_threshold_deg: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            join_tolerance: 0.5,
            max_snap_distance: 10.0,
            default_lane_width: 3.5,
            straight_threshold_deg: 30.0,
            u_turn_threshold_deg: 150.0,
        }
    }
}

impl GraphConfig {
    pub fn straight_threshold(&self) -> f64 {
        self.straight_threshold_deg.to_radians()
    }
}

/// Maneuver label of a route or trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Maneuver {
    Straight,
    Left,
    Right,
}

impl Maneuver {
    pub const ALL: [Maneuver; 3] = [Maneuver::Straight, Maneuver::Left, Maneuver::Right];

    /// Channel used in one-hot label rasters: straight, left, right.
    pub fn index(self) -> usize {
        match self {
            Maneuver::Straight => 0,
            Maneuver::Left => 1,
            Maneuver::Right => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Maneuver::Straight => "straight",
            Maneuver::Left => "left",
            Maneuver::Right => "right",
        }
    }

    pub fn is_turn(self) -> bool {
        self != Maneuver::Straight
    }
}

impl fmt::Display for Maneuver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Maneuver {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "straight" => Ok(Maneuver::Straight),
            "left" => Ok(Maneuver::Left),
            "right" => Ok(Maneuver::Right),
            other => Err(format!("unknown maneuver label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneNode {
    pub id: NodeId,
    pub position: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneEdge {
    pub id: EdgeId,
    pub from_node: NodeId,
    pub to_node: NodeId,
    pub polyline: Vec<Vec2>,
    pub length: f64,
    pub lane_width: f64,
    /// Id of the source centerline in the map description.
    pub centerline_id: i64,
    /// Lane position within its carriageway, 0 = rightmost in travel direction.
    pub lane_index: u32,
    /// True when the edge runs against the source centerline's point order.
    pub reversed: bool,
    pub left_neighbor: Option<EdgeId>,
    pub right_neighbor: Option<EdgeId>,
    #[serde(skip)]
    cum: Vec<f64>,
}

impl LaneEdge {
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    /// Point and heading at arc length `s`, clamped to the edge.
    pub fn sample(&self, s: f64) -> (Vec2, f64) {
        sample_polyline(&self.polyline, &self.cum, s.clamp(0.0, self.length))
    }

    pub fn project(&self, p: Vec2) -> PolylineProjection {
        project_polyline(&self.polyline, &self.cum, p, 0.0, self.length)
            .expect("edge polylines have at least one segment")
    }
}

/// Position of a point relative to a lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneCoordinate {
    pub edge_id: EdgeId,
    pub arc_s: f64,
    /// Signed offset, positive left of the travel direction, meters.
    pub lateral_offset: f64,
    pub lane_heading: f64,
}

/// Uniform-grid bucket index over edge segments.
#[derive(Debug, Clone, Default)]
struct SpatialIndex {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<(EdgeId, u32)>>,
}

impl SpatialIndex {
    const CELL: f64 = 20.0;

    fn build(edges: &[LaneEdge]) -> Self {
        let mut idx = SpatialIndex {
            cell: Self::CELL,
            buckets: HashMap::new(),
        };
        for e in edges {
            for (k, w) in e.polyline.windows(2).enumerate() {
                let (lo, hi) = idx.cell_range(
                    Vec2::new(w[0].x.min(w[1].x), w[0].y.min(w[1].y)),
                    Vec2::new(w[0].x.max(w[1].x), w[0].y.max(w[1].y)),
                );
                for cx in lo.0..=hi.0 {
                    for cy in lo.1..=hi.1 {
                        idx.buckets.entry((cx, cy)).or_default().push((e.id, k as u32));
                    }
                }
            }
        }
        idx
    }

    fn cell_of(&self, p: Vec2) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    fn cell_range(&self, lo: Vec2, hi: Vec2) -> ((i64, i64), (i64, i64)) {
        (self.cell_of(lo), self.cell_of(hi))
    }

    /// Segments possibly within `radius` of `p`, sorted and deduplicated.
    fn candidates(&self, p: Vec2, radius: f64) -> Vec<(EdgeId, u32)> {
        let (lo, hi) = self.cell_range(
            Vec2::new(p.x - radius, p.y - radius),
            Vec2::new(p.x + radius, p.y + radius),
        );
        let mut out = Vec::new();
        // very large radii degrade to a full scan
        if (hi.0 - lo.0 + 1) * (hi.1 - lo.1 + 1) > self.buckets.len() as i64 {
            for v in self.buckets.values() {
                out.extend_from_slice(v);
            }
        } else {
            for cx in lo.0..=hi.0 {
                for cy in lo.1..=hi.1 {
                    if let Some(v) = self.buckets.get(&(cx, cy)) {
                        out.extend_from_slice(v);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Directed lane graph. Immutable after construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GraphData", into = "GraphData")]
pub struct RoadGraph {
    nodes: Vec<LaneNode>,
    edges: Vec<LaneEdge>,
    outgoing: Vec<Vec<EdgeId>>,
    incoming: Vec<Vec<EdgeId>>,
    index: SpatialIndex,
}

#[derive(Serialize, Deserialize)]
struct GraphData {
    nodes: Vec<LaneNode>,
    edges: Vec<LaneEdge>,
}

impl TryFrom<GraphData> for RoadGraph {
    type Error = GraphError;
    fn try_from(d: GraphData) -> Result<Self, GraphError> {
        RoadGraph::from_parts(d.nodes, d.edges)
    }
}

impl From<RoadGraph> for GraphData {
    fn from(g: RoadGraph) -> Self {
        GraphData {
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

const TIE_EPS: f64 = 1e-9;

impl RoadGraph {
    /// Assembles a graph from nodes and edges, checking ids, endpoints and lengths.
    pub fn from_parts(nodes: Vec<LaneNode>, mut edges: Vec<LaneEdge>) -> Result<Self, GraphError> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id as usize != i {
                return Err(GraphError::Inconsistent(format!("node id {} at index {i}", n.id)));
            }
            if !n.position.is_finite() {
                return Err(GraphError::Inconsistent(format!("node {} not finite", n.id)));
            }
        }
        let mut outgoing = vec![Vec::new(); nodes.len()];
        let mut incoming = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter_mut().enumerate() {
            if e.id as usize != i {
                return Err(GraphError::Inconsistent(format!("edge id {} at index {i}", e.id)));
            }
            if e.polyline.len() < 2 || e.from_node as usize >= nodes.len() || e.to_node as usize >= nodes.len() {
                return Err(GraphError::Inconsistent(format!("edge {} malformed", e.id)));
            }
            if !(e.lane_width > 0.0) {
                return Err(GraphError::Inconsistent(format!("edge {} lane width", e.id)));
            }
            e.cum = cumulative_lengths(&e.polyline);
            let arc = *e.cum.last().unwrap();
            if !(arc > 0.0) || (arc - e.length).abs() > 1e-9 * arc.max(1.0) {
                return Err(GraphError::Inconsistent(format!(
                    "edge {} length {} != arc length {arc}",
                    e.id, e.length
                )));
            }
            e.length = arc;
            outgoing[e.from_node as usize].push(e.id);
            incoming[e.to_node as usize].push(e.id);
        }
        let index = SpatialIndex::build(&edges);
        Ok(Self {
            nodes,
            edges,
            outgoing,
            incoming,
            index,
        })
    }

    pub fn nodes(&self) -> &[LaneNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[LaneEdge] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edge(&self, id: EdgeId) -> Option<&LaneEdge> {
        self.edges.get(id as usize)
    }

    /// Outgoing edge ids of `node`, ascending.
    pub fn outgoing(&self, node: NodeId) -> &[EdgeId] {
        &self.outgoing[node as usize]
    }

    pub fn incoming(&self, node: NodeId) -> &[EdgeId] {
        &self.incoming[node as usize]
    }

    /// Axis-aligned bounds of all edge geometry, or `None` for an empty graph.
    pub fn bounds(&self) -> Option<(Vec2, Vec2)> {
        let mut it = self.edges.iter().flat_map(|e| e.polyline.iter().copied());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| {
            (Vec2::new(lo.x.min(p.x), lo.y.min(p.y)), Vec2::new(hi.x.max(p.x), hi.y.max(p.y)))
        }))
    }

    /// Nearest lane to `point`. Ties go to the smaller heading difference to `heading_hint`,
    /// then to the lower edge id.
    pub fn project_to_lane(
        &self,
        point: Vec2,
        heading_hint: Option<f64>,
        max_snap_distance: f64,
    ) -> Result<LaneCoordinate, GraphError> {
        if self.edges.is_empty() {
            return Err(GraphError::Empty);
        }
        let candidates = self.index.candidates(point, max_snap_distance);
        let mut best: Option<(EdgeId, PolylineProjection)> = None;
        let mut last_edge = None;
        for (edge_id, _) in candidates {
            if last_edge == Some(edge_id) {
                continue;
            }
            last_edge = Some(edge_id);
            let pr = self.edges[edge_id as usize].project(point);
            let better = match &best {
                None => true,
                Some((_, b)) => {
                    let tol = TIE_EPS * b.distance.max(1.0);
                    if pr.distance < b.distance - tol {
                        true
                    } else if pr.distance <= b.distance + tol {
                        match heading_hint {
                            Some(h) => {
                                let dn = wrap_angle(pr.heading - h).abs();
                                let db = wrap_angle(b.heading - h).abs();
                                dn < db - TIE_EPS
                            }
                            None => false,
                        }
                    } else {
                        false
                    }
                }
            };
            if better {
                best = Some((edge_id, pr));
            }
        }
        match best {
            Some((edge_id, pr)) if pr.distance <= max_snap_distance => Ok(LaneCoordinate {
                edge_id,
                arc_s: pr.arc_s,
                lateral_offset: pr.lateral,
                lane_heading: pr.heading,
            }),
            _ => {
                let distance = self
                    .edges
                    .iter()
                    .map(|e| e.project(point).distance)
                    .fold(f64::INFINITY, f64::min);
                Err(GraphError::OffMap { distance })
            }
        }
    }

    /// Projection of `point` onto one specific edge.
    pub fn project_onto_edge(&self, edge_id: EdgeId, point: Vec2) -> Result<LaneCoordinate, GraphError> {
        let e = self.edge(edge_id).ok_or(GraphError::UnknownEdge(edge_id))?;
        let pr = e.project(point);
        Ok(LaneCoordinate {
            edge_id,
            arc_s: pr.arc_s,
            lateral_offset: pr.lateral,
            lane_heading: pr.heading,
        })
    }

    /// Distance from `point` to the nearest centerline together with that lane's width,
    /// restricted to lanes within `radius`.
    pub fn nearest_within(&self, point: Vec2, radius: f64) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for (edge_id, seg) in self.index.candidates(point, radius) {
            let e = &self.edges[edge_id as usize];
            let d = crate::geom::segment_distance(
                e.polyline[seg as usize],
                e.polyline[seg as usize + 1],
                point,
            );
            if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, e.lane_width));
            }
        }
        best
    }

    /// True when some lane centerline passes within `lane_width / 2 + margin` of `point`.
    pub fn on_road(&self, point: Vec2, margin: f64) -> bool {
        let max_w = self.edges.iter().map(|e| e.lane_width).fold(0.0, f64::max);
        let radius = max_w / 2.0 + margin;
        self.index.candidates(point, radius).into_iter().any(|(edge_id, seg)| {
            let e = &self.edges[edge_id as usize];
            crate::geom::segment_distance(e.polyline[seg as usize], e.polyline[seg as usize + 1], point)
                <= e.lane_width / 2.0 + margin
        })
    }
}

fn degenerate(id: i64, reason: impl Into<String>) -> GraphError {
    GraphError::DegenerateCenterline {
        id,
        reason: reason.into(),
    }
}

/// Shifts a polyline sideways by `offset` (positive = left) using mitred vertex normals.
fn offset_polyline(points: &[Vec2], offset: f64) -> Vec<Vec2> {
    if offset == 0.0 {
        return points.to_vec();
    }
    let normals: Vec<Vec2> = points
        .windows(2)
        .map(|w| (w[1] - w[0]).normalized().perp())
        .collect();
    let last = points.len() - 1;
    let mut out: Vec<Vec2> = Vec::with_capacity(points.len());
    for (i, &p) in points.iter().enumerate() {
        let shift = if i == 0 {
            normals[0] * offset
        } else if i == last {
            normals[last - 1] * offset
        } else {
            let m = normals[i - 1] + normals[i];
            if m.norm() < 1e-9 {
                normals[i] * offset
            } else {
                let m = m.normalized();
                let scale = (1.0 / m.dot(normals[i])).min(4.0);
                m * (offset * scale)
            }
        };
        let q = p + shift;
        if out.last().is_none_or(|&prev: &Vec2| prev.distance(q) > 1e-9) {
            out.push(q);
        }
    }
    out
}

struct NodeMerger {
    tol: f64,
    cell: f64,
    nodes: Vec<LaneNode>,
    grid: HashMap<(i64, i64), Vec<NodeId>>,
}

impl NodeMerger {
    fn new(tol: f64) -> Self {
        Self {
            tol,
            cell: tol.max(1e-6),
            nodes: Vec::new(),
            grid: HashMap::new(),
        }
    }

    fn key(&self, p: Vec2) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    /// Lowest-id existing node within tolerance, or a fresh node.
    fn node_for(&mut self, p: Vec2) -> NodeId {
        let (kx, ky) = self.key(p);
        let mut found: Option<NodeId> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.grid.get(&(kx + dx, ky + dy)) {
                    for &id in ids {
                        if self.nodes[id as usize].position.distance(p) <= self.tol
                            && found.is_none_or(|f| id < f)
                        {
                            found = Some(id);
                        }
                    }
                }
            }
        }
        if let Some(id) = found {
            return id;
        }
        let id = self.nodes.len() as NodeId;
        self.nodes.push(LaneNode { id, position: p });
        self.grid.entry((kx, ky)).or_default().push(id);
        id
    }
}

/// Builds the directed lane graph from a centerline map.
///
/// One-way roads keep their point order; bidirectional roads are split into two
/// carriageways with right-hand traffic. Lane `i` of a carriageway with `n` lanes sits at
/// lateral offset `(i + 0.5 - n/2) * lane_width` from the source centerline.
pub fn build_graph(spec: &MapSpec, cfg: &GraphConfig) -> Result<RoadGraph, GraphError> {
    struct Proto {
        polyline: Vec<Vec2>,
        width: f64,
        centerline_id: i64,
        lane_index: u32,
        reversed: bool,
        group: usize,
    }
    let mut protos: Vec<Proto> = Vec::new();
    let mut group = 0usize;
    for cl in &spec.centerlines {
        if cl.points.len() < 2 {
            return Err(degenerate(cl.id, "fewer than 2 points"));
        }
        if cl.points.iter().any(|p| !p.is_finite()) {
            return Err(degenerate(cl.id, "non-finite coordinate"));
        }
        if cl.points.windows(2).any(|w| w[0] == w[1]) {
            return Err(degenerate(cl.id, "duplicate consecutive points"));
        }
        if cl.lanes == 0 {
            return Err(degenerate(cl.id, "lane count must be at least 1"));
        }
        let width = cl.lane_width.unwrap_or(cfg.default_lane_width);
        if !(width > 0.0 && width.is_finite()) {
            return Err(degenerate(cl.id, "lane width must be positive"));
        }
        let carriageways: Vec<(bool, u32)> = if cl.oneway {
            vec![(false, cl.lanes)]
        } else {
            let n = (cl.lanes / 2).max(1);
            vec![(false, n), (true, n)]
        };
        for (reversed, n) in carriageways {
            for lane_index in 0..n {
                // forward lanes sit right of the centerline, reverse lanes left of it
                let offset = if cl.oneway {
                    (lane_index as f64 + 0.5 - n as f64 / 2.0) * width
                } else if !reversed {
                    -(n as f64 - lane_index as f64 - 0.5) * width
                } else {
                    (n as f64 - lane_index as f64 - 0.5) * width
                };
                let mut polyline = offset_polyline(&cl.points, offset);
                if reversed {
                    polyline.reverse();
                }
                if polyline.len() < 2 {
                    return Err(degenerate(cl.id, "lane offset collapsed the polyline"));
                }
                protos.push(Proto {
                    polyline,
                    width,
                    centerline_id: cl.id,
                    lane_index,
                    reversed,
                    group,
                });
            }
            group += 1;
        }
    }

    let mut merger = NodeMerger::new(cfg.join_tolerance);
    let mut edges = Vec::with_capacity(protos.len());
    for (i, mut p) in protos.into_iter().enumerate() {
        let from = merger.node_for(p.polyline[0]);
        let to = merger.node_for(*p.polyline.last().unwrap());
        let n = p.polyline.len();
        p.polyline[0] = merger.nodes[from as usize].position;
        p.polyline[n - 1] = merger.nodes[to as usize].position;
        p.polyline.dedup_by(|a, b| a.distance(*b) <= 1e-12);
        if p.polyline.len() < 2 {
            return Err(degenerate(p.centerline_id, "lane collapsed after endpoint merging"));
        }
        let cum = cumulative_lengths(&p.polyline);
        let length = *cum.last().unwrap();
        if !(length > 0.0) {
            return Err(degenerate(p.centerline_id, "zero-length lane"));
        }
        edges.push((
            p.group,
            LaneEdge {
                id: i as EdgeId,
                from_node: from,
                to_node: to,
                polyline: p.polyline,
                length,
                lane_width: p.width,
                centerline_id: p.centerline_id,
                lane_index: p.lane_index,
                reversed: p.reversed,
                left_neighbor: None,
                right_neighbor: None,
                cum,
            },
        ));
    }
    // neighbours within a carriageway are consecutive in creation order
    for i in 0..edges.len() {
        if i + 1 < edges.len() && edges[i + 1].0 == edges[i].0 {
            let (l, r) = (edges[i + 1].1.id, edges[i].1.id);
            edges[i].1.left_neighbor = Some(l);
            edges[i + 1].1.right_neighbor = Some(r);
        }
    }
    RoadGraph::from_parts(merger.nodes, edges.into_iter().map(|(_, e)| e).collect())
}

/// Cumulative signed heading change over the unwrapped segment headings of a polyline.
pub fn cumulative_heading_change(points: &[Vec2]) -> f64 {
    let mut prev: Option<f64> = None;
    let mut total = 0.0;
    for w in points.windows(2) {
        let d = w[1] - w[0];
        if d.norm() == 0.0 {
            continue;
        }
        let h = d.heading();
        if let Some(p) = prev {
            total += wrap_angle(h - p);
        }
        prev = Some(h);
    }
    total
}

/// Labels a polyline as straight, left (counterclockwise) or right by its total turn.
pub fn classify_maneuver(points: &[Vec2], straight_threshold: f64) -> Maneuver {
    label_for_turn(cumulative_heading_change(points), straight_threshold)
}

fn label_for_turn(dpsi: f64, threshold: f64) -> Maneuver {
    if dpsi.abs() < threshold {
        Maneuver::Straight
    } else if dpsi > 0.0 {
        Maneuver::Left
    } else {
        Maneuver::Right
    }
}

/// An ordered edge path starting at a lane position, with its concatenated geometry.
///
/// Route arc length `s` is measured from the start position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Route {
    pub edge_ids: Vec<EdgeId>,
    pub start: LaneCoordinate,
    pub total_length: f64,
    pub maneuver: Maneuver,
    pub cumulative_heading_change: f64,
    /// Set when the route turns by more than the U-turn threshold.
    pub u_turn: bool,
    #[serde(skip)]
    points: Vec<Vec2>,
    #[serde(skip)]
    cum: Vec<f64>,
    /// Route arc length at which each edge begins (the first is `-start.arc_s`).
    #[serde(skip)]
    edge_starts: Vec<f64>,
}

impl Route {
    /// Builds a route from a start coordinate and a connected edge sequence.
    pub fn new(
        graph: &RoadGraph,
        edge_ids: Vec<EdgeId>,
        start: LaneCoordinate,
        cfg: &GraphConfig,
    ) -> Result<Self, GraphError> {
        let first = graph.edge(*edge_ids.first().ok_or(GraphError::Empty)?)
            .ok_or(GraphError::UnknownEdge(edge_ids[0]))?;
        if first.id != start.edge_id {
            return Err(GraphError::Inconsistent("route must start on its first edge".into()));
        }
        if !(0.0..=first.length).contains(&start.arc_s) {
            return Err(GraphError::OutOfBounds {
                s: start.arc_s,
                length: first.length,
            });
        }
        let mut points = Vec::new();
        let mut edge_starts = Vec::with_capacity(edge_ids.len());
        let (p0, _) = first.sample(start.arc_s);
        points.push(p0);
        let mut acc = -start.arc_s;
        let mut prev_to: Option<NodeId> = None;
        for &id in &edge_ids {
            let e = graph.edge(id).ok_or(GraphError::UnknownEdge(id))?;
            if let Some(to) = prev_to {
                if e.from_node != to {
                    return Err(GraphError::Inconsistent(format!(
                        "edges do not share a node before edge {id}"
                    )));
                }
            }
            edge_starts.push(acc);
            for (k, &q) in e.polyline.iter().enumerate() {
                let s_global = acc + e.cumulative()[k];
                if s_global > 0.0 && points.last().is_none_or(|l: &Vec2| l.distance(q) > 1e-12) {
                    points.push(q);
                }
            }
            acc += e.length;
            prev_to = Some(e.to_node);
        }
        if points.len() < 2 {
            return Err(GraphError::Inconsistent("route has no remaining length".into()));
        }
        let cum = cumulative_lengths(&points);
        let total_length = *cum.last().unwrap();
        let dpsi = cumulative_heading_change(&points);
        Ok(Self {
            edge_ids,
            start,
            total_length,
            maneuver: label_for_turn(dpsi, cfg.straight_threshold()),
            cumulative_heading_change: dpsi,
            u_turn: dpsi.abs() > cfg.u_turn_threshold_deg.to_radians(),
            points,
            cum,
            edge_starts,
        })
    }

    pub fn polyline(&self) -> &[Vec2] {
        &self.points
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn edge_starts(&self) -> &[f64] {
        &self.edge_starts
    }

    /// Edge index, edge id and on-edge arc position at route arc length `s` (clamped).
    pub fn locate(&self, s: f64) -> (usize, EdgeId, f64) {
        let s = s.clamp(0.0, self.total_length);
        let i = self.edge_starts.partition_point(|&st| st <= s).saturating_sub(1);
        (i, self.edge_ids[i], s - self.edge_starts[i])
    }

    /// Projects `p` onto the route geometry within `[s_min, s_max]`: (route s, lateral offset).
    pub fn project_window(&self, p: Vec2, s_min: f64, s_max: f64) -> (f64, f64) {
        let pr = project_polyline(&self.points, &self.cum, p, s_min.max(0.0), s_max.min(self.total_length))
            .or_else(|| project_polyline(&self.points, &self.cum, p, 0.0, self.total_length))
            .expect("route has geometry");
        (pr.arc_s, pr.lateral)
    }
}

/// Point and heading at arc length `s` along a route.
pub fn sample_centerline(route: &Route, s: f64) -> Result<(Vec2, f64), GraphError> {
    if !(0.0..=route.total_length).contains(&s) {
        return Err(GraphError::OutOfBounds {
            s,
            length: route.total_length,
        });
    }
    Ok(sample_polyline(&route.points, &route.cum, s))
}

/// Depth-first enumeration of routes from `start`.
///
/// A route ends once it covers `horizon_dist` or reaches a node without successors.
/// Children are visited by ascending edge id, so routes come out in lexicographic
/// edge-sequence order; at most `max_routes` are returned.
pub fn enumerate_routes(
    graph: &RoadGraph,
    start: LaneCoordinate,
    horizon_dist: f64,
    max_routes: usize,
    cfg: &GraphConfig,
) -> Vec<Route> {
    let Some(first) = graph.edge(start.edge_id) else {
        return Vec::new();
    };
    let remaining = first.length - start.arc_s;
    if !(remaining > 0.0) || max_routes == 0 {
        return Vec::new();
    }
    let mut sequences = Vec::new();
    let mut path = vec![start.edge_id];
    dfs(graph, &mut path, remaining, horizon_dist, max_routes, &mut sequences);
    sequences
        .into_iter()
        .filter_map(|edges| Route::new(graph, edges, start, cfg).ok())
        .collect()
}

fn dfs(
    graph: &RoadGraph,
    path: &mut Vec<EdgeId>,
    dist: f64,
    horizon: f64,
    max_routes: usize,
    out: &mut Vec<Vec<EdgeId>>,
) {
    if out.len() >= max_routes {
        return;
    }
    let last = &graph.edges[*path.last().unwrap() as usize];
    let next = graph.outgoing(last.to_node);
    if dist >= horizon || next.is_empty() {
        out.push(path.clone());
        return;
    }
    for &e in next {
        path.push(e);
        dfs(graph, path, dist + graph.edges[e as usize].length, horizon, max_routes, out);
        path.pop();
        if out.len() >= max_routes {
            return;
        }
    }
}
