//! Bird's-eye-view rasterization of maps and simulation logs.
//!
//! Cell `(row, col)` covers `origin + [col, col + 1) x [row, row + 1)` times the
//! resolution, so the row index grows with y. Planes are stored row-major.
//!
//! File layout (little endian):
//!
//! | offset | type    | field                    |
//! |--------|---------|--------------------------|
//! | 0      | [u8; 4] | magic `BEVG`             |
//! | 4      | u32     | version (1)              |
//! | 8      | u32     | H                        |
//! | 12     | u32     | W                        |
//! | 16     | f64     | resolution               |
//! | 24     | f64     | origin x                 |
//! | 32     | f64     | origin y                 |
//! | 40     | u32     | T (frames)               |
//! | 44     | u32     | t_obs                    |
//! | 48     | u32     | variant                  |
//! | 52     | u32     | start step               |
//! | 56     | u32     | collision count          |
//! | 60     | u32     | reserved (0)             |
//!
//! followed by three f32 context planes (road, lane, unknown), then per frame the f32
//! planes state-x, state-y, mask, label-straight, label-left, label-right and one i32
//! id plane, then the scene id as a u32 byte length plus UTF-8 bytes, and finally one u32
//! collision count per frame.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{segment_distance, Vec2};
use crate::road_graph::RoadGraph;
use crate::sim_engine::SimLog;

pub const MAGIC: &[u8; 4] = b"BEVG";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid grid spec: {0}")]
    Spec(String),
    #[error("invalid sequence request: {0}")]
    Sequence(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub res: f64,
    /// World position of the outer corner of cell (0, 0).
    pub origin: Vec2,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::centered(256, 256, 0.5, Vec2::ZERO)
    }
}

impl GridSpec {
    /// Grid of `h x w` cells whose center is `center`.
    pub fn centered(h: usize, w: usize, res: f64, center: Vec2) -> Self {
        Self {
            h,
            w,
            res,
            origin: center - Vec2::new(w as f64 * res / 2.0, h as f64 * res / 2.0),
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.h == 0 || self.w == 0 {
            return Err(RenderError::Spec("H and W must be positive".into()));
        }
        if self.h > u32::MAX as usize || self.w > u32::MAX as usize {
            return Err(RenderError::Spec("H and W must fit in 32 bits".into()));
        }
        if !(self.res > 0.0) || !self.res.is_finite() {
            return Err(RenderError::Spec("res must be positive".into()));
        }
        if !self.origin.is_finite() {
            return Err(RenderError::Spec("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    /// `(row, col)` of the cell containing `p`, or `None` outside the grid.
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let (row, col) = self.cell_index(p);
        (row >= 0 && col >= 0 && (row as usize) < self.h && (col as usize) < self.w)
            .then_some((row as usize, col as usize))
    }

    /// Unbounded `(row, col)` index: `floor((p - origin) / res)`.
    pub fn cell_index(&self, p: Vec2) -> (i64, i64) {
        let d = p - self.origin;
        ((d.y / self.res).floor() as i64, (d.x / self.res).floor() as i64)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        self.origin + Vec2::new((col as f64 + 0.5) * self.res, (row as f64 + 0.5) * self.res)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CellClass {
    Road = 0,
    Lane = 1,
    Unknown = 2,
}

/// One class per cell; exported as three one-hot planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMap {
    pub spec: GridSpec,
    pub cells: Vec<CellClass>,
}

impl ContextMap {
    pub fn class_at(&self, row: usize, col: usize) -> CellClass {
        self.cells[row * self.spec.w + col]
    }

    /// True when `p` falls in a road or lane cell.
    pub fn is_road(&self, p: Vec2) -> bool {
        self.spec
            .cell_of(p)
            .is_some_and(|(r, c)| self.class_at(r, c) != CellClass::Unknown)
    }

    /// Plane `k` (road, lane, unknown) as 0/1 floats.
    pub fn plane(&self, k: u8) -> Vec<f32> {
        self.cells.iter().map(|&c| if c as u8 == k { 1.0 } else { 0.0 }).collect()
    }
}

/// Road cells lie within half a lane width of a centerline, lane cells within half a
/// pixel (lane wins); tests use cell centers.
pub fn render_context(graph: &RoadGraph, spec: &GridSpec) -> ContextMap {
    let mut cells = vec![CellClass::Unknown; spec.cells()];
    let half_px = spec.res / 2.0;
    for e in graph.edges() {
        let reach = (e.lane_width / 2.0).max(half_px);
        for seg in e.polyline.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let lo = Vec2::new(a.x.min(b.x) - reach, a.y.min(b.y) - reach);
            let hi = Vec2::new(a.x.max(b.x) + reach, a.y.max(b.y) + reach);
            let (r0, c0) = spec.cell_index(lo);
            let (r1, c1) = spec.cell_index(hi);
            let rows = r0.max(0)..=r1.min(spec.h as i64 - 1);
            for row in rows {
                for col in c0.max(0)..=c1.min(spec.w as i64 - 1) {
                    let (row, col) = (row as usize, col as usize);
                    let d = segment_distance(a, b, spec.cell_center(row, col));
                    let cell = &mut cells[row * spec.w + col];
                    if d <= half_px {
                        *cell = CellClass::Lane;
                    } else if d <= e.lane_width / 2.0 && *cell == CellClass::Unknown {
                        *cell = CellClass::Road;
                    }
                }
            }
        }
    }
    ContextMap { spec: *spec, cells }
}

/// Agent rasters for one timestep, all planes row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentMaps {
    /// Displacement from the agent's first logged position: x plane then y plane.
    pub state: Vec<f32>,
    pub mask: Vec<f32>,
    /// Agent id + 1, 0 for empty cells.
    pub ids: Vec<i32>,
    /// One-hot maneuver label planes: straight, left, right.
    pub label: Vec<f32>,
    /// Agents dropped because a lower id already occupied their cell.
    pub collisions: usize,
}

impl AgentMaps {
    pub fn empty(spec: &GridSpec) -> Self {
        let n = spec.cells();
        Self {
            state: vec![0.0; 2 * n],
            mask: vec![0.0; n],
            ids: vec![0; n],
            label: vec![0.0; 3 * n],
            collisions: 0,
        }
    }

    pub fn occupied(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1.0).count()
    }
}

/// Rasterizes the agents present at step `t`. Agents outside the grid are skipped; the
/// lower agent id keeps a contested cell.
pub fn rasterize_states(log: &SimLog, t: usize, spec: &GridSpec) -> AgentMaps {
    let n = spec.cells();
    let mut maps = AgentMaps::empty(spec);
    let mut order: Vec<_> = log.agents.iter().collect();
    order.sort_by_key(|a| a.meta.agent_id);
    for a in order {
        let (Some(start), Some(now)) = (a.states.first(), a.states.get(t)) else {
            continue;
        };
        let Some((row, col)) = spec.cell_of(now.position) else {
            continue;
        };
        let i = row * spec.w + col;
        if maps.mask[i] != 0.0 {
            maps.collisions += 1;
            continue;
        }
        let rel = now.position - start.position;
        maps.state[i] = rel.x as f32;
        maps.state[n + i] = rel.y as f32;
        maps.mask[i] = 1.0;
        maps.ids[i] = (a.meta.agent_id + 1) as i32;
        maps.label[a.meta.label.index() * n + i] = 1.0;
    }
    maps
}

/// A fixed-length window of frames with its context.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    pub scene_id: String,
    pub variant: usize,
    pub start_step: usize,
    pub t_obs: usize,
    pub context: ContextMap,
    pub frames: Vec<AgentMaps>,
}

impl GridSample {
    pub fn collisions(&self) -> usize {
        self.frames.iter().map(|f| f.collisions).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = &self.context.spec;
        let n = spec.cells();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * (3 + 7 * self.frames.len()) + 4 + self.scene_id.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, spec.h as u32, spec.w as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [spec.res, spec.origin.x, spec.origin.y] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [
            self.frames.len() as u32,
            self.t_obs as u32,
            self.variant as u32,
            self.start_step as u32,
            self.collisions() as u32,
            0,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        debug_assert_eq!(out.len(), HEADER_LEN);
        let put_f32 = |out: &mut Vec<u8>, xs: &[f32]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for k in 0..3 {
            put_f32(&mut out, &self.context.plane(k));
        }
        for f in &self.frames {
            put_f32(&mut out, &f.state);
            put_f32(&mut out, &f.mask);
            put_f32(&mut out, &f.label);
            f.ids.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
        out.extend_from_slice(&(self.scene_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.scene_id.as_bytes());
        for f in &self.frames {
            out.extend_from_slice(&(f.collisions as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let (h, w) = (r.u32()? as usize, r.u32()? as usize);
        let res = r.f64()?;
        let origin = Vec2::new(r.f64()?, r.f64()?);
        let (frames_n, t_obs, variant, start_step) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let collisions = r.u32()? as usize;
        r.u32()?;
        let spec = GridSpec { h, w, res, origin };
        spec.validate().map_err(|e| e.to_string())?;
        let n = spec.cells();
        let planes = r.f32s(3 * n)?;
        let mut cells = Vec::with_capacity(n);
        for i in 0..n {
            let hot: Vec<u8> = (0..3u8).filter(|&k| planes[k as usize * n + i] == 1.0).collect();
            let zeros = (0..3).filter(|&k| planes[k * n + i] == 0.0).count();
            if hot.len() != 1 || zeros != 2 {
                return Err(format!("context cell {i} is not one-hot"));
            }
            cells.push(match hot[0] {
                0 => CellClass::Road,
                1 => CellClass::Lane,
                _ => CellClass::Unknown,
            });
        }
        let mut frames = Vec::with_capacity(frames_n);
        for _ in 0..frames_n {
            let state = r.f32s(2 * n)?;
            let mask = r.f32s(n)?;
            let label = r.f32s(3 * n)?;
            let ids = (0..n).map(|_| r.u32().map(|v| v as i32)).collect::<Result<Vec<_>, _>>()?;
            frames.push(AgentMaps {
                state,
                mask,
                ids,
                label,
                collisions: 0,
            });
        }
        let len = r.u32()? as usize;
        let scene_id = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| e.to_string())?;
        for f in &mut frames {
            f.collisions = r.u32()? as usize;
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes".into());
        }
        if frames.iter().map(|f| f.collisions).sum::<usize>() != collisions {
            return Err("collision counts disagree with header".into());
        }
        Ok(Self {
            scene_id,
            variant,
            start_step,
            t_obs,
            context: ContextMap { spec, cells },
            frames,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), RenderError> {
        let io = |source| RenderError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, RenderError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| RenderError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_bytes(&bytes).map_err(|reason| RenderError::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, String> {
        let raw = self.take(n.checked_mul(4).ok_or("size overflow")?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Grid of the given size centred on the ego agent's first position (or the first agent's).
pub fn spec_for_log(log: &SimLog, h: usize, w: usize, res: f64) -> GridSpec {
    let center = log
        .ego_id
        .and_then(|id| log.agents.iter().find(|a| a.meta.agent_id == id))
        .or(log.agents.first())
        .and_then(|a| a.states.first())
        .map_or(Vec2::ZERO, |s| s.position);
    GridSpec::centered(h, w, res, center)
}

/// Cuts the log into windows of `seq_len` states starting every `stride` steps.
pub fn export_sequence(
    log: &SimLog,
    context: &ContextMap,
    t_obs: usize,
    stride: usize,
    seq_len: usize,
) -> Result<Vec<GridSample>, RenderError> {
    let total = log.steps + 1;
    if stride == 0 {
        return Err(RenderError::Sequence("stride must be positive".into()));
    }
    if seq_len == 0 || seq_len > total {
        return Err(RenderError::Sequence(format!("sequence length {seq_len} outside 1..={total}")));
    }
    if t_obs >= seq_len {
        return Err(RenderError::Sequence(format!("t_obs {t_obs} must be below the sequence length {seq_len}")));
    }
    let spec = &context.spec;
    Ok((0..=total - seq_len)
        .step_by(stride)
        .map(|start| GridSample {
            scene_id: log.scene_id.clone(),
            variant: log.variant,
            start_step: start,
            t_obs,
            context: context.clone(),
            frames: (start..start + seq_len).map(|t| rasterize_states(log, t, spec)).collect(),
        })
        .collect())
}

/// File name for a sample.
pub fn sample_file_name(sample: &GridSample) -> String {
    let stem: String = sample
        .scene_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{stem}_v{}_s{:04}.bevg", sample.variant, sample.start_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_index_convention() {
        let spec = GridSpec { h: 64, w: 64, res: 0.5, origin: Vec2::ZERO };
        assert_eq!(spec.cell_index(Vec2::new(10.3, -4.7)), (-10, 20));
        assert_eq!(spec.cell_of(Vec2::new(10.3, -4.7)), None);
        assert_eq!(spec.cell_of(Vec2::new(10.3, 4.7)), Some((9, 20)));
        let centered = GridSpec::centered(256, 256, 0.5, Vec2::new(5.0, 5.0));
        assert_eq!(centered.cell_of(Vec2::new(5.0, 5.0)), Some((128, 128)));
    }

    #[test]
    fn header_is_64_bytes() {
        let spec = GridSpec { h: 2, w: 3, res: 1.0, origin: Vec2::ZERO };
        let s = GridSample {
            scene_id: "x".into(),
            variant: 1,
            start_step: 0,
            t_obs: 0,
            context: ContextMap { spec, cells: vec![CellClass::Unknown; 6] },
            frames: vec![AgentMaps::empty(&spec)],
        };
        let b = s.to_bytes();
        assert_eq!(&b[..4], MAGIC);
        assert_eq!(b.len(), 64 + 4 * 6 * 3 + 4 * 6 * 7 + 4 + 1 + 4);
        assert_eq!(GridSample::from_bytes(&b).unwrap(), s);
    }
}
