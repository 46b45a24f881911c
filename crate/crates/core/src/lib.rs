//! Deterministic multi-agent driving-scenario simulation.
//!
//! Scenes are rebuilt from a lane-centerline map and recorded tracklets, every agent is
//! given one of several plausible maneuvers with a velocity profile mined from real
//! trajectories, and the scene is rolled out with IDM car following, MOBIL lane changes
//! and proportional lane-tracking controllers. Evaluation metrics and a bird's-eye-view
//! rasterizer for the resulting logs are included.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod behavior;
pub mod bev_render;
pub mod config;
pub mod controller;
pub mod dynamics;
pub mod geom;
pub mod metrics;
pub mod road_graph;
pub mod scene_ingest;
pub mod seed;
pub mod sim_engine;
pub mod synthetic;

pub use geom::Vec2;
