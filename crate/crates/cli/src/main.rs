#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use trafficforge_core::behavior::{build_profile_pool, ProfilePool, TrajectoryFile};
use trafficforge_core::bev_render::{export_sequence, render_context, sample_file_name, spec_for_log, GridSpec};
use trafficforge_core::config::{parse_override, validate_config, RunConfig};
use trafficforge_core::metrics::{
    diversity_report, pca_kde_realism, prediction_report, validity_ratio, PredictionRecord, PredictionSet,
    Trajectory2D, ValidityContext,
};
use trafficforge_core::road_graph::{build_graph, MapSpec, RoadGraph};
use trafficforge_core::scene_ingest::{instantiate_agents, Scene, TrackletFile};
use trafficforge_core::sim_engine::{read_log_dir, run_dataset, EgoMode, SimLog};

/// Driving-scenario simulation toolkit.
#[derive(Parser)]
#[command(name = "trafficforge", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the lane graph from a centerline map and write it as JSON.
    BuildGraph(BuildGraphArgs),
    /// Mine reference velocity profiles from recorded trajectories.
    ProfilePool(ProfilePoolArgs),
    /// Simulate every scene under up to `sim.max_variants` behavior variants.
    Simulate(SimulateArgs),
    /// Rasterize simulation logs into bird's-eye-view grid samples.
    Render(RenderArgs),
    /// Evaluate predictions and simulated logs.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key override such as `sim.dt=0.1`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct BuildGraphArgs {
    /// Centerline map JSON.
    #[arg(long)]
    map: PathBuf,
    /// Output graph JSON.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ProfilePoolArgs {
    /// Trajectory file `{"trajectories": [[[t, x, y], ...], ...]}`.
    #[arg(long)]
    trajectories: PathBuf,
    /// Output pool JSON.
    #[arg(long)]
    out: PathBuf,
    /// Resampling interval of the profiles, s (defaults to `sim.dt`).
    #[arg(long)]
    dt: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Centerline map JSON or a graph written by `build-graph`.
    #[arg(long)]
    map: PathBuf,
    /// Tracklet scene JSON: one scene object or an array of them.
    #[arg(long)]
    tracklets: PathBuf,
    /// Profile pool JSON written by `profile-pool`.
    #[arg(long)]
    pool: PathBuf,
    /// Output directory for the logs and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Master seed for every random draw.
    #[arg(long)]
    seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Whether the ego vehicle is simulated or replayed from its tracklet.
    #[arg(long, value_parser = ["simulate", "replay"])]
    ego: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct RenderArgs {
    /// Directory of simulation logs.
    #[arg(long)]
    logs: PathBuf,
    /// Centerline map JSON or graph JSON for the context raster.
    #[arg(long)]
    map: PathBuf,
    /// Grid size as JSON, e.g. `{"H":256,"W":256,"res":0.5}` (defaults to the `grid` section).
    #[arg(long)]
    spec: Option<String>,
    /// Observed frames per sample.
    #[arg(long, default_value_t = 20)]
    t_obs: usize,
    /// Frames per sample (defaults to the whole log).
    #[arg(long)]
    seq_len: Option<usize>,
    /// Steps between consecutive sample starts (defaults to the sample length).
    #[arg(long)]
    stride: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct MetricsArgs {
    /// Prediction file, one JSON object per line.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Directory of simulation logs for the diversity report.
    #[arg(long)]
    logs: Option<PathBuf>,
    /// Map for road validity (centerline map or graph JSON).
    #[arg(long)]
    map: Option<PathBuf>,
    /// Real trajectory file for the realism check; requires `--logs` and `--seed`.
    #[arg(long)]
    real: Option<PathBuf>,
    /// Seed for the realism check sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print a human-readable table instead of JSON.
    #[arg(long)]
    pretty: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

enum CliError {
    Validation(String),
    Runtime(String),
}

type CliResult<T> = Result<T, CliError>;

fn validation<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn load_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let raw: Value = match &args.config {
        Some(p) => read_json(p)?,
        None => json!({}),
    };
    let overrides = args
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::Validation)?;
    validate_config(&raw, &overrides).map_err(validation)
}

/// Accepts a centerline map or a serialized graph.
fn load_graph(path: &Path, cfg: &RunConfig) -> CliResult<RoadGraph> {
    let value: Value = read_json(path)?;
    if value.get("centerlines").is_some() {
        let spec: MapSpec = serde_json::from_value(value).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        build_graph(&spec, &cfg.graph).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_value(value).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

fn build_graph_cmd(a: BuildGraphArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let spec: MapSpec = read_json(&a.map)?;
    let graph = build_graph(&spec, &cfg.graph).map_err(|e| CliError::Validation(format!("{}: {e}", a.map.display())))?;
    log::info!("graph: {} nodes, {} edges", graph.nodes().len(), graph.edges().len());
    write_file(&a.out, to_json(&graph))
}

fn profile_pool_cmd(a: ProfilePoolArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let dt = a.dt.unwrap_or(cfg.sim.dt);
    if !(dt > 0.0) {
        return Err(CliError::Validation(format!("--dt must be positive, got {dt}")));
    }
    let file: TrajectoryFile = read_json(&a.trajectories)?;
    let (pool, skipped) = build_profile_pool(&file.points(), dt, &cfg.graph, &cfg.onset);
    for s in &skipped {
        log::warn!("trajectory {} skipped: {}", s.index, s.reason);
    }
    log::info!("pool: {} profiles, {} skipped", pool.profiles.len(), skipped.len());
    write_file(&a.out, to_json(&pool))
}

fn load_scenes(path: &Path, graph: &RoadGraph, cfg: &RunConfig) -> CliResult<(Vec<Scene>, Vec<Value>)> {
    let value: Value = read_json(path)?;
    let files: Vec<TrackletFile> = match value {
        Value::Array(_) => serde_json::from_value(value),
        _ => serde_json::from_value(value).map(|f| vec![f]),
    }
    .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut ids = std::collections::BTreeSet::new();
    let mut scenes = Vec::new();
    let mut skipped = Vec::new();
    for f in files {
        if !ids.insert(f.scene_id.clone()) {
            return Err(CliError::Validation(format!("{}: duplicate scene_id {}", path.display(), f.scene_id)));
        }
        let tracklets = f
            .tracklets()
            .map_err(|e| CliError::Validation(format!("{}: scene {}: {e}", path.display(), f.scene_id)))?;
        let t0 = f.first_time().unwrap_or(0.0);
        match instantiate_agents(graph, &f.scene_id, &tracklets, t0, &cfg.ingest) {
            Ok(scene) => {
                for d in &scene.dropped {
                    log::warn!("scene {}: agent {} dropped: {}", scene.scene_id, d.agent_id, d.reason);
                }
                scenes.push(scene);
            }
            Err(e) => {
                log::warn!("scene {} skipped: {e}", f.scene_id);
                skipped.push(json!({"scene_id": f.scene_id, "reason": e.to_string()}));
            }
        }
    }
    if scenes.is_empty() {
        return Err(CliError::Validation(format!("{}: no usable scene", path.display())));
    }
    Ok((scenes, skipped))
}

fn simulate_cmd(a: SimulateArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(ego) = &a.ego {
        cfg.sim.ego = if ego == "replay" { EgoMode::Replay } else { EgoMode::Simulate };
    }
    if a.jobs == 0 {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    let graph = load_graph(&a.map, &cfg)?;
    let pool: ProfilePool = read_json(&a.pool)?;
    let (scenes, skipped) = load_scenes(&a.tracklets, &graph, &cfg)?;
    let sim = cfg.sim_config(a.seed);
    sim.validate().map_err(validation)?;

    let dataset = run_dataset(&scenes, &graph, &pool, &sim, a.jobs).map_err(runtime)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    for l in &dataset.logs {
        l.write_to(&a.out).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    }
    for f in &dataset.failures {
        log::warn!("scene {} variant {:?} failed: {}", f.scene_id, f.variant, f.reason);
    }
    let manifest = json!({
        "master_seed": a.seed,
        "config_digest": sim.digest(),
        "config": cfg,
        "logs": dataset.logs.iter().map(|l| json!({
            "scene_id": l.scene_id,
            "variant": l.variant,
            "file": format!("{}.csv", l.file_stem()),
            "agents": l.agents.len(),
        })).collect::<Vec<_>>(),
        "failures": dataset.failures,
        "skipped_scenes": skipped,
        "dropped_agents": scenes.iter().flat_map(|s| s.dropped.iter().map(move |d| json!({
            "scene_id": s.scene_id, "agent_id": d.agent_id, "reason": d.reason,
        }))).collect::<Vec<_>>(),
    });
    write_file(&a.out.join("manifest.json"), to_json(&manifest))?;
    log::info!("{} logs written to {}", dataset.logs.len(), a.out.display());
    Ok(())
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecArg {
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    res: f64,
}

fn load_logs(dir: &Path) -> CliResult<Vec<SimLog>> {
    if !dir.is_dir() {
        return Err(CliError::Validation(format!("{}: not a directory", dir.display())));
    }
    let logs = read_log_dir(dir).map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))?;
    if logs.is_empty() {
        return Err(CliError::Validation(format!("{}: no simulation logs found", dir.display())));
    }
    Ok(logs)
}

fn render_cmd(a: RenderArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let (h, w, res) = match &a.spec {
        Some(s) => {
            let s: SpecArg = serde_json::from_str(s).map_err(|e| CliError::Validation(format!("--spec: {e}")))?;
            (s.h, s.w, s.res)
        }
        None => (cfg.grid.h, cfg.grid.w, cfg.grid.res),
    };
    GridSpec { h, w, res, origin: Default::default() }.validate().map_err(validation)?;
    if a.jobs == 0 {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    let graph = load_graph(&a.map, &cfg)?;
    let logs = load_logs(&a.logs)?;
    for l in &logs {
        let total = l.steps + 1;
        let seq_len = a.seq_len.unwrap_or(total);
        if seq_len == 0 || seq_len > total || a.t_obs >= seq_len || a.stride == Some(0) {
            return Err(CliError::Validation(format!(
                "log {}: need 0 < --seq-len <= {total}, --t-obs < --seq-len and --stride > 0",
                l.file_stem()
            )));
        }
    }

    fs::create_dir_all(&a.out).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    let threads = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build().map_err(runtime)?;
    let index: Vec<Vec<Value>> = threads.install(|| {
        logs.par_iter()
            .map(|l| -> CliResult<Vec<Value>> {
                let spec = spec_for_log(l, h, w, res);
                let context = render_context(&graph, &spec);
                let seq_len = a.seq_len.unwrap_or(l.steps + 1);
                let samples = export_sequence(l, &context, a.t_obs, a.stride.unwrap_or(seq_len), seq_len).map_err(runtime)?;
                samples
                    .iter()
                    .map(|s| {
                        let name = sample_file_name(s);
                        s.write(&a.out.join(&name)).map_err(runtime)?;
                        Ok(json!({
                            "file": name,
                            "scene_id": s.scene_id,
                            "variant": s.variant,
                            "start_step": s.start_step,
                            "frames": s.frames.len(),
                            "collisions": s.collisions(),
                        }))
                    })
                    .collect()
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let index: Vec<Value> = index.into_iter().flatten().collect();
    write_file(
        &a.out.join("index.json"),
        to_json(&json!({"grid": {"H": h, "W": w, "res": res}, "t_obs": a.t_obs, "samples": index})),
    )
}

fn log_trajectories(logs: &[SimLog]) -> Vec<Trajectory2D> {
    logs.iter()
        .flat_map(|l| {
            l.agents
                .iter()
                .filter(|a| !a.meta.is_static)
                .map(move |a| Trajectory2D::new(l.dt, a.states.iter().map(|s| s.position).collect()))
        })
        .collect()
}

fn read_predictions(path: &Path) -> CliResult<Vec<PredictionSet>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let rec: PredictionRecord = serde_json::from_str(line)
                .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
            rec.into_set()
                .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn metrics_cmd(a: MetricsArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    if a.predictions.is_none() && a.logs.is_none() {
        return Err(CliError::Validation("nothing to evaluate: pass --predictions and/or --logs".into()));
    }
    if a.real.is_some() && (a.logs.is_none() || a.seed.is_none()) {
        return Err(CliError::Validation("--real requires --logs and --seed".into()));
    }
    let graph = a.map.as_deref().map(|p| load_graph(p, &cfg)).transpose()?;
    let preds = a.predictions.as_deref().map(read_predictions).transpose()?;
    let logs = a.logs.as_deref().map(load_logs).transpose()?;
    let real = a.real.as_deref().map(read_json::<TrajectoryFile>).transpose()?;

    let validity = |trajs: &[Trajectory2D]| {
        graph.as_ref().map(|g| {
            validity_ratio(trajs, &ValidityContext::Graph { graph: g, margin: cfg.metrics.validity_margin })
        })
    };
    let mut report = serde_json::Map::new();
    if let Some(sets) = &preds {
        let samples: Vec<Trajectory2D> = sets.iter().flat_map(|s| s.samples.iter().cloned()).collect();
        report.insert(
            "predictions".into(),
            json!({
                "count": sets.len(),
                "horizons": prediction_report(sets, &cfg.metrics.horizons),
                "validity_ratio": validity(&samples),
            }),
        );
    }
    if let Some(logs) = &logs {
        let trajs = log_trajectories(logs);
        let diversity = diversity_report(&trajs).map_err(runtime)?;
        let mut sim = json!({
            "logs": logs.len(),
            "trajectories": trajs.len(),
            "diversity": {
                "y_wasserstein": diversity.y_wasserstein,
                "xdd_wasserstein": diversity.xdd_wasserstein,
                "skipped": diversity.skipped.len(),
            },
            "validity_ratio": validity(&trajs),
        });
        if let Some(real) = &real {
            let real_trajs: Vec<Trajectory2D> = real
                .points()
                .into_iter()
                .filter(|t| t.len() >= 2)
                .map(|t| {
                    let dt = (t[t.len() - 1].t - t[0].t) / (t.len() - 1) as f64;
                    Trajectory2D::new(dt, t.into_iter().map(|p| p.position).collect())
                })
                .collect();
            let r = pca_kde_realism(&real_trajs, &trajs, &cfg.metrics.realism(), a.seed.expect("checked above"))
                .map_err(runtime)?;
            sim["realism"] = serde_json::to_value(r).expect("serializable");
        }
        report.insert("simulation".into(), sim);
    }
    let report = Value::Object(report);
    let text = if a.pretty { pretty(&report) } else { to_json(&report) };
    match &a.out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn fmt_num(v: &Value) -> String {
    v.as_f64().map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn pretty(report: &Value) -> String {
    let mut out = String::new();
    if let Some(p) = report.get("predictions") {
        out.push_str(&format!("predictions: {}\n", p["count"]));
        out.push_str(&format!("{:>8} {:>6} {:>10} {:>10} {:>10}\n", "horizon", "count", "minADE", "minFDE", "NLL"));
        for h in p["horizons"].as_array().into_iter().flatten() {
            out.push_str(&format!(
                "{:>7}s {:>6} {:>10} {:>10} {:>10}\n",
                h["horizon_s"],
                h["count"],
                fmt_num(&h["min_ade"]),
                fmt_num(&h["min_fde"]),
                fmt_num(&h["nll"])
            ));
        }
        out.push_str(&format!("validity ratio: {}\n", fmt_num(&p["validity_ratio"])));
    }
    if let Some(s) = report.get("simulation") {
        let d = &s["diversity"];
        out.push_str(&format!("simulation: {} logs, {} trajectories\n", s["logs"], s["trajectories"]));
        out.push_str(&format!("{:>16} {:>10} {:>10}\n", "", "mean", "median"));
        for (name, key) in [("Y Wasserstein", "y_wasserstein"), ("Xdd Wasserstein", "xdd_wasserstein")] {
            out.push_str(&format!(
                "{:>16} {:>10} {:>10}\n",
                name,
                fmt_num(&d[key]["mean"]),
                fmt_num(&d[key]["median"])
            ));
        }
        out.push_str(&format!("validity ratio: {}\n", fmt_num(&s["validity_ratio"])));
        if let Some(r) = s.get("realism") {
            out.push_str(&format!(
                "realism log-likelihood: real {} sim {}\n",
                fmt_num(&r["loglik_real"]),
                fmt_num(&r["loglik_sim"])
            ));
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRAFFICFORGE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::BuildGraph(a) => build_graph_cmd(a),
        Command::ProfilePool(a) => profile_pool_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("runtime error: {m}");
            ExitCode::from(2)
        }
    }
}
