//! Acceptance gate. Every test prints one `PASS`/`FAIL` line for its criterion before
//! asserting, so `cargo test --test acceptance -- --nocapture` gives a full report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trafficforge_core::behavior::{
    build_profile_pool, AgentChoice, ProfilePool, TrajectoryFile, TurnOnsetConfig, VariantPlan, VelocityProfile,
};
use trafficforge_core::bev_render::{rasterize_states, render_context, GridSample, GridSpec};
use trafficforge_core::controller::{step_kinematics, VehicleGeometry, VehicleState};
use trafficforge_core::dynamics::{idm_accel, sample_idm_params_in, IdmParams, IdmRanges, LeaderInfo};
use trafficforge_core::metrics::{
    ade, diversity_report, fde, min_over_samples, normalize_trajectory, pca_kde_realism, wasserstein_1d,
    x_second_differences, xdd_wasserstein, y_wasserstein, DisplacementMetric, PredictionSet, RealismConfig,
    Trajectory2D,
};
use trafficforge_core::road_graph::{
    build_graph, enumerate_routes, CenterlineSpec, GraphConfig, Maneuver, MapSpec, RoadGraph, Route,
};
use trafficforge_core::scene_ingest::{instantiate_agents, AgentInit, IngestConfig, Scene};
use trafficforge_core::sim_engine::{
    assign_behaviors, run_dataset, simulate_scene, AgentAssignment, SimConfig, SimLog,
};
use trafficforge_core::synthetic::{
    intersection_map, intersection_scene, reference_trajectories, IntersectionLayout, ReferenceParams, SceneParams,
};
use trafficforge_core::Vec2;

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    println!("{} criterion {id} ({name}): {detail}", if pass { "PASS" } else { "FAIL" });
}

fn within_budget(start: Instant, budget: Duration) -> (bool, String) {
    let el = start.elapsed();
    (el <= budget, format!("{:.2}s of {:.0}s", el.as_secs_f64(), budget.as_secs_f64()))
}

fn straight_graph(len: f64) -> RoadGraph {
    let spec = MapSpec {
        centerlines: vec![CenterlineSpec {
            id: 0,
            points: vec![Vec2::new(0.0, 0.0), Vec2::new(len, 0.0)],
            lanes: 1,
            oneway: true,
            lane_width: None,
        }],
    };
    build_graph(&spec, &GraphConfig::default()).unwrap()
}

fn init(g: &RoadGraph, id: i64, pos: Vec2, v: f64) -> AgentInit {
    AgentInit {
        agent_id: id,
        lane: g.project_onto_edge(0, pos).unwrap(),
        state: VehicleState { position: pos, v, psi: 0.0, a: 0.0, phi: 0.0 },
        geometry: VehicleGeometry::default(),
    }
}

fn constant_profile(v: f64) -> VelocityProfile {
    VelocityProfile { dt: 0.1, samples: vec![v], feature: v, maneuver: Maneuver::Straight }
}

fn assignment(g: &RoadGraph, a: &AgentInit, profile: VelocityProfile, idm: IdmParams) -> AgentAssignment {
    AgentAssignment {
        agent_id: a.agent_id,
        route: Some(Route::new(g, vec![0], a.lane, &GraphConfig::default()).unwrap()),
        profile: Some(profile),
        idm,
        epsilon: 0.0,
    }
}

fn scene(agents: Vec<AgentInit>) -> Scene {
    Scene { scene_id: "acc".into(), t0: 0.0, agents, dropped: vec![], ego_track: None }
}

/// Independently coded car-following law.
fn idm_oracle(a: f64, b: f64, v0: f64, delta: f64, t: f64, s0: f64, v: f64, dv: f64, s: f64) -> f64 {
    let s_star = s0 + f64::max(0.0, v * t + v * dv / (2.0 * f64::sqrt(a * b)));
    a * (1.0 - f64::powf(v / v0, delta) - (s_star / s) * (s_star / s))
}

#[test]
fn criterion_01_idm_unit_fidelity() {
    let start = Instant::now();
    let p = IdmParams { v0: 15.0, delta: 4.0, t_gap: 1.5, s0: 2.0, a: 1.5, b: 2.0 };
    let leader = LeaderInfo { leader_id: 0, gap_s: 20.0, dv: 2.0 };
    let got = idm_accel(&p, Some(&leader), 10.0, 8.0);
    let oracle = idm_oracle(1.5, 2.0, 15.0, 4.0, 1.5, 2.0, 10.0, 2.0, 20.0);
    let (fast, time) = within_budget(start, Duration::from_secs(1));
    let pass = (got - -0.741).abs() <= 1e-3 && (got - oracle).abs() <= 1e-12 && fast;
    verdict(1, "IDM unit fidelity", pass, format!("a = {got:.6}, oracle {oracle:.6}, {time}"));
    assert!(pass);
}

#[test]
fn criterion_02_idm_equilibrium() {
    let start = Instant::now();
    let g = straight_graph(1500.0);
    let cfg = SimConfig { horizon: 60.0, lane_changes: false, ..Default::default() };
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let idm = sample_idm_params_in(&IdmRanges::default(), 1000 + i, 40.0);
        let lead = init(&g, 0, Vec2::new(100.0, 0.0), 10.0);
        let fol = init(&g, 1, Vec2::new(60.0, 0.0), 10.0);
        let asg = vec![
            assignment(&g, &lead, constant_profile(10.0), idm.with_v0(10.0)),
            assignment(&g, &fol, constant_profile(40.0), idm),
        ];
        let log = simulate_scene(&scene(vec![lead, fol]), &g, &asg, &cfg, 0).unwrap();
        let (l, f) = (&log.agents[0].states, &log.agents[1].states);
        let k = log.steps;
        assert_eq!(l.len(), k + 1, "leader left the road");
        let gap = l[k].position.x - f[k].position.x - 4.0;
        let s_star = idm.s0 + 10.0 * idm.t_gap;
        worst = worst.max((gap - s_star).abs() / s_star);
    }
    let (fast, time) = within_budget(start, Duration::from_secs(10));
    let pass = worst <= 0.01 && fast;
    verdict(2, "IDM equilibrium", pass, format!("worst relative gap error {worst:.5} over 100 draws, {time}"));
    assert!(pass);
}

fn reference_pool() -> ProfilePool {
    let real = reference_trajectories(&ReferenceParams::default(), 300, 11);
    build_profile_pool(&real, 0.1, &GraphConfig::default(), &TurnOnsetConfig::default()).0
}

#[test]
fn criterion_03_collision_free() {
    let start = Instant::now();
    let g = straight_graph(400.0);
    let pool = reference_pool();
    let profiles: Vec<&VelocityProfile> = pool.profiles.iter().collect();
    let cfg = SimConfig { lane_changes: false, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut scenes, mut rejected, mut min_gap, mut violations) = (0, 0, f64::INFINITY, 0);
    while scenes < 1000 {
        let gap = rng.random_range(5.0..60.0);
        let (vl, vf) = (rng.random_range(0.0..15.0), rng.random_range(0.0..15.0));
        // states that no vehicle could resolve at the braking limit
        if vf * vf / (2.0 * cfg.max_decel) > gap + vl * vl / (2.0 * cfg.max_decel) {
            rejected += 1;
            continue;
        }
        scenes += 1;
        let lead = init(&g, 0, Vec2::new(40.0 + gap + 4.0, 0.0), vl);
        let fol = init(&g, 1, Vec2::new(40.0, 0.0), vf);
        let mut asg = Vec::new();
        for a in [&lead, &fol] {
            let profile = profiles[rng.random_range(0..profiles.len())].clone();
            let v0 = profile.speed_at(0.0).max(cfg.v0_floor);
            let idm = sample_idm_params_in(&IdmRanges::default(), rng.random(), v0);
            asg.push(assignment(&g, a, profile, idm));
        }
        let log = simulate_scene(&scene(vec![lead, fol]), &g, &asg, &cfg, 0).unwrap();
        let (l, f) = (&log.agents[0].states, &log.agents[1].states);
        for (a, b) in l.iter().zip(f) {
            let gap = a.position.x - b.position.x - 4.0;
            min_gap = min_gap.min(gap);
            if gap < 0.0 {
                violations += 1;
            }
        }
    }
    let (fast, time) = within_budget(start, Duration::from_secs(30));
    let pass = violations == 0 && fast;
    verdict(
        3,
        "collision-free",
        pass,
        format!("{violations} negative gaps, min gap {min_gap:.3} m, {rejected} infeasible draws redrawn, {time}"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_controller_convergence() {
    let start = Instant::now();
    let g = straight_graph(200.0);
    let a = init(&g, 0, Vec2::new(10.0, 1.0), 10.0);
    let idm = IdmParams { v0: 10.0, delta: 4.0, t_gap: 1.5, s0: 2.0, a: 1.5, b: 2.0 };
    let asg = vec![assignment(&g, &a, constant_profile(10.0), idm)];
    let log = simulate_scene(&scene(vec![a]), &g, &asg, &SimConfig::default(), 0).unwrap();
    let ys: Vec<f64> = log.agents[0].states.iter().map(|s| s.position.y).collect();
    let settled = ys[30..].iter().all(|y| y.abs() < 0.05);
    let overshoot = ys.iter().fold(0.0f64, |m, &y| m.max(-y));
    let (fast, time) = within_budget(start, Duration::from_secs(1));
    let pass = settled && overshoot <= 0.3 && fast;
    verdict(
        4,
        "controller convergence",
        pass,
        format!("|y(3 s)| = {:.4}, max |y| after 3 s {:.4}, overshoot {overshoot:.4}, {time}", ys[30].abs(),
            ys[30..].iter().fold(0.0f64, |m, y| m.max(y.abs()))),
    );
    assert!(pass);
}

/// Algebraic circle fit; returns the radius.
fn fit_radius(pts: &[Vec2]) -> f64 {
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.x).sum::<f64>() / n, pts.iter().map(|p| p.y).sum::<f64>() / n);
    let (mut suu, mut svv, mut suv, mut suuu, mut svvv, mut suvv, mut svuu) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for p in pts {
        let (u, v) = (p.x - mx, p.y - my);
        suu += u * u;
        svv += v * v;
        suv += u * v;
        suuu += u * u * u;
        svvv += v * v * v;
        suvv += u * v * v;
        svuu += v * u * u;
    }
    let (r1, r2) = (0.5 * (suuu + suvv), 0.5 * (svvv + svuu));
    let det = suu * svv - suv * suv;
    let uc = (r1 * svv - r2 * suv) / det;
    let vc = (r2 * suu - r1 * suv) / det;
    (uc * uc + vc * vc + (suu + svv) / n).sqrt()
}

#[test]
fn criterion_05_kinematic_circle() {
    let start = Instant::now();
    let (l, r, v, dt) = (4.0, 20.0, 5.0, 0.1);
    let geom = VehicleGeometry { length: l, width: 1.8 };
    let phi = (l / r).atan();
    let mut s = VehicleState { position: Vec2::ZERO, v, psi: 0.0, a: 0.0, phi };
    let steps = (2.0 * std::f64::consts::PI * r / v / dt).ceil() as usize;
    let mut pts = vec![s.position];
    for _ in 0..steps {
        s = step_kinematics(&s, 0.0, phi, &geom, dt);
        pts.push(s.position);
    }
    let fitted = fit_radius(&pts);
    let (fast, time) = within_budget(start, Duration::from_secs(1));
    let pass = ((fitted - r) / r).abs() <= 0.02 && fast;
    verdict(5, "kinematic circle", pass, format!("fitted radius {fitted:.4} m over {steps} steps, {time}"));
    assert!(pass);
}

fn intersection_scenes(graph: &RoadGraph, n: usize) -> Vec<Scene> {
    let layout = IntersectionLayout::default();
    (0..n)
        .map(|i| {
            let file = intersection_scene(&layout, &SceneParams::default(), &format!("scene{i:03}"), i as u64);
            instantiate_agents(graph, &file.scene_id, &file.tracklets().unwrap(), 0.0, &IngestConfig::default())
                .unwrap()
        })
        .collect()
}

fn moving_trajectories(logs: &[SimLog]) -> Vec<Trajectory2D> {
    logs.iter()
        .flat_map(|l| {
            l.agents
                .iter()
                .filter(|a| !a.meta.is_static)
                .map(move |a| Trajectory2D::new(l.dt, a.states.iter().map(|s| s.position).collect()))
        })
        .collect()
}

#[test]
fn criterion_06_diversity_direction() {
    let start = Instant::now();
    let gcfg = GraphConfig::default();
    let graph = build_graph(&intersection_map(&IntersectionLayout::default()), &gcfg).unwrap();
    let pool = reference_pool();
    let scenes = intersection_scenes(&graph, 50);
    let cfg = SimConfig { master_seed: 3, ..Default::default() };
    let sim = run_dataset(&scenes, &graph, &pool, &cfg, 4).unwrap();

    // lane keeping on straight routes with unperturbed profiles
    let base_cfg = SimConfig { profile_noise_std: 0.0, lane_changes: false, ..cfg.clone() };
    let base: Vec<SimLog> = scenes
        .iter()
        .map(|sc| {
            let choices = sc
                .agents
                .iter()
                .map(|a| AgentChoice {
                    agent_id: a.agent_id,
                    route: enumerate_routes(&graph, a.lane, 120.0, 16, &gcfg)
                        .into_iter()
                        .find(|r| r.maneuver == Maneuver::Straight),
                })
                .collect();
            let plan = VariantPlan { variant: 0, choices };
            let asg = assign_behaviors(sc, &plan, &pool, &base_cfg).unwrap();
            simulate_scene(sc, &graph, &asg, &base_cfg, 0).unwrap()
        })
        .collect();
    let s = diversity_report(&moving_trajectories(&sim.logs)).unwrap();
    let b = diversity_report(&moving_trajectories(&base)).unwrap();
    let (ry, rx) = (s.y_wasserstein.mean / b.y_wasserstein.mean, s.xdd_wasserstein.mean / b.xdd_wasserstein.mean);
    let (fast, time) = within_budget(start, Duration::from_secs(120));
    let pass = ry >= 2.0 && rx >= 2.0 && fast;
    verdict(
        6,
        "diversity direction",
        pass,
        format!(
            "{} simulated logs; y {:.3} vs {:.3} ({ry:.1}x), xdd {:.3} vs {:.3} ({rx:.1}x), {time}",
            sim.logs.len(),
            s.y_wasserstein.mean,
            b.y_wasserstein.mean,
            s.xdd_wasserstein.mean,
            b.xdd_wasserstein.mean
        ),
    );
    assert!(pass);
}

fn random_traj(rng: &mut ChaCha8Rng, n: usize) -> Trajectory2D {
    let mut p = Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
    let mut h: f64 = rng.random_range(-3.0..3.0);
    let pts = (0..n)
        .map(|_| {
            h += rng.random_range(-0.2..0.2);
            p += Vec2::from_heading(h) * rng.random_range(0.0..2.0);
            p
        })
        .collect();
    Trajectory2D::new(0.1, pts)
}

#[test]
fn criterion_07_metric_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut disp_err, mut w_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let n = rng.random_range(3..60);
        let horizon = rng.random_range(1..=n);
        let gt = random_traj(&mut rng, n);
        let samples: Vec<Trajectory2D> = (0..rng.random_range(1..8)).map(|_| random_traj(&mut rng, n)).collect();
        let set = PredictionSet { agent_id: 0, ground_truth: gt.clone(), samples: samples.clone() };
        let mut best_ade = f64::INFINITY;
        let mut best_fde = f64::INFINITY;
        for s in &samples {
            let mut sum = 0.0;
            for k in 0..horizon {
                let (dx, dy) = (s.points[k].x - gt.points[k].x, s.points[k].y - gt.points[k].y);
                sum += (dx * dx + dy * dy).sqrt();
            }
            let a = sum / horizon as f64;
            let (dx, dy) = (s.points[horizon - 1].x - gt.points[horizon - 1].x, s.points[horizon - 1].y - gt.points[horizon - 1].y);
            let f = (dx * dx + dy * dy).sqrt();
            disp_err = disp_err.max((ade(s, &gt, horizon).unwrap() - a).abs());
            disp_err = disp_err.max((fde(s, &gt, horizon).unwrap() - f).abs());
            best_ade = best_ade.min(a);
            best_fde = best_fde.min(f);
        }
        disp_err = disp_err.max((min_over_samples(&set, DisplacementMetric::Ade, horizon).unwrap() - best_ade).abs());
        disp_err = disp_err.max((min_over_samples(&set, DisplacementMetric::Fde, horizon).unwrap() - best_fde).abs());

        let norm = normalize_trajectory(&gt).unwrap();
        let ys: Vec<f64> = norm.points.iter().map(|p| p.y).collect();
        let mean_abs_y = ys.iter().map(|y| y.abs()).sum::<f64>() / ys.len() as f64;
        w_err = w_err.max((y_wasserstein(&norm) - mean_abs_y).abs());
        w_err = w_err.max((wasserstein_1d(&ys, &[0.0]) - mean_abs_y).abs());
        let x: Vec<f64> = norm.points.iter().map(|p| p.x).collect();
        let m = x.len();
        let mut xdd: Vec<f64> = (1..m - 1).map(|i| (x[i - 1] - 2.0 * x[i] + x[i + 1]) / (norm.dt * norm.dt)).collect();
        xdd.insert(0, xdd[0]);
        xdd.push(xdd[xdd.len() - 1]);
        let mean_abs_xdd = xdd.iter().map(|v| v.abs()).sum::<f64>() / m as f64;
        let got = x_second_differences(&norm).unwrap();
        w_err = w_err.max(got.iter().zip(&xdd).fold(0.0, |e, (a, b)| f64::max(e, (a - b).abs())));
        w_err = w_err.max((xdd_wasserstein(&norm).unwrap() - mean_abs_xdd).abs());
        w_err = w_err.max((wasserstein_1d(&got, &[0.0]) - mean_abs_xdd).abs());
    }
    let (fast, time) = within_budget(start, Duration::from_secs(5));
    let pass = disp_err <= 1e-12 && w_err <= 1e-9 && fast;
    verdict(7, "metric oracles", pass, format!("displacement err {disp_err:.2e}, Wasserstein err {w_err:.2e}, {time}"));
    assert!(pass);
}

fn as_traj(points: &[trafficforge_core::behavior::TimedPoint]) -> Trajectory2D {
    Trajectory2D::new(0.1, points.iter().map(|p| p.position).collect())
}

#[test]
fn criterion_08_realism_sanity() {
    let start = Instant::now();
    let params = ReferenceParams::default();
    let cfg = RealismConfig::default();
    let real: Vec<Trajectory2D> = reference_trajectories(&params, 1000, 21).iter().map(|t| as_traj(t)).collect();
    let same: Vec<Trajectory2D> = reference_trajectories(&params, 1000, 22).iter().map(|t| as_traj(t)).collect();
    let r = pca_kde_realism(&real, &same, &cfg, 5).unwrap();
    let diff = (r.loglik_real - r.loglik_sim).abs();

    // per-feature standard deviation of the real features
    let feats: Vec<Vec<f64>> = real.iter().filter_map(|t| trafficforge_core::metrics::realism_features(t, &cfg)).collect();
    let d = feats[0].len();
    let n = feats.len() as f64;
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let m = feats.iter().map(|f| f[j]).sum::<f64>() / n;
            (feats.iter().map(|f| (f[j] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect();
    // offset grows linearly between feature times so each feature moves by exactly 10 sd
    let offset_at = |t: f64| -> Vec2 {
        let x = t * cfg.rate_hz;
        let k = x.floor() as usize;
        let node = |k: usize| if k == 0 { Vec2::ZERO } else { Vec2::new(sd[2 * (k - 1)], sd[2 * (k - 1) + 1]) * 10.0 };
        if k >= cfg.n_points {
            return node(cfg.n_points);
        }
        node(k).lerp(node(k + 1), x - k as f64)
    };
    let shifted: Vec<Trajectory2D> = same
        .iter()
        .map(|t| {
            let pts = t.points.iter().enumerate().map(|(i, &p)| p + offset_at(i as f64 * t.dt)).collect();
            Trajectory2D::new(t.dt, pts)
        })
        .collect();
    let s = pca_kde_realism(&real, &shifted, &cfg, 5).unwrap();
    let drop = s.loglik_real - s.loglik_sim;
    let (fast, time) = within_budget(start, Duration::from_secs(30));
    let pass = diff <= 0.1 && drop >= 5.0 && fast;
    verdict(
        8,
        "realism sanity",
        pass,
        format!(
            "same generator |dL| = {diff:.4} ({:.3} vs {:.3}), shifted drop {drop:.2} nats, {time}",
            r.loglik_real, r.loglik_sim
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_rasterizer_invariants() {
    let start = Instant::now();
    let graph = build_graph(&intersection_map(&IntersectionLayout::default()), &GraphConfig::default()).unwrap();
    let pool = reference_pool();
    let scenes = intersection_scenes(&graph, 10);
    let logs = run_dataset(&scenes, &graph, &pool, &SimConfig { master_seed: 9, ..Default::default() }, 4)
        .unwrap()
        .logs;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut bad_onehot, mut bad_mask, mut bad_trip) = (0, 0, 0);
    for i in 0..1000 {
        let log = &logs[i % logs.len()];
        let h = rng.random_range(8..48);
        let w = rng.random_range(8..48);
        let res = rng.random_range(0.5..4.0);
        let center = Vec2::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
        let spec = GridSpec::centered(h, w, res, center);
        let context = render_context(&graph, &spec);
        let planes: Vec<Vec<f32>> = (0..3).map(|k| context.plane(k)).collect();
        for c in 0..spec.cells() {
            let hot: Vec<f32> = planes.iter().map(|p| p[c]).collect();
            if hot.iter().any(|&v| v != 0.0 && v != 1.0) || hot.iter().sum::<f32>() != 1.0 {
                bad_onehot += 1;
            }
        }
        let t = rng.random_range(0..=log.steps);
        let maps = rasterize_states(log, t, &spec);
        let active = log.agents.iter().filter(|a| a.states.get(t).is_some_and(|s| spec.cell_of(s.position).is_some())).count();
        if maps.occupied() + maps.collisions != active {
            bad_mask += 1;
        }
        let sample = GridSample {
            scene_id: log.scene_id.clone(),
            variant: log.variant,
            start_step: t,
            t_obs: 0,
            context: context.clone(),
            frames: vec![maps],
        };
        if GridSample::from_bytes(&sample.to_bytes()).ok().as_ref() != Some(&sample) {
            bad_trip += 1;
        }
    }
    let (fast, time) = within_budget(start, Duration::from_secs(30));
    let pass = bad_onehot == 0 && bad_mask == 0 && bad_trip == 0 && fast;
    verdict(
        9,
        "rasterizer invariants",
        pass,
        format!("1000 rasterizations: {bad_onehot} bad cells, {bad_mask} mask mismatches, {bad_trip} round-trip failures, {time}"),
    );
    assert!(pass);
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_trafficforge")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline(inputs: &Path, out: &Path, jobs: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    let p = |name: &str| out.join(name).to_str().unwrap().to_string();
    let i = |name: &str| inputs.join(name).to_str().unwrap().to_string();
    run_cli(&["build-graph", "--map", &i("map.json"), "--out", &p("graph.json")]);
    run_cli(&["profile-pool", "--trajectories", &i("real.json"), "--out", &p("pool.json")]);
    run_cli(&[
        "simulate", "--map", &p("graph.json"), "--tracklets", &i("scenes.json"), "--pool", &p("pool.json"),
        "--out", &p("logs"), "--seed", "42", "--jobs", jobs, "--set", "sim.max_variants=3",
    ]);
    run_cli(&[
        "render", "--logs", &p("logs"), "--map", &p("graph.json"), "--spec", r#"{"H":64,"W":64,"res":1.0}"#,
        "--t-obs", "10", "--seq-len", "30", "--stride", "20", "--out", &p("bev"), "--jobs", jobs,
    ]);
    run_cli(&[
        "metrics", "--logs", &p("logs"), "--map", &p("graph.json"), "--real", &i("real.json"), "--seed", "42",
        "--out", &p("metrics.json"),
    ]);
    tree(out)
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let inputs = tmp.path().join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    let layout = IntersectionLayout::default();
    std::fs::write(inputs.join("map.json"), serde_json::to_string(&intersection_map(&layout)).unwrap()).unwrap();
    let real = reference_trajectories(&ReferenceParams::default(), 300, 11);
    std::fs::write(inputs.join("real.json"), serde_json::to_string(&TrajectoryFile::from_points(&real)).unwrap())
        .unwrap();
    let scenes: Vec<_> = (0..20)
        .map(|i| intersection_scene(&layout, &SceneParams::default(), &format!("scene{i:02}"), 100 + i))
        .collect();
    std::fs::write(inputs.join("scenes.json"), serde_json::to_string(&scenes).unwrap()).unwrap();

    let a = pipeline(&inputs, &tmp.path().join("a"), "1");
    let b = pipeline(&inputs, &tmp.path().join("b"), "1");
    let c = pipeline(&inputs, &tmp.path().join("c"), "8");
    let logs = a.keys().filter(|k| k.starts_with("logs") && k.extension().is_some_and(|e| e == "csv")).count();
    let samples = a.keys().filter(|k| k.extension().is_some_and(|e| e == "bevg")).count();
    let (fast, time) = within_budget(start, Duration::from_secs(120));
    let pass = a == b && a == c && logs == 60 && samples > 0 && fast;
    verdict(
        10,
        "determinism",
        pass,
        format!(
            "{} files ({logs} logs, {samples} grid samples); rerun identical: {}, jobs 8 vs 1 identical: {}, {time}",
            a.len(),
            a == b,
            a == c
        ),
    );
    assert!(pass);
}
