use proptest::prelude::*;

use trafficforge_core::behavior::ProfilePool;
use trafficforge_core::controller::{step_kinematics, VehicleGeometry, VehicleState};
use trafficforge_core::dynamics::{desired_gap, idm_accel, IdmParams, LeaderInfo};
use trafficforge_core::geom::wrap_angle;
use trafficforge_core::metrics::{
    ade, fde, kde2_log_density, min_over_samples, normalize_trajectory, wasserstein_1d, y_wasserstein,
    DisplacementMetric, PredictionSet, Trajectory2D,
};
use trafficforge_core::road_graph::{build_graph, CenterlineSpec, GraphConfig, MapSpec};
use trafficforge_core::seed::agent_seed;
use trafficforge_core::Vec2;

fn idm_params() -> impl Strategy<Value = IdmParams> {
    (5.0..40.0, 0.5..2.5, 0.5..4.0, 1.0..2.0, 1.5..2.5)
        .prop_map(|(v0, t_gap, s0, a, b)| IdmParams { v0, delta: 4.0, t_gap, s0, a, b })
}

fn points(n: usize) -> impl Strategy<Value = Vec<Vec2>> {
    prop::collection::vec((-100.0..100.0, -100.0..100.0).prop_map(|(x, y)| Vec2::new(x, y)), n)
}

fn traj(n: std::ops::Range<usize>) -> impl Strategy<Value = Trajectory2D> {
    n.prop_flat_map(points).prop_map(|p| Trajectory2D::new(0.1, p))
}

proptest! {
    #[test]
    fn idm_matches_closed_form(p in idm_params(), v in 0.0..30.0f64, dv in -10.0..10.0f64, s in 0.5..200.0f64) {
        let s_star = p.s0 + (v * p.t_gap + v * dv / (2.0 * (p.a * p.b).sqrt())).max(0.0);
        let raw = p.a * (1.0 - (v / p.v0).powi(4) - (s_star / s).powi(2));
        let got = idm_accel(&p, Some(&LeaderInfo { leader_id: 0, gap_s: s, dv }), v, 8.0);
        prop_assert!((got - raw.clamp(-8.0, p.a)).abs() < 1e-9);
        prop_assert!((desired_gap(&p, v, dv) - s_star).abs() < 1e-12);
    }

    #[test]
    fn idm_is_bounded(p in idm_params(), v in 0.0..60.0f64, dv in -30.0..30.0f64, s in -5.0..300.0f64) {
        let a = idm_accel(&p, Some(&LeaderInfo { leader_id: 0, gap_s: s, dv }), v, 8.0);
        prop_assert!((-8.0..=p.a).contains(&a));
        let free = idm_accel(&p, None, v, 8.0);
        prop_assert!(free >= a - 1e-12);
    }

    #[test]
    fn idm_monotone_in_gap(p in idm_params(), v in 0.0..30.0f64, dv in -5.0..5.0f64, s in 1.0..100.0f64) {
        let near = idm_accel(&p, Some(&LeaderInfo { leader_id: 0, gap_s: s, dv }), v, 8.0);
        let far = idm_accel(&p, Some(&LeaderInfo { leader_id: 0, gap_s: s + 1.0, dv }), v, 8.0);
        prop_assert!(far >= near);
    }

    #[test]
    fn straight_motion_conserves_distance(v in 0.0..30.0f64, psi in -3.0..3.0f64, n in 1usize..200) {
        let g = VehicleGeometry::default();
        let mut s = VehicleState { position: Vec2::ZERO, v, psi, a: 0.0, phi: 0.0 };
        for _ in 0..n {
            s = step_kinematics(&s, 0.0, 0.0, &g, 0.1);
        }
        prop_assert!((s.position.norm() - n as f64 * v * 0.1).abs() < 1e-9 * (1.0 + n as f64 * v));
    }

    #[test]
    fn wrap_angle_range(a in -100.0..100.0f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        prop_assert!(((a - w) / (2.0 * std::f64::consts::PI)).fract().abs() < 1e-9
            || (1.0 - ((a - w) / (2.0 * std::f64::consts::PI)).fract().abs()) < 1e-9);
    }

    #[test]
    fn normalization_is_idempotent(t in traj(2..40)) {
        let Ok(n1) = normalize_trajectory(&t) else { return Ok(()); };
        let n2 = normalize_trajectory(&n1).unwrap();
        prop_assert_eq!(n1.points[0], Vec2::ZERO);
        prop_assert_eq!(n1.points.last().unwrap().y, 0.0);
        prop_assert!(n1.points.last().unwrap().x > 0.0);
        for (a, b) in n1.points.iter().zip(&n2.points) {
            prop_assert!(a.distance(*b) < 1e-9);
        }
    }

    #[test]
    fn y_wasserstein_invariant_to_rigid_motion(t in traj(3..30), angle in -3.0..3.0f64, dx in -50.0..50.0f64) {
        let moved = Trajectory2D::new(t.dt, t.points.iter().map(|p| p.rotate(angle) + Vec2::new(dx, -dx)).collect());
        let (Ok(a), Ok(b)) = (normalize_trajectory(&t), normalize_trajectory(&moved)) else { return Ok(()); };
        prop_assert!((y_wasserstein(&a) - y_wasserstein(&b)).abs() < 1e-7);
    }

    #[test]
    fn displacement_invariant_to_rigid_motion(
        (gt, pred) in (2usize..30).prop_flat_map(|n| (points(n), points(n))),
        angle in -3.0..3.0f64,
        shift in (-50.0..50.0f64, -50.0..50.0f64),
    ) {
        let m = |p: &Vec<Vec2>| Trajectory2D::new(0.1, p.iter().map(|q| q.rotate(angle) + Vec2::new(shift.0, shift.1)).collect());
        let (g, p) = (Trajectory2D::new(0.1, gt.clone()), Trajectory2D::new(0.1, pred.clone()));
        let h = gt.len();
        prop_assert!((ade(&p, &g, h).unwrap() - ade(&m(&pred), &m(&gt), h).unwrap()).abs() < 1e-9);
        prop_assert!((fde(&p, &g, h).unwrap() - fde(&m(&pred), &m(&gt), h).unwrap()).abs() < 1e-9);
        prop_assert!(ade(&g, &g, h).unwrap() == 0.0);
    }

    #[test]
    fn min_over_samples_is_a_lower_bound(
        (gt, samples) in (2usize..20).prop_flat_map(|n| (points(n), prop::collection::vec(points(n), 1..6))),
    ) {
        let h = gt.len();
        let set = PredictionSet {
            agent_id: 0,
            ground_truth: Trajectory2D::new(0.1, gt),
            samples: samples.into_iter().map(|s| Trajectory2D::new(0.1, s)).collect(),
        };
        let best = min_over_samples(&set, DisplacementMetric::Ade, h).unwrap();
        for s in &set.samples {
            prop_assert!(best <= ade(s, &set.ground_truth, h).unwrap());
        }
        prop_assert!(set.samples.iter().any(|s| ade(s, &set.ground_truth, h).unwrap() == best));
    }

    #[test]
    fn wasserstein_properties(a in prop::collection::vec(-10.0..10.0f64, 1..30), c in -5.0..5.0f64) {
        let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
        prop_assert!((wasserstein_1d(&a, &shifted) - c.abs()).abs() < 1e-9);
        prop_assert!(wasserstein_1d(&a, &a).abs() < 1e-12);
        let b: Vec<f64> = a.iter().rev().map(|x| x * 0.5).collect();
        prop_assert!((wasserstein_1d(&a, &b) - wasserstein_1d(&b, &a)).abs() < 1e-9);
    }

    #[test]
    fn kde_density_integrates_to_one(pts in points(5)) {
        let pts: Vec<Vec2> = pts.into_iter().map(|p| p * 0.01).collect();
        // midpoint rule over a box that holds all kernel mass
        let (lo, hi, n) = (-9.0, 9.0, 300);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = Vec2::new(lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h);
                total += kde2_log_density(&pts, x, 1e-2).exp() * h * h;
            }
        }
        prop_assert!((total - 1.0).abs() < 1e-3, "{}", total);
    }

    #[test]
    fn seeds_are_stable_and_separate(master in any::<u64>(), agent in 0i64..1000, variant in 0usize..8) {
        let s = agent_seed(master, "scene", variant, agent, "idm");
        prop_assert_eq!(s, agent_seed(master, "scene", variant, agent, "idm"));
        prop_assert_ne!(s, agent_seed(master, "scene", variant, agent, "profile"));
        prop_assert_ne!(s, agent_seed(master, "scene", variant + 1, agent, "idm"));
    }

    #[test]
    fn straight_lane_projection(x in 1.0..99.0f64, y in -1.5..1.5f64) {
        let spec = MapSpec {
            centerlines: vec![CenterlineSpec {
                id: 0,
                points: vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)],
                lanes: 1,
                oneway: true,
                lane_width: None,
            }],
        };
        let g = build_graph(&spec, &GraphConfig::default()).unwrap();
        let c = g.project_to_lane(Vec2::new(x, y), None, 5.0).unwrap();
        prop_assert!((c.arc_s - x).abs() < 1e-9);
        prop_assert!((c.lateral_offset - y).abs() < 1e-9);
        prop_assert!(c.lane_heading.abs() < 1e-12);
    }
}

#[test]
fn profile_pool_rejects_bad_documents() {
    let ok = r#"{"dt":0.1,"profiles":[{"label":"left","feature":12.5,"samples":[5.0,5.5]}]}"#;
    let pool: ProfilePool = serde_json::from_str(ok).unwrap();
    let back: ProfilePool = serde_json::from_str(&serde_json::to_string(&pool).unwrap()).unwrap();
    assert_eq!(pool, back);
    for bad in [
        r#"{"dt":0.0,"profiles":[]}"#,
        r#"{"dt":0.1,"profiles":[{"label":"left","feature":1.0,"samples":[-1.0]}]}"#,
        r#"{"dt":0.1,"profiles":[{"label":"uturn","feature":1.0,"samples":[1.0]}]}"#,
    ] {
        assert!(serde_json::from_str::<ProfilePool>(bad).is_err(), "{bad}");
    }
}
