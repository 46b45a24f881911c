//! Prediction accuracy, road validity, trajectory diversity and the PCA + KDE realism
//! check.
//!
//! Prediction trajectories hold future positions only: `points[k - 1]` is step `k`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev_render::ContextMap;
use crate::geom::Vec2;
use crate::road_graph::RoadGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("horizon of {horizon} steps exceeds trajectory length {len}")]
    Horizon { horizon: usize, len: usize },
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("degenerate trajectory: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory2D {
    pub dt: f64,
    pub points: Vec<Vec2>,
}

impl Trajectory2D {
    pub fn new(dt: f64, points: Vec<Vec2>) -> Self {
        Self { dt, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Linear interpolation at time `t` measured from the first point; `None` outside.
    pub fn at_time(&self, t: f64) -> Option<Vec2> {
        let x = t / self.dt;
        let last = (self.points.len() - 1) as f64;
        if !(x >= -1e-9 && x <= last + 1e-9) {
            return None;
        }
        let x = x.clamp(0.0, last);
        let i = (x.floor() as usize).min(self.points.len().saturating_sub(2));
        let u = x - i as f64;
        Some(self.points[i].lerp(self.points[(i + 1).min(self.points.len() - 1)], u))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub agent_id: i64,
    pub ground_truth: Trajectory2D,
    pub samples: Vec<Trajectory2D>,
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub agent_id: i64,
    pub gt: Vec<Vec2>,
    pub samples: Vec<Vec<Vec2>>,
    pub dt: f64,
}

impl PredictionRecord {
    pub fn into_set(self) -> Result<PredictionSet, MetricsError> {
        if !(self.dt > 0.0) {
            return Err(MetricsError::Invalid(format!("agent {}: dt must be positive", self.agent_id)));
        }
        if self.samples.is_empty() {
            return Err(MetricsError::InsufficientSamples { need: 1, got: 0 });
        }
        if let Some(s) = self.samples.iter().find(|s| s.len() != self.gt.len()) {
            return Err(MetricsError::Invalid(format!(
                "agent {}: sample length {} differs from ground truth length {}",
                self.agent_id,
                s.len(),
                self.gt.len()
            )));
        }
        Ok(PredictionSet {
            agent_id: self.agent_id,
            ground_truth: Trajectory2D::new(self.dt, self.gt),
            samples: self.samples.into_iter().map(|s| Trajectory2D::new(self.dt, s)).collect(),
        })
    }
}

fn check_horizon(t: &Trajectory2D, horizon: usize) -> Result<(), MetricsError> {
    if horizon == 0 || horizon > t.len() {
        return Err(MetricsError::Horizon { horizon, len: t.len() });
    }
    Ok(())
}

/// Mean Euclidean error over steps `1..=horizon_steps`.
pub fn ade(pred: &Trajectory2D, gt: &Trajectory2D, horizon_steps: usize) -> Result<f64, MetricsError> {
    check_horizon(pred, horizon_steps)?;
    check_horizon(gt, horizon_steps)?;
    let sum: f64 = pred.points[..horizon_steps]
        .iter()
        .zip(&gt.points[..horizon_steps])
        .map(|(p, g)| p.distance(*g))
        .sum();
    Ok(sum / horizon_steps as f64)
}

/// Euclidean error at step `horizon_steps`.
pub fn fde(pred: &Trajectory2D, gt: &Trajectory2D, horizon_steps: usize) -> Result<f64, MetricsError> {
    check_horizon(pred, horizon_steps)?;
    check_horizon(gt, horizon_steps)?;
    Ok(pred.points[horizon_steps - 1].distance(gt.points[horizon_steps - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisplacementMetric {
    Ade,
    Fde,
}

/// Best-of-N displacement error.
pub fn min_over_samples(
    pset: &PredictionSet,
    metric: DisplacementMetric,
    horizon_steps: usize,
) -> Result<f64, MetricsError> {
    if pset.samples.is_empty() {
        return Err(MetricsError::InsufficientSamples { need: 1, got: 0 });
    }
    let f = match metric {
        DisplacementMetric::Ade => ade,
        DisplacementMetric::Fde => fde,
    };
    pset.samples
        .iter()
        .map(|s| f(s, &pset.ground_truth, horizon_steps))
        .try_fold(f64::INFINITY, |m, v| v.map(|v| m.min(v)))
}

/// Covariance regularizer added to every kernel, m².
pub const NLL_REGULARIZER: f64 = 1e-4;

/// Log-density of a 2-D Gaussian KDE over `pts` at `x`: Scott factor `n^(-1/6)` on the
/// unbiased sample covariance, plus `reg * I`.
pub fn kde2_log_density(pts: &[Vec2], x: Vec2, reg: f64) -> f64 {
    let n = pts.len() as f64;
    let mean = pts.iter().fold(Vec2::ZERO, |a, &p| a + p) * (1.0 / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let d = *p - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let denom = (n - 1.0).max(1.0);
    let f2 = n.powf(-1.0 / 3.0);
    let (a, b, c) = (sxx / denom * f2 + reg, sxy / denom * f2, syy / denom * f2 + reg);
    let det = a * c - b * b;
    let log_norm = -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln();
    let exps: Vec<f64> = pts
        .iter()
        .map(|p| {
            let d = x - *p;
            let q = (c * d.x * d.x - 2.0 * b * d.x * d.y + a * d.y * d.y) / det;
            log_norm - 0.5 * q
        })
        .collect();
    log_sum_exp(&exps) - n.ln()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Largest log-density any kernel can reach: the regularizer alone at its mean.
pub fn nll_log_density_ceiling(reg: f64) -> f64 {
    -(2.0 * std::f64::consts::PI).ln() - reg.ln()
}

/// Mean over steps `1..=horizon_steps` of the negative KDE log-density of the ground truth.
pub fn nll(pset: &PredictionSet, horizon_steps: usize) -> Result<f64, MetricsError> {
    if pset.samples.len() < 2 {
        return Err(MetricsError::InsufficientSamples {
            need: 2,
            got: pset.samples.len(),
        });
    }
    check_horizon(&pset.ground_truth, horizon_steps)?;
    for s in &pset.samples {
        check_horizon(s, horizon_steps)?;
    }
    let ceiling = nll_log_density_ceiling(NLL_REGULARIZER);
    let total: f64 = (0..horizon_steps)
        .map(|k| {
            let pts: Vec<Vec2> = pset.samples.iter().map(|s| s.points[k]).collect();
            -kde2_log_density(&pts, pset.ground_truth.points[k], NLL_REGULARIZER).min(ceiling)
        })
        .sum();
    Ok(total / horizon_steps as f64)
}

/// Where predicted points must lie to count as on-road.
pub enum ValidityContext<'a> {
    Raster(&'a ContextMap),
    Graph { graph: &'a RoadGraph, margin: f64 },
}

/// Fraction of trajectories whose every point is on the road.
pub fn validity_ratio(preds: &[Trajectory2D], context: &ValidityContext) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let on_road = |p: Vec2| match context {
        ValidityContext::Raster(m) => m.is_road(p),
        ValidityContext::Graph { graph, margin } => graph.on_road(p, *margin),
    };
    let valid = preds.iter().filter(|t| t.points.iter().all(|&p| on_road(p))).count();
    valid as f64 / preds.len() as f64
}

/// Moves the start to the origin and rotates the end onto the positive x axis.
pub fn normalize_trajectory(traj: &Trajectory2D) -> Result<Trajectory2D, MetricsError> {
    let (Some(&start), Some(&end)) = (traj.points.first(), traj.points.last()) else {
        return Err(MetricsError::Degenerate("empty trajectory".into()));
    };
    let chord = end - start;
    if chord.norm() == 0.0 || !chord.is_finite() {
        return Err(MetricsError::Degenerate("zero net displacement".into()));
    }
    let angle = -chord.y.atan2(chord.x);
    let mut points: Vec<Vec2> = traj.points.iter().map(|&p| (p - start).rotate(angle)).collect();
    let n = points.len();
    points[0] = Vec2::ZERO;
    points[n - 1].y = 0.0;
    Ok(Trajectory2D::new(traj.dt, points))
}

/// W1 distance between two empirical distributions with equal weights per sample.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    // integrate |F_a - F_b| over the merged support
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

/// W1 of the normalized y values against the point mass at 0: `mean |y|`.
pub fn y_wasserstein(traj: &Trajectory2D) -> f64 {
    traj.points.iter().map(|p| p.y.abs()).sum::<f64>() / traj.points.len() as f64
}

/// Second differences of x at the native step; each end reuses its neighbour's value.
pub fn x_second_differences(traj: &Trajectory2D) -> Result<Vec<f64>, MetricsError> {
    let n = traj.points.len();
    if n < 3 {
        return Err(MetricsError::Degenerate(format!("{n} points, need 3 for acceleration")));
    }
    let dt2 = traj.dt * traj.dt;
    let x: Vec<f64> = traj.points.iter().map(|p| p.x).collect();
    let mut out = Vec::with_capacity(n);
    out.push(0.0);
    for i in 1..n - 1 {
        out.push((x[i + 1] - 2.0 * x[i] + x[i - 1]) / dt2);
    }
    out[0] = out[1];
    out.push(out[n - 2]);
    Ok(out)
}

/// W1 of the normalized longitudinal acceleration against 0: `mean |xdd|`.
pub fn xdd_wasserstein(traj: &Trajectory2D) -> Result<f64, MetricsError> {
    let a = x_second_differences(traj)?;
    Ok(a.iter().map(|v| v.abs()).sum::<f64>() / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Self {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub y_wasserstein: Summary,
    pub xdd_wasserstein: Summary,
    pub per_trajectory_y: Vec<f64>,
    pub per_trajectory_xdd: Vec<f64>,
    /// Indices of trajectories left out as degenerate.
    pub skipped: Vec<usize>,
}

/// Per-trajectory diversity metrics on normalized trajectories, then mean and median.
pub fn diversity_report(trajs: &[Trajectory2D]) -> Result<DiversityReport, MetricsError> {
    let mut ys = Vec::new();
    let mut xdds = Vec::new();
    let mut skipped = Vec::new();
    for (i, t) in trajs.iter().enumerate() {
        match normalize_trajectory(t).and_then(|n| Ok((y_wasserstein(&n), xdd_wasserstein(&n)?))) {
            Ok((y, a)) => {
                ys.push(y);
                xdds.push(a);
            }
            Err(_) => skipped.push(i),
        }
    }
    let (Some(y), Some(x)) = (Summary::of(&ys), Summary::of(&xdds)) else {
        return Err(MetricsError::InsufficientData("no non-degenerate trajectory".into()));
    };
    Ok(DiversityReport {
        y_wasserstein: y,
        xdd_wasserstein: x,
        per_trajectory_y: ys,
        per_trajectory_xdd: xdds,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealismConfig {
    pub n_components: usize,
    pub n_eval: usize,
    /// Points per resampled trajectory.
    pub n_points: usize,
    /// Resampling rate, Hz.
    pub rate_hz: f64,
    /// Upper bound on the pooled subset used to fit the PCA basis.
    pub pca_subset: usize,
}

impl Default for RealismConfig {
    fn default() -> Self {
        Self {
            n_components: 2,
            n_eval: 1000,
            n_points: 35,
            rate_hz: 5.0,
            pca_subset: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealismResult {
    pub loglik_real: f64,
    pub loglik_sim: f64,
    pub n_real: usize,
    pub n_sim: usize,
    pub explained_variance_ratio: Vec<f64>,
}

/// Positions relative to the start at `k / rate` for `k = 1..=n_points`, flattened as
/// `[x1, y1, x2, y2, ...]`; `None` when the trajectory is too short.
pub fn realism_features(traj: &Trajectory2D, cfg: &RealismConfig) -> Option<Vec<f64>> {
    let start = *traj.points.first()?;
    let mut out = Vec::with_capacity(2 * cfg.n_points);
    for k in 1..=cfg.n_points {
        let p = traj.at_time(k as f64 / cfg.rate_hz)? - start;
        out.push(p.x);
        out.push(p.y);
    }
    Some(out)
}

/// Projects real and simulated trajectories onto a PCA basis fitted on a random pooled
/// subset, fits a Gaussian KDE (Scott bandwidth) on the projected real trajectories and
/// returns the mean log-likelihood of `n_eval` random real and simulated points.
pub fn pca_kde_realism(
    real: &[Trajectory2D],
    sim: &[Trajectory2D],
    cfg: &RealismConfig,
    rng_seed: u64,
) -> Result<RealismResult, MetricsError> {
    let feats = |ts: &[Trajectory2D]| -> Vec<Vec<f64>> { ts.iter().filter_map(|t| realism_features(t, cfg)).collect() };
    let real_f = feats(real);
    let sim_f = feats(sim);
    let k = cfg.n_components;
    let dim = 2 * cfg.n_points;
    if k == 0 || k > dim {
        return Err(MetricsError::Invalid(format!("n_components must be in 1..={dim}")));
    }
    if real_f.len() <= k {
        return Err(MetricsError::InsufficientData(format!(
            "{} real trajectories cover {:.1} s; need more than n_components = {k}",
            real_f.len(),
            cfg.n_points as f64 / cfg.rate_hz
        )));
    }
    if sim_f.is_empty() {
        return Err(MetricsError::InsufficientData(format!(
            "no simulated trajectory covers {:.1} s",
            cfg.n_points as f64 / cfg.rate_hz
        )));
    }
    if cfg.n_eval == 0 {
        return Err(MetricsError::Invalid("n_eval must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    // PCA basis on a random pooled subset
    let pooled: Vec<&Vec<f64>> = real_f.iter().chain(&sim_f).collect();
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
    idx.truncate(cfg.pca_subset.max(k + 1));
    idx.sort_unstable();
    let m = idx.len();
    let mut mean = DVector::<f64>::zeros(dim);
    for &i in &idx {
        mean += DVector::from_column_slice(pooled[i]);
    }
    mean /= m as f64;
    let mut centered = DMatrix::<f64>::zeros(m, dim);
    for (r, &i) in idx.iter().enumerate() {
        for c in 0..dim {
            centered[(r, c)] = pooled[i][c] - mean[c];
        }
    }
    let cov = centered.transpose() * &centered / ((m - 1) as f64);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total_var: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut basis = DMatrix::<f64>::zeros(dim, k);
    let mut explained = Vec::with_capacity(k);
    for (j, &o) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(o).into_owned();
        // fix the sign so the largest-magnitude entry is positive
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v = -v;
        }
        basis.set_column(j, &v);
        explained.push(if total_var > 0.0 { eig.eigenvalues[o].max(0.0) / total_var } else { 0.0 });
    }
    let project = |f: &Vec<f64>| -> DVector<f64> { basis.transpose() * (DVector::from_column_slice(f) - &mean) };
    let real_p: Vec<DVector<f64>> = real_f.iter().map(project).collect();
    let sim_p: Vec<DVector<f64>> = sim_f.iter().map(project).collect();

    let kde = Kde::fit(&real_p)?;
    let mut mean_ll = |set: &[DVector<f64>]| -> f64 {
        (0..cfg.n_eval)
            .map(|_| kde.log_density(&set[rng.random_range(0..set.len())]))
            .sum::<f64>()
            / cfg.n_eval as f64
    };
    let loglik_real = mean_ll(&real_p);
    let loglik_sim = mean_ll(&sim_p);
    Ok(RealismResult {
        loglik_real,
        loglik_sim,
        n_real: real_f.len(),
        n_sim: sim_f.len(),
        explained_variance_ratio: explained,
    })
}

/// Gaussian KDE with Scott bandwidth over d-dimensional points.
pub struct Kde {
    points: Vec<DVector<f64>>,
    chol_inv: DMatrix<f64>,
    log_norm: f64,
}

impl Kde {
    pub fn fit(points: &[DVector<f64>]) -> Result<Self, MetricsError> {
        let n = points.len();
        if n < 2 {
            return Err(MetricsError::InsufficientData("KDE needs at least 2 points".into()));
        }
        let d = points[0].len();
        let mean = points.iter().fold(DVector::zeros(d), |a, p| a + p) / n as f64;
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for p in points {
            let c = p - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
        let mut kcov = cov * (factor * factor);
        let scale = (kcov.trace() / d as f64).max(1e-300);
        let mut chol = kcov.clone().cholesky();
        let mut jitter = 1e-12 * scale;
        while chol.is_none() {
            if jitter > scale {
                return Err(MetricsError::Degenerate("KDE covariance is singular".into()));
            }
            for i in 0..d {
                kcov[(i, i)] += jitter;
            }
            chol = kcov.clone().cholesky();
            jitter *= 10.0;
        }
        let l = chol.unwrap().l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let chol_inv = l
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| MetricsError::Degenerate("KDE covariance is singular".into()))?;
        Ok(Self {
            points: points.to_vec(),
            chol_inv,
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det) - (n as f64).ln(),
        })
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let exps: Vec<f64> = self
            .points
            .iter()
            .map(|p| {
                let z = &self.chol_inv * (x - p);
                self.log_norm - 0.5 * z.norm_squared()
            })
            .collect();
        log_sum_exp(&exps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon_s: f64,
    pub steps: usize,
    pub count: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub nll: Option<f64>,
}

/// Averages best-of-N ADE/FDE and NLL over prediction sets at each horizon in seconds;
/// sets shorter than a horizon are left out of that horizon.
pub fn prediction_report(sets: &[PredictionSet], horizons_s: &[f64]) -> Vec<HorizonMetrics> {
    horizons_s
        .iter()
        .map(|&h| {
            let (mut ades, mut fdes, mut nlls) = (Vec::new(), Vec::new(), Vec::new());
            for s in sets {
                let steps = (h / s.ground_truth.dt).round() as usize;
                let (Ok(a), Ok(f)) = (
                    min_over_samples(s, DisplacementMetric::Ade, steps),
                    min_over_samples(s, DisplacementMetric::Fde, steps),
                ) else {
                    continue;
                };
                ades.push(a);
                fdes.push(f);
                if let Ok(v) = nll(s, steps) {
                    nlls.push(v);
                }
            }
            let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
            let steps = sets.first().map_or(0, |s| (h / s.ground_truth.dt).round() as usize);
            HorizonMetrics {
                horizon_s: h,
                steps,
                count: ades.len(),
                min_ade: mean(&ades),
                min_fde: mean(&fdes),
                nll: (!nlls.is_empty()).then(|| mean(&nlls)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(pts: &[(f64, f64)]) -> Trajectory2D {
        Trajectory2D::new(0.1, pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect())
    }

    #[test]
    fn displacement_examples() {
        let gt = traj(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        assert_eq!(ade(&gt, &gt, 3).unwrap(), 0.0);
        let shifted = traj(&[(2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]);
        assert_eq!(ade(&shifted, &gt, 3).unwrap(), 1.0);
        let end = traj(&[(1.0, 0.0), (2.0, 0.0), (3.0, 2.0)]);
        assert_eq!(fde(&end, &gt, 3).unwrap(), 2.0);
        assert!(matches!(ade(&gt, &gt, 4), Err(MetricsError::Horizon { .. })));
    }

    #[test]
    fn y_metric_examples() {
        assert!((y_wasserstein(&traj(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)])) - 1.0 / 3.0).abs() < 1e-15);
        assert!((wasserstein_1d(&[0.0, 1.0, 0.0], &[0.0]) - 1.0 / 3.0).abs() < 1e-15);
        assert!((wasserstein_1d(&[0.0, 1.0], &[0.5, 2.5]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_acceleration() {
        let c = 3.0;
        let t = Trajectory2D::new(0.1, (0..20).map(|i| Vec2::new(0.5 * c * (i as f64 * 0.1).powi(2) + i as f64, 0.0)).collect());
        assert!((xdd_wasserstein(&t).unwrap() - c).abs() < 1e-9);
    }

    #[test]
    fn normalize_left_turn() {
        let t = traj(&[(0.0, 0.0), (5.0, 1.0), (8.0, 4.0), (9.0, 9.0)]);
        let n = normalize_trajectory(&t).unwrap();
        assert_eq!(n.points[0], Vec2::ZERO);
        assert!((n.points[3].x - (81.0f64 + 81.0).sqrt()).abs() < 1e-12);
        assert_eq!(n.points[3].y, 0.0);
        assert_eq!(normalize_trajectory(&n).unwrap(), n);
        assert!(normalize_trajectory(&traj(&[(1.0, 1.0), (2.0, 2.0), (1.0, 1.0)])).is_err());
    }

    #[test]
    fn nll_requires_two_samples() {
        let gt = traj(&[(0.0, 0.0)]);
        let p = PredictionSet { agent_id: 0, ground_truth: gt.clone(), samples: vec![gt] };
        assert!(matches!(nll(&p, 1), Err(MetricsError::InsufficientSamples { need: 2, got: 1 })));
    }

    #[test]
    fn median_even_count() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
    }
}
