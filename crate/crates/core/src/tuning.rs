//! Hyperparameter grid searches and trajectory-quality metrics.
//!
//! Simulation tuning scans (delta, lambda, nu) by nonparametric-simulation
//! error on held-out data; trajectory tuning scans (lambda, mu, sigma) by a
//! weighted bundle of quality metrics normalized by their empirical maxima
//! over the scanned grid. Both searches are exhaustive and deterministic;
//! infeasible cells score +inf instead of aborting the scan.

use nalgebra::DMatrix;

use crate::crane::{simulate, CraneParams, CraneState};
use crate::error::Error;
use crate::hankel::{build_hankel, BehaviorModel, Hyperparams};
use crate::linalg;
use crate::qp::SolverSettings;
use crate::recovery::{GeneratedTrajectory, GenerationInstance, SimulationSpec, TrajectoryGenSpec};
use crate::trajectory::{ChannelLayout, Trajectory};
use crate::Result;

/// Grid and test harness for simulation-oriented model tuning.
#[derive(Debug, Clone)]
pub struct SimTuneGrid {
    pub deltas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub nus: Vec<usize>,
    pub n_ini: usize,
    pub epsilon: f64,
    /// Held-out trajectories, disjoint from the modeling data; the first
    /// `depth` samples of each are the test window.
    pub tests: Vec<Trajectory>,
    /// Restrict the error to these channels (all when empty).
    pub score_channels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimCell {
    pub nu: usize,
    pub delta: f64,
    pub lambda: f64,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct SimTuneResult {
    pub best: SimCell,
    /// Reduced and denoised model at the winning cell.
    pub model: BehaviorModel,
    /// One row per grid cell, in (nu, delta, lambda) scan order.
    pub table: Vec<SimCell>,
}

/// Sum of squared prediction errors over the test windows; infeasible or
/// non-converged solves count as +inf.
pub fn simulation_score(
    model: &BehaviorModel,
    tests: &[Trajectory],
    n_ini: usize,
    epsilon: f64,
    lambda: f64,
    score_channels: &[usize],
    settings: &SolverSettings,
) -> Result<f64> {
    let depth = model.depth();
    let per_test = linalg::par_map_idx(tests.len(), |i| -> Result<f64> {
        let test = &tests[i];
        let spec = SimulationSpec::from_trajectory(test, n_ini, epsilon, depth)?;
        match crate::recovery::nonparametric_simulate(model, &spec, lambda, settings) {
            Ok(out) => {
                let mut err = 0.0;
                for k in 0..depth {
                    if score_channels.is_empty() {
                        for c in 0..model.q() {
                            err += (out.w.value(k, c) - test.value(k, c)).powi(2);
                        }
                    } else {
                        for &c in score_channels {
                            err += (out.w.value(k, c) - test.value(k, c)).powi(2);
                        }
                    }
                }
                Ok(err)
            }
            Err(Error::Infeasible(_)) | Err(Error::MaxIters(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    });
    let mut total = 0.0;
    for r in per_test {
        total += r?;
    }
    Ok(total)
}

/// `a` strictly better than `b`: lower score, then smaller nu (cheaper),
/// then larger delta and larger lambda (more regularized).
fn sim_cell_better(a: &SimCell, b: &SimCell) -> bool {
    if a.score.is_nan() {
        return false;
    }
    if b.score.is_nan() {
        return true;
    }
    if a.score != b.score {
        return a.score < b.score;
    }
    if a.nu != b.nu {
        return a.nu < b.nu;
    }
    if a.delta != b.delta {
        return a.delta > b.delta;
    }
    a.lambda > b.lambda
}

/// Exhaustive scan over (delta, lambda, nu). The column-pivot order is
/// computed once (prefixes serve every nu) and the singular-value factors are
/// computed once per nu (thresholds serve every delta).
pub fn tune_simulation(
    training: &[Trajectory],
    depth: usize,
    grid: &SimTuneGrid,
    settings: &SolverSettings,
) -> Result<SimTuneResult> {
    if grid.deltas.is_empty() || grid.lambdas.is_empty() || grid.nus.is_empty() {
        return Err(Error::InvalidParameter("empty tuning grid".into()));
    }
    if grid.tests.is_empty() {
        return Err(Error::InvalidParameter("no test trajectories".into()));
    }
    for c in &grid.score_channels {
        if let Some(t) = training.first() {
            if *c >= t.q() {
                return Err(Error::OutOfBounds { index: *c, len: t.q() });
            }
        }
    }

    let full = build_hankel(training, depth)?;
    let nu_cap = grid.nus.iter().copied().max().unwrap().min(full.cols());
    let pivots = linalg::pivoted_columns(full.matrix(), nu_cap);

    let mut table = Vec::with_capacity(grid.nus.len() * grid.deltas.len() * grid.lambdas.len());
    let mut best: Option<(SimCell, BehaviorModel)> = None;
    for &nu in &grid.nus {
        let keep = nu.min(full.cols());
        let mut selected = DMatrix::zeros(full.rows(), keep);
        for (k, &j) in pivots[..keep].iter().enumerate() {
            selected.column_mut(k).copy_from(&full.matrix().column(j));
        }
        let factors = linalg::svd_factors(&selected);
        let sigma_max = factors.sigmas.first().copied().unwrap_or(0.0);
        for &delta in &grid.deltas {
            if !(delta >= 0.0) {
                return Err(Error::InvalidParameter(format!("delta = {delta}")));
            }
            let (denoised, _) =
                linalg::truncate_with_factors(&selected, &factors, delta * sigma_max);
            let model = BehaviorModel::from_parts(
                denoised,
                depth,
                full.q(),
                full.m(),
                full.rate(),
                false,
                full.channel_names().to_vec(),
                Hyperparams { nu: Some(nu), delta: Some(delta) },
            )?;
            for &lambda in &grid.lambdas {
                let score = simulation_score(
                    &model,
                    &grid.tests,
                    grid.n_ini,
                    grid.epsilon,
                    lambda,
                    &grid.score_channels,
                    settings,
                )?;
                let cell = SimCell { nu, delta, lambda, score };
                table.push(cell);
                if best.as_ref().map_or(true, |(b, _)| sim_cell_better(&cell, b)) {
                    best = Some((cell, model.clone()));
                }
            }
        }
    }
    let (best, model) = best.expect("grid is nonempty");
    if best.score.is_infinite() {
        return Err(Error::AllInfeasible);
    }
    Ok(SimTuneResult { best, model, table })
}

/// Target-holding rule and metric weights for trajectory scoring.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreScenario {
    pub theta4_start: f64,
    pub theta4_target: f64,
    /// Radius of the hold band around the target.
    pub hold_tolerance: f64,
    /// How long the boom must stay inside the band, in seconds.
    pub hold_duration: f64,
}

impl ScoreScenario {
    pub fn new(theta4_start: f64, theta4_target: f64) -> Self {
        Self { theta4_start, theta4_target, hold_tolerance: 0.035, hold_duration: 5.0 }
    }
}

pub const METRIC_NAMES: [&str; 7] = [
    "time_to_target",
    "max_sway",
    "mean_sway",
    "max_smooth",
    "mean_smooth",
    "overshoot_integral",
    "rollout_error",
];

/// Quality metrics of one (predicted, optional rollout) pair. All entries are
/// nonnegative; `time_to_target` equals the horizon when `reached` is false.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajectoryQuality {
    pub time_to_target: f64,
    pub reached: bool,
    pub max_sway: f64,
    pub mean_sway: f64,
    /// Central differences of the zero-padded boom rate, per step.
    pub max_smooth: f64,
    pub mean_smooth: f64,
    pub overshoot_integral: f64,
    /// 2-norm of (rollout - predicted) over the common prefix; 0 without a
    /// rollout.
    pub rollout_error: f64,
}

impl TrajectoryQuality {
    pub fn metrics(&self) -> [f64; 7] {
        [
            self.time_to_target,
            self.max_sway,
            self.mean_sway,
            self.max_smooth,
            self.mean_smooth,
            self.overshoot_integral,
            self.rollout_error,
        ]
    }
}

/// Deterministic metric bundle for a predicted trajectory and an optional
/// simulator rollout of its input.
pub fn score_trajectory(
    predicted: &Trajectory,
    rollout: Option<&Trajectory>,
    scenario: &ScoreScenario,
) -> Result<TrajectoryQuality> {
    let layout = ChannelLayout::from_names(predicted.channel_names()).ok_or_else(|| {
        Error::ChannelMismatch(format!(
            "channels {:?} are not a crane layout",
            predicted.channel_names()
        ))
    })?;
    let len = predicted.len();
    if len == 0 {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    let rate = predicted.rate();
    let theta4 = predicted.channel(layout.theta4());
    let target = scenario.theta4_target;

    // first sample after which the boom stays inside the band for
    // hold_duration (or to the end of the horizon, whichever comes first)
    let hold_samples = (scenario.hold_duration * rate).round() as usize;
    let inside: Vec<bool> =
        theta4.iter().map(|&v| (v - target).abs() <= scenario.hold_tolerance).collect();
    let mut time_to_target = len as f64 / rate;
    let mut reached = false;
    for k in 0..len {
        let end = (k + hold_samples).min(len - 1);
        if inside[k..=end].iter().all(|&b| b) {
            time_to_target = k as f64 / rate;
            reached = true;
            break;
        }
    }

    let mut max_sway = 0.0_f64;
    let mut sway_sum = 0.0;
    for c in [layout.theta1(), layout.theta2()] {
        for k in 0..len {
            let v = predicted.value(k, c).abs();
            max_sway = max_sway.max(v);
            sway_sum += v;
        }
    }
    let mean_sway = sway_sum / (2 * len) as f64;

    let v = predicted.channel(layout.dtheta4());
    let pad = |k: isize| -> f64 {
        if k < 0 || k as usize >= len {
            0.0
        } else {
            v[k as usize]
        }
    };
    let mut max_smooth = 0.0_f64;
    let mut smooth_sum = 0.0;
    for k in 0..len as isize {
        let d = 0.5 * (pad(k + 1) - pad(k - 1)).abs();
        max_smooth = max_smooth.max(d);
        smooth_sum += d;
    }
    let mean_smooth = smooth_sum / len as f64;

    let direction = (target - scenario.theta4_start).signum();
    let overshoot_integral = theta4
        .iter()
        .map(|&v| ((v - target) * direction).max(0.0))
        .sum::<f64>()
        / rate;

    let rollout_error = match rollout {
        Some(r) => {
            if r.q() != predicted.q() || r.channel_names() != predicted.channel_names() {
                return Err(Error::ChannelMismatch("rollout layout differs from predicted".into()));
            }
            let common = r.len().min(len);
            let mut err2 = 0.0;
            for k in 0..common {
                for c in 0..predicted.q() {
                    err2 += (r.value(k, c) - predicted.value(k, c)).powi(2);
                }
            }
            err2.sqrt()
        }
        None => 0.0,
    };

    Ok(TrajectoryQuality {
        time_to_target,
        reached,
        max_sway,
        mean_sway,
        max_smooth,
        mean_smooth,
        overshoot_integral,
        rollout_error,
    })
}

#[derive(Debug, Clone)]
pub struct TrajTuneGrid {
    pub lambdas: Vec<f64>,
    pub mus: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// Weights over the normalized metrics, in `METRIC_NAMES` order.
    pub weights: [f64; 7],
}

impl TrajTuneGrid {
    pub fn new(lambdas: Vec<f64>, mus: Vec<f64>, sigmas: Vec<f64>) -> Self {
        Self { lambdas, mus, sigmas, weights: [1.0; 7] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajCell {
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
    /// None when the solve was infeasible or did not converge.
    pub quality: Option<TrajectoryQuality>,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct TrajTuneResult {
    pub best: TrajCell,
    /// One row per cell in (lambda, mu, sigma) scan order.
    pub table: Vec<TrajCell>,
    /// Empirical maxima used to normalize each metric.
    pub maxima: [f64; 7],
    /// One-dimensional slices through the optimum: (value, score) pairs for
    /// lambda, mu, sigma in turn.
    pub slices: [Vec<(f64, f64)>; 3],
}

/// `a` strictly better than `b`: lower score, then larger lambda (sparser),
/// then larger sigma (smoother), then smaller mu.
fn traj_cell_better(a: &TrajCell, b: &TrajCell) -> bool {
    if a.score.is_nan() {
        return false;
    }
    if b.score.is_nan() {
        return true;
    }
    if a.score != b.score {
        return a.score < b.score;
    }
    if a.lambda != b.lambda {
        return a.lambda > b.lambda;
    }
    if a.sigma != b.sigma {
        return a.sigma > b.sigma;
    }
    a.mu < b.mu
}

/// Exhaustive scan over (lambda, mu, sigma) for trajectory generation,
/// scoring each cell's prediction (and, when `rollout` is set, its simulator
/// rollout) with the combined normalized objective.
pub fn tune_trajectory(
    model: &BehaviorModel,
    spec: &TrajectoryGenSpec,
    params: &CraneParams,
    rollout: bool,
    grid: &TrajTuneGrid,
    settings: &SolverSettings,
) -> Result<TrajTuneResult> {
    if grid.lambdas.is_empty() || grid.mus.is_empty() || grid.sigmas.is_empty() {
        return Err(Error::InvalidParameter("empty tuning grid".into()));
    }
    if grid.weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidParameter("metric weights must be nonnegative".into()));
    }
    let instance = GenerationInstance::prepare(model, spec)?;
    let scenario = ScoreScenario::new(spec.theta4_start, spec.theta4_target);

    let mut cells = Vec::new();
    for &lambda in &grid.lambdas {
        for &mu in &grid.mus {
            for &sigma in &grid.sigmas {
                cells.push((lambda, mu, sigma));
            }
        }
    }

    let evaluated = linalg::par_map_idx(cells.len(), |i| -> Result<Option<TrajectoryQuality>> {
        let (lambda, mu, sigma) = cells[i];
        let generated = match instance.solve(model, lambda, mu, sigma, settings) {
            Ok(g) => g,
            Err(Error::Infeasible(_)) | Err(Error::MaxIters(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let roll = if rollout {
            match rollout_input(params, &generated, spec.theta4_start) {
                Ok(t) => Some(t),
                Err(Error::NonFiniteState { .. }) => return Ok(None),
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        score_trajectory(&generated.w, roll.as_ref(), &scenario).map(Some)
    });
    let mut qualities = Vec::with_capacity(cells.len());
    for r in evaluated {
        qualities.push(r?);
    }

    let mut maxima = [0.0_f64; 7];
    for q in qualities.iter().flatten() {
        for (m, v) in maxima.iter_mut().zip(q.metrics()) {
            *m = m.max(v);
        }
    }
    let combined = |q: &TrajectoryQuality| -> f64 {
        q.metrics()
            .iter()
            .zip(maxima.iter())
            .zip(grid.weights.iter())
            .map(|((v, m), w)| if *m > 0.0 { w * v / m } else { 0.0 })
            .sum()
    };

    let mut table = Vec::with_capacity(cells.len());
    let mut best: Option<TrajCell> = None;
    for ((lambda, mu, sigma), quality) in cells.iter().zip(qualities) {
        let score = quality.as_ref().map_or(f64::INFINITY, &combined);
        let cell = TrajCell { lambda: *lambda, mu: *mu, sigma: *sigma, quality, score };
        if best.as_ref().map_or(true, |b| traj_cell_better(&cell, b)) {
            best = Some(cell);
        }
        table.push(cell);
    }
    let best = best.expect("grid is nonempty");
    if best.score.is_infinite() {
        return Err(Error::AllInfeasible);
    }

    let slice = |pick: &dyn Fn(&TrajCell) -> (f64, bool)| -> Vec<(f64, f64)> {
        table
            .iter()
            .filter_map(|c| {
                let (value, on_axis) = pick(c);
                on_axis.then_some((value, c.score))
            })
            .collect()
    };
    let slices = [
        slice(&|c| (c.lambda, c.mu == best.mu && c.sigma == best.sigma)),
        slice(&|c| (c.mu, c.lambda == best.lambda && c.sigma == best.sigma)),
        slice(&|c| (c.sigma, c.lambda == best.lambda && c.mu == best.mu)),
    ];

    Ok(TrajTuneResult { best, table, maxima, slices })
}

/// Roll the generated input out on the simulator from rest at the start pose.
pub fn rollout_input(
    params: &CraneParams,
    generated: &GeneratedTrajectory,
    theta4_start: f64,
) -> Result<Trajectory> {
    let layout = ChannelLayout::from_names(generated.w.channel_names()).ok_or_else(|| {
        Error::ChannelMismatch("generated trajectory is not a crane layout".into())
    })?;
    simulate(
        params,
        &CraneState::rest_at(theta4_start),
        &generated.input,
        generated.w.rate(),
        layout,
        None,
    )
}
