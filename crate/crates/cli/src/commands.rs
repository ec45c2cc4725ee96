//! Subcommand implementations.
//!
//! Every command reads only its declared inputs, writes only under the
//! artifact directory, and stamps each file with the resolved configuration
//! hash and master seed. Nothing here depends on wall-clock time, so a rerun
//! with the same configuration reproduces every artifact byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use slewgen::crane::{
    controllability_det_formula, controllability_det_lu, simulate, CraneState, NoiseSpec,
};
use slewgen::excitation::{differentiate_to_acceleration, generate_excitation, SumOfSinesSpec};
use slewgen::hankel::{
    build_hankel, denoise_svd, identifiability_rank, select_columns_qr, DenoiseReport,
    RankReport, ThresholdMode,
};
use slewgen::io::{
    read_model, read_trajectory_csv, write_json, write_model, write_table_csv,
    write_trajectory_csv, FileMeta,
};
use slewgen::qp::{KktResiduals, SolveStatus, Solution};
use slewgen::recovery::{generate_trajectory, nonparametric_simulate, SimulationSpec, TrajectoryGenSpec};
use slewgen::tuning::{
    tune_simulation, tune_trajectory, ScoreScenario, SimTuneGrid, TrajTuneGrid, TrajectoryQuality,
    METRIC_NAMES,
};
use slewgen::waypoint::{compare, solve_waypoint_nlp, verify_rollout, WaypointReport};
use slewgen::{ChannelLayout, Error, Result, Trajectory};

use crate::config::{Mode, RunConfig, ScenarioSection};

fn meta(cfg: &RunConfig) -> FileMeta {
    FileMeta::new(cfg.hash(), cfg.seed)
}

fn scenario_spec(s: &ScenarioSection) -> TrajectoryGenSpec {
    TrajectoryGenSpec {
        theta4_start: s.start,
        theta4_target: s.target,
        n_given: s.n_given,
        lambda: s.lambda,
        mu: s.mu,
        sigma: s.sigma,
        data_weight: s.data_weight,
        ref_weight: s.ref_weight,
        tv_channels: None,
        sway_bound: s.sway_bound,
        input_bound: s.input_bound,
        pin_endpoints: true,
    }
}

/// Solver diagnostics worth persisting from a solution.
#[derive(serde::Serialize)]
struct SolverSummary {
    status: SolveStatus,
    iters: usize,
    polished: bool,
    objective: f64,
    kkt: KktResiduals,
}

impl From<&Solution> for SolverSummary {
    fn from(sol: &Solution) -> Self {
        Self {
            status: sol.status,
            iters: sol.iters,
            polished: sol.polished,
            objective: sol.objective,
            kkt: sol.kkt,
        }
    }
}

fn read_data_dir(dir: &Path) -> Result<Vec<Trajectory>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Format {
        path: dir.display().to_string(),
        reason: format!("cannot list data directory: {e}"),
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Format {
            path: dir.display().to_string(),
            reason: "no trajectory csv files found".into(),
        });
    }
    paths.iter().map(|p| read_trajectory_csv(p).map(|(t, _)| t)).collect()
}

#[derive(serde::Serialize)]
struct DataFileEntry {
    path: String,
    samples: usize,
    duration: f64,
    excitation_seed: u64,
    noise_seed: Option<u64>,
}

#[derive(serde::Serialize)]
struct GenDataManifest {
    config_hash: String,
    seed: u64,
    mode: Mode,
    rate: f64,
    files: Vec<DataFileEntry>,
    total_samples: usize,
    total_duration: f64,
    /// Mosaic Hankel columns the campaign yields at the configured depth.
    hankel_columns: usize,
    /// 15x the identifiability rank mL + n; below this a warning is issued.
    suggested_columns: usize,
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    if cfg.data.runs == 0 {
        return Err(Error::InvalidParameter("data.runs must be at least 1".into()));
    }
    let layout = cfg.mode.layout();
    let meta = meta(cfg);
    let data_dir = cfg.out_dir.join("data");
    fs::create_dir_all(&data_dir)?;

    let mut files = Vec::with_capacity(cfg.data.runs);
    let mut total_samples = 0;
    let mut hankel_columns = 0;
    for run in 0..cfg.data.runs {
        let excitation_seed =
            cfg.seed.wrapping_add(cfg.excitation.seed).wrapping_add(run as u64);
        let spec = SumOfSinesSpec { seed: excitation_seed, ..cfg.excitation };
        let rates = generate_excitation(&spec)?;
        let inputs = match layout {
            ChannelLayout::AccelerationInput => differentiate_to_acceleration(&rates, spec.rate),
            ChannelLayout::VelocityInput => rates,
        };
        let noise = cfg.data.noise.map(|n| NoiseSpec {
            seed: cfg.seed.wrapping_add(n.seed).wrapping_add(1000 + run as u64),
            ..n
        });
        let traj = simulate(
            &cfg.crane,
            &CraneState::rest_at(cfg.data.start),
            &inputs,
            spec.rate,
            layout,
            noise.as_ref(),
        )?;
        let rel = format!("data/run_{run:03}.csv");
        write_trajectory_csv(&cfg.out_dir.join(&rel), &traj, &meta)?;
        total_samples += traj.len();
        hankel_columns += (traj.len() + 1).saturating_sub(cfg.model.depth);
        files.push(DataFileEntry {
            path: rel,
            samples: traj.len(),
            duration: traj.duration(),
            excitation_seed,
            noise_seed: noise.map(|n| n.seed),
        });
    }

    let suggested_columns = 15 * (layout.m() * cfg.model.depth + cfg.model.order);
    if hankel_columns < suggested_columns {
        eprintln!(
            "warning: {hankel_columns} Hankel columns at depth {} is below the suggested \
             {suggested_columns} (15x the identifiability rank); record more or longer runs",
            cfg.model.depth
        );
    }

    let manifest = GenDataManifest {
        config_hash: meta.config_hash.clone(),
        seed: cfg.seed,
        mode: cfg.mode,
        rate: cfg.excitation.rate,
        total_samples,
        total_duration: total_samples as f64 / cfg.excitation.rate,
        hankel_columns,
        suggested_columns,
        files,
    };
    write_json(&cfg.out_dir.join("gen_data.json"), &manifest)?;
    println!(
        "gen-data: {} records, {:.1} s total, {} Hankel columns at depth {}",
        cfg.data.runs, manifest.total_duration, hankel_columns, cfg.model.depth
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct BuildModelManifest {
    config_hash: String,
    seed: u64,
    depth: usize,
    raw_rows: usize,
    raw_cols: usize,
    rank: RankReport,
    nu: Option<usize>,
    delta: Option<f64>,
    denoise: Option<DenoiseReport>,
    rows: usize,
    cols: usize,
    model: String,
}

pub fn build_model(cfg: &RunConfig, data_dir: Option<&Path>) -> Result<()> {
    let meta = meta(cfg);
    let dir = data_dir.map_or_else(|| cfg.out_dir.join("data"), Path::to_path_buf);
    let trajectories = read_data_dir(&dir)?;
    let full = build_hankel(&trajectories, cfg.model.depth)?;
    let rank = identifiability_rank(&full, cfg.model.order);

    let reduced = match cfg.model.nu {
        Some(nu) => select_columns_qr(&full, nu)?.0,
        None => full.clone(),
    };
    let (model, denoise) = match cfg.model.delta {
        Some(delta) => {
            let (m, report) = denoise_svd(&reduced, delta, ThresholdMode::Relative)?;
            (m, Some(report))
        }
        None => (reduced, None),
    };

    write_model(&cfg.out_dir.join("model"), &model, &meta)?;
    let manifest = BuildModelManifest {
        config_hash: meta.config_hash.clone(),
        seed: cfg.seed,
        depth: cfg.model.depth,
        raw_rows: full.rows(),
        raw_cols: full.cols(),
        rank,
        nu: cfg.model.nu,
        delta: cfg.model.delta,
        denoise,
        rows: model.rows(),
        cols: model.cols(),
        model: "model".into(),
    };
    write_json(&cfg.out_dir.join("build_model.json"), &manifest)?;
    println!(
        "build-model: {}x{} -> {}x{}, rank {} (required {})",
        full.rows(),
        full.cols(),
        model.rows(),
        model.cols(),
        rank.rank,
        rank.required
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct TuneSimManifest {
    config_hash: String,
    seed: u64,
    depth: usize,
    training_records: usize,
    test_records: usize,
    best: slewgen::tuning::SimCell,
    table: String,
    model: String,
}

pub fn tune_sim(cfg: &RunConfig, data_dir: Option<&Path>) -> Result<()> {
    let meta = meta(cfg);
    let dir = data_dir.map_or_else(|| cfg.out_dir.join("data"), Path::to_path_buf);
    let trajectories = read_data_dir(&dir)?;
    let n_test = cfg.tune_sim.n_test;
    if n_test == 0 || n_test >= trajectories.len() {
        return Err(Error::InvalidParameter(format!(
            "n_test = {n_test} must leave at least one of {} records for training",
            trajectories.len()
        )));
    }
    let (train, test) = trajectories.split_at(trajectories.len() - n_test);
    let grid = SimTuneGrid {
        deltas: cfg.tune_sim.deltas.clone(),
        lambdas: cfg.tune_sim.lambdas.clone(),
        nus: cfg.tune_sim.nus.clone(),
        n_ini: cfg.tune_sim.n_ini,
        epsilon: cfg.tune_sim.epsilon,
        tests: test.to_vec(),
        score_channels: cfg.tune_sim.score_channels.clone(),
    };
    let result = tune_simulation(train, cfg.model.depth, &grid, &cfg.solver)?;

    let rows: Vec<Vec<f64>> = result
        .table
        .iter()
        .map(|c| vec![c.nu as f64, c.delta, c.lambda, c.score])
        .collect();
    write_table_csv(
        &cfg.out_dir.join("tune_sim_table.csv"),
        &meta,
        &["nu", "delta", "lambda", "score"],
        &rows,
    )?;
    write_model(&cfg.out_dir.join("tuned_model"), &result.model, &meta)?;
    let manifest = TuneSimManifest {
        config_hash: meta.config_hash.clone(),
        seed: cfg.seed,
        depth: cfg.model.depth,
        training_records: train.len(),
        test_records: test.len(),
        best: result.best,
        table: "tune_sim_table.csv".into(),
        model: "tuned_model".into(),
    };
    write_json(&cfg.out_dir.join("tune_sim.json"), &manifest)?;
    println!(
        "tune-sim: best nu={} delta={} lambda={} score={:.6e}",
        result.best.nu, result.best.delta, result.best.lambda, result.best.score
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct TuneTrajManifest {
    config_hash: String,
    seed: u64,
    best: slewgen::tuning::TrajCell,
    metric_names: [&'static str; 7],
    maxima: [f64; 7],
    /// (value, score) pairs along each axis through the optimum, in
    /// (lambda, mu, sigma) order.
    slices: [Vec<(f64, f64)>; 3],
    table: String,
}

pub fn tune_traj(cfg: &RunConfig, model_stem: Option<&Path>) -> Result<()> {
    let meta = meta(cfg);
    let stem = model_stem.map_or_else(|| cfg.out_dir.join("model"), Path::to_path_buf);
    let (model, _) = read_model(&stem)?;
    let spec = scenario_spec(&cfg.scenario);
    let grid = TrajTuneGrid {
        lambdas: cfg.tune_traj.lambdas.clone(),
        mus: cfg.tune_traj.mus.clone(),
        sigmas: cfg.tune_traj.sigmas.clone(),
        weights: cfg.tune_traj.weights,
    };
    let result =
        tune_trajectory(&model, &spec, &cfg.crane, cfg.tune_traj.rollout, &grid, &cfg.solver)?;

    let quality_row = |q: &Option<TrajectoryQuality>| -> Vec<f64> {
        match q {
            Some(q) => q.metrics().to_vec(),
            None => vec![f64::NAN; METRIC_NAMES.len()],
        }
    };
    let mut header = vec!["lambda", "mu", "sigma", "score"];
    header.extend(METRIC_NAMES);
    let rows: Vec<Vec<f64>> = result
        .table
        .iter()
        .map(|c| {
            let mut row = vec![c.lambda, c.mu, c.sigma, c.score];
            row.extend(quality_row(&c.quality));
            row
        })
        .collect();
    write_table_csv(&cfg.out_dir.join("tune_traj_table.csv"), &meta, &header, &rows)?;
    let manifest = TuneTrajManifest {
        config_hash: meta.config_hash.clone(),
        seed: cfg.seed,
        best: result.best,
        metric_names: METRIC_NAMES,
        maxima: result.maxima,
        slices: result.slices,
        table: "tune_traj_table.csv".into(),
    };
    write_json(&cfg.out_dir.join("tune_traj.json"), &manifest)?;
    println!(
        "tune-traj: best lambda={} mu={} sigma={} score={:.6}",
        result.best.lambda, result.best.mu, result.best.sigma, result.best.score
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct GenTrajManifest {
    config_hash: String,
    seed: u64,
    start: f64,
    target: f64,
    n_given: usize,
    lambda: f64,
    mu: f64,
    sigma: f64,
    solver: SolverSummary,
    /// Worst deviation of the first/last predicted sample from the resting
    /// endpoint poses.
    endpoint_residual: f64,
    predicted: TrajectoryQuality,
    rollout: TrajectoryQuality,
    rollout_final_boom_error: f64,
    trajectory: String,
    rollout_file: String,
}

/// Worst elementwise deviation of a sample from rest at the given boom angle.
fn rest_residual(t: &Trajectory, k: usize, layout: ChannelLayout, theta4: f64) -> f64 {
    (0..t.q()).fold(0.0_f64, |worst, c| {
        let want = if c == layout.theta4() { theta4 } else { 0.0 };
        worst.max((t.value(k, c) - want).abs())
    })
}

pub fn gen_traj(cfg: &RunConfig, model_stem: Option<&Path>) -> Result<()> {
    let meta = meta(cfg);
    let stem = model_stem.map_or_else(|| cfg.out_dir.join("model"), Path::to_path_buf);
    let (model, _) = read_model(&stem)?;
    let spec = scenario_spec(&cfg.scenario);
    let generated = generate_trajectory(&model, &spec, &cfg.solver)?;
    let layout = ChannelLayout::from_names(generated.w.channel_names())
        .expect("generation validated the layout");

    let mut input = generated.input.clone();
    let hold_samples = (cfg.scenario.hold * model.rate()).round().max(0.0) as usize;
    input.extend(std::iter::repeat(0.0).take(hold_samples));
    let rollout = simulate(
        &cfg.crane,
        &CraneState::rest_at(spec.theta4_start),
        &input,
        model.rate(),
        layout,
        None,
    )?;

    write_trajectory_csv(&cfg.out_dir.join("trajectory.csv"), &generated.w, &meta)?;
    write_trajectory_csv(&cfg.out_dir.join("rollout.csv"), &rollout, &meta)?;

    let scenario = ScoreScenario::new(spec.theta4_start, spec.theta4_target);
    let predicted = slewgen::tuning::score_trajectory(&generated.w, Some(&rollout), &scenario)?;
    let rollout_quality = slewgen::tuning::score_trajectory(&rollout, None, &scenario)?;
    let endpoint_residual = rest_residual(&generated.w, 0, layout, spec.theta4_start)
        .max(rest_residual(&generated.w, generated.w.len() - 1, layout, spec.theta4_target));
    let final_error =
        (rollout.value(rollout.len() - 1, layout.theta4()) - spec.theta4_target).abs();

    let manifest = GenTrajManifest {
        config_hash: meta.config_hash.clone(),
        seed: cfg.seed,
        start: spec.theta4_start,
        target: spec.theta4_target,
        n_given: spec.n_given,
        lambda: spec.lambda,
        mu: spec.mu,
        sigma: spec.sigma,
        solver: SolverSummary::from(&generated.solver),
        endpoint_residual,
        predicted,
        rollout: rollout_quality,
        rollout_final_boom_error: final_error,
        trajectory: "trajectory.csv".into(),
        rollout_file: "rollout.csv".into(),
    };
    write_json(&cfg.out_dir.join("gen_traj.json"), &manifest)?;
    println!(
        "gen-traj: reach {:.2} s, endpoint residual {:.2e}, rollout final error {:.2e}",
        rollout_quality.time_to_target, endpoint_residual, final_error
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct SimulateManifest {
    config_hash: String,
    seed: u64,
    input: String,
    n_ini: usize,
    epsilon: f64,
    lambda: f64,
    solver: SolverSummary,
    channel_names: Vec<String>,
    rmse: Vec<f64>,
    simulated: String,
}

pub fn simulate_window(cfg: &RunConfig, model_stem: Option<&Path>, input: &Path) -> Result<()> {
    let meta = meta(cfg);
    let stem = model_stem.map_or_else(|| cfg.out_dir.join("model"), Path::to_path_buf);
    let (model, _) = read_model(&stem)?;
    let (recorded, _) = read_trajectory_csv(input)?;
    let spec = SimulationSpec::from_trajectory(
        &recorded,
        cfg.simulate.n_ini,
        cfg.simulate.epsilon,
        model.depth(),
    )?;
    let out = nonparametric_simulate(&model, &spec, cfg.simulate.lambda, &cfg.solver)?;

    let mut rmse = Vec::with_capacity(model.q());
    for c in 0..model.q() {
        let sq: f64 = (0..model.depth())
            .map(|k| (out.w.value(k, c) - recorded.value(k, c)).powi(2))
            .sum();
        rmse.push((sq / model.depth() as f64).sqrt());
    }

    write_trajectory_csv(&cfg.out_dir.join("simulated.csv"), &out.w, &meta)?;
    let manifest = SimulateManifest {
        config_hash: meta.config_hash.clone(),
        seed: cfg.seed,
        input: input.display().to_string(),
        n_ini: cfg.simulate.n_ini,
        epsilon: cfg.simulate.epsilon,
        lambda: cfg.simulate.lambda,
        solver: SolverSummary::from(&out.solver),
        channel_names: model.channel_names().to_vec(),
        rmse: rmse.clone(),
        simulated: "simulated.csv".into(),
    };
    write_json(&cfg.out_dir.join("simulate.json"), &manifest)?;
    let worst = rmse.iter().cloned().fold(0.0_f64, f64::max);
    println!("simulate: {} samples, worst channel rmse {:.3e}", model.depth(), worst);
    Ok(())
}

#[derive(serde::Serialize)]
struct BenchmarkManifest {
    config_hash: String,
    seed: u64,
    start: f64,
    target: f64,
    tau: f64,
    total_time: f64,
    fd_consistency_error: f64,
    report: WaypointReport,
    rollout_quality: TrajectoryQuality,
    rollout_final_boom_error: f64,
    waypoints: String,
    rollout_file: String,
}

pub fn benchmark(cfg: &RunConfig) -> Result<()> {
    let meta = meta(cfg);
    let (sol, report) =
        solve_waypoint_nlp(cfg.scenario.start, cfg.scenario.target, &cfg.bounds, &cfg.crane)?;
    let rollout = verify_rollout(&cfg.crane, &sol, cfg.excitation.rate, cfg.scenario.hold)?;

    write_trajectory_csv(&cfg.out_dir.join("waypoints.csv"), &sol.waypoint_table(), &meta)?;
    write_trajectory_csv(&cfg.out_dir.join("benchmark_rollout.csv"), &rollout, &meta)?;

    let scenario = ScoreScenario::new(cfg.scenario.start, cfg.scenario.target);
    let quality = slewgen::tuning::score_trajectory(&rollout, None, &scenario)?;
    let layout = ChannelLayout::from_names(rollout.channel_names()).expect("crane layout");
    let final_error =
        (rollout.value(rollout.len() - 1, layout.theta4()) - cfg.scenario.target).abs();
    let manifest = BenchmarkManifest {
        config_hash: meta.config_hash.clone(),
        seed: cfg.seed,
        start: cfg.scenario.start,
        target: cfg.scenario.target,
        tau: sol.tau,
        total_time: sol.total_time(),
        fd_consistency_error: sol.fd_consistency_error(),
        report,
        rollout_quality: quality,
        rollout_final_boom_error: final_error,
        waypoints: "waypoints.csv".into(),
        rollout_file: "benchmark_rollout.csv".into(),
    };
    write_json(&cfg.out_dir.join("benchmark.json"), &manifest)?;
    println!(
        "benchmark: tau {:.3} s, total {:.2} s, reach {:.2} s",
        sol.tau,
        sol.total_time(),
        quality.time_to_target
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct CompareManifest {
    config_hash: String,
    seed: u64,
    data_driven: String,
    model_based: String,
    report: slewgen::waypoint::ComparisonReport,
    table: String,
}

pub fn compare_rollouts(cfg: &RunConfig, data_driven: &Path, model_based: &Path) -> Result<()> {
    let meta = meta(cfg);
    let (dd, _) = read_trajectory_csv(data_driven)?;
    let (mb, _) = read_trajectory_csv(model_based)?;
    let scenario = ScoreScenario::new(cfg.scenario.start, cfg.scenario.target);
    let report = compare(&dd, &mb, &scenario)?;

    let header = [
        "dd_time_to_target",
        "mb_time_to_target",
        "time_ratio",
        "dd_max_theta1",
        "mb_max_theta1",
        "theta1_ratio",
        "dd_max_theta2",
        "mb_max_theta2",
        "theta2_ratio",
        "dd_final_error",
        "mb_final_error",
        "final_error_ratio",
    ];
    let row = vec![
        report.data_driven.quality.time_to_target,
        report.model_based.quality.time_to_target,
        report.time_ratio,
        report.data_driven.max_theta1,
        report.model_based.max_theta1,
        report.theta1_ratio,
        report.data_driven.max_theta2,
        report.model_based.max_theta2,
        report.theta2_ratio,
        report.data_driven.final_boom_error,
        report.model_based.final_boom_error,
        report.final_error_ratio,
    ];
    write_table_csv(&cfg.out_dir.join("compare.csv"), &meta, &header, &[row])?;
    let manifest = CompareManifest {
        config_hash: meta.config_hash.clone(),
        seed: cfg.seed,
        data_driven: data_driven.display().to_string(),
        model_based: model_based.display().to_string(),
        report,
        table: "compare.csv".into(),
    };
    write_json(&cfg.out_dir.join("compare.json"), &manifest)?;
    println!(
        "compare: time ratio {:.3}, theta2 ratio {:.3}",
        report.time_ratio, report.theta2_ratio
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct ControllabilityManifest {
    config_hash: String,
    seed: u64,
    n_states: usize,
    max_rel_error: f64,
    min_abs_det: f64,
    max_abs_det: f64,
    /// Largest |det| over states with no load deflection along the boom and
    /// no boom rate -- the configurations where the test must vanish.
    degenerate_max_abs_det: f64,
    table: String,
}

pub fn controllability(cfg: &RunConfig) -> Result<()> {
    let meta = meta(cfg);
    let n = cfg.controllability.n_states;
    if n == 0 {
        return Err(Error::InvalidParameter("n_states must be at least 1".into()));
    }
    let sway = cfg.controllability.sway_range;
    let rate = cfg.controllability.rate_range;
    if !(sway > 0.0) || !(rate > 0.0) {
        return Err(Error::InvalidParameter("sampling ranges must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let mut rows = Vec::with_capacity(n);
    let mut max_rel = 0.0_f64;
    let mut min_abs = f64::INFINITY;
    let mut max_abs = 0.0_f64;
    for _ in 0..n {
        let state = CraneState {
            theta1: rng.gen_range(-sway..sway),
            theta2: rng.gen_range(-sway..sway),
            theta4: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            dtheta1: rng.gen_range(-rate..rate),
            dtheta2: rng.gen_range(-rate..rate),
            dtheta4: rng.gen_range(-rate..rate),
        };
        let formula = controllability_det_formula(&cfg.crane, &state);
        let lu = controllability_det_lu(&cfg.crane, &state);
        let rel = (formula - lu).abs() / formula.abs().max(lu.abs()).max(f64::MIN_POSITIVE);
        max_rel = max_rel.max(rel);
        min_abs = min_abs.min(formula.abs());
        max_abs = max_abs.max(formula.abs());
        rows.push(vec![
            state.theta1,
            state.theta2,
            state.theta4,
            state.dtheta1,
            state.dtheta2,
            state.dtheta4,
            formula,
            lu,
            rel,
        ]);
    }

    // the determinant must vanish identically on theta2 = dtheta2 = dtheta4 = 0
    let mut degenerate_max = 0.0_f64;
    for _ in 0..n.min(200) {
        let state = CraneState {
            theta1: rng.gen_range(-sway..sway),
            theta4: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            dtheta1: rng.gen_range(-rate..rate),
            ..CraneState::default()
        };
        degenerate_max = degenerate_max.max(controllability_det_formula(&cfg.crane, &state).abs());
    }

    write_table_csv(
        &cfg.out_dir.join("controllability.csv"),
        &meta,
        &["theta1", "theta2", "theta4", "dtheta1", "dtheta2", "dtheta4", "det_formula", "det_lu", "rel_error"],
        &rows,
    )?;
    let manifest = ControllabilityManifest {
        config_hash: meta.config_hash.clone(),
        seed: cfg.seed,
        n_states: n,
        max_rel_error: max_rel,
        min_abs_det: min_abs,
        max_abs_det: max_abs,
        degenerate_max_abs_det: degenerate_max,
        table: "controllability.csv".into(),
    };
    write_json(&cfg.out_dir.join("controllability.json"), &manifest)?;
    println!(
        "controllability: {n} states, max relative error {:.2e}, degenerate max |det| {:.2e}",
        max_rel, degenerate_max
    );
    Ok(())
}
