//! Problem instances posed over a behavioral model: missing-data recovery,
//! constrained nonparametric simulation, optimal slewing trajectory
//! generation, and an indirect nullspace-projection alternative.
//!
//! All of them search for a column-weight vector g such that w = Hg matches
//! known data, stays inside operating bounds, and optimizes a composite
//! objective; they differ only in which rows of w are known, which terms are
//! active, and which constraints are hard. Contracts are stated on the
//! reconstructed trajectory Hg, never on g itself, because g is generally not
//! unique.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::hankel::BehaviorModel;
use crate::linalg;
use crate::qp::{self, CompositeQp, Constraints, SolveStatus, SolverSettings};
use crate::trajectory::{truncate_rows, ChannelLayout, IndexSet, Trajectory};
use crate::Result;

/// |Hg - center| <= halfwidth on one row of the reconstructed trajectory;
/// encoded as two inequality rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandConstraint {
    pub idx: usize,
    pub center: f64,
    pub halfwidth: f64,
}

/// Missing-data recovery: fit Hg to the known elements with an l1 penalty on
/// the weights.
#[derive(Debug, Clone)]
pub struct RecoveryProblem {
    pub known_idx: IndexSet,
    pub known_vals: DVector<f64>,
    /// Scalar data-fit weight (W = data_weight * I).
    pub data_weight: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct Recovered {
    pub w: Trajectory,
    pub solver: qp::Solution,
}

/// Nonparametric simulation: the knowns are the first `n_ini` full samples
/// plus every input sample, enforced within an infinity-norm band of width
/// `epsilon`.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub n_ini: usize,
    pub epsilon: f64,
    /// q * n_ini values, sample-major.
    pub initial: Vec<f64>,
    /// m * (L - n_ini) input values, sample-major.
    pub inputs: Vec<f64>,
}

impl SimulationSpec {
    pub const DEFAULT_EPSILON: f64 = 1e-6;

    /// Take the first `depth` samples of a recorded trajectory as the test
    /// case: the leading `n_ini` samples and all inputs become the knowns.
    pub fn from_trajectory(
        traj: &Trajectory,
        n_ini: usize,
        epsilon: f64,
        depth: usize,
    ) -> Result<SimulationSpec> {
        if traj.len() < depth {
            return Err(Error::TooShort { len: traj.len(), depth });
        }
        if n_ini == 0 || n_ini >= depth {
            return Err(Error::InvalidParameter(format!("n_ini = {n_ini} for depth {depth}")));
        }
        let m = traj.m();
        let initial = traj.window(0, n_ini).to_vec();
        let mut inputs = Vec::with_capacity(m * (depth - n_ini));
        for s in n_ini..depth {
            inputs.extend_from_slice(&traj.sample(s)[..m]);
        }
        Ok(SimulationSpec { n_ini, epsilon, initial, inputs })
    }
}

/// Optimal slewing trajectory generation between two resting poses.
#[derive(Debug, Clone)]
pub struct TrajectoryGenSpec {
    pub theta4_start: f64,
    pub theta4_target: f64,
    /// Number of leading/trailing samples treated as known resting data.
    pub n_given: usize,
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Scalar W on the known-sample fit.
    pub data_weight: f64,
    /// Scalar R inside the reference term.
    pub ref_weight: f64,
    /// Channels whose finite differences are penalized; defaults to the boom
    /// angle and boom rate.
    pub tv_channels: Option<Vec<usize>>,
    pub sway_bound: Option<f64>,
    pub input_bound: Option<f64>,
    pub pin_endpoints: bool,
}

impl TrajectoryGenSpec {
    pub fn new(theta4_start: f64, theta4_target: f64) -> Self {
        Self {
            theta4_start,
            theta4_target,
            n_given: 10,
            lambda: 1e-4,
            mu: 1.0,
            sigma: 1.0,
            data_weight: 1.0,
            ref_weight: 1.0,
            tv_channels: None,
            sway_bound: Some(0.035),
            input_bound: Some(0.6),
            pin_endpoints: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedTrajectory {
    pub w: Trajectory,
    /// Extracted input channel, one value per sample, for open-loop playback.
    pub input: Vec<f64>,
    pub solver: qp::Solution,
}

/// Precomputed Gram blocks of the composite objective, reusable across
/// hyperparameter values on a fixed instance.
#[derive(Debug, Clone)]
pub struct QpTerms {
    n: usize,
    gram_data: DMatrix<f64>,
    rhs_data: DVector<f64>,
    gram_ref: Option<DMatrix<f64>>,
    rhs_ref: Option<DVector<f64>>,
    gram_tv: Option<DMatrix<f64>>,
}

impl QpTerms {
    pub fn precompute(
        model: &BehaviorModel,
        known_idx: &IndexSet,
        known_vals: &DVector<f64>,
        w_ref: Option<&DVector<f64>>,
        d: Option<&DMatrix<f64>>,
    ) -> Result<QpTerms> {
        if known_idx.len() != known_vals.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} known indices vs {} values",
                known_idx.len(),
                known_vals.len()
            )));
        }
        let h = model.matrix();
        let h_known = truncate_rows(h, known_idx)?;
        let gram_data = linalg::gram(&h_known);
        let rhs_data = h_known.tr_mul(known_vals);
        let (gram_ref, rhs_ref) = match w_ref {
            Some(r) => {
                if r.len() != model.rows() {
                    return Err(Error::DimensionMismatch(format!(
                        "reference has {} rows, model has {}",
                        r.len(),
                        model.rows()
                    )));
                }
                (Some(linalg::gram(h)), Some(h.tr_mul(r)))
            }
            None => (None, None),
        };
        let gram_tv = match d {
            Some(d) => {
                if d.ncols() != model.rows() {
                    return Err(Error::DimensionMismatch(format!(
                        "difference operator has {} columns, model has {} rows",
                        d.ncols(),
                        model.rows()
                    )));
                }
                Some(linalg::gram(&(d * h)))
            }
            None => None,
        };
        Ok(QpTerms { n: h.ncols(), gram_data, rhs_data, gram_ref, rhs_ref, gram_tv })
    }

    /// P = 2(W-term + mu*ref-term + sigma*tv-term), q = -2(W-rhs + mu*ref-rhs).
    pub fn compose(&self, data_weight: f64, lambda: f64, mu: f64, sigma: f64) -> Result<CompositeQp> {
        for (name, v) in [("data_weight", data_weight), ("lambda", lambda), ("mu", mu), ("sigma", sigma)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v}")));
            }
        }
        let mut p = &self.gram_data * (2.0 * data_weight);
        let mut q = &self.rhs_data * (-2.0 * data_weight);
        if mu > 0.0 {
            let gr = self
                .gram_ref
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("mu > 0 without a reference".into()))?;
            p += gr * (2.0 * mu);
            q += self.rhs_ref.as_ref().expect("paired with gram_ref") * (-2.0 * mu);
        }
        if sigma > 0.0 {
            let gt = self
                .gram_tv
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("sigma > 0 without a difference operator".into()))?;
            p += gt * (2.0 * sigma);
        }
        Ok(CompositeQp { p, q, lambda })
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

fn band_rows(h: &DMatrix<f64>, bands: &[BandConstraint]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = h.ncols();
    let mut a = DMatrix::zeros(2 * bands.len(), n);
    let mut b = DVector::zeros(2 * bands.len());
    for (k, band) in bands.iter().enumerate() {
        if band.idx >= h.nrows() {
            return Err(Error::OutOfBounds { index: band.idx, len: h.nrows() });
        }
        if !(band.halfwidth >= 0.0) || !band.center.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "band at row {}: center {}, halfwidth {}",
                band.idx, band.center, band.halfwidth
            )));
        }
        let row = h.row(band.idx);
        a.row_mut(2 * k).copy_from(&row);
        b[2 * k] = band.center + band.halfwidth;
        a.row_mut(2 * k + 1).copy_from(&(-row));
        b[2 * k + 1] = band.halfwidth - band.center;
    }
    Ok((a, b))
}

/// Build the full composite QP: weighted data fit, reference pull, difference
/// penalty, l1 term, hard row pins, and band inequalities.
#[allow(clippy::too_many_arguments)]
pub fn assemble_recovery_qp(
    model: &BehaviorModel,
    known_idx: &IndexSet,
    known_vals: &DVector<f64>,
    data_weight: f64,
    lambda: f64,
    mu: f64,
    sigma: f64,
    w_ref: Option<&DVector<f64>>,
    d: Option<&DMatrix<f64>>,
    eq: Option<(&IndexSet, &DVector<f64>)>,
    bands: Option<&[BandConstraint]>,
) -> Result<(CompositeQp, Constraints)> {
    let terms = QpTerms::precompute(model, known_idx, known_vals, w_ref, d)?;
    let qp = terms.compose(data_weight, lambda, mu, sigma)?;
    let con = assemble_constraints(model, eq, bands)?;
    Ok((qp, con))
}

pub fn assemble_constraints(
    model: &BehaviorModel,
    eq: Option<(&IndexSet, &DVector<f64>)>,
    bands: Option<&[BandConstraint]>,
) -> Result<Constraints> {
    let h = model.matrix();
    let n = h.ncols();
    let mut con = Constraints::none(n);
    if let Some((idx, vals)) = eq {
        if idx.len() != vals.len() {
            return Err(Error::DimensionMismatch("pinned indices vs values".into()));
        }
        con.a_eq = truncate_rows(h, idx)?;
        con.b_eq = vals.clone();
    }
    if let Some(bands) = bands {
        let (a_in, b_in) = band_rows(h, bands)?;
        con.a_in = a_in;
        con.b_in = b_in;
    }
    Ok(con)
}

fn model_trajectory(model: &BehaviorModel, w: &DVector<f64>) -> Result<Trajectory> {
    Trajectory::new(
        model.q(),
        model.m(),
        model.rate(),
        w.iter().cloned().collect(),
        model.channel_names().to_vec(),
    )
}

fn require_optimal(sol: qp::Solution, what: &str) -> Result<qp::Solution> {
    match sol.status {
        SolveStatus::Optimal => Ok(sol),
        SolveStatus::MaxIters => Err(Error::MaxIters(format!(
            "{what}: worst residual ratio {:.3e} after {} iterations",
            sol.kkt.max_ratio(),
            sol.iters
        ))),
        SolveStatus::Infeasible => Err(Error::Infeasible(what.into())),
    }
}

/// Reconstruct a full window from partial observations.
pub fn recover(
    model: &BehaviorModel,
    problem: &RecoveryProblem,
    settings: &SolverSettings,
) -> Result<Recovered> {
    if problem.known_idx.is_empty() || problem.known_idx.len() > model.rows() {
        return Err(Error::InvalidParameter(format!(
            "{} known elements for a {}-row model",
            problem.known_idx.len(),
            model.rows()
        )));
    }
    let (qp, con) = assemble_recovery_qp(
        model,
        &problem.known_idx,
        &problem.known_vals,
        problem.data_weight,
        problem.lambda,
        0.0,
        0.0,
        None,
        None,
        None,
        None,
    )?;
    let sol = require_optimal(qp::solve(&qp, &con, settings)?, "recovery")?;
    let w = model.matrix() * &sol.g;
    Ok(Recovered { w: model_trajectory(model, &w)?, solver: sol })
}

/// Roll the model forward from `n_ini` known samples under a given input
/// sequence; the knowns hold within an infinity-norm band of `epsilon`.
pub fn nonparametric_simulate(
    model: &BehaviorModel,
    spec: &SimulationSpec,
    lambda: f64,
    settings: &SolverSettings,
) -> Result<Recovered> {
    let (q, m, depth) = (model.q(), model.m(), model.depth());
    if spec.n_ini == 0 || spec.n_ini >= depth {
        return Err(Error::InvalidParameter(format!(
            "n_ini = {} for depth {depth}",
            spec.n_ini
        )));
    }
    if !(spec.epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {}", spec.epsilon)));
    }
    if spec.initial.len() != q * spec.n_ini {
        return Err(Error::DimensionMismatch(format!(
            "initial has {} values, expected q*n_ini = {}",
            spec.initial.len(),
            q * spec.n_ini
        )));
    }
    if spec.inputs.len() != m * (depth - spec.n_ini) {
        return Err(Error::DimensionMismatch(format!(
            "inputs has {} values, expected m*(L - n_ini) = {}",
            spec.inputs.len(),
            m * (depth - spec.n_ini)
        )));
    }

    let mut indices: Vec<usize> = (0..q * spec.n_ini).collect();
    for s in spec.n_ini..depth {
        for c in 0..m {
            indices.push(q * s + c);
        }
    }
    let known_idx = IndexSet::new(indices);
    let known_vals = DVector::from_iterator(
        known_idx.len(),
        spec.initial.iter().chain(spec.inputs.iter()).cloned(),
    );
    let bands: Vec<BandConstraint> = known_idx
        .iter()
        .zip(known_vals.iter())
        .map(|(idx, &v)| BandConstraint { idx, center: v, halfwidth: spec.epsilon })
        .collect();

    let (qp, con) = assemble_recovery_qp(
        model,
        &known_idx,
        &known_vals,
        1.0,
        lambda,
        0.0,
        0.0,
        None,
        None,
        None,
        Some(&bands),
    )?;
    let sol = require_optimal(qp::solve(&qp, &con, settings)?, "nonparametric simulation")?;
    let w = model.matrix() * &sol.g;
    Ok(Recovered { w: model_trajectory(model, &w)?, solver: sol })
}

/// Finite differences along time of the selected channels of a length-L
/// window, as a matrix acting on the stacked trajectory. Per channel the
/// operator emits L+1 rows: interior rows are consecutive differences and the
/// two boundary rows are zero padding.
pub fn build_total_variation_operator(
    model: &BehaviorModel,
    channels: &[usize],
) -> Result<DMatrix<f64>> {
    let (q, depth) = (model.q(), model.depth());
    for &c in channels {
        if c >= q {
            return Err(Error::OutOfBounds { index: c, len: q });
        }
    }
    let mut d = DMatrix::zeros(channels.len() * (depth + 1), q * depth);
    for (ci, &c) in channels.iter().enumerate() {
        for k in 1..depth {
            let row = ci * (depth + 1) + k;
            d[(row, q * k + c)] = 1.0;
            d[(row, q * (k - 1) + c)] = -1.0;
        }
    }
    Ok(d)
}

fn rest_sample(layout: ChannelLayout, theta4: f64) -> Vec<f64> {
    let mut s = vec![0.0; layout.q()];
    s[layout.theta4()] = theta4;
    s
}

/// Assembled generation instance with the hyperparameter-independent pieces
/// precomputed, so a tuning grid can re-solve cheaply.
#[derive(Debug, Clone)]
pub struct GenerationInstance {
    pub layout: ChannelLayout,
    terms: QpTerms,
    con: Constraints,
    data_weight: f64,
    ref_weight: f64,
}

impl GenerationInstance {
    pub fn prepare(model: &BehaviorModel, spec: &TrajectoryGenSpec) -> Result<GenerationInstance> {
        let layout = ChannelLayout::from_names(model.channel_names()).ok_or_else(|| {
            Error::ChannelMismatch(format!(
                "model channels {:?} are not a crane layout",
                model.channel_names()
            ))
        })?;
        let (q, depth) = (model.q(), model.depth());
        if spec.n_given == 0 || 2 * spec.n_given >= depth {
            return Err(Error::InvalidParameter(format!(
                "n_given = {} must satisfy 1 <= n_given < L/2 = {}",
                spec.n_given,
                depth / 2
            )));
        }
        if !spec.theta4_start.is_finite() || !spec.theta4_target.is_finite() {
            return Err(Error::InvalidParameter("non-finite endpoint angle".into()));
        }
        for (name, b) in [("sway_bound", spec.sway_bound), ("input_bound", spec.input_bound)] {
            if let Some(b) = b {
                if !(b > 0.0) {
                    return Err(Error::InvalidParameter(format!("{name} = {b}")));
                }
            }
        }

        let w_start = rest_sample(layout, spec.theta4_start);
        let w_target = rest_sample(layout, spec.theta4_target);

        // knowns: resting data over the first and last n_given samples
        let known_idx = IndexSet::leading_samples(spec.n_given, q)
            .union(&IndexSet::trailing_samples(spec.n_given, depth, q));
        let mut known = Vec::with_capacity(2 * q * spec.n_given);
        for _ in 0..spec.n_given {
            known.extend_from_slice(&w_start);
        }
        for _ in 0..spec.n_given {
            known.extend_from_slice(&w_target);
        }
        let known_vals = DVector::from_vec(known);

        // reference: hold the start pose for n_given samples, then jump to target
        let mut w_ref = Vec::with_capacity(q * depth);
        for s in 0..depth {
            w_ref.extend_from_slice(if s < spec.n_given { &w_start } else { &w_target });
        }
        let w_ref = DVector::from_vec(w_ref);

        let default_tv = {
            let mut ch = vec![layout.theta4(), layout.dtheta4()];
            ch.sort_unstable();
            ch.dedup();
            ch
        };
        let tv_channels = spec.tv_channels.clone().unwrap_or(default_tv);
        let d = build_total_variation_operator(model, &tv_channels)?;

        let eq_idx =
            IndexSet::leading_samples(1, q).union(&IndexSet::trailing_samples(1, depth, q));
        let mut eq_vals = w_start.clone();
        eq_vals.extend_from_slice(&w_target);
        let eq_vals = DVector::from_vec(eq_vals);

        let mut bands = Vec::new();
        for s in 0..depth {
            if let Some(b) = spec.input_bound {
                bands.push(BandConstraint {
                    idx: q * s + layout.input(),
                    center: 0.0,
                    halfwidth: b,
                });
            }
            if let Some(b) = spec.sway_bound {
                bands.push(BandConstraint {
                    idx: q * s + layout.theta1(),
                    center: 0.0,
                    halfwidth: b,
                });
                bands.push(BandConstraint {
                    idx: q * s + layout.theta2(),
                    center: 0.0,
                    halfwidth: b,
                });
            }
        }

        let terms = QpTerms::precompute(model, &known_idx, &known_vals, Some(&w_ref), Some(&d))?;
        let con = assemble_constraints(
            model,
            spec.pin_endpoints.then_some((&eq_idx, &eq_vals)),
            (!bands.is_empty()).then_some(bands.as_slice()),
        )?;
        Ok(GenerationInstance {
            layout,
            terms,
            con,
            data_weight: spec.data_weight,
            ref_weight: spec.ref_weight,
        })
    }

    /// Solve at the given hyperparameters and extract the playback input.
    pub fn solve(
        &self,
        model: &BehaviorModel,
        lambda: f64,
        mu: f64,
        sigma: f64,
        settings: &SolverSettings,
    ) -> Result<GeneratedTrajectory> {
        let qp = self.terms.compose(self.data_weight, lambda, mu * self.ref_weight, sigma)?;
        let sol =
            require_optimal(qp::solve(&qp, &self.con, settings)?, "trajectory generation")?;
        let w = model.matrix() * &sol.g;
        let traj = model_trajectory(model, &w)?;
        let input = traj.channel(self.layout.input());
        Ok(GeneratedTrajectory { w: traj, input, solver: sol })
    }
}

/// Generate an anti-sway slewing trajectory between two resting poses by
/// solving the composite program over the model, then extract the input
/// channel for open-loop playback.
pub fn generate_trajectory(
    model: &BehaviorModel,
    spec: &TrajectoryGenSpec,
    settings: &SolverSettings,
) -> Result<GeneratedTrajectory> {
    let instance = GenerationInstance::prepare(model, spec)?;
    instance.solve(model, spec.lambda, spec.mu, spec.sigma, settings)
}

/// Indirect method: describe every window consistent with the knowns as an
/// affine set w_p + range(N), then project the reference onto it in closed
/// form. Requires noise-free data so that the knowns are met exactly.
pub fn indirect_generate(
    model: &BehaviorModel,
    known_idx: &IndexSet,
    known_vals: &DVector<f64>,
    w_ref: &DVector<f64>,
) -> Result<Trajectory> {
    if known_idx.len() != known_vals.len() {
        return Err(Error::DimensionMismatch("known indices vs values".into()));
    }
    if w_ref.len() != model.rows() {
        return Err(Error::DimensionMismatch(format!(
            "reference has {} rows, model has {}",
            w_ref.len(),
            model.rows()
        )));
    }
    let h = model.matrix();
    let h_known = truncate_rows(h, known_idx)?;
    let null = linalg::nullspace(&h_known, 1e-10);
    if null.ncols() == 0 {
        return Err(Error::DegenerateNullspace);
    }
    let g_p = linalg::min_norm_lsq(&h_known, known_vals, 1e-10);
    let w_p = h * &g_p;

    // orthonormalize H*null and drop directions H cannot distinguish
    let image = h * &null;
    let svd = nalgebra::linalg::SVD::new(image, true, false);
    let u = svd.u.as_ref().expect("requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * smax).collect();

    let diff = w_ref - &w_p;
    let mut w = w_p;
    for &i in &keep {
        let ui = u.column(i);
        w += ui * ui.dot(&diff);
    }
    model_trajectory(model, &w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hankel::build_hankel;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Damped oscillator used across these tests; output recorded after the
    /// input is applied, matching the simulator convention.
    fn lti_step(x: [f64; 2], u: f64) -> [f64; 2] {
        [0.9 * x[0] + 0.2 * x[1], -0.2 * x[0] + 0.9 * x[1] + u]
    }

    fn lti_data(seed: u64, n: usize, x0: [f64; 2]) -> Trajectory {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut x = x0;
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let u = rng.gen_range(-1.0..1.0);
            x = lti_step(x, u);
            data.push(u);
            data.push(x[0]);
        }
        Trajectory::new(2, 1, 20.0, data, vec!["u".into(), "y".into()]).unwrap()
    }

    fn lti_model(depth: usize) -> BehaviorModel {
        build_hankel(&[lti_data(21, 60, [0.0, 0.0])], depth).unwrap()
    }

    fn strict() -> SolverSettings {
        SolverSettings { tol_abs: 1e-10, tol_rel: 1e-8, ..Default::default() }
    }

    #[test]
    fn recover_known_column_exactly() {
        let model = lti_model(6);
        let col = model.matrix().column(7).into_owned();
        let problem = RecoveryProblem {
            known_idx: IndexSet::new(0..model.rows()),
            known_vals: col.clone(),
            data_weight: 1.0,
            lambda: 0.0,
        };
        let out = recover(&model, &problem, &strict()).unwrap();
        for i in 0..model.rows() {
            assert_relative_eq!(out.w.flat()[i], col[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn hidden_sample_matches_the_plant() {
        let model = lti_model(8);
        // fresh rollout from a nonzero state, never seen in the data
        let fresh = lti_data(99, 8, [0.3, -0.1]);
        let hide = 2 * 4 + 1; // output of sample 4
        let known_idx = IndexSet::new((0..model.rows()).filter(|&i| i != hide));
        let known_vals = DVector::from_iterator(
            known_idx.len(),
            known_idx.iter().map(|i| fresh.flat()[i]),
        );
        let problem = RecoveryProblem { known_idx, known_vals, data_weight: 1.0, lambda: 1e-10 };
        let out = recover(&model, &problem, &strict()).unwrap();
        assert_relative_eq!(out.w.flat()[hide], fresh.flat()[hide], epsilon = 1e-6);
    }

    #[test]
    fn heavier_weights_pull_the_fit_closer() {
        let model = lti_model(6);
        let mut vals = model.matrix().column(3).into_owned();
        let mut rng = StdRng::seed_from_u64(5);
        for v in vals.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let idx = IndexSet::new(0..model.rows());
        let lambda = 1e-3;
        let fit = |weight: f64| {
            let problem = RecoveryProblem {
                known_idx: idx.clone(),
                known_vals: vals.clone(),
                data_weight: weight,
                lambda,
            };
            let out = recover(&model, &problem, &strict()).unwrap();
            (DVector::from_vec(out.w.flat().to_vec()) - &vals).norm()
        };
        let loose = fit(1.0);
        let tight = fit(100.0);
        assert!(tight <= loose + 1e-12, "residual {tight} vs {loose}");
    }

    #[test]
    fn all_known_recovery_is_identity_for_both_layouts() {
        use crate::crane::{simulate, CraneParams, CraneState};
        for layout in [ChannelLayout::AccelerationInput, ChannelLayout::VelocityInput] {
            let params = CraneParams::default();
            let inputs: Vec<f64> = (0..140)
                .map(|k| 0.3 * (0.7 * k as f64 / 20.0).sin() + 0.2 * (1.3 * k as f64 / 20.0).sin())
                .collect();
            let traj =
                simulate(&params, &CraneState::rest_at(0.0), &inputs, 20.0, layout, None).unwrap();
            let model = build_hankel(&[traj], 12).unwrap();
            let col = model.matrix().column(30).into_owned();
            // the l1 term biases the fit by about lambda over the squared
            // smallest singular value, so keep lambda well below what the
            // tolerance can absorb on an ill-conditioned window matrix
            let problem = RecoveryProblem {
                known_idx: IndexSet::new(0..model.rows()),
                known_vals: col.clone(),
                data_weight: 1.0,
                lambda: 1e-10,
            };
            let out = recover(&model, &problem, &strict()).unwrap();
            for i in 0..model.rows() {
                assert_relative_eq!(out.w.flat()[i], col[i], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn simulate_zero_data_stays_at_zero() {
        let model = lti_model(8);
        let spec = SimulationSpec {
            n_ini: 2,
            epsilon: 1e-6,
            initial: vec![0.0; 4],
            inputs: vec![0.0; 6],
        };
        let out = nonparametric_simulate(&model, &spec, 1.0, &strict()).unwrap();
        let peak = out.w.flat().iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        assert!(peak <= 2e-6, "peak {peak}");
    }

    #[test]
    fn simulate_reproduces_fresh_rollout() {
        let model = lti_model(10);
        let fresh = lti_data(123, 10, [0.0, 0.0]);
        let n_ini = 2;
        let spec = SimulationSpec {
            n_ini,
            epsilon: 1e-6,
            initial: fresh.window(0, n_ini).to_vec(),
            inputs: (n_ini..10).map(|k| fresh.value(k, 0)).collect(),
        };
        let out = nonparametric_simulate(&model, &spec, 1e-3, &strict()).unwrap();
        for k in 0..10 {
            assert_relative_eq!(out.w.value(k, 0), fresh.value(k, 0), epsilon = 1e-5);
            assert_relative_eq!(out.w.value(k, 1), fresh.value(k, 1), epsilon = 1e-4);
        }
    }

    #[test]
    fn difference_operator_examples() {
        let model = lti_model(5);
        let d = build_total_variation_operator(&model, &[1]).unwrap();
        assert_eq!(d.nrows(), 6);
        assert_eq!(d.ncols(), 10);

        // constant channel -> all zero
        let mut w = DVector::zeros(10);
        for s in 0..5 {
            w[2 * s + 1] = 3.5;
        }
        assert_eq!((&d * &w).norm(), 0.0);

        // ramp with step h -> interior rows h, boundary rows zero-padded
        for s in 0..5 {
            w[2 * s + 1] = 0.25 * s as f64;
        }
        let dw = &d * &w;
        assert_eq!(dw[0], 0.0);
        assert_eq!(dw[5], 0.0);
        for k in 1..5 {
            assert_relative_eq!(dw[k], 0.25, epsilon = 1e-14);
        }

        // quadratic-form identity against direct summation
        let g = DVector::from_fn(model.cols(), |i, _| (i as f64 * 0.37).sin());
        let hg = model.matrix() * &g;
        let via_d = (&d * &hg).norm_squared();
        let direct: f64 = (1..5).map(|k| (hg[2 * k + 1] - hg[2 * (k - 1) + 1]).powi(2)).sum();
        assert_relative_eq!(via_d, direct, max_relative = 1e-12);
    }

    #[test]
    fn objective_matches_directly_evaluated_cost() {
        let model = lti_model(6);
        let rows = model.rows();
        let known_idx = IndexSet::new((0..rows).step_by(3));
        let known_vals = DVector::from_fn(known_idx.len(), |i, _| (i as f64 * 0.31).cos());
        let w_ref = DVector::from_fn(rows, |i, _| (i as f64 * 0.11).sin());
        let d = build_total_variation_operator(&model, &[0, 1]).unwrap();
        let (weight, lambda, mu, sigma) = (1.3, 0.2, 0.7, 0.4);
        let (qp, _) = assemble_recovery_qp(
            &model,
            &known_idx,
            &known_vals,
            weight,
            lambda,
            mu,
            sigma,
            Some(&w_ref),
            Some(&d),
            None,
            None,
        )
        .unwrap();
        let g = DVector::from_fn(model.cols(), |i, _| (i as f64 * 0.17).sin());
        let hg = model.matrix() * &g;
        let fit: f64 = known_idx
            .iter()
            .enumerate()
            .map(|(k, i)| weight * (hg[i] - known_vals[k]).powi(2))
            .sum();
        let reference = mu * (&hg - &w_ref).norm_squared();
        let smooth = sigma * (&d * &hg).norm_squared();
        let l1: f64 = lambda * g.iter().map(|v| v.abs()).sum::<f64>();
        let direct = fit + reference + smooth + l1;
        // constant offset: the assembled quadratic drops the g-independent terms
        let offset = weight * known_vals.norm_squared() + mu * w_ref.norm_squared();
        assert_relative_eq!(qp.objective(&g) + offset, direct, max_relative = 1e-10);
    }

    #[test]
    fn square_invertible_model_solves_linearly() {
        // H square invertible, everything known, no regularization -> g = H^{-1} w
        let mut rng = StdRng::seed_from_u64(31);
        let h = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
        let model = BehaviorModel::from_parts(
            h.clone(),
            4,
            2,
            1,
            20.0,
            false,
            vec!["u".into(), "y".into()],
            Default::default(),
        )
        .unwrap();
        let w = DVector::from_fn(8, |i, _| (i as f64).sin());
        let problem = RecoveryProblem {
            known_idx: IndexSet::new(0..8),
            known_vals: w.clone(),
            data_weight: 1.0,
            lambda: 0.0,
        };
        let out = recover(&model, &problem, &strict()).unwrap();
        let g_direct = h.lu().solve(&w).unwrap();
        for i in 0..8 {
            assert_relative_eq!(out.solver.g[i], g_direct[i], epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn indirect_projection_is_orthogonal_and_pins_knowns() {
        let model = lti_model(8);
        let q = 2;
        let known_idx = IndexSet::leading_samples(2, q).union(&IndexSet::trailing_samples(2, 8, q));
        // consistent knowns: taken from an actual model column
        let col = model.matrix().column(11).into_owned();
        let known_vals =
            DVector::from_iterator(known_idx.len(), known_idx.iter().map(|i| col[i]));
        let w_ref = DVector::from_fn(model.rows(), |i, _| 0.1 * (i as f64 * 0.23).cos());
        let w = indirect_generate(&model, &known_idx, &known_vals, &w_ref).unwrap();
        let w_vec = DVector::from_vec(w.flat().to_vec());

        for (k, i) in known_idx.iter().enumerate() {
            assert_relative_eq!(w_vec[i], known_vals[k], epsilon = 1e-8);
        }
        // residual orthogonal to the feasible directions
        let h_known = truncate_rows(model.matrix(), &known_idx).unwrap();
        let null = crate::linalg::nullspace(&h_known, 1e-10);
        let image = model.matrix() * &null;
        let resid = image.tr_mul(&(&w_vec - &w_ref));
        assert!(
            crate::linalg::inf_norm(&resid) <= 1e-8 * (1.0 + w_ref.norm()),
            "projection residual {resid:?}"
        );
    }

    #[test]
    fn indirect_rejects_pinned_down_problems() {
        // square invertible model: the knowns determine g uniquely
        let mut rng = StdRng::seed_from_u64(77);
        let h = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0)) + DMatrix::identity(6, 6) * 3.0;
        let model = BehaviorModel::from_parts(
            h,
            3,
            2,
            1,
            20.0,
            false,
            vec!["u".into(), "y".into()],
            Default::default(),
        )
        .unwrap();
        let idx = IndexSet::new(0..6);
        let vals = DVector::zeros(6);
        let w_ref = DVector::zeros(6);
        assert!(matches!(
            indirect_generate(&model, &idx, &vals, &w_ref),
            Err(Error::DegenerateNullspace)
        ));
    }

    #[test]
    fn direct_and_indirect_methods_agree_in_the_data_dominant_limit() {
        let model = lti_model(8);
        let q = 2;
        let known_idx = IndexSet::leading_samples(2, q).union(&IndexSet::trailing_samples(2, 8, q));
        let col = model.matrix().column(5).into_owned();
        let known_vals =
            DVector::from_iterator(known_idx.len(), known_idx.iter().map(|i| col[i]));
        let w_ref = DVector::from_fn(model.rows(), |i, _| 0.2 * (i as f64 * 0.4).sin());

        let indirect = indirect_generate(&model, &known_idx, &known_vals, &w_ref).unwrap();

        // direct: data term dominating the reference term by 1e6
        let (qp, con) = assemble_recovery_qp(
            &model,
            &known_idx,
            &known_vals,
            1e6,
            0.0,
            1.0,
            0.0,
            Some(&w_ref),
            None,
            None,
            None,
        )
        .unwrap();
        let sol = qp::solve(&qp, &con, &strict()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let w_direct = model.matrix() * &sol.g;
        for i in 0..model.rows() {
            assert_relative_eq!(w_direct[i], indirect.flat()[i], epsilon = 1e-3);
        }
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        let model = lti_model(5);
        let problem = RecoveryProblem {
            known_idx: IndexSet::new(0..4),
            known_vals: DVector::zeros(3),
            data_weight: 1.0,
            lambda: 0.0,
        };
        assert!(recover(&model, &problem, &SolverSettings::default()).is_err());

        let spec = SimulationSpec { n_ini: 0, epsilon: 1e-6, initial: vec![], inputs: vec![0.0; 10] };
        assert!(nonparametric_simulate(&model, &spec, 0.0, &SolverSettings::default()).is_err());

        assert!(build_total_variation_operator(&model, &[7]).is_err());
    }
}
