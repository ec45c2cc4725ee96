//! Nonparametric behavioral models built from trajectory data.
//!
//! Sliding length-L windows of recorded trajectories, flattened sample-major,
//! form the columns of a depth-L block Hankel matrix. If the data is rich
//! enough, every length-L trajectory the system can produce is a linear
//! combination of those columns, so the matrix itself acts as the model.
//! Several sequences concatenate into a mosaic of Hankel blocks. Column subset
//! selection and singular-value truncation produce smaller or denoised models
//! whose columns are no longer raw data windows (`is_hankel` turns false).

use nalgebra::DMatrix;

use crate::error::Error;
use crate::linalg;
use crate::trajectory::Trajectory;
use crate::Result;

/// Reduction steps applied after the raw Hankel construction.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Hyperparams {
    /// Number of columns kept by pivoted-QR selection.
    pub nu: Option<usize>,
    /// Singular-value threshold used for denoising.
    pub delta: Option<f64>,
}

/// A behavioral model: a qL x c matrix whose column span approximates the set
/// of length-L trajectories, plus the metadata needed to interpret its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorModel {
    matrix: DMatrix<f64>,
    depth: usize,
    q: usize,
    m: usize,
    rate: f64,
    is_hankel: bool,
    channel_names: Vec<String>,
    hyper: Hyperparams,
}

impl BehaviorModel {
    /// Assemble a model from raw parts (used by persistence and tests).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        matrix: DMatrix<f64>,
        depth: usize,
        q: usize,
        m: usize,
        rate: f64,
        is_hankel: bool,
        channel_names: Vec<String>,
        hyper: Hyperparams,
    ) -> Result<Self> {
        if depth == 0 || q == 0 {
            return Err(Error::InvalidParameter("depth and q must be at least 1".into()));
        }
        if matrix.nrows() != q * depth {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} rows, expected q*L = {}",
                matrix.nrows(),
                q * depth
            )));
        }
        if channel_names.len() != q {
            return Err(Error::DimensionMismatch("channel name count != q".into()));
        }
        if m > q || !(rate > 0.0) {
            return Err(Error::InvalidParameter("bad m or rate".into()));
        }
        Ok(Self { matrix, depth, q, m, rate, is_hankel, channel_names, hyper })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn is_hankel(&self) -> bool {
        self.is_hankel
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn hyper(&self) -> Hyperparams {
        self.hyper
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Stack sliding windows of the given trajectories into a mosaic Hankel model.
///
/// Sequence j contributes N_j - L + 1 columns, in window order; sequences keep
/// their given order. All trajectories must agree on channel count, input
/// count, rate, and channel names.
pub fn build_hankel(trajectories: &[Trajectory], depth: usize) -> Result<BehaviorModel> {
    if depth == 0 {
        return Err(Error::InvalidParameter("depth must be at least 1".into()));
    }
    let first = trajectories
        .first()
        .ok_or_else(|| Error::InvalidParameter("no trajectories given".into()))?;
    let (q, m, rate) = (first.q(), first.m(), first.rate());
    let names = first.channel_names().to_vec();
    let mut cols = 0usize;
    for t in trajectories {
        if t.q() != q || t.m() != m || t.rate() != rate || t.channel_names() != names.as_slice() {
            return Err(Error::ChannelMismatch(format!(
                "expected q={q} m={m} rate={rate}, got q={} m={} rate={}",
                t.q(),
                t.m(),
                t.rate()
            )));
        }
        if t.len() < depth {
            return Err(Error::TooShort { len: t.len(), depth });
        }
        cols += t.len() - depth + 1;
    }

    let rows = q * depth;
    let mut data = Vec::with_capacity(rows * cols);
    for t in trajectories {
        for start in 0..=(t.len() - depth) {
            data.extend_from_slice(t.window(start, depth));
        }
    }
    let matrix = DMatrix::from_vec(rows, cols, data);
    BehaviorModel::from_parts(matrix, depth, q, m, rate, true, names, Hyperparams::default())
}

/// Rank diagnostic for the identifiability condition rank = mL + n.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RankReport {
    pub rank: usize,
    /// mL + n for the hypothesized order n.
    pub required: usize,
    pub satisfied: bool,
    pub sigma_max: f64,
    pub rel_tol: f64,
}

/// Numerical rank of the model at a 1e-10 relative singular-value tolerance,
/// compared against mL + n for a hypothesized system order n. Meaningful for
/// raw Hankel models; reductions change the span on purpose.
pub fn identifiability_rank(model: &BehaviorModel, order_hypothesis: usize) -> RankReport {
    let rel_tol = 1e-10;
    let (rank, sigma_max) = linalg::numerical_rank(model.matrix(), rel_tol);
    let required = model.m() * model.depth() + order_hypothesis;
    RankReport { rank, required, satisfied: rank == required, sigma_max, rel_tol }
}

/// Keep the first min(nu, c) columns in column-pivoted QR order.
///
/// Returns the reduced model and the pivot sequence (indices into the original
/// columns, in selection order).
pub fn select_columns_qr(model: &BehaviorModel, nu: usize) -> Result<(BehaviorModel, Vec<usize>)> {
    if nu == 0 {
        return Err(Error::InvalidParameter("nu must be at least 1".into()));
    }
    let keep = nu.min(model.cols());
    let pivots = linalg::pivoted_columns(model.matrix(), keep);
    let mut matrix = DMatrix::zeros(model.rows(), keep);
    for (k, &j) in pivots.iter().enumerate() {
        matrix.column_mut(k).copy_from(&model.matrix().column(j));
    }
    let reduced = BehaviorModel::from_parts(
        matrix,
        model.depth(),
        model.q(),
        model.m(),
        model.rate(),
        false,
        model.channel_names().to_vec(),
        Hyperparams { nu: Some(nu), ..model.hyper() },
    )?;
    Ok((reduced, pivots))
}

/// How the denoising threshold is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum ThresholdMode {
    /// Threshold is delta * sigma_max.
    #[default]
    Relative,
    /// Threshold is delta itself.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenoiseReport {
    pub kept: usize,
    pub zeroed: usize,
    pub sigma_max: f64,
    pub threshold: f64,
}

/// Zero every singular value below the threshold and rebuild the matrix.
pub fn denoise_svd(
    model: &BehaviorModel,
    delta: f64,
    mode: ThresholdMode,
) -> Result<(BehaviorModel, DenoiseReport)> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::InvalidParameter(format!("delta = {delta} must be non-negative")));
    }
    let factors = linalg::svd_factors(model.matrix());
    let sigma_max = factors.sigmas.first().copied().unwrap_or(0.0);
    let threshold = match mode {
        ThresholdMode::Relative => delta * sigma_max,
        ThresholdMode::Absolute => delta,
    };
    let (matrix, kept) = linalg::truncate_with_factors(model.matrix(), &factors, threshold);
    let zeroed = factors.sigmas.len() - kept;
    let denoised = BehaviorModel::from_parts(
        matrix,
        model.depth(),
        model.q(),
        model.m(),
        model.rate(),
        false,
        model.channel_names().to_vec(),
        Hyperparams { delta: Some(delta), ..model.hyper() },
    )?;
    Ok((denoised, DenoiseReport { kept, zeroed, sigma_max, threshold }))
}
