//! Multichannel trajectories and index sets over their flattened form.
//!
//! A length-N trajectory with q channels flattens sample-major into a vector of
//! length qN: sample k occupies entries kq..(k+1)q. The first m channels of every
//! sample are inputs, the rest outputs. All indexing is 0-based.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::Result;

/// Channel conventions for crane data.
///
/// Both layouts put the single input first, so m = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ChannelLayout {
    /// Simulation convention, q = 5: boom acceleration input followed by
    /// tangential sway, radial sway, boom angle, boom rate.
    AccelerationInput,
    /// Hardware convention, q = 4: boom rate input followed by tangential
    /// sway, radial sway, boom angle.
    VelocityInput,
}

impl ChannelLayout {
    pub fn q(self) -> usize {
        match self {
            ChannelLayout::AccelerationInput => 5,
            ChannelLayout::VelocityInput => 4,
        }
    }

    pub fn m(self) -> usize {
        1
    }

    pub fn channel_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            ChannelLayout::AccelerationInput => &["ddtheta4", "theta1", "theta2", "theta4", "dtheta4"],
            ChannelLayout::VelocityInput => &["dtheta4", "theta1", "theta2", "theta4"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn input(self) -> usize {
        0
    }

    /// Tangential pendulum angle.
    pub fn theta1(self) -> usize {
        1
    }

    /// Radial pendulum angle.
    pub fn theta2(self) -> usize {
        2
    }

    /// Boom slewing angle.
    pub fn theta4(self) -> usize {
        3
    }

    /// Boom slewing rate.
    pub fn dtheta4(self) -> usize {
        match self {
            ChannelLayout::AccelerationInput => 4,
            ChannelLayout::VelocityInput => 0,
        }
    }

    /// Recover the layout from recorded channel names.
    pub fn from_names(names: &[String]) -> Option<ChannelLayout> {
        for layout in [ChannelLayout::AccelerationInput, ChannelLayout::VelocityInput] {
            if names == layout.channel_names().as_slice() {
                return Some(layout);
            }
        }
        None
    }
}

/// A uniformly sampled multichannel signal with the first `m` channels
/// interpreted as inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    q: usize,
    m: usize,
    rate: f64,
    /// Sample-major: entry k*q + c is channel c of sample k.
    data: Vec<f64>,
    channel_names: Vec<String>,
}

impl Trajectory {
    pub fn new(
        q: usize,
        m: usize,
        rate: f64,
        data: Vec<f64>,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidParameter("q must be at least 1".into()));
        }
        if m > q {
            return Err(Error::InvalidParameter(format!("m = {m} exceeds q = {q}")));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidParameter(format!("rate = {rate} must be positive")));
        }
        if data.len() % q != 0 {
            return Err(Error::DimensionMismatch(format!(
                "data length {} is not a multiple of q = {q}",
                data.len()
            )));
        }
        if channel_names.len() != q {
            return Err(Error::DimensionMismatch(format!(
                "{} channel names for q = {q}",
                channel_names.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("trajectory contains non-finite values".into()));
        }
        Ok(Self { q, m, rate, data, channel_names })
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

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.data.len() / self.q
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.rate
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.data[k * self.q..(k + 1) * self.q]
    }

    pub fn value(&self, k: usize, channel: usize) -> f64 {
        self.data[k * self.q + channel]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.value(k, c)).collect()
    }

    /// Flattened window of `depth` samples starting at sample `start`.
    pub fn window(&self, start: usize, depth: usize) -> &[f64] {
        &self.data[start * self.q..(start + depth) * self.q]
    }

    /// First `depth` samples as a new trajectory.
    pub fn head(&self, depth: usize) -> Result<Trajectory> {
        if depth > self.len() {
            return Err(Error::TooShort { len: self.len(), depth });
        }
        Trajectory::new(
            self.q,
            self.m,
            self.rate,
            self.window(0, depth).to_vec(),
            self.channel_names.clone(),
        )
    }

    /// Rebuild a trajectory from a flattened vector using this one's metadata.
    pub fn with_flat(&self, flat: &DVector<f64>) -> Result<Trajectory> {
        Trajectory::new(
            self.q,
            self.m,
            self.rate,
            flat.iter().copied().collect(),
            self.channel_names.clone(),
        )
    }
}

/// Strictly increasing 0-based indices into a flattened trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    /// Sorts and deduplicates the given indices.
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        IndexSet(v)
    }

    /// All channels of the given samples.
    pub fn from_samples(samples: impl IntoIterator<Item = usize>, q: usize) -> Self {
        Self::new(samples.into_iter().flat_map(|k| (k * q)..(k + 1) * q))
    }

    /// All channels of the first `n` samples.
    pub fn leading_samples(n: usize, q: usize) -> Self {
        Self::from_samples(0..n, q)
    }

    /// All channels of the last `n` of `depth` samples.
    pub fn trailing_samples(n: usize, depth: usize, q: usize) -> Self {
        Self::from_samples(depth.saturating_sub(n)..depth, q)
    }

    /// One channel across a range of samples.
    pub fn channel_over(channel: usize, samples: std::ops::Range<usize>, q: usize) -> Self {
        Self::new(samples.map(|k| k * q + channel))
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        Self::new(self.0.iter().chain(other.0.iter()).copied())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    /// Composition: `self` applied first, then `relative` into the result.
    pub fn compose(&self, relative: &IndexSet) -> Result<IndexSet> {
        let mut out = Vec::with_capacity(relative.len());
        for r in relative.iter() {
            let idx = *self.0.get(r).ok_or(Error::OutOfBounds { index: r, len: self.0.len() })?;
            out.push(idx);
        }
        Ok(IndexSet::new(out))
    }
}

/// Restriction of a flattened trajectory to an index set.
pub fn truncate_vector(w: &DVector<f64>, idx: &IndexSet) -> Result<DVector<f64>> {
    if let Some(max) = idx.max() {
        if max >= w.len() {
            return Err(Error::OutOfBounds { index: max, len: w.len() });
        }
    }
    Ok(DVector::from_iterator(idx.len(), idx.iter().map(|i| w[i])))
}

/// Row restriction of a matrix whose rows follow the flattened layout.
pub fn truncate_rows(mat: &DMatrix<f64>, idx: &IndexSet) -> Result<DMatrix<f64>> {
    if let Some(max) = idx.max() {
        if max >= mat.nrows() {
            return Err(Error::OutOfBounds { index: max, len: mat.nrows() });
        }
    }
    let mut out = DMatrix::zeros(idx.len(), mat.ncols());
    for (r, i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from(&mat.row(i));
    }
    Ok(out)
}
