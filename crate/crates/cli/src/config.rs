//! Run configuration shared by every subcommand.
//!
//! A single file (TOML or JSON, chosen by extension) describes the crane, the
//! data-collection campaign, the model, the scenario, and the tuning grids;
//! command-line flags override individual fields after loading. Artifacts are
//! stamped with a hash of the resolved configuration so reruns can be checked
//! byte-for-byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use slewgen::crane::{CraneParams, NoiseSpec};
use slewgen::excitation::SumOfSinesSpec;
use slewgen::qp::SolverSettings;
use slewgen::waypoint::Bounds;
use slewgen::{ChannelLayout, Error, Result};

/// Which channel layout the recorded data uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Boom acceleration as the input plus the boom-rate channel (q = 5).
    #[default]
    Acceleration,
    /// Commanded boom rate as the input, no rate measurement (q = 4).
    Velocity,
}

impl Mode {
    pub fn layout(self) -> ChannelLayout {
        match self {
            Mode::Acceleration => ChannelLayout::AccelerationInput,
            Mode::Velocity => ChannelLayout::VelocityInput,
        }
    }
}

/// Data-collection campaign: how many excitation records to simulate and
/// whether to corrupt the recorded outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub runs: usize,
    /// Resting boom angle the campaign starts from.
    pub start: f64,
    pub noise: Option<NoiseSpec>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { runs: 2, start: 0.0, noise: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    /// Hankel depth L.
    pub depth: usize,
    /// Hypothesized system order for the rank diagnostic.
    pub order: usize,
    /// Keep this many columns in pivot order (all when absent).
    pub nu: Option<usize>,
    /// Relative singular-value threshold for denoising (none when absent).
    pub delta: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { depth: 300, order: 6, nu: None, delta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSection {
    pub n_ini: usize,
    pub epsilon: f64,
    pub lambda: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { n_ini: 3, epsilon: 1e-6, lambda: 1e-5 }
    }
}

/// Slewing scenario for trajectory generation, tuning, and the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSection {
    pub start: f64,
    pub target: f64,
    pub n_given: usize,
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
    pub data_weight: f64,
    pub ref_weight: f64,
    pub sway_bound: Option<f64>,
    pub input_bound: Option<f64>,
    /// Seconds of zero input appended after the motion when rolling out.
    pub hold: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            start: 3.0 * std::f64::consts::PI / 8.0,
            target: 5.0 * std::f64::consts::PI / 8.0,
            n_given: 10,
            lambda: 1e-4,
            mu: 1.0,
            sigma: 1.0,
            data_weight: 1.0,
            ref_weight: 1.0,
            sway_bound: Some(0.035),
            input_bound: Some(0.6),
            hold: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneSimSection {
    pub deltas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub nus: Vec<usize>,
    /// Hold out this many trailing data files as the test set.
    pub n_test: usize,
    pub n_ini: usize,
    pub epsilon: f64,
    /// Channels the prediction error is scored on (all when empty).
    pub score_channels: Vec<usize>,
}

impl Default for TuneSimSection {
    fn default() -> Self {
        Self {
            deltas: vec![0.0, 0.01, 0.03],
            lambdas: vec![1e-5, 1e-3],
            nus: vec![400, 800],
            n_test: 2,
            n_ini: 3,
            epsilon: 0.02,
            score_channels: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneTrajSection {
    pub lambdas: Vec<f64>,
    pub mus: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub weights: [f64; 7],
    /// Score simulator rollouts of each candidate, not just predictions.
    pub rollout: bool,
}

impl Default for TuneTrajSection {
    fn default() -> Self {
        Self {
            lambdas: vec![1e-5, 1e-4, 1e-3],
            mus: vec![0.5, 1.0, 2.0],
            sigmas: vec![0.1, 1.0, 10.0],
            weights: [1.0; 7],
            rollout: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllabilitySection {
    pub n_states: usize,
    /// Half-width of the uniform draw for sway angles and rates.
    pub sway_range: f64,
    pub rate_range: f64,
}

impl Default for ControllabilitySection {
    fn default() -> Self {
        Self { n_states: 1000, sway_range: 0.5, rate_range: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub mode: Mode,
    pub crane: CraneParams,
    pub excitation: SumOfSinesSpec,
    pub data: DataSection,
    pub model: ModelSection,
    pub simulate: SimulateSection,
    pub scenario: ScenarioSection,
    pub tune_sim: TuneSimSection,
    pub tune_traj: TuneTrajSection,
    pub bounds: Bounds,
    pub controllability: ControllabilitySection,
    pub solver: SolverSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            mode: Mode::default(),
            crane: CraneParams::default(),
            excitation: SumOfSinesSpec::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            simulate: SimulateSection::default(),
            scenario: ScenarioSection::default(),
            tune_sim: TuneSimSection::default(),
            tune_traj: TuneTrajSection::default(),
            bounds: Bounds::default(),
            controllability: ControllabilitySection::default(),
            solver: SolverSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let bad = |reason: String| Error::Format { path: path.display().to_string(), reason };
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))
        }
    }

    /// Hash of the resolved configuration. The artifact directory is excluded
    /// so relocating a run does not change its identity.
    pub fn hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.out_dir = PathBuf::new();
        let canonical =
            serde_json::to_string(&normalized).expect("config serialization is infallible");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
