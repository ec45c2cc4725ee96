//! File formats: trajectory CSV, behavior-model binary + JSON sidecar, and
//! JSON manifests.
//!
//! Every artifact embeds the configuration hash and seed so reruns can be
//! checked byte-for-byte. CSVs are plain text with 15 significant digits;
//! model matrices are raw little-endian f64, column-major, with their shape
//! and metadata in a JSON sidecar next to the binary.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::Error;
use crate::hankel::{BehaviorModel, Hyperparams};
use crate::trajectory::{ChannelLayout, Trajectory};
use crate::Result;

/// Provenance stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FileMeta {
    pub config_hash: String,
    pub seed: u64,
}

impl FileMeta {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self { config_hash: config_hash.into(), seed }
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), reason: reason.into() }
}

fn meta_line(meta: &FileMeta) -> String {
    format!("# config_hash={} seed={}", meta.config_hash, meta.seed)
}

fn parse_meta_line(path: &Path, line: &str) -> Result<FileMeta> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| format_err(path, "missing `# config_hash=... seed=...` header"))?;
    let mut hash = None;
    let mut seed = None;
    for field in body.split_whitespace() {
        if let Some(v) = field.strip_prefix("config_hash=") {
            hash = Some(v.to_string());
        } else if let Some(v) = field.strip_prefix("seed=") {
            seed = Some(
                v.parse::<u64>().map_err(|e| format_err(path, format!("bad seed: {e}")))?,
            );
        }
    }
    match (hash, seed) {
        (Some(config_hash), Some(seed)) => Ok(FileMeta { config_hash, seed }),
        _ => Err(format_err(path, "header must carry config_hash and seed")),
    }
}

/// CSV with a provenance comment, a `t,<channels>` header, and one row per
/// sample at 1/rate spacing.
pub fn write_trajectory_csv(path: &Path, t: &Trajectory, meta: &FileMeta) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{}", meta_line(meta))?;
    writeln!(out, "t,{}", t.channel_names().join(","))?;
    for k in 0..t.len() {
        write!(out, "{:.14e}", k as f64 / t.rate())?;
        for c in 0..t.q() {
            write!(out, ",{:.14e}", t.value(k, c))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<(Trajectory, FileMeta)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let meta = parse_meta_line(path, lines.next().unwrap_or_default())?;
    let header = lines.next().ok_or_else(|| format_err(path, "missing column header"))?;
    let mut cols = header.split(',');
    if cols.next() != Some("t") {
        return Err(format_err(path, "first column must be t"));
    }
    let names: Vec<String> = cols.map(str::to_string).collect();
    if names.is_empty() {
        return Err(format_err(path, "no data channels"));
    }
    let q = names.len();

    let mut times = Vec::new();
    let mut data = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.ok_or_else(|| format_err(path, format!("row {i}: too few fields")))?
                .parse::<f64>()
                .map_err(|e| format_err(path, format!("row {i}: {e}")))
        };
        times.push(parse(fields.next())?);
        for _ in 0..q {
            data.push(parse(fields.next())?);
        }
        if fields.next().is_some() {
            return Err(format_err(path, format!("row {i}: too many fields")));
        }
    }
    if times.len() < 2 {
        return Err(format_err(path, "need at least two samples to recover the rate"));
    }
    // written times are k/rate; snap the reciprocal to cancel print roundoff
    let rate = (1e9 / times[1]).round() / 1e9;
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(format_err(path, format!("bad time spacing {}", times[1])));
    }
    let m = ChannelLayout::from_names(&names).map_or(1, |l| l.m());
    let t = Trajectory::new(q, m, rate, data, names)?;
    Ok((t, meta))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ModelSidecar {
    config_hash: String,
    seed: u64,
    rows: usize,
    cols: usize,
    depth: usize,
    q: usize,
    m: usize,
    rate: f64,
    is_hankel: bool,
    channel_names: Vec<String>,
    hyper: Hyperparams,
}

/// Persist a model at `<stem>.bin` (matrix) + `<stem>.json` (shape, channel
/// metadata, hyperparameters, provenance).
pub fn write_model(stem: &Path, model: &BehaviorModel, meta: &FileMeta) -> Result<()> {
    let side = ModelSidecar {
        config_hash: meta.config_hash.clone(),
        seed: meta.seed,
        rows: model.rows(),
        cols: model.cols(),
        depth: model.depth(),
        q: model.q(),
        m: model.m(),
        rate: model.rate(),
        is_hankel: model.is_hankel(),
        channel_names: model.channel_names().to_vec(),
        hyper: model.hyper(),
    };
    write_json(&stem.with_extension("json"), &side)?;

    let mut out = BufWriter::new(fs::File::create(stem.with_extension("bin"))?);
    for v in model.matrix().iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_model(stem: &Path) -> Result<(BehaviorModel, FileMeta)> {
    let side: ModelSidecar = read_json(&stem.with_extension("json"))?;
    let bin_path = stem.with_extension("bin");
    let bytes = fs::read(&bin_path)?;
    let expected = side.rows * side.cols * 8;
    if bytes.len() != expected {
        return Err(format_err(
            &bin_path,
            format!("expected {expected} bytes for {}x{}, found {}", side.rows, side.cols, bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")));
    let matrix = DMatrix::from_iterator(side.rows, side.cols, values);
    let model = BehaviorModel::from_parts(
        matrix,
        side.depth,
        side.q,
        side.m,
        side.rate,
        side.is_hankel,
        side.channel_names,
        side.hyper,
    )?;
    Ok((model, FileMeta { config_hash: side.config_hash, seed: side.seed }))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| format_err(path, format!("serialize: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

/// Generic numeric table (tuning grids, comparison summaries) with the same
/// provenance header as trajectory CSVs.
pub fn write_table_csv(
    path: &Path,
    meta: &FileMeta,
    header: &[&str],
    rows: &[Vec<f64>],
) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{}", meta_line(meta))?;
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::DimensionMismatch(format!(
                "table row has {} fields, header {}",
                row.len(),
                header.len()
            )));
        }
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.14e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crane::{simulate, CraneParams, CraneState};
    use crate::hankel::build_hankel;

    fn sample_trajectory() -> Trajectory {
        let accel: Vec<f64> = (0..80).map(|k| 0.02 * (0.3 * k as f64).sin()).collect();
        simulate(
            &CraneParams::default(),
            &CraneState::rest_at(0.4),
            &accel,
            20.0,
            ChannelLayout::AccelerationInput,
            None,
        )
        .unwrap()
    }

    #[test]
    fn trajectory_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let t = sample_trajectory();
        let meta = FileMeta::new("abc123", 7);
        write_trajectory_csv(&path, &t, &meta).unwrap();

        let (back, meta_back) = read_trajectory_csv(&path).unwrap();
        assert_eq!(meta_back, meta);
        assert_eq!(back.q(), t.q());
        assert_eq!(back.m(), t.m());
        assert_eq!(back.rate(), t.rate());
        assert_eq!(back.channel_names(), t.channel_names());
        assert_eq!(back.len(), t.len());
        for k in 0..t.len() {
            for c in 0..t.q() {
                let (a, b) = (t.value(k, c), back.value(k, c));
                assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()), "({k},{c}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn rewriting_a_read_trajectory_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.csv");
        let second = dir.path().join("b.csv");
        write_trajectory_csv(&first, &sample_trajectory(), &FileMeta::new("ffff", 3)).unwrap();
        let (t, meta) = read_trajectory_csv(&first).unwrap();
        write_trajectory_csv(&second, &t, &meta).unwrap();
        assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let model = build_hankel(&[sample_trajectory()], 12).unwrap();
        write_model(&stem, &model, &FileMeta::new("00ff", 1)).unwrap();

        let (back, meta) = read_model(&stem).unwrap();
        assert_eq!(meta, FileMeta::new("00ff", 1));
        assert_eq!(back.matrix(), model.matrix());
        assert_eq!(back.depth(), model.depth());
        assert_eq!(back.q(), model.q());
        assert_eq!(back.m(), model.m());
        assert_eq!(back.rate(), model.rate());
        assert_eq!(back.is_hankel(), model.is_hankel());
        assert_eq!(back.channel_names(), model.channel_names());
    }

    #[test]
    fn malformed_files_are_rejected_with_context() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");

        fs::write(&path, "t,theta4\n0.0,1.0\n").unwrap();
        assert!(matches!(read_trajectory_csv(&path), Err(Error::Format { .. })));

        fs::write(&path, "# config_hash=x seed=1\nq,theta4\n").unwrap();
        assert!(matches!(read_trajectory_csv(&path), Err(Error::Format { .. })));

        fs::write(&path, "# config_hash=x seed=1\nt,a\n0.0,0.0\n5.0e-2,1.0,9.0\n").unwrap();
        assert!(matches!(read_trajectory_csv(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("settings.json");
        let settings = crate::qp::SolverSettings::default();
        write_json(&path, &settings).unwrap();
        let back: crate::qp::SolverSettings = read_json(&path).unwrap();
        assert_eq!(back.max_iters, settings.max_iters);
        assert_eq!(back.rho, settings.rho);
    }
}
