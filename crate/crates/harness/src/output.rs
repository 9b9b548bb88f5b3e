//! Run logs as JSONL, `summary.csv`, and 8-bit PGM map dumps.
//!
//! One JSON object per line:
//!
//! ```text
//! {"t":12,"kind":"interact","action":[3,14,9],"outcome":0,"loss":0.0712}
//! {"t":25,"kind":"ckpt","success_rate":0.35}
//! ```
//!
//! A loss of NaN (no updates configured) is written as `null`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use afford_core::trainer::{Record, RunLog, Snapshot};
use afford_core::{ActionSpec, Outcome};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::ExperimentSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Interact,
    Ckpt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonRecord {
    pub t: usize,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_rate: Option<f64>,
}

impl From<&Record> for JsonRecord {
    fn from(r: &Record) -> Self {
        match *r {
            Record::Interact { t, action, outcome, loss } => JsonRecord {
                t,
                kind: Kind::Interact,
                action: Some([action.orient, action.row, action.col]),
                outcome: Some(outcome.bit()),
                loss: Some(loss.is_finite().then_some(loss)),
                success_rate: None,
            },
            Record::Checkpoint { t, success_rate } => JsonRecord {
                t,
                kind: Kind::Ckpt,
                action: None,
                outcome: None,
                loss: None,
                success_rate: Some(success_rate),
            },
        }
    }
}

impl TryFrom<JsonRecord> for Record {
    type Error = String;

    fn try_from(r: JsonRecord) -> std::result::Result<Self, String> {
        match r.kind {
            Kind::Interact => {
                let [q, row, col] = r.action.ok_or("interact record without action")?;
                let bit = r.outcome.ok_or("interact record without outcome")?;
                Ok(Record::Interact {
                    t: r.t,
                    action: ActionSpec::new(q, row, col),
                    outcome: Outcome::from_bit(bit).map_err(|e| e.to_string())?,
                    loss: r.loss.flatten().unwrap_or(f64::NAN),
                })
            }
            Kind::Ckpt => Ok(Record::Checkpoint {
                t: r.t,
                success_rate: r.success_rate.ok_or("ckpt record without success_rate")?,
            }),
        }
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_log<W: Write>(log: &RunLog, out: &mut W) -> std::io::Result<()> {
    for r in &log.records {
        serde_json::to_writer(&mut *out, &JsonRecord::from(r))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_log(log: &RunLog, path: &Path) -> Result<()> {
    write_log(log, &mut create(path)?).map_err(|e| Error::io(path, e))
}

pub fn load_log(path: &Path) -> Result<RunLog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let json: JsonRecord = serde_json::from_str(&line)
            .map_err(|source| Error::Json { path: path.into(), line: i + 1, source })?;
        let record = Record::try_from(json)
            .map_err(|msg| Error::Config(format!("{}:{}: {msg}", path.display(), i + 1)))?;
        records.push(record);
    }
    Ok(RunLog { records })
}

/// Maps a value in [0,1] to a byte; out-of-range values are clamped.
pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

pub fn write_pgm<W: Write>(values: &[f64], width: usize, height: usize, out: &mut W) -> std::io::Result<()> {
    assert_eq!(values.len(), width * height, "PGM size mismatch");
    write!(out, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    out.write_all(&bytes)?;
    out.flush()
}

pub fn save_pgm(values: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    write_pgm(values, width, height, &mut create(path)?).map_err(|e| Error::io(path, e))
}

/// File stem shared by every artifact of one run.
pub fn run_stem(method: &str, env: &str, seed: u64) -> String {
    format!("{method}_{env}_seed{seed}")
}

/// Paths of the artifacts written for one run under `out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub log: PathBuf,
    pub params: PathBuf,
    pub maps: PathBuf,
    stem: String,
}

impl RunPaths {
    pub fn new(out: &Path, method: &str, env: &str, seed: u64) -> Self {
        let stem = run_stem(method, env, seed);
        Self {
            log: out.join("logs").join(format!("{stem}.jsonl")),
            params: out.join("params").join(format!("{stem}.params")),
            maps: out.join("maps"),
            stem,
        }
    }

    /// `(scene, afford, info)` PGM paths for checkpoint `t`.
    pub fn snapshot(&self, t: usize) -> [PathBuf; 3] {
        ["scene", "afford", "info"].map(|what| self.maps.join(format!("{}_t{t:04}_{what}.pgm", self.stem)))
    }
}

/// Writes the heights, mean affordance and normalized info maps of a
/// checkpoint snapshot.
pub fn save_snapshot(paths: &RunPaths, snap: &Snapshot) -> Result<()> {
    let grid = snap.scene.grid();
    let [scene, afford, info] = paths.snapshot(snap.t);
    save_pgm(snap.scene.heights(), grid.width, grid.height, &scene)?;
    save_pgm(&snap.afford, grid.width, grid.height, &afford)?;
    save_pgm(&snap.info, grid.width, grid.height, &info)
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    env: &'a str,
    checkpoint: usize,
    seed_count: usize,
    mean: f64,
    lo: f64,
    hi: f64,
}

pub fn write_summary<W: Write>(summary: &ExperimentSummary, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &summary.rows {
        w.serialize(CsvRow {
            method: &r.method,
            env: &r.env,
            checkpoint: r.checkpoint,
            seed_count: r.seed_count,
            mean: r.ci.point,
            lo: r.ci.lo,
            hi: r.ci.hi,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_summary(summary: &ExperimentSummary, path: &Path) -> Result<()> {
    let out = create(path)?;
    write_summary(summary, out).map_err(|source| Error::Csv { path: path.into(), source })
}
