//! Parameter checkpoint files.
//!
//! Layout: one ASCII header line terminated by `\n`,
//!
//! ```text
//! afford-params v1 arch=conv grid=32x32 orientations=8 heads=5 widths=8,16,16 count=21921
//! ```
//!
//! followed by `count` little-endian `f32` values in the ensemble's flat
//! parameter order. Optimizer state is not stored. Values are narrowed from
//! `f64` on write, so a reloaded model predicts within `f32` rounding of the
//! original.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Arch, ConvWidths, Ensemble, ModelConfig};
use crate::error::{Error, Result};
use crate::types::GridShape;

const MAGIC: &str = "afford-params";
const VERSION: &str = "v1";

pub fn header(config: &ModelConfig, count: usize) -> String {
    let w = config.widths;
    format!(
        "{MAGIC} {VERSION} arch={} grid={} orientations={} heads={} widths={},{},{} count={count}",
        config.arch, config.grid, config.orientations, config.n_heads, w.stem, w.down, w.bottleneck
    )
}

pub fn write<W: Write>(ensemble: &Ensemble, mut out: W) -> Result<()> {
    let params = ensemble.params();
    writeln!(out, "{}", header(ensemble.config(), params.len()))?;
    let mut bytes = Vec::with_capacity(params.len() * 4);
    for &v in params {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse_grid(s: &str) -> Result<GridShape> {
    let (h, w) = s.split_once('x').ok_or_else(|| bad(format!("bad grid `{s}`")))?;
    let parse = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad grid `{s}`")));
    Ok(GridShape::new(parse(h)?, parse(w)?))
}

fn parse_widths(s: &str) -> Result<ConvWidths> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.parse().map_err(|_| bad(format!("bad widths `{s}`"))))
        .collect::<Result<_>>()?;
    match v[..] {
        [stem, down, bottleneck] => Ok(ConvWidths { stem, down, bottleneck }),
        _ => Err(bad(format!("bad widths `{s}`"))),
    }
}

/// Parses a header line into the model shape it describes and the value count.
pub fn parse_header(line: &str) -> Result<(ModelConfig, usize)> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(bad("missing magic"));
    }
    match parts.next() {
        Some(VERSION) => {}
        other => return Err(bad(format!("unsupported version {other:?}"))),
    }
    let mut config = ModelConfig::default();
    let mut count = None;
    let (mut arch, mut grid, mut q, mut heads) = (None, None, None, None);
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad field `{kv}`")))?;
        let num = || v.parse::<usize>().map_err(|_| bad(format!("bad number in `{kv}`")));
        match k {
            "arch" => arch = Some(v.parse::<Arch>().map_err(|e| bad(e.to_string()))?),
            "grid" => grid = Some(parse_grid(v)?),
            "orientations" => q = Some(num()?),
            "heads" => heads = Some(num()?),
            "widths" => config.widths = parse_widths(v)?,
            "count" => count = Some(num()?),
            _ => return Err(bad(format!("unknown field `{k}`"))),
        }
    }
    let missing = |name: &str| bad(format!("missing field `{name}`"));
    config.arch = arch.ok_or_else(|| missing("arch"))?;
    config.grid = grid.ok_or_else(|| missing("grid"))?;
    config.orientations = q.ok_or_else(|| missing("orientations"))?;
    config.n_heads = heads.ok_or_else(|| missing("heads"))?;
    let count = count.ok_or_else(|| missing("count"))?;
    Ok((config, count))
}

/// Reads a checkpoint. Training hyperparameters in the returned config are
/// the defaults; only the model shape comes from the file.
pub fn read<R: BufRead>(mut input: R) -> Result<Ensemble> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let line = line.strip_suffix('\n').ok_or_else(|| bad("truncated header"))?;
    let (config, count) = parse_header(line)?;
    let mut ensemble = Ensemble::zeros(config).map_err(|e| bad(e.to_string()))?;
    if ensemble.params().len() != count {
        return Err(bad(format!(
            "header declares {count} values but the model has {}",
            ensemble.params().len()
        )));
    }
    let mut bytes = Vec::with_capacity(count * 4);
    input.read_to_end(&mut bytes)?;
    if bytes.len() != count * 4 {
        return Err(bad(format!("expected {} payload bytes, found {}", count * 4, bytes.len())));
    }
    let params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ensemble.set_params(params)?;
    Ok(ensemble)
}

pub fn save(ensemble: &Ensemble, path: &Path) -> Result<()> {
    write(ensemble, BufWriter::new(File::create(path)?))
}

pub fn load(path: &Path) -> Result<Ensemble> {
    read(BufReader::new(File::open(path)?))
}
