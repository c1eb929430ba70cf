//! Plain-text checkpoint: a header line, a config line, then one
//! `tensor NAME ROWS COLS` line per tensor followed by its values in
//! row-major order. Values use the shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{init_model, ModelConfig, ModelError, ModelParams};
use crate::dataset::Standardizer;
use crate::tensor::{DenseMatrix, PowerIteration};

pub const CHECKPOINT_HEADER: &str = "e3ir-checkpoint v1";

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn dims(v: &[usize]) -> String {
    if v.is_empty() {
        "-".into()
    } else {
        v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

pub fn write_checkpoint<W: Write>(mut out: W, model: &ModelParams) -> std::io::Result<()> {
    let c = &model.config;
    writeln!(out, "{CHECKPOINT_HEADER}")?;
    writeln!(
        out,
        "config input_dim={} num_treatments={} hidden={} head={} embed={} revenue_kind={} cost_kind={}",
        c.input_dim,
        c.num_treatments,
        dims(&c.hidden_dims),
        dims(&c.head_dims),
        c.embed_dim,
        c.revenue_kind,
        c.cost_kind
    )?;
    for (name, t) in model.tensors() {
        writeln!(out, "tensor {name} {} {}", t.rows(), t.cols())?;
        writeln!(out, "{}", join(t.data()))?;
    }
    writeln!(out, "tensor standardizer.mean 1 {}", model.standardizer.mean.len())?;
    writeln!(out, "{}", join(&model.standardizer.mean))?;
    writeln!(out, "tensor standardizer.scale 1 {}", model.standardizer.scale.len())?;
    writeln!(out, "{}", join(&model.standardizer.scale))?;
    for (j, s) in model.lipschitz_state.iter().enumerate() {
        writeln!(out, "tensor lipschitz_state.{j} 1 {}", s.right.len())?;
        writeln!(out, "{}", join(&s.right))?;
    }
    writeln!(out, "end")
}

pub fn save_checkpoint(path: &Path, model: &ModelParams) -> Result<(), ModelError> {
    let f = std::fs::File::create(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, model)
        .and_then(|_| w.flush())
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    let f = std::fs::File::open(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    read_checkpoint(f)
}

fn parse_dims(s: &str) -> Result<Vec<usize>, ModelError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.parse().map_err(|_| ModelError::Checkpoint(format!("bad layer width `{p}`"))))
        .collect()
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<ModelParams, ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    let mut lines = BufReader::new(input).lines();
    let mut next = move || -> Result<String, ModelError> {
        lines
            .next()
            .ok_or_else(|| bad("unexpected end of file".into()))?
            .map_err(|e| bad(e.to_string()))
    };
    let header = next()?;
    if header.trim() != CHECKPOINT_HEADER {
        return Err(bad(format!("unrecognized header `{header}`")));
    }
    let config_line = next()?;
    let fields = config_line
        .strip_prefix("config ")
        .ok_or_else(|| bad("missing config line".into()))?;
    let mut config = ModelConfig::new(1, 1);
    for kv in fields.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad config entry `{kv}`")))?;
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad value for {k}: `{v}`")));
        match k {
            "input_dim" => config.input_dim = num(v)?,
            "num_treatments" => config.num_treatments = num(v)?,
            "hidden" => config.hidden_dims = parse_dims(v)?,
            "head" => config.head_dims = parse_dims(v)?,
            "embed" => config.embed_dim = num(v)?,
            "revenue_kind" => config.revenue_kind = v.parse().map_err(bad)?,
            "cost_kind" => config.cost_kind = v.parse().map_err(bad)?,
            other => return Err(bad(format!("unknown config key `{other}`"))),
        }
    }
    let mut model = init_model(config, 0)?;
    let mut tensors: Vec<(String, DenseMatrix)> = Vec::new();
    loop {
        let line = next()?;
        if line.trim() == "end" {
            break;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(bad(format!("expected a tensor line, got `{line}`")));
        }
        let rows: usize = parts[2].parse().map_err(|_| bad(format!("bad rows in `{line}`")))?;
        let cols: usize = parts[3].parse().map_err(|_| bad(format!("bad cols in `{line}`")))?;
        let values: Vec<f64> = next()?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}` in {}", parts[1]))))
            .collect::<Result<_, _>>()?;
        let m = DenseMatrix::from_vec(rows, cols, values).map_err(|e| bad(format!("{}: {e}", parts[1])))?;
        tensors.push((parts[1].to_string(), m));
    }
    let mut take = |name: &str| -> Result<DenseMatrix, ModelError> {
        let pos = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
        Ok(tensors.swap_remove(pos).1)
    };
    let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
    let mut loaded = Vec::with_capacity(names.len());
    for n in &names {
        loaded.push(take(n)?);
    }
    for ((slot, value), name) in model.tensors_mut().into_iter().zip(loaded).zip(&names) {
        if slot.shape() != value.shape() {
            return Err(bad(format!("tensor `{name}` is {}, expected {}", value.shape(), slot.shape())));
        }
        *slot = value;
    }
    let d = model.config.input_dim;
    let mean = take("standardizer.mean")?.into_data();
    let scale = take("standardizer.scale")?.into_data();
    if mean.len() != d || scale.len() != d {
        return Err(bad("standardizer length does not match input_dim".into()));
    }
    model.standardizer = Standardizer { mean, scale };
    for j in 0..model.lipschitz_state.len() {
        let v = take(&format!("lipschitz_state.{j}"))?.into_data();
        if v.len() != model.lipschitz_state[j].right.len() {
            return Err(bad(format!("lipschitz_state.{j} has the wrong length")));
        }
        model.lipschitz_state[j] = PowerIteration { right: v };
    }
    if let Some((name, _)) = tensors.first() {
        return Err(bad(format!("unexpected tensor `{name}`")));
    }
    Ok(model)
}
