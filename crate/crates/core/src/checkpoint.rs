//! Plain-text model checkpoints.
//!
//! ```text
//! AECL-CKPT v1
//! dims <d1> <d2> <m>
//! <tensor name> <len> <v0> <v1> ...     (one line per tensor, declaration order)
//! ```
//!
//! Values are written in shortest round-trip decimal form, so a checkpoint
//! reloads bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{AeclError, Result};
use crate::model::{ModelDims, ParameterSet, TENSOR_NAMES};

pub const CHECKPOINT_HEADER: &str = "AECL-CKPT v1";

pub fn format_checkpoint(params: &ParameterSet) -> String {
    let ModelDims { d1, d2, m } = params.dims;
    let mut out = format!("{CHECKPOINT_HEADER}\ndims {d1} {d2} {m}\n");
    for (name, values) in TENSOR_NAMES.iter().zip(params.tensors()) {
        let _ = write!(out, "{name} {}", values.len());
        for v in values {
            let _ = write!(out, " {v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_checkpoint(text: &str) -> Result<ParameterSet> {
    let bad = |msg: String| AeclError::CheckpointParse(msg);
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_HEADER) {
        return Err(bad("missing header".into()));
    }
    let dims_line = lines.next().ok_or_else(|| bad("missing dims".into()))?;
    let fields: Vec<&str> = dims_line.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "dims" {
        return Err(bad("malformed dims line".into()));
    }
    let parse_dim = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad dimension `{s}`")));
    let dims = ModelDims::new(parse_dim(fields[1])?, parse_dim(fields[2])?, parse_dim(fields[3])?)
        .map_err(|e| bad(e.to_string()))?;
    let mut params = ParameterSet::zeros(dims);
    for (name, dst) in TENSOR_NAMES.iter().zip(params.tensors_mut()) {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some(*name) {
            return Err(bad(format!("expected tensor {name}")));
        }
        let len: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(format!("bad length for {name}")))?;
        if len != dst.len() {
            return Err(bad(format!("{name} has {len} values, expected {}", dst.len())));
        }
        let mut count = 0;
        for (slot, token) in dst.iter_mut().zip(tokens.by_ref()) {
            *slot = token
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("bad value `{token}` in {name}")))?;
            count += 1;
        }
        if count != len || tokens.next().is_some() {
            return Err(bad(format!("{name} value count does not match its length")));
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing content".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ParameterSet) -> Result<()> {
    fs::write(path, format_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterSet> {
    let text = fs::read_to_string(path)?;
    parse_checkpoint(&text)
}
