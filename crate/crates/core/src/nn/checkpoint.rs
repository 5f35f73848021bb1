//! Plain-text checkpoints.
//!
//! ```text
//! rvrecon-cnn v1 <layer spec>
//! conv1.weight (32,96,5)
//! <values, one per line>
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::model::{Architecture, CnnModel, PARAM_NAMES};
use crate::error::{Error, Result};

const MAGIC: &str = "rvrecon-cnn";
const VERSION: &str = "v1";

/// Serialize `model`; values use 17 significant digits so they round-trip.
pub fn write_checkpoint(model: &CnnModel) -> String {
    let mut out = format!("{MAGIC} {VERSION} {}\n", model.arch());
    for ((name, shape), values) in PARAM_NAMES
        .iter()
        .zip(model.arch().param_shapes())
        .zip(model.params())
    {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        writeln!(out, "{name} ({})", dims.join(",")).unwrap();
        for v in values {
            writeln!(out, "{v:.16e}").unwrap();
        }
    }
    out
}

pub fn read_checkpoint(text: &str, origin: &Path) -> Result<CnnModel> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "empty checkpoint"))?;
    let mut parts = header.splitn(3, ' ');
    if parts.next() != Some(MAGIC) {
        return Err(Error::parse(origin, 1, "not an rvrecon checkpoint"));
    }
    match parts.next() {
        Some(VERSION) => {}
        other => {
            return Err(Error::parse(
                origin,
                1,
                format!("unsupported checkpoint version {}", other.unwrap_or("")),
            ))
        }
    }
    let spec = parts
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "missing layer spec"))?;
    let arch = Architecture::parse(spec).map_err(|e| Error::parse(origin, 1, e.to_string()))?;

    let mut params = Vec::new();
    for (name, shape) in PARAM_NAMES.iter().zip(arch.param_shapes()) {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 0, format!("missing block {name}")))?;
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        let expected = format!("{name} ({})", dims.join(","));
        if line != expected {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected '{expected}', found '{line}'"),
            ));
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(origin, 0, format!("{name}: truncated")))?;
            let v: f64 = line
                .parse()
                .map_err(|_| Error::parse(origin, line_no, format!("bad value '{line}'")))?;
            values.push(v);
        }
        params.push(values);
    }
    if let Some((line_no, line)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(Error::parse(origin, line_no, format!("trailing content '{line}'")));
    }
    CnnModel::from_params(arch, params)
}

pub fn save_checkpoint(model: &CnnModel, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<CnnModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&text, path)
}
