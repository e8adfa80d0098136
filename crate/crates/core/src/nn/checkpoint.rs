//! Parameter snapshots: one text header line, then raw little-endian `f64`s.
//!
//! ```text
//! FSCKPT1 fc0.weight:32x8 fc0.bias:32 fc1.weight:4x32 fc1.bias:4\n
//! <8 * total_len bytes>
//! ```

use std::io::{BufRead, Write};
use std::sync::Arc;

use super::param::{LayerShape, ParamVector, ShapeMap};
use crate::error::{Error, Result};

const MAGIC: &str = "FSCKPT1";

pub fn write_checkpoint<W: Write>(mut out: W, params: &ParamVector) -> std::io::Result<()> {
    writeln!(out, "{MAGIC} {}", params.shape())?;
    for v in params.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

fn bad(message: impl Into<String>) -> Error {
    Error::Format {
        path: "<checkpoint>".into(),
        message: message.into(),
    }
}

fn parse_layer(token: &str) -> Result<LayerShape> {
    let (name, dims) = token
        .rsplit_once(':')
        .ok_or_else(|| bad(format!("layer entry without dims: {token}")))?;
    let dims = dims
        .split('x')
        .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad dimension in {token}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerShape::new(name, &dims))
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<ParamVector> {
    let mut header = String::new();
    input
        .read_line(&mut header)
        .map_err(|e| bad(format!("unreadable header: {e}")))?;
    let mut tokens = header.trim_end_matches('\n').split(' ');
    if tokens.next() != Some(MAGIC) {
        return Err(bad("missing checkpoint magic"));
    }
    let layers = tokens
        .filter(|t| !t.is_empty())
        .map(parse_layer)
        .collect::<Result<Vec<_>>>()?;
    let shape = Arc::new(ShapeMap::new(layers));
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| bad(format!("unreadable body: {e}")))?;
    if bytes.len() != 8 * shape.total_len() {
        return Err(bad(format!(
            "body holds {} bytes, header implies {}",
            bytes.len(),
            8 * shape.total_len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ParamVector::from_values(shape, values)
}
