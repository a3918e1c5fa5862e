//! Versioned text checkpoints.
//!
//! ```text
//! MVFUSE-CKPT-1
//! mlp <hidden_act> <output_act> <n_sizes> <size>...
//! w <rows> <cols> <row-major values>...
//! b <len> <values>...
//! ```
//! Floats are written in shortest round-trip scientific notation, so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{HiddenActivation, Layer, MlpParams, MlpSpec, OutputActivation};
use crate::error::{Error, Result};

pub const MAGIC: &str = "MVFUSE-CKPT-1";

pub fn write_mlp(out: &mut String, params: &MlpParams) {
    let spec = params.spec();
    let _ = write!(
        out,
        "mlp {} {} {}",
        spec.hidden_activation.name(),
        spec.output_activation.name(),
        spec.layer_sizes.len()
    );
    for s in &spec.layer_sizes {
        let _ = write!(out, " {s}");
    }
    out.push('\n');
    for layer in params.layers() {
        let (rows, cols) = layer.weight.shape();
        let _ = write!(out, "w {rows} {cols}");
        for r in 0..rows {
            for c in 0..cols {
                let _ = write!(out, " {:e}", layer.weight[(r, c)]);
            }
        }
        out.push('\n');
        let _ = write!(out, "b {}", layer.bias.len());
        for v in layer.bias.iter() {
            let _ = write!(out, " {v:e}");
        }
        out.push('\n');
    }
}

/// Line cursor over checkpoint text with line-numbered errors.
pub struct CheckpointReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    last_line: usize,
}

impl<'a> CheckpointReader<'a> {
    pub fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
            last_line: 0,
        }
    }

    pub fn error(&self, msg: impl std::fmt::Display) -> Error {
        Error::data(format!("checkpoint line {}: {msg}", self.last_line))
    }

    pub fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.last_line = i + 1;
                Ok(l)
            }
            None => Err(Error::data("checkpoint truncated")),
        }
    }

    /// Next line split into tokens, requiring the first token to equal `key`.
    pub fn expect(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut toks = line.split_ascii_whitespace();
        match toks.next() {
            Some(k) if k == key => Ok(toks.collect()),
            other => Err(self.error(format!("expected '{key}', found {other:?}"))),
        }
    }

    pub fn expect_magic(&mut self) -> Result<()> {
        let line = self.next_line()?;
        if line.trim() != MAGIC {
            return Err(self.error(format!("missing {MAGIC} header")));
        }
        Ok(())
    }

    pub fn parse<T: std::str::FromStr>(&self, tok: &str) -> Result<T> {
        tok.parse()
            .map_err(|_| self.error(format!("cannot parse '{tok}'")))
    }
}

pub fn read_mlp(reader: &mut CheckpointReader<'_>) -> Result<MlpParams> {
    let head = reader.expect("mlp")?;
    if head.len() < 3 {
        return Err(reader.error("short mlp header"));
    }
    let hidden = HiddenActivation::parse(head[0]).map_err(|e| reader.error(e))?;
    let output = OutputActivation::parse(head[1]).map_err(|e| reader.error(e))?;
    let n: usize = reader.parse(head[2])?;
    if head.len() != 3 + n {
        return Err(reader.error("layer size count mismatch"));
    }
    let sizes = head[3..]
        .iter()
        .map(|t| reader.parse(t))
        .collect::<Result<Vec<usize>>>()?;
    let spec = MlpSpec::new(sizes, hidden, output).map_err(|e| reader.error(e))?;

    let mut layers = Vec::with_capacity(spec.n_layers());
    for _ in 0..spec.n_layers() {
        let w = reader.expect("w")?;
        if w.len() < 2 {
            return Err(reader.error("short weight line"));
        }
        let rows: usize = reader.parse(w[0])?;
        let cols: usize = reader.parse(w[1])?;
        if w.len() != 2 + rows * cols {
            return Err(reader.error("weight value count mismatch"));
        }
        let vals = w[2..]
            .iter()
            .map(|t| reader.parse(t))
            .collect::<Result<Vec<f64>>>()?;
        let b = reader.expect("b")?;
        let len: usize = reader.parse(b.first().copied().unwrap_or(""))?;
        if b.len() != 1 + len {
            return Err(reader.error("bias value count mismatch"));
        }
        let bias = b[1..]
            .iter()
            .map(|t| reader.parse(t))
            .collect::<Result<Vec<f64>>>()?;
        layers.push(Layer {
            weight: DMatrix::from_row_slice(rows, cols, &vals),
            bias: DVector::from_vec(bias),
        });
    }
    MlpParams::from_layers(spec, layers).map_err(|e| reader.error(e))
}

pub fn save_mlp(path: &Path, params: &MlpParams) -> Result<()> {
    let mut text = format!("{MAGIC}\n");
    write_mlp(&mut text, params);
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_mlp(path: &Path) -> Result<MlpParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = CheckpointReader::new(&text);
    reader.expect_magic()?;
    read_mlp(&mut reader)
}
