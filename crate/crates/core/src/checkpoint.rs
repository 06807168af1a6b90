//! Text checkpoint container for encoder parameters and their vocabulary.
//!
//! Layout (UTF-8, LF line endings):
//!
//! ```text
//! replyrank-checkpoint v1
//! [config]
//! vocab_size N
//! model_dim N
//! num_layers N
//! num_heads N
//! ff_dim N
//! max_sequence_length N
//! [vocab]
//! N
//! <one token per line, line order = id>
//! [params]
//! <name> <rows> <cols>
//! <one line of space-separated values per row>
//! ...
//! [end]
//! ```
//!
//! Values are written in Rust's shortest round-trip decimal form, so a
//! load/save cycle is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

const MAGIC: &str = "replyrank-checkpoint v1";

pub fn save<W: Write>(params: &EncoderParams, vocab: &Vocabulary, sink: W) -> Result<()> {
    let mut w = BufWriter::new(sink);
    let cfg = &params.config;
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "[config]")?;
    writeln!(w, "vocab_size {}", cfg.vocab_size)?;
    writeln!(w, "model_dim {}", cfg.model_dim)?;
    writeln!(w, "num_layers {}", cfg.num_layers)?;
    writeln!(w, "num_heads {}", cfg.num_heads)?;
    writeln!(w, "ff_dim {}", cfg.ff_dim)?;
    writeln!(w, "max_sequence_length {}", cfg.max_sequence_length)?;
    writeln!(w, "[vocab]")?;
    writeln!(w, "{}", vocab.size())?;
    for id in 0..vocab.size() {
        writeln!(w, "{}", vocab.token_of(id).unwrap())?;
    }
    writeln!(w, "[params]")?;
    for (name, tensor) in params.named_tensors() {
        if !tensor.is_finite() {
            return Err(Error::numeric(format!("non-finite values in {name}")));
        }
        writeln!(w, "{} {} {}", name, tensor.rows(), tensor.cols())?;
        let cols = tensor.cols();
        for r in 0..tensor.rows() {
            let row = &tensor.data()[r * cols..(r + 1) * cols];
            let mut line = String::new();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(' ');
                }
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
    }
    writeln!(w, "[end]")?;
    w.flush()?;
    Ok(())
}

pub fn save_to_path(
    params: &EncoderParams,
    vocab: &Vocabulary,
    path: impl AsRef<Path>,
) -> Result<()> {
    save(params, vocab, File::create(path)?)
}

pub fn load<R: Read>(source: R) -> Result<(EncoderParams, Vocabulary)> {
    let mut lines = BufReader::new(source).lines();
    let mut line_no = 0usize;
    let mut next = |expect: &str| -> Result<String> {
        line_no += 1;
        match lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::Io(e)),
            None => Err(Error::invalid(format!(
                "checkpoint truncated, expected {expect}"
            ))),
        }
    };

    if next("magic")? != MAGIC {
        return Err(Error::invalid("not a replyrank checkpoint"));
    }
    if next("[config]")? != "[config]" {
        return Err(Error::invalid("missing [config] section"));
    }
    let mut field = |name: &str| -> Result<usize> {
        let line = next(name)?;
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| Error::invalid(format!("malformed config line {line:?}")))?;
        if key != name {
            return Err(Error::invalid(format!("expected {name}, found {key}")));
        }
        value
            .parse()
            .map_err(|_| Error::invalid(format!("bad value for {name}: {value:?}")))
    };
    let config = EncoderConfig {
        vocab_size: field("vocab_size")?,
        model_dim: field("model_dim")?,
        num_layers: field("num_layers")?,
        num_heads: field("num_heads")?,
        ff_dim: field("ff_dim")?,
        max_sequence_length: field("max_sequence_length")?,
    };
    config.validate()?;

    if next("[vocab]")? != "[vocab]" {
        return Err(Error::invalid("missing [vocab] section"));
    }
    let vocab_len: usize = next("vocab size")?
        .parse()
        .map_err(|_| Error::invalid("bad vocabulary size"))?;
    if vocab_len != config.vocab_size {
        return Err(Error::invalid(
            "vocabulary size disagrees with config vocab_size",
        ));
    }
    let mut vocab_text = String::new();
    for _ in 0..vocab_len {
        vocab_text.push_str(&next("vocab token")?);
        vocab_text.push('\n');
    }
    let vocab = Vocabulary::load(vocab_text.as_bytes())?;

    if next("[params]")? != "[params]" {
        return Err(Error::invalid("missing [params] section"));
    }
    let mut params = EncoderParams::init(config, 0)?;
    for (name, tensor) in params.named_tensors_mut() {
        let header = next("param header")?;
        let mut parts = header.split(' ');
        let (h_name, h_rows, h_cols) = (
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
        );
        if h_name != name {
            return Err(Error::invalid(format!(
                "expected parameter {name}, found {h_name}"
            )));
        }
        let rows: usize = h_rows
            .parse()
            .map_err(|_| Error::invalid(format!("bad row count for {name}")))?;
        let cols: usize = h_cols
            .parse()
            .map_err(|_| Error::invalid(format!("bad column count for {name}")))?;
        if rows != tensor.rows() || cols != tensor.cols() {
            return Err(Error::invalid(format!(
                "shape {rows}x{cols} for {name} disagrees with config"
            )));
        }
        for r in 0..rows {
            let line = next("param row")?;
            let mut values = line.split(' ');
            for c in 0..cols {
                let token = values.next().ok_or_else(|| {
                    Error::invalid(format!("short row {r} in parameter {name}"))
                })?;
                let v: f64 = token
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad value in {name}: {token:?}")))?;
                if !v.is_finite() {
                    return Err(Error::numeric(format!("non-finite value in {name}")));
                }
                tensor.data_mut()[r * cols + c] = v;
            }
            if values.next().is_some() {
                return Err(Error::invalid(format!("long row {r} in parameter {name}")));
            }
        }
    }
    if next("[end]")? != "[end]" {
        return Err(Error::invalid("missing [end] marker"));
    }
    Ok((params, vocab))
}

pub fn load_from_path(path: impl AsRef<Path>) -> Result<(EncoderParams, Vocabulary)> {
    load(File::open(path)?)
}
