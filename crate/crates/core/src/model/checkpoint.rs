//! `FBCK1` parameter checkpoints.
//!
//! Layout: the 5 magic bytes `FBCK1`, a little-endian `u32` header length,
//! a UTF-8 JSON header (config, vocab, packing layout, span cap, tensor
//! names and shapes), then every tensor as little-endian `f32` in
//! declaration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use super::QaModel;
use crate::corpus::{Layout, Vocab};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"FBCK1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    layout: Layout,
    span_cap: usize,
    vocab: Vocab,
    tensors: Vec<(String, [usize; 2])>,
}

pub fn write_checkpoint<W: Write>(model: &QaModel, mut out: W) -> Result<()> {
    let header = Header {
        config: model.params.config.clone(),
        layout: model.layout,
        span_cap: model.span_cap,
        vocab: model.vocab.clone(),
        tensors: model
            .params
            .layout
            .tensors()
            .iter()
            .map(|(name, slot)| (name.clone(), [slot.rows, slot.cols]))
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    for v in &model.params.data {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<QaModel> {
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an FBCK1 checkpoint".into()));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.vocab.len() != header.config.vocab_size {
        return Err(Error::Format(format!(
            "vocab of {} entries for vocab_size {}",
            header.vocab.len(),
            header.config.vocab_size
        )));
    }
    let mut params = ModelParams::zeros(&header.config)?;
    let expected: Vec<(String, [usize; 2])> = params
        .layout
        .tensors()
        .iter()
        .map(|(name, slot)| (name.clone(), [slot.rows, slot.cols]))
        .collect();
    if expected != header.tensors {
        return Err(Error::Format("tensor table does not match the config".into()));
    }
    let mut buf = [0u8; 4];
    for v in params.data.iter_mut() {
        input.read_exact(&mut buf)?;
        *v = f32::from_le_bytes(buf) as f64;
    }
    if input.read(&mut buf)? != 0 {
        return Err(Error::Format("trailing bytes after tensors".into()));
    }
    Ok(QaModel {
        params,
        vocab: header.vocab,
        layout: header.layout,
        span_cap: header.span_cap,
    })
}

pub fn save_checkpoint(model: &QaModel, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<QaModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
