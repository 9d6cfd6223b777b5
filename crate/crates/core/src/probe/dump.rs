//! `FBED1` embedding dumps.
//!
//! Layout (all integers little-endian `u32`, all floats little-endian `f64`):
//! magic `FBED1`, `d`, item count, fingerprint (length + UTF-8 bytes), then per
//! item: id (length + bytes), `d` floats of `h_cls`, token count, and per
//! token: text (length + bytes), span start, span end, `d` floats.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EmbeddingRecord, TokenEmbedding};
use crate::corpus::Span;
use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 5] = b"FBED1";

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDump {
    pub d: usize,
    /// Identifies the model/config that produced the vectors.
    pub fingerprint: String,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingDump {
    pub fn new(d: usize, fingerprint: impl Into<String>, records: Vec<EmbeddingRecord>) -> Result<Self> {
        for r in &records {
            if r.cls.len() != d || r.tokens.iter().any(|t| t.vector.len() != d) {
                return Err(Error::Integrity(format!("item {}: vector width differs from {d}", r.id)));
            }
        }
        Ok(EmbeddingDump {
            d,
            fingerprint: fingerprint.into(),
            records,
        })
    }

    /// The records whose ids are in `ids`, in their original order.
    pub fn restrict(&self, ids: &BTreeSet<String>) -> EmbeddingDump {
        EmbeddingDump {
            d: self.d,
            fingerprint: self.fingerprint.clone(),
            records: self.records.iter().filter(|r| ids.contains(&r.id)).cloned().collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write_dump(self, &mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_dump(BufReader::new(File::open(path)?))
    }
}

fn put_u32<W: Write>(out: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(out: &mut W, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn put_vec<W: Write>(out: &mut W, v: &[f64]) -> Result<()> {
    for x in v {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_dump<W: Write>(dump: &EmbeddingDump, mut out: W) -> Result<()> {
    out.write_all(DUMP_MAGIC)?;
    put_u32(&mut out, dump.d)?;
    put_u32(&mut out, dump.records.len())?;
    put_str(&mut out, &dump.fingerprint)?;
    for r in &dump.records {
        put_str(&mut out, &r.id)?;
        put_vec(&mut out, &r.cls)?;
        put_u32(&mut out, r.tokens.len())?;
        for t in &r.tokens {
            put_str(&mut out, &t.text)?;
            put_u32(&mut out, t.span.start)?;
            put_u32(&mut out, t.span.end)?;
            put_vec(&mut out, &t.vector)?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<usize> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()?;
        let mut b = vec![0u8; len];
        self.inner.read_exact(&mut b)?;
        String::from_utf8(b).map_err(|e| Error::Format(e.to_string()))
    }

    fn vector(&mut self, d: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(d);
        let mut b = [0u8; 8];
        for _ in 0..d {
            self.inner.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }
}

pub fn read_dump<R: Read>(input: R) -> Result<EmbeddingDump> {
    let mut r = Reader { inner: input };
    let mut magic = [0u8; 5];
    r.inner.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Format("not an FBED1 embedding dump".into()));
    }
    let d = r.u32()?;
    let count = r.u32()?;
    let fingerprint = r.string()?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let id = r.string()?;
        let cls = r.vector(d)?;
        let n = r.u32()?;
        let mut tokens = Vec::with_capacity(n);
        for _ in 0..n {
            let text = r.string()?;
            let start = r.u32()?;
            let end = r.u32()?;
            tokens.push(TokenEmbedding {
                text,
                span: Span::new(start, end),
                vector: r.vector(d)?,
            });
        }
        records.push(EmbeddingRecord { id, cls, tokens });
    }
    Ok(EmbeddingDump {
        d,
        fingerprint,
        records,
    })
}
