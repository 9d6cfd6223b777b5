//! Embedding-space probes: cosine similarity of CLS embeddings and of
//! common story tokens between two dataset variants.

mod dump;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use dump::{read_dump, write_dump, EmbeddingDump, DUMP_MAGIC};

use crate::corpus::{Corpus, Span};
use crate::model::QaModel;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbedding {
    pub text: String,
    pub span: Span,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub cls: Vec<f64>,
    pub tokens: Vec<TokenEmbedding>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let (lo, hi) = (-1.0, 1.0);
        let mut counts = vec![0; bins];
        for &v in values {
            let v = v.clamp(lo, hi);
            let idx = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
            counts[idx.min(bins - 1)] += 1;
        }
        Histogram { lo, hi, counts }
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + width * i as f64, self.lo + width * (i + 1) as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let (l, r) = self.bin_edges(i);
            let _ = writeln!(out, "{l:.3},{r:.3},{c}");
        }
        out
    }

    /// Horizontal bar chart, one line per non-empty bin.
    pub fn render(&self, width: usize) -> String {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1);
        let mut out = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let (l, r) = self.bin_edges(i);
            let bar = "#".repeat((c * width).div_ceil(max));
            let _ = writeln!(out, "[{l:+.2}, {r:+.2}) {c:>6} {bar}");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDistribution {
    pub values: Vec<f64>,
    pub histogram: Histogram,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Pairs where either vector was all zeros (scored as 0).
    pub zero_vectors: usize,
    /// Tokens present in only one of the two dumps.
    pub unmatched: usize,
}

impl SimilarityDistribution {
    pub fn from_values(values: Vec<f64>, bins: usize) -> Self {
        let (mean, std) = mean_std(&values);
        SimilarityDistribution {
            histogram: Histogram::new(&values, bins),
            values,
            mean,
            std,
            zero_vectors: 0,
            unmatched: 0,
        }
    }

    pub fn summary(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

fn paired<'a>(a: &'a EmbeddingDump, b: &'a EmbeddingDump) -> Result<Vec<(&'a EmbeddingRecord, &'a EmbeddingRecord)>> {
    if a.d != b.d {
        return Err(Error::Integrity(format!("embedding widths differ: {} vs {}", a.d, b.d)));
    }
    let left: BTreeMap<&str, &EmbeddingRecord> = a.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let right: BTreeMap<&str, &EmbeddingRecord> = b.records.iter().map(|r| (r.id.as_str(), r)).collect();
    if left.len() != a.records.len() || right.len() != b.records.len() {
        return Err(Error::Integrity("duplicate item ids in dump".into()));
    }
    if left.keys().ne(right.keys()) {
        return Err(Error::Integrity("dumps cover different item ids".into()));
    }
    Ok(left.into_values().zip(right.into_values()).collect())
}

/// Per-item cosine similarity of CLS embeddings, in item-id order.
pub fn cls_cossim(a: &EmbeddingDump, b: &EmbeddingDump, bins: usize) -> Result<SimilarityDistribution> {
    let mut zero = 0;
    let values = paired(a, b)?
        .into_iter()
        .map(|(x, y)| {
            cosine(&x.cls, &y.cls).unwrap_or_else(|| {
                zero += 1;
                0.0
            })
        })
        .collect();
    let mut dist = SimilarityDistribution::from_values(values, bins);
    dist.zero_vectors = zero;
    Ok(dist)
}

/// Story tokens of `a` and `b` aligned by (token, occurrence index) within
/// the longest common token prefix. Returns aligned index pairs and the
/// number of tokens left unmatched on either side.
pub fn align_common_tokens(a: &[TokenEmbedding], b: &[TokenEmbedding]) -> (Vec<(usize, usize)>, usize) {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x.text == y.text).count();
    let pairs = (0..prefix).map(|i| (i, i)).collect();
    let unmatched = (a.len() - prefix) + (b.len() - prefix);
    (pairs, unmatched)
}

/// Pooled cosine similarities of every aligned common token.
pub fn common_token_cossim(a: &EmbeddingDump, b: &EmbeddingDump, bins: usize) -> Result<SimilarityDistribution> {
    let mut values = Vec::new();
    let mut zero = 0;
    let mut unmatched = 0;
    for (x, y) in paired(a, b)? {
        let (pairs, missing) = align_common_tokens(&x.tokens, &y.tokens);
        unmatched += missing;
        for (i, j) in pairs {
            values.push(cosine(&x.tokens[i].vector, &y.tokens[j].vector).unwrap_or_else(|| {
                zero += 1;
                0.0
            }));
        }
    }
    let mut dist = SimilarityDistribution::from_values(values, bins);
    dist.zero_vectors = zero;
    dist.unmatched = unmatched;
    Ok(dist)
}

/// CLS and common-token similarity between `base` and `other` under `model`,
/// over the items of `other` (base items without a counterpart are left out).
pub fn compare_variants(
    model: &QaModel,
    base: &Corpus,
    other: &Corpus,
    bins: usize,
) -> Result<(SimilarityDistribution, SimilarityDistribution)> {
    let ids: BTreeSet<String> = other.items.iter().map(|i| i.id.clone()).collect();
    let base_items = base.items.iter().filter(|i| ids.contains(&i.id)).cloned().collect();
    let base = Corpus::new(base_items, base.source_format, base.split)?;
    let a = model.embed_corpus(&base)?;
    let b = model.embed_corpus(other)?;
    Ok((cls_cossim(&a, &b, bins)?, common_token_cossim(&a, &b, bins)?))
}

/// Grid of `mean ± std` cells: one row per regime, one column per comparison,
/// both in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<String>>)>,
}

pub fn summarize<'a, I>(entries: I) -> ComparisonTable
where
    I: IntoIterator<Item = (&'a str, &'a str, &'a SimilarityDistribution)>,
{
    let mut table = ComparisonTable::default();
    let mut cells: Vec<(usize, usize, String)> = Vec::new();
    for (regime, comparison, dist) in entries {
        let col = match table.columns.iter().position(|c| c == comparison) {
            Some(i) => i,
            None => {
                table.columns.push(comparison.to_string());
                table.columns.len() - 1
            }
        };
        let row = match table.rows.iter().position(|(r, _)| r == regime) {
            Some(i) => i,
            None => {
                table.rows.push((regime.to_string(), Vec::new()));
                table.rows.len() - 1
            }
        };
        cells.push((row, col, dist.summary()));
    }
    let width = table.columns.len();
    for (_, row) in table.rows.iter_mut() {
        row.resize(width, None);
    }
    for (r, c, text) in cells {
        table.rows[r].1[c] = Some(text);
    }
    table
}

impl ComparisonTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "");
        for c in &self.columns {
            let _ = write!(out, "{c:>16}");
        }
        out.push('\n');
        for (name, cells) in &self.rows {
            let _ = write!(out, "{name:<12}");
            for cell in cells {
                let _ = write!(out, "{:>16}", cell.as_deref().unwrap_or("-"));
            }
            out.push('\n');
        }
        out
    }
}
