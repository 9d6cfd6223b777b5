use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{augment_answer_sentence, delete_rationale, truncate_at_rationale, InterventionRecord, SentenceGenerator};
use crate::corpus::{load_corpus, Corpus, Record, SourceFormat, Split, Variant};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardEntry {
    pub id: String,
    /// The variant that could not be built.
    pub variant: Variant,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeletionSuite {
    pub source_format: SourceFormat,
    pub variants: BTreeMap<Variant, Vec<InterventionRecord>>,
    pub discards: Vec<DiscardEntry>,
}

/// `suite.json`, written next to the variant files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteHeader {
    pub source_format: SourceFormat,
    pub counts: BTreeMap<Variant, usize>,
    pub discards: Vec<DiscardEntry>,
}

pub fn variant_file_name(variant: Variant) -> String {
    format!("{}.jsonl", variant.as_str().to_lowercase())
}

impl DeletionSuite {
    pub fn records(&self, variant: Variant) -> &[InterventionRecord] {
        self.variants.get(&variant).map_or(&[], Vec::as_slice)
    }

    pub fn discard_count(&self, variant: Variant) -> usize {
        self.discards.iter().filter(|d| d.variant == variant).count()
    }

    pub fn header(&self) -> SuiteHeader {
        SuiteHeader {
            source_format: self.source_format,
            counts: self.variants.iter().map(|(v, r)| (*v, r.len())).collect(),
            discards: self.discards.clone(),
        }
    }

    pub fn corpus(&self, variant: Variant) -> Result<Corpus> {
        let items = self.records(variant).iter().map(|r| r.item.clone()).collect();
        Corpus::new(items, self.source_format, Split::Train)
    }

    /// Writes one JSONL file per variant plus `suite.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (variant, records) in &self.variants {
            let mut out = BufWriter::new(File::create(dir.join(variant_file_name(*variant)))?);
            for r in records {
                serde_json::to_writer(&mut out, &Record::from(&r.item))?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
        let mut header = serde_json::to_vec_pretty(&self.header())?;
        header.push(b'\n');
        fs::write(dir.join("suite.json"), header)?;
        Ok(())
    }
}

/// Reads a suite directory written by [`DeletionSuite::save`].
pub fn load_suite(dir: impl AsRef<Path>) -> Result<(SuiteHeader, BTreeMap<Variant, Corpus>)> {
    let dir = dir.as_ref();
    let header: SuiteHeader = serde_json::from_slice(&fs::read(dir.join("suite.json"))?)?;
    let mut variants = BTreeMap::new();
    for variant in header.counts.keys() {
        let corpus = load_corpus(dir.join(variant_file_name(*variant)), header.source_format)?;
        if corpus.len() != header.counts[variant] {
            return Err(Error::Integrity(format!(
                "{} has {} records, suite.json says {}",
                variant_file_name(*variant),
                corpus.len(),
                header.counts[variant]
            )));
        }
        if let Some(item) = corpus.items.iter().find(|i| i.variant() != *variant) {
            return Err(Error::Integrity(format!(
                "item {} in {} is labeled {}",
                item.id,
                variant_file_name(*variant),
                item.variant()
            )));
        }
        variants.insert(*variant, corpus);
    }
    Ok((header, variants))
}

/// OS passthrough plus TS and TS_R (and TS_R_AUG when `gen` is given) for
/// every item that admits them. HotpotQA-style corpora skip truncation: TS is
/// not produced and TS_R is built from the original story.
pub fn build_deletion_suite(corpus: &Corpus, gen: Option<&dyn SentenceGenerator>) -> Result<DeletionSuite> {
    let hotpot = corpus.source_format == SourceFormat::Hotpot;
    let mut variants: BTreeMap<Variant, Vec<InterventionRecord>> = BTreeMap::new();
    variants.insert(Variant::Os, Vec::new());
    if !hotpot {
        variants.insert(Variant::Ts, Vec::new());
    }
    variants.insert(Variant::TsR, Vec::new());
    if gen.is_some() {
        variants.insert(Variant::TsRAug, Vec::new());
    }
    let mut discards = Vec::new();
    let mut push = |variant: Variant, result: Result<InterventionRecord>| -> Result<Option<InterventionRecord>> {
        match result {
            Ok(record) => {
                variants.get_mut(&variant).expect("variant list exists").push(record.clone());
                Ok(Some(record))
            }
            Err(Error::Discarded { id, reason }) => {
                discards.push(DiscardEntry { id, variant, reason });
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };

    for item in &corpus.items {
        let os = InterventionRecord::original(item);
        push(Variant::Os, Ok(os.clone()))?;
        let source = if hotpot {
            os
        } else {
            match push(Variant::Ts, truncate_at_rationale(item))? {
                Some(ts) => ts,
                None => continue,
            }
        };
        let Some(tsr) = push(Variant::TsR, delete_rationale(&source, item, corpus.source_format))? else {
            continue;
        };
        if let Some(gen) = gen {
            push(Variant::TsRAug, augment_answer_sentence(&tsr, item, gen))?;
        }
    }
    Ok(DeletionSuite {
        source_format: corpus.source_format,
        variants,
        discards,
    })
}
