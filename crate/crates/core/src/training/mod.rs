//! Original (OT) and intervention-based (IBT) training.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab_from, Corpus, Layout, PackedInput, SourceFormat, Variant};
use crate::error::{Error, Result};
use crate::model::{accumulate_grads, init_params, AnswerClass, Gold, GoldTarget, ModelConfig, ModelParams, QaModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    #[default]
    Ot,
    Ibt,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Ot => "ot",
            Regime::Ibt => "ibt",
        }
    }

    /// Variants a run under this regime reads.
    pub fn variants(self, format: SourceFormat) -> Vec<Variant> {
        match self {
            Regime::Ot => vec![Variant::Os],
            Regime::Ibt if format == SourceFormat::Hotpot => vec![Variant::Os, Variant::TsR],
            Regime::Ibt => vec![Variant::Os, Variant::Ts, Variant::TsR],
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ot" => Ok(Regime::Ot),
            "ibt" => Ok(Regime::Ibt),
            _ => Err(Error::Config(format!("unknown regime `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    /// Weight of the rationale-tagging loss.
    pub lambda: f64,
    pub seed: u64,
    pub regime: Regime,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 8,
            lr: 3e-4,
            optimizer: Optimizer::Adam,
            lambda: 1.0,
            seed: 7,
            regime: Regime::Ot,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {} must be non-negative", self.lambda)));
        }
        if self.clip_norm.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// One element of an interleaved stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tagged<'a, T> {
    pub variant: Variant,
    /// Index within the variant's suite.
    pub index: usize,
    pub item: &'a T,
}

/// Seeded shuffle of the union of all suites, each element tagged with the
/// variant it came from.
pub fn interleave<T>(suites: &BTreeMap<Variant, Vec<T>>, seed: u64) -> Vec<Tagged<'_, T>> {
    let mut stream: Vec<Tagged<'_, T>> = suites
        .iter()
        .flat_map(|(variant, items)| {
            items.iter().enumerate().map(|(index, item)| Tagged {
                variant: *variant,
                index,
                item,
            })
        })
        .collect();
    stream.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    stream
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub variant: Variant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSnapshot {
    pub epoch: usize,
    pub mean_loss: f64,
    pub variant_loss: BTreeMap<Variant, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedExample {
    pub id: String,
    pub variant: Variant,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// One entry per example, in training order.
    pub entries: Vec<LogEntry>,
    /// Mean example loss of each optimizer step.
    pub step_loss: Vec<f64>,
    pub epochs: Vec<EpochSnapshot>,
    /// Examples per variant that took part in training.
    pub mix: BTreeMap<Variant, usize>,
    pub skipped: Vec<SkippedExample>,
}

impl TrainLog {
    pub fn steps(&self) -> usize {
        self.step_loss.len()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// A fresh model whose vocab covers every corpus given.
pub fn fresh_model(mut config: ModelConfig, corpora: &[Corpus], min_count: usize, layout: Layout) -> Result<QaModel> {
    let vocab = build_vocab_from(corpora, min_count);
    config.vocab_size = vocab.len();
    Ok(QaModel::new(init_params(&config)?, vocab, layout))
}

struct Example {
    id: String,
    input: PackedInput,
    gold: Gold,
}

fn prepare(model: &QaModel, corpus: &Corpus, variant: Variant, skipped: &mut Vec<SkippedExample>) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(corpus.len());
    for item in &corpus.items {
        let built = model.pack(item).and_then(|input| {
            let mut gold = Gold::from_item(item, &input)?;
            if matches!(variant, Variant::TsR | Variant::TsRAug) {
                gold.target = GoldTarget::Class(AnswerClass::Unknown);
            }
            Ok((input, gold))
        });
        match built {
            Ok((input, gold)) => out.push(Example {
                id: item.id.clone(),
                input,
                gold,
            }),
            Err(e @ (Error::Capacity(_) | Error::Integrity(_))) => skipped.push(SkippedExample {
                id: item.id.clone(),
                variant,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

enum State {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl State {
    fn new(kind: Optimizer, n: usize) -> Self {
        match kind {
            Optimizer::Sgd => State::Sgd,
            Optimizer::Adam => State::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        match self {
            State::Sgd => params.iter_mut().zip(grads).for_each(|(p, g)| *p -= lr * g),
            State::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - BETA1.powi(*t);
                let c2 = 1.0 - BETA2.powi(*t);
                for i in 0..params.len() {
                    let g = grads[i];
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

/// Trains `model` on the suites its regime reads.
///
/// TS_R and TS_R_AUG examples always target `unknown`. Examples that cannot
/// be packed or whose gold span was truncated away are skipped and listed in
/// the log.
pub fn train(model: &QaModel, suites: &BTreeMap<Variant, Corpus>, cfg: &TrainConfig) -> Result<(QaModel, TrainLog)> {
    cfg.validate()?;
    let format = suites
        .get(&Variant::Os)
        .map(|c| c.source_format)
        .ok_or_else(|| Error::Config(format!("regime {} needs a non-empty OS suite", cfg.regime)))?;
    let mut log = TrainLog::default();
    let mut examples: BTreeMap<Variant, Vec<Example>> = BTreeMap::new();
    for variant in cfg.regime.variants(format) {
        let corpus = suites
            .get(&variant)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| Error::Config(format!("regime {} needs a non-empty {variant} suite", cfg.regime)))?;
        let prepared = prepare(model, corpus, variant, &mut log.skipped)?;
        log.mix.insert(variant, prepared.len());
        examples.insert(variant, prepared);
    }
    let total: usize = log.mix.values().sum();
    if total == 0 {
        return Err(Error::Config("no trainable examples after packing".into()));
    }

    let mut params: ModelParams = model.params.clone();
    let mut grads = params.zeros_like();
    let mut opt = State::new(cfg.optimizer, params.len());
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let stream = interleave(&examples, cfg.seed.wrapping_add(epoch as u64));
        let mut epoch_loss = 0.0;
        let mut variant_loss: BTreeMap<Variant, (f64, usize)> = BTreeMap::new();
        for batch in stream.chunks(cfg.batch_size) {
            grads.data.fill(0.0);
            let mut batch_loss = 0.0;
            for ex in batch {
                let loss = accumulate_grads(&params, &ex.item.input, &ex.item.gold, cfg.lambda, &mut grads)?.total;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        message: format!("loss {loss} on {} example {}", ex.variant, ex.item.id),
                    });
                }
                batch_loss += loss;
                let acc = variant_loss.entry(ex.variant).or_default();
                acc.0 += loss;
                acc.1 += 1;
                log.entries.push(LogEntry {
                    step,
                    loss,
                    variant: ex.variant,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            grads.data.iter_mut().for_each(|g| *g *= scale);
            if let Some(clip) = cfg.clip_norm {
                let norm = grads.data.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > clip {
                    grads.data.iter_mut().for_each(|g| *g *= clip / norm);
                }
            }
            opt.step(&mut params.data, &grads.data, cfg.lr);
            if !params.is_finite() {
                return Err(Error::Diverged {
                    step,
                    message: "non-finite parameters after update".into(),
                });
            }
            epoch_loss += batch_loss;
            log.step_loss.push(batch_loss * scale);
            step += 1;
        }
        log.epochs.push(EpochSnapshot {
            epoch: epoch + 1,
            mean_loss: epoch_loss / total as f64,
            variant_loss: variant_loss.into_iter().map(|(v, (s, n))| (v, s / n as f64)).collect(),
        });
    }
    let trained = QaModel {
        params,
        ..model.clone()
    };
    Ok((trained, log))
}
