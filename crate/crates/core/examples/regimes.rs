//! Trains OT and IBT models on a templated corpus and compares them on
//! held-out intervened items.
//!
//! Knobs come from the environment: N, HELD, EPOCHS, BATCH, LR, LAMBDA,
//! HEADS, FFN, HIST (1 keeps question history).

use std::collections::BTreeMap;
use std::time::Instant;

use semfaith::corpus::{Corpus, Layout, Split, Variant};
use semfaith::intervene::build_deletion_suite;
use semfaith::metrics::evaluate;
use semfaith::model::ModelConfig;
use semfaith::probe::{compare_variants, DEFAULT_BINS};
use semfaith::synth::{generate_story_corpus, StoryConfig};
use semfaith::training::{fresh_model, train, Regime, TrainConfig};

fn arg(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> semfaith::Result<()> {
    let n = arg("N", 2000.0) as usize;
    let held = arg("HELD", 300.0) as usize;
    let epochs = arg("EPOCHS", 5.0) as usize;
    let story = StoryConfig {
        history: arg("HIST", 0.0) != 0.0,
        ..StoryConfig::default()
    };
    let corpus = generate_story_corpus(n, 7, &story)?;
    let (train_items, held_items) = corpus.items.split_at(n - held);
    let train_suite = build_deletion_suite(&Corpus::new(train_items.to_vec(), corpus.source_format, Split::Train)?, None)?;
    let held_suite = build_deletion_suite(&Corpus::new(held_items.to_vec(), corpus.source_format, Split::Dev)?, None)?;
    let suites: BTreeMap<Variant, Corpus> = [Variant::Os, Variant::Ts, Variant::TsR]
        .into_iter()
        .map(|v| Ok((v, train_suite.corpus(v)?)))
        .collect::<semfaith::Result<_>>()?;
    let config = ModelConfig {
        d_model: 64,
        layers: 2,
        heads: arg("HEADS", 4.0) as usize,
        ffn_width: arg("FFN", 128.0) as usize,
        max_len: 128,
        vocab_size: 0,
        seed: 7,
    };
    let corpora: Vec<Corpus> = suites.values().cloned().collect();
    let model = fresh_model(config, &corpora, 1, Layout::QuestionFirst)?;
    let held_os = held_suite.corpus(Variant::Os)?;
    let held_ts = held_suite.corpus(Variant::Ts)?;
    let held_tsr = held_suite.corpus(Variant::TsR)?;
    for regime in [Regime::Ot, Regime::Ibt] {
        let cfg = TrainConfig {
            epochs,
            batch_size: arg("BATCH", 8.0) as usize,
            lr: arg("LR", 2e-3),
            lambda: arg("LAMBDA", 3.0),
            seed: 7,
            regime,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let (trained, log) = train(&model, &suites, &cfg)?;
        let secs = t.elapsed().as_secs_f64();
        let losses: Vec<String> = log.epochs.iter().map(|e| format!("{:.3}", e.mean_loss)).collect();
        let os = evaluate(&trained, &held_os)?;
        let ts = evaluate(&trained, &held_ts)?;
        let tsr = evaluate(&trained, &held_tsr)?;
        let (c_ts, _) = compare_variants(&trained, &held_os, &held_ts, DEFAULT_BINS)?;
        let (c_tsr, _) = compare_variants(&trained, &held_os, &held_tsr, DEFAULT_BINS)?;
        println!(
            "{regime}: {secs:.0}s steps {} losses {losses:?} | OS em {:.1} f1 {:.1} unk {:.1} | TS em {:.1} unk {:.1} | TS_R unk {:.1} (n {}) | cls OS/TS {} OS/TS_R {}",
            log.steps(),
            os.em,
            os.f1,
            os.unk_pct,
            ts.em,
            ts.unk_pct,
            tsr.unk_pct,
            tsr.n,
            c_ts.summary(),
            c_tsr.summary()
        );
    }
    Ok(())
}
