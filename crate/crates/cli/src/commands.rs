use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use serde::Serialize;

use semfaith::corpus::{load_corpus, AnswerType, Corpus, Layout, SourceFormat, Variant};
use semfaith::intervene::{build_deletion_suite, load_suite, GeneratorClient};
use semfaith::metrics::{evaluate, evaluate_negation, pa_report, render_grid, EvalReport};
use semfaith::model::{load_checkpoint, save_checkpoint, ModelConfig, Predictor, QaModel};
use semfaith::probe::{cls_cossim, common_token_cossim, summarize, EmbeddingDump, SimilarityDistribution, DEFAULT_BINS};
use semfaith::synth::{generate_pa_items, generate_story_corpus, pa_corpus, pa_variants, PaItem, QuestionForm, StoryConfig, DEFAULT_COLORS};
use semfaith::training::{fresh_model, Optimizer, Regime, TrainConfig};
use semfaith::{Error, RunManifest};
use semfaith_service::{export_jsonl, replay, Service};

pub enum Failure {
    Usage(String),
    Run(Error),
}

impl Failure {
    pub fn class(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Run(e) => e.class(),
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Run(e) => e.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Run(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Run(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn parse_format(s: &str) -> Result<SourceFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_optimizer(s: &str) -> Result<Optimizer, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn require(path: &Path) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("no such file or directory: {}", path.display())))
    }
}

fn manifest<A: Serialize>(command: &str, args: &A, inputs: &[&Path], seed: Option<u64>, output: &Path) -> Outcome {
    let config = serde_json::to_value(args)?;
    let path = RunManifest::new(command, config, inputs, seed)?.save_beside(output)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn model_from(path: &Path) -> Result<QaModel, Failure> {
    require(path)?;
    Ok(load_checkpoint(path)?)
}

fn ensure_parent(path: &Path) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

#[derive(Args, Serialize)]
pub struct ImportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "coqa", value_parser = parse_format)]
    format: SourceFormat,
    #[arg(long)]
    out: PathBuf,
}

pub fn import(a: ImportArgs) -> Outcome {
    require(&a.input)?;
    let corpus = load_corpus(&a.input, a.format)?;
    ensure_parent(&a.out)?;
    corpus.save(&a.out)?;
    let mut types: BTreeMap<&str, usize> = BTreeMap::new();
    for item in &corpus.items {
        *types.entry(item.answer_type.as_str()).or_default() += 1;
    }
    let sentences: usize = corpus.items.iter().map(|i| i.sentences.len()).sum();
    let types: Vec<String> = types.iter().map(|(t, n)| format!("{t} {n}")).collect();
    println!("items {} ({}), sentences {sentences}", corpus.len(), types.join(", "));
    manifest("import", &a, &[&a.input], None, &a.out)
}

#[derive(Args, Serialize)]
pub struct InterveneArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "coqa", value_parser = parse_format)]
    format: SourceFormat,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// none, stub or http:URL
    #[arg(long, default_value = "none")]
    aug: String,
    /// Per-request timeout of the HTTP generator.
    #[arg(long, default_value_t = 30_000)]
    gen_timeout_ms: u64,
}

pub fn intervene(a: InterveneArgs) -> Outcome {
    require(&a.input)?;
    let gen = GeneratorClient::parse(&a.aug, Duration::from_millis(a.gen_timeout_ms))?;
    let corpus = load_corpus(&a.input, a.format)?;
    let suite = build_deletion_suite(&corpus, gen.as_ref().map(|g| g.as_generator()))?;
    suite.save(&a.out)?;
    for (variant, records) in &suite.variants {
        println!("{:<9} {:>6} records {:>6} discarded", variant.as_str(), records.len(), suite.discard_count(*variant));
    }
    manifest("intervene", &a, &[&a.input], None, &a.out)
}

#[derive(Args, Serialize)]
pub struct SynthArgs {
    /// Output JSONL; question-form variants go to sibling files.
    #[arg(long)]
    out: PathBuf,
    /// pa or stories
    #[arg(long, default_value = "pa")]
    kind: String,
    /// Comma-separated color words (pa).
    #[arg(long, value_delimiter = ',')]
    colors: Vec<String>,
    /// Number of items (stories).
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Include up to two previous turns as question history (stories).
    #[arg(long)]
    history: bool,
}

pub fn synth_sibling(out: &Path, form: QuestionForm) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("pa");
    out.with_file_name(format!("{stem}.{}.jsonl", form.as_str()))
}

pub fn synth(a: SynthArgs) -> Outcome {
    ensure_parent(&a.out)?;
    match a.kind.as_str() {
        "pa" => {
            let colors: Vec<&str> = if a.colors.is_empty() {
                DEFAULT_COLORS.to_vec()
            } else {
                a.colors.iter().map(String::as_str).collect()
            };
            let items = generate_pa_items(&colors)?;
            pa_corpus(&items)?.save(&a.out)?;
            let stories: BTreeSet<&str> = items.iter().map(|i| i.story.as_str()).collect();
            let yes = items.iter().filter(|i| i.gold == AnswerType::Yes).count();
            println!("stories {}, questions {} (yes {yes}, no {})", stories.len(), items.len(), items.len() - yes);
            let mut by_form: BTreeMap<QuestionForm, Vec<PaItem>> = BTreeMap::new();
            for item in pa_variants(&items)? {
                by_form.entry(item.question_form).or_default().push(item);
            }
            for (form, variants) in &by_form {
                let path = synth_sibling(&a.out, *form);
                pa_corpus(variants)?.save(&path)?;
                println!("{:<16} {:>4} -> {}", form.as_str(), variants.len(), path.display());
            }
        }
        "stories" => {
            let cfg = StoryConfig {
                history: a.history,
                ..StoryConfig::default()
            };
            let corpus = generate_story_corpus(a.n, a.seed, &cfg)?;
            corpus.save(&a.out)?;
            println!("items {}", corpus.len());
        }
        other => return Err(Failure::Usage(format!("unknown synth kind `{other}` (expected pa or stories)"))),
    }
    let seed = (a.kind == "stories").then_some(a.seed);
    manifest("synth", &a, &[] as &[&Path], seed, &a.out)
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    /// Suite directory written by `intervene`.
    #[arg(long, visible_alias = "in")]
    suite: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "ot", value_parser = parse_regime)]
    regime: Regime,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value = "adam", value_parser = parse_optimizer)]
    optimizer: Optimizer,
    /// Global gradient-norm clip; 0 disables it.
    #[arg(long, default_value_t = 5.0)]
    clip: f64,
    #[arg(long, default_value_t = 128)]
    max_len: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 128)]
    ffn: usize,
    /// Tokens seen fewer times map to the unknown-token id.
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

pub fn train_log_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".log.jsonl");
    checkpoint.with_file_name(name)
}

pub fn train(a: TrainArgs) -> Outcome {
    require(&a.suite)?;
    let (_, suites) = load_suite(&a.suite)?;
    let config = ModelConfig {
        d_model: a.d_model,
        layers: a.layers,
        heads: a.heads,
        ffn_width: a.ffn,
        max_len: a.max_len,
        vocab_size: 0,
        seed: a.seed,
    };
    let corpora: Vec<Corpus> = suites.values().cloned().collect();
    let model = fresh_model(config, &corpora, a.min_count, Layout::QuestionFirst)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        optimizer: a.optimizer,
        lambda: a.lambda,
        seed: a.seed,
        regime: a.regime,
        clip_norm: (a.clip > 0.0).then_some(a.clip),
    };
    let (trained, log) = semfaith::training::train(&model, &suites, &cfg)?;
    ensure_parent(&a.out)?;
    save_checkpoint(&trained, &a.out)?;
    log.save_jsonl(train_log_path(&a.out))?;
    let mix: Vec<String> = log.mix.iter().map(|(v, n)| format!("{v} {n}")).collect();
    println!("regime {} steps {} mix [{}] skipped {}", a.regime, log.steps(), mix.join(", "), log.skipped.len());
    for e in &log.epochs {
        println!("epoch {} mean loss {:.4}", e.epoch, e.mean_loss);
    }
    manifest("train", &a, &[&a.suite], Some(a.seed), &a.out)
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Corpus file or suite directory.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "coqa", value_parser = parse_format)]
    format: SourceFormat,
    /// Directory for per-variant JSON and CSV reports.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn eval_inputs(input: &Path, format: SourceFormat) -> Result<Vec<(String, Corpus)>, Failure> {
    if input.is_dir() {
        let (_, suites) = load_suite(input)?;
        Ok(suites.into_iter().map(|(v, c)| (v.as_str().to_string(), c)).collect())
    } else {
        let label = input.file_stem().and_then(|s| s.to_str()).unwrap_or("input").to_string();
        Ok(vec![(label, load_corpus(input, format)?)])
    }
}

pub fn eval(a: EvalArgs) -> Outcome {
    require(&a.input)?;
    let model = model_from(&a.model)?;
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for (label, corpus) in eval_inputs(&a.input, a.format)? {
        if corpus.is_empty() {
            log::warn!("{label}: no items, skipped");
            continue;
        }
        reports.push((label, evaluate(&model, &corpus)?));
    }
    if reports.is_empty() {
        return Err(Error::EmptyReport.into());
    }
    let grid = render_grid(&reports.iter().map(|(l, r)| (l.clone(), r)).collect::<Vec<_>>());
    print!("{grid}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        for (label, report) in &reports {
            let stem = label.to_lowercase();
            fs::write(out.join(format!("{stem}.json")), report.to_json()? + "\n")?;
            fs::write(out.join(format!("{stem}.csv")), report.to_csv()?)?;
        }
        fs::write(out.join("grid.txt"), &grid)?;
        manifest("eval", &a, &[&a.model, &a.input], None, out)?;
    }
    Ok(())
}

#[derive(Args, Serialize)]
pub struct NegationEvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Exported negation JSONL.
    #[arg(long = "in")]
    input: PathBuf,
    /// The corpus the edits were made on.
    #[arg(long)]
    originals: PathBuf,
    #[arg(long, default_value = "coqa", value_parser = parse_format)]
    format: SourceFormat,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn negation_eval(a: NegationEvalArgs) -> Outcome {
    require(&a.input)?;
    require(&a.originals)?;
    let model = model_from(&a.model)?;
    let negated = load_corpus(&a.input, a.format)?;
    if let Some(item) = negated.items.iter().find(|i| i.variant() != Variant::Neg) {
        return Err(Error::Integrity(format!("item {} is {}, not NEG", item.id, item.variant())).into());
    }
    let originals = load_corpus(&a.originals, a.format)?;
    let report = evaluate_negation(&model, &originals, &negated)?;
    println!(
        "Org-Acc {:.1}  Mod-Acc {:.1}  Comb-Acc {:.1}  n {}",
        report.org_acc, report.mod_acc, report.comb_acc, report.n
    );
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
        manifest("negation-eval", &a, &[&a.model, &a.input, &a.originals], None, out)?;
    }
    Ok(())
}

#[derive(Args, Serialize)]
pub struct PaEvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Predicate-argument JSONL files (originals and any question-form variants).
    #[arg(long = "in", required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn pa_eval(a: PaEvalArgs) -> Outcome {
    for p in &a.input {
        require(p)?;
    }
    let model = model_from(&a.model)?;
    let mut preds: Vec<(QuestionForm, String, String)> = Vec::new();
    for p in &a.input {
        for item in load_corpus(p, SourceFormat::Synthetic)?.items {
            let form = PaItem::from_qa_item(&item)?.question_form;
            preds.push((form, model.predict(&item)?.text, item.gold_answer.clone()));
        }
    }
    if preds.is_empty() {
        return Err(Error::EmptyReport.into());
    }
    let report = pa_report(preds.iter().map(|(f, p, g)| (*f, p.as_str(), g.as_str())));
    print!("{}", report.render());
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
        let inputs: Vec<&Path> = std::iter::once(a.model.as_path()).chain(a.input.iter().map(PathBuf::as_path)).collect();
        manifest("pa-eval", &a, &inputs, None, out)?;
    }
    Ok(())
}

#[derive(Args, Serialize)]
pub struct ProbeArgs {
    /// `LABEL=CHECKPOINT` (or a bare path, labelled by its stem); repeatable.
    #[arg(long)]
    model: Vec<String>,
    /// Suite directory written by `intervene`.
    #[arg(long, visible_alias = "in")]
    suite: Option<PathBuf>,
    /// Compare two existing dumps instead (give exactly two).
    #[arg(long)]
    dump: Vec<PathBuf>,
    /// Directory for dumps, histogram CSVs and the summary table.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
}

fn labelled(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((label, path)) => (label.to_string(), PathBuf::from(path)),
        None => {
            let path = PathBuf::from(spec);
            let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
            (label, path)
        }
    }
}

fn ids(dump: &EmbeddingDump) -> BTreeSet<String> {
    dump.records.iter().map(|r| r.id.clone()).collect()
}

fn write_histograms(out: &Path, stem: &str, cls: &SimilarityDistribution, tok: &SimilarityDistribution) -> Outcome {
    fs::write(out.join(format!("{stem}.cls.csv")), cls.histogram.to_csv())?;
    fs::write(out.join(format!("{stem}.tok.csv")), tok.histogram.to_csv())?;
    Ok(())
}

pub fn probe(a: ProbeArgs) -> Outcome {
    fs::create_dir_all(&a.out)?;
    let mut entries: Vec<(String, String, SimilarityDistribution)> = Vec::new();
    let mut inputs: Vec<PathBuf> = Vec::new();
    if !a.dump.is_empty() {
        let [x, y] = a.dump.as_slice() else {
            return Err(Failure::Usage("--dump must be given exactly twice".into()));
        };
        require(x)?;
        require(y)?;
        let (da, db) = (EmbeddingDump::load(x)?, EmbeddingDump::load(y)?);
        let cls = cls_cossim(&da, &db, a.bins)?;
        let tok = common_token_cossim(&da, &db, a.bins)?;
        write_histograms(&a.out, "pair", &cls, &tok)?;
        entries.push(("pair".into(), "CLS".into(), cls));
        entries.push(("pair".into(), "tokens".into(), tok));
        inputs.extend([x.clone(), y.clone()]);
    } else {
        let suite = a
            .suite
            .as_ref()
            .ok_or_else(|| Failure::Usage("give --suite with --model, or two --dump files".into()))?;
        if a.model.is_empty() {
            return Err(Failure::Usage("at least one --model is required with --suite".into()));
        }
        require(suite)?;
        let (_, suites) = load_suite(suite)?;
        inputs.push(suite.clone());
        let os = suites
            .get(&Variant::Os)
            .ok_or_else(|| Error::Integrity("suite has no OS variant".into()))?;
        for spec in &a.model {
            let (label, path) = labelled(spec);
            let model = model_from(&path)?;
            inputs.push(path);
            let os_dump = model.embed_corpus(os)?;
            os_dump.save(a.out.join(format!("{label}.os.fbed")))?;
            for variant in [Variant::Ts, Variant::TsR] {
                let Some(other) = suites.get(&variant).filter(|c| !c.is_empty()) else {
                    continue;
                };
                let dump = model.embed_corpus(other)?;
                let name = variant.as_str().to_lowercase();
                dump.save(a.out.join(format!("{label}.{name}.fbed")))?;
                let base = os_dump.restrict(&ids(&dump));
                let cls = cls_cossim(&base, &dump, a.bins)?;
                let tok = common_token_cossim(&base, &dump, a.bins)?;
                write_histograms(&a.out, &format!("{label}.os-{name}"), &cls, &tok)?;
                let pair = format!("OS/{}", variant.as_str());
                entries.push((label.clone(), format!("CLS {pair}"), cls));
                entries.push((label.clone(), format!("tok {pair}"), tok));
            }
        }
    }
    let table = summarize(entries.iter().map(|(r, c, d)| (r.as_str(), c.as_str(), d)));
    let rendered = table.render();
    print!("{rendered}");
    for (regime, comparison, dist) in &entries {
        if dist.unmatched > 0 || dist.zero_vectors > 0 {
            println!("{regime} {comparison}: unmatched tokens {}, zero vectors {}", dist.unmatched, dist.zero_vectors);
        }
        if comparison.starts_with("CLS") {
            println!("\n{regime} {comparison}\n{}", dist.histogram.render(40));
        }
    }
    fs::write(a.out.join("table.txt"), rendered)?;
    fs::write(a.out.join("table.json"), serde_json::to_string_pretty(&table)? + "\n")?;
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    manifest("probe", &a, &inputs, None, &a.out)
}

#[derive(Args, Serialize)]
pub struct ServeArgs {
    /// Corpus whose yes/no items are offered for annotation.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "coqa", value_parser = parse_format)]
    format: SourceFormat,
    /// Checkpoint used to report model flips; optional.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Annotation event log (created if missing).
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

pub fn serve(a: ServeArgs) -> Outcome {
    require(&a.input)?;
    let corpus = load_corpus(&a.input, a.format)?;
    let model = a.model.as_deref().map(model_from).transpose()?;
    let service = Service::open(&corpus, model, &a.store)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot bind {}: {e}", a.bind))))?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        service.run(listener, shutdown_signal()).await?;
        Ok(())
    })
}

#[derive(Args, Serialize)]
pub struct ExportArgs {
    /// Annotation event log.
    #[arg(long)]
    store: PathBuf,
    /// Corpus the log was written against.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "coqa", value_parser = parse_format)]
    format: SourceFormat,
    #[arg(long)]
    out: PathBuf,
}

pub fn export(a: ExportArgs) -> Outcome {
    require(&a.store)?;
    require(&a.input)?;
    let corpus = load_corpus(&a.input, a.format)?;
    let (state, events) = replay(&a.store)?;
    let items = corpus.items.iter().map(|i| (i.id.clone(), i.clone())).collect();
    let text = export_jsonl(&items, &state)?;
    ensure_parent(&a.out)?;
    fs::write(&a.out, &text)?;
    println!("events {events}, exported {}", text.lines().count());
    manifest("export", &a, &[&a.store, &a.input], None, &a.out)
}
