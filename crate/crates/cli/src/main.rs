//! `semfaith` command-line tool.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;

#[derive(Parser)]
#[command(name = "semfaith", version, about = "Semantic-faithfulness datasets, training and metrics for QA models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus file and rewrite it in canonical JSONL.
    Import(ImportArgs),
    /// Build the deletion suite (OS, TS, TS_R and optionally TS_R_AUG).
    Intervene(InterveneArgs),
    /// Generate the predicate-argument corpus or a templated story corpus.
    Synth(SynthArgs),
    /// Train a model from scratch on a deletion suite.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus file or a suite directory.
    Eval(EvalArgs),
    /// Org/Mod/Comb accuracy on exported negation edits.
    NegationEval(NegationEvalArgs),
    /// Accuracy and share of `no` answers per question form.
    PaEval(PaEvalArgs),
    /// Cosine-similarity probes of CLS and common-token embeddings.
    Probe(ProbeArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Write accepted negation edits from an annotation log as JSONL.
    Export(ExportArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            return report(&Failure::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    let result = match cli.command {
        Command::Import(a) => import(a),
        Command::Intervene(a) => intervene(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::NegationEval(a) => negation_eval(a),
        Command::PaEval(a) => pa_eval(a),
        Command::Probe(a) => probe(a),
        Command::Serve(a) => serve(a),
        Command::Export(a) => export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f),
    }
}

fn report(failure: &Failure) -> ExitCode {
    let message = failure.message().replace(['\n', '\r'], " ");
    eprintln!("error class={}: {message}", failure.class());
    ExitCode::from(failure.exit_code())
}
