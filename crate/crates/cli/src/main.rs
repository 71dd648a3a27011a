//! `layie`: batch driver for extraction runs, sweeps, re-scoring and reports.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{error::ErrorKind, Args, Parser, Subcommand};
use layie_core::backend::BackendKind;
use layie_core::rendering::MarkdownMode;
use layie_core::sweep::{OfatPolicy, ReportFormat};

use manifest::{ManifestFile, RunManifest};

#[derive(Parser)]
#[command(name = "layie", version, about = "Schema-driven entity extraction harness for layout-rich documents")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// TOML or JSON run manifest; flags override its fields.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a VRDU or FUNSD corpus to normalized JSONL.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "vrdu")]
        adapter: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the schema the adapter found.
        #[arg(long)]
        schema_out: Option<PathBuf>,
    },
    /// Execute one configuration.
    Run(RunArgs),
    /// Search the configuration space.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// ofat or factorial.
        #[arg(long)]
        mode: Option<String>,
        /// per_model or global_average (ofat only).
        #[arg(long)]
        policy: Option<OfatPolicy>,
    },
    /// Re-score stored completions under another stage or technique, without model calls.
    Score {
        /// Run directory written by `run` or `sweep`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        technique: Option<String>,
        #[arg(long)]
        stage: Option<String>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Render delta tables and summaries from scored results.
    Report {
        #[arg(long)]
        run: Option<PathBuf>,
        /// scores.jsonl files; default is the run directory's.
        #[arg(long)]
        input: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "csv,md,json")]
        format: Vec<ReportFormat>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Baseline overrides, `dim=value,...`.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Write a synthetic registration-form corpus with known answers.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        docs: usize,
        #[arg(long, default_value_t = 5)]
        train: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Extra lines of boilerplate per form.
        #[arg(long, default_value_t = 0)]
        filler: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Documents to score.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Documents to draw prompt examples from.
    #[arg(long)]
    training: Option<PathBuf>,
    /// normalized, vrdu or funsd.
    #[arg(long)]
    adapter: Option<String>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    synonyms: Option<PathBuf>,
    #[arg(long)]
    pricing: Option<PathBuf>,
    /// oracle (alias mock), http or replay.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Model names, repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    model: Vec<String>,
    #[arg(long)]
    base_url: Option<String>,
    /// rule_based or llm_assisted.
    #[arg(long)]
    markdown_mode: Option<MarkdownMode>,
    /// Baseline overrides, `dim=value,...`, e.g. `input=markdown,chunk=max`.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    technique: Option<String>,
    #[arg(long)]
    stage: Option<String>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Root of the run directories.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Record failing documents and continue.
    #[arg(long)]
    keep_going: bool,
    /// Run directory name; default derives from the manifest hash.
    #[arg(long)]
    sweep_id: Option<String>,
}

impl RunArgs {
    fn into_manifest(self, mode: Option<String>, policy: Option<OfatPolicy>) -> (ManifestFile, Option<String>) {
        let flags = ManifestFile {
            corpus: self.corpus,
            training: self.training,
            adapter: self.adapter,
            schema: self.schema,
            synonyms: self.synonyms,
            pricing: self.pricing,
            backend: self.backend,
            models: (!self.model.is_empty()).then_some(self.model),
            base_url: self.base_url,
            markdown_mode: self.markdown_mode,
            mode,
            policy,
            baseline: self.baseline,
            technique: self.technique,
            stage: self.stage,
            jobs: self.jobs,
            out: self.out,
            seed: self.seed,
            keep_going: self.keep_going.then_some(true),
            ..ManifestFile::default()
        };
        (flags, self.sweep_id)
    }
}

fn resolve(file: Option<PathBuf>, flags: ManifestFile) -> Result<RunManifest> {
    let base = match file {
        Some(p) => ManifestFile::load(&p)?,
        None => ManifestFile::default(),
    };
    RunManifest::resolve(base.overlay(flags))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            corpus,
            adapter,
            out,
            schema_out,
        } => commands::ingest(&corpus, &adapter, &out, schema_out.as_deref()),
        Command::Run(args) => {
            let (flags, id) = args.into_manifest(None, None);
            commands::run(commands::load(resolve(cli.manifest, flags)?)?, id)
        }
        Command::Sweep { run, mode, policy } => {
            let (flags, id) = run.into_manifest(mode, policy);
            commands::sweep(commands::load(resolve(cli.manifest, flags)?)?, id)
        }
        Command::Score {
            run,
            technique,
            stage,
            jobs,
        } => commands::score(&run, technique.as_deref(), stage.as_deref(), jobs),
        Command::Report {
            run,
            input,
            format,
            out,
            baseline,
        } => commands::report(run.as_deref(), &input, &format, out.as_deref(), baseline.as_deref()),
        Command::Synth {
            out,
            docs,
            train,
            seed,
            filler,
        } => commands::synth(&out, docs, train, seed, filler),
    }
}

/// 1 for caller mistakes, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err
        .chain()
        .find_map(|c| c.downcast_ref::<layie_core::Error>())
        .is_some_and(layie_core::Error::is_usage);
    if usage {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
