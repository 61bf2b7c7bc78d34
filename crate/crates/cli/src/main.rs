use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neurotag::{
    cmd_annotate, cmd_build_concepts, cmd_evaluate, cmd_inspect, cmd_make_fixture, cmd_run, cmd_select,
    BuildConceptsArgs, OutputFormat, RunConfig, StrategyKind,
};
use neurotag_core::annotate::{AnnotationParams, DEFAULT_BETA};
use neurotag_core::concepts::DEFAULT_MAX_TOKEN_LENGTH;
use neurotag_core::evaluate::{Aggregation, EvalConfig, MatchMode};
use neurotag_core::fixture::DEFAULT_SEED;
use neurotag_core::select::{SelectionMode, SelectionParams, DEFAULT_ALPHA};
use neurotag_core::{Error, Result};

/// Exit codes: 0 ok, 2 usage, 3 io, 4 input-missing, 5 format, 6 integrity,
/// 7 coverage, 8 validation, 9 empty-result, 10 lookup.
#[derive(Parser)]
#[command(name = "neurotag", version, about = "Annotate neurons with concepts from probing activations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a concept set from a report corpus.
    BuildConcepts(BuildConceptsCmd),
    /// Select highly activating images for every neuron.
    Select(SelectCmd),
    /// Score and annotate selections with concepts.
    Annotate(AnnotateCmd),
    /// Evaluate annotations against neuron labels.
    Evaluate(EvaluateCmd),
    /// Run the whole pipeline from a config file.
    Run(RunCmd),
    /// Print one neuron's annotation card.
    Inspect(InspectCmd),
    /// Write the synthetic fixture bundle.
    #[command(hide = true)]
    MakeFixture(MakeFixtureCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Lexicon,
    Pretagged,
    Heuristic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Adaptive,
    Topk,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatchArg {
    Exact,
    Substring,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Mean,
    Max,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Table,
}

impl From<ModeArg> for SelectionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Adaptive => SelectionMode::Adaptive,
            ModeArg::Topk => SelectionMode::Topk,
        }
    }
}

impl From<MatchArg> for MatchMode {
    fn from(m: MatchArg) -> Self {
        match m {
            MatchArg::Exact => MatchMode::Exact,
            MatchArg::Substring => MatchMode::Substring,
        }
    }
}

impl From<AggArg> for Aggregation {
    fn from(a: AggArg) -> Self {
        match a {
            AggArg::Mean => Aggregation::Mean,
            AggArg::Max => Aggregation::Max,
        }
    }
}

#[derive(Args)]
struct BuildConceptsCmd {
    /// Plain corpus (reports separated by blank lines) or `token<TAB>tag` lines.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "lexicon")]
    strategy: StrategyArg,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min_frequency: u32,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_TOKEN_LENGTH)]
    max_token_length: usize,
}

#[derive(Args)]
struct SelectionArgs {
    #[arg(long, value_enum, default_value = "adaptive")]
    mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

impl SelectionArgs {
    fn params(&self) -> SelectionParams {
        SelectionParams {
            mode: self.mode.into(),
            alpha: self.alpha,
            k: self.k,
        }
    }
}

#[derive(Args)]
struct SelectCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    selection: SelectionArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct AnnotateCmd {
    #[arg(long)]
    manifest: PathBuf,
    /// Output of `select`.
    #[arg(long)]
    selections: PathBuf,
    /// Encoder used for scoring.
    #[arg(long)]
    encoder: String,
    /// Template row id in the template table.
    #[arg(long)]
    template: String,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    force_top1: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EvaluateCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// Encoders for label similarity, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    encoders: Vec<String>,
    /// Defaults to the manifest's label layer.
    #[arg(long)]
    layer: Option<String>,
    #[arg(long = "match", value_enum, default_value = "exact")]
    match_rule: MatchArg,
    #[arg(long, value_enum, default_value = "mean")]
    agg: AggArg,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct RunCmd {
    /// TOML run config.
    config: PathBuf,
    /// Overrides the config's manifest (resolved against the working directory).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, action = clap::ArgAction::Set)]
    force_top1: Option<bool>,
    #[arg(long = "match", value_enum)]
    match_rule: Option<MatchArg>,
    #[arg(long, value_enum)]
    agg: Option<AggArg>,
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the config's output directory (resolved against the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectCmd {
    #[arg(long)]
    annotations: PathBuf,
    /// Neuron id, or `layer/neuron`.
    #[arg(long)]
    neuron: String,
}

#[derive(Args)]
struct MakeFixtureCmd {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

fn absolute(p: PathBuf) -> Result<PathBuf> {
    std::path::absolute(&p).map_err(|e| Error::io(p, e))
}

fn run_cmd(c: RunCmd) -> Result<()> {
    let (mut cfg, base) = RunConfig::read(&c.config)?;
    if let Some(m) = c.manifest {
        cfg.manifest = absolute(m)?;
    }
    if let Some(o) = c.out {
        cfg.out = Some(absolute(o)?);
    }
    if let Some(m) = c.mode {
        cfg.selection.mode = m.into();
    }
    if let Some(a) = c.alpha {
        cfg.selection.alpha = a;
    }
    if let Some(k) = c.k {
        cfg.selection.k = k;
    }
    if let Some(b) = c.beta {
        cfg.annotation.beta = b;
    }
    if let Some(f) = c.force_top1 {
        cfg.annotation.force_top1 = f;
    }
    if let Some(w) = c.workers {
        cfg.workers = Some(w);
    }
    if let Some(eval) = cfg.evaluation.as_mut() {
        if let Some(m) = c.match_rule {
            eval.match_rule = m.into();
        }
        if let Some(a) = c.agg {
            eval.aggregation = a.into();
        }
    }
    let outputs = cmd_run(&cfg, &base)?;
    if let Some(report) = &outputs.report {
        print!("{}", report.to_table());
    }
    eprintln!("outputs written to {}", outputs.out_dir.display());
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::BuildConcepts(c) => {
            let strategy = match c.strategy {
                StrategyArg::Lexicon => StrategyKind::Lexicon,
                StrategyArg::Pretagged => StrategyKind::Pretagged,
                StrategyArg::Heuristic => StrategyKind::Heuristic,
            };
            let args = BuildConceptsArgs {
                corpus: c.corpus,
                out: c.out,
                strategy,
                lexicon: c.lexicon,
                min_frequency: c.min_frequency,
                stopwords: c.stopwords,
                max_token_length: c.max_token_length,
            };
            let n = cmd_build_concepts(&args)?;
            eprintln!("{n} concepts written to {}", args.out.display());
        }
        Command::Select(c) => {
            let report = cmd_select(&c.manifest, &c.selection.params(), &c.out, c.workers)?;
            eprintln!("{} neurons selected", report.records.len());
        }
        Command::Annotate(c) => {
            let params = AnnotationParams {
                beta: c.beta,
                encoder_id: c.encoder,
                template_id: c.template,
                force_top1: c.force_top1,
            };
            let file = cmd_annotate(&c.manifest, &c.selections, &params, &c.out, c.workers)?;
            eprintln!("{} neurons annotated", file.records.len());
        }
        Command::Evaluate(c) => {
            let config = EvalConfig {
                layer: c.layer.unwrap_or_default(),
                match_rule: c.match_rule.into(),
                aggregation: c.agg.into(),
                encoders: c.encoders,
            };
            let format = match c.format {
                FormatArg::Json => OutputFormat::Json,
                FormatArg::Table => OutputFormat::Table,
            };
            let report = cmd_evaluate(&c.manifest, &c.annotations, config, format, &c.out, c.workers)?;
            print!("{}", report.to_table());
        }
        Command::Run(c) => run_cmd(c)?,
        Command::Inspect(c) => print!("{}", cmd_inspect(&c.annotations, &c.neuron)?),
        Command::MakeFixture(c) => cmd_make_fixture(&c.out, c.seed)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error [{}]: {e}", category.name());
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
