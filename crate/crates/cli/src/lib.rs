//! Command implementations behind the `neurotag` binary.
//!
//! Each `cmd_*` function is callable directly, so the integration tests drive
//! the same code paths as the binary without spawning a process.

pub mod config;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use neurotag_core::annotate::{annotate_all, AnnotationFile, AnnotationParams, AnnotationRecord};
use neurotag_core::concepts::{
    extract_concepts, save_concept_list, Corpus, ExtractionParams, Strategy, DEFAULT_MAX_TOKEN_LENGTH,
};
use neurotag_core::evaluate::{evaluate, EvalConfig, EvalReport};
use neurotag_core::select::{select_all, selection_distribution, SelectionParams, SelectionReport};
use neurotag_core::tensor_io::{load_dataset, Dataset};
use neurotag_core::{Error, Result};
use serde::Serialize;

pub use config::RunConfig;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidParam(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Runs `f` on a dedicated pool of `workers` threads, or the global pool if `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidParam("workers must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn timed<T>(stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    log::info!("{stage}: {:.3} s", start.elapsed().as_secs_f64());
    out
}

// ---------------------------------------------------------------------------
// build-concepts

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Lexicon,
    Pretagged,
    Heuristic,
}

#[derive(Debug, Clone)]
pub struct BuildConceptsArgs {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub strategy: StrategyKind,
    /// Noun word list, one per line; required for the lexicon strategy.
    pub lexicon: Option<PathBuf>,
    pub min_frequency: u32,
    /// Replaces the built-in stopword list when given.
    pub stopwords: Option<PathBuf>,
    pub max_token_length: usize,
}

impl BuildConceptsArgs {
    pub fn new(corpus: impl Into<PathBuf>, out: impl Into<PathBuf>, strategy: StrategyKind) -> Self {
        Self {
            corpus: corpus.into(),
            out: out.into(),
            strategy,
            lexicon: None,
            min_frequency: 1,
            stopwords: None,
            max_token_length: DEFAULT_MAX_TOKEN_LENGTH,
        }
    }
}

fn read_word_list(path: &Path) -> Result<BTreeSet<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}

/// Extracts a concept set from a report corpus and writes it one concept per line.
/// Returns the number of concepts written.
pub fn cmd_build_concepts(args: &BuildConceptsArgs) -> Result<usize> {
    let text = read_text(&args.corpus)?;
    let strategy = match args.strategy {
        StrategyKind::Lexicon => {
            let path = args
                .lexicon
                .as_ref()
                .ok_or_else(|| Error::InvalidParam("the lexicon strategy needs --lexicon".into()))?;
            Strategy::Lexicon(read_word_list(path)?)
        }
        StrategyKind::Pretagged => Strategy::Pretagged,
        StrategyKind::Heuristic => Strategy::Heuristic,
    };
    let corpus = match args.strategy {
        StrategyKind::Pretagged => Corpus::parse_tagged(&text)?,
        _ => Corpus::parse_plain(&text),
    };
    let mut params = ExtractionParams::new(strategy);
    params.min_frequency = args.min_frequency;
    params.max_token_length = args.max_token_length;
    if let Some(path) = &args.stopwords {
        params.stopwords = read_word_list(path)?;
    }
    let corpus_id = args
        .corpus
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let set = extract_concepts(&corpus, &corpus_id, &params)?;
    save_concept_list(&set, &args.out)?;
    Ok(set.len())
}

// ---------------------------------------------------------------------------
// select / annotate / evaluate

pub fn cmd_select(manifest: &Path, params: &SelectionParams, out: &Path, workers: Option<usize>) -> Result<SelectionReport> {
    params.validate()?;
    let dataset = timed("load", || load_dataset(manifest))?;
    let results = with_workers(workers, || timed("select", || select_all(&dataset, params)))??;
    let report = SelectionReport::new(*params, &results, &dataset.probe_images);
    write_text(out, &to_json(&report)?)?;
    Ok(report)
}

fn annotation_file(
    dataset: &Dataset,
    selections: &SelectionReport,
    params: &AnnotationParams,
    config: serde_json::Value,
) -> Result<AnnotationFile> {
    let results = selections.to_results(dataset)?;
    let annotations = timed("annotate", || annotate_all(dataset, &results, params))?;
    let names = dataset.concepts.concepts();
    Ok(AnnotationFile {
        config,
        concept_count: names.len(),
        records: annotations
            .iter()
            .map(|a| AnnotationRecord::from_annotation(a, names))
            .collect(),
    })
}

pub fn cmd_annotate(
    manifest: &Path,
    selections: &Path,
    params: &AnnotationParams,
    out: &Path,
    workers: Option<usize>,
) -> Result<AnnotationFile> {
    params.validate()?;
    let sel: SelectionReport = serde_json::from_str(&read_text(selections)?).map_err(|e| Error::Parse {
        path: selections.to_path_buf(),
        message: e.to_string(),
    })?;
    let dataset = timed("load", || load_dataset(manifest))?;
    let config = serde_json::json!({
        "manifest": manifest,
        "selection": sel.params,
        "annotation": params,
    });
    let file = with_workers(workers, || annotation_file(&dataset, &sel, params, config))??;
    write_text(out, &file.to_json()?)?;
    Ok(file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Table,
}

fn render_report(report: &EvalReport, format: OutputFormat) -> Result<String> {
    report.validate()?;
    match format {
        OutputFormat::Json => report.to_json(),
        OutputFormat::Table => Ok(report.to_table()),
    }
}

/// Evaluates an annotation file. `config.layer` empty means the manifest's label layer.
pub fn cmd_evaluate(
    manifest: &Path,
    annotations: &Path,
    mut config: EvalConfig,
    format: OutputFormat,
    out: &Path,
    workers: Option<usize>,
) -> Result<EvalReport> {
    let file = AnnotationFile::from_json(&read_text(annotations)?, &annotations.display().to_string())?;
    let dataset = timed("load", || load_dataset(manifest))?;
    if config.layer.is_empty() {
        config.layer = dataset
            .label_layer()
            .ok_or_else(|| Error::InvalidParam("no --layer given and the manifest has no label_layer".into()))?
            .to_string();
    }
    let report = with_workers(workers, || timed("evaluate", || evaluate(&dataset, &file.records, &config)))??;
    write_text(out, &render_report(&report, format)?)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// run

/// Everything `cmd_run` produced, also written under the output directory.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub out_dir: PathBuf,
    pub selections: SelectionReport,
    pub annotations: AnnotationFile,
    pub report: Option<EvalReport>,
    /// Pearson correlation of selected vs probing class counts, when image classes are known.
    pub class_correlation: Option<f64>,
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    config: &'a serde_json::Value,
    evaluation: &'a EvalReport,
}

pub const SELECTIONS_FILE: &str = "selections.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";

/// Output directory used when neither the config nor the caller names one.
pub const DEFAULT_OUT_DIR: &str = "out";

/// Load, select, annotate and evaluate as configured. `base` is the directory
/// relative paths in the config are resolved against.
pub fn cmd_run(cfg: &RunConfig, base: &Path) -> Result<RunOutputs> {
    cfg.validate(base)?;
    let out_dir = base.join(cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)));
    let echo = cfg.echo();
    let params = AnnotationParams::from(&cfg.annotation);

    let dataset = timed("load", || load_dataset(base.join(&cfg.manifest)))?;
    let eval_config = cfg.eval_config(dataset.label_layer())?;

    let (selections, results, annotations, report) = with_workers(cfg.workers, || -> Result<_> {
        let results = timed("select", || select_all(&dataset, &cfg.selection))?;
        let selections = SelectionReport::new(cfg.selection, &results, &dataset.probe_images);
        let annotations = annotation_file(&dataset, &selections, &params, echo.clone())?;
        let report = match &eval_config {
            Some(ec) => Some(timed("evaluate", || evaluate(&dataset, &annotations.records, ec))?),
            None => None,
        };
        Ok((selections, results, annotations, report))
    })??;

    let write_start = Instant::now();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    write_text(&out_dir.join(SELECTIONS_FILE), &to_json(&selections)?)?;
    write_text(&out_dir.join(ANNOTATIONS_FILE), &annotations.to_json()?)?;

    let mut class_correlation = None;
    if let Some(classes) = &dataset.image_classes {
        for layer in &dataset.layers {
            let layer_results: Vec<_> = results.iter().filter(|r| r.layer_id == layer.layer_id).cloned().collect();
            let dist = selection_distribution(&layer_results, &dataset.probe_images, classes)?;
            if Some(layer.layer_id.as_str()) == dataset.label_layer() || dataset.layers.len() == 1 {
                class_correlation = dist.class_correlation();
            }
            write_text(&out_dir.join(format!("distribution_{}.tsv", layer.layer_id)), &dist.to_tsv())?;
        }
    }

    if let Some(report) = &report {
        let doc = ReportDocument {
            config: &echo,
            evaluation: report,
        };
        write_text(&out_dir.join(REPORT_JSON_FILE), &to_json(&doc)?)?;
        let mut table = String::new();
        let compact = serde_json::to_string(&echo).map_err(|e| Error::InvalidParam(e.to_string()))?;
        let _ = writeln!(table, "# config {compact}");
        table.push_str(&render_report(report, OutputFormat::Table)?);
        write_text(&out_dir.join(REPORT_TABLE_FILE), &table)?;
    }
    log::info!("write: {:.3} s", write_start.elapsed().as_secs_f64());

    Ok(RunOutputs {
        out_dir,
        selections,
        annotations,
        report,
        class_correlation,
    })
}

// ---------------------------------------------------------------------------
// inspect

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Human-readable card for one neuron.
pub fn neuron_card(record: &AnnotationRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "neuron      {}/{}", record.layer, record.neuron);
    let _ = writeln!(out, "tau         {:.6}", record.tau);
    let _ = writeln!(out, "selected    {}{}", record.n, if record.fallback { " (argmax fallback)" } else { "" });
    let _ = writeln!(out, "theta       {:.6}", record.theta);
    let _ = writeln!(out, "degenerate  {}", yes_no(record.degenerate));
    let _ = writeln!(out, "forced      {}", yes_no(record.forced));
    let annotated: Vec<&str> = record.concepts().collect();
    let _ = writeln!(
        out,
        "annotated   {}",
        if annotated.is_empty() { "-".to_string() } else { annotated.join(", ") }
    );
    let _ = writeln!(out, "top concepts");
    let width = record.top.iter().map(|e| e.concept.len()).max().unwrap_or(0);
    for (rank, e) in record.top.iter().enumerate() {
        let mark = if record.annotated.iter().any(|a| a.index == e.index) { "*" } else { " " };
        let _ = writeln!(out, "  {}. {mark} {:<width$}  {:>10.6}", rank + 1, e.concept, e.score);
    }
    out
}

pub fn cmd_inspect(annotations: &Path, neuron: &str) -> Result<String> {
    let file = AnnotationFile::from_json(&read_text(annotations)?, &annotations.display().to_string())?;
    Ok(neuron_card(file.find(neuron)?))
}

pub fn cmd_make_fixture(dir: &Path, seed: u64) -> Result<()> {
    neurotag_core::fixture::write_fixture(dir, seed)
}
