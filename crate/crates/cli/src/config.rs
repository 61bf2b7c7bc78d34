//! Run configuration (TOML).
//!
//! Every effective parameter is echoed into the outputs except `workers` and
//! `out`, which change where and how fast results are produced but never what
//! they contain.

use std::path::{Path, PathBuf};

use neurotag_core::annotate::{AnnotationParams, DEFAULT_BETA};
use neurotag_core::evaluate::{Aggregation, EvalConfig, MatchMode};
use neurotag_core::select::SelectionParams;
use neurotag_core::{Error, Result};
use serde::{Deserialize, Serialize};

fn default_true() -> bool {
    true
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSection {
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub encoder_id: String,
    pub template_id: String,
    #[serde(default = "default_true")]
    pub force_top1: bool,
}

impl From<&AnnotationSection> for AnnotationParams {
    fn from(s: &AnnotationSection) -> Self {
        AnnotationParams {
            beta: s.beta,
            encoder_id: s.encoder_id.clone(),
            template_id: s.template_id.clone(),
            force_top1: s.force_top1,
        }
    }
}

fn default_match() -> MatchMode {
    MatchMode::Exact
}

fn default_agg() -> Aggregation {
    Aggregation::Mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// Defaults to the manifest's `label_layer`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
    #[serde(default = "default_match")]
    pub match_rule: MatchMode,
    #[serde(default = "default_agg")]
    pub aggregation: Aggregation,
    pub encoders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Manifest path, relative to the config file.
    pub manifest: PathBuf,
    /// Output directory, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Seed for `make-fixture`; unused by the pipeline itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub selection: SelectionParams,
    pub annotation: AnnotationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationSection>,
}

impl RunConfig {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: source.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads a config and resolves its relative paths against the config's directory.
    pub fn read(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::InputMissing(path.to_path_buf()),
            _ => Error::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        let cfg = Self::parse(&text, path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    /// Parameter checks that must pass before any compute starts.
    pub fn validate(&self, base: &Path) -> Result<()> {
        self.selection.validate()?;
        AnnotationParams::from(&self.annotation).validate()?;
        if let Some(eval) = &self.evaluation {
            if eval.encoders.is_empty() {
                return Err(Error::InvalidParam("evaluation.encoders is empty".into()));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidParam("workers must be >= 1".into()));
        }
        let manifest = base.join(&self.manifest);
        if !manifest.is_file() {
            return Err(Error::InputMissing(manifest));
        }
        Ok(())
    }

    pub fn eval_config(&self, default_layer: Option<&str>) -> Result<Option<EvalConfig>> {
        let Some(eval) = &self.evaluation else {
            return Ok(None);
        };
        let layer = eval
            .layer
            .clone()
            .or_else(|| default_layer.map(str::to_string))
            .ok_or_else(|| Error::InvalidParam("no evaluation layer and no label_layer in manifest".into()))?;
        Ok(Some(EvalConfig {
            layer,
            match_rule: eval.match_rule,
            aggregation: eval.aggregation,
            encoders: eval.encoders.clone(),
        }))
    }

    /// The effective configuration written into every output.
    pub fn echo(&self) -> serde_json::Value {
        let mut echoed = self.clone();
        echoed.out = None;
        echoed.workers = None;
        serde_json::to_value(&echoed).expect("config serializes")
    }
}
