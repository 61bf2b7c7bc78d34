//! Final-layer evaluation against class labels.
//!
//! Three metrics per neuron: cosine similarity between the label embedding and
//! the annotated concepts (per text encoder), F1 of the annotated concepts
//! against the single-label truth set, and hit (any annotated concept matches the
//! label). F1 and hit share one match predicate, so `f1 > 0` exactly when the
//! neuron is a hit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::AnnotationRecord;
use crate::error::{Error, Result};
use crate::stats::{aggregate, MeanStd};
use crate::tensor_io::{Dataset, EmbeddingKind, EmbeddingTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Equal after normalization.
    Exact,
    /// One side's words appear as a contiguous run in the other's, after normalization.
    Substring,
}

impl MatchMode {
    pub const ALL: [MatchMode; 2] = [MatchMode::Exact, MatchMode::Substring];

    pub fn name(self) -> &'static str {
        match self {
            MatchMode::Exact => "exact",
            MatchMode::Substring => "substring",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Max,
}

impl Aggregation {
    pub const ALL: [Aggregation; 2] = [Aggregation::Mean, Aggregation::Max];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
        }
    }
}

/// Lowercase, trim, collapse internal whitespace to single spaces.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn contains_words(haystack: &[&str], needle: &[&str]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

pub fn matches(concept: &str, label: &str, mode: MatchMode) -> bool {
    let c = normalize_text(concept);
    let l = normalize_text(label);
    match mode {
        MatchMode::Exact => !c.is_empty() && c == l,
        MatchMode::Substring => {
            let cw: Vec<&str> = c.split(' ').filter(|w| !w.is_empty()).collect();
            let lw: Vec<&str> = l.split(' ').filter(|w| !w.is_empty()).collect();
            contains_words(&lw, &cw) || contains_words(&cw, &lw)
        }
    }
}

/// Cosine between the label embedding and each concept's embedding, aggregated.
/// Inputs are unit-norm, so the cosine is a dot product (clamped to [-1, 1]).
pub fn label_similarity<'a, I>(
    concepts: I,
    label_embedding: &[f32],
    concept_table: &EmbeddingTable,
    aggregation: Aggregation,
) -> Result<f64>
where
    I: IntoIterator<Item = &'a str>,
{
    let cosines = concepts
        .into_iter()
        .map(|c| {
            let v = concept_table.vector(c).ok_or_else(|| Error::IdCoverage {
                context: format!("concept table for encoder {:?}", concept_table.encoder_id),
                missing: vec![c.to_string()],
            })?;
            if v.len() != label_embedding.len() {
                return Err(Error::DimensionMismatch(format!(
                    "label dim {}, concept dim {}",
                    label_embedding.len(),
                    v.len()
                )));
            }
            let dot: f64 = v
                .iter()
                .zip(label_embedding)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum();
            Ok(dot.clamp(-1.0, 1.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    if cosines.is_empty() {
        return Err(Error::EmptyAnnotation("similarity over no concepts".into()));
    }
    Ok(match aggregation {
        Aggregation::Mean => cosines.iter().sum::<f64>() / cosines.len() as f64,
        Aggregation::Max => cosines.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

pub fn is_hit<'a, I>(concepts: I, label: &str, mode: MatchMode) -> bool
where
    I: IntoIterator<Item = &'a str>,
{
    concepts.into_iter().any(|c| matches(c, label, mode))
}

/// Precision = matching predictions / predictions, recall = 1 if any match,
/// F1 = harmonic mean (0 when both are 0).
pub fn f1_score(concepts: &[&str], label: &str, mode: MatchMode) -> Result<f64> {
    if concepts.is_empty() {
        return Err(Error::EmptyAnnotation(format!("no concepts for label {label:?}")));
    }
    let hits = concepts.iter().filter(|c| matches(c, label, mode)).count();
    let precision = (hits as f64 / concepts.len() as f64).min(1.0);
    let recall = if hits > 0 { 1.0 } else { 0.0 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Fraction of labeled neurons with at least one matching concept. Every record
/// must carry a label.
pub fn hit_rate(records: &[AnnotationRecord], labels: &BTreeMap<String, String>, mode: MatchMode) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no final-layer annotations".into()));
    }
    let mut hits = 0usize;
    for r in records {
        let label = labels
            .get(&r.neuron)
            .ok_or_else(|| Error::UnlabeledNeuron(r.neuron.clone()))?;
        if is_hit(r.concepts(), label, mode) {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub layer: String,
    /// Rule used for the headline F1 and hit-rate columns; both rules are always reported.
    pub match_rule: MatchMode,
    /// Aggregation used for the headline similarity columns; both are always reported.
    pub aggregation: Aggregation,
    pub encoders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronEval {
    pub neuron: String,
    pub label: String,
    /// encoder -> aggregation -> similarity
    pub similarity: BTreeMap<String, BTreeMap<Aggregation, f64>>,
    pub f1: BTreeMap<MatchMode, f64>,
    pub hit: BTreeMap<MatchMode, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    #[serde(flatten)]
    pub stats: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub neurons: Vec<NeuronEval>,
    pub aggregates: Vec<MetricSummary>,
}

pub fn similarity_metric(encoder: &str, agg: Aggregation) -> String {
    format!("similarity[{encoder}]/{}", agg.name())
}

pub fn f1_metric(mode: MatchMode) -> String {
    format!("f1/{}", mode.name())
}

pub fn hit_metric(mode: MatchMode) -> String {
    format!("hit/{}", mode.name())
}

impl EvalReport {
    pub fn aggregate(&self, metric: &str) -> Option<&MeanStd> {
        self.aggregates.iter().find(|m| m.metric == metric).map(|m| &m.stats)
    }

    /// Checks the report invariants: finite metrics within their ranges.
    pub fn validate(&self) -> Result<()> {
        for n in &self.neurons {
            let sims = n.similarity.values().flat_map(|m| m.values());
            if sims.clone().any(|s| !s.is_finite() || !(-1.0..=1.0).contains(s)) {
                return Err(Error::InvalidParam(format!("similarity out of range for {}", n.neuron)));
            }
            if n.f1.values().any(|f| !f.is_finite() || !(0.0..=1.0).contains(f)) {
                return Err(Error::InvalidParam(format!("f1 out of range for {}", n.neuron)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidParam(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Fixed-width table, values rounded to 4 decimals.
    pub fn to_table(&self) -> String {
        let width = self
            .aggregates
            .iter()
            .map(|m| m.metric.len())
            .max()
            .unwrap_or(0)
            .max("metric".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# layer={} match={} agg={} encoders={}",
            self.config.layer,
            self.config.match_rule.name(),
            self.config.aggregation.name(),
            self.config.encoders.join(",")
        );
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>5}", "metric", "mean", "std", "n");
        for m in &self.aggregates {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.4}  {:>8.4}  {:>5}",
                m.metric, m.stats.mean, m.stats.std, m.stats.count
            );
        }
        let mut headline: Vec<String> = self
            .config
            .encoders
            .iter()
            .map(|e| (format!("cos[{e}]"), similarity_metric(e, self.config.aggregation)))
            .chain([
                ("f1".to_string(), f1_metric(self.config.match_rule)),
                ("hit".to_string(), hit_metric(self.config.match_rule)),
            ])
            .filter_map(|(name, key)| {
                self.aggregate(&key)
                    .map(|s| format!("{name}={:.4}±{:.4}", s.mean, s.std))
            })
            .collect();
        headline.insert(0, "summary".into());
        let _ = writeln!(out, "{}", headline.join("  "));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Structured,
    Tabular,
}

pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    report.validate()?;
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Structured => report.to_json()?,
        ReportFormat::Tabular => report.to_table(),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Evaluates the annotations of the dataset's label layer.
pub fn evaluate(dataset: &Dataset, records: &[AnnotationRecord], config: &EvalConfig) -> Result<EvalReport> {
    let labels = dataset.labels();
    let layer_records: Vec<&AnnotationRecord> = records.iter().filter(|r| r.layer == config.layer).collect();
    if layer_records.is_empty() {
        return Err(Error::EmptyInput(format!("no annotations for layer {:?}", config.layer)));
    }
    let mut tables = Vec::new();
    for enc in &config.encoders {
        tables.push((
            enc.as_str(),
            dataset.require_table(EmbeddingKind::Concept, enc)?,
            dataset.require_table(EmbeddingKind::Label, enc)?,
        ));
    }

    let neurons = layer_records
        .par_iter()
        .map(|r| {
            let label = labels
                .get(&r.neuron)
                .ok_or_else(|| Error::UnlabeledNeuron(r.neuron.clone()))?;
            let concepts: Vec<&str> = r.concepts().collect();
            if concepts.is_empty() {
                return Err(Error::EmptyAnnotation(r.neuron.clone()));
            }
            let mut similarity = BTreeMap::new();
            for (enc, concept_table, label_table) in &tables {
                let label_vec = label_table.vector(label).ok_or_else(|| Error::IdCoverage {
                    context: format!("label table for encoder {enc:?}"),
                    missing: vec![label.clone()],
                })?;
                let mut per_agg = BTreeMap::new();
                for agg in Aggregation::ALL {
                    per_agg.insert(
                        agg,
                        label_similarity(concepts.iter().copied(), label_vec, concept_table, agg)?,
                    );
                }
                similarity.insert(enc.to_string(), per_agg);
            }
            let mut f1 = BTreeMap::new();
            let mut hit = BTreeMap::new();
            for mode in MatchMode::ALL {
                f1.insert(mode, f1_score(&concepts, label, mode)?);
                hit.insert(mode, is_hit(concepts.iter().copied(), label, mode));
            }
            Ok(NeuronEval {
                neuron: r.neuron.clone(),
                label: label.clone(),
                similarity,
                f1,
                hit,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut aggregates = Vec::new();
    for enc in &config.encoders {
        for agg in Aggregation::ALL {
            let values: Vec<f64> = neurons.iter().map(|n| n.similarity[enc][&agg]).collect();
            aggregates.push(MetricSummary {
                metric: similarity_metric(enc, agg),
                stats: aggregate(&values)?,
            });
        }
    }
    for mode in MatchMode::ALL {
        let values: Vec<f64> = neurons.iter().map(|n| n.f1[&mode]).collect();
        aggregates.push(MetricSummary {
            metric: f1_metric(mode),
            stats: aggregate(&values)?,
        });
    }
    for mode in MatchMode::ALL {
        let values: Vec<f64> = neurons.iter().map(|n| if n.hit[&mode] { 1.0 } else { 0.0 }).collect();
        aggregates.push(MetricSummary {
            metric: hit_metric(mode),
            stats: aggregate(&values)?,
        });
    }

    let report = EvalReport {
        config: config.clone(),
        neurons,
        aggregates,
    };
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::ConceptEntry;
    use crate::tensor_io::{IdIndex, Matrix};
    use proptest::prelude::*;

    fn record(neuron: &str, concepts: &[&str]) -> AnnotationRecord {
        AnnotationRecord {
            layer: "final".into(),
            neuron: neuron.into(),
            tau: 0.0,
            n: 1,
            fallback: false,
            theta: 0.0,
            degenerate: false,
            forced: false,
            annotated: concepts
                .iter()
                .enumerate()
                .map(|(i, c)| ConceptEntry {
                    concept: c.to_string(),
                    index: i,
                    score: 0.5,
                })
                .collect(),
            top: vec![],
        }
    }

    #[test]
    fn normalization_and_matching() {
        assert_eq!(normalize_text("  Pleural \t Thickening "), "pleural thickening");
        assert!(matches("atelectasis", "Atelectasis", MatchMode::Exact));
        assert!(!matches("thickening", "Pleural Thickening", MatchMode::Exact));
        assert!(matches("thickening", "Pleural Thickening", MatchMode::Substring));
        assert!(!matches("art", "heart", MatchMode::Substring));
        assert!(matches("heart size", "HEART", MatchMode::Substring));
        assert!(!matches("", "", MatchMode::Exact));
    }

    #[test]
    fn hit_examples() {
        let labels: BTreeMap<String, String> = [("n0".to_string(), "Atelectasis".to_string())].into();
        let r = record("n0", &["atelectasis", "lung"]);
        assert_eq!(hit_rate(std::slice::from_ref(&r), &labels, MatchMode::Exact).unwrap(), 1.0);
        let miss = record("n0", &["lung"]);
        assert_eq!(hit_rate(&[miss], &labels, MatchMode::Exact).unwrap(), 0.0);
        let unlabeled = record("n9", &["lung"]);
        assert!(matches!(
            hit_rate(&[unlabeled], &labels, MatchMode::Exact),
            Err(Error::UnlabeledNeuron(n)) if n == "n9"
        ));
    }

    #[test]
    fn four_of_fourteen() {
        let mut labels = BTreeMap::new();
        let mut records = Vec::new();
        for i in 0..14 {
            labels.insert(format!("n{i}"), format!("class{i}"));
            let concept = if i < 4 { format!("class{i}") } else { "other".to_string() };
            records.push(record(&format!("n{i}"), &[concept.as_str()]));
        }
        let rate = hit_rate(&records, &labels, MatchMode::Exact).unwrap();
        assert!((rate - 0.285714).abs() < 1e-6, "{rate}");
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(&["atelectasis"], "atelectasis", MatchMode::Exact).unwrap(), 1.0);
        let two = f1_score(&["atelectasis", "lung"], "atelectasis", MatchMode::Exact).unwrap();
        assert!((two - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1_score(&["lung"], "atelectasis", MatchMode::Exact).unwrap(), 0.0);
        assert!(matches!(f1_score(&[], "x", MatchMode::Exact), Err(Error::EmptyAnnotation(_))));
    }

    fn concept_table(rows: Vec<(&str, Vec<f32>)>) -> EmbeddingTable {
        let d = rows[0].1.len();
        let ids = rows.iter().map(|r| r.0.to_string()).collect();
        let flat = rows.into_iter().flat_map(|r| r.1).collect();
        EmbeddingTable::new(
            "enc",
            EmbeddingKind::Concept,
            IdIndex::new("c", ids).unwrap(),
            Matrix::from_vec(2, d, flat).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn similarity_examples() {
        let label = [1.0f32, 0.0];
        let table = concept_table(vec![("a", vec![0.9, (1.0f32 - 0.81).sqrt()]), ("b", vec![0.5, 0.75f32.sqrt()])]);
        let mean = label_similarity(["a", "b"], &label, &table, Aggregation::Mean).unwrap();
        assert!((mean - 0.7).abs() < 1e-6);
        let max = label_similarity(["a", "b"], &label, &table, Aggregation::Max).unwrap();
        assert!((max - 0.9).abs() < 1e-6);

        let same = concept_table(vec![("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        assert!((label_similarity(["a"], &label, &same, Aggregation::Mean).unwrap() - 1.0).abs() < 1e-6);
        assert!(matches!(
            label_similarity(std::iter::empty(), &label, &same, Aggregation::Mean),
            Err(Error::EmptyAnnotation(_))
        ));
    }

    proptest! {
        #[test]
        fn f1_positive_iff_hit(
            concepts in prop::collection::vec(prop::sample::select(vec!["mass", "nodule", "lung", "pleural thickening", "thickening"]), 1..5),
            label in prop::sample::select(vec!["Mass", "Nodule", "Pleural Thickening", "Hernia"]),
        ) {
            for mode in MatchMode::ALL {
                let f1 = f1_score(&concepts, label, mode).unwrap();
                prop_assert_eq!(f1 > 0.0, is_hit(concepts.iter().copied(), label, mode));
                prop_assert!((0.0..=1.0).contains(&f1));
            }
        }

        #[test]
        fn hit_rate_is_permutation_invariant(hits in prop::collection::vec(any::<bool>(), 1..20), seed in any::<u64>()) {
            let mut labels = BTreeMap::new();
            let mut records = Vec::new();
            for (i, h) in hits.iter().enumerate() {
                labels.insert(format!("n{i}"), "mass".to_string());
                records.push(record(&format!("n{i}"), &[if *h { "mass" } else { "lung" }]));
            }
            let base = hit_rate(&records, &labels, MatchMode::Exact).unwrap();
            let k = (seed as usize) % records.len();
            records.rotate_left(k);
            records.reverse();
            prop_assert_eq!(hit_rate(&records, &labels, MatchMode::Exact).unwrap(), base);
        }
    }
}
