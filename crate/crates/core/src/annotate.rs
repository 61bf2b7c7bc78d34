//! Concept scoring and annotation.
//!
//! A concept's score for a neuron is the mean, over the neuron's representative
//! images, of the image's cosine to the concept minus its cosine to the base
//! template. Concepts scoring strictly above `beta * max(score)` are attached to
//! the neuron.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::select::SelectionResult;
use crate::tensor_io::{Dataset, EmbeddingKind, EmbeddingTable, IdIndex};

pub const DEFAULT_BETA: f64 = 0.95;

/// Number of best-scoring concepts kept in each record for inspection.
pub const TOP_CONCEPTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationParams {
    pub beta: f64,
    /// Encoder whose image, concept and template tables are used for scoring.
    pub encoder_id: String,
    /// Row of the template table holding the base template.
    pub template_id: String,
    pub force_top1: bool,
}

impl AnnotationParams {
    pub fn new(encoder_id: impl Into<String>, template_id: impl Into<String>) -> Self {
        Self {
            beta: DEFAULT_BETA,
            encoder_id: encoder_id.into(),
            template_id: template_id.into(),
            force_top1: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidParam(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Direct evaluation over unit vectors: `(1/n) * sum_o [v_o . t_j - v_o . t_tem]`,
/// accumulated in image order in 64-bit and rounded to 32-bit.
pub fn concept_score(images: &[&[f32]], concept: &[f32], template: &[f32]) -> Result<f32> {
    if images.is_empty() {
        return Err(Error::EmptyInput("no representative images".into()));
    }
    let d = concept.len();
    if template.len() != d || images.iter().any(|v| v.len() != d) {
        return Err(Error::DimensionMismatch(format!(
            "concept dim {d}, template dim {}, image dims {:?}",
            template.len(),
            images.iter().map(|v| v.len()).collect::<Vec<_>>()
        )));
    }
    let sum: f64 = images.iter().map(|v| dot(v, concept) - dot(v, template)).sum();
    Ok((sum / images.len() as f64) as f32)
}

/// Scores neurons against every concept using the factored form
/// `mean(v) . t_j - mean(v) . t_tem`.
#[derive(Debug, Clone)]
pub struct ConceptScorer<'a> {
    images: &'a EmbeddingTable,
    concepts: &'a EmbeddingTable,
    /// Concept-table row for each concept index.
    concept_rows: Vec<usize>,
    template: Vec<f32>,
}

impl<'a> ConceptScorer<'a> {
    /// Uses the concept table's own row order as concept order.
    pub fn new(images: &'a EmbeddingTable, concepts: &'a EmbeddingTable, template: &[f32]) -> Result<Self> {
        Self::with_concept_rows(images, concepts, (0..concepts.len()).collect(), template)
    }

    pub fn with_concept_rows(
        images: &'a EmbeddingTable,
        concepts: &'a EmbeddingTable,
        concept_rows: Vec<usize>,
        template: &[f32],
    ) -> Result<Self> {
        if images.dim() != concepts.dim() || template.len() != concepts.dim() {
            return Err(Error::DimensionMismatch(format!(
                "image dim {}, concept dim {}, template dim {}",
                images.dim(),
                concepts.dim(),
                template.len()
            )));
        }
        if let Some(&bad) = concept_rows.iter().find(|&&r| r >= concepts.len()) {
            return Err(Error::ShapeMismatch(format!("concept row {bad} out of range")));
        }
        Ok(Self {
            images,
            concepts,
            concept_rows,
            template: template.to_vec(),
        })
    }

    /// Builds the scorer for an encoder of a loaded dataset, in concept-set order.
    pub fn from_dataset(dataset: &'a Dataset, params: &AnnotationParams) -> Result<Self> {
        let encoder = params.encoder_id.as_str();
        let images = dataset.require_table(EmbeddingKind::Image, encoder)?;
        let concepts = dataset.require_table(EmbeddingKind::Concept, encoder)?;
        let templates = dataset.require_table(EmbeddingKind::Template, encoder)?;
        let template = templates.vector(&params.template_id).ok_or_else(|| Error::IdCoverage {
            context: format!("template table for encoder {encoder:?}"),
            missing: vec![params.template_id.clone()],
        })?;
        let rows = dataset
            .concept_rows(encoder)
            .ok_or_else(|| Error::Manifest(format!("no concept alignment for {encoder:?}")))?
            .to_vec();
        Self::with_concept_rows(images, concepts, rows, template)
    }

    pub fn concept_count(&self) -> usize {
        self.concept_rows.len()
    }

    /// Scores the images with the given ids, accumulating in the given order.
    pub fn score<'s, I>(&self, image_ids: I) -> Result<Vec<f32>>
    where
        I: IntoIterator<Item = &'s str>,
    {
        let dim = self.images.dim();
        let mut mean = vec![0.0f64; dim];
        let mut n = 0usize;
        for id in image_ids {
            let v = self
                .images
                .vector(id)
                .ok_or_else(|| Error::MissingEmbedding(id.to_string()))?;
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += f64::from(x);
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyInput("no representative images".into()));
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mdot = |t: &[f32]| -> f64 { mean.iter().zip(t).map(|(&m, &x)| m * f64::from(x)).sum() };
        let bias = mdot(&self.template);
        Ok(self
            .concept_rows
            .iter()
            .map(|&r| (mdot(self.concepts.row(r)) - bias) as f32)
            .collect())
    }
}

/// Scores one neuron's selection against every concept.
pub fn score_all(selection: &SelectionResult, probe_images: &IdIndex, scorer: &ConceptScorer<'_>) -> Result<Vec<f32>> {
    let ids = selection
        .selection
        .indices()
        .map(|i| {
            probe_images
                .get(i)
                .ok_or_else(|| Error::MissingEmbedding(format!("probe column {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    scorer.score(ids)
}

/// Thresholded concept choice for one score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub theta: f64,
    /// `(concept index, score)`, descending score then ascending index.
    pub annotated: Vec<(usize, f32)>,
    /// The best score is not positive.
    pub degenerate: bool,
    /// The single entry was forced because nothing cleared `theta`.
    pub forced: bool,
}

fn argmax<T: PartialOrd>(scores: &[T]) -> usize {
    let mut best = 0;
    for (j, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = j;
        }
    }
    best
}

pub fn annotate(scores: &[f32], beta: f64, force_top1: bool) -> Result<Annotation> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("score vector is empty".into()));
    }
    let best = argmax(scores);
    let max = f64::from(scores[best]);
    let theta = beta * max;
    let mut annotated: Vec<(usize, f32)> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| f64::from(s) > theta)
        .map(|(j, &s)| (j, s))
        .collect();
    let mut forced = false;
    if annotated.is_empty() && force_top1 {
        annotated.push((best, scores[best]));
        forced = true;
    }
    annotated.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Annotation {
        theta,
        annotated,
        degenerate: max <= 0.0,
        forced,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronAnnotation {
    pub layer_id: String,
    pub neuron_id: String,
    pub neuron_index: usize,
    pub tau: f64,
    pub n: usize,
    pub fallback: bool,
    pub scores: Vec<f32>,
    pub annotation: Annotation,
}

/// Annotates every selection. Parallel on the current rayon pool; output is
/// ordered by (layer id, neuron index) whatever the thread count.
pub fn annotate_all(
    dataset: &Dataset,
    selections: &[SelectionResult],
    params: &AnnotationParams,
) -> Result<Vec<NeuronAnnotation>> {
    params.validate()?;
    if selections.is_empty() {
        return Ok(Vec::new());
    }
    let scorer = ConceptScorer::from_dataset(dataset, params)?;
    let mut out = selections
        .par_iter()
        .map(|sel| {
            let scores = score_all(sel, &dataset.probe_images, &scorer)?;
            let annotation = annotate(&scores, params.beta, params.force_top1)?;
            Ok(NeuronAnnotation {
                layer_id: sel.layer_id.clone(),
                neuron_id: sel.neuron_id.clone(),
                neuron_index: sel.neuron_index,
                tau: sel.selection.tau,
                n: sel.selection.len(),
                fallback: sel.selection.fallback_applied,
                scores,
                annotation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| {
        a.layer_id
            .cmp(&b.layer_id)
            .then_with(|| a.neuron_index.cmp(&b.neuron_index))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub concept: String,
    pub index: usize,
    pub score: f32,
}

/// One neuron in the annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub layer: String,
    pub neuron: String,
    pub tau: f64,
    pub n: usize,
    pub fallback: bool,
    pub theta: f64,
    pub degenerate: bool,
    pub forced: bool,
    pub annotated: Vec<ConceptEntry>,
    /// Best-scoring concepts regardless of threshold.
    pub top: Vec<ConceptEntry>,
}

impl AnnotationRecord {
    pub fn from_annotation(a: &NeuronAnnotation, concept_names: &[String]) -> Self {
        let entry = |(index, score): (usize, f32)| ConceptEntry {
            concept: concept_names.get(index).cloned().unwrap_or_default(),
            index,
            score,
        };
        let mut order: Vec<usize> = (0..a.scores.len()).collect();
        order.sort_by(|&x, &y| a.scores[y].total_cmp(&a.scores[x]).then_with(|| x.cmp(&y)));
        Self {
            layer: a.layer_id.clone(),
            neuron: a.neuron_id.clone(),
            tau: a.tau,
            n: a.n,
            fallback: a.fallback,
            theta: a.annotation.theta,
            degenerate: a.annotation.degenerate,
            forced: a.annotation.forced,
            annotated: a.annotation.annotated.iter().copied().map(entry).collect(),
            top: order
                .into_iter()
                .take(TOP_CONCEPTS)
                .map(|j| entry((j, a.scores[j])))
                .collect(),
        }
    }

    pub fn concepts(&self) -> impl Iterator<Item = &str> + '_ {
        self.annotated.iter().map(|e| e.concept.as_str())
    }
}

/// Annotation output: the effective configuration followed by one record per neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub config: serde_json::Value,
    pub concept_count: usize,
    pub records: Vec<AnnotationRecord>,
}

impl AnnotationFile {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidParam(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: source.into(),
            message: e.to_string(),
        })
    }

    pub fn find(&self, neuron: &str) -> Result<&AnnotationRecord> {
        // Accept either a bare neuron id or `layer/neuron`.
        let hit = match neuron.split_once('/') {
            Some((layer, id)) => self.records.iter().find(|r| r.layer == layer && r.neuron == id),
            None => self.records.iter().find(|r| r.neuron == neuron),
        };
        hit.ok_or_else(|| Error::UnknownNeuron(neuron.to_string()))
    }
}
