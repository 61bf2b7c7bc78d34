//! On-disk interchange: npy arrays, id sidecars, the manifest, and the validated
//! dataset bundle built from them.

mod dataset;
mod manifest;
pub mod npy;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{load_dataset, Dataset};
pub use manifest::{sha256_file, FileEntry, Manifest, Role, FORMAT_VERSION};
pub use npy::{read_array, write_array, Matrix};

/// Ordered, duplicate-free id list with a reverse lookup.
///
/// The position of an id in the list is its dense index; `index_of` is the
/// inverse, so the two form a bijection onto `0..len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl IdIndex {
    pub fn new(context: &str, ids: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if lookup.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    context: context.to_string(),
                    id: id.clone(),
                });
            }
        }
        Ok(Self { ids, lookup })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.lookup.contains_key(id)
    }

    /// Returns the first ten ids of `wanted` that are absent from this index.
    pub fn missing<'a, I>(&self, wanted: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a str>,
    {
        wanted
            .into_iter()
            .filter(|id| !self.contains(id))
            .take(10)
            .map(str::to_string)
            .collect()
    }
}

/// Reads a newline-delimited id file. Blank lines are rejected; a trailing
/// newline is allowed.
pub fn read_id_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lines(&text)
}

pub(crate) fn parse_lines(text: &str) -> Result<Vec<String>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                Err(Error::EmptyLine(i + 1))
            } else {
                Ok(line.to_string())
            }
        })
        .collect()
}

pub fn write_id_list(path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Image,
    Concept,
    Label,
    Template,
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EmbeddingKind::Image => "image",
            EmbeddingKind::Concept => "concept",
            EmbeddingKind::Label => "label",
            EmbeddingKind::Template => "template",
        };
        f.write_str(s)
    }
}

/// Per-layer neuron x image activations over the probing set.
#[derive(Debug, Clone)]
pub struct ActivationMatrix {
    pub layer_id: String,
    pub neuron_ids: IdIndex,
    pub image_ids: IdIndex,
    values: Matrix<f32>,
}

impl ActivationMatrix {
    pub fn new(
        layer_id: impl Into<String>,
        neuron_ids: IdIndex,
        image_ids: IdIndex,
        values: Matrix<f32>,
    ) -> Result<Self> {
        let layer_id = layer_id.into();
        if values.shape() != (neuron_ids.len(), image_ids.len()) {
            return Err(Error::ShapeMismatch(format!(
                "layer {layer_id:?}: array is {:?}, ids give ({}, {})",
                values.shape(),
                neuron_ids.len(),
                image_ids.len()
            )));
        }
        if let Some(idx) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: idx / values.cols(),
                col: idx % values.cols(),
            });
        }
        Ok(Self {
            layer_id,
            neuron_ids,
            image_ids,
            values,
        })
    }

    pub fn neuron_count(&self) -> usize {
        self.values.rows()
    }

    pub fn image_count(&self) -> usize {
        self.values.cols()
    }

    /// Activations of neuron `i` across every probing image.
    pub fn row(&self, i: usize) -> &[f32] {
        self.values.row(i)
    }

    pub fn values(&self) -> &Matrix<f32> {
        &self.values
    }
}

/// Dense table of unit-norm embeddings keyed by item id.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub encoder_id: String,
    pub kind: EmbeddingKind,
    pub item_ids: IdIndex,
    vectors: Matrix<f32>,
}

impl EmbeddingTable {
    /// Builds a table and re-normalizes every row to unit L2 norm.
    pub fn new(
        encoder_id: impl Into<String>,
        kind: EmbeddingKind,
        item_ids: IdIndex,
        mut vectors: Matrix<f32>,
    ) -> Result<Self> {
        let encoder_id = encoder_id.into();
        let context = format!("{kind} table for encoder {encoder_id:?}");
        if vectors.rows() != item_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{context}: {} rows for {} ids",
                vectors.rows(),
                item_ids.len()
            )));
        }
        if vectors.cols() == 0 {
            return Err(Error::ShapeMismatch(format!("{context}: zero dimension")));
        }
        for i in 0..vectors.rows() {
            let row = vectors.row_mut(i);
            if let Some(col) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { row: i, col });
            }
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::ZeroNorm {
                    context,
                    id: item_ids.get(i).unwrap_or_default().to_string(),
                });
            }
            for v in row.iter_mut() {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
        Ok(Self {
            encoder_id,
            kind,
            item_ids,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.vectors.row(i)
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.item_ids.index_of(id).map(|i| self.vectors.row(i))
    }

    pub fn vectors(&self) -> &Matrix<f32> {
        &self.vectors
    }
}
