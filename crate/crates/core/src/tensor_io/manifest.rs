//! Manifest schema (TOML) and file checksums.
//!
//! ```toml
//! format_version = "1.0"
//! label_layer = "final"            # layer whose neurons `labels` refers to
//!
//! [[files]]
//! role = "activations"             # see `Role`
//! path = "act_final.npy"           # relative to the manifest's directory
//! checksum = "<sha-256, lowercase hex>"
//! layer_id = "final"               # activations only
//! ids = "neurons_final.txt"        # row-id sidecar, itself listed as an `id_list` file
//!
//! [labels]
//! n0 = "Atelectasis"
//!
//! [metadata]                       # free-form provenance, echoed into outputs
//! template = "a photo of a"
//! ```

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmbeddingKind;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "1.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Newline-delimited probing image ids; the columns of every activation matrix.
    ProbeImages,
    /// npy activation matrix for one layer; needs `layer_id` and `ids`.
    Activations,
    ImageEmbeddings,
    ConceptEmbeddings,
    LabelEmbeddings,
    TemplateEmbeddings,
    /// Concept-set file.
    Concepts,
    /// Optional `image_id<TAB>class` lines used by the selection distribution report.
    ImageClasses,
    /// An id sidecar referenced by another entry's `ids`.
    IdList,
}

impl Role {
    pub fn embedding_kind(self) -> Option<EmbeddingKind> {
        match self {
            Role::ImageEmbeddings => Some(EmbeddingKind::Image),
            Role::ConceptEmbeddings => Some(EmbeddingKind::Concept),
            Role::LabelEmbeddings => Some(EmbeddingKind::Label),
            Role::TemplateEmbeddings => Some(EmbeddingKind::Template),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub role: Role,
    pub path: String,
    pub checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_layer: Option<String>,
    pub files: Vec<FileEntry>,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let manifest: Manifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(manifest.format_version));
        }
        manifest.check_structure()?;
        Ok(manifest)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn entries(&self, role: Role) -> impl Iterator<Item = &FileEntry> + '_ {
        self.files.iter().filter(move |f| f.role == role)
    }

    fn single(&self, role: Role) -> Result<&FileEntry> {
        let mut it = self.entries(role);
        match (it.next(), it.next()) {
            (Some(e), None) => Ok(e),
            (None, _) => Err(Error::Manifest(format!("no {role:?} entry"))),
            (Some(_), Some(_)) => Err(Error::Manifest(format!("more than one {role:?} entry"))),
        }
    }

    pub fn probe_images(&self) -> Result<&FileEntry> {
        self.single(Role::ProbeImages)
    }

    pub fn concepts(&self) -> Result<&FileEntry> {
        self.single(Role::Concepts)
    }

    /// Structural checks that need no file access.
    fn check_structure(&self) -> Result<()> {
        self.probe_images()?;
        self.concepts()?;
        if self.entries(Role::ImageClasses).count() > 1 {
            return Err(Error::Manifest("more than one ImageClasses entry".into()));
        }
        let id_lists: Vec<&str> = self.entries(Role::IdList).map(|e| e.path.as_str()).collect();

        let mut layers = Vec::new();
        let mut tables = Vec::new();
        for entry in &self.files {
            if entry.role == Role::Activations {
                let layer = entry.layer_id.as_deref().ok_or_else(|| {
                    Error::Manifest(format!("activations entry {:?} lacks layer_id", entry.path))
                })?;
                if layers.contains(&layer) {
                    return Err(Error::Manifest(format!("layer {layer:?} listed twice")));
                }
                layers.push(layer);
            }
            if let Some(kind) = entry.role.embedding_kind() {
                let encoder = entry.encoder_id.as_deref().ok_or_else(|| {
                    Error::Manifest(format!("{kind} embeddings {:?} lack encoder_id", entry.path))
                })?;
                if tables.contains(&(kind, encoder)) {
                    return Err(Error::Manifest(format!(
                        "duplicate {kind} table for encoder {encoder:?}"
                    )));
                }
                tables.push((kind, encoder));
            }
            if entry.role == Role::Activations || entry.role.embedding_kind().is_some() {
                let ids = entry.ids.as_deref().ok_or_else(|| {
                    Error::Manifest(format!("{:?} entry {:?} lacks ids", entry.role, entry.path))
                })?;
                if !id_lists.contains(&ids) {
                    return Err(Error::Manifest(format!(
                        "ids file {ids:?} is not listed as an id_list entry"
                    )));
                }
            }
        }
        if layers.is_empty() {
            return Err(Error::Manifest("no activations entry".into()));
        }
        if !self.labels.is_empty() {
            match &self.label_layer {
                Some(l) if layers.contains(&l.as_str()) => {}
                Some(l) => return Err(Error::Manifest(format!("label_layer {l:?} has no activations"))),
                None => return Err(Error::Manifest("labels given without label_layer".into())),
            }
        }
        Ok(())
    }
}

/// SHA-256 of a file as lowercase hex.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub(crate) fn verify_checksum(path: &Path, expected: &str) -> Result<()> {
    let actual = sha256_file(path)?;
    if !actual.eq_ignore_ascii_case(expected.trim()) {
        return Err(Error::ChecksumMismatch {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            actual,
        });
    }
    Ok(())
}
