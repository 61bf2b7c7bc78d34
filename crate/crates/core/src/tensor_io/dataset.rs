use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::manifest::verify_checksum;
use super::{read_array, read_id_list, ActivationMatrix, EmbeddingKind, EmbeddingTable, IdIndex, Manifest, Role};
use crate::concepts::{load_concept_list, ConceptSet};
use crate::error::{Error, Result};

/// A validated, immutable bundle of everything the pipeline reads.
///
/// Ids are resolved into dense index maps at load time: `image_rows` maps each
/// probing-image column to its row in an encoder's image table, and
/// `concept_rows` maps each concept-set index to its row in an encoder's
/// concept table.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub probe_images: IdIndex,
    /// Sorted by layer id.
    pub layers: Vec<ActivationMatrix>,
    pub concepts: ConceptSet,
    pub image_classes: Option<BTreeMap<String, String>>,
    tables: BTreeMap<(EmbeddingKind, String), EmbeddingTable>,
    image_rows: BTreeMap<String, Vec<usize>>,
    concept_rows: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    pub fn layer(&self, layer_id: &str) -> Option<&ActivationMatrix> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    pub fn table(&self, kind: EmbeddingKind, encoder_id: &str) -> Option<&EmbeddingTable> {
        self.tables.get(&(kind, encoder_id.to_string()))
    }

    pub fn tables(&self) -> impl Iterator<Item = &EmbeddingTable> + '_ {
        self.tables.values()
    }

    /// Looks up a table, reporting a manifest error when it is absent.
    pub fn require_table(&self, kind: EmbeddingKind, encoder_id: &str) -> Result<&EmbeddingTable> {
        self.table(kind, encoder_id).ok_or_else(|| {
            Error::Manifest(format!("no {kind} table for encoder {encoder_id:?}"))
        })
    }

    /// Row in the encoder's image table for each probing-image column.
    pub fn image_rows(&self, encoder_id: &str) -> Option<&[usize]> {
        self.image_rows.get(encoder_id).map(Vec::as_slice)
    }

    /// Row in the encoder's concept table for each concept index.
    pub fn concept_rows(&self, encoder_id: &str) -> Option<&[usize]> {
        self.concept_rows.get(encoder_id).map(Vec::as_slice)
    }

    pub fn labels(&self) -> &BTreeMap<String, String> {
        &self.manifest.labels
    }

    pub fn label_layer(&self) -> Option<&str> {
        self.manifest.label_layer.as_deref()
    }
}

fn coverage_check<'a, I>(context: String, index: &IdIndex, wanted: I) -> Result<()>
where
    I: IntoIterator<Item = &'a str>,
{
    let missing = index.missing(wanted);
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::IdCoverage { context, missing })
    }
}

fn read_image_classes(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (image, class) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: expected image_id<TAB>class", i + 1),
        })?;
        if map.insert(image.to_string(), class.to_string()).is_some() {
            return Err(Error::DuplicateId {
                context: "image classes".into(),
                id: image.to_string(),
            });
        }
    }
    Ok(map)
}

/// Loads and validates the bundle described by a manifest.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::read(manifest_path)?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let resolve = |rel: &str| root.join(rel);

    for entry in &manifest.files {
        let path = resolve(&entry.path);
        if !path.is_file() {
            return Err(Error::InputMissing(path));
        }
        verify_checksum(&path, &entry.checksum)?;
    }

    let probe_entry = manifest.probe_images()?;
    let probe_images = IdIndex::new("probe images", read_id_list(resolve(&probe_entry.path))?)?;
    if probe_images.is_empty() {
        return Err(Error::EmptyInput("probing set has no images".into()));
    }

    let concepts = load_concept_list(resolve(&manifest.concepts()?.path))?;

    let mut layers = Vec::new();
    for entry in manifest.entries(Role::Activations) {
        let layer_id = entry.layer_id.clone().unwrap_or_default();
        let ids_path = resolve(entry.ids.as_deref().unwrap_or_default());
        let neurons = IdIndex::new(&format!("neurons of layer {layer_id:?}"), read_id_list(ids_path)?)?;
        let values = read_array(resolve(&entry.path))?;
        layers.push(ActivationMatrix::new(layer_id, neurons, probe_images.clone(), values)?);
    }
    layers.sort_by(|a, b| a.layer_id.cmp(&b.layer_id));

    let mut tables = BTreeMap::new();
    for entry in &manifest.files {
        let Some(kind) = entry.role.embedding_kind() else {
            continue;
        };
        let encoder = entry.encoder_id.clone().unwrap_or_default();
        let ids_path = resolve(entry.ids.as_deref().unwrap_or_default());
        let ids = IdIndex::new(&format!("{kind} table {:?}", entry.path), read_id_list(ids_path)?)?;
        let table = EmbeddingTable::new(encoder.clone(), kind, ids, read_array(resolve(&entry.path))?)?;
        tables.insert((kind, encoder), table);
    }

    let mut dims: BTreeMap<&str, (usize, EmbeddingKind)> = BTreeMap::new();
    for ((kind, encoder), table) in &tables {
        match dims.get(encoder.as_str()) {
            Some(&(dim, other)) if dim != table.dim() => {
                return Err(Error::DimensionMismatch(format!(
                    "encoder {encoder:?}: {other} table has dim {dim}, {kind} table has dim {}",
                    table.dim()
                )))
            }
            Some(_) => {}
            None => {
                dims.insert(encoder, (table.dim(), *kind));
            }
        }
    }

    let mut image_rows = BTreeMap::new();
    let mut concept_rows = BTreeMap::new();
    for ((kind, encoder), table) in &tables {
        match kind {
            EmbeddingKind::Image => {
                coverage_check(
                    format!("image table for encoder {encoder:?}"),
                    &table.item_ids,
                    probe_images.ids().iter().map(String::as_str),
                )?;
                let rows = probe_images
                    .ids()
                    .iter()
                    .map(|id| table.item_ids.index_of(id).unwrap_or_default())
                    .collect();
                image_rows.insert(encoder.clone(), rows);
            }
            EmbeddingKind::Concept => {
                coverage_check(
                    format!("concept table for encoder {encoder:?}"),
                    &table.item_ids,
                    concepts.concepts().iter().map(String::as_str),
                )?;
                let rows = concepts
                    .concepts()
                    .iter()
                    .map(|c| table.item_ids.index_of(c).unwrap_or_default())
                    .collect();
                concept_rows.insert(encoder.clone(), rows);
            }
            EmbeddingKind::Label => {
                coverage_check(
                    format!("label table for encoder {encoder:?}"),
                    &table.item_ids,
                    manifest.labels.values().map(String::as_str),
                )?;
            }
            EmbeddingKind::Template => {}
        }
    }

    if let Some(layer_id) = manifest.label_layer.as_deref() {
        let layer = layers
            .iter()
            .find(|l| l.layer_id == layer_id)
            .ok_or_else(|| Error::Manifest(format!("label_layer {layer_id:?} has no activations")))?;
        coverage_check(
            format!("neurons of label layer {layer_id:?}"),
            &layer.neuron_ids,
            manifest.labels.keys().map(String::as_str),
        )?;
    }

    let image_classes = match manifest.entries(Role::ImageClasses).next() {
        Some(entry) => {
            let map = read_image_classes(&resolve(&entry.path))?;
            let missing: Vec<String> = probe_images
                .ids()
                .iter()
                .filter(|id| !map.contains_key(*id))
                .take(10)
                .cloned()
                .collect();
            if !missing.is_empty() {
                return Err(Error::IdCoverage {
                    context: "image classes".into(),
                    missing,
                });
            }
            Some(map)
        }
        None => None,
    };

    Ok(Dataset {
        root,
        manifest,
        probe_images,
        layers,
        concepts,
        image_classes,
        tables,
        image_rows,
        concept_rows,
    })
}
