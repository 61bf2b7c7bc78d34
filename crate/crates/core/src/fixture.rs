//! Seeded synthetic bundle with planted neuron concepts.
//!
//! Fourteen final-layer neurons, one per class, over 200 probing images with
//! imbalanced class counts. Each neuron fires strongly on its own class. Concept
//! embeddings of the scoring encoder are near-orthogonal axes; images of a class
//! point mostly along the axis of that class's planted concept, plus a shared
//! template component and seeded Gaussian noise. Two evaluation encoders embed
//! concepts and labels so that each label sits near its planted concept.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor_io::{sha256_file, write_array, write_id_list, FileEntry, Manifest, Matrix, Role, FORMAT_VERSION};

pub const DEFAULT_SEED: u64 = 20240917;
pub const LAYER_ID: &str = "final";
pub const SCORING_ENCODER: &str = "vlm";
pub const EVAL_ENCODERS: [&str; 2] = ["clip", "mpnet"];
pub const TEMPLATE_ID: &str = "base";

pub const CLASSES: [&str; 14] = [
    "Atelectasis",
    "Cardiomegaly",
    "Effusion",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pneumonia",
    "Pneumothorax",
    "Consolidation",
    "Edema",
    "Emphysema",
    "Fibrosis",
    "Pleural Thickening",
    "Hernia",
];

/// Probing images per class; sums to 200.
pub const CLASS_COUNTS: [usize; 14] = [40, 30, 25, 20, 16, 13, 11, 9, 8, 7, 7, 6, 4, 4];

/// Concept planted in each class's neuron.
pub const PLANTED: [&str; 14] = [
    "atelectasis",
    "heart",
    "effusion",
    "opacity",
    "mass",
    "nodule",
    "pneumonia",
    "air",
    "consolidation",
    "edema",
    "emphysema",
    "fibrosis",
    "thickening",
    "diaphragm",
];

const FILLER: [&str; 86] = [
    "abdomen", "angle", "aorta", "apex", "arch", "artery", "base", "bone", "bronchus", "catheter",
    "cavity", "chest", "clavicle", "collapse", "contour", "cyst", "density", "device", "drain",
    "elevation", "fissure", "fluid", "fracture", "granuloma", "hemidiaphragm", "hilum", "hyperinflation",
    "interval", "kyphosis", "lesion", "line", "lobe", "lucency", "lung", "lungs", "margin",
    "marking", "mediastinum", "midline", "nipple", "osteopenia", "pacemaker", "parenchyma",
    "pattern", "pericardium", "pleura", "port", "position", "process", "projection", "pulmonary-artery",
    "radiograph", "region", "rib", "ribs", "scar", "scarring", "sclerosis", "scoliosis", "segment",
    "shadow", "shift", "silhouette", "sinus", "size", "spine", "sternotomy", "stomach", "structure",
    "surgery", "tip", "tissue", "trachea", "tube", "tumor", "valve", "vasculature", "vein",
    "vertebra", "volume", "wall", "wire", "zone", "clip", "granularity", "streak",
];

pub const IMAGES: usize = 200;
pub const SCORING_DIM: usize = 128;
const TEMPLATE_AXIS: usize = 120;

/// Concept list in file order: planted concepts interleaved with fillers.
pub fn concept_list() -> Vec<String> {
    let mut out = Vec::with_capacity(100);
    let mut fill = FILLER.iter();
    for (i, p) in PLANTED.iter().enumerate() {
        out.push(p.to_string());
        for f in fill.by_ref().take(if i < 2 { 7 } else { 6 }) {
            out.push(f.to_string());
        }
    }
    out.extend(fill.map(|f| f.to_string()));
    out
}

pub fn neuron_ids() -> Vec<String> {
    (0..CLASSES.len()).map(|i| format!("n{i:02}")).collect()
}

pub fn image_ids() -> Vec<String> {
    (0..IMAGES).map(|i| format!("img{i:03}")).collect()
}

/// In-memory fixture contents.
#[derive(Debug, Clone)]
pub struct Fixture {
    /// Class index of each probing image.
    pub image_class: Vec<usize>,
    pub activations: Matrix<f32>,
    pub scoring_images: Matrix<f32>,
    pub scoring_concepts: Matrix<f32>,
    pub template: Matrix<f32>,
    /// (encoder, concept table, label table)
    pub eval: Vec<(String, Matrix<f32>, Matrix<f32>)>,
}

fn gaussian_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    (0..rows * cols).map(|_| normal.sample(rng)).collect()
}

fn to_f32(rows: usize, cols: usize, v: Vec<f64>) -> Matrix<f32> {
    Matrix::from_vec(rows, cols, v.into_iter().map(|x| x as f32).collect()).expect("shape")
}

pub fn generate(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let concepts = concept_list();
    let planted_index: Vec<usize> = PLANTED
        .iter()
        .map(|p| concepts.iter().position(|c| c == p).expect("planted concept listed"))
        .collect();

    let mut image_class: Vec<usize> = CLASS_COUNTS
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    image_class.shuffle(&mut rng);

    let n_neurons = CLASSES.len();
    let mut act = vec![0.0f64; n_neurons * IMAGES];
    for neuron in 0..n_neurons {
        for (k, &class) in image_class.iter().enumerate() {
            act[neuron * IMAGES + k] = if class == neuron {
                8.0 + rng.gen_range(-0.2..0.2)
            } else {
                rng.gen_range(0.0..3.0)
            };
        }
    }

    let d = SCORING_DIM;
    let mut concept_vecs = gaussian_rows(&mut rng, concepts.len(), d, 0.02);
    for j in 0..concepts.len() {
        concept_vecs[j * d + j] += 1.0;
    }
    let mut template = gaussian_rows(&mut rng, 1, d, 0.02);
    template[TEMPLATE_AXIS] += 1.0;
    let mut images = gaussian_rows(&mut rng, IMAGES, d, 0.08);
    for (k, &class) in image_class.iter().enumerate() {
        images[k * d + planted_index[class]] += 0.6;
        images[k * d + TEMPLATE_AXIS] += 0.5;
    }

    let mut eval = Vec::new();
    for (enc, dim) in EVAL_ENCODERS.iter().zip([32usize, 24]) {
        let concept_tab = gaussian_rows(&mut rng, concepts.len(), dim, 1.0);
        let mut label_tab = gaussian_rows(&mut rng, CLASSES.len(), dim, 0.5);
        for (c, &p) in planted_index.iter().enumerate() {
            let norm = concept_tab[p * dim..(p + 1) * dim].iter().map(|x| x * x).sum::<f64>().sqrt();
            for t in 0..dim {
                label_tab[c * dim + t] += concept_tab[p * dim + t] / norm * 2.0;
            }
        }
        eval.push((
            enc.to_string(),
            to_f32(concepts.len(), dim, concept_tab),
            to_f32(CLASSES.len(), dim, label_tab),
        ));
    }

    Fixture {
        image_class,
        activations: to_f32(n_neurons, IMAGES, act),
        scoring_images: to_f32(IMAGES, d, images),
        scoring_concepts: to_f32(concepts.len(), d, concept_vecs),
        template: to_f32(1, d, template),
        eval,
    }
}

type Pending<'a> = (Role, String, Option<&'a str>, Option<&'a str>, Option<&'a str>);

/// Writes the fixture bundle and its manifest (`manifest.toml`) into `dir`.
pub fn write_fixture(dir: impl AsRef<Path>, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fx = generate(seed);
    let concepts = concept_list();
    let labels: Vec<String> = CLASSES.iter().map(|s| s.to_string()).collect();

    // (role, path, encoder_id, layer_id, ids)
    let mut files: Vec<Pending> = Vec::new();
    let id_list = |name: &str, ids: &[String], files: &mut Vec<_>| -> Result<()> {
        write_id_list(dir.join(name), ids)?;
        files.push((Role::IdList, name.to_string(), None, None, None));
        Ok(())
    };
    id_list("neurons_final.txt", &neuron_ids(), &mut files)?;
    id_list("images.ids.txt", &image_ids(), &mut files)?;
    id_list("concepts.ids.txt", &concepts, &mut files)?;
    id_list("labels.ids.txt", &labels, &mut files)?;
    id_list("template.ids.txt", &[TEMPLATE_ID.to_string()], &mut files)?;

    write_id_list(dir.join("probe_images.txt"), &image_ids())?;
    files.push((Role::ProbeImages, "probe_images.txt".into(), None, None, None));
    write_id_list(dir.join("concepts.txt"), &concepts)?;
    files.push((Role::Concepts, "concepts.txt".into(), None, None, None));

    let classes: String = image_ids()
        .iter()
        .zip(&fx.image_class)
        .map(|(id, &c)| format!("{id}\t{}\n", CLASSES[c]))
        .collect();
    std::fs::write(dir.join("image_classes.tsv"), classes).map_err(|e| Error::io(dir, e))?;
    files.push((Role::ImageClasses, "image_classes.tsv".into(), None, None, None));

    write_array(&fx.activations, dir.join("act_final.npy"))?;
    files.push((Role::Activations, "act_final.npy".into(), None, Some(LAYER_ID), Some("neurons_final.txt")));

    let enc = Some(SCORING_ENCODER);
    write_array(&fx.scoring_images, dir.join("vlm_images.npy"))?;
    files.push((Role::ImageEmbeddings, "vlm_images.npy".into(), enc, None, Some("images.ids.txt")));
    write_array(&fx.scoring_concepts, dir.join("vlm_concepts.npy"))?;
    files.push((Role::ConceptEmbeddings, "vlm_concepts.npy".into(), enc, None, Some("concepts.ids.txt")));
    write_array(&fx.template, dir.join("vlm_template.npy"))?;
    files.push((Role::TemplateEmbeddings, "vlm_template.npy".into(), enc, None, Some("template.ids.txt")));

    for ((name, concept_tab, label_tab), enc) in fx.eval.iter().zip(EVAL_ENCODERS) {
        let cpath = format!("{name}_concepts.npy");
        let lpath = format!("{name}_labels.npy");
        write_array(concept_tab, dir.join(&cpath))?;
        write_array(label_tab, dir.join(&lpath))?;
        files.push((Role::ConceptEmbeddings, cpath, Some(enc), None, Some("concepts.ids.txt")));
        files.push((Role::LabelEmbeddings, lpath, Some(enc), None, Some("labels.ids.txt")));
    }

    let files = files
        .into_iter()
        .map(|(role, path, encoder_id, layer_id, ids)| {
            Ok(FileEntry {
                role,
                checksum: sha256_file(dir.join(&path))?,
                path,
                encoder_id: encoder_id.map(str::to_string),
                layer_id: layer_id.map(str::to_string),
                ids: ids.map(str::to_string),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION.to_string(),
        label_layer: Some(LAYER_ID.to_string()),
        files,
        labels: neuron_ids().into_iter().zip(labels).collect(),
        metadata: [
            ("generator".to_string(), format!("synthetic fixture, seed {seed}")),
            ("pooling".to_string(), "none".to_string()),
            ("template".to_string(), "a photo of a".to_string()),
        ]
        .into_iter()
        .collect(),
    };
    let path = dir.join("manifest.toml");
    std::fs::write(&path, manifest.to_toml()?).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_counts() {
        assert_eq!(CLASS_COUNTS.iter().sum::<usize>(), IMAGES);
        let concepts = concept_list();
        assert_eq!(concepts.len(), 100);
        let unique: std::collections::BTreeSet<_> = concepts.iter().collect();
        assert_eq!(unique.len(), 100);
        let fx = generate(DEFAULT_SEED);
        assert_eq!(fx.activations.shape(), (14, 200));
        assert_eq!(fx.scoring_concepts.shape(), (100, SCORING_DIM));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(7);
        let b = generate(7);
        assert_eq!(a.activations, b.activations);
        assert_eq!(a.scoring_images, b.scoring_images);
        assert_ne!(generate(8).activations, a.activations);
    }
}
