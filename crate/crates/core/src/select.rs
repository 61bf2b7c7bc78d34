//! Representative-image selection.
//!
//! Adaptive mode keeps the images whose activation lies strictly above
//! `max - (1 - alpha) * (max - min)`, so the number of images varies with each
//! neuron's activation profile. Top-k mode keeps a fixed number of images and
//! serves as the non-adaptive baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::pearson;
use crate::tensor_io::{ActivationMatrix, Dataset, IdIndex};

pub const DEFAULT_ALPHA: f64 = 0.93;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Adaptive,
    Topk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionParams {
    pub mode: SelectionMode,
    pub alpha: f64,
    pub k: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            mode: SelectionMode::Adaptive,
            alpha: DEFAULT_ALPHA,
            k: 10,
        }
    }
}

impl SelectionParams {
    pub fn adaptive(alpha: f64) -> Self {
        Self {
            mode: SelectionMode::Adaptive,
            alpha,
            ..Self::default()
        }
    }

    pub fn topk(k: usize) -> Self {
        Self {
            mode: SelectionMode::Topk,
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParam(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.k == 0 {
            return Err(Error::InvalidParam("k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedImage {
    /// Column in the activation matrix.
    pub index: usize,
    pub activation: f32,
}

/// Outcome of selecting one neuron's representative images.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub tau: f64,
    /// Ascending by index.
    pub selected: Vec<SelectedImage>,
    pub fallback_applied: bool,
}

impl Selection {
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected.iter().map(|s| s.index)
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub layer_id: String,
    pub neuron_id: String,
    pub neuron_index: usize,
    pub selection: Selection,
}

fn min_max(activations: &[f32]) -> Result<(f64, f64)> {
    let first = *activations
        .first()
        .ok_or_else(|| Error::EmptyInput("activation row is empty".into()))?;
    let (lo, hi) = activations
        .iter()
        .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParam("activation row contains non-finite values".into()));
    }
    Ok((f64::from(lo), f64::from(hi)))
}

/// `max - (1 - alpha) * (max - min)`, evaluated in 64-bit.
pub fn compute_threshold(activations: &[f32], alpha: f64) -> Result<f64> {
    let (lo, hi) = min_max(activations)?;
    Ok(hi - (1.0 - alpha) * (hi - lo))
}

/// Keeps every image with activation strictly above the adaptive threshold. When
/// nothing clears it (a constant row, or `alpha == 1`), the images attaining the
/// maximum are kept instead and `fallback_applied` is set.
pub fn select_adaptive(activations: &[f32], alpha: f64) -> Result<Selection> {
    let tau = compute_threshold(activations, alpha)?;
    let selected: Vec<SelectedImage> = activations
        .iter()
        .enumerate()
        .filter(|(_, &a)| f64::from(a) > tau)
        .map(|(index, &activation)| SelectedImage { index, activation })
        .collect();
    if !selected.is_empty() {
        return Ok(Selection {
            tau,
            selected,
            fallback_applied: false,
        });
    }
    let (_, hi) = min_max(activations)?;
    let selected = activations
        .iter()
        .enumerate()
        .filter(|(_, &a)| f64::from(a) == hi)
        .map(|(index, &activation)| SelectedImage { index, activation })
        .collect();
    Ok(Selection {
        tau,
        selected,
        fallback_applied: true,
    })
}

/// Keeps the `k` highest activations; ties go to the lower index. `tau` is the
/// k-th largest activation.
pub fn select_topk(activations: &[f32], k: usize) -> Result<Selection> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    if k > activations.len() {
        return Err(Error::InvalidParam(format!(
            "k = {k} exceeds the {} probing images",
            activations.len()
        )));
    }
    min_max(activations)?;
    let mut order: Vec<usize> = (0..activations.len()).collect();
    // total_cmp is a strict order on finite values; index breaks ties.
    order.sort_by(|&a, &b| {
        activations[b]
            .total_cmp(&activations[a])
            .then_with(|| a.cmp(&b))
    });
    let tau = f64::from(activations[order[k - 1]]);
    order.truncate(k);
    order.sort_unstable();
    Ok(Selection {
        tau,
        selected: order
            .into_iter()
            .map(|index| SelectedImage {
                index,
                activation: activations[index],
            })
            .collect(),
        fallback_applied: false,
    })
}

pub fn select_row(activations: &[f32], params: &SelectionParams) -> Result<Selection> {
    match params.mode {
        SelectionMode::Adaptive => select_adaptive(activations, params.alpha),
        SelectionMode::Topk => select_topk(activations, params.k),
    }
}

/// Selects every neuron of a layer. Runs in parallel on the current rayon pool;
/// output order is neuron order regardless of thread count.
pub fn select_layer(layer: &ActivationMatrix, params: &SelectionParams) -> Result<Vec<SelectionResult>> {
    params.validate()?;
    (0..layer.neuron_count())
        .into_par_iter()
        .map(|i| {
            Ok(SelectionResult {
                layer_id: layer.layer_id.clone(),
                neuron_id: layer.neuron_ids.get(i).unwrap_or_default().to_string(),
                neuron_index: i,
                selection: select_row(layer.row(i), params)?,
            })
        })
        .collect()
}

/// Selects every neuron of every layer, ordered by (layer id, neuron index).
pub fn select_all(dataset: &Dataset, params: &SelectionParams) -> Result<Vec<SelectionResult>> {
    let mut out = Vec::new();
    for layer in &dataset.layers {
        out.extend(select_layer(layer, params)?);
    }
    Ok(out)
}

/// One line of the exported selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub layer: String,
    pub neuron: String,
    pub tau: f64,
    pub n: usize,
    pub fallback: bool,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub params: SelectionParams,
    pub records: Vec<SelectionRecord>,
}

impl SelectionReport {
    pub fn new(params: SelectionParams, results: &[SelectionResult], probe_images: &IdIndex) -> Self {
        let records = results
            .iter()
            .map(|r| SelectionRecord {
                layer: r.layer_id.clone(),
                neuron: r.neuron_id.clone(),
                tau: r.selection.tau,
                n: r.selection.len(),
                fallback: r.selection.fallback_applied,
                images: r
                    .selection
                    .indices()
                    .map(|i| probe_images.get(i).unwrap_or_default().to_string())
                    .collect(),
            })
            .collect();
        Self { params, records }
    }

    /// Rebuilds selection results against a loaded dataset.
    pub fn to_results(&self, dataset: &Dataset) -> Result<Vec<SelectionResult>> {
        self.records
            .iter()
            .map(|rec| {
                let layer = dataset.layer(&rec.layer).ok_or_else(|| {
                    Error::UnknownNeuron(format!("{}/{} (unknown layer)", rec.layer, rec.neuron))
                })?;
                let neuron_index = layer
                    .neuron_ids
                    .index_of(&rec.neuron)
                    .ok_or_else(|| Error::UnknownNeuron(format!("{}/{}", rec.layer, rec.neuron)))?;
                let row = layer.row(neuron_index);
                let mut selected = rec
                    .images
                    .iter()
                    .map(|id| {
                        let index = dataset
                            .probe_images
                            .index_of(id)
                            .ok_or_else(|| Error::MissingEmbedding(id.clone()))?;
                        Ok(SelectedImage {
                            index,
                            activation: row[index],
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                selected.sort_by_key(|s| s.index);
                selected.dedup_by_key(|s| s.index);
                if selected.is_empty() {
                    return Err(Error::EmptyInput(format!(
                        "selection for {}/{} is empty",
                        rec.layer, rec.neuron
                    )));
                }
                Ok(SelectionResult {
                    layer_id: rec.layer.clone(),
                    neuron_id: rec.neuron.clone(),
                    neuron_index,
                    selection: Selection {
                        tau: rec.tau,
                        selected,
                        fallback_applied: rec.fallback,
                    },
                })
            })
            .collect()
    }
}

/// Per-class counts of selected images against the probing-set class balance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDistribution {
    /// Selected images per class, summed over neurons.
    pub selected_per_class: BTreeMap<String, usize>,
    /// Probing images per class.
    pub probe_per_class: BTreeMap<String, usize>,
    /// Number of neurons selecting exactly `n` images.
    pub n_histogram: BTreeMap<usize, usize>,
}

impl SelectionDistribution {
    /// Pearson correlation between selected and probing-set class counts.
    pub fn class_correlation(&self) -> Option<f64> {
        let (sel, probe): (Vec<f64>, Vec<f64>) = self
            .probe_per_class
            .iter()
            .map(|(class, &p)| {
                (
                    self.selected_per_class.get(class).copied().unwrap_or(0) as f64,
                    p as f64,
                )
            })
            .unzip();
        pearson(&sel, &probe)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("class\tselected\tprobe\n");
        for (class, probe) in &self.probe_per_class {
            let sel = self.selected_per_class.get(class).copied().unwrap_or(0);
            let _ = writeln!(out, "{class}\t{sel}\t{probe}");
        }
        out.push_str("\nn\tneurons\n");
        for (n, count) in &self.n_histogram {
            let _ = writeln!(out, "{n}\t{count}");
        }
        out
    }
}

pub fn selection_distribution(
    results: &[SelectionResult],
    probe_images: &IdIndex,
    class_of_image: &BTreeMap<String, String>,
) -> Result<SelectionDistribution> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no selection results".into()));
    }
    let class_of = |index: usize| -> Result<&String> {
        let id = probe_images.get(index).unwrap_or_default();
        class_of_image
            .get(id)
            .ok_or_else(|| Error::UnmappedImage(id.to_string()))
    };

    let mut probe_per_class = BTreeMap::new();
    for i in 0..probe_images.len() {
        *probe_per_class.entry(class_of(i)?.clone()).or_insert(0) += 1;
    }
    let mut selected_per_class = BTreeMap::new();
    let mut n_histogram = BTreeMap::new();
    for r in results {
        for index in r.selection.indices() {
            *selected_per_class.entry(class_of(index)?.clone()).or_insert(0) += 1;
        }
        *n_histogram.entry(r.selection.len()).or_insert(0) += 1;
    }
    Ok(SelectionDistribution {
        selected_per_class,
        probe_per_class,
        n_histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn picked(s: &Selection) -> Vec<usize> {
        s.indices().collect()
    }

    #[test]
    fn threshold_examples() {
        let row = [0.0f32, 10.0];
        assert!((compute_threshold(&row, 0.93).unwrap() - 9.3).abs() < 1e-12);
        assert_eq!(compute_threshold(&[2.5f32; 4], 0.3).unwrap(), 2.5);
        assert_eq!(compute_threshold(&[1.0f32, -4.0, 7.0], 1.0).unwrap(), 7.0);
        assert!(compute_threshold(&[], 0.5).is_err());
    }

    #[test]
    fn adaptive_hand_example() {
        let s = select_adaptive(&[0.1, 5.0, 9.5, 10.0], 0.93).unwrap();
        // 10 - 0.07 * (10 - 0.1)
        assert!((s.tau - 9.307).abs() < 1e-6);
        assert_eq!(picked(&s), vec![2, 3]);
        assert!(!s.fallback_applied);
    }

    #[test]
    fn constant_row_falls_back_to_all() {
        let s = select_adaptive(&[3.0; 4], 0.93).unwrap();
        assert_eq!(picked(&s), vec![0, 1, 2, 3]);
        assert!(s.fallback_applied);
    }

    #[test]
    fn alpha_one_keeps_the_argmax_set() {
        let s = select_adaptive(&[1.0, 4.0, 2.0, 4.0], 1.0).unwrap();
        assert_eq!(picked(&s), vec![1, 3]);
        assert!(s.fallback_applied);
    }

    #[test]
    fn topk_examples() {
        assert_eq!(picked(&select_topk(&[3.0, 1.0, 2.0], 2).unwrap()), vec![0, 2]);
        let tie = select_topk(&[5.0, 5.0, 5.0], 2).unwrap();
        assert_eq!(picked(&tie), vec![0, 1]);
        assert_eq!(tie.tau, 5.0);
        assert!(matches!(select_topk(&[1.0], 2), Err(Error::InvalidParam(_))));
        assert!(matches!(select_topk(&[1.0], 0), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn params_validation() {
        assert!(SelectionParams::adaptive(2.0).validate().is_err());
        assert!(SelectionParams::adaptive(-0.1).validate().is_err());
        assert!(SelectionParams::adaptive(0.0).validate().is_ok());
        assert!(SelectionParams::topk(0).validate().is_err());
    }

    fn result(indices: &[usize]) -> SelectionResult {
        SelectionResult {
            layer_id: "l".into(),
            neuron_id: "n".into(),
            neuron_index: 0,
            selection: Selection {
                tau: 0.0,
                selected: indices
                    .iter()
                    .map(|&index| SelectedImage { index, activation: 1.0 })
                    .collect(),
                fallback_applied: false,
            },
        }
    }

    #[test]
    fn distribution_counts() {
        let probe = IdIndex::new("p", vec!["imgA".into(), "imgB".into()]).unwrap();
        let classes: BTreeMap<String, String> =
            [("imgA", "x"), ("imgB", "y")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let d = selection_distribution(&[result(&[0, 1]), result(&[1])], &probe, &classes).unwrap();
        assert_eq!(d.selected_per_class["x"], 1);
        assert_eq!(d.selected_per_class["y"], 2);
        assert_eq!(d.n_histogram[&1], 1);
        assert_eq!(d.n_histogram[&2], 1);
        assert_eq!(d.to_tsv(), "class\tselected\tprobe\nx\t1\t1\ny\t2\t1\n\nn\tneurons\n1\t1\n2\t1\n");
    }

    #[test]
    fn distribution_errors() {
        let probe = IdIndex::new("p", vec!["imgA".into()]).unwrap();
        let empty = BTreeMap::new();
        assert!(matches!(selection_distribution(&[], &probe, &empty), Err(Error::EmptyInput(_))));
        assert!(matches!(
            selection_distribution(&[result(&[0])], &probe, &empty),
            Err(Error::UnmappedImage(id)) if id == "imgA"
        ));
    }

    fn brute_force(row: &[f32], tau: f64) -> Vec<usize> {
        (0..row.len()).filter(|&k| f64::from(row[k]) > tau).collect()
    }

    proptest! {
        #[test]
        fn adaptive_matches_brute_force(
            row in prop::collection::vec(-100.0f32..100.0, 1..200),
            alpha in 0.0f64..=1.0,
        ) {
            let s = select_adaptive(&row, alpha).unwrap();
            let expected = brute_force(&row, s.tau);
            if expected.is_empty() {
                prop_assert!(s.fallback_applied);
            } else {
                prop_assert_eq!(picked(&s), expected);
            }
            prop_assert!(!s.is_empty());
            prop_assert!(s.len() <= row.len());
            prop_assert!(picked(&s).windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn argmax_is_always_selected(
            row in prop::collection::vec(-10.0f32..10.0, 2..100),
            alpha in 0.0f64..1.0,
        ) {
            let s = select_adaptive(&row, alpha).unwrap();
            let max = row.iter().cloned().fold(f32::MIN, f32::max);
            for (k, &a) in row.iter().enumerate() {
                if a == max {
                    prop_assert!(picked(&s).contains(&k));
                }
            }
        }

        #[test]
        fn topk_matches_sort_oracle(
            row in prop::collection::vec(prop::sample::select(vec![0.0f32, 1.0, 2.0, 2.5, 3.0]), 1..60),
            k_frac in 0.0f64..1.0,
        ) {
            let k = 1 + ((row.len() - 1) as f64 * k_frac) as usize;
            let s = select_topk(&row, k).unwrap();
            let mut pairs: Vec<(f32, usize)> = row.iter().cloned().zip(0..).collect();
            pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut expected: Vec<usize> = pairs[..k].iter().map(|p| p.1).collect();
            expected.sort();
            prop_assert_eq!(picked(&s), expected);
            prop_assert_eq!(s.tau, f64::from(pairs[k - 1].0));
        }
    }
}
