use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ClassNsfwStats, ClusteringResult};
use crate::census::ClassCensusRow;
use crate::ingest::{fmt_f64, ClassInfo, CsvWriter, ImageKey, IngestError, Split};
use crate::stats;

#[derive(Debug, Error)]
pub enum ShortlistError {
    #[error("clustering covers {clustered} points but {features} class features were given")]
    LengthMismatch { clustered: usize, features: usize },
    #[error("selected cluster has no member classes")]
    EmptyCluster,
}

/// One clustered class: the (mean gender, mean train content score) point
/// plus the mean age used for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFeature {
    pub wordnet_id: String,
    pub class_index: Option<u32>,
    pub label: String,
    pub mean_gender: f64,
    pub mean_age: Option<f64>,
    pub mean_nsfw_train: f64,
}

/// Joins census rows (one model and split) with class content statistics.
/// Classes without any face-bearing image have no mean gender and are left
/// out; the result is sorted by `wordnet_id`.
pub fn cluster_features(
    census: &[ClassCensusRow],
    nsfw: &[ClassNsfwStats],
    classes: &[ClassInfo],
) -> Vec<ClassFeature> {
    let nsfw: BTreeMap<&str, &ClassNsfwStats> =
        nsfw.iter().map(|s| (s.wordnet_id.as_str(), s)).collect();
    let info: BTreeMap<&str, &ClassInfo> =
        classes.iter().map(|c| (c.wordnet_id.as_str(), c)).collect();
    let mut out: Vec<ClassFeature> = census
        .iter()
        .filter_map(|row| {
            let mu = row.mu?;
            let stats = nsfw.get(row.wordnet_id.as_str())?;
            let class = info.get(row.wordnet_id.as_str());
            Some(ClassFeature {
                wordnet_id: row.wordnet_id.clone(),
                class_index: class.map(|c| c.class_index),
                label: class.map(|c| c.label.clone()).unwrap_or_default(),
                mean_gender: mu,
                mean_age: (row.n_face_images > 0).then_some(row.alpha_facewise),
                mean_nsfw_train: stats.mean_nsfw_train,
            })
        })
        .collect();
    out.sort_by(|a, b| a.wordnet_id.cmp(&b.wordnet_id));
    out
}

/// Clustering coordinates, optionally z-scored per axis.
pub fn feature_points(features: &[ClassFeature], standardize: bool) -> Vec<[f64; 2]> {
    let xs: Vec<f64> = features.iter().map(|f| f.mean_gender).collect();
    let ys: Vec<f64> = features.iter().map(|f| f.mean_nsfw_train).collect();
    let (xs, ys) = if standardize {
        (zscore(&xs), zscore(&ys))
    } else {
        (xs, ys)
    };
    xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect()
}

fn zscore(v: &[f64]) -> Vec<f64> {
    let (Ok(m), Ok(sd)) = (stats::mean(v), stats::population_std(v)) else {
        return v.to_vec();
    };
    if sd == 0.0 {
        return v.iter().map(|x| x - m).collect();
    }
    v.iter().map(|x| (x - m) / sd).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortlistClass {
    pub wordnet_id: String,
    pub class_index: Option<u32>,
    pub label: String,
    pub mean_gender: f64,
    pub mean_age: Option<f64>,
    pub mean_nsfw_train: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortlist {
    /// Position of the selected cluster in `ClusteringResult::exemplars`.
    pub cluster_id: usize,
    pub exemplar: String,
    /// Member classes, highest mean train score first.
    pub classes: Vec<ShortlistClass>,
    /// Sorted, de-duplicated image keys of the member classes.
    pub images: Vec<ImageKey>,
}

/// Picks the cluster whose members have the largest average
/// `mean_nsfw_train` (lowest cluster position on ties) and lists its
/// classes and their images. Val images are kept only if `include_val`.
pub fn select_shortlist<'a, I>(
    features: &[ClassFeature],
    clustering: &ClusteringResult,
    images: I,
    include_val: bool,
) -> Result<Shortlist, ShortlistError>
where
    I: IntoIterator<Item = &'a ImageKey>,
{
    if clustering.assignment.len() != features.len() {
        return Err(ShortlistError::LengthMismatch {
            clustered: clustering.assignment.len(),
            features: features.len(),
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for cluster in 0..clustering.n_clusters() {
        let scores: Vec<f64> = clustering
            .members(cluster)
            .iter()
            .map(|i| features[*i].mean_nsfw_train)
            .collect();
        let Ok(m) = stats::mean(&scores) else { continue };
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((cluster, m));
        }
    }
    let (cluster_id, _) = best.ok_or(ShortlistError::EmptyCluster)?;

    let mut classes: Vec<ShortlistClass> = clustering
        .members(cluster_id)
        .into_iter()
        .map(|i| {
            let f = &features[i];
            ShortlistClass {
                wordnet_id: f.wordnet_id.clone(),
                class_index: f.class_index,
                label: f.label.clone(),
                mean_gender: f.mean_gender,
                mean_age: f.mean_age,
                mean_nsfw_train: f.mean_nsfw_train,
            }
        })
        .collect();
    classes.sort_by(|a, b| {
        b.mean_nsfw_train
            .total_cmp(&a.mean_nsfw_train)
            .then_with(|| a.wordnet_id.cmp(&b.wordnet_id))
    });

    let members: BTreeSet<&str> = classes.iter().map(|c| c.wordnet_id.as_str()).collect();
    let images: BTreeSet<ImageKey> = images
        .into_iter()
        .filter(|k| members.contains(k.wordnet_id.as_str()))
        .filter(|k| include_val || k.split == Split::Train)
        .cloned()
        .collect();

    Ok(Shortlist {
        cluster_id,
        exemplar: features[clustering.exemplars[cluster_id]].wordnet_id.clone(),
        classes,
        images: images.into_iter().collect(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// `shortlist.csv`: `wordnet_id,class_index,label,mean_gender,mean_age,mean_nsfw_train`.
pub fn write_shortlist<W: Write>(out: W, shortlist: &Shortlist) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row([
        "wordnet_id",
        "class_index",
        "label",
        "mean_gender",
        "mean_age",
        "mean_nsfw_train",
    ])?;
    for c in &shortlist.classes {
        w.row([
            c.wordnet_id.clone(),
            c.class_index.map(|i| i.to_string()).unwrap_or_default(),
            c.label.clone(),
            fmt_f64(c.mean_gender),
            opt(c.mean_age),
            fmt_f64(c.mean_nsfw_train),
        ])?;
    }
    w.finish()?;
    Ok(())
}

/// `shortlist_images.csv`: the survey queue source.
pub fn write_shortlist_images<W: Write>(out: W, shortlist: &Shortlist) -> Result<(), IngestError> {
    let by_id: BTreeMap<&str, &ShortlistClass> = shortlist
        .classes
        .iter()
        .map(|c| (c.wordnet_id.as_str(), c))
        .collect();
    let mut w = CsvWriter::new(out);
    w.row(["file_name", "wordnet_id", "split", "label", "mean_nsfw_train"])?;
    for k in &shortlist.images {
        let c = by_id[k.wordnet_id.as_str()];
        w.row([
            k.file_name.clone(),
            k.wordnet_id.clone(),
            k.split.to_string(),
            c.label.clone(),
            fmt_f64(c.mean_nsfw_train),
        ])?;
    }
    w.finish()?;
    Ok(())
}

/// `clusters.csv`: every clustered class with its exemplar.
pub fn write_clusters<W: Write>(
    out: W,
    features: &[ClassFeature],
    clustering: &ClusteringResult,
) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row([
        "wordnet_id",
        "label",
        "mean_gender",
        "mean_nsfw_train",
        "cluster",
        "exemplar",
        "is_exemplar",
    ])?;
    for (i, f) in features.iter().enumerate() {
        let e = clustering.assignment[i];
        w.row([
            f.wordnet_id.clone(),
            f.label.clone(),
            fmt_f64(f.mean_gender),
            fmt_f64(f.mean_nsfw_train),
            clustering.cluster_of(i).to_string(),
            features[e].wordnet_id.clone(),
            (e == i).to_string(),
        ])?;
    }
    w.finish()?;
    Ok(())
}
