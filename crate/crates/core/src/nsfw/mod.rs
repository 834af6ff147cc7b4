//! Content scores per image and class, exemplar clustering of classes in
//! (mean gender, mean content score) space, and the hand-survey shortlist.

mod affinity;
mod shortlist;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{fmt_f64, CsvWriter, IngestError, NsfwAnnotation, NsfwClass, Split};
use crate::stats;

pub use affinity::{
    affinity_propagation, affinity_propagation_matrix, negative_squared_euclidean, ApError,
    ApParams, ClusteringResult, Preference,
};
pub use shortlist::{
    cluster_features, feature_points, select_shortlist, write_clusters, write_shortlist,
    write_shortlist_images, ClassFeature, Shortlist, ShortlistClass, ShortlistError,
};

#[derive(Debug, Error)]
pub enum NsfwError {
    #[error("class {0} has no train annotations")]
    EmptyClass(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Sums the softmax mass of the configured positive classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsfwScorer {
    pub positive: Vec<NsfwClass>,
}

impl Default for NsfwScorer {
    fn default() -> Self {
        Self {
            positive: vec![NsfwClass::Hentai, NsfwClass::Porn, NsfwClass::Sexy],
        }
    }
}

impl NsfwScorer {
    pub fn score(&self, a: &NsfwAnnotation) -> f64 {
        stats::sum(self.positive.iter().map(|c| a.prob(*c)))
    }
}

/// `p_hentai + p_porn + p_sexy`.
pub fn image_nsfw_score(a: &NsfwAnnotation) -> f64 {
    NsfwScorer::default().score(a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassNsfwStats {
    pub wordnet_id: String,
    pub n_train: u64,
    pub mean_nsfw_train: f64,
    pub std_nsfw_train: f64,
    pub n_val: u64,
    pub mean_nsfw_val: Option<f64>,
    pub std_nsfw_val: Option<f64>,
}

/// Per-class mean and population std of image scores, per split, sorted by
/// `wordnet_id`. Every class present needs at least one train image.
pub fn class_nsfw_stats(
    annotations: &[NsfwAnnotation],
    scorer: &NsfwScorer,
) -> Result<Vec<ClassNsfwStats>, NsfwError> {
    let mut sorted: Vec<&NsfwAnnotation> = annotations.iter().collect();
    sorted.sort_by(|a, b| a.image.cmp(&b.image));
    let mut grouped: BTreeMap<&str, [Vec<f64>; 2]> = BTreeMap::new();
    for a in sorted {
        let slot = match a.image.split {
            Split::Train => 0,
            Split::Val => 1,
        };
        grouped.entry(a.image.wordnet_id.as_str()).or_default()[slot].push(scorer.score(a));
    }
    grouped
        .into_iter()
        .map(|(id, [train, val])| {
            if train.is_empty() {
                return Err(NsfwError::EmptyClass(id.to_string()));
            }
            Ok(ClassNsfwStats {
                wordnet_id: id.to_string(),
                n_train: train.len() as u64,
                mean_nsfw_train: stats::mean(&train).expect("non-empty"),
                std_nsfw_train: stats::population_std(&train).expect("non-empty"),
                n_val: val.len() as u64,
                mean_nsfw_val: stats::mean(&val).ok(),
                std_nsfw_val: stats::population_std(&val).ok(),
            })
        })
        .collect()
}

const NSFW_STATS_HEADER: [&str; 5] = [
    "wordnet_id",
    "mean_nsfw_train",
    "std_nsfw_train",
    "mean_nsfw_val",
    "std_nsfw_val",
];

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes `df_nsfw.csv`; absent val statistics are empty cells.
pub fn write_class_nsfw_stats<W: Write>(out: W, rows: &[ClassNsfwStats]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(NSFW_STATS_HEADER)?;
    for r in rows {
        w.row([
            r.wordnet_id.clone(),
            fmt_f64(r.mean_nsfw_train),
            fmt_f64(r.std_nsfw_train),
            opt(r.mean_nsfw_val),
            opt(r.std_nsfw_val),
        ])?;
    }
    w.finish()?;
    Ok(())
}

/// Reads a `df_nsfw.csv` produced by [`write_class_nsfw_stats`] (or the
/// released asset with the same columns). Image counts are not part of the
/// file and come back as 0.
pub fn read_class_nsfw_stats<R: Read>(input: R) -> Result<Vec<ClassNsfwStats>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if !header.iter().eq(NSFW_STATS_HEADER) {
        return Err(IngestError::Header {
            expected: NSFW_STATS_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 5 {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let num = |i: usize| -> Result<Option<f64>, IngestError> {
            if rec[i].is_empty() {
                return Ok(None);
            }
            rec[i]
                .parse::<f64>()
                .map(Some)
                .map_err(|_| IngestError::MalformedRow {
                    line,
                    reason: format!("cannot parse `{}`", &rec[i]),
                })
        };
        let required = |i: usize| -> Result<f64, IngestError> {
            num(i)?.ok_or(IngestError::MalformedRow {
                line,
                reason: "missing train statistic".into(),
            })
        };
        out.push(ClassNsfwStats {
            wordnet_id: rec[0].to_string(),
            n_train: 0,
            mean_nsfw_train: required(1)?,
            std_nsfw_train: required(2)?,
            n_val: 0,
            mean_nsfw_val: num(3)?,
            std_nsfw_val: num(4)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ImageKey;

    fn ann(file: &str, split: Split, probs: [f64; 5]) -> NsfwAnnotation {
        NsfwAnnotation {
            image: ImageKey::new("n02837789", split, file),
            probs,
        }
    }

    #[test]
    fn image_scores() {
        let s = image_nsfw_score(&ann("a", Split::Train, [0.1, 0.2, 0.3, 0.25, 0.15]));
        assert!((s - 0.6).abs() < 1e-12);
        assert_eq!(image_nsfw_score(&ann("a", Split::Train, [0., 0., 1., 0., 0.])), 0.0);
        assert_eq!(image_nsfw_score(&ann("a", Split::Train, [0., 0.5, 0., 0.5, 0.])), 1.0);
    }

    #[test]
    fn class_stats_single_and_pair() {
        let one = class_nsfw_stats(
            &[ann("a", Split::Train, [0.4, 0.2, 0.0, 0.25, 0.15])],
            &NsfwScorer::default(),
        )
        .unwrap();
        assert!((one[0].mean_nsfw_train - 0.6).abs() < 1e-12);
        assert_eq!(one[0].std_nsfw_train, 0.0);
        assert_eq!(one[0].mean_nsfw_val, None);

        let two = class_nsfw_stats(
            &[
                ann("a", Split::Train, [0.8, 0.0, 0.0, 0.2, 0.0]),
                ann("b", Split::Train, [0.2, 0.0, 0.0, 0.8, 0.0]),
            ],
            &NsfwScorer::default(),
        )
        .unwrap();
        assert!((two[0].mean_nsfw_train - 0.5).abs() < 1e-12);
        assert!((two[0].std_nsfw_train - 0.3).abs() < 1e-12);
    }

    #[test]
    fn val_only_class_is_rejected() {
        let err = class_nsfw_stats(
            &[ann("a", Split::Val, [1.0, 0.0, 0.0, 0.0, 0.0])],
            &NsfwScorer::default(),
        )
        .unwrap_err();
        assert!(matches!(err, NsfwError::EmptyClass(_)));
    }

    #[test]
    fn stats_file_round_trip() {
        let rows = class_nsfw_stats(
            &[
                ann("a", Split::Train, [0.8, 0.0, 0.0, 0.2, 0.0]),
                ann("b", Split::Val, [0.2, 0.0, 0.0, 0.8, 0.0]),
            ],
            &NsfwScorer::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_class_nsfw_stats(&mut buf, &rows).unwrap();
        let back = read_class_nsfw_stats(buf.as_slice()).unwrap();
        assert_eq!(back[0].mean_nsfw_train, rows[0].mean_nsfw_train);
        assert_eq!(back[0].mean_nsfw_val, rows[0].mean_nsfw_val);
    }
}
