//! Class-wise top-k accuracy, the human-delta ranking and the
//! human-delta accuracy test.
//!
//! The human-delta of a class is `persons_train / persons_val`. Classes
//! with persons only in train rank above every finite ratio (ordered by
//! `persons_train`), and classes without persons in either split rank last.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::census::ClassCensusRow;
use crate::ingest::{fmt_f64, CsvWriter, IngestError, PredModel, PredictionRecord, Split};
use crate::stats::{self, StatsError, WelchResult};

#[derive(Debug, Error, PartialEq)]
pub enum AccuracyError {
    #[error("no predictions for class {wordnet_id} ({model}/{split})")]
    EmptyGroup {
        wordnet_id: String,
        model: PredModel,
        split: Split,
    },
    #[error("ranking and accuracies cover different classes: unranked {unranked:?}, without accuracy {unscored:?}")]
    RankingMismatch {
        unranked: Vec<String>,
        unscored: Vec<String>,
    },
    #[error("top_n = {top_n} leaves no comparison group among {classes} classes")]
    TopNTooLarge { top_n: usize, classes: usize },
    #[error("accuracies mix several model/split groups")]
    MixedGroups,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub wordnet_id: String,
    pub model: PredModel,
    pub split: Split,
    pub n_images: u64,
    pub n_top1: u64,
    pub n_top5: u64,
    pub top1_acc: f64,
    pub top5_acc: f64,
}

/// Fraction of `records` whose true class is among the first `k` guesses.
pub fn topk_fraction(records: &[&PredictionRecord], k: usize) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let hits = records
        .iter()
        .filter(|r| r.rank_of_truth().is_some_and(|rank| rank <= k))
        .count();
    Some(hits as f64 / records.len() as f64)
}

/// Accuracy per (model, split, true class), sorted in that order. When
/// `manifest` is non-empty every listed class must have predictions in
/// every (model, split) group that occurs.
pub fn class_accuracy(
    predictions: &[PredictionRecord],
    manifest: &[String],
) -> Result<Vec<ClassAccuracy>, AccuracyError> {
    let mut groups: BTreeMap<(PredModel, Split, &str), [u64; 3]> = BTreeMap::new();
    for p in predictions {
        let counts = groups
            .entry((p.model, p.image.split, p.image.wordnet_id.as_str()))
            .or_default();
        let rank = p.rank_of_truth();
        counts[0] += 1;
        counts[1] += u64::from(rank == Some(1));
        counts[2] += u64::from(rank.is_some());
    }
    let scopes: BTreeSet<(PredModel, Split)> = groups.keys().map(|(m, s, _)| (*m, *s)).collect();
    for (model, split) in &scopes {
        for c in manifest {
            if !groups.contains_key(&(*model, *split, c.as_str())) {
                return Err(AccuracyError::EmptyGroup {
                    wordnet_id: c.clone(),
                    model: *model,
                    split: *split,
                });
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|((model, split, id), [n, top1, top5])| ClassAccuracy {
            wordnet_id: id.to_string(),
            model,
            split,
            n_images: n,
            n_top1: top1,
            n_top5: top5,
            top1_acc: top1 as f64 / n as f64,
            top5_acc: top5 as f64 / n as f64,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum DeltaRatio {
    Finite(f64),
    /// Persons in train, none in val.
    Infinite,
    /// No persons in either split.
    Undefined,
}

impl DeltaRatio {
    pub fn new(train: u64, val: u64) -> Self {
        match (train, val) {
            (0, 0) => DeltaRatio::Undefined,
            (_, 0) => DeltaRatio::Infinite,
            (t, v) => DeltaRatio::Finite(t as f64 / v as f64),
        }
    }

    fn tier(self) -> u8 {
        match self {
            DeltaRatio::Infinite => 0,
            DeltaRatio::Finite(_) => 1,
            DeltaRatio::Undefined => 2,
        }
    }
}

impl fmt::Display for DeltaRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaRatio::Finite(r) => f.write_str(&fmt_f64(*r)),
            DeltaRatio::Infinite => f.write_str("inf"),
            DeltaRatio::Undefined => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanDeltaRow {
    pub wordnet_id: String,
    pub persons_train: u64,
    pub persons_val: u64,
    pub ratio: DeltaRatio,
}

fn delta_order(a: &HumanDeltaRow, b: &HumanDeltaRow) -> Ordering {
    a.ratio
        .tier()
        .cmp(&b.ratio.tier())
        .then_with(|| match (a.ratio, b.ratio) {
            (DeltaRatio::Finite(x), DeltaRatio::Finite(y)) => y.total_cmp(&x),
            (DeltaRatio::Infinite, DeltaRatio::Infinite) => b.persons_train.cmp(&a.persons_train),
            _ => Ordering::Equal,
        })
        .then_with(|| a.wordnet_id.cmp(&b.wordnet_id))
}

/// Ranks classes by descending human-delta. A class missing from one
/// split's rows counts as having zero persons there.
pub fn human_delta_ranking(train: &[ClassCensusRow], val: &[ClassCensusRow]) -> Vec<HumanDeltaRow> {
    let mut persons: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in train {
        persons.entry(&r.wordnet_id).or_default().0 += r.n_persons;
    }
    for r in val {
        persons.entry(&r.wordnet_id).or_default().1 += r.n_persons;
    }
    let mut rows: Vec<HumanDeltaRow> = persons
        .into_iter()
        .map(|(id, (t, v))| HumanDeltaRow {
            wordnet_id: id.to_string(),
            persons_train: t,
            persons_val: v,
            ratio: DeltaRatio::new(t, v),
        })
        .collect();
    rows.sort_by(delta_order);
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanDeltaTest {
    pub model: PredModel,
    pub split: Split,
    pub top_n: usize,
    /// `mean1` is the top-n group, `mean2` the remaining classes.
    pub welch: WelchResult,
}

/// Welch t of the top-`top_n` human-delta classes' top-5 accuracies against
/// the remaining classes'. `accuracies` must hold one model/split group.
pub fn human_delta_ttest(
    accuracies: &[ClassAccuracy],
    ranking: &[HumanDeltaRow],
    top_n: usize,
) -> Result<HumanDeltaTest, AccuracyError> {
    let first = accuracies.first().ok_or(StatsError::EmptyInput)?;
    if accuracies
        .iter()
        .any(|a| a.model != first.model || a.split != first.split)
    {
        return Err(AccuracyError::MixedGroups);
    }
    let acc: BTreeMap<&str, f64> = accuracies
        .iter()
        .map(|a| (a.wordnet_id.as_str(), a.top5_acc))
        .collect();
    let ranked: BTreeSet<&str> = ranking.iter().map(|r| r.wordnet_id.as_str()).collect();
    let unranked: Vec<String> = acc
        .keys()
        .filter(|k| !ranked.contains(*k))
        .map(|k| k.to_string())
        .collect();
    let unscored: Vec<String> = ranked
        .iter()
        .filter(|k| !acc.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    if !unranked.is_empty() || !unscored.is_empty() {
        return Err(AccuracyError::RankingMismatch { unranked, unscored });
    }
    if top_n == 0 || top_n >= ranking.len() {
        return Err(AccuracyError::TopNTooLarge {
            top_n,
            classes: ranking.len(),
        });
    }
    let scores: Vec<f64> = ranking.iter().map(|r| acc[r.wordnet_id.as_str()]).collect();
    let (top, rest) = scores.split_at(top_n);
    Ok(HumanDeltaTest {
        model: first.model,
        split: first.split,
        top_n,
        welch: stats::welch_t(top, rest)?,
    })
}

/// `df_acc_classwise_<model>.csv`.
pub fn write_classwise<W: Write>(out: W, rows: &[ClassAccuracy]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row([
        "wordnet_id",
        "split",
        "n_images",
        "n_top1",
        "n_top5",
        "top1_acc",
        "top5_acc",
    ])?;
    for r in rows {
        w.row([
            r.wordnet_id.clone(),
            r.split.to_string(),
            r.n_images.to_string(),
            r.n_top1.to_string(),
            r.n_top5.to_string(),
            fmt_f64(r.top1_acc),
            fmt_f64(r.top5_acc),
        ])?;
    }
    w.finish()?;
    Ok(())
}

/// `df_acc_imagewise_<model>.csv`: per-image rank of the true class (empty
/// when outside the top 5) and correctness flags, sorted by image key.
pub fn write_imagewise<W: Write>(out: W, predictions: &[PredictionRecord]) -> Result<(), IngestError> {
    let mut sorted: Vec<&PredictionRecord> = predictions.iter().collect();
    sorted.sort_by(|a, b| a.image.cmp(&b.image));
    let mut w = CsvWriter::new(out);
    w.row(["wordnet_id", "split", "file_name", "rank", "top1_correct", "top5_correct"])?;
    for p in sorted {
        let rank = p.rank_of_truth();
        w.row([
            p.image.wordnet_id.clone(),
            p.image.split.to_string(),
            p.image.file_name.clone(),
            rank.map(|r| r.to_string()).unwrap_or_default(),
            u8::from(rank == Some(1)).to_string(),
            u8::from(rank.is_some()).to_string(),
        ])?;
    }
    w.finish()?;
    Ok(())
}

/// `human_delta.csv`: the ranking with 1-based positions.
pub fn write_human_delta<W: Write>(out: W, rows: &[HumanDeltaRow]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(["rank", "wordnet_id", "persons_train", "persons_val", "ratio"])?;
    for (i, r) in rows.iter().enumerate() {
        w.row([
            (i + 1).to_string(),
            r.wordnet_id.clone(),
            r.persons_train.to_string(),
            r.persons_val.to_string(),
            r.ratio.to_string(),
        ])?;
    }
    w.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{FaceModel, ImageKey};

    fn pred(class: &str, file: &str, rank: Option<usize>) -> PredictionRecord {
        let mut top5: [String; 5] = std::array::from_fn(|i| format!("n9999999{i}"));
        if let Some(r) = rank {
            top5[r - 1] = class.to_string();
        }
        PredictionRecord {
            image: ImageKey::new(class, Split::Val, file),
            model: PredModel::Resnet50,
            top5,
        }
    }

    #[test]
    fn topk_counts() {
        let p = [
            pred("n00000001", "a", Some(1)),
            pred("n00000001", "b", Some(3)),
            pred("n00000001", "c", None),
        ];
        let acc = class_accuracy(&p, &[]).unwrap();
        assert_eq!(acc.len(), 1);
        assert_eq!(acc[0].top1_acc, 1.0 / 3.0);
        assert_eq!(acc[0].top5_acc, 2.0 / 3.0);

        let refs: Vec<&PredictionRecord> = p.iter().collect();
        assert_eq!(topk_fraction(&refs, 1), Some(1.0 / 3.0));
        assert_eq!(topk_fraction(&refs[1..2], 5), Some(1.0));
        assert_eq!(topk_fraction(&[], 5), None);
    }

    #[test]
    fn all_correct() {
        let p = [pred("n00000001", "a", Some(1)), pred("n00000001", "b", Some(1))];
        let acc = class_accuracy(&p, &[]).unwrap();
        assert_eq!((acc[0].top1_acc, acc[0].top5_acc), (1.0, 1.0));
    }

    #[test]
    fn manifest_class_without_predictions() {
        let p = [pred("n00000001", "a", Some(1))];
        let err = class_accuracy(&p, &["n00000001".into(), "n00000002".into()]).unwrap_err();
        assert!(matches!(err, AccuracyError::EmptyGroup { wordnet_id, .. } if wordnet_id == "n00000002"));
    }

    fn census(id: &str, split: Split, persons: u64) -> ClassCensusRow {
        ClassCensusRow {
            wordnet_id: id.into(),
            model: FaceModel::InsightFace,
            split,
            n_images: 10,
            n_face_images: persons.min(10),
            n_persons: persons,
            eta: 0.0,
            alpha_paper: 0.0,
            alpha_facewise: 0.0,
            mu: None,
            sigma: None,
            xi: 0.0,
            n_women: 0,
            n_men: persons,
            mean_age_women: None,
            mean_age_men: None,
        }
    }

    #[test]
    fn ranking_rules() {
        let train = [
            census("n00000001", Split::Train, 10),
            census("n00000002", Split::Train, 7),
            census("n00000003", Split::Train, 100),
            census("n00000004", Split::Train, 0),
            census("n00000005", Split::Train, 9),
        ];
        let val = [
            census("n00000001", Split::Val, 2),
            census("n00000002", Split::Val, 0),
            census("n00000003", Split::Val, 1),
            census("n00000004", Split::Val, 0),
            census("n00000005", Split::Val, 0),
        ];
        let r = human_delta_ranking(&train, &val);
        let order: Vec<&str> = r.iter().map(|r| r.wordnet_id.as_str()).collect();
        assert_eq!(order, ["n00000005", "n00000002", "n00000003", "n00000001", "n00000004"]);
        assert_eq!(r[3].ratio, DeltaRatio::Finite(5.0));
        assert_eq!(r[4].ratio, DeltaRatio::Undefined);

        let mut resorted = r.clone();
        resorted.sort_by(delta_order);
        assert_eq!(resorted, r);
    }

    fn acc(id: &str, top5: f64) -> ClassAccuracy {
        ClassAccuracy {
            wordnet_id: id.into(),
            model: PredModel::Resnet50,
            split: Split::Val,
            n_images: 50,
            n_top1: 0,
            n_top5: 0,
            top1_acc: 0.0,
            top5_acc: top5,
        }
    }

    fn row(id: &str, t: u64, v: u64) -> HumanDeltaRow {
        HumanDeltaRow {
            wordnet_id: id.into(),
            persons_train: t,
            persons_val: v,
            ratio: DeltaRatio::new(t, v),
        }
    }

    #[test]
    fn ttest_splits_ranking() {
        let ids: Vec<String> = (0..10).map(|i| format!("n0000000{i}")).collect();
        let ranking: Vec<HumanDeltaRow> = ids.iter().map(|id| row(id, 1, 1)).collect();
        let jitter = [0.001, -0.001, 0.002, -0.002, 0.0, 0.003, -0.003];
        let accs: Vec<ClassAccuracy> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| acc(id, if i < 3 { 0.8 + jitter[i] } else { 0.9 + jitter[i - 3] }))
            .collect();
        let t = human_delta_ttest(&accs, &ranking, 3).unwrap();
        let oracle = stats::welch_t(
            &accs[..3].iter().map(|a| a.top5_acc).collect::<Vec<_>>(),
            &accs[3..].iter().map(|a| a.top5_acc).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(t.welch, oracle);
        assert!(t.welch.t < -20.0);

        assert!(matches!(
            human_delta_ttest(&accs, &ranking, 10),
            Err(AccuracyError::TopNTooLarge { .. })
        ));
        assert!(matches!(
            human_delta_ttest(&accs, &ranking[..9], 3),
            Err(AccuracyError::RankingMismatch { .. })
        ));
    }

    #[test]
    fn ratio_display() {
        assert_eq!(DeltaRatio::new(10, 4).to_string(), "2.5");
        assert_eq!(DeltaRatio::new(3, 0).to_string(), "inf");
        assert_eq!(DeltaRatio::new(0, 0).to_string(), "");
    }
}
