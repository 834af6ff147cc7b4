//! Class-level count/age/gender census.
//!
//! For class `c` with `N_c` images, let `phi_i` mark images with at least
//! one detected face, and `g_i`, `a_i` be the mean gender score and mean age
//! over the faces of image `i`. Then
//!
//! - `eta = (1/N_c) * sum phi_i`
//! - `alpha_paper = (1/N_c) * sum phi_i * a_i`
//! - `alpha_facewise = sum phi_i * a_i / sum phi_i`
//! - `xi = (1/N_c) * sum phi_i * ((g_i - mu) / sigma)^3`
//!
//! with `mu`, `sigma` the mean and population standard deviation of `g_i`
//! over face-present images.

mod table;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{fmt_f64, ClassSize, CsvWriter, FaceAnnotation, FaceModel, ImageKey, IngestError, Split};
use crate::stats::{self, StatsError};

pub use table::{assemble_census_table, Cell, CensusInputs, CensusTable, Column};

/// Gender score at or above which a face is counted as a man.
pub const DEFAULT_GENDER_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CensusError {
    #[error("face annotation refers to class {0} which is not in the class manifest")]
    UnknownClass(String),
    #[error("class {wordnet_id} has zero {split} images")]
    ZeroClassSize { wordnet_id: String, split: Split },
    #[error("class {wordnet_id}: {face_images} face-bearing images exceed class size {n_images}")]
    FaceImagesExceedClassSize {
        wordnet_id: String,
        face_images: u64,
        n_images: u64,
    },
    #[error("class sets differ: only in first {only_left:?}, only in second {only_right:?}")]
    ClassSetMismatch {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },
    #[error("inputs are keyed over different classes: missing {missing:?}, unexpected {unexpected:?} ({input})")]
    KeyMismatch {
        input: String,
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("census rows and face annotations disagree for {model}/{split}: {rows} persons in rows, {faces} in faces")]
    BatchMismatch {
        model: FaceModel,
        split: Split,
        rows: u64,
        faces: u64,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensusConfig {
    pub gender_threshold: f64,
}

impl Default for CensusConfig {
    fn default() -> Self {
        Self {
            gender_threshold: DEFAULT_GENDER_THRESHOLD,
        }
    }
}

impl CensusConfig {
    pub fn is_man(&self, gender_score: f64) -> bool {
        gender_score >= self.gender_threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCensusRow {
    pub wordnet_id: String,
    pub model: FaceModel,
    pub split: Split,
    /// `N_c`.
    pub n_images: u64,
    pub n_face_images: u64,
    pub n_persons: u64,
    pub eta: f64,
    pub alpha_paper: f64,
    pub alpha_facewise: f64,
    /// Absent when the class has no face-bearing image.
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub xi: f64,
    pub n_women: u64,
    pub n_men: u64,
    pub mean_age_women: Option<f64>,
    pub mean_age_men: Option<f64>,
}

/// Computes one census row per class of `class_sizes`, using only the
/// faces tagged with `model` in `split`. Rows come back sorted by
/// `wordnet_id`; the result does not depend on the order of `faces`.
pub fn compute_class_census(
    faces: &[FaceAnnotation],
    class_sizes: &[ClassSize],
    model: FaceModel,
    split: Split,
    config: &CensusConfig,
) -> Result<Vec<ClassCensusRow>, CensusError> {
    let sizes: BTreeMap<&str, u64> = class_sizes
        .iter()
        .map(|c| (c.wordnet_id.as_str(), c.for_split(split)))
        .collect();
    let mut by_class: BTreeMap<&str, Vec<&FaceAnnotation>> =
        sizes.keys().map(|k| (*k, Vec::new())).collect();
    for f in faces
        .iter()
        .filter(|f| f.model == model && f.image.split == split)
    {
        match by_class.get_mut(f.image.wordnet_id.as_str()) {
            Some(v) => v.push(f),
            None => return Err(CensusError::UnknownClass(f.image.wordnet_id.clone())),
        }
    }
    by_class
        .into_par_iter()
        .map(|(wordnet_id, class_faces)| {
            class_row(wordnet_id, sizes[wordnet_id], class_faces, model, split, config)
        })
        .collect()
}

fn class_row(
    wordnet_id: &str,
    n_images: u64,
    mut faces: Vec<&FaceAnnotation>,
    model: FaceModel,
    split: Split,
    config: &CensusConfig,
) -> Result<ClassCensusRow, CensusError> {
    if n_images == 0 {
        return Err(CensusError::ZeroClassSize {
            wordnet_id: wordnet_id.to_string(),
            split,
        });
    }
    faces.sort_by(|a, b| {
        a.image
            .cmp(&b.image)
            .then(a.face_index.cmp(&b.face_index))
    });

    let mut genders = Vec::new();
    let mut ages = Vec::new();
    for image in faces.chunk_by(|a, b| a.image == b.image) {
        let g: Vec<f64> = image.iter().map(|f| f.gender_score).collect();
        let a: Vec<f64> = image.iter().map(|f| f.age_years).collect();
        genders.push(stats::mean(&g)?);
        ages.push(stats::mean(&a)?);
    }
    let n_face_images = genders.len() as u64;
    if n_face_images > n_images {
        return Err(CensusError::FaceImagesExceedClassSize {
            wordnet_id: wordnet_id.to_string(),
            face_images: n_face_images,
            n_images,
        });
    }

    let age_sum = stats::sum(ages.iter().copied());
    let (mu, sigma, xi, alpha_facewise) = if genders.is_empty() {
        (None, None, 0.0, 0.0)
    } else {
        (
            Some(stats::mean(&genders)?),
            Some(stats::population_std(&genders)?),
            stats::skewness(&genders, n_images as usize)?,
            age_sum / n_face_images as f64,
        )
    };

    let (women, men): (Vec<&FaceAnnotation>, Vec<&FaceAnnotation>) =
        faces.iter().partition(|f| !config.is_man(f.gender_score));
    let mean_age = |group: &[&FaceAnnotation]| -> Option<f64> {
        let v: Vec<f64> = group.iter().map(|f| f.age_years).collect();
        stats::mean(&v).ok()
    };

    Ok(ClassCensusRow {
        wordnet_id: wordnet_id.to_string(),
        model,
        split,
        n_images,
        n_face_images,
        n_persons: faces.len() as u64,
        eta: n_face_images as f64 / n_images as f64,
        alpha_paper: age_sum / n_images as f64,
        alpha_facewise,
        mu,
        sigma,
        xi,
        n_women: women.len() as u64,
        n_men: men.len() as u64,
        mean_age_women: mean_age(&women),
        mean_age_men: mean_age(&men),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Overall,
    Women,
    Men,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::Overall, Cohort::Women, Cohort::Men];

    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Overall => "overall",
            Cohort::Women => "women",
            Cohort::Men => "men",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Cohort::Overall => 'O',
            Cohort::Women => 'W',
            Cohort::Men => 'M',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub model: FaceModel,
    pub split: Split,
    pub cohort: Cohort,
    /// Images with at least one face of this cohort (`n`).
    pub n_images_with_faces: u64,
    /// Faces of this cohort (`N`).
    pub n_persons: u64,
    pub mean_age: Option<f64>,
}

impl SummaryCell {
    fn model_tag(&self) -> &'static str {
        match self.model {
            FaceModel::Dex => "dex",
            FaceModel::InsightFace => "if",
        }
    }

    /// `n_{split}-{cohort}^({model})`.
    pub fn image_key(&self) -> String {
        format!("n_{}-{}^({})", self.split, self.cohort.letter(), self.model_tag())
    }

    /// `N_{split}-{cohort}^({model})`.
    pub fn person_key(&self) -> String {
        format!("N_{}-{}^({})", self.split, self.cohort.letter(), self.model_tag())
    }
}

/// Dataset-level person counts per model, split and cohort, plus
/// split-pooled mean ages per model and cohort.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SummaryCounts {
    pub cells: Vec<SummaryCell>,
    pub pooled_mean_age: Vec<PooledAge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledAge {
    pub model: FaceModel,
    pub cohort: Cohort,
    pub n_persons: u64,
    pub mean_age: Option<f64>,
}

impl SummaryCounts {
    pub fn get(&self, model: FaceModel, split: Split, cohort: Cohort) -> Option<&SummaryCell> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.split == split && c.cohort == cohort)
    }

    pub fn persons(&self, model: FaceModel, split: Split, cohort: Cohort) -> u64 {
        self.get(model, split, cohort).map_or(0, |c| c.n_persons)
    }

    pub fn images(&self, model: FaceModel, split: Split, cohort: Cohort) -> u64 {
        self.get(model, split, cohort)
            .map_or(0, |c| c.n_images_with_faces)
    }

    pub fn pooled_age(&self, model: FaceModel, cohort: Cohort) -> Option<f64> {
        self.pooled_mean_age
            .iter()
            .find(|p| p.model == model && p.cohort == cohort)
            .and_then(|p| p.mean_age)
    }

    /// Persons over both splits for `model`.
    pub fn total_persons(&self, model: FaceModel) -> u64 {
        Split::ALL
            .iter()
            .map(|s| self.persons(model, *s, Cohort::Overall))
            .sum()
    }

    pub fn total_face_images(&self, model: FaceModel) -> u64 {
        Split::ALL
            .iter()
            .map(|s| self.images(model, *s, Cohort::Overall))
            .sum()
    }

    pub fn models(&self) -> Vec<FaceModel> {
        let set: BTreeSet<FaceModel> = self.cells.iter().map(|c| c.model).collect();
        set.into_iter().collect()
    }
}

/// Aggregates the per-class rows and their faces into dataset-level counts.
///
/// Only `(model, split)` pairs and classes present in `rows` contribute;
/// the person totals of `rows` must match the faces, which catches inputs
/// drawn from different batches.
pub fn summarize_dataset(
    rows: &[ClassCensusRow],
    faces: &[FaceAnnotation],
    config: &CensusConfig,
) -> Result<SummaryCounts, CensusError> {
    let mut scopes: BTreeMap<(FaceModel, Split), (BTreeSet<&str>, u64)> = BTreeMap::new();
    for r in rows {
        let entry = scopes.entry((r.model, r.split)).or_default();
        entry.0.insert(r.wordnet_id.as_str());
        entry.1 += r.n_persons;
    }

    #[derive(Default)]
    struct Acc<'a> {
        images: BTreeSet<&'a ImageKey>,
        ages: Vec<f64>,
    }
    let mut acc: BTreeMap<(FaceModel, Split, Cohort), Acc> = BTreeMap::new();
    let mut sorted: Vec<&FaceAnnotation> = faces
        .iter()
        .filter(|f| {
            scopes
                .get(&(f.model, f.image.split))
                .is_some_and(|(classes, _)| classes.contains(f.image.wordnet_id.as_str()))
        })
        .collect();
    sorted.sort_by(|a, b| {
        (a.model, &a.image, a.face_index).cmp(&(b.model, &b.image, b.face_index))
    });
    for f in sorted {
        let cohort = if config.is_man(f.gender_score) {
            Cohort::Men
        } else {
            Cohort::Women
        };
        for c in [Cohort::Overall, cohort] {
            let a = acc.entry((f.model, f.image.split, c)).or_default();
            a.images.insert(&f.image);
            a.ages.push(f.age_years);
        }
    }

    let mut cells = Vec::new();
    for (&(model, split), (_, row_persons)) in &scopes {
        for cohort in Cohort::ALL {
            let (n_images_with_faces, n_persons, mean_age) = match acc.get(&(model, split, cohort)) {
                Some(a) => (
                    a.images.len() as u64,
                    a.ages.len() as u64,
                    stats::mean(&a.ages).ok(),
                ),
                None => (0, 0, None),
            };
            if cohort == Cohort::Overall && n_persons != *row_persons {
                return Err(CensusError::BatchMismatch {
                    model,
                    split,
                    rows: *row_persons,
                    faces: n_persons,
                });
            }
            cells.push(SummaryCell {
                model,
                split,
                cohort,
                n_images_with_faces,
                n_persons,
                mean_age,
            });
        }
    }

    let models: BTreeSet<FaceModel> = scopes.keys().map(|(m, _)| *m).collect();
    let mut pooled_mean_age = Vec::new();
    for model in models {
        for cohort in Cohort::ALL {
            let ages: Vec<f64> = acc
                .iter()
                .filter(|((m, _, c), _)| *m == model && *c == cohort)
                .flat_map(|(_, a)| a.ages.iter().copied())
                .collect();
            pooled_mean_age.push(PooledAge {
                model,
                cohort,
                n_persons: ages.len() as u64,
                mean_age: stats::mean(&ages).ok(),
            });
        }
    }
    Ok(SummaryCounts {
        cells,
        pooled_mean_age,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossModelReport {
    pub r_eta: f64,
    pub r_xi: f64,
    pub r_alpha: f64,
    pub n_classes: usize,
}

/// Pearson agreement of the two models' per-class `eta`, `xi` and
/// face-wise `alpha`, aligned by `wordnet_id`.
pub fn compare_models(
    rows_dex: &[ClassCensusRow],
    rows_if: &[ClassCensusRow],
) -> Result<CrossModelReport, CensusError> {
    let left: BTreeMap<&str, &ClassCensusRow> =
        rows_dex.iter().map(|r| (r.wordnet_id.as_str(), r)).collect();
    let right: BTreeMap<&str, &ClassCensusRow> =
        rows_if.iter().map(|r| (r.wordnet_id.as_str(), r)).collect();
    let only_left: Vec<String> = left
        .keys()
        .filter(|k| !right.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    let only_right: Vec<String> = right
        .keys()
        .filter(|k| !left.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    if !only_left.is_empty() || !only_right.is_empty() {
        return Err(CensusError::ClassSetMismatch {
            only_left,
            only_right,
        });
    }
    let pairs: Vec<(&ClassCensusRow, &ClassCensusRow)> =
        left.iter().map(|(k, l)| (*l, right[k])).collect();
    let column = |f: fn(&ClassCensusRow) -> f64| -> (Vec<f64>, Vec<f64>) {
        pairs.iter().map(|(l, r)| (f(l), f(r))).unzip()
    };
    let (ex, ey) = column(|r| r.eta);
    let (xx, xy) = column(|r| r.xi);
    let (ax, ay) = column(|r| r.alpha_facewise);
    Ok(CrossModelReport {
        r_eta: stats::pearson(&ex, &ey)?,
        r_xi: stats::pearson(&xx, &xy)?,
        r_alpha: stats::pearson(&ax, &ay)?,
        n_classes: pairs.len(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub const CLASS_ROW_HEADER: [&str; 17] = [
    "wordnet_id",
    "model",
    "split",
    "n_images",
    "n_face_images",
    "n_persons",
    "eta",
    "alpha_paper",
    "alpha_facewise",
    "mu",
    "sigma",
    "xi",
    "n_women",
    "n_men",
    "mean_age_women",
    "mean_age_men",
    "gender_threshold",
];

/// Per-model stats file (`df_<model>_stats.csv`): one row per class and
/// split, in the order given.
pub fn write_class_rows<W: Write>(
    out: W,
    rows: &[ClassCensusRow],
    config: &CensusConfig,
) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(CLASS_ROW_HEADER)?;
    for r in rows {
        w.row([
            r.wordnet_id.clone(),
            r.model.to_string(),
            r.split.to_string(),
            r.n_images.to_string(),
            r.n_face_images.to_string(),
            r.n_persons.to_string(),
            fmt_f64(r.eta),
            fmt_f64(r.alpha_paper),
            fmt_f64(r.alpha_facewise),
            opt(r.mu),
            opt(r.sigma),
            fmt_f64(r.xi),
            r.n_women.to_string(),
            r.n_men.to_string(),
            opt(r.mean_age_women),
            opt(r.mean_age_men),
            fmt_f64(config.gender_threshold),
        ])?;
    }
    w.finish()?;
    Ok(())
}

/// `census_summary.csv`: the per-(model, split, cohort) cells followed by
/// split-pooled rows (split column `all`, no image count).
pub fn write_summary<W: Write>(out: W, summary: &SummaryCounts) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(["model", "split", "cohort", "image_key", "n_images_with_faces", "person_key", "n_persons", "mean_age"])?;
    for c in &summary.cells {
        w.row([
            c.model.to_string(),
            c.split.to_string(),
            c.cohort.as_str().to_string(),
            c.image_key(),
            c.n_images_with_faces.to_string(),
            c.person_key(),
            c.n_persons.to_string(),
            opt(c.mean_age),
        ])?;
    }
    for p in &summary.pooled_mean_age {
        w.row([
            p.model.to_string(),
            "all".to_string(),
            p.cohort.as_str().to_string(),
            String::new(),
            String::new(),
            String::new(),
            p.n_persons.to_string(),
            opt(p.mean_age),
        ])?;
    }
    w.finish()?;
    Ok(())
}

/// `cross_model.csv`: one row per compared metric.
pub fn write_cross_model<W: Write>(out: W, report: &CrossModelReport) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(["metric", "pearson_r", "n_classes"])?;
    for (name, r) in [("eta", report.r_eta), ("xi", report.r_xi), ("alpha_facewise", report.r_alpha)] {
        w.row([name.to_string(), fmt_f64(r), report.n_classes.to_string()])?;
    }
    w.finish()?;
    Ok(())
}
