use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use super::{CensusError, ClassCensusRow};
use crate::accuracy::{human_delta_ranking, ClassAccuracy};
use crate::ingest::{fmt_f64, ClassInfo, CsvWriter, FaceModel, IngestError, PredModel, Split};
use crate::nsfw::ClassNsfwStats;
use crate::semantics::SemanticCoord;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Null,
    Int(u64),
    Real(f64),
    Text(String),
}

impl Cell {
    fn real(v: Option<f64>) -> Self {
        v.map_or(Cell::Null, Cell::Real)
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Null => String::new(),
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => fmt_f64(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub interpretation: String,
}

/// Everything the wide table joins. Optional inputs produce null cells.
#[derive(Debug, Clone, Copy)]
pub struct CensusInputs<'a> {
    pub classes: &'a [ClassInfo],
    /// Rows for any mix of face models and splits.
    pub census: &'a [ClassCensusRow],
    pub nsfw: Option<&'a [ClassNsfwStats]>,
    pub accuracy: Option<&'a [ClassAccuracy]>,
    pub semantics: Option<&'a [SemanticCoord]>,
}

/// One row per manifest class, ordered by class index.
#[derive(Debug, Clone, PartialEq)]
pub struct CensusTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
}

impl CensusTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), IngestError> {
        let mut w = CsvWriter::new(out);
        w.row(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.row(row.iter().map(Cell::render))?;
        }
        w.finish()?;
        Ok(())
    }

    /// `column,interpretation`, one row per table column.
    pub fn write_sidecar<W: Write>(&self, out: W) -> Result<(), IngestError> {
        let mut w = CsvWriter::new(out);
        w.row(["column", "interpretation"])?;
        for c in &self.columns {
            w.row([c.name.as_str(), c.interpretation.as_str()])?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

type CensusField = (&'static str, &'static str, fn(&ClassCensusRow) -> Cell);

const CENSUS_FIELDS: [CensusField; 13] = [
    ("n_images", "images in the class (N_c)", |r| Cell::Int(r.n_images)),
    ("n_face_images", "images with at least one detected face", |r| Cell::Int(r.n_face_images)),
    ("n_persons", "detected faces", |r| Cell::Int(r.n_persons)),
    ("eta", "fraction of images with a face (eta)", |r| Cell::Real(r.eta)),
    ("alpha_paper", "summed per-image mean age divided by N_c", |r| Cell::Real(r.alpha_paper)),
    ("alpha_facewise", "mean of per-image mean ages over face-bearing images", |r| {
        Cell::Real(r.alpha_facewise)
    }),
    ("mu", "mean per-image gender score (0 female, 1 male)", |r| Cell::real(r.mu)),
    ("sigma", "population std of per-image gender scores", |r| Cell::real(r.sigma)),
    ("xi", "gender skewness normalized by N_c (xi)", |r| Cell::Real(r.xi)),
    ("n_women", "faces scored below the gender threshold", |r| Cell::Int(r.n_women)),
    ("n_men", "faces scored at or above the gender threshold", |r| Cell::Int(r.n_men)),
    ("mean_age_women", "mean age of faces counted as women", |r| Cell::real(r.mean_age_women)),
    ("mean_age_men", "mean age of faces counted as men", |r| Cell::real(r.mean_age_men)),
];

type AccuracyField = (&'static str, &'static str, fn(&ClassAccuracy) -> Cell);

const ACCURACY_FIELDS: [AccuracyField; 3] = [
    ("n_pred", "images with predictions", |a| Cell::Int(a.n_images)),
    ("top1_acc", "top-1 accuracy", |a| Cell::Real(a.top1_acc)),
    ("top5_acc", "top-5 accuracy", |a| Cell::Real(a.top5_acc)),
];

fn coverage<'a>(
    input: String,
    manifest: &BTreeSet<&str>,
    ids: impl Iterator<Item = &'a str>,
) -> Result<(), CensusError> {
    let ids: BTreeSet<&str> = ids.collect();
    if &ids == manifest {
        return Ok(());
    }
    Err(CensusError::KeyMismatch {
        input,
        missing: manifest.difference(&ids).map(|s| s.to_string()).collect(),
        unexpected: ids.difference(manifest).map(|s| s.to_string()).collect(),
    })
}

fn col(name: String, interpretation: String) -> Column {
    Column {
        name,
        interpretation,
    }
}

/// Joins census rows, content statistics, accuracies and semantic
/// coordinates into one row per class. Each supplied input (and each
/// model/split group within one) must cover exactly the class manifest.
pub fn assemble_census_table(inputs: &CensusInputs<'_>) -> Result<CensusTable, CensusError> {
    let manifest: BTreeSet<&str> = inputs.classes.iter().map(|c| c.wordnet_id.as_str()).collect();

    let mut census: BTreeMap<(FaceModel, Split), BTreeMap<&str, &ClassCensusRow>> = BTreeMap::new();
    for r in inputs.census {
        census
            .entry((r.model, r.split))
            .or_default()
            .insert(&r.wordnet_id, r);
    }
    for ((model, split), rows) in &census {
        coverage(format!("census {model}/{split}"), &manifest, rows.keys().copied())?;
    }
    let nsfw: Option<BTreeMap<&str, &ClassNsfwStats>> = inputs
        .nsfw
        .map(|s| s.iter().map(|r| (r.wordnet_id.as_str(), r)).collect());
    if let Some(n) = &nsfw {
        coverage("nsfw".into(), &manifest, n.keys().copied())?;
    }
    let mut accuracy: BTreeMap<(PredModel, Split), BTreeMap<&str, &ClassAccuracy>> = BTreeMap::new();
    for a in inputs.accuracy.unwrap_or_default() {
        accuracy
            .entry((a.model, a.split))
            .or_default()
            .insert(&a.wordnet_id, a);
    }
    for ((model, split), rows) in &accuracy {
        coverage(format!("accuracy {model}/{split}"), &manifest, rows.keys().copied())?;
    }
    let semantics: Option<BTreeMap<&str, &SemanticCoord>> = inputs
        .semantics
        .map(|s| s.iter().map(|c| (c.wordnet_id.as_str(), c)).collect());
    if let Some(s) = &semantics {
        coverage("semantics".into(), &manifest, s.keys().copied())?;
    }

    let mut columns = vec![
        col("wordnet_id".into(), "WordNet synset of the class".into()),
        col("class_index".into(), "0-based class index".into()),
        col("label".into(), "class label".into()),
    ];
    for model in FaceModel::ALL {
        for split in Split::ALL {
            for (name, what, _) in &CENSUS_FIELDS {
                columns.push(col(
                    format!("{name}_{model}_{split}"),
                    format!("{what}; {model} faces, {split} split"),
                ));
            }
        }
    }
    for (name, what) in [
        ("mean_nsfw_train", "mean content score of train images"),
        ("std_nsfw_train", "population std of train content scores"),
        ("mean_nsfw_val", "mean content score of val images"),
        ("std_nsfw_val", "population std of val content scores"),
    ] {
        columns.push(col(name.into(), what.into()));
    }
    for model in PredModel::ALL {
        for split in Split::ALL {
            for (name, what, _) in &ACCURACY_FIELDS {
                columns.push(col(
                    format!("{name}_{model}_{split}"),
                    format!("{what}; {model}, {split} split"),
                ));
            }
        }
    }
    columns.push(col("umap_x".into(), "first semantic coordinate of the label".into()));
    columns.push(col("umap_y".into(), "second semantic coordinate of the label".into()));
    columns.push(col(
        "semantic_source".into(),
        "origin of the semantic coordinates: precomputed or pca".into(),
    ));
    let mut deltas = Vec::new();
    for model in FaceModel::ALL {
        columns.push(col(
            format!("human_delta_{model}"),
            format!("train persons / val persons ({model} faces); inf when val has none"),
        ));
        let train = census.get(&(model, Split::Train));
        let val = census.get(&(model, Split::Val));
        let ratios: Option<BTreeMap<String, String>> = train.zip(val).map(|(t, v)| {
            let t: Vec<ClassCensusRow> = t.values().map(|r| (*r).clone()).collect();
            let v: Vec<ClassCensusRow> = v.values().map(|r| (*r).clone()).collect();
            human_delta_ranking(&t, &v)
                .into_iter()
                .map(|h| (h.wordnet_id, h.ratio.to_string()))
                .collect()
        });
        deltas.push(ratios);
    }

    let mut classes: Vec<&ClassInfo> = inputs.classes.iter().collect();
    classes.sort_by_key(|c| c.class_index);
    let rows = classes
        .into_iter()
        .map(|class| {
            let id = class.wordnet_id.as_str();
            let mut row = vec![
                Cell::Text(class.wordnet_id.clone()),
                Cell::Int(u64::from(class.class_index)),
                Cell::Text(class.label.clone()),
            ];
            for model in FaceModel::ALL {
                for split in Split::ALL {
                    let r = census.get(&(model, split)).map(|m| m[id]);
                    row.extend(
                        CENSUS_FIELDS
                            .iter()
                            .map(|(_, _, get)| r.map_or(Cell::Null, get)),
                    );
                }
            }
            let n = nsfw.as_ref().map(|m| m[id]);
            row.push(n.map_or(Cell::Null, |s| Cell::Real(s.mean_nsfw_train)));
            row.push(n.map_or(Cell::Null, |s| Cell::Real(s.std_nsfw_train)));
            row.push(Cell::real(n.and_then(|s| s.mean_nsfw_val)));
            row.push(Cell::real(n.and_then(|s| s.std_nsfw_val)));
            for model in PredModel::ALL {
                for split in Split::ALL {
                    let a = accuracy.get(&(model, split)).map(|m| m[id]);
                    row.extend(
                        ACCURACY_FIELDS
                            .iter()
                            .map(|(_, _, get)| a.map_or(Cell::Null, get)),
                    );
                }
            }
            let s = semantics.as_ref().map(|m| m[id]);
            row.push(s.map_or(Cell::Null, |c| Cell::Real(c.x)));
            row.push(s.map_or(Cell::Null, |c| Cell::Real(c.y)));
            row.push(s.map_or(Cell::Null, |c| Cell::Text(c.source.to_string())));
            for d in &deltas {
                row.push(match d.as_ref().map(|m| m[id].clone()) {
                    Some(r) if !r.is_empty() => Cell::Text(r),
                    _ => Cell::Null,
                });
            }
            row
        })
        .collect();

    Ok(CensusTable { columns, rows })
}
