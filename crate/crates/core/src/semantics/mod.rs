//! 2-D semantic coordinates for class labels.
//!
//! Precomputed projections (e.g. a released UMAP of word vectors) are taken
//! as-is. Raw vectors fall back to a PCA projection onto the top two axes.

mod pca;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{fmt_f64, CsvWriter, EmbeddingKind, IngestError, LabelEmbedding};
use crate::nsfw::ClassNsfwStats;

pub use pca::{principal_components, Projection};

#[derive(Debug, Error, PartialEq)]
pub enum SemanticsError {
    #[error("need at least {needed} embeddings, got {found}")]
    InsufficientPoints { needed: usize, found: usize },
    #[error("embeddings have zero covariance")]
    DegenerateCovariance,
    #[error("embedding for {wordnet_id} has {found} dimensions, expected {expected}")]
    DimensionMismatch {
        wordnet_id: String,
        expected: usize,
        found: usize,
    },
    #[error("class {0} has more than one embedding")]
    DuplicateClass(String),
    #[error("no embeddings supplied")]
    NoEmbeddings,
    #[error("coordinates and statistics are keyed over different classes: missing {missing:?}, unexpected {unexpected:?}")]
    KeyMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordSource {
    Precomputed,
    Pca,
}

impl CoordSource {
    pub fn as_str(self) -> &'static str {
        match self {
            CoordSource::Precomputed => "precomputed",
            CoordSource::Pca => "pca",
        }
    }
}

impl fmt::Display for CoordSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoordSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "precomputed" => Ok(CoordSource::Precomputed),
            "pca" => Ok(CoordSource::Pca),
            other => Err(format!("unknown coordinate source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticCoord {
    pub wordnet_id: String,
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub source: CoordSource,
}

/// PCA coordinates plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub coords: Vec<SemanticCoord>,
    pub variances: [f64; 2],
    /// True when the inputs span fewer than two axes; the missing
    /// coordinate is then 0 for every class.
    pub degenerate: bool,
}

/// Projects raw label vectors onto their top two principal axes. Output
/// follows input order.
pub fn pca_project(embeddings: &[LabelEmbedding]) -> Result<PcaProjection, SemanticsError> {
    const DIMS: usize = 2;
    if embeddings.len() < DIMS + 1 {
        return Err(SemanticsError::InsufficientPoints {
            needed: DIMS + 1,
            found: embeddings.len(),
        });
    }
    let width = embeddings[0].vector.len();
    let mut seen = BTreeSet::new();
    for e in embeddings {
        if e.vector.len() != width {
            return Err(SemanticsError::DimensionMismatch {
                wordnet_id: e.wordnet_id.clone(),
                expected: width,
                found: e.vector.len(),
            });
        }
        if !seen.insert(e.wordnet_id.as_str()) {
            return Err(SemanticsError::DuplicateClass(e.wordnet_id.clone()));
        }
    }
    let data: Vec<Vec<f64>> = embeddings.iter().map(|e| e.vector.clone()).collect();
    let p = principal_components(&data, DIMS);
    if p.rank == 0 {
        return Err(SemanticsError::DegenerateCovariance);
    }
    let coords = embeddings
        .iter()
        .zip(&p.scores)
        .map(|(e, s)| SemanticCoord {
            wordnet_id: e.wordnet_id.clone(),
            label: e.label.clone(),
            x: s[0],
            y: s[1],
            source: CoordSource::Pca,
        })
        .collect();
    Ok(PcaProjection {
        coords,
        variances: [p.variances[0], p.variances[1]],
        degenerate: p.is_degenerate(),
    })
}

/// Coordinates for every class, sorted by `wordnet_id`. Any precomputed
/// projection wins over raw vectors; PCA runs only when none is given.
pub fn resolve_coords(embeddings: &[LabelEmbedding]) -> Result<Vec<SemanticCoord>, SemanticsError> {
    let projected: Vec<&LabelEmbedding> = embeddings
        .iter()
        .filter(|e| e.kind == EmbeddingKind::Projected)
        .collect();
    let mut coords = if !projected.is_empty() {
        let mut seen = BTreeSet::new();
        projected
            .into_iter()
            .map(|e| {
                if !seen.insert(e.wordnet_id.as_str()) {
                    return Err(SemanticsError::DuplicateClass(e.wordnet_id.clone()));
                }
                Ok(SemanticCoord {
                    wordnet_id: e.wordnet_id.clone(),
                    label: e.label.clone(),
                    x: e.vector[0],
                    y: e.vector[1],
                    source: CoordSource::Precomputed,
                })
            })
            .collect::<Result<Vec<_>, _>>()?
    } else if !embeddings.is_empty() {
        pca_project(embeddings)?.coords
    } else {
        return Err(SemanticsError::NoEmbeddings);
    };
    coords.sort_by(|a, b| a.wordnet_id.cmp(&b.wordnet_id));
    Ok(coords)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub wordnet_id: String,
    pub x: f64,
    pub y: f64,
    pub mean_nsfw_train: f64,
}

/// Joins coordinates with class content means, sorted by `wordnet_id`.
pub fn semantic_surface(
    coords: &[SemanticCoord],
    nsfw: &[ClassNsfwStats],
) -> Result<Vec<SurfacePoint>, SemanticsError> {
    let by_class: BTreeMap<&str, &SemanticCoord> =
        coords.iter().map(|c| (c.wordnet_id.as_str(), c)).collect();
    let stats: BTreeMap<&str, &ClassNsfwStats> =
        nsfw.iter().map(|s| (s.wordnet_id.as_str(), s)).collect();
    let missing: Vec<String> = stats
        .keys()
        .filter(|k| !by_class.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    let unexpected: Vec<String> = by_class
        .keys()
        .filter(|k| !stats.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(SemanticsError::KeyMismatch {
            missing,
            unexpected,
        });
    }
    Ok(by_class
        .into_iter()
        .map(|(id, c)| SurfacePoint {
            wordnet_id: id.to_string(),
            x: c.x,
            y: c.y,
            mean_nsfw_train: stats[id].mean_nsfw_train,
        })
        .collect())
}

/// `wordnet_id,label,umap_x,umap_y,source`.
pub fn write_semantic_coords<W: Write>(out: W, coords: &[SemanticCoord]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(["wordnet_id", "label", "umap_x", "umap_y", "source"])?;
    for c in coords {
        w.row([
            c.wordnet_id.clone(),
            c.label.clone(),
            fmt_f64(c.x),
            fmt_f64(c.y),
            c.source.to_string(),
        ])?;
    }
    w.finish()?;
    Ok(())
}

/// `wordnet_id,x,y,mean_nsfw_train`.
pub fn write_surface<W: Write>(out: W, points: &[SurfacePoint]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(["wordnet_id", "x", "y", "mean_nsfw_train"])?;
    for p in points {
        w.row([
            p.wordnet_id.clone(),
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(p.mean_nsfw_train),
        ])?;
    }
    w.finish()?;
    Ok(())
}
