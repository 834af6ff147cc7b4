//! Typed, validated CSV ingestion of the annotation and metadata files.
//!
//! Every parser is a streaming iterator over rows ([`RecordReader`]); the
//! `parse_*` helpers collect it under a [`ParseMode`]. Whole-file checks
//! (class index contiguity) run after collection. The `write_*` functions
//! emit the canonical encoding: same column order, floats in shortest
//! round-trip form, `\n` line endings.

mod records;
mod schema;
mod write;

use std::io::Read;

use thiserror::Error;

pub use records::{
    is_synset_id, ClassInfo, ClassSize, EmbeddingKind, FaceAnnotation, FaceModel, ImageKey, LabelEmbedding,
    NsfwAnnotation, NsfwClass, PredModel, PredictionRecord, Split, TaxonomyRecord,
};
pub use schema::{
    ClassIndexSchema, ClassSizeSchema, EmbeddingSchema, FaceSchema, NsfwSchema, PredictionSchema,
    RowSchema, VocabularySchema,
};
pub use write::{
    fmt_f64, write_class_index, write_class_sizes, write_embeddings, write_faces, write_nsfw,
    write_predictions, write_vocabulary, to_csv_string, CsvWriter,
};

/// Exact header lines of the input files.
pub mod headers {
    pub const FACES: &[&str] = &[
        "file_name",
        "wordnet_id",
        "split",
        "model",
        "face_index",
        "bbox_x",
        "bbox_y",
        "bbox_w",
        "bbox_h",
        "det_conf",
        "age_years",
        "gender_score",
    ];
    pub const NSFW: &[&str] = &[
        "file_name",
        "wordnet_id",
        "split",
        "p_drawings",
        "p_hentai",
        "p_neutral",
        "p_porn",
        "p_sexy",
    ];
    pub const PREDICTIONS: &[&str] = &[
        "file_name",
        "wordnet_id",
        "split",
        "model",
        "top1",
        "top2",
        "top3",
        "top4",
        "top5",
    ];
    pub const EMBEDDINGS_2D: &[&str] = &["wordnet_id", "label", "umap_x", "umap_y"];
    pub const CLASSES: &[&str] = &["class_index", "wordnet_id", "label"];
    pub const VOCABULARY: &[&str] = &["class_ind", "class_name", "n_images"];
    pub const CLASS_SIZES: &[&str] = &["wordnet_id", "n_train", "n_val"];
}

/// Maximum tolerated deviation of an NSFW softmax from unit sum.
pub const SOFTMAX_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: field `{field}` out of range")]
    RangeError { line: u64, field: &'static str },
    #[error("line {line}: unknown split")]
    UnknownSplit { line: u64 },
    #[error("line {line}: softmax sums to {sum}, expected 1 within 1e-3")]
    SoftmaxSumError { line: u64, sum: f64 },
    #[error("line {line}: duplicate key {key}")]
    DuplicateKey { line: u64, key: String },
    #[error("line {line}: row has {found} dimensions, file has {expected}")]
    DimensionalityMix {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("class_index is not contiguous from 0: missing {missing:?}")]
    NonContiguousIndex { missing: Vec<u32> },
    #[error("unexpected header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl IngestError {
    /// 1-based line of the offending row, when the error is row-scoped.
    pub fn line(&self) -> Option<u64> {
        match self {
            IngestError::MalformedRow { line, .. }
            | IngestError::RangeError { line, .. }
            | IngestError::UnknownSplit { line }
            | IngestError::SoftmaxSumError { line, .. }
            | IngestError::DuplicateKey { line, .. }
            | IngestError::DimensionalityMix { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Abort on the first bad row.
    #[default]
    Strict,
    /// Skip bad rows and report them.
    Lenient,
}

/// Outcome of a collected parse: the accepted records plus, in lenient
/// mode, one error per skipped row.
#[derive(Debug)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub skipped: Vec<IngestError>,
}

impl<T> Parsed<T> {
    pub fn skip_count(&self) -> usize {
        self.skipped.len()
    }

    pub fn skipped_lines(&self) -> Vec<u64> {
        self.skipped.iter().filter_map(IngestError::line).collect()
    }
}

/// Streaming row iterator for one schema over one byte stream.
pub struct RecordReader<R: Read, S: RowSchema> {
    inner: csv::Reader<R>,
    schema: S,
    row: csv::StringRecord,
}

impl<R: Read, S: RowSchema> RecordReader<R, S> {
    /// Reads and validates the header row.
    pub fn new(input: R, mut schema: S) -> Result<Self, IngestError> {
        let mut inner = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(input);
        let header = inner.headers()?.clone();
        schema.check_header(&header)?;
        Ok(Self {
            inner,
            schema,
            row: csv::StringRecord::new(),
        })
    }

    pub fn schema(&self) -> &S {
        &self.schema
    }
}

impl<R: Read, S: RowSchema> Iterator for RecordReader<R, S> {
    type Item = Result<S::Record, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.inner.read_record(&mut self.row) {
            Ok(false) => None,
            Ok(true) => {
                let line = self.row.position().map_or(0, |p| p.line());
                Some(self.schema.parse_row(line, &self.row))
            }
            Err(err) => {
                let line = err.position().map(|p| p.line());
                Some(Err(match line {
                    Some(line) => IngestError::MalformedRow {
                        line,
                        reason: err.to_string(),
                    },
                    None => IngestError::Csv(err),
                }))
            }
        }
    }
}

/// Drains a record iterator under `mode`.
pub fn collect<T, I>(rows: I, mode: ParseMode) -> Result<Parsed<T>, IngestError>
where
    I: IntoIterator<Item = Result<T, IngestError>>,
{
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for row in rows {
        match row {
            Ok(r) => records.push(r),
            Err(e) if mode == ParseMode::Lenient && e.line().is_some() => skipped.push(e),
            Err(e) => return Err(e),
        }
    }
    Ok(Parsed { records, skipped })
}

/// Parses `faces.csv`. When `expected` is set, rows tagged with another
/// model are rejected.
pub fn parse_faces<R: Read>(
    input: R,
    expected: Option<FaceModel>,
    mode: ParseMode,
) -> Result<Parsed<FaceAnnotation>, IngestError> {
    collect(RecordReader::new(input, FaceSchema::new(expected))?, mode)
}

pub fn parse_nsfw<R: Read>(input: R, mode: ParseMode) -> Result<Parsed<NsfwAnnotation>, IngestError> {
    collect(RecordReader::new(input, NsfwSchema::default())?, mode)
}

pub fn parse_predictions<R: Read>(
    input: R,
    expected: Option<PredModel>,
    mode: ParseMode,
) -> Result<Parsed<PredictionRecord>, IngestError> {
    collect(RecordReader::new(input, PredictionSchema::new(expected))?, mode)
}

pub fn parse_embeddings<R: Read>(
    input: R,
    mode: ParseMode,
) -> Result<Parsed<LabelEmbedding>, IngestError> {
    collect(RecordReader::new(input, EmbeddingSchema::default())?, mode)
}

/// Parses `classes.csv` and checks that the indices form `0..n`.
pub fn parse_class_index<R: Read>(
    input: R,
    mode: ParseMode,
) -> Result<Parsed<ClassInfo>, IngestError> {
    let parsed = collect(RecordReader::new(input, ClassIndexSchema::default())?, mode)?;
    let mut seen = vec![false; parsed.records.len()];
    let mut out_of_range = Vec::new();
    for c in &parsed.records {
        match seen.get_mut(c.class_index as usize) {
            Some(slot) => *slot = true,
            None => out_of_range.push(c.class_index),
        }
    }
    if !out_of_range.is_empty() {
        let missing: Vec<u32> = seen
            .iter()
            .enumerate()
            .filter(|(_, s)| !**s)
            .map(|(i, _)| i as u32)
            .collect();
        return Err(IngestError::NonContiguousIndex { missing });
    }
    Ok(parsed)
}

pub fn parse_vocabulary<R: Read>(
    input: R,
    mode: ParseMode,
) -> Result<Parsed<TaxonomyRecord>, IngestError> {
    collect(RecordReader::new(input, VocabularySchema::default())?, mode)
}

pub fn parse_class_sizes<R: Read>(
    input: R,
    mode: ParseMode,
) -> Result<Parsed<ClassSize>, IngestError> {
    collect(RecordReader::new(input, ClassSizeSchema::default())?, mode)
}
