use std::collections::HashSet;

use csv::StringRecord;

use super::records::{
    is_synset_id, ClassInfo, ClassSize, EmbeddingKind, FaceAnnotation, FaceModel, ImageKey,
    LabelEmbedding, NsfwAnnotation, PredModel, PredictionRecord, Split, TaxonomyRecord,
};
use super::{headers, IngestError, SOFTMAX_TOLERANCE};

/// Row-level contract for one CSV file shape. Implementations may keep
/// state across rows (duplicate detection, dimensionality).
pub trait RowSchema {
    type Record;

    fn check_header(&mut self, header: &StringRecord) -> Result<(), IngestError>;

    fn parse_row(&mut self, line: u64, row: &StringRecord) -> Result<Self::Record, IngestError>;
}

fn expect_header(header: &StringRecord, expected: &[&str]) -> Result<(), IngestError> {
    if header.iter().eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(IngestError::Header {
            expected: expected.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        })
    }
}

fn malformed(line: u64, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedRow {
        line,
        reason: reason.into(),
    }
}

fn arity(line: u64, row: &StringRecord, n: usize) -> Result<(), IngestError> {
    if row.len() == n {
        Ok(())
    } else {
        Err(malformed(line, format!("expected {n} fields, found {}", row.len())))
    }
}

fn real(line: u64, row: &StringRecord, idx: usize, field: &'static str) -> Result<f64, IngestError> {
    let raw = &row[idx];
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(malformed(line, format!("`{field}`: cannot parse `{raw}` as a finite real"))),
    }
}

fn unit_interval(
    line: u64,
    row: &StringRecord,
    idx: usize,
    field: &'static str,
) -> Result<f64, IngestError> {
    let v = real(line, row, idx, field)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(IngestError::RangeError { line, field })
    }
}

fn integer<T: std::str::FromStr>(
    line: u64,
    row: &StringRecord,
    idx: usize,
    field: &'static str,
) -> Result<T, IngestError> {
    let raw = &row[idx];
    raw.trim()
        .parse::<T>()
        .map_err(|_| malformed(line, format!("`{field}`: cannot parse `{raw}` as a non-negative integer")))
}

fn synset(line: u64, row: &StringRecord, idx: usize, field: &'static str) -> Result<String, IngestError> {
    let raw = &row[idx];
    if is_synset_id(raw) {
        Ok(raw.to_string())
    } else {
        Err(malformed(line, format!("`{field}`: `{raw}` is not a synset identifier")))
    }
}

fn non_empty(line: u64, row: &StringRecord, idx: usize, field: &'static str) -> Result<String, IngestError> {
    let raw = &row[idx];
    if raw.is_empty() {
        Err(malformed(line, format!("`{field}` is empty")))
    } else {
        Ok(raw.to_string())
    }
}

/// Shared `file_name,wordnet_id,split` prefix.
fn image_key(line: u64, row: &StringRecord) -> Result<ImageKey, IngestError> {
    let file_name = non_empty(line, row, 0, "file_name")?;
    let wordnet_id = synset(line, row, 1, "wordnet_id")?;
    let split = row[2]
        .parse::<Split>()
        .map_err(|_| IngestError::UnknownSplit { line })?;
    Ok(ImageKey {
        wordnet_id,
        split,
        file_name,
    })
}

fn check_unique<K: std::hash::Hash + Eq + std::fmt::Debug>(
    seen: &mut HashSet<K>,
    key: K,
    line: u64,
) -> Result<(), IngestError> {
    if seen.contains(&key) {
        Err(IngestError::DuplicateKey {
            line,
            key: format!("{key:?}"),
        })
    } else {
        seen.insert(key);
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct FaceSchema {
    expected: Option<FaceModel>,
    seen: HashSet<(ImageKey, FaceModel, u32)>,
}

impl FaceSchema {
    pub fn new(expected: Option<FaceModel>) -> Self {
        Self {
            expected,
            seen: HashSet::new(),
        }
    }
}

impl RowSchema for FaceSchema {
    type Record = FaceAnnotation;

    fn check_header(&mut self, header: &StringRecord) -> Result<(), IngestError> {
        expect_header(header, headers::FACES)
    }

    fn parse_row(&mut self, line: u64, row: &StringRecord) -> Result<FaceAnnotation, IngestError> {
        arity(line, row, headers::FACES.len())?;
        let image = image_key(line, row)?;
        let model = row[3]
            .parse::<FaceModel>()
            .map_err(|_| malformed(line, format!("unknown face model `{}`", &row[3])))?;
        if let Some(expected) = self.expected {
            if model != expected {
                return Err(malformed(line, format!("model `{model}` where `{expected}` expected")));
            }
        }
        let face_index = integer::<u32>(line, row, 4, "face_index")?;
        let bbox = [
            real(line, row, 5, "bbox_x")?,
            real(line, row, 6, "bbox_y")?,
            real(line, row, 7, "bbox_w")?,
            real(line, row, 8, "bbox_h")?,
        ];
        if bbox[2] <= 0.0 {
            return Err(IngestError::RangeError { line, field: "bbox_w" });
        }
        if bbox[3] <= 0.0 {
            return Err(IngestError::RangeError { line, field: "bbox_h" });
        }
        let det_conf = unit_interval(line, row, 9, "det_conf")?;
        let age_years = real(line, row, 10, "age_years")?;
        if age_years <= 0.0 {
            return Err(IngestError::RangeError { line, field: "age_years" });
        }
        let gender_score = unit_interval(line, row, 11, "gender_score")?;
        check_unique(&mut self.seen, (image.clone(), model, face_index), line)?;
        Ok(FaceAnnotation {
            image,
            model,
            face_index,
            bbox,
            det_conf,
            age_years,
            gender_score,
        })
    }
}

#[derive(Debug, Default)]
pub struct NsfwSchema {
    seen: HashSet<ImageKey>,
}

impl RowSchema for NsfwSchema {
    type Record = NsfwAnnotation;

    fn check_header(&mut self, header: &StringRecord) -> Result<(), IngestError> {
        expect_header(header, headers::NSFW)
    }

    fn parse_row(&mut self, line: u64, row: &StringRecord) -> Result<NsfwAnnotation, IngestError> {
        arity(line, row, headers::NSFW.len())?;
        let image = image_key(line, row)?;
        const FIELDS: [&str; 5] = ["p_drawings", "p_hentai", "p_neutral", "p_porn", "p_sexy"];
        let mut probs = [0.0; 5];
        for (i, field) in FIELDS.into_iter().enumerate() {
            probs[i] = unit_interval(line, row, 3 + i, field)?;
        }
        let sum: f64 = crate::stats::sum(probs);
        if (sum - 1.0).abs() > SOFTMAX_TOLERANCE {
            return Err(IngestError::SoftmaxSumError { line, sum });
        }
        check_unique(&mut self.seen, image.clone(), line)?;
        Ok(NsfwAnnotation { image, probs })
    }
}

#[derive(Debug, Default)]
pub struct PredictionSchema {
    expected: Option<PredModel>,
    seen: HashSet<(ImageKey, PredModel)>,
}

impl PredictionSchema {
    pub fn new(expected: Option<PredModel>) -> Self {
        Self {
            expected,
            seen: HashSet::new(),
        }
    }
}

impl RowSchema for PredictionSchema {
    type Record = PredictionRecord;

    fn check_header(&mut self, header: &StringRecord) -> Result<(), IngestError> {
        expect_header(header, headers::PREDICTIONS)
    }

    fn parse_row(&mut self, line: u64, row: &StringRecord) -> Result<PredictionRecord, IngestError> {
        arity(line, row, headers::PREDICTIONS.len())?;
        let image = image_key(line, row)?;
        let model = row[3]
            .parse::<PredModel>()
            .map_err(|_| malformed(line, format!("unknown classifier `{}`", &row[3])))?;
        if let Some(expected) = self.expected {
            if model != expected {
                return Err(malformed(line, format!("model `{model}` where `{expected}` expected")));
            }
        }
        const FIELDS: [&str; 5] = ["top1", "top2", "top3", "top4", "top5"];
        let mut top5: [String; 5] = Default::default();
        for (i, field) in FIELDS.into_iter().enumerate() {
            top5[i] = synset(line, row, 4 + i, field)?;
        }
        for i in 0..5 {
            if top5[..i].contains(&top5[i]) {
                return Err(malformed(line, format!("guess `{}` repeated", top5[i])));
            }
        }
        check_unique(&mut self.seen, (image.clone(), model), line)?;
        Ok(PredictionRecord { image, model, top5 })
    }
}

#[derive(Debug, Default)]
pub struct EmbeddingSchema {
    kind: Option<EmbeddingKind>,
    dims: usize,
    seen: HashSet<String>,
}

impl EmbeddingSchema {
    pub fn kind(&self) -> Option<EmbeddingKind> {
        self.kind
    }

    pub fn dims(&self) -> usize {
        self.dims
    }
}

impl RowSchema for EmbeddingSchema {
    type Record = LabelEmbedding;

    fn check_header(&mut self, header: &StringRecord) -> Result<(), IngestError> {
        if header.iter().eq(headers::EMBEDDINGS_2D.iter().copied()) {
            self.kind = Some(EmbeddingKind::Projected);
            self.dims = 2;
            return Ok(());
        }
        let raw_ok = header.len() > 2
            && &header[0] == "wordnet_id"
            && &header[1] == "label"
            && header
                .iter()
                .skip(2)
                .enumerate()
                .all(|(i, h)| h == format!("d{i}"));
        if raw_ok {
            self.kind = Some(EmbeddingKind::Raw);
            self.dims = header.len() - 2;
            Ok(())
        } else {
            Err(IngestError::Header {
                expected: "wordnet_id,label,d0,...,d299 or wordnet_id,label,umap_x,umap_y".into(),
                found: header.iter().collect::<Vec<_>>().join(","),
            })
        }
    }

    fn parse_row(&mut self, line: u64, row: &StringRecord) -> Result<LabelEmbedding, IngestError> {
        if row.len() < 3 {
            return Err(malformed(line, format!("expected {} fields, found {}", self.dims + 2, row.len())));
        }
        let wordnet_id = synset(line, row, 0, "wordnet_id")?;
        let label = row[1].to_string();
        let mut vector = Vec::with_capacity(row.len() - 2);
        for i in 2..row.len() {
            vector.push(real(line, row, i, "vector component")?);
        }
        if vector.len() != self.dims {
            return Err(IngestError::DimensionalityMix {
                line,
                expected: self.dims,
                found: vector.len(),
            });
        }
        check_unique(&mut self.seen, wordnet_id.clone(), line)?;
        Ok(LabelEmbedding {
            wordnet_id,
            label,
            kind: self.kind.unwrap_or(EmbeddingKind::Raw),
            vector,
        })
    }
}

#[derive(Debug, Default)]
pub struct ClassIndexSchema {
    seen_index: HashSet<u32>,
    seen_id: HashSet<String>,
}

impl RowSchema for ClassIndexSchema {
    type Record = ClassInfo;

    fn check_header(&mut self, header: &StringRecord) -> Result<(), IngestError> {
        expect_header(header, headers::CLASSES)
    }

    fn parse_row(&mut self, line: u64, row: &StringRecord) -> Result<ClassInfo, IngestError> {
        arity(line, row, headers::CLASSES.len())?;
        let class_index = integer::<u32>(line, row, 0, "class_index")?;
        let wordnet_id = synset(line, row, 1, "wordnet_id")?;
        let label = row[2].to_string();
        check_unique(&mut self.seen_index, class_index, line)?;
        check_unique(&mut self.seen_id, wordnet_id.clone(), line)?;
        Ok(ClassInfo {
            class_index,
            wordnet_id,
            label,
        })
    }
}

#[derive(Debug, Default)]
pub struct VocabularySchema {
    seen: HashSet<u64>,
}

impl RowSchema for VocabularySchema {
    type Record = TaxonomyRecord;

    fn check_header(&mut self, header: &StringRecord) -> Result<(), IngestError> {
        expect_header(header, headers::VOCABULARY)
    }

    fn parse_row(&mut self, line: u64, row: &StringRecord) -> Result<TaxonomyRecord, IngestError> {
        arity(line, row, headers::VOCABULARY.len())?;
        let class_ind = integer::<u64>(line, row, 0, "class_ind")?;
        let class_name = row[1].to_string();
        let n_images = integer::<u64>(line, row, 2, "n_images")?;
        check_unique(&mut self.seen, class_ind, line)?;
        Ok(TaxonomyRecord {
            class_ind,
            class_name,
            n_images,
        })
    }
}

#[derive(Debug, Default)]
pub struct ClassSizeSchema {
    seen: HashSet<String>,
}

impl RowSchema for ClassSizeSchema {
    type Record = ClassSize;

    fn check_header(&mut self, header: &StringRecord) -> Result<(), IngestError> {
        expect_header(header, headers::CLASS_SIZES)
    }

    fn parse_row(&mut self, line: u64, row: &StringRecord) -> Result<ClassSize, IngestError> {
        arity(line, row, headers::CLASS_SIZES.len())?;
        let wordnet_id = synset(line, row, 0, "wordnet_id")?;
        let n_train = integer::<u64>(line, row, 1, "n_train")?;
        let n_val = integer::<u64>(line, row, 2, "n_val")?;
        check_unique(&mut self.seen, wordnet_id.clone(), line)?;
        Ok(ClassSize {
            wordnet_id,
            n_train,
            n_val,
        })
    }
}
