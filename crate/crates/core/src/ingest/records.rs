use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Val];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(()),
        }
    }
}

/// Face/age/gender annotator that produced a [`FaceAnnotation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceModel {
    Dex,
    #[serde(rename = "insightface")]
    InsightFace,
}

impl FaceModel {
    pub const ALL: [FaceModel; 2] = [FaceModel::Dex, FaceModel::InsightFace];

    pub fn as_str(self) -> &'static str {
        match self {
            FaceModel::Dex => "dex",
            FaceModel::InsightFace => "insightface",
        }
    }
}

impl fmt::Display for FaceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaceModel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dex" => Ok(FaceModel::Dex),
            "insightface" => Ok(FaceModel::InsightFace),
            _ => Err(()),
        }
    }
}

/// Classifier whose top-5 guesses a [`PredictionRecord`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredModel {
    Resnet50,
    NasnetMobile,
}

impl PredModel {
    pub const ALL: [PredModel; 2] = [PredModel::Resnet50, PredModel::NasnetMobile];

    pub fn as_str(self) -> &'static str {
        match self {
            PredModel::Resnet50 => "resnet50",
            PredModel::NasnetMobile => "nasnet_mobile",
        }
    }
}

impl fmt::Display for PredModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredModel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "resnet50" => Ok(PredModel::Resnet50),
            "nasnet_mobile" => Ok(PredModel::NasnetMobile),
            _ => Err(()),
        }
    }
}

/// Output classes of the five-way content classifier, in file column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NsfwClass {
    Drawings,
    Hentai,
    Neutral,
    Porn,
    Sexy,
}

impl NsfwClass {
    pub const ALL: [NsfwClass; 5] = [
        NsfwClass::Drawings,
        NsfwClass::Hentai,
        NsfwClass::Neutral,
        NsfwClass::Porn,
        NsfwClass::Sexy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NsfwClass::Drawings => "drawings",
            NsfwClass::Hentai => "hentai",
            NsfwClass::Neutral => "neutral",
            NsfwClass::Porn => "porn",
            NsfwClass::Sexy => "sexy",
        }
    }
}

impl FromStr for NsfwClass {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NsfwClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or(())
    }
}

/// `n` followed by eight digits.
pub fn is_synset_id(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 9 && b[0] == b'n' && b[1..].iter().all(u8::is_ascii_digit)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageKey {
    pub wordnet_id: String,
    pub split: Split,
    pub file_name: String,
}

impl ImageKey {
    pub fn new(wordnet_id: impl Into<String>, split: Split, file_name: impl Into<String>) -> Self {
        Self {
            wordnet_id: wordnet_id.into(),
            split,
            file_name: file_name.into(),
        }
    }
}

impl fmt::Display for ImageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.wordnet_id, self.split, self.file_name)
    }
}

/// One detected person in one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceAnnotation {
    pub image: ImageKey,
    pub model: FaceModel,
    pub face_index: u32,
    /// `(x, y, w, h)` in pixels.
    pub bbox: [f64; 4],
    pub det_conf: f64,
    pub age_years: f64,
    /// 0 = female, 1 = male.
    pub gender_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsfwAnnotation {
    pub image: ImageKey,
    /// Softmax over [`NsfwClass::ALL`], in that order.
    pub probs: [f64; 5],
}

impl NsfwAnnotation {
    pub fn prob(&self, class: NsfwClass) -> f64 {
        self.probs[class.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// `image.wordnet_id` is the true class.
    pub image: ImageKey,
    pub model: PredModel,
    pub top5: [String; 5],
}

impl PredictionRecord {
    /// 1-based rank of the true class among the guesses.
    pub fn rank_of_truth(&self) -> Option<usize> {
        self.top5
            .iter()
            .position(|g| *g == self.image.wordnet_id)
            .map(|i| i + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// Raw word vectors, columns `d0..d{n-1}`.
    Raw,
    /// Precomputed 2-D projection, columns `umap_x,umap_y`.
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEmbedding {
    pub wordnet_id: String,
    pub label: String,
    pub kind: EmbeddingKind,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub class_index: u32,
    pub wordnet_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyRecord {
    pub class_ind: u64,
    pub class_name: String,
    pub n_images: u64,
}

/// Per-class image counts by split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSize {
    pub wordnet_id: String,
    pub n_train: u64,
    pub n_val: u64,
}

impl ClassSize {
    pub fn for_split(&self, split: Split) -> u64 {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
        }
    }
}
