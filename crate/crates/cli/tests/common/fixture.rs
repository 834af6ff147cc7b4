//! The synthetic audit bundle: twenty ImageNet classes, about four hundred
//! images, every annotation produced by a closed-form rule so the
//! aggregates can be checked by hand. No randomness.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use audit_core::ingest::{
    write_class_index, write_class_sizes, write_embeddings, write_faces, write_nsfw,
    write_predictions, write_vocabulary, ClassInfo, ClassSize, EmbeddingKind, FaceAnnotation,
    FaceModel, ImageKey, LabelEmbedding, NsfwAnnotation, PredModel, PredictionRecord, Split,
    TaxonomyRecord,
};
use audit_core::survey::{append_event, AnnotationEvent, Category};
use chrono::{DateTime, Duration, TimeZone, Utc};

pub struct ClassSpec {
    pub wordnet_id: &'static str,
    pub label: &'static str,
    pub n_train: usize,
    pub n_val: usize,
    /// Target per-image gender score.
    pub gender: f64,
    /// Target per-image content score.
    pub nsfw: f64,
    /// Images with a DEX face, out of every ten.
    pub face_rate: usize,
    pub age: f64,
}

const fn spec(
    wordnet_id: &'static str,
    label: &'static str,
    n_train: usize,
    n_val: usize,
    gender: f64,
    nsfw: f64,
    face_rate: usize,
    age: f64,
) -> ClassSpec {
    ClassSpec {
        wordnet_id,
        label,
        n_train,
        n_val,
        gender,
        nsfw,
        face_rate,
        age,
    }
}

/// In class-index (synset) order.
pub const CLASSES: [ClassSpec; 20] = [
    spec("n02085620", "Chihuahua", 16, 4, 0.55, 0.12, 6, 31.0),
    spec("n02088364", "beagle", 16, 4, 0.60, 0.08, 5, 33.0),
    spec("n02093754", "Border terrier", 16, 4, 0.62, 0.06, 4, 35.0),
    spec("n02099601", "golden retriever", 16, 4, 0.58, 0.10, 6, 30.0),
    spec("n02106662", "German shepherd, German shepherd dog, German police dog, alsatian", 16, 4, 0.72, 0.07, 5, 34.0),
    spec("n02110958", "pug, pug-dog", 16, 4, 0.48, 0.14, 5, 29.0),
    spec("n02804414", "bassinet", 16, 4, 0.42, 0.15, 7, 27.0),
    spec("n02834397", "bib", 16, 4, 0.45, 0.22, 6, 28.0),
    spec("n02837789", "bikini, two-piece", 32, 8, 0.20, 0.812, 9, 24.0),
    spec("n02892767", "brassiere, bra, bandeau", 10, 2, 0.18, 0.741, 8, 26.0),
    spec("n02992211", "cello, violoncello", 16, 4, 0.62, 0.09, 7, 38.0),
    spec("n03125729", "cradle", 16, 4, 0.44, 0.13, 6, 29.0),
    spec("n03131574", "crib, cot", 16, 4, 0.47, 0.18, 6, 30.0),
    spec("n03372029", "flute, transverse flute", 16, 4, 0.45, 0.07, 6, 30.0),
    spec("n03495258", "harp", 16, 4, 0.40, 0.10, 6, 33.0),
    spec("n03710637", "maillot", 16, 4, 0.22, 0.802, 9, 25.0),
    spec("n03710721", "maillot, tank suit", 10, 2, 0.21, 0.769, 9, 25.0),
    spec("n03770439", "miniskirt, mini", 16, 4, 0.25, 0.733, 8, 24.0),
    spec("n03838899", "oboe, hautboy, hautbois", 16, 4, 0.55, 0.05, 5, 36.0),
    spec("n04254680", "soccer ball", 16, 4, 0.78, 0.06, 5, 24.0),
];

pub const SWIMWEAR: [&str; 5] = ["n02837789", "n02892767", "n03710637", "n03710721", "n03770439"];

pub const ANNOTATORS: [&str; 5] = ["ann-a", "ann-b", "ann-c", "ann-d", "ann-e"];

fn round(v: f64, places: i32) -> f64 {
    let k = 10f64.powi(places);
    (v * k).round() / k
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

#[derive(Debug, Clone)]
pub struct Image {
    pub class: usize,
    /// Position among the class's images, train first.
    pub index: usize,
    pub key: ImageKey,
}

/// Every image: train files `<wnid>_<k>.JPEG`, val files numbered across
/// the whole validation split as in ILSVRC2012.
pub fn images() -> Vec<Image> {
    let mut out = Vec::new();
    let mut val_counter = 0;
    for (c, s) in CLASSES.iter().enumerate() {
        for k in 0..s.n_train {
            out.push(Image {
                class: c,
                index: k,
                key: ImageKey::new(s.wordnet_id, Split::Train, format!("{}_{}.JPEG", s.wordnet_id, k + 1)),
            });
        }
        for k in 0..s.n_val {
            val_counter += 1;
            out.push(Image {
                class: c,
                index: s.n_train + k,
                key: ImageKey::new(s.wordnet_id, Split::Val, format!("ILSVRC2012_val_{val_counter:08}.JPEG")),
            });
        }
    }
    out
}

fn content_score(img: &Image) -> f64 {
    let s = &CLASSES[img.class];
    let step = if SWIMWEAR.contains(&s.wordnet_id) { 0.02 } else { 0.015 };
    round(clamp(s.nsfw + step * ((img.index % 5) as f64 - 2.0), 0.0, 1.0), 4)
}

pub fn nsfw_rows() -> Vec<NsfwAnnotation> {
    images()
        .into_iter()
        .map(|img| {
            let s = content_score(&img);
            // hentai, porn and sexy carry 10/30/60 % of the score
            let hentai = round(0.1 * s, 6);
            let porn = round(0.3 * s, 6);
            let sexy = round(s - hentai - porn, 6);
            let drawings = round(0.1 * (1.0 - s), 6);
            let neutral = round(1.0 - s - drawings, 6);
            NsfwAnnotation {
                image: img.key,
                probs: [drawings, hentai, neutral, porn, sexy],
            }
        })
        .collect()
}

fn has_dex_face(img: &Image) -> bool {
    (img.index * 3 + img.class * 7) % 10 < CLASSES[img.class].face_rate
}

/// Faces DEX finds in an image: one, or two on every fourth.
fn dex_face_count(img: &Image) -> u32 {
    if !has_dex_face(img) {
        0
    } else if (img.index + img.class) % 4 == 0 {
        2
    } else {
        1
    }
}

/// Skewed offsets so classes have a non-trivial third moment; odd classes
/// skew the other way.
const GENDER_OFFSETS: [f64; 5] = [-0.08, -0.03, 0.0, 0.02, 0.25];

fn gender(img: &Image, face: u32) -> f64 {
    let s = &CLASSES[img.class];
    let sign = if img.class % 2 == 0 { 1.0 } else { -1.0 };
    let off = sign * GENDER_OFFSETS[(img.index + img.class) % 5];
    round(clamp(s.gender + off + 0.04 * f64::from(face), 0.01, 0.99), 4)
}

fn age(img: &Image, face: u32) -> f64 {
    let s = &CLASSES[img.class];
    s.age + ((img.index * 5 + face as usize * 3 + img.class) % 11) as f64
}

fn face(img: &Image, model: FaceModel, face_index: u32, age_years: f64, gender_score: f64) -> FaceAnnotation {
    let f = f64::from(face_index);
    FaceAnnotation {
        image: img.key.clone(),
        model,
        face_index,
        bbox: [10.0 + 60.0 * f, 20.0, 48.0, 56.0],
        det_conf: round(0.97 - 0.02 * f, 4),
        age_years,
        gender_score,
    }
}

pub fn dex_faces() -> Vec<FaceAnnotation> {
    let mut out = Vec::new();
    for img in images() {
        for k in 0..dex_face_count(&img) {
            out.push(face(&img, FaceModel::Dex, k, age(&img, k), gender(&img, k)));
        }
    }
    out
}

/// InsightFace sees DEX's faces three years older and slightly more
/// male, an extra face on every sixth face-bearing image, and one face
/// in the images just past DEX's face rate.
pub fn insightface_faces() -> Vec<FaceAnnotation> {
    let mut out = Vec::new();
    for img in images() {
        let n = dex_face_count(&img);
        for k in 0..n {
            let g = round(clamp(gender(&img, k) + 0.02, 0.01, 0.99), 4);
            out.push(face(&img, FaceModel::InsightFace, k, age(&img, k) + 3.0, g));
        }
        let extra = if n > 0 {
            (img.index + img.class) % 6 == 0
        } else {
            (img.index * 3 + img.class * 7) % 10 == CLASSES[img.class].face_rate
        };
        if extra {
            out.push(face(&img, FaceModel::InsightFace, n, age(&img, 0) + 1.0, gender(&img, 1)));
        }
    }
    out
}

pub fn class_index() -> Vec<ClassInfo> {
    CLASSES
        .iter()
        .enumerate()
        .map(|(i, s)| ClassInfo {
            class_index: i as u32,
            wordnet_id: s.wordnet_id.into(),
            label: s.label.into(),
        })
        .collect()
}

pub fn class_sizes() -> Vec<ClassSize> {
    CLASSES
        .iter()
        .map(|s| ClassSize {
            wordnet_id: s.wordnet_id.into(),
            n_train: s.n_train as u64,
            n_val: s.n_val as u64,
        })
        .collect()
}

/// Top-5 guesses for validation images. The true class lands at rank
/// `r = (7i + 3c + 2m) mod 8` when `r < 5` and is missed otherwise.
pub fn predictions(model: PredModel, m: usize) -> Vec<PredictionRecord> {
    images()
        .into_iter()
        .filter(|img| img.key.split == Split::Val)
        .map(|img| {
            let truth = CLASSES[img.class].wordnet_id;
            let rank = (img.index * 7 + img.class * 3 + m * 2) % 8;
            let others: Vec<&str> = (1..CLASSES.len())
                .map(|d| CLASSES[(img.class + d * 3 + img.index) % CLASSES.len()].wordnet_id)
                .filter(|w| *w != truth)
                .fold(Vec::new(), |mut acc, w| {
                    if !acc.contains(&w) {
                        acc.push(w);
                    }
                    acc
                });
            let mut guesses: Vec<String> = others.iter().take(5).map(|s| s.to_string()).collect();
            if rank < 5 {
                guesses.insert(rank, truth.to_string());
                guesses.truncate(5);
            }
            PredictionRecord {
                image: img.key,
                model,
                top5: guesses.try_into().expect("five guesses"),
            }
        })
        .collect()
}

/// Three-dimensional label vectors, projected to 2-D by the pipeline.
pub fn embeddings() -> Vec<LabelEmbedding> {
    CLASSES
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let t = i as f64;
            LabelEmbedding {
                wordnet_id: s.wordnet_id.into(),
                label: s.label.split(',').next().unwrap().to_string(),
                kind: EmbeddingKind::Raw,
                vector: vec![
                    round((t * 0.7).sin() * 2.0, 4),
                    round((t * 0.3).cos() * 1.5, 4),
                    round(0.1 * t + 0.5 * s.nsfw, 4),
                ],
            }
        })
        .collect()
}

/// A neutral stand-in vocabulary: placeholder tokens play the part of
/// offensive terms so no real slur is ever committed.
pub fn vocabulary() -> Vec<TaxonomyRecord> {
    [
        ("xyzzy", 1200),
        ("plugh frotz", 640),
        ("harpist", 410),
        ("oboist", 95),
        ("bassinet", 300),
        ("frotzer", 75),
        ("plugh", 52),
        ("soccer player", 880),
        ("xyzzy collector", 33),
        ("cellist", 210),
        ("bib", 18),
        ("gnusto", 7),
    ]
    .iter()
    .enumerate()
    .map(|(i, (name, n))| TaxonomyRecord {
        class_ind: i as u64,
        class_name: name.to_string(),
        n_images: *n,
    })
    .collect()
}

const DENYLIST: &str = "# placeholder terms\nxyzzy\nplugh frotz\ngnusto\n";
const REFERENCE_LABELS: &str = "bassinet\nbib\nsoccer player\ncrib\n";
const AKC_GROUPS: &str = "# AKC groups for the fixture's dog classes\nwordnet_id,group\n\
n02085620,Toy\nn02088364,Hound\nn02093754,Terrier\nn02099601,Sporting\nn02106662,Herding\n";
// pug is left unmapped so the analysis has an Unknown group
const DOGS: &str = "n02085620\nn02088364\nn02093754\nn02099601\nn02106662\npug\n";
const INSTRUMENTS: &str = "# instrument classes ranked by skewness\nn03495258 harp\ncello\noboe\nflute\nviolin\n";
const INFANTS: &str = "n02804414 bassinet\ncradle\ncrib\nbib\nhigh chair\n";
const DOG_ANALYSIS: &str = "group,classes,note\nToy,1,small companion breeds\nHound,1,scent hound\nTerrier,1,\nSporting,1,\nHerding,1,\n";

pub const CONFIG: &str = r#"[paths]
classes = "classes.csv"
class_sizes = "class_sizes.csv"
faces = ["faces_dex.csv", "faces_insightface.csv"]
nsfw = "nsfw.csv"
predictions = ["predictions_resnet50.csv", "predictions_nasnet_mobile.csv"]
embeddings = "embeddings.csv"
vocabulary = "vocabulary.csv"
denylist = "denylist.txt"
reference_labels = "reference_labels.txt"
groups = "akc_groups.csv"
group_classes = "dogs.txt"
ranking = "instruments.txt"
survey_log = "survey_log.ndjson"
out = "out"

[paths.watchlists]
infants = "infants.txt"

[paths.external]
dog_analysis = "dog_analysis.csv"

[census]
name = "mini"

[accuracy]
top_n = 5

[card]
dataset = "imagenet-mini (synthetic fixture)"
generated = "2024-03-04"
"#;

/// How one shortlisted image ends up after the survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Consensus(Category),
    /// Three unanimous `none_of_these`.
    Exhausted,
    /// Three labels that disagree.
    Split,
    /// Two labels short of quorum.
    Pending,
    Unlabeled,
}

/// Per swimwear class: consensus categories with counts, then the number
/// of exhausted, split and pending images; the rest stay unlabeled.
pub fn survey_plan() -> Vec<(&'static str, Vec<(Fate, usize)>)> {
    use Category::*;
    use Fate::*;
    vec![
        ("n02837789", vec![(Consensus(BeachVoyeur), 24), (Consensus(ExposedPrivateParts), 2), (Exhausted, 4), (Split, 3), (Pending, 2)]),
        ("n02892767", vec![(Consensus(ExposedPrivateParts), 4), (Consensus(Upskirt), 1), (Consensus(VerifiablyPornographic), 1), (Exhausted, 2), (Split, 1)]),
        ("n03710637", vec![(Consensus(BeachVoyeur), 9), (Consensus(ExposedPrivateParts), 3), (Exhausted, 3), (Split, 2)]),
        ("n03710721", vec![(Consensus(BeachVoyeur), 5), (Exhausted, 2), (Split, 1)]),
        ("n03770439", vec![(Consensus(Upskirt), 10), (Consensus(VerifiablyPornographic), 2), (Exhausted, 3), (Pending, 2)]),
    ]
}

pub fn fates() -> BTreeMap<ImageKey, Fate> {
    let keys: Vec<ImageKey> = images().into_iter().map(|i| i.key).collect();
    let mut out = BTreeMap::new();
    for (wnid, plan) in survey_plan() {
        let mut class_keys: Vec<&ImageKey> = keys.iter().filter(|k| k.wordnet_id == wnid).collect();
        class_keys.sort();
        let mut it = class_keys.into_iter();
        for (fate, n) in plan {
            for k in it.by_ref().take(n) {
                out.insert(k.clone(), fate);
            }
        }
        for k in it {
            out.insert(k.clone(), Fate::Unlabeled);
        }
    }
    out
}

pub fn survey_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap()
}

/// Labels as the annotators would have sent them. Every seventh
/// consensus image starts with one dissenting label that its author
/// corrects at the end of the session.
pub fn survey_events() -> Vec<AnnotationEvent> {
    let mut events = Vec::new();
    let mut corrections = Vec::new();
    let mut n_consensus = 0;
    for (n, (key, fate)) in fates().into_iter().enumerate() {
        let trio: Vec<&str> = (0..3).map(|j| ANNOTATORS[(n + j) % ANNOTATORS.len()]).collect();
        let id = key.to_string();
        let labels: Vec<(&str, Category)> = match fate {
            Fate::Consensus(c) => {
                n_consensus += 1;
                if n_consensus % 7 == 0 {
                    let wrong = if c == Category::BeachVoyeur {
                        Category::NoneOfThese
                    } else {
                        Category::BeachVoyeur
                    };
                    corrections.push((trio[0], id.clone(), c));
                    vec![(trio[0], wrong), (trio[1], c), (trio[2], c)]
                } else {
                    trio.iter().map(|a| (*a, c)).collect()
                }
            }
            Fate::Exhausted => trio.iter().map(|a| (*a, Category::NoneOfThese)).collect(),
            Fate::Split => vec![
                (trio[0], Category::BeachVoyeur),
                (trio[1], Category::NoneOfThese),
                (trio[2], Category::BeachVoyeur),
            ],
            Fate::Pending => vec![(trio[0], Category::Upskirt), (trio[1], Category::Upskirt)],
            Fate::Unlabeled => Vec::new(),
        };
        for (a, c) in labels {
            events.push((a.to_string(), id.clone(), c));
        }
    }
    for (a, id, c) in corrections {
        events.push((a.to_string(), id, c));
    }
    let t0 = survey_start();
    events
        .into_iter()
        .enumerate()
        .map(|(i, (annotator, item_id, category))| AnnotationEvent {
            annotator,
            item_id,
            category,
            timestamp: t0 + Duration::seconds(17 * i as i64),
        })
        .collect()
}

fn write(dir: &Path, name: &str, body: Vec<u8>) {
    fs::write(dir.join(name), body).unwrap();
}

fn csv<F>(f: F) -> Vec<u8>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), audit_core::ingest::IngestError>,
{
    let mut buf = Vec::new();
    f(&mut buf).unwrap();
    buf
}

/// Writes the whole bundle, `audit.toml` included, into `dir`.
pub fn write_bundle(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    write(dir, "audit.toml", CONFIG.as_bytes().to_vec());
    write(dir, "classes.csv", csv(|w| write_class_index(w, &class_index())));
    write(dir, "class_sizes.csv", csv(|w| write_class_sizes(w, &class_sizes())));
    write(dir, "faces_dex.csv", csv(|w| write_faces(w, &dex_faces())));
    write(dir, "faces_insightface.csv", csv(|w| write_faces(w, &insightface_faces())));
    write(dir, "nsfw.csv", csv(|w| write_nsfw(w, &nsfw_rows())));
    write(dir, "predictions_resnet50.csv", csv(|w| write_predictions(w, &predictions(PredModel::Resnet50, 0))));
    write(
        dir,
        "predictions_nasnet_mobile.csv",
        csv(|w| write_predictions(w, &predictions(PredModel::NasnetMobile, 1))),
    );
    write(dir, "embeddings.csv", csv(|w| write_embeddings(w, &embeddings())));
    write(dir, "vocabulary.csv", csv(|w| write_vocabulary(w, &vocabulary())));
    write(dir, "denylist.txt", DENYLIST.as_bytes().to_vec());
    write(dir, "reference_labels.txt", REFERENCE_LABELS.as_bytes().to_vec());
    write(dir, "akc_groups.csv", AKC_GROUPS.as_bytes().to_vec());
    write(dir, "dogs.txt", DOGS.as_bytes().to_vec());
    write(dir, "instruments.txt", INSTRUMENTS.as_bytes().to_vec());
    write(dir, "infants.txt", INFANTS.as_bytes().to_vec());
    write(dir, "dog_analysis.csv", DOG_ANALYSIS.as_bytes().to_vec());
    let mut log = Vec::new();
    for e in survey_events() {
        append_event(&mut log, &e).unwrap();
    }
    write(dir, "survey_log.ndjson", log);
}
