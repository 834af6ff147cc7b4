//! Hand-survey queue, per-annotator labels and unanimous consensus.
//!
//! An item closes when at least `quorum` annotators hold a live label on it
//! and all live labels agree. Agreement on `none_of_these` closes it as
//! exhausted, which keeps it out of the export. Closed items accept no
//! further labels, so consensus is never revoked.
//!
//! Every accepted submission is an [`AnnotationEvent`]; state is a pure
//! function of the event sequence, and the log (one JSON object per line)
//! can be replayed to rebuild it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{fmt_f64, CsvWriter, ImageKey, IngestError, Split};
use crate::nsfw::Shortlist;

pub const DEFAULT_QUORUM: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum SurveyError {
    #[error("shortlist has no images")]
    EmptyShortlist,
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("item `{0}` is closed")]
    ItemClosed(String),
    #[error("annotator id must be non-empty")]
    InvalidAnnotator,
    #[error("quorum must be at least 1")]
    InvalidQuorum,
    #[error("event log line {line}: {reason}")]
    Log { line: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    BeachVoyeur,
    ExposedPrivateParts,
    Upskirt,
    VerifiablyPornographic,
    NoneOfThese,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::BeachVoyeur,
        Category::ExposedPrivateParts,
        Category::Upskirt,
        Category::VerifiablyPornographic,
        Category::NoneOfThese,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::BeachVoyeur => "beach_voyeur",
            Category::ExposedPrivateParts => "exposed_private_parts",
            Category::Upskirt => "upskirt",
            Category::VerifiablyPornographic => "verifiably_pornographic",
            Category::NoneOfThese => "none_of_these",
        }
    }

    pub fn is_positive(self) -> bool {
        self != Category::NoneOfThese
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "category", rename_all = "snake_case")]
pub enum ItemStatus {
    Open,
    Consensus(Category),
    Exhausted,
}

impl ItemStatus {
    pub fn is_open(self) -> bool {
        self == ItemStatus::Open
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyItem {
    /// `wordnet_id:split:file_name`.
    pub item_id: String,
    pub image: ImageKey,
    pub class_label: String,
    pub mean_nsfw_train: f64,
    pub status: ItemStatus,
}

/// One image offered for survey, before it becomes an item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub image: ImageKey,
    pub class_label: String,
    pub mean_nsfw_train: f64,
}

/// Items ordered by class score (descending) then image key, one per
/// distinct image.
pub fn build_queue(entries: &[QueueEntry]) -> Result<Vec<SurveyItem>, SurveyError> {
    let mut sorted: Vec<&QueueEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| {
        b.mean_nsfw_train
            .total_cmp(&a.mean_nsfw_train)
            .then_with(|| a.image.cmp(&b.image))
    });
    let mut seen = BTreeSet::new();
    let items: Vec<SurveyItem> = sorted
        .into_iter()
        .filter(|e| seen.insert(&e.image))
        .map(|e| SurveyItem {
            item_id: e.image.to_string(),
            image: e.image.clone(),
            class_label: e.class_label.clone(),
            mean_nsfw_train: e.mean_nsfw_train,
            status: ItemStatus::Open,
        })
        .collect();
    if items.is_empty() {
        return Err(SurveyError::EmptyShortlist);
    }
    Ok(items)
}

pub fn queue_entries(shortlist: &Shortlist) -> Vec<QueueEntry> {
    let classes: BTreeMap<&str, (&str, f64)> = shortlist
        .classes
        .iter()
        .map(|c| (c.wordnet_id.as_str(), (c.label.as_str(), c.mean_nsfw_train)))
        .collect();
    shortlist
        .images
        .iter()
        .filter_map(|k| {
            classes.get(k.wordnet_id.as_str()).map(|(label, m)| QueueEntry {
                image: k.clone(),
                class_label: label.to_string(),
                mean_nsfw_train: *m,
            })
        })
        .collect()
}

/// Reads `shortlist_images.csv` (`file_name,wordnet_id,split,label,mean_nsfw_train`).
pub fn read_queue_entries<R: Read>(input: R) -> Result<Vec<QueueEntry>, IngestError> {
    const HEADER: [&str; 5] = ["file_name", "wordnet_id", "split", "label", "mean_nsfw_train"];
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if !header.iter().eq(HEADER) {
        return Err(IngestError::Header {
            expected: HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| IngestError::MalformedRow { line, reason };
        if rec.len() != HEADER.len() {
            return Err(bad(format!("expected 5 fields, found {}", rec.len())));
        }
        let split: Split = rec[2].parse().map_err(|_| IngestError::UnknownSplit { line })?;
        let mean: f64 = rec[4]
            .parse()
            .map_err(|_| bad(format!("cannot parse `{}`", &rec[4])))?;
        out.push(QueueEntry {
            image: ImageKey::new(&rec[1], split, &rec[0]),
            class_label: rec[3].to_string(),
            mean_nsfw_train: mean,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub annotator: String,
    pub item_id: String,
    pub category: Category,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusRecord {
    pub item_id: String,
    pub image: ImageKey,
    pub category: Category,
    pub n_annotators: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub item_id: String,
    pub status: ItemStatus,
    /// False when the annotator resubmitted their current label.
    pub changed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total_items: usize,
    pub open: usize,
    pub consensus: usize,
    pub exhausted: usize,
    /// Consensus items per positive category.
    pub by_category: BTreeMap<Category, usize>,
    /// Live labels per registered annotator.
    pub annotators: BTreeMap<String, usize>,
    pub total_labels: usize,
}

#[derive(Debug, Clone)]
pub struct SurveyState {
    items: Vec<SurveyItem>,
    index: HashMap<String, usize>,
    labels: Vec<BTreeMap<String, Category>>,
    annotators: BTreeSet<String>,
    events: Vec<AnnotationEvent>,
    quorum: usize,
}

impl SurveyState {
    pub fn new(items: Vec<SurveyItem>, quorum: usize) -> Result<Self, SurveyError> {
        if quorum == 0 {
            return Err(SurveyError::InvalidQuorum);
        }
        let index = items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.item_id.clone(), i))
            .collect();
        let labels = vec![BTreeMap::new(); items.len()];
        Ok(Self {
            items,
            index,
            labels,
            annotators: BTreeSet::new(),
            events: Vec::new(),
            quorum,
        })
    }

    /// Rebuilds state by applying `events` in order to a fresh queue.
    pub fn replay(
        items: Vec<SurveyItem>,
        quorum: usize,
        events: &[AnnotationEvent],
    ) -> Result<Self, SurveyError> {
        let mut s = Self::new(items, quorum)?;
        for e in events {
            s.apply(e.clone())?;
        }
        Ok(s)
    }

    pub fn quorum(&self) -> usize {
        self.quorum
    }

    pub fn items(&self) -> &[SurveyItem] {
        &self.items
    }

    pub fn item(&self, item_id: &str) -> Option<&SurveyItem> {
        self.index.get(item_id).map(|i| &self.items[*i])
    }

    pub fn events(&self) -> &[AnnotationEvent] {
        &self.events
    }

    pub fn live_labels(&self, item_id: &str) -> Option<&BTreeMap<String, Category>> {
        self.index.get(item_id).map(|i| &self.labels[*i])
    }

    pub fn register(&mut self, annotator: &str) -> Result<(), SurveyError> {
        if annotator.trim().is_empty() {
            return Err(SurveyError::InvalidAnnotator);
        }
        if !self.annotators.contains(annotator) {
            self.annotators.insert(annotator.to_string());
        }
        Ok(())
    }

    /// First open item in queue order that `annotator` has not labeled.
    pub fn next_item(&self, annotator: &str) -> Option<&SurveyItem> {
        self.items
            .iter()
            .zip(&self.labels)
            .find(|(it, l)| it.status.is_open() && !l.contains_key(annotator))
            .map(|(it, _)| it)
    }

    pub fn submit_label(
        &mut self,
        annotator: &str,
        item_id: &str,
        category: Category,
        timestamp: DateTime<Utc>,
    ) -> Result<SubmitOutcome, SurveyError> {
        self.apply(AnnotationEvent {
            annotator: annotator.to_string(),
            item_id: item_id.to_string(),
            category,
            timestamp,
        })
    }

    /// Checks that `event` would be accepted, without applying it; returns
    /// the item's queue position.
    pub fn validate(&self, event: &AnnotationEvent) -> Result<usize, SurveyError> {
        if event.annotator.trim().is_empty() {
            return Err(SurveyError::InvalidAnnotator);
        }
        let i = *self
            .index
            .get(&event.item_id)
            .ok_or_else(|| SurveyError::UnknownItem(event.item_id.clone()))?;
        if !self.items[i].status.is_open() {
            return Err(SurveyError::ItemClosed(event.item_id.clone()));
        }
        Ok(i)
    }

    /// Validates and applies one event, recording it on success. Nothing
    /// changes when validation fails.
    pub fn apply(&mut self, event: AnnotationEvent) -> Result<SubmitOutcome, SurveyError> {
        let i = self.validate(&event)?;
        self.register(&event.annotator)?;
        let previous = self.labels[i].insert(event.annotator.clone(), event.category);
        let labels = &self.labels[i];
        if labels.len() >= self.quorum {
            let mut cats = labels.values();
            let first = *cats.next().expect("non-empty");
            if cats.all(|c| *c == first) {
                self.items[i].status = if first.is_positive() {
                    ItemStatus::Consensus(first)
                } else {
                    ItemStatus::Exhausted
                };
            }
        }
        let outcome = SubmitOutcome {
            item_id: event.item_id.clone(),
            status: self.items[i].status,
            changed: previous != Some(event.category),
        };
        self.events.push(event);
        Ok(outcome)
    }

    /// Closed positive items, in queue order.
    pub fn consensus(&self) -> Vec<ConsensusRecord> {
        self.items
            .iter()
            .zip(&self.labels)
            .filter_map(|(it, l)| match it.status {
                ItemStatus::Consensus(category) => Some(ConsensusRecord {
                    item_id: it.item_id.clone(),
                    image: it.image.clone(),
                    category,
                    n_annotators: l.len(),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn progress(&self) -> Progress {
        let mut p = Progress {
            total_items: self.items.len(),
            ..Progress::default()
        };
        for a in &self.annotators {
            p.annotators.insert(a.clone(), 0);
        }
        for (it, labels) in self.items.iter().zip(&self.labels) {
            match it.status {
                ItemStatus::Open => p.open += 1,
                ItemStatus::Consensus(c) => {
                    p.consensus += 1;
                    *p.by_category.entry(c).or_default() += 1;
                }
                ItemStatus::Exhausted => p.exhausted += 1,
            }
            for a in labels.keys() {
                *p.annotators.entry(a.clone()).or_default() += 1;
            }
            p.total_labels += labels.len();
        }
        p
    }

    /// The survey table for the current consensus set.
    pub fn export<W: Write>(&self, out: W) -> Result<(), IngestError> {
        export_survey(out, &self.consensus(), &self.items)
    }
}

/// Writes `wordnet_id,label,mean_nsfw_train,category,file_names`, one row
/// per consensus image, sorted by (wordnet_id, category, file_names).
/// Labels and scores come from the matching queue items.
pub fn export_survey<W: Write>(
    out: W,
    records: &[ConsensusRecord],
    items: &[SurveyItem],
) -> Result<(), IngestError> {
    let by_id: HashMap<&str, &SurveyItem> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let mut rows: Vec<[String; 5]> = records
        .iter()
        .map(|r| {
            let item = by_id.get(r.item_id.as_str());
            [
                r.image.wordnet_id.clone(),
                item.map(|i| i.class_label.clone()).unwrap_or_default(),
                item.map(|i| fmt_f64(i.mean_nsfw_train)).unwrap_or_default(),
                r.category.to_string(),
                r.image.file_name.clone(),
            ]
        })
        .collect();
    rows.sort_by(|a, b| (&a[0], &a[3], &a[4]).cmp(&(&b[0], &b[3], &b[4])));
    let mut w = CsvWriter::new(out);
    w.row(["wordnet_id", "label", "mean_nsfw_train", "category", "file_names"])?;
    for r in rows {
        w.row(r)?;
    }
    w.finish()?;
    Ok(())
}

/// One row of `survey_export.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub wordnet_id: String,
    pub label: String,
    pub mean_nsfw_train: Option<f64>,
    pub category: Category,
    pub file_name: String,
}

pub fn read_survey_export<R: Read>(input: R) -> Result<Vec<ExportRow>, IngestError> {
    const HEADER: [&str; 5] = ["wordnet_id", "label", "mean_nsfw_train", "category", "file_names"];
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if !header.iter().eq(HEADER) {
        return Err(IngestError::Header {
            expected: HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| IngestError::MalformedRow { line, reason };
        if rec.len() != HEADER.len() {
            return Err(bad(format!("expected 5 fields, found {}", rec.len())));
        }
        let mean_nsfw_train = match &rec[2] {
            "" => None,
            v => Some(v.parse().map_err(|_| bad(format!("cannot parse `{v}`")))?),
        };
        out.push(ExportRow {
            wordnet_id: rec[0].to_string(),
            label: rec[1].to_string(),
            mean_nsfw_train,
            category: rec[3].parse().map_err(bad)?,
            file_name: rec[4].to_string(),
        });
    }
    Ok(out)
}

/// Appends one event as a JSON line.
pub fn append_event<W: Write>(mut out: W, event: &AnnotationEvent) -> std::io::Result<()> {
    let line = serde_json::to_string(event).map_err(std::io::Error::other)?;
    writeln!(out, "{line}")
}

pub fn read_event_log<R: Read>(input: R) -> Result<Vec<AnnotationEvent>, SurveyError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| SurveyError::Log {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SurveyError::Log {
            line: line_no,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t(s: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + s, 0).unwrap()
    }

    fn entry(file: &str, m: f64) -> QueueEntry {
        QueueEntry {
            image: ImageKey::new("n02837789", Split::Train, file),
            class_label: "bikini".into(),
            mean_nsfw_train: m,
        }
    }

    fn state(n: usize) -> SurveyState {
        let entries: Vec<QueueEntry> = (0..n).map(|i| entry(&format!("{i}.jpg"), 0.8)).collect();
        SurveyState::new(build_queue(&entries).unwrap(), 3).unwrap()
    }

    #[test]
    fn queue_dedups_and_orders() {
        let q = build_queue(&[entry("b.jpg", 0.5), entry("a.jpg", 0.9), entry("b.jpg", 0.5)]).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].item_id, "n02837789:train:a.jpg");
        assert!(q.iter().all(|i| i.status == ItemStatus::Open));
        assert_eq!(build_queue(&[]).unwrap_err(), SurveyError::EmptyShortlist);
    }

    #[test]
    fn unanimous_quorum_closes() {
        let mut s = state(1);
        let id = s.items()[0].item_id.clone();
        for (k, a) in ["a", "b"].iter().enumerate() {
            let o = s.submit_label(a, &id, Category::BeachVoyeur, t(k as i64)).unwrap();
            assert_eq!(o.status, ItemStatus::Open);
        }
        let o = s.submit_label("c", &id, Category::BeachVoyeur, t(3)).unwrap();
        assert_eq!(o.status, ItemStatus::Consensus(Category::BeachVoyeur));
        assert_eq!(
            s.submit_label("d", &id, Category::BeachVoyeur, t(4)).unwrap_err(),
            SurveyError::ItemClosed(id.clone())
        );
        assert_eq!(s.consensus().len(), 1);
        assert!(s.next_item("d").is_none());
    }

    #[test]
    fn disagreement_stays_open() {
        let mut s = state(1);
        let id = s.items()[0].item_id.clone();
        s.submit_label("a", &id, Category::Upskirt, t(0)).unwrap();
        s.submit_label("b", &id, Category::Upskirt, t(1)).unwrap();
        let o = s.submit_label("c", &id, Category::NoneOfThese, t(2)).unwrap();
        assert_eq!(o.status, ItemStatus::Open);
        // superseding label restores unanimity
        let o = s.submit_label("c", &id, Category::Upskirt, t(3)).unwrap();
        assert_eq!(o.status, ItemStatus::Consensus(Category::Upskirt));
    }

    #[test]
    fn unanimous_none_is_exhausted() {
        let mut s = state(1);
        let id = s.items()[0].item_id.clone();
        for a in ["a", "b", "c"] {
            s.submit_label(a, &id, Category::NoneOfThese, t(0)).unwrap();
        }
        assert_eq!(s.items()[0].status, ItemStatus::Exhausted);
        assert!(s.consensus().is_empty());
        assert_eq!(s.progress().exhausted, 1);
    }

    #[test]
    fn next_item_skips_own_labels() {
        let mut s = state(2);
        let first = s.next_item("a").unwrap().item_id.clone();
        assert_eq!(first, s.items()[0].item_id);
        s.submit_label("a", &first, Category::Upskirt, t(0)).unwrap();
        let second = s.next_item("a").unwrap().item_id.clone();
        s.submit_label("a", &second, Category::Upskirt, t(1)).unwrap();
        assert!(s.next_item("a").is_none());
        assert_eq!(s.next_item("b").unwrap().item_id, first);
    }

    #[test]
    fn resubmission_is_idempotent() {
        let mut s = state(1);
        let id = s.items()[0].item_id.clone();
        assert!(s.submit_label("a", &id, Category::Upskirt, t(0)).unwrap().changed);
        assert!(!s.submit_label("a", &id, Category::Upskirt, t(1)).unwrap().changed);
        assert_eq!(s.progress().annotators["a"], 1);
        assert_eq!(s.live_labels(&id).unwrap().len(), 1);
    }

    #[test]
    fn errors() {
        let mut s = state(1);
        assert_eq!(
            s.submit_label("a", "nope", Category::Upskirt, t(0)).unwrap_err(),
            SurveyError::UnknownItem("nope".into())
        );
        assert_eq!(
            s.submit_label(" ", "nope", Category::Upskirt, t(0)).unwrap_err(),
            SurveyError::InvalidAnnotator
        );
        assert!(SurveyState::new(vec![], 0).is_err());
    }

    #[test]
    fn log_replay_matches_live_export() {
        let mut s = state(3);
        let ids: Vec<String> = s.items().iter().map(|i| i.item_id.clone()).collect();
        for (k, a) in ["a", "b", "c"].iter().enumerate() {
            s.submit_label(a, &ids[0], Category::BeachVoyeur, t(k as i64)).unwrap();
            s.submit_label(a, &ids[2], Category::Upskirt, t(k as i64)).unwrap();
        }
        let mut log = Vec::new();
        for e in s.events() {
            append_event(&mut log, e).unwrap();
        }
        let events = read_event_log(log.as_slice()).unwrap();
        assert_eq!(events, s.events());
        let r = SurveyState::replay(s.items().iter().cloned().map(|mut i| {
            i.status = ItemStatus::Open;
            i
        }).collect(), 3, &events)
        .unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        s.export(&mut a).unwrap();
        r.export(&mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("wordnet_id,label,mean_nsfw_train,category,file_names\n"));
        let rows = read_survey_export(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.category.is_positive() && r.mean_nsfw_train.is_some()));
    }

    #[test]
    fn empty_export_is_header_only() {
        let s = state(1);
        let mut out = Vec::new();
        s.export(&mut out).unwrap();
        assert_eq!(out, b"wordnet_id,label,mean_nsfw_train,category,file_names\n");
    }

    #[test]
    fn bad_log_line_is_reported() {
        let err = read_event_log("\n{oops}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, SurveyError::Log { line: 2, .. }));
    }
}
