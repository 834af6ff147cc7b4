//! Label vocabulary screening against term lists, and watchlists of
//! classes called out on the audit card.
//!
//! Term and watchlist files hold one entry per line; blank lines and lines
//! starting with `#` are skipped.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{is_synset_id, ClassInfo, CsvWriter, IngestError, TaxonomyRecord};

#[derive(Debug, Error)]
pub enum ScreeningError {
    #[error("watchlist {list}: `{entry}` is listed twice (line {line})")]
    DuplicateEntry {
        list: String,
        entry: String,
        line: u64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercased, trimmed, inner whitespace collapsed.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_phrase(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningHit {
    pub record: TaxonomyRecord,
    pub term: String,
}

/// Whole-word, case-insensitive matches of `denylist` terms in class names.
/// Multi-word terms match as contiguous token runs. A class reports the
/// first matching term in list order. Sorted by `n_images` descending, then
/// class index.
pub fn screen_labels(vocab: &[TaxonomyRecord], denylist: &[String]) -> Vec<ScreeningHit> {
    let terms: Vec<(String, Vec<String>)> = denylist
        .iter()
        .map(|t| (normalize(t), tokens(t)))
        .filter(|(_, tok)| !tok.is_empty())
        .collect();
    let mut hits: Vec<ScreeningHit> = vocab
        .iter()
        .filter_map(|r| {
            let words = tokens(&r.class_name);
            terms
                .iter()
                .find(|(_, t)| contains_phrase(&words, t))
                .map(|(term, _)| ScreeningHit {
                    record: r.clone(),
                    term: term.clone(),
                })
        })
        .collect();
    hits.sort_by(|a, b| {
        b.record
            .n_images
            .cmp(&a.record.n_images)
            .then(a.record.class_ind.cmp(&b.record.class_ind))
    });
    hits
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intersection {
    pub matches: Vec<TaxonomyRecord>,
    pub count: usize,
}

/// Vocabulary records whose normalized name is in `reference`, in
/// vocabulary order.
pub fn intersect_label_sets(vocab: &[TaxonomyRecord], reference: &[String]) -> Intersection {
    let reference: BTreeSet<String> = reference.iter().map(|r| normalize(r)).collect();
    let matches: Vec<TaxonomyRecord> = vocab
        .iter()
        .filter(|r| reference.contains(&normalize(&r.class_name)))
        .cloned()
        .collect();
    Intersection {
        count: matches.len(),
        matches,
    }
}

fn entries<R: Read>(input: R) -> impl Iterator<Item = std::io::Result<(u64, String)>> {
    BufReader::new(input)
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(e)),
            Ok(l) => {
                let t = l.trim();
                (!t.is_empty() && !t.starts_with('#')).then(|| Ok((i as u64 + 1, t.to_string())))
            }
        })
}

/// Reads a term list, normalizing and dropping repeats.
pub fn read_term_list<R: Read>(input: R) -> Result<Vec<String>, ScreeningError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for e in entries(input) {
        let term = normalize(&e?.1);
        if seen.insert(term.clone()) {
            out.push(term);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchEntry {
    pub wordnet_id: Option<String>,
    pub label: String,
}

impl WatchEntry {
    fn key(&self) -> String {
        self.wordnet_id.clone().unwrap_or_else(|| normalize(&self.label))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Watchlist {
    pub name: String,
    pub entries: Vec<WatchEntry>,
}

impl Watchlist {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reads a watchlist. An entry is a label, optionally preceded by a synset
/// id (`n02804414 bassinet`). Order is kept; repeats are rejected.
pub fn load_watchlist<R: Read>(name: &str, input: R) -> Result<Watchlist, ScreeningError> {
    let mut seen = BTreeSet::new();
    let mut list = Vec::new();
    for e in entries(input) {
        let (line, text) = e?;
        let (id, label) = match text.split_once(char::is_whitespace) {
            Some((head, rest)) if is_synset_id(head) => (Some(head.to_string()), rest.trim()),
            _ if is_synset_id(&text) => (Some(text.clone()), ""),
            _ => (None, text.as_str()),
        };
        let entry = WatchEntry {
            wordnet_id: id,
            label: label.to_string(),
        };
        if !seen.insert(entry.key()) {
            return Err(ScreeningError::DuplicateEntry {
                list: name.to_string(),
                entry: text,
                line,
            });
        }
        list.push(entry);
    }
    Ok(Watchlist {
        name: name.to_string(),
        entries: list,
    })
}

/// Splits an ImageNet-style label `maillot, tank suit` (or `maillot - tank
/// suit`) into its normalized synonyms.
fn synonyms(label: &str) -> Vec<String> {
    label
        .split([',', ';'])
        .flat_map(|p| p.split(" - "))
        .map(normalize)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Matches watchlist entries to manifest classes by synset id, or by
/// label: the whole label or any of its synonyms. Returns the matched
/// classes in watchlist order and the entries left unmatched.
pub fn resolve_watchlist(list: &Watchlist, classes: &[ClassInfo]) -> (Vec<ClassInfo>, Vec<WatchEntry>) {
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for e in &list.entries {
        let hit = classes.iter().find(|c| match &e.wordnet_id {
            Some(id) => &c.wordnet_id == id,
            None => {
                let want = normalize(&e.label);
                normalize(&c.label) == want
                    || synonyms(&c.label).contains(&want)
                    || synonyms(&e.label) == synonyms(&c.label)
            }
        });
        match hit {
            Some(c) => found.push(c.clone()),
            None => missing.push(e.clone()),
        }
    }
    (found, missing)
}

/// `screening_report.csv`: denylist hits then reference-list matches.
pub fn write_screening_report<W: Write>(
    out: W,
    hits: &[ScreeningHit],
    intersection: Option<&Intersection>,
) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(["list", "class_ind", "class_name", "n_images", "matched_term"])?;
    for h in hits {
        w.row([
            "denylist".to_string(),
            h.record.class_ind.to_string(),
            h.record.class_name.clone(),
            h.record.n_images.to_string(),
            h.term.clone(),
        ])?;
    }
    for r in intersection.map_or(&[][..], |i| &i.matches) {
        w.row([
            "reference".to_string(),
            r.class_ind.to_string(),
            r.class_name.clone(),
            r.n_images.to_string(),
            normalize(&r.class_name),
        ])?;
    }
    w.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ind: u64, name: &str, n: u64) -> TaxonomyRecord {
        TaxonomyRecord {
            class_ind: ind,
            class_name: name.into(),
            n_images: n,
        }
    }

    #[test]
    fn whole_word_hits_sorted_by_count() {
        let vocab = [
            rec(0, "xyzzy", 5),
            rec(1, "plain noun", 7),
            rec(2, "Big Xyzzy", 50),
            rec(3, "xyzzyfold", 900),
        ];
        let hits = screen_labels(&vocab, &["xyzzy".into()]);
        let counts: Vec<u64> = hits.iter().map(|h| h.record.n_images).collect();
        assert_eq!(counts, [50, 5]);
        assert!(screen_labels(&vocab, &[]).is_empty());
    }

    #[test]
    fn phrases_match_token_runs() {
        let vocab = [rec(0, "foo-bar baz", 1), rec(1, "bar foo", 1)];
        let hits = screen_labels(&vocab, &["Foo Bar".into()]);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].record.class_ind, 0);
        assert_eq!(hits[0].term, "foo bar");
    }

    #[test]
    fn normalization_is_idempotent() {
        let raw = [rec(0, "  Qux  Quux ", 3), rec(1, "QUUX", 2)];
        let norm: Vec<TaxonomyRecord> = raw
            .iter()
            .map(|r| rec(r.class_ind, &normalize(&r.class_name), r.n_images))
            .collect();
        let terms = vec!["quux".to_string()];
        let a: Vec<u64> = screen_labels(&raw, &terms).iter().map(|h| h.record.class_ind).collect();
        let b: Vec<u64> = screen_labels(&norm, &terms).iter().map(|h| h.record.class_ind).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn intersection_counts() {
        let vocab = [rec(0, "a", 1), rec(1, "B ", 1), rec(2, "c", 1)];
        let i = intersect_label_sets(&vocab, &["b".into(), "c".into(), "d".into()]);
        assert_eq!(i.count, 2);
        assert_eq!(intersect_label_sets(&vocab, &["z".into()]).count, 0);
    }

    #[test]
    fn watchlists() {
        let w = load_watchlist("infants", "# infants\nbassinet\nn03125729 cradle\n\ncrib\n".as_bytes())
            .unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.entries[0].label, "bassinet");
        assert_eq!(w.entries[1].wordnet_id.as_deref(), Some("n03125729"));
        assert!(load_watchlist("e", "".as_bytes()).unwrap().is_empty());
        let err = load_watchlist("infants", "crib\nbib\nCrib\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ScreeningError::DuplicateEntry { line: 3, .. }));
    }

    #[test]
    fn watchlist_resolution_uses_synonyms() {
        let classes = vec![
            ClassInfo {
                class_index: 639,
                wordnet_id: "n03710721".into(),
                label: "maillot, tank suit".into(),
            },
            ClassInfo {
                class_index: 520,
                wordnet_id: "n03131574".into(),
                label: "crib, cot".into(),
            },
        ];
        let w = load_watchlist("x", "maillot - tank suit\ncot\nkite\n".as_bytes()).unwrap();
        let (found, missing) = resolve_watchlist(&w, &classes);
        assert_eq!(found.len(), 2);
        assert_eq!(missing[0].label, "kite");
    }
}
