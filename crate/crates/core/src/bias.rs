//! Gender co-occurrence breakdowns over class groups (dog breeds by kennel
//! club group) and skewness rankings over class subsets (instruments).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::census::ClassCensusRow;
use crate::ingest::{fmt_f64, ClassInfo, CsvWriter, IngestError};
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum BiasError {
    #[error("class {0} is mapped more than once")]
    DuplicateMapping(String),
    #[error("no census row for {0:?}")]
    KeyMismatch(Vec<String>),
}

/// Group labels, in reporting order. Free-form groups sort after the
/// kennel club groups (by name) and before `Unknown`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupName {
    Toy,
    Hound,
    Sporting,
    Terrier,
    NonSporting,
    Working,
    Herding,
    Custom(String),
    Unknown,
}

impl GroupName {
    /// Accepts the kennel club spellings case- and punctuation-insensitively
    /// (`Non-Sporting`, `non_sporting`, ...); anything else is `Custom`.
    pub fn parse(s: &str) -> Self {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "toy" => GroupName::Toy,
            "hound" => GroupName::Hound,
            "sporting" => GroupName::Sporting,
            "terrier" => GroupName::Terrier,
            "nonsporting" => GroupName::NonSporting,
            "working" => GroupName::Working,
            "herding" => GroupName::Herding,
            "unknown" => GroupName::Unknown,
            _ => GroupName::Custom(s.trim().to_string()),
        }
    }
}

impl fmt::Display for GroupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupName::Toy => "Toy",
            GroupName::Hound => "Hound",
            GroupName::Sporting => "Sporting",
            GroupName::Terrier => "Terrier",
            GroupName::NonSporting => "Non-Sporting",
            GroupName::Working => "Working",
            GroupName::Herding => "Herding",
            GroupName::Custom(s) => s,
            GroupName::Unknown => "Unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub wordnet_id: String,
    pub group: GroupName,
}

/// Reads a `wordnet_id,group` mapping file. Lines starting with `#` are
/// comments.
pub fn read_group_mapping<R: Read>(input: R) -> Result<Vec<GroupAssignment>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(input);
    let header = rdr.headers()?.clone();
    if !header.iter().eq(["wordnet_id", "group"]) {
        return Err(IngestError::Header {
            expected: "wordnet_id,group".into(),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 || rec[0].trim().is_empty() || rec[1].trim().is_empty() {
            return Err(IngestError::MalformedRow {
                line,
                reason: "expected `wordnet_id,group`".into(),
            });
        }
        out.push(GroupAssignment {
            wordnet_id: rec[0].trim().to_string(),
            group: GroupName::parse(&rec[1]),
        });
    }
    Ok(out)
}

/// Assigns every class its mapped group, `Unknown` when unmapped. Mapping
/// entries for classes outside `classes` are ignored.
pub fn assign_groups(
    classes: &[String],
    mapping: &[GroupAssignment],
) -> Result<Vec<GroupAssignment>, BiasError> {
    let mut map: BTreeMap<&str, &GroupName> = BTreeMap::new();
    for m in mapping {
        if map.insert(&m.wordnet_id, &m.group).is_some() {
            return Err(BiasError::DuplicateMapping(m.wordnet_id.clone()));
        }
    }
    Ok(classes
        .iter()
        .map(|c| GroupAssignment {
            wordnet_id: c.clone(),
            group: map.get(c.as_str()).map_or(GroupName::Unknown, |g| (*g).clone()),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDistribution {
    pub group: GroupName,
    /// All assigned classes, sorted.
    pub members: Vec<String>,
    /// Mean gender score of each member with at least one face, in
    /// `members` order. Faceless members contribute no value.
    pub values: Vec<f64>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub std: Option<f64>,
}

fn rows_by_class(rows: &[ClassCensusRow]) -> BTreeMap<&str, &ClassCensusRow> {
    rows.iter().map(|r| (r.wordnet_id.as_str(), r)).collect()
}

/// Per-group spread of class mean gender scores. `census` should hold one
/// model and split (the analysis uses DEX train rows).
pub fn group_gender_distributions(
    assignments: &[GroupAssignment],
    census: &[ClassCensusRow],
) -> Result<Vec<GroupDistribution>, BiasError> {
    let rows = rows_by_class(census);
    let missing: Vec<String> = assignments
        .iter()
        .filter(|a| !rows.contains_key(a.wordnet_id.as_str()))
        .map(|a| a.wordnet_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(BiasError::KeyMismatch(missing));
    }
    let mut groups: BTreeMap<&GroupName, BTreeSet<&str>> = BTreeMap::new();
    for a in assignments {
        groups.entry(&a.group).or_default().insert(&a.wordnet_id);
    }
    Ok(groups
        .into_iter()
        .map(|(group, members)| {
            let values: Vec<f64> = members.iter().filter_map(|id| rows[id].mu).collect();
            GroupDistribution {
                group: group.clone(),
                members: members.iter().map(|s| s.to_string()).collect(),
                mean: stats::mean(&values).ok(),
                median: stats::median(&values),
                std: stats::population_std(&values).ok(),
                values,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedClass {
    pub wordnet_id: String,
    pub label: String,
    pub xi: f64,
}

/// Orders `subset` by ascending skewness (most female-leaning first), ties
/// by `wordnet_id`. Labels come from `classes` when listed there.
pub fn skewness_ranking(
    subset: &[String],
    census: &[ClassCensusRow],
    classes: &[ClassInfo],
) -> Result<Vec<RankedClass>, BiasError> {
    let rows = rows_by_class(census);
    let labels: BTreeMap<&str, &str> = classes
        .iter()
        .map(|c| (c.wordnet_id.as_str(), c.label.as_str()))
        .collect();
    let missing: Vec<String> = subset
        .iter()
        .filter(|id| !rows.contains_key(id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(BiasError::KeyMismatch(missing));
    }
    let unique: BTreeSet<&str> = subset.iter().map(String::as_str).collect();
    let mut ranked: Vec<RankedClass> = unique
        .into_iter()
        .map(|id| RankedClass {
            wordnet_id: id.to_string(),
            label: labels.get(id).copied().unwrap_or_default().to_string(),
            xi: rows[id].xi,
        })
        .collect();
    ranked.sort_by(|a, b| a.xi.total_cmp(&b.xi).then_with(|| a.wordnet_id.cmp(&b.wordnet_id)));
    Ok(ranked)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// `bias_groups.csv`; member ids are space-separated.
pub fn write_group_distributions<W: Write>(
    out: W,
    groups: &[GroupDistribution],
) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row([
        "group",
        "n_classes",
        "n_scored",
        "mean_gender",
        "median_gender",
        "std_gender",
        "members",
    ])?;
    for g in groups {
        w.row([
            g.group.to_string(),
            g.members.len().to_string(),
            g.values.len().to_string(),
            opt(g.mean),
            opt(g.median),
            opt(g.std),
            g.members.join(" "),
        ])?;
    }
    w.finish()?;
    Ok(())
}

/// `bias_ranking.csv`.
pub fn write_ranking<W: Write>(out: W, ranking: &[RankedClass]) -> Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(["rank", "wordnet_id", "label", "xi"])?;
    for (i, r) in ranking.iter().enumerate() {
        w.row([
            (i + 1).to_string(),
            r.wordnet_id.clone(),
            r.label.clone(),
            fmt_f64(r.xi),
        ])?;
    }
    w.finish()?;
    Ok(())
}

/// An arbitrary external CSV carried through to the card verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_external_table<R: Read>(input: R) -> Result<ExternalTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    let columns = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    Ok(ExternalTable { columns, rows })
}
