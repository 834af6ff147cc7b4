//! Inputs and derived tables for one run. Everything is loaded or computed
//! at most once, so `audit all` produces exactly what the separate stage
//! commands would.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use anyhow::{anyhow, Context as _};
use log::{info, warn};

use audit_core::accuracy::{class_accuracy, ClassAccuracy};
use audit_core::bias::{read_external_table, read_group_mapping, ExternalTable, GroupAssignment};
use audit_core::census::{
    compare_models, compute_class_census, summarize_dataset, CensusConfig, ClassCensusRow,
    CrossModelReport, SummaryCounts,
};
use audit_core::ingest::{
    self, ClassInfo, ClassSize, FaceAnnotation, FaceModel, IngestError, LabelEmbedding,
    NsfwAnnotation, ParseMode, Parsed, PredictionRecord, Split, TaxonomyRecord,
};
use audit_core::nsfw::{
    affinity_propagation, class_nsfw_stats, cluster_features, feature_points, select_shortlist,
    ClassFeature, ClassNsfwStats, ClusteringResult, NsfwScorer, Shortlist,
};
use audit_core::screening::{load_watchlist, read_term_list, resolve_watchlist, WatchEntry, Watchlist};
use audit_core::semantics::{resolve_coords, SemanticCoord};
use audit_core::survey::{
    build_queue, queue_entries, read_event_log, read_queue_entries, QueueEntry, SurveyError,
    SurveyState,
};

use crate::config::Config;
use crate::error::{located, usage};

pub type Result<T> = anyhow::Result<T>;

fn cached<T>(cell: &OnceLock<T>, init: impl FnOnce() -> Result<T>) -> Result<&T> {
    if let Some(v) = cell.get() {
        return Ok(v);
    }
    let v = init()?;
    Ok(cell.get_or_init(|| v))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("{}: cannot open", path.display()))
}

fn parse_file<T>(
    path: &Path,
    parse: impl FnOnce(BufReader<File>) -> std::result::Result<Parsed<T>, IngestError>,
) -> Result<Vec<T>> {
    let parsed = parse(open(path)?).map_err(|e| anyhow!(located(path, &e)))?;
    for e in &parsed.skipped {
        warn!("skipped {}", located(path, e));
    }
    if parsed.skipped.is_empty() {
        info!("{}: {} rows", path.display(), parsed.records.len());
    } else {
        info!(
            "{}: {} rows, {} skipped",
            path.display(),
            parsed.records.len(),
            parsed.skipped.len()
        );
    }
    Ok(parsed.records)
}

fn read_with<T, E: std::fmt::Display>(
    path: &Path,
    read: impl FnOnce(BufReader<File>) -> std::result::Result<T, E>,
) -> Result<T> {
    read(open(path)?).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn ingest_with<T>(
    path: &Path,
    read: impl FnOnce(BufReader<File>) -> std::result::Result<T, IngestError>,
) -> Result<T> {
    read(open(path)?).map_err(|e| anyhow!(located(path, &e)))
}

/// Affinity-propagation output with the inputs it clustered.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub features: Vec<ClassFeature>,
    pub result: ClusteringResult,
    pub shortlist: Shortlist,
}

/// A watchlist resolved against the class manifest.
#[derive(Debug, Clone)]
pub struct ResolvedWatchlist {
    pub list: Watchlist,
    pub found: Vec<ClassInfo>,
    pub missing: Vec<WatchEntry>,
}

impl ResolvedWatchlist {
    /// The list restricted to classes present in the dataset, labelled as
    /// the manifest labels them.
    pub fn present(&self) -> Watchlist {
        Watchlist {
            name: self.list.name.clone(),
            entries: self
                .found
                .iter()
                .map(|c| WatchEntry {
                    wordnet_id: Some(c.wordnet_id.clone()),
                    label: c.label.clone(),
                })
                .collect(),
        }
    }
}

pub struct Context {
    pub cfg: Config,
    pub mode: ParseMode,
    classes: OnceLock<Vec<ClassInfo>>,
    class_sizes: OnceLock<Vec<ClassSize>>,
    faces: OnceLock<Vec<FaceAnnotation>>,
    nsfw: OnceLock<Vec<NsfwAnnotation>>,
    nsfw_stats: OnceLock<Vec<ClassNsfwStats>>,
    census: OnceLock<Vec<ClassCensusRow>>,
    summary: OnceLock<SummaryCounts>,
    cross_model: OnceLock<Option<CrossModelReport>>,
    clustering: OnceLock<Clustering>,
    predictions: OnceLock<Vec<PredictionRecord>>,
    accuracy: OnceLock<Vec<ClassAccuracy>>,
    embeddings: OnceLock<Vec<LabelEmbedding>>,
    coords: OnceLock<Vec<SemanticCoord>>,
    vocabulary: OnceLock<Vec<TaxonomyRecord>>,
    watchlists: OnceLock<Vec<ResolvedWatchlist>>,
    survey: OnceLock<SurveyState>,
}

impl Context {
    pub fn new(cfg: Config, mode: ParseMode) -> Self {
        Self {
            cfg,
            mode,
            classes: OnceLock::new(),
            class_sizes: OnceLock::new(),
            faces: OnceLock::new(),
            nsfw: OnceLock::new(),
            nsfw_stats: OnceLock::new(),
            census: OnceLock::new(),
            summary: OnceLock::new(),
            cross_model: OnceLock::new(),
            clustering: OnceLock::new(),
            predictions: OnceLock::new(),
            accuracy: OnceLock::new(),
            embeddings: OnceLock::new(),
            coords: OnceLock::new(),
            vocabulary: OnceLock::new(),
            watchlists: OnceLock::new(),
            survey: OnceLock::new(),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.paths.out
    }

    pub fn census_config(&self) -> CensusConfig {
        CensusConfig {
            gender_threshold: self.cfg.gender.threshold,
        }
    }

    /// Writes `name` under the output directory through a temporary file,
    /// so an interrupted run never leaves a truncated table behind.
    pub fn write_output(
        &self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> std::result::Result<(), IngestError>,
    ) -> Result<PathBuf> {
        let dir = self.out_dir();
        std::fs::create_dir_all(dir).with_context(|| format!("{}: cannot create", dir.display()))?;
        let path = dir.join(name);
        let tmp = dir.join(format!(".{name}.tmp"));
        let file = File::create(&tmp).with_context(|| format!("{}: cannot create", tmp.display()))?;
        let mut w = BufWriter::new(file);
        write(&mut w).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        w.flush().with_context(|| format!("{}: write failed", path.display()))?;
        drop(w);
        std::fs::rename(&tmp, &path).with_context(|| format!("{}: cannot write", path.display()))?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn classes(&self) -> Result<&[ClassInfo]> {
        cached(&self.classes, || {
            let path = need(&self.cfg.paths.classes, "paths.classes", "--classes")?;
            parse_file(path, |r| ingest::parse_class_index(r, self.mode))
        })
        .map(Vec::as_slice)
    }

    pub fn manifest_ids(&self) -> Result<Vec<String>> {
        Ok(self.classes()?.iter().map(|c| c.wordnet_id.clone()).collect())
    }

    /// From `paths.class_sizes`, else counted from the content-score
    /// annotations (which cover every image).
    pub fn class_sizes(&self) -> Result<&[ClassSize]> {
        cached(&self.class_sizes, || {
            if let Some(path) = &self.cfg.paths.class_sizes {
                return parse_file(path, |r| ingest::parse_class_sizes(r, self.mode));
            }
            if self.cfg.paths.nsfw.is_none() {
                return Err(usage(
                    "class sizes need paths.class_sizes (--class-sizes) or paths.nsfw (--nsfw)",
                ));
            }
            let mut counts: BTreeMap<&str, [u64; 2]> = self
                .classes()?
                .iter()
                .map(|c| (c.wordnet_id.as_str(), [0, 0]))
                .collect();
            for a in self.nsfw()? {
                let slot = counts.entry(&a.image.wordnet_id).or_default();
                slot[usize::from(a.image.split == Split::Val)] += 1;
            }
            Ok(counts
                .into_iter()
                .map(|(id, [n_train, n_val])| ClassSize {
                    wordnet_id: id.to_string(),
                    n_train,
                    n_val,
                })
                .collect())
        })
        .map(Vec::as_slice)
    }

    /// All face files concatenated. A face listed twice across files is an
    /// error, as it is within one file.
    pub fn faces(&self) -> Result<&[FaceAnnotation]> {
        cached(&self.faces, || {
            let paths = self.cfg.paths.faces.paths();
            if paths.is_empty() {
                return Err(usage("no face annotations: set paths.faces or pass --faces"));
            }
            let mut all = Vec::new();
            let mut seen = HashSet::new();
            for path in &paths {
                for f in parse_file(path, |r| ingest::parse_faces(r, None, self.mode))? {
                    if !seen.insert((f.image.clone(), f.model, f.face_index)) {
                        return Err(anyhow!(
                            "{}: face {} of {} ({}) also appears in an earlier file",
                            path.display(),
                            f.face_index,
                            f.image,
                            f.model
                        ));
                    }
                    all.push(f);
                }
            }
            Ok(all)
        })
        .map(Vec::as_slice)
    }

    pub fn face_models(&self) -> Result<Vec<FaceModel>> {
        let models: BTreeSet<FaceModel> = self.faces()?.iter().map(|f| f.model).collect();
        Ok(models.into_iter().collect())
    }

    pub fn nsfw(&self) -> Result<&[NsfwAnnotation]> {
        cached(&self.nsfw, || {
            let path = need(&self.cfg.paths.nsfw, "paths.nsfw", "--nsfw")?;
            parse_file(path, |r| ingest::parse_nsfw(r, self.mode))
        })
        .map(Vec::as_slice)
    }

    pub fn nsfw_stats(&self) -> Result<&[ClassNsfwStats]> {
        cached(&self.nsfw_stats, || {
            let scorer = NsfwScorer {
                positive: self.cfg.nsfw.classes().map_err(|e| usage(e.to_string()))?,
            };
            Ok(class_nsfw_stats(self.nsfw()?, &scorer)?)
        })
        .map(Vec::as_slice)
    }

    /// Rows for every face model present, both splits, in (model, split,
    /// class) order.
    pub fn census(&self) -> Result<&[ClassCensusRow]> {
        cached(&self.census, || {
            let faces = self.faces()?;
            let sizes = self.class_sizes()?;
            let cfg = self.census_config();
            let mut rows = Vec::new();
            for model in self.face_models()? {
                for split in Split::ALL {
                    rows.extend(compute_class_census(faces, sizes, model, split, &cfg)?);
                }
            }
            Ok(rows)
        })
        .map(Vec::as_slice)
    }

    pub fn census_rows(&self, model: FaceModel, split: Split) -> Result<Vec<ClassCensusRow>> {
        let rows: Vec<ClassCensusRow> = self
            .census()?
            .iter()
            .filter(|r| r.model == model && r.split == split)
            .cloned()
            .collect();
        if rows.is_empty() {
            return Err(usage(format!("analysis needs {model} face annotations, none were given")));
        }
        Ok(rows)
    }

    pub fn summary(&self) -> Result<&SummaryCounts> {
        cached(&self.summary, || {
            Ok(summarize_dataset(self.census()?, self.faces()?, &self.census_config())?)
        })
    }

    /// DEX against InsightFace on the train split, when both are present.
    pub fn cross_model(&self) -> Result<Option<&CrossModelReport>> {
        cached(&self.cross_model, || {
            let models = self.face_models()?;
            if !(models.contains(&FaceModel::Dex) && models.contains(&FaceModel::InsightFace)) {
                return Ok(None);
            }
            let dex = self.census_rows(FaceModel::Dex, Split::Train)?;
            let insight = self.census_rows(FaceModel::InsightFace, Split::Train)?;
            Ok(Some(compare_models(&dex, &insight)?))
        })
        .map(Option::as_ref)
    }

    pub fn clustering(&self) -> Result<&Clustering> {
        cached(&self.clustering, || {
            let model = self.cfg.shortlist.model().map_err(|e| usage(e.to_string()))?;
            let params = self.cfg.ap.params().map_err(|e| usage(e.to_string()))?;
            let rows = self.census_rows(model, Split::Train)?;
            let features = cluster_features(&rows, self.nsfw_stats()?, self.classes()?);
            let points = feature_points(&features, self.cfg.ap.standardize);
            let result = affinity_propagation(&points, &params)?;
            if result.converged {
                info!(
                    "affinity propagation: {} clusters over {} classes after {} iterations",
                    result.n_clusters(),
                    features.len(),
                    result.n_iterations
                );
            } else {
                warn!(
                    "affinity propagation did not converge within {} iterations; using the last exemplars ({} clusters)",
                    params.max_iter,
                    result.n_clusters()
                );
            }
            let images = self.nsfw()?.iter().map(|a| &a.image);
            let shortlist = select_shortlist(&features, &result, images, self.cfg.shortlist.include_val)?;
            info!(
                "shortlist: {} classes, {} images",
                shortlist.classes.len(),
                shortlist.images.len()
            );
            Ok(Clustering {
                features,
                result,
                shortlist,
            })
        })
    }

    pub fn predictions(&self) -> Result<&[PredictionRecord]> {
        cached(&self.predictions, || {
            let paths = self.cfg.paths.predictions.paths();
            if paths.is_empty() {
                return Err(usage("no predictions: set paths.predictions or pass --predictions"));
            }
            let mut all = Vec::new();
            for path in &paths {
                all.extend(parse_file(path, |r| ingest::parse_predictions(r, None, self.mode))?);
            }
            Ok(all)
        })
        .map(Vec::as_slice)
    }

    pub fn accuracy(&self) -> Result<&[ClassAccuracy]> {
        cached(&self.accuracy, || {
            Ok(class_accuracy(self.predictions()?, &self.manifest_ids()?)?)
        })
        .map(Vec::as_slice)
    }

    pub fn embeddings(&self) -> Result<&[LabelEmbedding]> {
        cached(&self.embeddings, || {
            let paths = self.cfg.paths.embeddings.paths();
            if paths.is_empty() {
                return Err(usage("no label embeddings: set paths.embeddings or pass --embeddings"));
            }
            let mut all = Vec::new();
            for path in &paths {
                all.extend(parse_file(path, |r| ingest::parse_embeddings(r, self.mode))?);
            }
            Ok(all)
        })
        .map(Vec::as_slice)
    }

    pub fn coords(&self) -> Result<&[SemanticCoord]> {
        cached(&self.coords, || Ok(resolve_coords(self.embeddings()?)?)).map(Vec::as_slice)
    }

    pub fn vocabulary(&self) -> Result<&[TaxonomyRecord]> {
        cached(&self.vocabulary, || {
            let path = need(&self.cfg.paths.vocabulary, "paths.vocabulary", "--vocabulary")?;
            parse_file(path, |r| ingest::parse_vocabulary(r, self.mode))
        })
        .map(Vec::as_slice)
    }

    pub fn term_list(&self, path: &Path) -> Result<Vec<String>> {
        let terms = read_with(path, read_term_list)?;
        info!("{}: {} terms", path.display(), terms.len());
        Ok(terms)
    }

    pub fn group_mapping(&self) -> Result<Option<Vec<GroupAssignment>>> {
        self.cfg
            .paths
            .groups
            .as_deref()
            .map(|p| ingest_with(p, read_group_mapping))
            .transpose()
    }

    /// The classes the group analysis covers, in manifest order.
    pub fn group_classes(&self, mapping: &[GroupAssignment]) -> Result<Vec<String>> {
        let wanted: BTreeSet<String> = match &self.cfg.paths.group_classes {
            Some(p) => self.resolve_list("group_classes", p)?.found.into_iter().map(|c| c.wordnet_id).collect(),
            None => mapping.iter().map(|m| m.wordnet_id.clone()).collect(),
        };
        Ok(self.manifest_ids()?.into_iter().filter(|id| wanted.contains(id)).collect())
    }

    pub fn ranking_list(&self) -> Result<Option<ResolvedWatchlist>> {
        self.cfg
            .paths
            .ranking
            .as_deref()
            .map(|p| self.resolve_list("ranking", p))
            .transpose()
    }

    fn resolve_list(&self, name: &str, path: &Path) -> Result<ResolvedWatchlist> {
        let list = read_with(path, |r| load_watchlist(name, r))?;
        let (found, missing) = resolve_watchlist(&list, self.classes()?);
        for m in &missing {
            warn!("{}: `{}` matches no class in the manifest", path.display(), m.label);
        }
        Ok(ResolvedWatchlist { list, found, missing })
    }

    /// Configured watchlists, by name.
    pub fn watchlists(&self) -> Result<&[ResolvedWatchlist]> {
        cached(&self.watchlists, || {
            self.cfg
                .paths
                .watchlists
                .iter()
                .map(|(name, path)| self.resolve_list(name, path))
                .collect()
        })
        .map(Vec::as_slice)
    }

    pub fn external_tables(&self) -> Result<Vec<(String, ExternalTable)>> {
        self.cfg
            .paths
            .external
            .iter()
            .map(|(name, path)| Ok((name.clone(), ingest_with(path, read_external_table)?)))
            .collect()
    }

    /// The survey queue: `paths.survey_queue` if set, else the shortlist.
    pub fn queue(&self) -> Result<Vec<QueueEntry>> {
        match &self.cfg.paths.survey_queue {
            Some(path) => ingest_with(path, read_queue_entries),
            None => Ok(queue_entries(&self.clustering()?.shortlist)),
        }
    }

    pub fn survey_log_path(&self) -> Result<&Path> {
        self.cfg
            .paths
            .survey_log
            .as_deref()
            .ok_or_else(|| usage("the survey needs paths.survey_log"))
    }

    /// The queue with the event log replayed onto it. A log that does not
    /// exist yet means no labels so far.
    pub fn survey(&self) -> Result<&SurveyState> {
        cached(&self.survey, || self.load_survey())
    }

    pub fn load_survey(&self) -> Result<SurveyState> {
        let log = self.survey_log_path()?;
        let items = build_queue(&self.queue()?)?;
        let events = if log.exists() {
            read_event_log(open(log)?).map_err(|e| match e {
                SurveyError::Log { line, reason } => anyhow!("{}:{line}: {reason}", log.display()),
                other => anyhow!("{}: {other}", log.display()),
            })?
        } else {
            Vec::new()
        };
        let mut state = SurveyState::new(items, self.cfg.survey.quorum).map_err(|e| usage(e.to_string()))?;
        for (i, e) in events.into_iter().enumerate() {
            state
                .apply(e)
                .map_err(|err| anyhow!("{}: event {}: {err}", log.display(), i + 1))?;
        }
        let p = state.progress();
        info!(
            "survey: {} items, {} labels, {} consensus, {} exhausted",
            p.total_items, p.total_labels, p.consensus, p.exhausted
        );
        Ok(state)
    }
}

fn need<'a>(path: &'a Option<PathBuf>, key: &str, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| usage(format!("missing input: set {key} or pass {flag}")))
}
