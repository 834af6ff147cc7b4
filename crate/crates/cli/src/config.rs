//! `audit.toml`: input/output paths and stage parameters.
//!
//! Relative paths in the file are taken relative to the file's directory;
//! command-line overrides are taken as given.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use serde::Deserialize;

use audit_core::census::DEFAULT_GENDER_THRESHOLD;
use audit_core::ingest::{FaceModel, NsfwClass};
use audit_core::nsfw::{ApParams, Preference};
use audit_core::survey::{Category, DEFAULT_QUORUM};

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub census: CensusSection,
    pub gender: GenderSection,
    pub nsfw: NsfwSection,
    pub ap: ApSection,
    pub shortlist: ShortlistSection,
    pub bias: BiasSection,
    pub survey: SurveySection,
    pub accuracy: AccuracySection,
    pub card: CardSection,
}

/// A path or a list of paths.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OneOrMany {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl Default for OneOrMany {
    fn default() -> Self {
        OneOrMany::Many(Vec::new())
    }
}

impl OneOrMany {
    pub fn paths(&self) -> Vec<PathBuf> {
        match self {
            OneOrMany::One(p) => vec![p.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub classes: Option<PathBuf>,
    pub class_sizes: Option<PathBuf>,
    pub faces: OneOrMany,
    pub nsfw: Option<PathBuf>,
    pub predictions: OneOrMany,
    pub embeddings: OneOrMany,
    pub vocabulary: Option<PathBuf>,
    pub denylist: Option<PathBuf>,
    pub reference_labels: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    /// Watchlist naming the classes to group; classes it names that the
    /// mapping lacks land in `Unknown`. Defaults to the mapped classes.
    pub group_classes: Option<PathBuf>,
    /// Watchlist whose classes get the skewness ranking.
    pub ranking: Option<PathBuf>,
    pub watchlists: BTreeMap<String, PathBuf>,
    pub external: BTreeMap<String, PathBuf>,
    /// Queue for the survey; defaults to the computed shortlist.
    pub survey_queue: Option<PathBuf>,
    pub survey_log: Option<PathBuf>,
    pub image_root: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            classes: None,
            class_sizes: None,
            faces: OneOrMany::default(),
            nsfw: None,
            predictions: OneOrMany::default(),
            embeddings: OneOrMany::default(),
            vocabulary: None,
            denylist: None,
            reference_labels: None,
            groups: None,
            group_classes: None,
            ranking: None,
            watchlists: BTreeMap::new(),
            external: BTreeMap::new(),
            survey_queue: None,
            survey_log: None,
            image_root: None,
            static_dir: None,
            out: PathBuf::from("out"),
        }
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                fix(p)
            }
        };
        let fix_many = |m: &mut OneOrMany| match m {
            OneOrMany::One(p) => fix(p),
            OneOrMany::Many(v) => v.iter_mut().for_each(fix),
        };
        fix_opt(&mut self.classes);
        fix_opt(&mut self.class_sizes);
        fix_many(&mut self.faces);
        fix_opt(&mut self.nsfw);
        fix_many(&mut self.predictions);
        fix_many(&mut self.embeddings);
        fix_opt(&mut self.vocabulary);
        fix_opt(&mut self.denylist);
        fix_opt(&mut self.reference_labels);
        fix_opt(&mut self.groups);
        fix_opt(&mut self.group_classes);
        fix_opt(&mut self.ranking);
        self.watchlists.values_mut().for_each(fix);
        self.external.values_mut().for_each(fix);
        fix_opt(&mut self.survey_queue);
        fix_opt(&mut self.survey_log);
        fix_opt(&mut self.image_root);
        fix_opt(&mut self.static_dir);
        fix(&mut self.out);
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CensusSection {
    /// `<name>` in `df_census_<name>.csv`.
    pub name: String,
}

impl Default for CensusSection {
    fn default() -> Self {
        Self {
            name: "imagenet".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GenderSection {
    pub threshold: f64,
}

impl Default for GenderSection {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_GENDER_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NsfwSection {
    pub positive: Vec<String>,
}

impl Default for NsfwSection {
    fn default() -> Self {
        Self {
            positive: vec!["hentai".into(), "porn".into(), "sexy".into()],
        }
    }
}

impl NsfwSection {
    pub fn classes(&self) -> anyhow::Result<Vec<NsfwClass>> {
        self.positive
            .iter()
            .map(|s| {
                NsfwClass::ALL
                    .into_iter()
                    .find(|c| c.as_str() == s)
                    .with_context(|| format!("nsfw.positive: unknown class `{s}`"))
            })
            .collect()
    }
}

/// `"median"` or a number.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PreferenceSetting {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ApSection {
    pub damping: f64,
    pub max_iter: usize,
    pub convergence_iter: usize,
    pub preference: PreferenceSetting,
    pub standardize: bool,
}

impl Default for ApSection {
    fn default() -> Self {
        let d = ApParams::default();
        Self {
            damping: d.damping,
            max_iter: d.max_iter,
            convergence_iter: d.convergence_iter,
            preference: PreferenceSetting::Named("median".into()),
            standardize: false,
        }
    }
}

impl ApSection {
    pub fn params(&self) -> anyhow::Result<ApParams> {
        let preference = match &self.preference {
            PreferenceSetting::Value(v) => Preference::Value(*v),
            PreferenceSetting::Named(s) if s == "median" => Preference::Median,
            PreferenceSetting::Named(s) => bail!("ap.preference: expected a number or \"median\", found `{s}`"),
        };
        Ok(ApParams {
            damping: self.damping,
            max_iter: self.max_iter,
            convergence_iter: self.convergence_iter,
            preference,
        })
    }
}

fn parse_model(field: &str, s: &str) -> anyhow::Result<FaceModel> {
    s.parse()
        .map_err(|_| anyhow::anyhow!("{field}: unknown face model `{s}` (dex or insightface)"))
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ShortlistSection {
    /// Census model whose train mean gender is the clustering x feature.
    pub face_model: String,
    pub include_val: bool,
}

impl Default for ShortlistSection {
    fn default() -> Self {
        Self {
            face_model: "dex".into(),
            include_val: true,
        }
    }
}

impl ShortlistSection {
    pub fn model(&self) -> anyhow::Result<FaceModel> {
        parse_model("shortlist.face_model", &self.face_model)
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSection {
    pub face_model: String,
}

impl Default for BiasSection {
    fn default() -> Self {
        Self {
            face_model: "dex".into(),
        }
    }
}

impl BiasSection {
    pub fn model(&self) -> anyhow::Result<FaceModel> {
        parse_model("bias.face_model", &self.face_model)
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SurveySection {
    pub quorum: usize,
    /// Must name exactly the built-in categories, in any order.
    pub categories: Option<Vec<String>>,
}

impl Default for SurveySection {
    fn default() -> Self {
        Self {
            quorum: DEFAULT_QUORUM,
            categories: None,
        }
    }
}

impl SurveySection {
    pub fn check(&self) -> anyhow::Result<()> {
        if self.quorum == 0 {
            bail!("survey.quorum must be at least 1");
        }
        if let Some(cats) = &self.categories {
            let mut given: Vec<&str> = cats.iter().map(String::as_str).collect();
            let mut known: Vec<&str> = Category::ALL.iter().map(|c| c.as_str()).collect();
            given.sort_unstable();
            known.sort_unstable();
            if given != known {
                bail!("survey.categories must be {:?}", Category::ALL.map(|c| c.as_str()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AccuracySection {
    pub top_n: usize,
    /// Census model whose person counts define the human-delta.
    pub face_model: String,
}

impl Default for AccuracySection {
    fn default() -> Self {
        Self {
            top_n: 25,
            face_model: "insightface".into(),
        }
    }
}

impl AccuracySection {
    pub fn model(&self) -> anyhow::Result<FaceModel> {
        parse_model("accuracy.face_model", &self.face_model)
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CardSection {
    pub title: String,
    pub dataset: String,
    pub headline_model: String,
    pub ranking_title: String,
    /// Generation date shown in the page metadata; omitted by default so
    /// reruns are byte-identical.
    pub generated: Option<String>,
}

impl Default for CardSection {
    fn default() -> Self {
        let d = audit_core::card::CardConfig::default();
        Self {
            title: d.title,
            dataset: d.dataset,
            headline_model: d.headline_model.to_string(),
            ranking_title: d.ranking_title,
            generated: None,
        }
    }
}

impl CardSection {
    pub fn config(&self) -> anyhow::Result<audit_core::card::CardConfig> {
        Ok(audit_core::card::CardConfig {
            title: self.title.clone(),
            dataset: self.dataset.clone(),
            headline_model: parse_model("card.headline_model", &self.headline_model)?,
            generated: self.generated.clone(),
            ranking_title: self.ranking_title.clone(),
        })
    }
}

impl Config {
    pub fn parse(text: &str, base: Option<&Path>) -> anyhow::Result<Config> {
        let mut cfg: Config = toml::from_str(text)?;
        if let Some(base) = base {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Config::parse(&text, Some(base)).with_context(|| format!("{}", path.display()))
    }

    /// Checks the parameter sections without touching any file.
    pub fn check(&self) -> anyhow::Result<()> {
        self.nsfw.classes()?;
        self.ap.params()?;
        self.shortlist.model()?;
        self.bias.model()?;
        self.survey.check()?;
        self.accuracy.model()?;
        self.card.config()?;
        if !(0.0..=1.0).contains(&self.gender.threshold) {
            bail!("gender.threshold must lie in [0, 1]");
        }
        if self.accuracy.top_n == 0 {
            bail!("accuracy.top_n must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = Config::parse("", None).unwrap();
        assert_eq!(c.gender.threshold, 0.5);
        assert_eq!(c.nsfw.positive, ["hentai", "porn", "sexy"]);
        assert_eq!(c.ap.params().unwrap(), ApParams::default());
        assert_eq!(c.survey.quorum, 3);
        assert_eq!(c.accuracy.top_n, 25);
        assert_eq!(c.paths.out, PathBuf::from("out"));
        c.check().unwrap();
    }

    #[test]
    fn paths_rebase_onto_config_dir() {
        let c = Config::parse(
            "[paths]\nfaces = ['a.csv', '/abs/b.csv']\nnsfw = 'n.csv'\nout = 'o'\n[paths.watchlists]\ninfants = 'i.txt'\n",
            Some(Path::new("/cfg")),
        )
        .unwrap();
        assert_eq!(c.paths.faces.paths(), [PathBuf::from("/cfg/a.csv"), PathBuf::from("/abs/b.csv")]);
        assert_eq!(c.paths.nsfw, Some(PathBuf::from("/cfg/n.csv")));
        assert_eq!(c.paths.watchlists["infants"], PathBuf::from("/cfg/i.txt"));
        let one = Config::parse("[paths]\nfaces = 'f.csv'\n", None).unwrap();
        assert_eq!(one.paths.faces.paths(), [PathBuf::from("f.csv")]);
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(Config::parse("[gender]\nthreshhold = 0.4\n", None).is_err());
        let c = Config::parse("[ap]\npreference = 'mean'\n", None).unwrap();
        assert!(c.check().is_err());
        let c = Config::parse("[ap]\npreference = -50\n", None).unwrap();
        assert_eq!(c.ap.params().unwrap().preference, Preference::Value(-50.0));
        let c = Config::parse("[survey]\ncategories = ['upskirt']\n", None).unwrap();
        assert!(c.check().is_err());
        let c = Config::parse("[nsfw]\npositive = ['porn', 'spicy']\n", None).unwrap();
        assert!(c.check().is_err());
    }
}
