//! Dataset audit card: headline census numbers with their provenance, the
//! metric definitions, optional survey/bias/cross-model sections and three
//! figure panels, as a JSON document and an HTML page rendered from it.
//!
//! The HTML never formats a number itself; every figure it shows is a
//! `display` string (or plot text) already stored in the JSON.

pub mod panels;
pub mod svg;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{ExternalTable, GroupDistribution, RankedClass};
use crate::census::{ClassCensusRow, Cohort, CrossModelReport, SummaryCounts};
use crate::ingest::{FaceModel, Split};
use crate::screening::Watchlist;
use crate::survey::{Category, ExportRow};

use svg::{escape, render_panel, Plot, SvgError};

#[derive(Debug, Error, PartialEq)]
pub enum CardError {
    #[error("the census table is empty")]
    MissingCensus,
    #[error("panel {panel}: {source}")]
    Panel {
        panel: &'static str,
        #[source]
        source: SvgError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardConfig {
    pub title: String,
    pub dataset: String,
    /// Model whose counts and ages head the card.
    pub headline_model: FaceModel,
    /// Written to a single `<meta>` element and the JSON; nothing else
    /// varies between runs.
    pub generated: Option<String>,
    pub ranking_title: String,
}

impl Default for CardConfig {
    fn default() -> Self {
        Self {
            title: "Dataset audit card".into(),
            dataset: "ImageNet".into(),
            headline_model: FaceModel::InsightFace,
            generated: None,
            ranking_title: "musical instruments".into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BiasInputs<'a> {
    pub groups: &'a [GroupDistribution],
    pub ranking: &'a [RankedClass],
}

#[derive(Debug, Clone, Copy)]
pub struct CardInputs<'a> {
    pub census: &'a [ClassCensusRow],
    pub summary: &'a SummaryCounts,
    pub cross_model: Option<&'a CrossModelReport>,
    pub survey: Option<&'a [ExportRow]>,
    pub bias: Option<BiasInputs<'a>>,
    pub watchlists: &'a [Watchlist],
    pub external: &'a [(String, ExternalTable)],
}

/// A number on the card: raw value, the string shown, and the module that
/// computed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure {
    pub key: String,
    pub label: String,
    pub value: Option<f64>,
    pub display: String,
    pub source: String,
}

impl Figure {
    fn count(key: &str, label: &str, n: u64, source: &str) -> Figure {
        Figure {
            key: key.into(),
            label: label.into(),
            value: Some(n as f64),
            display: n.to_string(),
            source: source.into(),
        }
    }

    fn real(key: &str, label: &str, v: Option<f64>, decimals: usize, source: &str) -> Figure {
        Figure {
            key: key.into(),
            label: label.into(),
            value: v,
            display: v.map_or_else(|| "n/a".into(), |v| format_fixed(v, decimals)),
            source: source.into(),
        }
    }
}

fn format_fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricNote {
    pub name: String,
    pub formula: String,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySection {
    pub confirmed: Figure,
    pub by_category: Vec<Figure>,
    pub n_classes: Figure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub n_classes: Figure,
    pub mean: Figure,
    pub median: Figure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub rank: Figure,
    pub wordnet_id: String,
    pub label: String,
    pub xi: Figure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSection {
    pub groups: Vec<GroupRow>,
    pub ranking_title: String,
    pub ranking: Vec<RankedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatchlistSection {
    pub name: String,
    pub n_classes: Figure,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSection {
    pub name: String,
    pub table: ExternalTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub name: String,
    pub title: String,
    /// `None` when the inputs for the panel were not supplied.
    pub plots: Option<Vec<Plot>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCard {
    pub title: String,
    pub dataset: String,
    pub generated: Option<String>,
    pub headline: Vec<Figure>,
    pub metrics: Vec<MetricNote>,
    pub census: Vec<Figure>,
    pub cross_model: Option<Vec<Figure>>,
    pub survey: Option<SurveySection>,
    pub bias: Option<BiasSection>,
    pub watchlists: Vec<WatchlistSection>,
    pub external: Vec<ExternalSection>,
    pub panels: Vec<Panel>,
}

const NOT_COMPUTED: &str = "not computed";

fn metric_notes() -> Vec<MetricNote> {
    let m = |name: &str, formula: &str, note: Option<&str>| MetricNote {
        name: name.into(),
        formula: formula.into(),
        note: note.map(str::to_string),
    };
    vec![
        m("eta", "eta_c = (1/N_c) sum_i phi_i", Some("class-level mean person count: share of images with a detected face")),
        m(
            "alpha",
            "alpha_c = sum_i phi_i a_i / sum_i phi_i",
            Some("mean age over face-bearing images; the census also emits the variant normalized by N_c, alpha_c = (1/N_c) sum_i phi_i a_i"),
        ),
        m(
            "xi",
            "xi_c = (1/N_c) sum_i phi_i ((g_i - mu_c) / sigma_c)^3",
            Some("skewness of per-image gender scores (0 = female, 1 = male) over face-bearing images, normalized by class size"),
        ),
        m("nsfw", "s_i = p_hentai + p_porn + p_sexy", None),
    ]
}

fn census_figures(summary: &SummaryCounts) -> Vec<Figure> {
    let mut out = Vec::new();
    for c in &summary.cells {
        let src = format!("census/{}", c.model);
        let scope = format!("{} {} {}", c.model, c.split, c.cohort.as_str());
        out.push(Figure::count(&c.image_key(), &format!("{scope}: images with faces"), c.n_images_with_faces, &src));
        out.push(Figure::count(&c.person_key(), &format!("{scope}: persons"), c.n_persons, &src));
        out.push(Figure::real(
            &format!("age_{}-{}^({})", c.split, c.cohort.letter(), c.model),
            &format!("{scope}: mean age"),
            c.mean_age,
            2,
            &src,
        ));
    }
    out
}

fn headline(config: &CardConfig, inputs: &CardInputs) -> Vec<Figure> {
    let s = inputs.summary;
    let m = config.headline_model;
    let src = format!("census/{m}");
    let totals: Vec<u64> = s.models().into_iter().map(|m| s.total_persons(m)).collect();
    let mut out = vec![
        Figure::count("images_with_persons", "images with persons", s.total_face_images(m), &src),
        Figure::count("persons_min", "persons (lowest model count)", totals.iter().copied().min().unwrap_or(0), "census"),
        Figure::count("persons_max", "persons (highest model count)", totals.iter().copied().max().unwrap_or(0), "census"),
        Figure::real("mean_age_men", "mean age (men)", s.pooled_age(m, Cohort::Men), 2, &src),
        Figure::real("mean_age_women", "mean age (women)", s.pooled_age(m, Cohort::Women), 2, &src),
    ];
    out.push(match inputs.survey {
        Some(rows) => Figure::count(
            "misogynistic_images",
            "confirmed misogynistic images",
            rows.iter().filter(|r| r.category.is_positive()).count() as u64,
            "survey",
        ),
        None => Figure {
            key: "misogynistic_images".into(),
            label: "confirmed misogynistic images".into(),
            value: None,
            display: NOT_COMPUTED.into(),
            source: "survey".into(),
        },
    });
    for w in inputs.watchlists {
        out.push(Figure::count(
            &format!("{}_classes", w.name),
            &format!("{} classes", w.name),
            w.len() as u64,
            "screening",
        ));
    }
    out
}

fn survey_section(rows: &[ExportRow]) -> SurveySection {
    let positives: Vec<&ExportRow> = rows.iter().filter(|r| r.category.is_positive()).collect();
    let by_category = Category::ALL
        .into_iter()
        .filter(|c| c.is_positive())
        .map(|c| {
            let n = positives.iter().filter(|r| r.category == c).count() as u64;
            Figure::count(&format!("survey_{c}"), c.as_str(), n, "survey")
        })
        .collect();
    let classes: BTreeSet<&str> = positives.iter().map(|r| r.wordnet_id.as_str()).collect();
    SurveySection {
        confirmed: Figure::count("survey_confirmed", "confirmed images", positives.len() as u64, "survey"),
        by_category,
        n_classes: Figure::count("survey_classes", "classes with confirmed images", classes.len() as u64, "survey"),
    }
}

fn bias_section(bias: &BiasInputs, title: &str) -> BiasSection {
    let groups = bias
        .groups
        .iter()
        .map(|g| {
            let key = |k: &str| format!("bias_{}_{k}", g.group);
            GroupRow {
                group: g.group.to_string(),
                n_classes: Figure::count(&key("n"), "classes", g.members.len() as u64, "bias"),
                mean: Figure::real(&key("mean"), "mean gender score", g.mean, 3, "bias"),
                median: Figure::real(&key("median"), "median gender score", g.median, 3, "bias"),
            }
        })
        .collect();
    let ranking = bias
        .ranking
        .iter()
        .enumerate()
        .map(|(i, r)| RankedRow {
            rank: Figure::count(&format!("rank_{}", r.wordnet_id), "rank", i as u64 + 1, "bias"),
            wordnet_id: r.wordnet_id.clone(),
            label: r.label.clone(),
            xi: Figure::real(&format!("xi_{}", r.wordnet_id), "xi", Some(r.xi), 3, "bias"),
        })
        .collect();
    BiasSection {
        groups,
        ranking_title: title.to_string(),
        ranking,
    }
}

fn panel_err(panel: &'static str) -> impl Fn(SvgError) -> CardError {
    move |source| CardError::Panel { panel, source }
}

/// Assembles the card. Only an empty census is an error; every other
/// section is optional.
pub fn render_audit_card(inputs: &CardInputs, config: &CardConfig) -> Result<AuditCard, CardError> {
    if inputs.census.is_empty() || inputs.summary.cells.is_empty() {
        return Err(CardError::MissingCensus);
    }
    let highlight: BTreeSet<String> = inputs
        .survey
        .unwrap_or_default()
        .iter()
        .map(|r| r.wordnet_id.clone())
        .collect();
    let has_train = inputs.census.iter().any(|r| r.split == Split::Train);
    let cag = if has_train {
        Some(panels::cag_panel(inputs.census, &highlight).map_err(panel_err("cag"))?)
    } else {
        None
    };
    let survey_plots = match inputs.survey {
        Some(rows) if rows.iter().any(|r| r.category.is_positive()) => {
            Some(panels::survey_panel(rows).map_err(panel_err("survey"))?)
        }
        _ => None,
    };
    let bias_plots = match &inputs.bias {
        Some(b) if b.groups.iter().any(|g| !g.values.is_empty()) || !b.ranking.is_empty() => {
            Some(panels::bias_panel(b.groups, b.ranking, &config.ranking_title).map_err(panel_err("bias"))?)
        }
        _ => None,
    };

    let cross_model = inputs.cross_model.map(|r| {
        vec![
            Figure::real("r_eta", "Pearson r, eta", Some(r.r_eta), 3, "census/compare"),
            Figure::real("r_alpha", "Pearson r, alpha (face-wise)", Some(r.r_alpha), 3, "census/compare"),
            Figure::real("r_xi", "Pearson r, xi", Some(r.r_xi), 3, "census/compare"),
            Figure::count("r_classes", "classes compared", r.n_classes as u64, "census/compare"),
        ]
    });

    let watchlists = inputs
        .watchlists
        .iter()
        .map(|w| WatchlistSection {
            name: w.name.clone(),
            n_classes: Figure::count(&format!("{}_classes", w.name), "classes", w.len() as u64, "screening"),
            labels: w.entries.iter().map(|e| e.label.clone()).collect(),
        })
        .collect();

    Ok(AuditCard {
        title: config.title.clone(),
        dataset: config.dataset.clone(),
        generated: config.generated.clone(),
        headline: headline(config, inputs),
        metrics: metric_notes(),
        census: census_figures(inputs.summary),
        cross_model,
        survey: inputs.survey.map(survey_section),
        bias: inputs.bias.as_ref().map(|b| bias_section(b, &config.ranking_title)),
        watchlists,
        external: inputs
            .external
            .iter()
            .map(|(name, table)| ExternalSection {
                name: name.clone(),
                table: table.clone(),
            })
            .collect(),
        panels: vec![
            Panel {
                name: "cag".into(),
                title: "Class-wise count, age and gender".into(),
                plots: cag,
            },
            Panel {
                name: "survey".into(),
                title: "Hand-survey labels".into(),
                plots: survey_plots,
            },
            Panel {
                name: "bias".into(),
                title: "Co-occurrence gender bias".into(),
                plots: bias_plots,
            },
        ],
    })
}

impl AuditCard {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("card serializes");
        s.push('\n');
        s
    }

    /// SVG per panel, keyed by panel name; absent panels are skipped.
    pub fn panel_svgs(&self) -> BTreeMap<String, String> {
        self.panels
            .iter()
            .filter_map(|p| p.plots.as_ref().map(|plots| (p.name.clone(), render_panel(plots))))
            .collect()
    }

    /// Writes `audit_card.json`, `audit_card.html` and one
    /// `panel_<name>.svg` per computed panel into `dir`; returns the paths.
    pub fn write_to(&self, dir: &std::path::Path) -> std::io::Result<Vec<std::path::PathBuf>> {
        let mut files = vec![
            (dir.join("audit_card.json"), self.to_json()),
            (dir.join("audit_card.html"), self.to_html()),
        ];
        for (name, svg) in self.panel_svgs() {
            files.push((dir.join(format!("panel_{name}.svg")), svg));
        }
        for (path, body) in &files {
            std::fs::write(path, body)?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }

    pub fn to_html(&self) -> String {
        let mut h = String::new();
        let e = escape;
        h.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
        if let Some(g) = &self.generated {
            let _ = writeln!(h, "<meta name=\"generated\" content=\"{}\">", e(g));
        }
        let _ = writeln!(h, "<title>{}</title>", e(&self.title));
        h.push_str(STYLE);
        h.push_str("</head>\n<body>\n");
        let _ = writeln!(h, "<h1>{}: {}</h1>", e(&self.title), e(&self.dataset));

        h.push_str("<section id=\"headline\">\n<h2>Census audit statistics</h2>\n");
        figure_table(&mut h, &self.headline);
        h.push_str("</section>\n");

        h.push_str("<section id=\"metrics\">\n<h2>Metrics</h2>\n<dl>\n");
        for m in &self.metrics {
            let _ = writeln!(h, "<dt>{}</dt><dd><code>{}</code>", e(&m.name), e(&m.formula));
            if let Some(n) = &m.note {
                let _ = write!(h, "<br><small>{}</small>", e(n));
            }
            h.push_str("</dd>\n");
        }
        h.push_str("</dl>\n</section>\n");

        h.push_str("<section id=\"census\">\n<h2>Persons by model, split and cohort</h2>\n");
        figure_table(&mut h, &self.census);
        h.push_str("</section>\n");

        h.push_str("<section id=\"cross-model\">\n<h2>Cross-model agreement</h2>\n");
        match &self.cross_model {
            Some(f) => figure_table(&mut h, f),
            None => absent(&mut h),
        }
        h.push_str("</section>\n");

        h.push_str("<section id=\"survey\">\n<h2>Hand survey</h2>\n");
        match &self.survey {
            Some(s) => {
                let mut rows = vec![s.confirmed.clone(), s.n_classes.clone()];
                rows.extend(s.by_category.iter().cloned());
                figure_table(&mut h, &rows);
            }
            None => absent(&mut h),
        }
        h.push_str("</section>\n");

        h.push_str("<section id=\"bias\">\n<h2>Co-occurrence bias</h2>\n");
        match &self.bias {
            Some(b) => {
                h.push_str("<table>\n<tr><th>group</th><th>classes</th><th>mean</th><th>median</th></tr>\n");
                for g in &b.groups {
                    let _ = writeln!(
                        h,
                        "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                        e(&g.group),
                        e(&g.n_classes.display),
                        e(&g.mean.display),
                        e(&g.median.display)
                    );
                }
                h.push_str("</table>\n");
                if !b.ranking.is_empty() {
                    let _ = writeln!(h, "<h3>{}</h3>", e(&b.ranking_title));
                    h.push_str("<table>\n<tr><th>rank</th><th>class</th><th>xi</th></tr>\n");
                    for r in &b.ranking {
                        let _ = writeln!(
                            h,
                            "<tr><td>{}</td><td>{} <small>{}</small></td><td>{}</td></tr>",
                            e(&r.rank.display),
                            e(&r.label),
                            e(&r.wordnet_id),
                            e(&r.xi.display)
                        );
                    }
                    h.push_str("</table>\n");
                }
            }
            None => absent(&mut h),
        }
        h.push_str("</section>\n");

        for w in &self.watchlists {
            let _ = writeln!(h, "<section class=\"watchlist\">\n<h2>{} ({})</h2>", e(&w.name), e(&w.n_classes.display));
            let labels: Vec<String> = w.labels.iter().map(|l| e(l)).collect();
            let _ = writeln!(h, "<p>{}</p>\n</section>", labels.join(", "));
        }

        for x in &self.external {
            let _ = writeln!(h, "<section class=\"external\">\n<h2>{}</h2>\n<table>", e(&x.name));
            let head: String = x.table.columns.iter().map(|c| format!("<th>{}</th>", e(c))).collect();
            let _ = writeln!(h, "<tr>{head}</tr>");
            for row in &x.table.rows {
                let cells: String = row.iter().map(|c| format!("<td>{}</td>", e(c))).collect();
                let _ = writeln!(h, "<tr>{cells}</tr>");
            }
            h.push_str("</table>\n</section>\n");
        }

        for p in &self.panels {
            let _ = writeln!(h, "<section class=\"panel\" id=\"panel-{}\">\n<h2>{}</h2>", e(&p.name), e(&p.title));
            match &p.plots {
                Some(plots) => h.push_str(&render_panel(plots)),
                None => absent(&mut h),
            }
            h.push_str("</section>\n");
        }
        h.push_str("</body>\n</html>\n");
        h
    }
}

const STYLE: &str = "<style>\nbody{font-family:sans-serif;margin:2em;max-width:1960px}\n\
table{border-collapse:collapse;margin:.5em 0}\ntd,th{border:1px solid #ccc;padding:2px 8px;text-align:left}\n\
.absent{color:#888;font-style:italic}\nsvg{max-width:100%;height:auto}\n</style>\n";

fn absent(h: &mut String) {
    let _ = writeln!(h, "<p class=\"absent\">{NOT_COMPUTED}</p>");
}

fn figure_table(h: &mut String, figures: &[Figure]) {
    h.push_str("<table>\n");
    for f in figures {
        let _ = writeln!(
            h,
            "<tr><th>{}</th><td>{}</td><td><small>{}</small></td></tr>",
            escape(&f.label),
            escape(&f.display),
            escape(&f.source)
        );
    }
    h.push_str("</table>\n");
}
