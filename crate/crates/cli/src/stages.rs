//! The pipeline stages and the files each one writes.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::anyhow;
use log::{info, warn};

use audit_core::accuracy::{
    human_delta_ranking, human_delta_ttest, write_classwise, write_human_delta, write_imagewise,
    ClassAccuracy, HumanDeltaTest,
};
use audit_core::bias::{
    assign_groups, group_gender_distributions, skewness_ranking, write_group_distributions,
    write_ranking,
};
use audit_core::card::{render_audit_card, BiasInputs, CardInputs};
use audit_core::census::{
    assemble_census_table, write_class_rows, write_cross_model, write_summary, CensusInputs,
};
use audit_core::ingest::{fmt_f64, CsvWriter, IngestError, PredictionRecord, Split};
use audit_core::nsfw::{write_class_nsfw_stats, write_clusters, write_shortlist, write_shortlist_images};
use audit_core::screening::{intersect_label_sets, screen_labels, write_screening_report};
use audit_core::semantics::{semantic_surface, write_semantic_coords, write_surface};
use audit_core::survey::{read_survey_export, ExportRow};

use crate::context::{Context, ResolvedWatchlist, Result};
use crate::error::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Census,
    Nsfw,
    Cluster,
    Semantics,
    Bias,
    Screen,
    Accuracy,
    SurveyExport,
    Card,
}

impl Stage {
    /// Order used by `audit all`.
    pub const ALL: [Stage; 9] = [
        Stage::Census,
        Stage::Nsfw,
        Stage::Cluster,
        Stage::Semantics,
        Stage::Bias,
        Stage::Screen,
        Stage::Accuracy,
        Stage::SurveyExport,
        Stage::Card,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Census => "census",
            Stage::Nsfw => "nsfw",
            Stage::Cluster => "cluster",
            Stage::Semantics => "semantics",
            Stage::Bias => "bias",
            Stage::Screen => "screen",
            Stage::Accuracy => "accuracy",
            Stage::SurveyExport => "survey export",
            Stage::Card => "card",
        }
    }

    /// The first configured input this stage lacks, if any. Checked before
    /// anything is read.
    pub fn missing_input(self, ctx: &Context) -> Option<&'static str> {
        let p = &ctx.cfg.paths;
        let census = || {
            if p.classes.is_none() {
                Some("paths.classes")
            } else if p.faces.paths().is_empty() {
                Some("paths.faces")
            } else if p.class_sizes.is_none() && p.nsfw.is_none() {
                Some("paths.class_sizes or paths.nsfw")
            } else {
                None
            }
        };
        let cluster = || census().or(p.nsfw.is_none().then_some("paths.nsfw"));
        match self {
            Stage::Census | Stage::Card => census(),
            Stage::Nsfw => p.nsfw.is_none().then_some("paths.nsfw"),
            Stage::Cluster => cluster(),
            Stage::Semantics => p.embeddings.paths().is_empty().then_some("paths.embeddings"),
            Stage::Bias => census().or((p.groups.is_none() && p.ranking.is_none()).then_some("paths.groups or paths.ranking")),
            Stage::Screen => {
                if p.vocabulary.is_none() && p.watchlists.is_empty() {
                    Some("paths.vocabulary or paths.watchlists")
                } else if !p.watchlists.is_empty() && p.classes.is_none() {
                    Some("paths.classes")
                } else {
                    None
                }
            }
            Stage::Accuracy => census().or(p.predictions.paths().is_empty().then_some("paths.predictions")),
            Stage::SurveyExport => {
                if p.survey_log.is_none() {
                    Some("paths.survey_log")
                } else if p.survey_queue.is_none() {
                    cluster()
                } else {
                    None
                }
            }
        }
    }

    pub fn run(self, ctx: &Context) -> Result<Vec<PathBuf>> {
        if let Some(what) = self.missing_input(ctx) {
            return Err(usage(format!("{} needs {what}", self.name())));
        }
        match self {
            Stage::Census => census(ctx),
            Stage::Nsfw => nsfw(ctx),
            Stage::Cluster => cluster(ctx),
            Stage::Semantics => semantics(ctx),
            Stage::Bias => bias(ctx),
            Stage::Screen => screen(ctx),
            Stage::Accuracy => accuracy(ctx),
            Stage::SurveyExport => survey_export(ctx),
            Stage::Card => card(ctx),
        }
    }
}

/// Runs every stage whose inputs are configured, in order.
pub fn run_all(ctx: &Context) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for stage in Stage::ALL {
        match stage.missing_input(ctx) {
            Some(what) => info!("skipping {}: needs {what}", stage.name()),
            None => written.extend(stage.run(ctx)?),
        }
    }
    Ok(written)
}

fn census(ctx: &Context) -> Result<Vec<PathBuf>> {
    let p = &ctx.cfg.paths;
    let rows = ctx.census()?;
    let nsfw = p.nsfw.is_some().then(|| ctx.nsfw_stats()).transpose()?;
    let accuracy = (!p.predictions.paths().is_empty()).then(|| ctx.accuracy()).transpose()?;
    let semantics = (!p.embeddings.paths().is_empty()).then(|| ctx.coords()).transpose()?;
    let table = assemble_census_table(&CensusInputs {
        classes: ctx.classes()?,
        census: rows,
        nsfw,
        accuracy,
        semantics,
    })?;
    let name = &ctx.cfg.census.name;
    let cfg = ctx.census_config();
    let mut out = vec![
        ctx.write_output(&format!("df_census_{name}.csv"), |w| table.write_csv(w))?,
        ctx.write_output("df_census_columns_interpretation.csv", |w| table.write_sidecar(w))?,
    ];
    for model in ctx.face_models()? {
        let model_rows: Vec<_> = rows.iter().filter(|r| r.model == model).cloned().collect();
        out.push(ctx.write_output(&format!("df_{model}_stats.csv"), |w| {
            write_class_rows(w, &model_rows, &cfg)
        })?);
    }
    let summary = ctx.summary()?;
    out.push(ctx.write_output("census_summary.csv", |w| write_summary(w, summary))?);
    if let Some(report) = ctx.cross_model()? {
        out.push(ctx.write_output("cross_model.csv", |w| write_cross_model(w, report))?);
    }
    Ok(out)
}

fn nsfw(ctx: &Context) -> Result<Vec<PathBuf>> {
    let stats = ctx.nsfw_stats()?;
    Ok(vec![ctx.write_output("df_nsfw.csv", |w| write_class_nsfw_stats(w, stats))?])
}

fn cluster(ctx: &Context) -> Result<Vec<PathBuf>> {
    let c = ctx.clustering()?;
    Ok(vec![
        ctx.write_output("clusters.csv", |w| write_clusters(w, &c.features, &c.result))?,
        ctx.write_output("shortlist.csv", |w| write_shortlist(w, &c.shortlist))?,
        ctx.write_output("shortlist_images.csv", |w| write_shortlist_images(w, &c.shortlist))?,
    ])
}

fn semantics(ctx: &Context) -> Result<Vec<PathBuf>> {
    let coords = ctx.coords()?;
    let name = &ctx.cfg.census.name;
    let mut out = vec![ctx.write_output(&format!("df_{name}_names_umap.csv"), |w| {
        write_semantic_coords(w, coords)
    })?];
    if ctx.cfg.paths.nsfw.is_some() {
        let surface = semantic_surface(coords, ctx.nsfw_stats()?)?;
        out.push(ctx.write_output("semantic_surface.csv", |w| write_surface(w, &surface))?);
    }
    Ok(out)
}

struct BiasTables {
    groups: Vec<audit_core::bias::GroupDistribution>,
    ranking: Vec<audit_core::bias::RankedClass>,
}

fn bias_tables(ctx: &Context) -> Result<BiasTables> {
    let model = ctx.cfg.bias.model().map_err(|e| usage(e.to_string()))?;
    let rows = ctx.census_rows(model, Split::Train)?;
    let groups = match ctx.group_mapping()? {
        Some(mapping) => {
            let assigned = assign_groups(&ctx.group_classes(&mapping)?, &mapping)?;
            group_gender_distributions(&assigned, &rows)?
        }
        None => Vec::new(),
    };
    let ranking = match ctx.ranking_list()? {
        Some(list) => {
            let ids: Vec<String> = list.found.iter().map(|c| c.wordnet_id.clone()).collect();
            skewness_ranking(&ids, &rows, ctx.classes()?)?
        }
        None => Vec::new(),
    };
    Ok(BiasTables { groups, ranking })
}

fn bias(ctx: &Context) -> Result<Vec<PathBuf>> {
    let t = bias_tables(ctx)?;
    let mut out = Vec::new();
    if ctx.cfg.paths.groups.is_some() {
        out.push(ctx.write_output("bias_groups.csv", |w| write_group_distributions(w, &t.groups))?);
    }
    if ctx.cfg.paths.ranking.is_some() {
        out.push(ctx.write_output("bias_ranking.csv", |w| write_ranking(w, &t.ranking))?);
    }
    Ok(out)
}

fn write_watchlists<W: std::io::Write>(out: W, lists: &[ResolvedWatchlist]) -> std::result::Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(["watchlist", "wordnet_id", "label", "in_dataset"])?;
    for l in lists {
        for c in &l.found {
            w.row([l.list.name.as_str(), &c.wordnet_id, &c.label, "true"])?;
        }
        for m in &l.missing {
            w.row([l.list.name.as_str(), m.wordnet_id.as_deref().unwrap_or(""), &m.label, "false"])?;
        }
    }
    w.finish()?;
    Ok(())
}

fn screen(ctx: &Context) -> Result<Vec<PathBuf>> {
    let p = &ctx.cfg.paths;
    let mut out = Vec::new();
    if p.vocabulary.is_some() {
        let vocab = ctx.vocabulary()?;
        let denylist = match &p.denylist {
            Some(path) => ctx.term_list(path)?,
            None => {
                warn!("no paths.denylist: the screening report lists reference matches only");
                Vec::new()
            }
        };
        let hits = screen_labels(vocab, &denylist);
        let intersection = p
            .reference_labels
            .as_deref()
            .map(|path| ctx.term_list(path).map(|r| intersect_label_sets(vocab, &r)))
            .transpose()?;
        info!(
            "screening: {} denylist hits{}",
            hits.len(),
            intersection
                .as_ref()
                .map(|i| format!(", {} reference matches", i.count))
                .unwrap_or_default()
        );
        out.push(ctx.write_output("screening_report.csv", |w| {
            write_screening_report(w, &hits, intersection.as_ref())
        })?);
    }
    if !p.watchlists.is_empty() {
        let lists = ctx.watchlists()?;
        out.push(ctx.write_output("watchlists.csv", |w| write_watchlists(w, lists))?);
    }
    Ok(out)
}

fn write_ttests<W: std::io::Write>(out: W, tests: &[HumanDeltaTest]) -> std::result::Result<(), IngestError> {
    let mut w = CsvWriter::new(out);
    w.row(["model", "split", "top_n", "n_top", "n_rest", "mean_top5_top", "mean_top5_rest", "t", "df"])?;
    for t in tests {
        w.row([
            t.model.to_string(),
            t.split.to_string(),
            t.top_n.to_string(),
            t.welch.n1.to_string(),
            t.welch.n2.to_string(),
            fmt_f64(t.welch.mean1),
            fmt_f64(t.welch.mean2),
            fmt_f64(t.welch.t),
            fmt_f64(t.welch.df),
        ])?;
    }
    w.finish()?;
    Ok(())
}

fn accuracy(ctx: &Context) -> Result<Vec<PathBuf>> {
    let acc = ctx.accuracy()?;
    let preds = ctx.predictions()?;
    let mut out = Vec::new();
    let models: BTreeSet<_> = acc.iter().map(|a| a.model).collect();
    for model in &models {
        let rows: Vec<ClassAccuracy> = acc.iter().filter(|a| a.model == *model).cloned().collect();
        let images: Vec<PredictionRecord> = preds.iter().filter(|p| p.model == *model).cloned().collect();
        out.push(ctx.write_output(&format!("df_acc_classwise_{model}.csv"), |w| write_classwise(w, &rows))?);
        out.push(ctx.write_output(&format!("df_acc_imagewise_{model}.csv"), |w| write_imagewise(w, &images))?);
    }
    let face_model = ctx.cfg.accuracy.model().map_err(|e| usage(e.to_string()))?;
    let ranking = human_delta_ranking(
        &ctx.census_rows(face_model, Split::Train)?,
        &ctx.census_rows(face_model, Split::Val)?,
    );
    out.push(ctx.write_output("human_delta.csv", |w| write_human_delta(w, &ranking))?);
    let groups: BTreeSet<_> = acc.iter().map(|a| (a.model, a.split)).collect();
    let mut tests = Vec::new();
    for (model, split) in groups {
        let group: Vec<ClassAccuracy> = acc
            .iter()
            .filter(|a| a.model == model && a.split == split)
            .cloned()
            .collect();
        let test = human_delta_ttest(&group, &ranking, ctx.cfg.accuracy.top_n)
            .map_err(|e| anyhow!("human-delta test for {model}/{split}: {e}"))?;
        info!(
            "{model}/{split}: top-{} mean top-5 {:.4} vs {:.4}, t = {:.3}, df = {:.1}",
            test.top_n, test.welch.mean1, test.welch.mean2, test.welch.t, test.welch.df
        );
        tests.push(test);
    }
    out.push(ctx.write_output("human_delta_ttest.csv", |w| write_ttests(w, &tests))?);
    Ok(out)
}

fn survey_export(ctx: &Context) -> Result<Vec<PathBuf>> {
    let state = ctx.survey()?;
    Ok(vec![ctx.write_output("survey_export.csv", |w| state.export(w))?])
}

/// The export table exactly as `survey_export.csv` holds it.
fn survey_rows(ctx: &Context) -> Result<Vec<ExportRow>> {
    let mut buf = Vec::new();
    ctx.survey()?.export(&mut buf)?;
    Ok(read_survey_export(buf.as_slice())?)
}

fn card(ctx: &Context) -> Result<Vec<PathBuf>> {
    let config = ctx.cfg.card.config().map_err(|e| usage(e.to_string()))?;
    let survey = match Stage::SurveyExport.missing_input(ctx) {
        None => Some(survey_rows(ctx)?),
        Some(what) => {
            info!("card: survey section not computed (needs {what})");
            None
        }
    };
    let bias = match Stage::Bias.missing_input(ctx) {
        None => Some(bias_tables(ctx)?),
        Some(_) => None,
    };
    let watchlists: Vec<_> = ctx.watchlists()?.iter().map(ResolvedWatchlist::present).collect();
    let external = ctx.external_tables()?;
    let card = render_audit_card(
        &CardInputs {
            census: ctx.census()?,
            summary: ctx.summary()?,
            cross_model: ctx.cross_model()?,
            survey: survey.as_deref(),
            bias: bias.as_ref().map(|b| BiasInputs {
                groups: &b.groups,
                ranking: &b.ranking,
            }),
            watchlists: &watchlists,
            external: &external,
        },
        &config,
    )?;
    let dir = ctx.out_dir().to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|e| anyhow!("{}: cannot create: {e}", dir.display()))?;
    let written = card
        .write_to(&dir)
        .map_err(|e| anyhow!("{}: {e}", dir.display()))?;
    for p in &written {
        info!("wrote {}", p.display());
    }
    Ok(written)
}
