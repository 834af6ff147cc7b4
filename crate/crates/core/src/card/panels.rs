//! The card's three figure panels, built as [`Plot`]s so the same values
//! land in both the JSON document and the rendered SVG.

use std::collections::{BTreeMap, BTreeSet};

use crate::bias::{GroupDistribution, RankedClass};
use crate::census::ClassCensusRow;
use crate::ingest::{FaceModel, Split};
use crate::stats;
use crate::survey::{Category, ExportRow};

use super::svg::{scatter_plot, Axis, Glyph, Plot, ScatterPoint, SvgError};

type Metric = (&'static str, fn(&ClassCensusRow) -> f64);

const METRICS: [Metric; 3] = [
    ("eta", |r| r.eta),
    ("alpha (face-wise)", |r| r.alpha_facewise),
    ("xi", |r| r.xi),
];

/// Class-wise cardinality/age/gender scatter plots over train rows.
///
/// With both face models present each metric is plotted DEX against
/// InsightFace; otherwise the three metrics of the one model are plotted
/// pairwise. Classes in `highlight` get the highlight style.
pub fn cag_panel(census: &[ClassCensusRow], highlight: &BTreeSet<String>) -> Result<Vec<Plot>, SvgError> {
    let by_model = |m: FaceModel| -> BTreeMap<&str, &ClassCensusRow> {
        census
            .iter()
            .filter(|r| r.model == m && r.split == Split::Train)
            .map(|r| (r.wordnet_id.as_str(), r))
            .collect()
    };
    let dex = by_model(FaceModel::Dex);
    let ifc = by_model(FaceModel::InsightFace);
    let point = |id: &str, x: f64, y: f64| ScatterPoint {
        x,
        y,
        label: id.to_string(),
        highlight: highlight.contains(id),
    };

    if !dex.is_empty() && !ifc.is_empty() {
        return METRICS
            .iter()
            .map(|(name, f)| {
                let pts: Vec<ScatterPoint> = dex
                    .iter()
                    .filter_map(|(id, d)| ifc.get(id).map(|i| point(id, f(d), f(i))))
                    .collect();
                scatter_plot(
                    &format!("{name}: dex vs insightface"),
                    &format!("{name} (dex)"),
                    &format!("{name} (insightface)"),
                    &pts,
                )
            })
            .collect();
    }

    let (model, rows) = if dex.is_empty() {
        (FaceModel::InsightFace, ifc)
    } else {
        (FaceModel::Dex, dex)
    };
    [(0, 1), (0, 2), (1, 2)]
        .into_iter()
        .map(|(a, b)| {
            let (xa, fx) = METRICS[a];
            let (ya, fy) = METRICS[b];
            let pts: Vec<ScatterPoint> = rows.iter().map(|(id, r)| point(id, fx(r), fy(r))).collect();
            scatter_plot(&format!("{xa} vs {ya} ({model})"), xa, ya, &pts)
        })
        .collect()
}

fn counts_axis_top(max: usize) -> f64 {
    max.max(1) as f64
}

/// Hand-survey panel: a class-by-category count grid and a per-category
/// histogram of confirmed images.
pub fn survey_panel(rows: &[ExportRow]) -> Result<Vec<Plot>, SvgError> {
    if rows.is_empty() {
        return Err(SvgError::EmptyData);
    }
    let categories: Vec<Category> = Category::ALL.into_iter().filter(|c| c.is_positive()).collect();
    let classes: Vec<String> = rows
        .iter()
        .map(|r| r.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut grid: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut totals = vec![0usize; categories.len()];
    for r in rows {
        let Some(ci) = categories.iter().position(|c| *c == r.category) else {
            continue;
        };
        let yi = classes.binary_search(&r.label).unwrap_or_default();
        *grid.entry((ci, yi)).or_default() += 1;
        totals[ci] += 1;
    }
    let peak = grid.values().copied().max().unwrap_or(1) as f64;
    let mut cells = Vec::new();
    for (&(x, y), &n) in &grid {
        // Cell area grows with the count.
        let half = 0.45 * (n as f64 / peak).sqrt();
        cells.push(Glyph::Bar {
            x0: x as f64 - half,
            x1: x as f64 + half,
            y0: y as f64 - half,
            y1: y as f64 + half,
            highlight: false,
        });
        cells.push(Glyph::Label {
            x: x as f64,
            y: y as f64,
            text: n.to_string(),
        });
    }
    let cat_names: Vec<String> = categories.iter().map(|c| c.to_string()).collect();
    let grid_plot = Plot {
        title: "confirmed images by class and category".into(),
        x: Axis::categorical("category", cat_names.clone()),
        y: Axis::categorical("class", classes),
        glyphs: cells,
    };

    let top = counts_axis_top(totals.iter().copied().max().unwrap_or(0));
    let mut bars = Vec::new();
    for (i, &n) in totals.iter().enumerate() {
        bars.push(Glyph::Bar {
            x0: i as f64 - 0.35,
            x1: i as f64 + 0.35,
            y0: 0.0,
            y1: n as f64,
            highlight: true,
        });
        bars.push(Glyph::Label {
            x: i as f64,
            y: n as f64 + top * 0.04,
            text: n.to_string(),
        });
    }
    let mut y = Axis::fit("images", [0.0, top * 1.1]);
    if let Axis::Continuous { lo, ticks, .. } = &mut y {
        *lo = 0.0;
        ticks.retain(|t| t.value >= 0.0);
    }
    let hist = Plot {
        title: "confirmed images per category".into(),
        x: Axis::categorical("category", cat_names),
        y,
        glyphs: bars,
    };
    Ok(vec![grid_plot, hist])
}

/// Silverman's rule of thumb, `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`,
/// falling back to `sd` when the IQR is zero. `None` for fewer than two
/// distinct values.
pub fn silverman_bandwidth(values: &[f64]) -> Option<f64> {
    let sd = stats::sample_variance(values).ok()?.sqrt();
    if !(sd > 0.0) {
        return None;
    }
    let iqr = stats::quantile(values, 0.75)? - stats::quantile(values, 0.25)?;
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Some(0.9 * spread * (values.len() as f64).powf(-0.2))
}

const KDE_POINTS: usize = 41;
const VIOLIN_HALF_WIDTH: f64 = 0.4;

fn gaussian_kde(values: &[f64], h: f64, at: f64) -> f64 {
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    norm * stats::sum(values.iter().map(|v| {
        let z = (at - v) / h;
        (-0.5 * z * z).exp()
    }))
}

/// Violin glyphs for one distribution centred at `x`: a mirrored density
/// outline over the data range plus a quartile box and median line.
pub fn violin(values: &[f64], x: f64) -> Vec<Glyph> {
    let mut glyphs = Vec::new();
    let (Some(lo), Some(hi)) = (stats::quantile(values, 0.0), stats::quantile(values, 1.0)) else {
        return glyphs;
    };
    if let Some(h) = silverman_bandwidth(values) {
        let ys: Vec<f64> = (0..KDE_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (KDE_POINTS - 1) as f64)
            .collect();
        let dens: Vec<f64> = ys.iter().map(|y| gaussian_kde(values, h, *y)).collect();
        let peak = dens.iter().copied().fold(0.0, f64::max);
        let w = |d: f64| VIOLIN_HALF_WIDTH * d / peak;
        let mut points: Vec<[f64; 2]> = ys.iter().zip(&dens).map(|(y, d)| [x + w(*d), *y]).collect();
        points.extend(ys.iter().zip(&dens).rev().map(|(y, d)| [x - w(*d), *y]));
        glyphs.push(Glyph::Outline { points });
    }
    let q1 = stats::quantile(values, 0.25).unwrap_or(lo);
    let q3 = stats::quantile(values, 0.75).unwrap_or(hi);
    let med = stats::median(values).unwrap_or(lo);
    glyphs.push(Glyph::Line {
        x0: x,
        y0: lo,
        x1: x,
        y1: hi,
    });
    glyphs.push(Glyph::Bar {
        x0: x - 0.06,
        x1: x + 0.06,
        y0: q1,
        y1: q3,
        highlight: false,
    });
    glyphs.push(Glyph::Line {
        x0: x - 0.1,
        y0: med,
        x1: x + 0.1,
        y1: med,
    });
    glyphs
}

/// Co-occurrence bias panel: per-group violins of class mean gender score
/// and, when given, a bar chart of a ranked subset's skewness.
pub fn bias_panel(
    groups: &[GroupDistribution],
    ranking: &[RankedClass],
    ranking_title: &str,
) -> Result<Vec<Plot>, SvgError> {
    let scored: Vec<&GroupDistribution> = groups.iter().filter(|g| !g.values.is_empty()).collect();
    if scored.is_empty() && ranking.is_empty() {
        return Err(SvgError::EmptyData);
    }
    let mut plots = Vec::new();
    if let Some(index) = scored.iter().position(|g| g.values.iter().any(|v| !v.is_finite())) {
        return Err(SvgError::NonFiniteCoordinate { index });
    }
    if !scored.is_empty() {
        let glyphs: Vec<Glyph> = scored
            .iter()
            .enumerate()
            .flat_map(|(i, g)| violin(&g.values, i as f64))
            .collect();
        plots.push(Plot {
            title: "class mean gender score by group".into(),
            x: Axis::categorical("group", scored.iter().map(|g| g.group.to_string()).collect()),
            y: Axis::fit("mean gender score", scored.iter().flat_map(|g| g.values.iter().copied())),
            glyphs,
        });
    }
    if !ranking.is_empty() {
        let glyphs = ranking
            .iter()
            .enumerate()
            .map(|(i, r)| Glyph::Bar {
                x0: i as f64 - 0.35,
                x1: i as f64 + 0.35,
                y0: 0.0,
                y1: r.xi,
                highlight: r.xi < 0.0,
            })
            .collect();
        let labels = ranking
            .iter()
            .map(|r| if r.label.is_empty() { r.wordnet_id.clone() } else { r.label.clone() })
            .collect();
        plots.push(Plot {
            title: format!("{ranking_title}: gender skewness"),
            x: Axis::categorical("class", labels),
            y: Axis::fit("xi", ranking.iter().map(|r| r.xi).chain([0.0])),
            glyphs,
        });
    }
    Ok(plots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::GroupName;

    fn row(id: &str, model: FaceModel, eta: f64) -> ClassCensusRow {
        ClassCensusRow {
            wordnet_id: id.into(),
            model,
            split: Split::Train,
            n_images: 10,
            n_face_images: 1,
            n_persons: 1,
            eta,
            alpha_paper: 3.0,
            alpha_facewise: 30.0 * eta,
            mu: Some(0.5),
            sigma: Some(0.0),
            xi: eta - 0.5,
            n_women: 0,
            n_men: 1,
            mean_age_women: None,
            mean_age_men: Some(30.0),
        }
    }

    #[test]
    fn cag_cross_model_when_both_present() {
        let census = vec![
            row("n00000001", FaceModel::Dex, 0.1),
            row("n00000002", FaceModel::Dex, 0.2),
            row("n00000001", FaceModel::InsightFace, 0.3),
            row("n00000002", FaceModel::InsightFace, 0.4),
        ];
        let hl: BTreeSet<String> = ["n00000002".to_string()].into();
        let plots = cag_panel(&census, &hl).unwrap();
        assert_eq!(plots.len(), 3);
        assert!(plots[0].title.contains("dex vs insightface"));
        let Glyph::Marker { x, y, highlight, .. } = &plots[0].glyphs[1] else { panic!() };
        assert_eq!((*x, *y, *highlight), (0.2, 0.4, true));
    }

    #[test]
    fn cag_single_model_is_pairwise() {
        let census = vec![row("a", FaceModel::Dex, 0.1), row("b", FaceModel::Dex, 0.2)];
        let plots = cag_panel(&census, &BTreeSet::new()).unwrap();
        assert_eq!(plots.len(), 3);
        assert!(plots[2].title.starts_with("alpha (face-wise) vs xi"));
        assert_eq!(cag_panel(&[], &BTreeSet::new()).unwrap_err(), SvgError::EmptyData);
    }

    #[test]
    fn bandwidth_follows_silverman() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        let sd = 2.5f64.sqrt();
        let iqr = 2.0 / 1.34;
        let want = 0.9 * sd.min(iqr) * 5f64.powf(-0.2);
        assert!((silverman_bandwidth(&v).unwrap() - want).abs() < 1e-12);
        assert_eq!(silverman_bandwidth(&[0.3, 0.3]), None);
        assert_eq!(silverman_bandwidth(&[0.3]), None);
    }

    #[test]
    fn violin_outline_is_symmetric() {
        let g = violin(&[0.1, 0.2, 0.2, 0.5, 0.9], 2.0);
        let Glyph::Outline { points } = &g[0] else { panic!() };
        assert_eq!(points.len(), 2 * KDE_POINTS);
        for (a, b) in points.iter().zip(points.iter().rev()) {
            assert!((a[0] - 2.0 + b[0] - 2.0).abs() < 1e-12);
            assert_eq!(a[1], b[1]);
        }
        let widest = points.iter().map(|p| (p[0] - 2.0).abs()).fold(0.0, f64::max);
        assert!((widest - VIOLIN_HALF_WIDTH).abs() < 1e-12);
        // A constant group still gets its box.
        assert!(violin(&[0.4, 0.4], 0.0).iter().all(|g| !matches!(g, Glyph::Outline { .. })));
    }

    #[test]
    fn survey_grid_counts() {
        let r = |label: &str, c: Category| ExportRow {
            wordnet_id: "n1".into(),
            label: label.into(),
            mean_nsfw_train: Some(0.5),
            category: c,
            file_name: "f".into(),
        };
        let rows = vec![
            r("bikini", Category::BeachVoyeur),
            r("bikini", Category::BeachVoyeur),
            r("kimono", Category::Upskirt),
        ];
        let plots = survey_panel(&rows).unwrap();
        let labels: Vec<&str> = plots[1]
            .glyphs
            .iter()
            .filter_map(|g| match g {
                Glyph::Label { text, .. } => Some(text.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(labels, ["2", "0", "1", "0"]);
        assert_eq!(survey_panel(&[]).unwrap_err(), SvgError::EmptyData);
    }

    #[test]
    fn bias_panel_shapes() {
        let g = GroupDistribution {
            group: GroupName::Toy,
            members: vec!["a".into(), "b".into(), "c".into()],
            values: vec![0.2, 0.4, 0.9],
            mean: None,
            median: None,
            std: None,
        };
        let ranking = vec![RankedClass {
            wordnet_id: "n2".into(),
            label: "harp".into(),
            xi: -0.3,
        }];
        let plots = bias_panel(&[g], &ranking, "instruments").unwrap();
        assert_eq!(plots.len(), 2);
        assert!(matches!(plots[1].glyphs[0], Glyph::Bar { highlight: true, .. }));
        assert_eq!(bias_panel(&[], &[], "x").unwrap_err(), SvgError::EmptyData);
    }
}
