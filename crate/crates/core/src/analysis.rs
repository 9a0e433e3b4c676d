//! Correlation analysis between offline and online metrics: Pearson pairs
//! over study records, best-model filtering, parameter-axis selection
//! consistency, and scatter export as CSV + SVG.

use crate::float::Float;
use crate::offline::{OfflineReport, METRIC_IDS};
use crate::online::OnlineReport;
use crate::policy::PerturbationSpec;
use crate::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CORRELATION_FORMAT: &str = "driveval-correlation/1";
/// Online metric identifiers.
pub const ONLINE_METRIC_IDS: [&str; 3] = ["success_rate", "avg_completion", "km_per_infraction"];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least two points, got {n}")]
    TooFewPoints { n: usize },
    #[error("zero variance on the {axis} axis")]
    ZeroVariance { axis: &'static str },
    #[error("empty record set")]
    Empty,
    #[error("model `{model}` lacks metric `{metric}` on `{variant}`")]
    MissingMetric { model: String, metric: String, variant: String },
    #[error("parameter group `{group}` is empty or too small")]
    EmptyGroup { group: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Sample Pearson correlation coefficient, clamped to [-1, 1] against
/// rounding.
pub fn pearson<F: Float>(x: &[F], y: &[F]) -> Result<F, AnalysisError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(AnalysisError::TooFewPoints { n: x.len().min(y.len()) });
    }
    let n = F::from_n(x.len());
    let mx = x.iter().copied().sum::<F>() / n;
    let my = y.iter().copied().sum::<F>() / n;
    let mut sxx = F::zero();
    let mut syy = F::zero();
    let mut sxy = F::zero();
    for (a, b) in x.iter().zip(y) {
        let dx = *a - mx;
        let dy = *b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == F::zero() {
        return Err(AnalysisError::ZeroVariance { axis: "x" });
    }
    if syy == F::zero() {
        return Err(AnalysisError::ZeroVariance { axis: "y" });
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.min(F::one()).max(-F::one()))
}

/// How a study model was constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Expert,
    Trained { config: TrainConfig },
    Perturbed { spec: PerturbationSpec, seed: u64 },
}

impl ModelConfig {
    pub fn trained(&self) -> Option<&TrainConfig> {
        match self {
            ModelConfig::Trained { config } => Some(config),
            _ => None,
        }
    }
}

/// One evaluated model: offline reports per validation variant and online
/// reports per town.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub model_id: String,
    pub config: ModelConfig,
    /// Keyed by validation variant, e.g. `B:3cam+noise`.
    pub offline: BTreeMap<String, OfflineReport<f64>>,
    /// Keyed by town id.
    pub online: BTreeMap<String, OnlineReport>,
}

impl StudyRecord {
    pub fn offline_value(&self, metric: &str, variant: &str) -> Option<f64> {
        self.offline.get(variant).and_then(|r| r.value(metric))
    }

    pub fn online_value(&self, metric: &str, town: &str) -> Option<f64> {
        let r = self.online.get(town)?;
        match metric {
            "success_rate" => Some(r.success_rate),
            "avg_completion" => Some(r.avg_completion),
            "km_per_infraction" => Some(r.km_per_infraction),
            _ => None,
        }
    }
}

/// Keep the best `keep_fraction` of records (lowest offline error) under the
/// named metric and variant; ties break by model id.
pub fn filter_best(
    records: &[StudyRecord],
    metric: &str,
    variant: &str,
    keep_fraction: f64,
) -> Result<Vec<StudyRecord>, AnalysisError> {
    assert!(
        keep_fraction > 0.0 && keep_fraction <= 1.0,
        "keep fraction must be in (0, 1], got {keep_fraction}"
    );
    if records.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut scored = Vec::with_capacity(records.len());
    for r in records {
        let v = r.offline_value(metric, variant).ok_or_else(|| AnalysisError::MissingMetric {
            model: r.model_id.clone(),
            metric: metric.to_string(),
            variant: variant.to_string(),
        })?;
        scored.push((v, r.clone()));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.model_id.cmp(&b.1.model_id)));
    let keep = (keep_fraction * records.len() as f64).ceil() as usize;
    Ok(scored.into_iter().take(keep).map(|(_, r)| r).collect())
}

/// Filtering directive for [`correlate_study`]: keep the best fraction per
/// pair, scored by the pair's own offline metric unless one is named.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub metric: Option<String>,
    pub keep_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrRow {
    pub offline_metric: String,
    pub variant: String,
    pub online_metric: String,
    pub town: String,
    pub r: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlinePairRow {
    pub town: String,
    pub metric_a: String,
    pub metric_b: String,
    pub r: f64,
    pub n: usize,
}

/// All offline-online and online-online Pearson pairs of a study. Degenerate
/// pairs become warning entries rather than failing the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub format: String,
    /// Hash of the producing configuration, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub filter: Option<FilterSpec>,
    pub rows: Vec<CorrRow>,
    pub online_pairs: Vec<OnlinePairRow>,
    pub warnings: Vec<String>,
}

impl CorrelationReport {
    pub fn row(
        &self,
        offline_metric: &str,
        variant: &str,
        online_metric: &str,
        town: &str,
    ) -> Option<&CorrRow> {
        self.rows.iter().find(|r| {
            r.offline_metric == offline_metric
                && r.variant == variant
                && r.online_metric == online_metric
                && r.town == town
        })
    }

    pub fn online_pair(&self, town: &str, a: &str, b: &str) -> Option<&OnlinePairRow> {
        self.online_pairs
            .iter()
            .find(|r| r.town == town && r.metric_a == a && r.metric_b == b)
    }
}

pub fn correlate_study(
    records: &[StudyRecord],
    filter: Option<FilterSpec>,
) -> Result<CorrelationReport, AnalysisError> {
    if records.len() < 2 {
        return Err(AnalysisError::TooFewPoints { n: records.len() });
    }
    let mut variants: Vec<String> = Vec::new();
    let mut towns: Vec<String> = Vec::new();
    for r in records {
        for v in r.offline.keys() {
            if !variants.contains(v) {
                variants.push(v.clone());
            }
        }
        for t in r.online.keys() {
            if !towns.contains(t) {
                towns.push(t.clone());
            }
        }
    }
    variants.sort();
    towns.sort();

    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for variant in &variants {
        for metric in METRIC_IDS {
            // Best-fraction filtering per pair, scored by this pair's metric
            // unless the filter names one.
            let pool: Vec<StudyRecord> = match &filter {
                Some(f) => {
                    let by = f.metric.clone().unwrap_or_else(|| metric.to_string());
                    match filter_best(records, &by, variant, f.keep_fraction) {
                        Ok(p) => p,
                        Err(AnalysisError::MissingMetric { model, metric, variant }) => {
                            warnings.push(format!(
                                "skipped {metric}@{variant}: model {model} lacks the metric"
                            ));
                            continue;
                        }
                        Err(e) => return Err(e),
                    }
                }
                None => records.to_vec(),
            };
            for town in &towns {
                for online_metric in ONLINE_METRIC_IDS {
                    let mut xs = Vec::new();
                    let mut ys = Vec::new();
                    for r in &pool {
                        if let (Some(x), Some(y)) = (
                            r.offline_value(metric, variant),
                            r.online_value(online_metric, town),
                        ) {
                            xs.push(x);
                            ys.push(y);
                        }
                    }
                    match pearson(&xs, &ys) {
                        Ok(r) => rows.push(CorrRow {
                            offline_metric: metric.to_string(),
                            variant: variant.clone(),
                            online_metric: online_metric.to_string(),
                            town: town.clone(),
                            r,
                            n: xs.len(),
                        }),
                        Err(e) => warnings.push(format!(
                            "degenerate pair {metric}@{variant} vs {online_metric}@{town}: {e}"
                        )),
                    }
                }
            }
        }
    }

    let mut online_pairs = Vec::new();
    for town in &towns {
        for (i, a) in ONLINE_METRIC_IDS.iter().enumerate() {
            for b in ONLINE_METRIC_IDS.iter().skip(i + 1) {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for r in records {
                    if let (Some(x), Some(y)) = (r.online_value(a, town), r.online_value(b, town)) {
                        xs.push(x);
                        ys.push(y);
                    }
                }
                match pearson(&xs, &ys) {
                    Ok(r) => online_pairs.push(OnlinePairRow {
                        town: town.clone(),
                        metric_a: a.to_string(),
                        metric_b: b.to_string(),
                        r,
                        n: xs.len(),
                    }),
                    Err(e) => warnings.push(format!("degenerate pair {a} vs {b}@{town}: {e}")),
                }
            }
        }
    }

    Ok(CorrelationReport {
        format: CORRELATION_FORMAT.into(),
        config_hash: None,
        filter,
        rows,
        online_pairs,
        warnings,
    })
}

/// A parameter-axis group: models sharing every configuration axis but one,
/// evaluated in one town against one validation variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterGroup {
    /// The axis the group's models vary on (e.g. `amount`, `loss`).
    pub axis: String,
    pub town: String,
    /// Validation variant used to score the offline metric.
    pub variant: String,
    pub model_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub matches: usize,
    pub groups: usize,
    /// Per group: (axis@town, matched).
    pub per_group: Vec<(String, bool)>,
}

/// For each group: does the model with the lowest offline metric also have
/// the highest success rate? Any tie on either side counts as a non-match.
pub fn selection_consistency(
    records: &[StudyRecord],
    groups: &[ParameterGroup],
    offline_metric: &str,
) -> Result<ConsistencyResult, AnalysisError> {
    let by_id: BTreeMap<&str, &StudyRecord> =
        records.iter().map(|r| (r.model_id.as_str(), r)).collect();
    let mut matches = 0;
    let mut per_group = Vec::with_capacity(groups.len());
    for g in groups {
        let label = format!("{}@{}", g.axis, g.town);
        let mut scored = Vec::new();
        for id in &g.model_ids {
            let r = by_id.get(id.as_str()).ok_or_else(|| AnalysisError::EmptyGroup {
                group: format!("{label}: unknown model {id}"),
            })?;
            let off = r.offline_value(offline_metric, &g.variant).ok_or_else(|| {
                AnalysisError::MissingMetric {
                    model: id.clone(),
                    metric: offline_metric.to_string(),
                    variant: g.variant.clone(),
                }
            })?;
            let on = r.online_value("success_rate", &g.town).ok_or_else(|| {
                AnalysisError::MissingMetric {
                    model: id.clone(),
                    metric: "success_rate".to_string(),
                    variant: g.town.clone(),
                }
            })?;
            scored.push((id.clone(), off, on));
        }
        if scored.len() < 2 {
            return Err(AnalysisError::EmptyGroup { group: label });
        }
        let best_off = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let best_on = scored.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
        let off_winners: Vec<&str> =
            scored.iter().filter(|s| s.1 == best_off).map(|s| s.0.as_str()).collect();
        let on_winners: Vec<&str> =
            scored.iter().filter(|s| s.2 == best_on).map(|s| s.0.as_str()).collect();
        let matched =
            off_winners.len() == 1 && on_winners.len() == 1 && off_winners[0] == on_winners[0];
        if matched {
            matches += 1;
        }
        per_group.push((label, matched));
    }
    Ok(ConsistencyResult { matches, groups: groups.len(), per_group })
}

/// One axis of a scatter plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "side", rename_all = "snake_case")]
pub enum AxisKey {
    Offline { metric: String, variant: String },
    Online { metric: String, town: String },
}

impl AxisKey {
    fn value(&self, r: &StudyRecord) -> Option<f64> {
        match self {
            AxisKey::Offline { metric, variant } => r.offline_value(metric, variant),
            AxisKey::Online { metric, town } => r.online_value(metric, town),
        }
    }

    fn label(&self) -> String {
        match self {
            AxisKey::Offline { metric, variant } => format!("{metric} @ {variant}"),
            AxisKey::Online { metric, town } => format!("{metric} @ town {town}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub x: AxisKey,
    pub y: AxisKey,
}

/// Marker-size rank: distinct training data amounts in ascending order;
/// models without a data amount (zoo, expert) rank 0.
fn data_hours_ranks(records: &[StudyRecord]) -> BTreeMap<String, usize> {
    let mut hours: Vec<f64> = records
        .iter()
        .filter_map(|r| r.config.trained().map(|c| c.data_hours))
        .collect();
    hours.sort_by(f64::total_cmp);
    hours.dedup();
    records
        .iter()
        .map(|r| {
            let rank = r
                .config
                .trained()
                .and_then(|c| hours.iter().position(|h| *h == c.data_hours))
                .map_or(0, |p| p + 1);
            (r.model_id.clone(), rank)
        })
        .collect()
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Write a scatter pair as a CSV (model id, x, y, size rank) and a
/// self-contained SVG with the Pearson r annotated. Deterministic output:
/// re-emitting the same inputs is byte-identical.
pub fn emit_scatter(
    records: &[StudyRecord],
    pair: &PairSpec,
    csv_path: &Path,
    svg_path: &Path,
) -> Result<(), AnalysisError> {
    let ranks = data_hours_ranks(records);
    let mut points: Vec<(String, f64, f64, usize)> = Vec::new();
    for r in records {
        if let (Some(x), Some(y)) = (pair.x.value(r), pair.y.value(r)) {
            points.push((r.model_id.clone(), x, y, ranks[&r.model_id]));
        }
    }
    points.sort_by(|a, b| a.0.cmp(&b.0));

    let mut csv = String::from("model_id,x,y,size_rank\n");
    for (id, x, y, rank) in &points {
        csv.push_str(&format!("{id},{},{},{rank}\n", fmt6(*x), fmt6(*y)));
    }
    std::fs::write(csv_path, csv)
        .map_err(|source| AnalysisError::Io { path: csv_path.to_path_buf(), source })?;

    let svg = render_scatter_svg(&points, pair);
    std::fs::write(svg_path, svg)
        .map_err(|source| AnalysisError::Io { path: svg_path.to_path_buf(), source })?;
    Ok(())
}

fn render_scatter_svg(points: &[(String, f64, f64, usize)], pair: &PairSpec) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, x, y, _) in points {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if points.is_empty() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    let pad = |lo: &mut f64, hi: &mut f64| {
        let span = (*hi - *lo).abs().max(1e-9);
        *lo -= 0.05 * span;
        *hi += 0.05 * span;
    };
    pad(&mut x_min, &mut x_max);
    pad(&mut y_min, &mut y_max);

    let sx = |x: f64| M + (x - x_min) / (x_max - x_min) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y_min) / (y_max - y_min) * (H - 2.0 * M);

    let xs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.2).collect();
    let r_text = match pearson(&xs, &ys) {
        Ok(r) => format!("r = {r:.3}"),
        Err(_) => "r = n/a".to_string(),
    };

    let mut svg = String::new();
    svg.push_str(r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    svg.push('\n');
    svg.push_str(&format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    ));
    svg.push('\n');
    svg.push_str(&format!(
        r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#
    ));
    svg.push('\n');
    // axes
    svg.push_str(&format!(
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        fmt6(M),
        fmt6(H - M),
        fmt6(W - M),
        fmt6(H - M)
    ));
    svg.push('\n');
    svg.push_str(&format!(
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        fmt6(M),
        fmt6(M),
        fmt6(M),
        fmt6(H - M)
    ));
    svg.push('\n');
    for (id, x, y, rank) in points {
        let radius = 3.0 + 2.0 * *rank as f64;
        svg.push_str(&format!(
            r#"<circle cx="{}" cy="{}" r="{}" fill="steelblue" fill-opacity="0.6" stroke="navy"><title>{id}</title></circle>"#,
            fmt6(sx(*x)),
            fmt6(sy(*y)),
            fmt6(radius)
        ));
        svg.push('\n');
    }
    svg.push_str(&format!(
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{}</text>"#,
        fmt6(W / 2.0),
        fmt6(H - M / 3.0),
        xml_escape(&pair.x.label())
    ));
    svg.push('\n');
    svg.push_str(&format!(
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle" transform="rotate(-90 {} {})">{}</text>"#,
        fmt6(M / 3.0),
        fmt6(H / 2.0),
        fmt6(M / 3.0),
        fmt6(H / 2.0),
        xml_escape(&pair.y.label())
    ));
    svg.push('\n');
    svg.push_str(&format!(
        r#"<text x="{}" y="{}" font-size="16">{r_text}</text>"#,
        fmt6(W - M - 90.0),
        fmt6(M)
    ));
    svg.push('\n');
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
