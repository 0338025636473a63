//! Window features, pruning and relevance filtering.
//!
//! Each observation window `[start, end)` is summarised per sensor channel,
//! either by its median or by a fixed catalog of extractors. Sensor columns are
//! named `<channel>__<extractor>`, e.g. `total_steps__quantile__q_0.1`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{csv_err, static_index, Cohort, SensorSeries, StaticEncoder, StaticTable};
use crate::stats::{average_ranks, median_in_place, pearson, student_t_two_sided};
use crate::sync::ObservationWindow;
use crate::types::{QuestionId, Score, Source};

pub const QUANTILE_LEVELS: [f64; 5] = [0.1, 0.25, 0.6, 0.75, 0.9];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extractor {
    Count,
    Mean,
    Median,
    Std,
    Min,
    Max,
    Range,
    Quantile(f64),
    Rmssd,
    LinearSlope,
    BenfordCorrelation,
}

impl Extractor {
    /// The fixed 15-extractor catalog, in column order.
    pub fn catalog() -> Vec<Extractor> {
        let mut v = vec![
            Extractor::Count,
            Extractor::Mean,
            Extractor::Median,
            Extractor::Std,
            Extractor::Min,
            Extractor::Max,
            Extractor::Range,
        ];
        v.extend(QUANTILE_LEVELS.iter().map(|&q| Extractor::Quantile(q)));
        v.extend([
            Extractor::Rmssd,
            Extractor::LinearSlope,
            Extractor::BenfordCorrelation,
        ]);
        v
    }

    pub fn name(&self) -> String {
        match self {
            Extractor::Count => "count".into(),
            Extractor::Mean => "mean".into(),
            Extractor::Median => "median".into(),
            Extractor::Std => "std".into(),
            Extractor::Min => "min".into(),
            Extractor::Max => "max".into(),
            Extractor::Range => "range".into(),
            Extractor::Quantile(q) => format!("quantile__q_{q}"),
            Extractor::Rmssd => "rmssd".into(),
            Extractor::LinearSlope => "linear_slope".into(),
            Extractor::BenfordCorrelation => "benford_correlation".into(),
        }
    }

    /// Applies the extractor to a day-ordered slice; `None` when undefined.
    pub fn apply(&self, slice: &[(i64, f64)]) -> Option<f64> {
        let n = slice.len();
        if let Extractor::Count = self {
            return Some(n as f64);
        }
        if n == 0 {
            return None;
        }
        let values = || slice.iter().map(|s| s.1);
        let mean = || values().sum::<f64>() / n as f64;
        match *self {
            Extractor::Count => unreachable!(),
            Extractor::Mean => Some(mean()),
            Extractor::Median => {
                let mut v: Vec<f64> = values().collect();
                Some(median_in_place(&mut v))
            }
            Extractor::Std => {
                let m = mean();
                Some((values().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt())
            }
            Extractor::Min => values().reduce(f64::min),
            Extractor::Max => values().reduce(f64::max),
            Extractor::Range => {
                Some(values().reduce(f64::max)? - values().reduce(f64::min)?)
            }
            Extractor::Quantile(q) => {
                let mut v: Vec<f64> = values().collect();
                v.sort_by(f64::total_cmp);
                Some(quantile_sorted(&v, q))
            }
            Extractor::Rmssd => {
                if n < 2 {
                    return None;
                }
                let ss: f64 = slice.windows(2).map(|w| (w[1].1 - w[0].1).powi(2)).sum();
                Some((ss / (n - 1) as f64).sqrt())
            }
            Extractor::LinearSlope => {
                if n < 2 {
                    return None;
                }
                let md = slice.iter().map(|s| s.0 as f64).sum::<f64>() / n as f64;
                let mv = mean();
                let (mut sxy, mut sxx) = (0.0, 0.0);
                for &(d, v) in slice {
                    let dx = d as f64 - md;
                    sxy += dx * (v - mv);
                    sxx += dx * dx;
                }
                (sxx > 0.0).then(|| sxy / sxx)
            }
            Extractor::BenfordCorrelation => benford_correlation(values()),
        }
    }
}

/// Linear-interpolation quantile at position `(n-1)q` of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn first_digit(x: f64) -> Option<usize> {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() {
        return None;
    }
    let mut m = a / 10f64.powf(a.log10().floor());
    if m >= 10.0 {
        m /= 10.0;
    } else if m < 1.0 {
        m *= 10.0;
    }
    Some((m.floor() as usize).clamp(1, 9))
}

/// Correlation between first-digit frequencies of `|x|` and Benford's law.
/// Undefined when fewer than two distinct leading digits occur.
pub fn benford_correlation(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut counts = [0usize; 9];
    for d in values.filter_map(first_digit) {
        counts[d - 1] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total: usize = counts.iter().sum();
    let observed: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let benford: Vec<f64> = (1..=9).map(|d| (1.0 + 1.0 / d as f64).log10()).collect();
    pearson(&observed, &benford)
}

fn extract_with(
    slices: &[(&str, &[(i64, f64)])],
    extractors: &[Extractor],
) -> Vec<(String, Option<f64>)> {
    slices
        .iter()
        .flat_map(|(channel, slice)| {
            extractors
                .iter()
                .map(move |e| (format!("{channel}__{}", e.name()), e.apply(slice)))
        })
        .collect()
}

/// One `<channel>__median` per channel; empty slices yield `None`.
pub fn extract_median(slices: &[(&str, &[(i64, f64)])]) -> Vec<(String, Option<f64>)> {
    extract_with(slices, &[Extractor::Median])
}

/// Every catalog extractor per channel.
pub fn extract_catalog(slices: &[(&str, &[(i64, f64)])]) -> Vec<(String, Option<f64>)> {
    extract_with(slices, &Extractor::catalog())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureMode {
    Median,
    Catalog,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Median => "median",
            FeatureMode::Catalog => "catalog",
        }
    }

    pub fn extractors(self) -> Vec<Extractor> {
        match self {
            FeatureMode::Median => vec![Extractor::Median],
            FeatureMode::Catalog => Extractor::catalog(),
        }
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(FeatureMode::Median),
            "catalog" => Ok(FeatureMode::Catalog),
            other => Err(Error::Config(format!("feature mode {other:?} (median|catalog)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Engineered,
    Static,
    Sensor,
}

/// Target-derived columns, always first in a feature table.
pub const ENGINEERED_COLUMNS: [&str; 4] = [
    "days_since_diagnosis",
    "previous_value",
    "delta_days",
    "followup_index",
];

pub const PREVIOUS_VALUE: &str = "previous_value";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub patient_id: String,
    pub question: QuestionId,
    pub window_start: i64,
    pub window_end: i64,
    pub target_source: Source,
    pub previous_value: Score,
    /// Aligned with [`FeatureTable::columns`].
    pub values: Vec<Option<f64>>,
    pub target: Score,
}

/// One row per (patient, question, window); engineered, static then sensor columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub rows: Vec<TrainingRow>,
}

impl FeatureTable {
    pub fn column_index(&self) -> HashMap<&str, usize> {
        self.columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect()
    }

    /// Row indices of `question`, optionally restricted to a patient predicate.
    pub fn rows_for(&self, question: QuestionId, keep: impl Fn(&str) -> bool) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.question == question && keep(&r.patient_id))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn targets(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.rows[i].target.as_f64()).collect()
    }
}

/// Assembles the feature table for `windows` (static table must be imputed).
pub fn build_feature_table(
    windows: &[ObservationWindow],
    cohort: &Cohort,
    statics: &StaticTable,
    mode: FeatureMode,
) -> Result<FeatureTable> {
    let channels = cohort.channels();
    let encoder = StaticEncoder::fit(statics);
    let static_names = encoder.column_names();
    let extractors = mode.extractors();

    let mut columns: Vec<String> = ENGINEERED_COLUMNS.iter().map(|s| s.to_string()).collect();
    let mut kinds = vec![ColumnKind::Engineered; columns.len()];
    columns.extend(static_names.iter().cloned());
    kinds.extend(std::iter::repeat_n(ColumnKind::Static, static_names.len()));
    for ch in &channels {
        for e in &extractors {
            columns.push(format!("{ch}__{}", e.name()));
            kinds.push(ColumnKind::Sensor);
        }
    }

    let statics_by_id = static_index(statics);
    let mut series: HashMap<&str, HashMap<&str, &SensorSeries>> = HashMap::new();
    for s in &cohort.sensors {
        series
            .entry(s.patient_id.as_str())
            .or_default()
            .insert(s.channel.as_str(), s);
    }

    let mut ordered: Vec<&ObservationWindow> = windows.iter().collect();
    ordered.sort_by(|a, b| {
        (&a.patient_id, a.question, a.window_start, a.window_end)
            .cmp(&(&b.patient_id, b.question, b.window_start, b.window_end))
    });

    let rows: Result<Vec<TrainingRow>> = ordered
        .par_iter()
        .map(|w| {
            let record = statics_by_id.get(w.patient_id.as_str()).ok_or_else(|| {
                Error::InvalidInput(format!("no static record for {}", w.patient_id))
            })?;
            let mut values: Vec<Option<f64>> = vec![
                Some(w.days_since_diagnosis as f64),
                Some(w.previous_value.as_f64()),
                Some(w.delta_days as f64),
                Some(w.followup_index as f64),
            ];
            values.extend(encoder.encode(record).into_iter().map(|(_, v)| v));
            let patient_series = series.get(w.patient_id.as_str());
            let slices: Vec<(&str, &[(i64, f64)])> = channels
                .iter()
                .map(|ch| {
                    let slice = patient_series
                        .and_then(|m| m.get(ch.as_str()))
                        .map(|s| s.slice(w.window_start, w.window_end))
                        .unwrap_or(&[]);
                    (ch.as_str(), slice)
                })
                .collect();
            values.extend(extract_with(&slices, &extractors).into_iter().map(|(_, v)| v));
            Ok(TrainingRow {
                patient_id: w.patient_id.clone(),
                question: w.question,
                window_start: w.window_start,
                window_end: w.window_end,
                target_source: w.target_source,
                previous_value: w.previous_value,
                values,
                target: w.target_value,
            })
        })
        .collect();

    Ok(FeatureTable {
        columns,
        kinds,
        rows: rows?,
    })
}

const META_COLUMNS: [&str; 4] = ["patient_id", "question", "window_end", "target_source"];
const TARGET_COLUMN: &str = "future_value";

pub fn write_feature_table<W: Write>(out: W, table: &FeatureTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = META_COLUMNS.to_vec();
    header.extend(table.columns.iter().map(String::as_str));
    header.push(TARGET_COLUMN);
    w.write_record(&header).map_err(csv_err)?;
    for r in &table.rows {
        let mut rec = vec![
            r.patient_id.clone(),
            r.question.to_string(),
            r.window_end.to_string(),
            r.target_source.as_str().to_owned(),
        ];
        rec.extend(
            r.values
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
        );
        rec.push(r.target.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<features>", e))
}

pub fn read_feature_table<R: Read>(input: R) -> Result<FeatureTable> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let h: Vec<&str> = headers.iter().collect();
    let n = h.len();
    let meta_len = META_COLUMNS.len();
    if n < meta_len + ENGINEERED_COLUMNS.len() + 1
        || h[..meta_len] != META_COLUMNS
        || h[meta_len..meta_len + ENGINEERED_COLUMNS.len()] != ENGINEERED_COLUMNS
        || h[n - 1] != TARGET_COLUMN
    {
        return Err(Error::InvalidInput("unexpected feature table header".into()));
    }
    let columns: Vec<String> = h[meta_len..n - 1].iter().map(|s| s.to_string()).collect();
    let kinds = columns
        .iter()
        .map(|c| {
            if ENGINEERED_COLUMNS.contains(&c.as_str()) {
                ColumnKind::Engineered
            } else if c.contains("__") {
                ColumnKind::Sensor
            } else {
                ColumnKind::Static
            }
        })
        .collect();
    let prev_idx = 1;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| Error::InvalidInput(format!("features row {}: bad {what}", i + 1));
        let values: Vec<Option<f64>> = (meta_len..n - 1)
            .map(|j| {
                let c = &rec[j];
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|_| bad(h[j]))
                }
            })
            .collect::<Result<_>>()?;
        let score = |v: f64| -> Result<Score> {
            if v.fract() != 0.0 || !(0.0..=4.0).contains(&v) {
                return Err(bad("score"));
            }
            Score::new(v as u8)
        };
        let window_start = values[0].ok_or_else(|| bad("days_since_diagnosis"))? as i64;
        let previous_value = score(values[prev_idx].ok_or_else(|| bad("previous_value"))?)?;
        rows.push(TrainingRow {
            patient_id: rec[0].to_owned(),
            question: rec[1].parse()?,
            window_end: rec[2].parse().map_err(|_| bad("window_end"))?,
            target_source: rec[3].parse()?,
            window_start,
            previous_value,
            values,
            target: score(rec[n - 1].parse().map_err(|_| bad(TARGET_COLUMN))?)?,
        });
    }
    Ok(FeatureTable {
        columns,
        kinds,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    pub max_missing_frac: f64,
    pub min_variance: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            max_missing_frac: 0.3,
            min_variance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneReason {
    Missing,
    LowVariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneEntry {
    pub column: String,
    pub reason: PruneReason,
    pub missing_frac: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    /// Surviving column indices, ascending.
    pub kept: Vec<usize>,
    /// Imputation median per kept column.
    pub medians: Vec<f64>,
    pub log: Vec<PruneEntry>,
}

/// Drops sparse or near-constant columns over `rows`; medians for the survivors.
pub fn prune_features(
    table: &FeatureTable,
    rows: &[usize],
    cfg: &PruneConfig,
) -> Result<PruneOutcome> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("cannot prune over zero windows".into()));
    }
    let mut out = PruneOutcome {
        kept: vec![],
        medians: vec![],
        log: vec![],
    };
    for (j, name) in table.columns.iter().enumerate() {
        let mut present: Vec<f64> = rows.iter().filter_map(|&i| table.rows[i].values[j]).collect();
        let missing_frac = 1.0 - present.len() as f64 / rows.len() as f64;
        let variance = if present.is_empty() {
            0.0
        } else {
            let m = present.iter().sum::<f64>() / present.len() as f64;
            present.iter().map(|x| (x - m).powi(2)).sum::<f64>() / present.len() as f64
        };
        let reason = if missing_frac > cfg.max_missing_frac {
            Some(PruneReason::Missing)
        } else if variance < cfg.min_variance {
            Some(PruneReason::LowVariance)
        } else {
            None
        };
        match reason {
            Some(reason) => out.log.push(PruneEntry {
                column: name.clone(),
                reason,
                missing_frac,
                variance,
            }),
            None => {
                out.kept.push(j);
                out.medians.push(median_in_place(&mut present));
            }
        }
    }
    if out.kept.is_empty() {
        return Err(Error::Numerical(format!(
            "all {} feature columns pruned; raise max_missing_frac or lower min_variance",
            table.columns.len()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NotTestable {
    TooFewObservations,
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Spearman rank correlation with a two-sided t-approximation p-value.
pub fn spearman_test(x: &[f64], y: &[f64]) -> std::result::Result<SpearmanResult, NotTestable> {
    let n = x.len().min(y.len());
    if n < 5 {
        return Err(NotTestable::TooFewObservations);
    }
    let rho = pearson(&average_ranks(&x[..n]), &average_ranks(&y[..n]))
        .ok_or(NotTestable::ZeroVariance)?;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let dof = (n - 2) as f64;
        student_t_two_sided(rho * (dof / (1.0 - rho * rho)).sqrt(), dof)
    };
    Ok(SpearmanResult { rho, p_value, n })
}

/// Benjamini-Yekutieli adjusted p-values, in input order.
pub fn by_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    if m == 0 {
        return vec![];
    }
    let c: f64 = (1..=m).map(|j| 1.0 / j as f64).sum();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = f64::INFINITY;
    for (rank0, &i) in order.iter().enumerate().rev() {
        let v = m as f64 * c * p[i] / (rank0 + 1) as f64;
        running = running.min(v);
        adjusted[i] = running.min(1.0);
    }
    adjusted
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    KeepAll,
    TopK,
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep_all" => Ok(SelectionMode::KeepAll),
            "top_k" => Ok(SelectionMode::TopK),
            other => Err(Error::Config(format!("selection mode {other:?} (keep_all|top_k)"))),
        }
    }
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::KeepAll => "keep_all",
            SelectionMode::TopK => "top_k",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub mode: SelectionMode,
    pub fdr_level: f64,
    pub k: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            mode: SelectionMode::KeepAll,
            fdr_level: 0.05,
            k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relevance {
    pub feature: String,
    pub rho: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub selected: bool,
    pub n: usize,
}

/// Adjusts p-values jointly and marks the selected features.
pub fn fdr_select(tested: Vec<(String, SpearmanResult)>, cfg: &SelectionConfig) -> Vec<Relevance> {
    let p: Vec<f64> = tested.iter().map(|t| t.1.p_value).collect();
    let adjusted = by_adjust(&p);
    let mut out: Vec<Relevance> = tested
        .into_iter()
        .zip(adjusted)
        .map(|((feature, r), p_adjusted)| Relevance {
            feature,
            rho: r.rho,
            p_value: r.p_value,
            p_adjusted,
            selected: false,
            n: r.n,
        })
        .collect();
    match cfg.mode {
        SelectionMode::KeepAll => {
            for r in &mut out {
                r.selected = r.p_adjusted <= cfg.fdr_level;
            }
        }
        SelectionMode::TopK => {
            let mut order: Vec<usize> = (0..out.len()).collect();
            order.sort_by(|&a, &b| {
                out[a]
                    .p_value
                    .total_cmp(&out[b].p_value)
                    .then_with(|| out[a].feature.cmp(&out[b].feature))
            });
            for &i in order.iter().take(cfg.k) {
                out[i].selected = true;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureConfig {
    pub prune: PruneConfig,
    pub selection: SelectionConfig,
}

/// Training-time column choice and imputation values; part of every fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedFeatures {
    pub names: Vec<String>,
    pub medians: Vec<f64>,
}

impl FittedFeatures {
    /// Dense design matrix for `rows`, missing cells filled with training medians.
    pub fn transform(&self, table: &FeatureTable, rows: &[usize]) -> Result<Array2<f64>> {
        let index = table.column_index();
        let cols: Vec<usize> = self
            .names
            .iter()
            .map(|n| {
                index.get(n.as_str()).copied().ok_or_else(|| {
                    Error::InvalidInput(format!("feature column {n:?} not present in table"))
                })
            })
            .collect::<Result<_>>()?;
        let mut x = Array2::zeros((rows.len(), cols.len()));
        for (r, &i) in rows.iter().enumerate() {
            let values = &table.rows[i].values;
            for (c, &j) in cols.iter().enumerate() {
                x[[r, c]] = values[j].unwrap_or(self.medians[c]);
            }
        }
        Ok(x)
    }
}

/// Spearman relevance of each kept sensor column against the targets of `rows`.
pub fn relevance(
    table: &FeatureTable,
    rows: &[usize],
    prune: &PruneOutcome,
    cfg: &SelectionConfig,
) -> Vec<Relevance> {
    let y = table.targets(rows);
    let mut tested = Vec::new();
    for (k, &j) in prune.kept.iter().enumerate() {
        if table.kinds[j] != ColumnKind::Sensor {
            continue;
        }
        let x: Vec<f64> = rows
            .iter()
            .map(|&i| table.rows[i].values[j].unwrap_or(prune.medians[k]))
            .collect();
        match spearman_test(&x, &y) {
            Ok(r) => tested.push((table.columns[j].clone(), r)),
            Err(reason) => log::debug!("{} not testable: {reason:?}", table.columns[j]),
        }
    }
    fdr_select(tested, cfg)
}

/// Prune, impute and relevance-filter using `rows` only.
pub fn fit_features(
    table: &FeatureTable,
    rows: &[usize],
    cfg: &FeatureConfig,
) -> Result<(FittedFeatures, Vec<Relevance>)> {
    let prune = prune_features(table, rows, &cfg.prune)?;
    let report = relevance(table, rows, &prune, &cfg.selection);
    let selected: std::collections::HashSet<&str> = report
        .iter()
        .filter(|r| r.selected)
        .map(|r| r.feature.as_str())
        .collect();
    let mut names = Vec::new();
    let mut medians = Vec::new();
    for (k, &j) in prune.kept.iter().enumerate() {
        let name = &table.columns[j];
        if table.kinds[j] != ColumnKind::Sensor || selected.contains(name.as_str()) {
            names.push(name.clone());
            medians.push(prune.medians[k]);
        }
    }
    Ok((FittedFeatures { names, medians }, report))
}

pub fn write_relevance<W: Write>(out: W, reports: &[(QuestionId, Vec<Relevance>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["question", "feature", "rho", "p", "p_adj", "selected"])
        .map_err(csv_err)?;
    for (q, rels) in reports {
        for r in rels {
            w.write_record([
                q.to_string(),
                r.feature.clone(),
                r.rho.to_string(),
                r.p_value.to_string(),
                r.p_adjusted.to_string(),
                r.selected.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<relevance>", e))
}
