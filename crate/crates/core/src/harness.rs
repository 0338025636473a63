//! Naive baseline, grouped nested cross-validation, grid search and
//! per-question model selection.
//!
//! Every split is by patient: a patient's windows never appear on both sides.
//! Candidates are scored on clinician windows of held-out patients; the
//! augmented variant only changes which windows a model is trained on.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::featurize::{
    fit_features, FeatureConfig, FeatureMode, FeatureTable, FittedFeatures, PREVIOUS_VALUE,
};
use crate::ingest::csv_err;
use crate::kv::Document;
use crate::metrics::{compute_metrics, MetricMode, MetricReport};
use crate::solver::{
    fit_standardized, ElasticNetModel, ElasticNetParams, FeatureImportance, Standardized,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::types::{QuestionId, Score, N_QUESTIONS};

/// Carry-forward prediction: the previous score, unchanged.
pub fn naive_predict(previous_value: Score) -> f64 {
    previous_value.as_f64()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InnerFold {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OuterFold {
    pub test: Vec<String>,
    pub trainval: Vec<String>,
    pub inner: Vec<InnerFold>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub seed: u64,
    pub outer: Vec<OuterFold>,
}

fn partition(ids: &[String], k: usize) -> Vec<Vec<String>> {
    let n = ids.len();
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for g in 0..k {
        let size = n / k + usize::from(g < n % k);
        out.push(ids[start..start + size].to_vec());
        start += size;
    }
    out
}

/// Shuffles patients with `seed` and splits them into `outer_k` test groups,
/// each trainval part further split into `inner_k` validation groups.
pub fn plan_folds(patient_ids: &[String], outer_k: usize, inner_k: usize, seed: u64) -> Result<FoldPlan> {
    let mut ids: Vec<String> = patient_ids.to_vec();
    ids.sort();
    ids.dedup();
    if outer_k < 2 || inner_k < 2 {
        return Err(Error::Config("outer_k and inner_k must be at least 2".into()));
    }
    if ids.len() < outer_k {
        return Err(Error::InvalidInput(format!(
            "{} patients cannot fill {outer_k} outer folds; lower outer_k or add patients",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let groups = partition(&ids, outer_k);
    let mut outer = Vec::with_capacity(outer_k);
    for (g, test) in groups.iter().enumerate() {
        let mut trainval: Vec<String> = groups
            .iter()
            .enumerate()
            .filter(|(h, _)| *h != g)
            .flat_map(|(_, grp)| grp.iter().cloned())
            .collect();
        if trainval.len() < inner_k {
            return Err(Error::InvalidInput(format!(
                "{} train/validation patients cannot fill {inner_k} inner folds; lower inner_k",
                trainval.len()
            )));
        }
        trainval.shuffle(&mut rng);
        let inner_groups = partition(&trainval, inner_k);
        let inner = (0..inner_k)
            .map(|v| InnerFold {
                val: inner_groups[v].clone(),
                train: inner_groups
                    .iter()
                    .enumerate()
                    .filter(|(h, _)| *h != v)
                    .flat_map(|(_, grp)| grp.iter().cloned())
                    .collect(),
            })
            .collect();
        outer.push(OuterFold {
            test: test.clone(),
            trainval,
            inner,
        });
    }
    Ok(FoldPlan { seed, outer })
}

/// Splits patients into (train, holdout) with the given holdout fraction.
pub fn split_holdout(patient_ids: &[String], frac: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Config(format!("holdout_frac must lie in (0, 1), got {frac}")));
    }
    let mut ids = patient_ids.to_vec();
    ids.sort();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_hold = ((ids.len() as f64 * frac).round() as usize).clamp(1, ids.len().saturating_sub(1));
    let holdout = ids.split_off(ids.len() - n_hold);
    ids.sort();
    let mut holdout = holdout;
    holdout.sort();
    Ok((ids, holdout))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DataVariant {
    Clinical,
    Augmented,
}

impl DataVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            DataVariant::Clinical => "clinical",
            DataVariant::Augmented => "augmented",
        }
    }
}

impl FromStr for DataVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clinical" => Ok(DataVariant::Clinical),
            "augmented" => Ok(DataVariant::Augmented),
            other => Err(Error::InvalidInput(format!("data variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Naive,
    ElasticNet,
    Lasso,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Naive => "naive",
            ModelKind::ElasticNet => "elasticnet",
            ModelKind::Lasso => "lasso",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CandidateId {
    Naive,
    Linear {
        kind: ModelKind,
        mode: FeatureMode,
        data: DataVariant,
    },
}

impl CandidateId {
    pub fn kind(&self) -> ModelKind {
        match self {
            CandidateId::Naive => ModelKind::Naive,
            CandidateId::Linear { kind, .. } => *kind,
        }
    }

    /// Every linear candidate over the given feature modes and data variants, plus naive.
    pub fn all(modes: &[FeatureMode], variants: &[DataVariant]) -> Vec<CandidateId> {
        let mut v = vec![CandidateId::Naive];
        for &mode in modes {
            for &data in variants {
                for kind in [ModelKind::ElasticNet, ModelKind::Lasso] {
                    v.push(CandidateId::Linear { kind, mode, data });
                }
            }
        }
        v
    }
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CandidateId::Naive => f.write_str("naive"),
            CandidateId::Linear { kind, mode, data } => {
                write!(f, "{}/{}/{}", kind.as_str(), mode.as_str(), data.as_str())
            }
        }
    }
}

impl FromStr for CandidateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "naive" {
            return Ok(CandidateId::Naive);
        }
        let parts: Vec<&str> = s.split('/').collect();
        let bad = || Error::InvalidInput(format!("bad candidate id {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let kind = match parts[0] {
            "elasticnet" => ModelKind::ElasticNet,
            "lasso" => ModelKind::Lasso,
            _ => return Err(bad()),
        };
        Ok(CandidateId::Linear {
            kind,
            mode: parts[1].parse().map_err(|_| bad())?,
            data: parts[2].parse()?,
        })
    }
}

/// `n` points evenly spaced in log10 between `lo` and `hi`, inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub lambdas: Vec<f64>,
    pub elasticnet_alphas: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            lambdas: logspace(1e-4, 10.0, 20),
            elasticnet_alphas: (1..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

impl Grid {
    pub fn alphas_for(&self, kind: ModelKind) -> Vec<f64> {
        match kind {
            ModelKind::Lasso => vec![1.0],
            _ => self.elasticnet_alphas.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub outer_k: usize,
    pub inner_k: usize,
    pub seed: u64,
    pub grid: Grid,
    pub features: FeatureConfig,
    pub metric_mode: MetricMode,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            outer_k: 10,
            inner_k: 5,
            seed: 0,
            grid: Grid::default(),
            features: FeatureConfig::default(),
            metric_mode: MetricMode::Rounded,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Feature tables keyed by (feature mode, data variant).
#[derive(Debug, Clone, Default)]
pub struct Datasets {
    pub tables: BTreeMap<(FeatureMode, DataVariant), FeatureTable>,
}

impl Datasets {
    pub fn table(&self, mode: FeatureMode, data: DataVariant) -> Result<&FeatureTable> {
        self.tables.get(&(mode, data)).ok_or_else(|| {
            Error::InvalidInput(format!(
                "no {}/{} feature table",
                mode.as_str(),
                data.as_str()
            ))
        })
    }

    /// Clinician windows used for validation and testing.
    pub fn eval_table(&self, mode: FeatureMode) -> Result<&FeatureTable> {
        self.table(mode, DataVariant::Clinical)
    }

    fn any_eval_table(&self) -> Result<&FeatureTable> {
        self.tables
            .iter()
            .find(|((_, d), _)| *d == DataVariant::Clinical)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::InvalidInput("no clinical feature table".into()))
    }
}

fn member_set(ids: &[String]) -> HashSet<&str> {
    ids.iter().map(String::as_str).collect()
}

fn rmse_of(table: &FeatureTable, rows: &[usize], preds: &[f64], mode: MetricMode) -> Result<f64> {
    let pairs: Result<Vec<(Score, f64)>> = rows
        .iter()
        .zip(preds)
        .map(|(&i, &p)| Ok((table.rows[i].target, mode.apply(p)?)))
        .collect();
    Ok(compute_metrics(pairs?)?.rmse)
}

/// Feature fitting plus elastic net on the given training rows.
pub fn fit_linear(
    table: &FeatureTable,
    rows: &[usize],
    lambda: f64,
    alpha: f64,
    cfg: &TrainConfig,
) -> Result<(FittedFeatures, ElasticNetModel)> {
    let (features, _) = fit_features(table, rows, &cfg.features)?;
    let x = features.transform(table, rows)?;
    let data = Standardized::new(x.view(), &table.targets(rows))?;
    let params = ElasticNetParams {
        lambda,
        alpha,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
    };
    let model = fit_standardized(&data, &features.names, &params, None)?;
    Ok((features, model))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellScore {
    pub lambda: f64,
    pub alpha: f64,
    /// Sum of per-fold validation RMSE; `None` once any fold failed to fit.
    pub rmse_sum: Option<f64>,
    pub n_folds: usize,
}

impl CellScore {
    pub fn mean_rmse(&self) -> Option<f64> {
        match (self.rmse_sum, self.n_folds) {
            (Some(s), n) if n > 0 => Some(s / n as f64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub cells: Vec<CellScore>,
    pub best: CellScore,
    /// Columns chosen by feature fitting on each inner-train split.
    pub masks: Vec<Option<Vec<String>>>,
}

/// Minimal mean RMSE; ties go to the larger lambda, then the larger alpha.
pub fn best_cell(cells: &[CellScore]) -> Option<CellScore> {
    cells
        .iter()
        .filter_map(|c| c.mean_rmse().map(|m| (m, c)))
        .min_by(|(ma, a), (mb, b)| {
            ma.total_cmp(mb)
                .then_with(|| b.lambda.total_cmp(&a.lambda))
                .then_with(|| b.alpha.total_cmp(&a.alpha))
        })
        .map(|(_, c)| *c)
}

/// Scores every (lambda, alpha) cell over the inner folds. Training rows come
/// from `train_table`, validation rows from `eval_table`.
pub fn grid_search(
    question: QuestionId,
    train_table: &FeatureTable,
    eval_table: &FeatureTable,
    folds: &[InnerFold],
    lambdas: &[f64],
    alphas: &[f64],
    cfg: &TrainConfig,
) -> Result<GridSearchResult> {
    if lambdas.is_empty() || alphas.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let mut cells: Vec<CellScore> = alphas
        .iter()
        .flat_map(|&alpha| {
            lambdas.iter().map(move |&lambda| CellScore {
                lambda,
                alpha,
                rmse_sum: Some(0.0),
                n_folds: 0,
            })
        })
        .collect();
    // descending lambdas so each path starts from the sparsest fit
    let mut path_order: Vec<usize> = (0..lambdas.len()).collect();
    path_order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));

    let mut masks = Vec::with_capacity(folds.len());
    for fold in folds {
        let train_ids = member_set(&fold.train);
        let val_ids = member_set(&fold.val);
        let train_rows = train_table.rows_for(question, |p| train_ids.contains(p));
        let val_rows = eval_table.rows_for(question, |p| val_ids.contains(p));
        if val_rows.is_empty() {
            masks.push(None);
            continue;
        }
        let prepared = (|| -> Result<_> {
            let (features, _) = fit_features(train_table, &train_rows, &cfg.features)?;
            let x = features.transform(train_table, &train_rows)?;
            let data = Standardized::new(x.view(), &train_table.targets(&train_rows))?;
            let xv = features.transform(eval_table, &val_rows)?;
            Ok((features, data, xv))
        })();
        let (features, data, xv) = match prepared {
            Ok(p) => p,
            Err(e) => {
                log::debug!("{question}: inner fold unusable: {e}");
                masks.push(None);
                for c in &mut cells {
                    c.rmse_sum = None;
                }
                continue;
            }
        };
        for (ai, &alpha) in alphas.iter().enumerate() {
            let mut warm: Option<Vec<f64>> = None;
            for &li in &path_order {
                let cell = &mut cells[ai * lambdas.len() + li];
                let params = ElasticNetParams {
                    lambda: lambdas[li],
                    alpha,
                    tol: cfg.tol,
                    max_iter: cfg.max_iter,
                };
                let scored = fit_standardized(&data, &features.names, &params, warm.as_deref())
                    .and_then(|m| {
                        let preds = m.predict(xv.view())?;
                        let rmse = rmse_of(eval_table, &val_rows, &preds, cfg.metric_mode)?;
                        Ok((m, rmse))
                    });
                match scored {
                    Ok((m, rmse)) => {
                        warm = Some(m.coefficients);
                        if let Some(s) = cell.rmse_sum.as_mut() {
                            *s += rmse;
                        }
                        cell.n_folds += 1;
                    }
                    Err(e) => {
                        log::debug!("{question}: cell ({}, {alpha}) failed: {e}", lambdas[li]);
                        cell.rmse_sum = None;
                    }
                }
            }
        }
        masks.push(Some(features.names));
    }
    let best = best_cell(&cells)
        .ok_or_else(|| Error::Numerical(format!("{question}: every grid cell failed")))?;
    Ok(GridSearchResult { cells, best, masks })
}

/// A question's final predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum QuestionModel {
    Naive,
    Linear {
        candidate: CandidateId,
        features: FittedFeatures,
        model: ElasticNetModel,
    },
}

impl QuestionModel {
    pub fn candidate(&self) -> CandidateId {
        match self {
            QuestionModel::Naive => CandidateId::Naive,
            QuestionModel::Linear { candidate, .. } => *candidate,
        }
    }

    pub fn importance(&self) -> Vec<FeatureImportance> {
        match self {
            QuestionModel::Naive => vec![FeatureImportance {
                feature: PREVIOUS_VALUE.into(),
                importance: 1.0,
                rank: 1,
            }],
            QuestionModel::Linear { model, .. } => model.importance(),
        }
    }

    /// Raw predictions for `rows` of the matching clinical table.
    pub fn predict(&self, datasets: &Datasets, rows: &[usize]) -> Result<Vec<f64>> {
        match self {
            QuestionModel::Naive => {
                let t = datasets.any_eval_table()?;
                Ok(rows.iter().map(|&i| naive_predict(t.rows[i].previous_value)).collect())
            }
            QuestionModel::Linear {
                candidate: CandidateId::Linear { mode, .. },
                features,
                model,
            } => {
                let t = datasets.eval_table(*mode)?;
                model.predict(features.transform(t, rows)?.view())
            }
            QuestionModel::Linear { .. } => {
                Err(Error::InvalidInput("linear model with naive candidate id".into()))
            }
        }
    }

    pub fn to_document(&self, question: QuestionId) -> Document {
        let mut d = Document::new();
        d.push("format", "alsfrs-question-model/1");
        d.push("question", question);
        d.push("candidate", self.candidate());
        if let QuestionModel::Linear {
            features, model, ..
        } = self
        {
            for (j, m) in features.medians.iter().enumerate() {
                d.push(format!("impute.{j}.median"), m);
            }
            for (k, v) in model.to_document().entries() {
                d.push(k.clone(), v);
            }
        }
        d
    }

    pub fn from_document(d: &Document) -> Result<(QuestionId, Self)> {
        if d.require("format")? != "alsfrs-question-model/1" {
            return Err(Error::InvalidInput("unknown model document format".into()));
        }
        let question: QuestionId = d.require("question")?.parse()?;
        let candidate: CandidateId = d.require("candidate")?.parse()?;
        if candidate == CandidateId::Naive {
            return Ok((question, QuestionModel::Naive));
        }
        let model = ElasticNetModel::from_document(d)?;
        let medians = (0..model.feature_names.len())
            .map(|j| d.parse_value(&format!("impute.{j}.median")))
            .collect::<Result<Vec<f64>>>()?;
        Ok((
            question,
            QuestionModel::Linear {
                candidate,
                features: FittedFeatures {
                    names: model.feature_names.clone(),
                    medians,
                },
                model,
            },
        ))
    }
}

/// Question -> model; questions without a fit fall back to naive.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub models: Vec<QuestionModel>,
}

impl Default for Bundle {
    fn default() -> Self {
        Bundle {
            models: vec![QuestionModel::Naive; N_QUESTIONS],
        }
    }
}

impl Bundle {
    pub fn get(&self, q: QuestionId) -> &QuestionModel {
        &self.models[q.slot()]
    }

    pub fn file_name(q: QuestionId) -> String {
        format!("Q{:02}.model", q.index())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub candidate: CandidateId,
    pub mean_val_rmse: Option<f64>,
    pub hyperparameters: Option<(f64, f64)>,
    pub outer_test_rmse: Vec<Option<f64>>,
    pub error: Option<String>,
}

impl CandidateResult {
    pub fn outer_test_mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.outer_test_rmse.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSelection {
    pub question: QuestionId,
    pub results: Vec<CandidateResult>,
    pub winner: CandidateId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub questions: Vec<QuestionSelection>,
}

/// Lowest mean validation RMSE; ties prefer naive, then the smaller id string.
pub fn pick_winner(results: &[CandidateResult]) -> CandidateId {
    results
        .iter()
        .filter_map(|r| r.mean_val_rmse.map(|m| (m, r.candidate)))
        .min_by(|(ma, a), (mb, b)| {
            ma.total_cmp(mb)
                .then_with(|| (*a != CandidateId::Naive).cmp(&(*b != CandidateId::Naive)))
                .then_with(|| a.to_string().cmp(&b.to_string()))
        })
        .map(|(_, c)| c)
        .unwrap_or(CandidateId::Naive)
}

fn naive_result(
    question: QuestionId,
    datasets: &Datasets,
    plan: &FoldPlan,
    mode: MetricMode,
) -> Result<CandidateResult> {
    let table = datasets.any_eval_table()?;
    let naive_rmse = |ids: &[String]| -> Result<Option<f64>> {
        let set = member_set(ids);
        let rows = table.rows_for(question, |p| set.contains(p));
        if rows.is_empty() {
            return Ok(None);
        }
        let preds: Vec<f64> = rows
            .iter()
            .map(|&i| naive_predict(table.rows[i].previous_value))
            .collect();
        rmse_of(table, &rows, &preds, mode).map(Some)
    };
    let mut val = Vec::new();
    let mut outer_test_rmse = Vec::new();
    for o in &plan.outer {
        for f in &o.inner {
            if let Some(r) = naive_rmse(&f.val)? {
                val.push(r);
            }
        }
        outer_test_rmse.push(naive_rmse(&o.test)?);
    }
    Ok(CandidateResult {
        candidate: CandidateId::Naive,
        mean_val_rmse: (!val.is_empty()).then(|| val.iter().sum::<f64>() / val.len() as f64),
        hyperparameters: None,
        outer_test_rmse,
        error: None,
    })
}

struct OuterOutcome {
    cells: Vec<CellScore>,
    test_rmse: Option<f64>,
}

fn run_outer(
    question: QuestionId,
    candidate: CandidateId,
    outer: &OuterFold,
    datasets: &Datasets,
    cfg: &TrainConfig,
) -> Result<OuterOutcome> {
    let CandidateId::Linear { kind, mode, data } = candidate else {
        unreachable!("naive has no grid");
    };
    let train_table = datasets.table(mode, data)?;
    let eval_table = datasets.eval_table(mode)?;
    let gs = grid_search(
        question,
        train_table,
        eval_table,
        &outer.inner,
        &cfg.grid.lambdas,
        &cfg.grid.alphas_for(kind),
        cfg,
    )?;
    let test_set = member_set(&outer.test);
    let test_rows = eval_table.rows_for(question, |p| test_set.contains(p));
    let test_rmse = if test_rows.is_empty() {
        None
    } else {
        let tv = member_set(&outer.trainval);
        let train_rows = train_table.rows_for(question, |p| tv.contains(p));
        let (features, model) = fit_linear(train_table, &train_rows, gs.best.lambda, gs.best.alpha, cfg)?;
        let preds = model.predict(features.transform(eval_table, &test_rows)?.view())?;
        Some(rmse_of(eval_table, &test_rows, &preds, cfg.metric_mode)?)
    };
    Ok(OuterOutcome {
        cells: gs.cells,
        test_rmse,
    })
}

fn aggregate_linear(candidate: CandidateId, outcomes: Vec<Result<OuterOutcome>>) -> CandidateResult {
    let mut pooled: Option<Vec<CellScore>> = None;
    let mut outer_test_rmse = Vec::new();
    let mut error = None;
    for o in outcomes {
        match o {
            Ok(o) => {
                outer_test_rmse.push(o.test_rmse);
                pooled = Some(match pooled {
                    None => o.cells,
                    Some(mut acc) => {
                        for (a, c) in acc.iter_mut().zip(&o.cells) {
                            a.rmse_sum = match (a.rmse_sum, c.rmse_sum) {
                                (Some(x), Some(y)) => Some(x + y),
                                _ => None,
                            };
                            a.n_folds += c.n_folds;
                        }
                        acc
                    }
                });
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let best = match (&error, &pooled) {
        (None, Some(cells)) => best_cell(cells),
        _ => None,
    };
    if best.is_none() && error.is_none() {
        error = Some("no valid grid cell".into());
    }
    CandidateResult {
        candidate,
        mean_val_rmse: best.and_then(|c| c.mean_rmse()),
        hyperparameters: best.map(|c| (c.lambda, c.alpha)),
        outer_test_rmse: if error.is_some() { vec![] } else { outer_test_rmse },
        error,
    }
}

/// Runs nested CV for every (question, candidate), picks a winner per question
/// and refits it on all `train_patients`.
pub fn select_models(
    datasets: &Datasets,
    train_patients: &[String],
    plan: &FoldPlan,
    candidates: &[CandidateId],
    cfg: &TrainConfig,
) -> Result<(SelectionReport, Bundle)> {
    let linear: Vec<CandidateId> = candidates
        .iter()
        .copied()
        .filter(|c| *c != CandidateId::Naive)
        .collect();
    let tasks: Vec<(QuestionId, CandidateId, usize)> = QuestionId::all()
        .flat_map(|q| {
            linear
                .iter()
                .flat_map(move |&c| (0..plan.outer.len()).map(move |o| (q, c, o)))
        })
        .collect();
    let outcomes: Vec<Result<OuterOutcome>> = tasks
        .par_iter()
        .map(|&(q, c, o)| run_outer(q, c, &plan.outer[o], datasets, cfg))
        .collect();

    let mut outcomes = outcomes.into_iter();
    let mut questions = Vec::with_capacity(N_QUESTIONS);
    for q in QuestionId::all() {
        let mut results = vec![naive_result(q, datasets, plan, cfg.metric_mode)?];
        for &c in &linear {
            let per_outer: Vec<_> = outcomes.by_ref().take(plan.outer.len()).collect();
            results.push(aggregate_linear(c, per_outer));
        }
        let winner = pick_winner(&results);
        questions.push(QuestionSelection {
            question: q,
            results,
            winner,
        });
    }

    let train_set = member_set(train_patients);
    let models: Vec<QuestionModel> = questions
        .par_iter()
        .map(|sel| {
            let CandidateId::Linear { mode, data, .. } = sel.winner else {
                return QuestionModel::Naive;
            };
            let (lambda, alpha) = sel
                .results
                .iter()
                .find(|r| r.candidate == sel.winner)
                .and_then(|r| r.hyperparameters)
                .expect("winner has hyperparameters");
            let refit = datasets.table(mode, data).and_then(|t| {
                let rows = t.rows_for(sel.question, |p| train_set.contains(p));
                fit_linear(t, &rows, lambda, alpha, cfg)
            });
            match refit {
                Ok((features, model)) => QuestionModel::Linear {
                    candidate: sel.winner,
                    features,
                    model,
                },
                Err(e) => {
                    log::warn!("{}: final refit failed ({e}); falling back to naive", sel.question);
                    QuestionModel::Naive
                }
            }
        })
        .collect();
    Ok((SelectionReport { questions }, Bundle { models }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub patient_id: String,
    pub question: QuestionId,
    pub window_start: i64,
    pub window_end: i64,
    pub truth: Score,
    pub raw: f64,
    pub emitted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_question: Vec<(QuestionId, MetricReport)>,
    pub overall: MetricReport,
    pub predictions: Vec<PredictionRecord>,
}

/// Scores `bundle` on the clinician windows of `patients`.
pub fn evaluate(
    bundle: &Bundle,
    datasets: &Datasets,
    patients: &[String],
    mode: MetricMode,
) -> Result<Evaluation> {
    let set = member_set(patients);
    let table = datasets.any_eval_table()?;
    let mut predictions = Vec::new();
    for q in QuestionId::all() {
        let rows = table.rows_for(q, |p| set.contains(p));
        if rows.is_empty() {
            continue;
        }
        let raw = bundle.get(q).predict(datasets, &rows)?;
        for (&i, r) in rows.iter().zip(raw) {
            let row = &table.rows[i];
            predictions.push(PredictionRecord {
                patient_id: row.patient_id.clone(),
                question: q,
                window_start: row.window_start,
                window_end: row.window_end,
                truth: row.target,
                raw: r,
                emitted: mode.apply(r)?,
            });
        }
    }
    // keyed order makes the floating-point reduction independent of input order
    predictions.sort_by(|a, b| {
        (a.question, &a.patient_id, a.window_start, a.window_end)
            .cmp(&(b.question, &b.patient_id, b.window_start, b.window_end))
    });
    let mut per_question = Vec::new();
    for q in QuestionId::all() {
        let pairs: Vec<(Score, f64)> = predictions
            .iter()
            .filter(|p| p.question == q)
            .map(|p| (p.truth, p.emitted))
            .collect();
        if !pairs.is_empty() {
            per_question.push((q, compute_metrics(pairs)?));
        }
    }
    let overall = compute_metrics(predictions.iter().map(|p| (p.truth, p.emitted)))?;
    Ok(Evaluation {
        per_question,
        overall,
        predictions,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_selection_report<W: Write>(out: W, report: &SelectionReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "question",
        "candidate",
        "mean_val_rmse",
        "lambda",
        "alpha",
        "outer_test_rmse_mean",
        "outer_test_rmse",
        "winner",
        "error",
    ])
    .map_err(csv_err)?;
    for q in &report.questions {
        for r in &q.results {
            let folds: Vec<String> = r.outer_test_rmse.iter().map(|v| opt(*v)).collect();
            w.write_record([
                q.question.to_string(),
                r.candidate.to_string(),
                opt(r.mean_val_rmse),
                opt(r.hyperparameters.map(|h| h.0)),
                opt(r.hyperparameters.map(|h| h.1)),
                opt(r.outer_test_mean()),
                folds.join(";"),
                (r.candidate == q.winner).to_string(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<selection_report>", e))
}

/// `question,rmse,mae,n` plus an `ALL` row.
pub fn write_metrics<W: Write>(out: W, eval: &Evaluation) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["question", "rmse", "mae", "n"]).map_err(csv_err)?;
    let rows = eval
        .per_question
        .iter()
        .map(|(q, m)| (q.to_string(), m))
        .chain(std::iter::once(("ALL".to_string(), &eval.overall)));
    for (label, m) in rows {
        w.write_record([label, m.rmse.to_string(), m.mae.to_string(), m.n.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))
}

pub fn write_predictions<W: Write>(out: W, eval: &Evaluation) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "question", "window_start", "window_end", "truth", "raw", "prediction"])
        .map_err(csv_err)?;
    for p in &eval.predictions {
        w.write_record([
            p.patient_id.clone(),
            p.question.to_string(),
            p.window_start.to_string(),
            p.window_end.to_string(),
            p.truth.to_string(),
            p.raw.to_string(),
            p.emitted.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<predictions>", e))
}

pub fn write_importance<W: Write>(out: W, bundle: &Bundle) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["question", "candidate", "feature", "importance", "rank"])
        .map_err(csv_err)?;
    for q in QuestionId::all() {
        let m = bundle.get(q);
        for f in m.importance() {
            w.write_record([
                q.to_string(),
                m.candidate().to_string(),
                f.feature,
                f.importance.to_string(),
                f.rank.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<importance>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn naive_carries_forward() {
        assert_eq!(naive_predict(Score::new(4).unwrap()), 4.0);
        assert_eq!(naive_predict(Score::new(0).unwrap()), 0.0);
    }

    #[test]
    fn leave_one_patient_out_when_k_equals_n() {
        let plan = plan_folds(&ids(5), 5, 2, 1).unwrap();
        assert!(plan.outer.iter().all(|o| o.test.len() == 1));
    }

    #[test]
    fn fifty_one_patients_in_ten_folds() {
        let plan = plan_folds(&ids(51), 10, 5, 7).unwrap();
        let mut sizes: Vec<usize> = plan.outer.iter().map(|o| o.test.len()).collect();
        sizes.sort();
        assert_eq!(sizes, [vec![5; 9], vec![6]].concat());
        let mut all: Vec<String> = plan.outer.iter().flat_map(|o| o.test.clone()).collect();
        all.sort();
        assert_eq!(all, ids(51));
    }

    #[test]
    fn plan_is_deterministic_and_order_insensitive() {
        let a = plan_folds(&ids(30), 10, 5, 3).unwrap();
        let mut rev = ids(30);
        rev.reverse();
        assert_eq!(a, plan_folds(&rev, 10, 5, 3).unwrap());
        assert_ne!(a, plan_folds(&ids(30), 10, 5, 4).unwrap());
    }

    #[test]
    fn too_few_patients() {
        assert!(matches!(plan_folds(&ids(4), 5, 2, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn logspace_endpoints() {
        let v = logspace(1e-4, 10.0, 20);
        assert_eq!(v.len(), 20);
        assert!((v[0] - 1e-4).abs() < 1e-18);
        assert!((v[19] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn best_cell_tie_prefers_stronger_regularization() {
        let c = |lambda, alpha, s| CellScore {
            lambda,
            alpha,
            rmse_sum: Some(s),
            n_folds: 1,
        };
        let b = best_cell(&[c(0.1, 0.5, 1.0), c(1.0, 0.5, 1.0), c(1.0, 0.2, 1.0)]).unwrap();
        assert_eq!((b.lambda, b.alpha), (1.0, 0.5));
        let only = best_cell(&[c(0.3, 0.3, 2.0)]).unwrap();
        assert_eq!(only.lambda, 0.3);
    }

    #[test]
    fn winner_ties_go_to_naive() {
        let r = |candidate, m| CandidateResult {
            candidate,
            mean_val_rmse: m,
            hyperparameters: None,
            outer_test_rmse: vec![],
            error: None,
        };
        let en = CandidateId::Linear {
            kind: ModelKind::ElasticNet,
            mode: FeatureMode::Median,
            data: DataVariant::Clinical,
        };
        assert_eq!(pick_winner(&[r(en, Some(0.5)), r(CandidateId::Naive, Some(0.5))]), CandidateId::Naive);
        assert_eq!(pick_winner(&[r(CandidateId::Naive, Some(0.5)), r(en, Some(0.4))]), en);
        assert_eq!(pick_winner(&[r(CandidateId::Naive, Some(0.5)), r(en, None)]), CandidateId::Naive);
    }

    #[test]
    fn candidate_ids_round_trip() {
        for c in CandidateId::all(
            &[FeatureMode::Median, FeatureMode::Catalog],
            &[DataVariant::Clinical, DataVariant::Augmented],
        ) {
            assert_eq!(c.to_string().parse::<CandidateId>().unwrap(), c);
        }
    }

    #[test]
    fn holdout_split_is_disjoint() {
        let (train, hold) = split_holdout(&ids(60), 0.2, 9).unwrap();
        assert_eq!(hold.len(), 12);
        assert_eq!(train.len(), 48);
        assert!(hold.iter().all(|h| !train.contains(h)));
    }
}
