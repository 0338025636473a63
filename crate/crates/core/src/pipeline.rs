//! Stage functions shared by the command-line driver, the bindings and tests.

use std::collections::BTreeSet;

use crate::augment::{augmented_windows, decide_merges, MergeDecision};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::featurize::{build_feature_table, fit_features, FeatureTable, Relevance};
use crate::harness::{
    evaluate, plan_folds, select_models, split_holdout, Bundle, CandidateId, DataVariant, Datasets,
    Evaluation, SelectionReport,
};
use crate::ingest::{impute_static, Cohort};
use crate::sync::{align_cohort, build_windows, AlignedPatient, ObservationWindow};
use crate::types::QuestionId;

/// Alignment plus consecutive clinician windows.
pub fn clinical_windows(cohort: &Cohort, cfg: &PipelineConfig) -> (Vec<AlignedPatient>, Vec<ObservationWindow>) {
    let aligned = align_cohort(cohort, &cfg.align_config());
    let windows = aligned.iter().flat_map(build_windows).collect();
    (aligned, windows)
}

/// Merge decisions and the windows over merged timelines.
pub fn augmentation(cohort: &Cohort, cfg: &PipelineConfig) -> Result<(Vec<MergeDecision>, Vec<ObservationWindow>)> {
    let decisions = decide_merges(cohort, cfg.augment_alpha);
    let windows = augmented_windows(cohort, &decisions, &cfg.align_config(), &cfg.augment_config())?;
    Ok((decisions, windows))
}

pub fn feature_file_name(table: (crate::featurize::FeatureMode, DataVariant)) -> String {
    format!("features_{}_{}.csv", table.0.as_str(), table.1.as_str())
}

/// Feature tables for every configured mode; the clinical variant is always
/// built because validation and testing use it.
pub fn extract(
    cohort: &Cohort,
    clinical: &[ObservationWindow],
    augmented: Option<&[ObservationWindow]>,
    cfg: &PipelineConfig,
) -> Result<Datasets> {
    let statics = impute_static(&cohort.statics)?;
    let mut ds = Datasets::default();
    for mode in cfg.feature_modes() {
        ds.tables.insert(
            (mode, DataVariant::Clinical),
            build_feature_table(clinical, cohort, &statics, mode)?,
        );
        if cfg.data_variants().contains(&DataVariant::Augmented) {
            let windows = augmented.ok_or_else(|| {
                Error::InvalidInput("augmentation is enabled but no augmented windows were given".into())
            })?;
            ds.tables.insert(
                (mode, DataVariant::Augmented),
                build_feature_table(windows, cohort, &statics, mode)?,
            );
        }
    }
    Ok(ds)
}

/// Patients with at least one clinician window.
pub fn eligible_patients(ds: &Datasets) -> Vec<String> {
    let set: BTreeSet<&str> = ds
        .tables
        .iter()
        .filter(|((_, d), _)| *d == DataVariant::Clinical)
        .flat_map(|(_, t)| t.rows.iter().map(|r| r.patient_id.as_str()))
        .collect();
    set.into_iter().map(String::from).collect()
}

/// (train, holdout) patients.
pub fn split(ds: &Datasets, cfg: &PipelineConfig) -> Result<(Vec<String>, Vec<String>)> {
    split_holdout(&eligible_patients(ds), cfg.holdout_frac, cfg.holdout_seed())
}

/// Relevance of sensor features per question on the training patients, for reporting.
pub fn relevance_report(table: &FeatureTable, train: &[String], cfg: &PipelineConfig) -> Vec<(QuestionId, Vec<Relevance>)> {
    let set: BTreeSet<&str> = train.iter().map(String::as_str).collect();
    QuestionId::all()
        .filter_map(|q| {
            let rows = table.rows_for(q, |p| set.contains(p));
            match fit_features(table, &rows, &cfg.feature_config()) {
                Ok((_, rel)) => Some((q, rel)),
                Err(e) => {
                    log::warn!("{q}: no relevance report ({e})");
                    None
                }
            }
        })
        .collect()
}

pub fn train(ds: &Datasets, train_patients: &[String], cfg: &PipelineConfig) -> Result<(SelectionReport, Bundle)> {
    let tc = cfg.train_config();
    let plan = plan_folds(train_patients, tc.outer_k, tc.inner_k, tc.seed)?;
    let candidates = CandidateId::all(&cfg.feature_modes(), &cfg.data_variants());
    select_models(ds, train_patients, &plan, &candidates, &tc)
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub aligned: Vec<AlignedPatient>,
    pub decisions: Vec<MergeDecision>,
    pub datasets: Datasets,
    pub train_patients: Vec<String>,
    pub holdout_patients: Vec<String>,
    pub report: SelectionReport,
    pub bundle: Bundle,
    pub evaluation: Evaluation,
}

/// Every stage from an ingested cohort to held-out metrics, without touching disk.
pub fn run(cohort: &Cohort, cfg: &PipelineConfig) -> Result<PipelineRun> {
    let (aligned, clinical) = clinical_windows(cohort, cfg);
    let (decisions, augmented) = augmentation(cohort, cfg)?;
    let datasets = extract(cohort, &clinical, Some(&augmented), cfg)?;
    let (train_patients, holdout_patients) = split(&datasets, cfg)?;
    let (report, bundle) = train(&datasets, &train_patients, cfg)?;
    let evaluation = evaluate(&bundle, &datasets, &holdout_patients, cfg.metric_mode)?;
    Ok(PipelineRun {
        aligned,
        decisions,
        datasets,
        train_patients,
        holdout_patients,
        report,
        bundle,
        evaluation,
    })
}
