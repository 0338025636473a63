//! Merging self-assessment scores into clinician timelines.
//!
//! A (patient, question) pair is merged only when a Pearson chi-square test on
//! the two score samples does not reject a common distribution. Merged
//! timelines are denser than the clinician cadence, so windows are cut to
//! the earliest target at least `horizon_min_days` ahead of each anchor.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{csv_err, Cohort};
use crate::stats::chi2_upper_tail;
use crate::sync::{plan_days, sensor_days, AlignConfig, ObservationWindow};
use crate::types::{QuestionId, Score, ScorePoint, Source};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_HORIZON_MIN_DAYS: i64 = 90;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chi2Outcome {
    pub statistic: f64,
    pub dof: u32,
    pub p_value: f64,
    /// Smallest expected cell count; below 5 the approximation is rough.
    pub min_expected: f64,
}

/// Pearson chi-square test of homogeneity on a 2 x C table of score counts.
/// `None` when either sample is empty.
pub fn chi2_same_distribution(clinician: &[Score], self_scores: &[Score]) -> Option<Chi2Outcome> {
    if clinician.is_empty() || self_scores.is_empty() {
        return None;
    }
    let mut table = [[0usize; 5]; 2];
    for s in clinician {
        table[0][s.value() as usize] += 1;
    }
    for s in self_scores {
        table[1][s.value() as usize] += 1;
    }
    let cols: Vec<usize> = (0..5).filter(|&c| table[0][c] + table[1][c] > 0).collect();
    let rows = [clinician.len() as f64, self_scores.len() as f64];
    let total = rows[0] + rows[1];
    let dof = cols.len() as u32 - 1;
    if dof == 0 {
        return Some(Chi2Outcome {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
            min_expected: rows[0].min(rows[1]),
        });
    }
    let mut statistic = 0.0;
    let mut min_expected = f64::INFINITY;
    for (i, row_total) in rows.iter().enumerate() {
        for &c in &cols {
            let col_total = (table[0][c] + table[1][c]) as f64;
            let e = row_total * col_total / total;
            let o = table[i][c] as f64;
            statistic += (o - e).powi(2) / e;
            min_expected = min_expected.min(e);
        }
    }
    Some(Chi2Outcome {
        statistic,
        dof,
        p_value: chi2_upper_tail(statistic, dof),
        min_expected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeReason {
    Merged,
    RejectedDistribution,
    Untestable,
}

impl MergeReason {
    pub fn as_str(self) -> &'static str {
        match self {
            MergeReason::Merged => "merged",
            MergeReason::RejectedDistribution => "rejected_distribution",
            MergeReason::Untestable => "untestable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeDecision {
    pub patient_id: String,
    pub question: QuestionId,
    pub test: Option<Chi2Outcome>,
    pub merged: bool,
    pub reason: MergeReason,
}

pub fn decide(
    patient_id: &str,
    question: QuestionId,
    clinician: &[Score],
    self_scores: &[Score],
    alpha: f64,
) -> MergeDecision {
    let test = chi2_same_distribution(clinician, self_scores);
    let (merged, reason) = match &test {
        None => (false, MergeReason::Untestable),
        Some(t) if t.p_value >= alpha => (true, MergeReason::Merged),
        Some(_) => (false, MergeReason::RejectedDistribution),
    };
    if let Some(t) = &test {
        if t.min_expected < 5.0 {
            log::debug!(
                "{patient_id}/{question}: chi-square expected count {:.2} < 5",
                t.min_expected
            );
        }
    }
    MergeDecision {
        patient_id: patient_id.to_owned(),
        question,
        test,
        merged,
        reason,
    }
}

/// Per-question score timeline of one source, day-ascending.
pub fn source_timeline(cohort: &Cohort, patient_id: &str, q: QuestionId, source: Source) -> Vec<ScorePoint> {
    let mut v: Vec<ScorePoint> = cohort
        .visits_of(patient_id)
        .filter(|v| v.source == source)
        .filter_map(|v| {
            v.score(q).map(|score| ScorePoint {
                day: v.day,
                score,
                source,
            })
        })
        .collect();
    v.sort_by_key(|p| p.day);
    v
}

/// Decisions for every (patient, question), patient order as in the static table.
pub fn decide_merges(cohort: &Cohort, alpha: f64) -> Vec<MergeDecision> {
    cohort
        .patient_ids()
        .par_iter()
        .flat_map_iter(|pid| {
            QuestionId::all()
                .map(|q| {
                    let scores = |src| {
                        source_timeline(cohort, pid, q, src)
                            .iter()
                            .map(|p| p.score)
                            .collect::<Vec<_>>()
                    };
                    decide(pid, q, &scores(Source::Clinician), &scores(Source::SelfAssessment), alpha)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Union of both sources when the decision allows it; clinician wins same-day clashes.
pub fn merge_pair(
    clinician: &[ScorePoint],
    self_points: &[ScorePoint],
    decision: &MergeDecision,
) -> Vec<ScorePoint> {
    let mut by_day: BTreeMap<i64, ScorePoint> = BTreeMap::new();
    if decision.merged {
        for p in self_points {
            by_day.insert(p.day, *p);
        }
    }
    for p in clinician {
        by_day.insert(p.day, *p);
    }
    by_day.into_values().collect()
}

/// For each anchor, the earliest later point at least `horizon_min_days` ahead.
pub fn horizon_windows(
    patient_id: &str,
    question: QuestionId,
    timeline: &[ScorePoint],
    horizon_min_days: i64,
) -> Vec<ObservationWindow> {
    let mut out = Vec::new();
    for (i, anchor) in timeline.iter().enumerate() {
        let Some((j, target)) = timeline
            .iter()
            .enumerate()
            .skip(i + 1)
            .find(|(_, t)| t.day - anchor.day >= horizon_min_days)
        else {
            continue;
        };
        out.push(ObservationWindow {
            patient_id: patient_id.to_owned(),
            question,
            window_start: anchor.day,
            window_end: target.day,
            previous_value: anchor.score,
            target_value: target.score,
            delta_days: target.day - anchor.day,
            days_since_diagnosis: anchor.day,
            followup_index: j,
            target_source: target.source,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub alpha: f64,
    pub horizon_min_days: i64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            alpha: DEFAULT_ALPHA,
            horizon_min_days: DEFAULT_HORIZON_MIN_DAYS,
        }
    }
}

/// Windows over merged timelines, after the alignment rules are applied to each.
pub fn augmented_windows(
    cohort: &Cohort,
    decisions: &[MergeDecision],
    align_cfg: &AlignConfig,
    cfg: &AugmentConfig,
) -> Result<Vec<ObservationWindow>> {
    let by_key: BTreeMap<(&str, QuestionId), &MergeDecision> = decisions
        .iter()
        .map(|d| ((d.patient_id.as_str(), d.question), d))
        .collect();
    let ids = cohort.patient_ids();
    let per_patient: Result<Vec<Vec<ObservationWindow>>> = ids
        .par_iter()
        .map(|pid| {
            let sdays = sensor_days(cohort.sensors_of(pid));
            let mut out = Vec::new();
            for q in QuestionId::all() {
                let decision = by_key.get(&(pid.as_str(), q)).ok_or_else(|| {
                    Error::InvalidInput(format!("no merge decision for {pid}/{q}"))
                })?;
                let unified = merge_pair(
                    &source_timeline(cohort, pid, q, Source::Clinician),
                    &source_timeline(cohort, pid, q, Source::SelfAssessment),
                    decision,
                );
                let days: Vec<i64> = unified.iter().map(|p| p.day).collect();
                let plan = plan_days(&days, &sdays, align_cfg);
                let kept: Vec<ScorePoint> = unified
                    .into_iter()
                    .zip(&plan.keep)
                    .filter(|(_, k)| **k)
                    .map(|(p, _)| p)
                    .collect();
                out.extend(horizon_windows(pid, q, &kept, cfg.horizon_min_days));
            }
            Ok(out)
        })
        .collect();
    Ok(per_patient?.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MergeSummary {
    pub testable: usize,
    pub merged: usize,
}

impl MergeSummary {
    pub fn of(decisions: &[MergeDecision]) -> Self {
        MergeSummary {
            testable: decisions.iter().filter(|d| d.test.is_some()).count(),
            merged: decisions.iter().filter(|d| d.merged).count(),
        }
    }

    pub fn merge_rate(&self) -> Option<f64> {
        (self.testable > 0).then(|| self.merged as f64 / self.testable as f64)
    }
}

/// `patient_id,question,stat,dof,p,merged,reason`; test columns empty when untestable.
pub fn write_merge_decisions<W: Write>(out: W, decisions: &[MergeDecision]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "question", "stat", "dof", "p", "merged", "reason"])
        .map_err(csv_err)?;
    for d in decisions {
        let (stat, dof, p) = d
            .test
            .map(|t| (t.statistic.to_string(), t.dof.to_string(), t.p_value.to_string()))
            .unwrap_or_default();
        w.write_record([
            d.patient_id.clone(),
            d.question.to_string(),
            stat,
            dof,
            p,
            d.merged.to_string(),
            d.reason.as_str().to_owned(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<merge_decisions>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scores(counts: &[(u8, usize)]) -> Vec<Score> {
        counts
            .iter()
            .flat_map(|&(v, n)| std::iter::repeat_n(Score::new(v).unwrap(), n))
            .collect()
    }

    fn point(day: i64, v: u8, source: Source) -> ScorePoint {
        ScorePoint {
            day,
            score: Score::new(v).unwrap(),
            source,
        }
    }

    fn q1() -> QuestionId {
        QuestionId::new(1).unwrap()
    }

    #[test]
    fn identical_distributions() {
        let a = scores(&[(3, 5), (4, 5)]);
        let t = chi2_same_distribution(&a, &a).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.dof, 1);
        assert_abs_diff_eq!(t.p_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn disjoint_distributions() {
        let t = chi2_same_distribution(&scores(&[(3, 10)]), &scores(&[(4, 10)])).unwrap();
        assert_abs_diff_eq!(t.statistic, 20.0, epsilon = 1e-12);
        assert_eq!(t.dof, 1);
        assert_abs_diff_eq!(t.p_value, 7.744216e-6, epsilon = 1e-11);
    }

    #[test]
    fn single_shared_category_is_mergeable() {
        let t = chi2_same_distribution(&scores(&[(4, 3)]), &scores(&[(4, 7)])).unwrap();
        assert_eq!((t.statistic, t.dof, t.p_value), (0.0, 0, 1.0));
        let d = decide("p", q1(), &scores(&[(4, 3)]), &scores(&[(4, 7)]), 0.05);
        assert!(d.merged);
        assert_eq!(d.reason, MergeReason::Merged);
    }

    #[test]
    fn empty_sample_is_untestable() {
        assert!(chi2_same_distribution(&[], &scores(&[(4, 2)])).is_none());
        let d = decide("p", q1(), &scores(&[(4, 2)]), &[], 0.05);
        assert!(!d.merged);
        assert_eq!(d.reason, MergeReason::Untestable);
    }

    #[test]
    fn merge_makes_single_visit_patient_usable() {
        let clin = [point(100, 3, Source::Clinician)];
        let own = [point(10, 4, Source::SelfAssessment), point(50, 4, Source::SelfAssessment)];
        let ok = decide("p", q1(), &[clin[0].score], &[own[0].score, own[1].score], 0.05);
        assert!(ok.merged);
        let unified = merge_pair(&clin, &own, &ok);
        assert_eq!(unified.iter().map(|p| p.day).collect::<Vec<_>>(), vec![10, 50, 100]);

        let rejected = MergeDecision {
            merged: false,
            reason: MergeReason::RejectedDistribution,
            ..ok
        };
        assert_eq!(merge_pair(&clin, &own, &rejected), clin.to_vec());
    }

    #[test]
    fn clinician_wins_same_day() {
        let clin = [point(30, 3, Source::Clinician)];
        let own = [point(30, 4, Source::SelfAssessment)];
        let d = decide("p", q1(), &[clin[0].score], &[own[0].score], 0.0);
        let unified = merge_pair(&clin, &own, &d);
        assert_eq!(unified, vec![clin[0]]);
    }

    fn timeline(days: &[i64]) -> Vec<ScorePoint> {
        days.iter().map(|&d| point(d, 4, Source::Clinician)).collect()
    }

    #[test]
    fn horizon_targets() {
        let w = horizon_windows("p", q1(), &timeline(&[0, 30, 100, 130]), 90);
        assert_eq!((w[0].window_start, w[0].window_end, w[0].delta_days), (0, 100, 100));
        assert!(horizon_windows("p", q1(), &timeline(&[0, 30]), 90).is_empty());
        let chained = horizon_windows("p", q1(), &timeline(&[0, 95, 190]), 90);
        let spans: Vec<_> = chained.iter().map(|w| (w.window_start, w.window_end)).collect();
        assert_eq!(spans, vec![(0, 95), (95, 190)]);
    }

    proptest! {
        #[test]
        fn chi2_is_symmetric(
            a in prop::collection::vec(0u8..=4, 1..30),
            b in prop::collection::vec(0u8..=4, 1..30),
        ) {
            let a: Vec<Score> = a.into_iter().map(|v| Score::new(v).unwrap()).collect();
            let b: Vec<Score> = b.into_iter().map(|v| Score::new(v).unwrap()).collect();
            let ab = chi2_same_distribution(&a, &b).unwrap();
            let ba = chi2_same_distribution(&b, &a).unwrap();
            prop_assert!((ab.statistic - ba.statistic).abs() < 1e-9);
            prop_assert_eq!(ab.dof, ba.dof);
            // relabel categories with a fixed permutation
            let perm = [2u8, 4, 0, 1, 3];
            let relabel = |v: &[Score]| -> Vec<Score> {
                v.iter().map(|s| Score::new(perm[s.value() as usize]).unwrap()).collect()
            };
            let r = chi2_same_distribution(&relabel(&a), &relabel(&b)).unwrap();
            prop_assert!((ab.statistic - r.statistic).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
        }
    }
}
