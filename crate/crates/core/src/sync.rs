//! Aligning clinical visits with sensor coverage, and cutting observation windows.
//!
//! Rules, applied per patient:
//! 1. sensors start after the first visit: drop visits strictly before the
//!    latest visit on or before the first sensor day;
//! 2. sensors start on or before the first visit: keep every visit;
//! 3. discard sensor samples after the last kept visit;
//! 4. a final visit past the last sensor day survives only if the gap is at
//!    most `tail_max_gap_days`;
//! 5. patients left with fewer than two visits are excluded.
//!
//! Rules 3 and 4 are iterated until stable so that aligning an aligned
//! patient is a no-op.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{csv_err, Cohort, SensorSeries};
use crate::types::{QuestionId, Score, ScorePoint, Source, VisitRecord, N_QUESTIONS};

pub const DEFAULT_TAIL_MAX_GAP_DAYS: i64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignConfig {
    pub tail_max_gap_days: i64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            tail_max_gap_days: DEFAULT_TAIL_MAX_GAP_DAYS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    PreSensor,
    TailGt60d,
    SingleVisitPatient,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::PreSensor => "pre_sensor",
            DropReason::TailGt60d => "tail_gt_60d",
            DropReason::SingleVisitPatient => "single_visit_patient",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DroppedVisit {
    pub day: i64,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exclusion {
    NoClinicianVisits,
    SingleVisit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPatient {
    pub patient_id: String,
    /// Kept visits, day-ascending.
    pub visits: Vec<VisitRecord>,
    /// Sensor series truncated at the last kept visit.
    pub sensors: Vec<SensorSeries>,
    pub sensor_first_day: Option<i64>,
    pub clinical_first_day: Option<i64>,
    pub dropped: Vec<DroppedVisit>,
    pub excluded: Option<Exclusion>,
}

impl AlignedPatient {
    pub fn is_usable(&self) -> bool {
        self.excluded.is_none()
    }
}

/// Outcome of the alignment rules on a sorted list of visit days.
#[derive(Debug, Clone, PartialEq)]
pub struct DayPlan {
    pub keep: Vec<bool>,
    pub reasons: Vec<Option<DropReason>>,
    /// Sensor samples after this day are discarded.
    pub sensor_cutoff: Option<i64>,
}

impl DayPlan {
    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }
}

/// Applies the alignment rules to `days` (ascending) given the sorted union of
/// sensor sample days.
pub fn plan_days(days: &[i64], sensor_days: &[i64], cfg: &AlignConfig) -> DayPlan {
    let n = days.len();
    let mut keep = vec![true; n];
    let mut reasons = vec![None; n];
    let drop = |i: usize, r: DropReason, keep: &mut Vec<bool>, reasons: &mut Vec<Option<DropReason>>| {
        keep[i] = false;
        reasons[i] = Some(r);
    };

    if n > 0 && !sensor_days.is_empty() {
        let t1s = sensor_days[0];
        if t1s > days[0] {
            let anchor = days.partition_point(|&d| d <= t1s) - 1;
            for i in 0..anchor {
                drop(i, DropReason::PreSensor, &mut keep, &mut reasons);
            }
        }
        loop {
            let kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
            let Some(&last) = kept.last() else { break };
            let cut = sensor_days.partition_point(|&d| d <= days[last]);
            if cut == 0 {
                break;
            }
            let last_sensor = sensor_days[cut - 1];
            if days[last] <= last_sensor {
                break;
            }
            let second_in_tail = kept.len() >= 2 && days[kept[kept.len() - 2]] > last_sensor;
            if second_in_tail || days[last] - last_sensor > cfg.tail_max_gap_days {
                drop(last, DropReason::TailGt60d, &mut keep, &mut reasons);
            } else {
                break;
            }
        }
    }

    let kept = keep.iter().filter(|k| **k).count();
    if kept < 2 {
        for i in 0..n {
            if keep[i] {
                drop(i, DropReason::SingleVisitPatient, &mut keep, &mut reasons);
            }
        }
    }
    let sensor_cutoff = (0..n).rev().find(|&i| keep[i]).map(|i| days[i]);
    DayPlan {
        keep,
        reasons,
        sensor_cutoff,
    }
}

/// Sorted, de-duplicated sample days across channels.
pub fn sensor_days<'a>(series: impl IntoIterator<Item = &'a SensorSeries>) -> Vec<i64> {
    let mut days: Vec<i64> = series
        .into_iter()
        .flat_map(|s| s.samples.iter().map(|x| x.0))
        .collect();
    days.sort_unstable();
    days.dedup();
    days
}

fn truncate_sensors(sensors: &[SensorSeries], cutoff: Option<i64>) -> Vec<SensorSeries> {
    sensors
        .iter()
        .map(|s| SensorSeries {
            patient_id: s.patient_id.clone(),
            channel: s.channel.clone(),
            samples: match cutoff {
                Some(c) => s.samples.iter().copied().filter(|x| x.0 <= c).collect(),
                None => s.samples.clone(),
            },
        })
        .collect()
}

/// Aligns one patient's clinician visits with their sensor series.
/// Self-assessment visits in `visits` are ignored.
pub fn align(
    patient_id: &str,
    visits: &[VisitRecord],
    sensors: &[SensorSeries],
    cfg: &AlignConfig,
) -> AlignedPatient {
    let mut clinical: Vec<VisitRecord> = visits
        .iter()
        .filter(|v| v.source == Source::Clinician)
        .cloned()
        .collect();
    clinical.sort_by_key(|v| v.day);
    let sdays = sensor_days(sensors);
    let sensor_first_day = sdays.first().copied();
    let clinical_first_day = clinical.first().map(|v| v.day);

    if clinical.is_empty() {
        return AlignedPatient {
            patient_id: patient_id.to_owned(),
            visits: vec![],
            sensors: sensors.to_vec(),
            sensor_first_day,
            clinical_first_day,
            dropped: vec![],
            excluded: Some(Exclusion::NoClinicianVisits),
        };
    }

    let days: Vec<i64> = clinical.iter().map(|v| v.day).collect();
    let plan = plan_days(&days, &sdays, cfg);
    let dropped = days
        .iter()
        .zip(&plan.reasons)
        .filter_map(|(&day, r)| r.map(|reason| DroppedVisit { day, reason }))
        .collect();
    let kept: Vec<VisitRecord> = clinical
        .into_iter()
        .zip(&plan.keep)
        .filter(|(_, k)| **k)
        .map(|(v, _)| v)
        .collect();
    let excluded = (plan.kept_count() < 2).then_some(Exclusion::SingleVisit);
    AlignedPatient {
        patient_id: patient_id.to_owned(),
        sensors: truncate_sensors(sensors, plan.sensor_cutoff),
        visits: kept,
        sensor_first_day,
        clinical_first_day,
        dropped,
        excluded,
    }
}

/// Aligns every patient of the cohort, ordered like `cohort.patient_ids()`.
pub fn align_cohort(cohort: &Cohort, cfg: &AlignConfig) -> Vec<AlignedPatient> {
    let ids = cohort.patient_ids();
    ids.par_iter()
        .map(|pid| {
            let visits: Vec<VisitRecord> = cohort.visits_of(pid).cloned().collect();
            let sensors: Vec<SensorSeries> = cohort.sensors_of(pid).cloned().collect();
            align(pid, &visits, &sensors, cfg)
        })
        .collect()
}

/// One (patient, question) prediction example: features come from
/// `[window_start, window_end)`, the target is the score at `window_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    pub patient_id: String,
    pub question: QuestionId,
    pub window_start: i64,
    pub window_end: i64,
    pub previous_value: Score,
    pub target_value: Score,
    pub delta_days: i64,
    pub days_since_diagnosis: i64,
    /// Position of the target within the patient's timeline (first visit is 0).
    pub followup_index: usize,
    pub target_source: Source,
}

/// Consecutive kept-visit windows for every question with both scores present.
pub fn build_windows(aligned: &AlignedPatient) -> Vec<ObservationWindow> {
    if !aligned.is_usable() {
        return vec![];
    }
    let mut out = Vec::new();
    for q in QuestionId::all() {
        for (k, pair) in aligned.visits.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if let (Some(prev), Some(target)) = (a.score(q), b.score(q)) {
                out.push(ObservationWindow {
                    patient_id: aligned.patient_id.clone(),
                    question: q,
                    window_start: a.day,
                    window_end: b.day,
                    previous_value: prev,
                    target_value: target,
                    delta_days: b.day - a.day,
                    days_since_diagnosis: a.day,
                    followup_index: k + 1,
                    target_source: b.source,
                });
            }
        }
    }
    out
}

/// Per-question clinician timeline of a patient's kept visits.
pub fn question_timeline(aligned: &AlignedPatient, q: QuestionId) -> Vec<ScorePoint> {
    aligned
        .visits
        .iter()
        .filter_map(|v| {
            v.score(q).map(|score| ScorePoint {
                day: v.day,
                score,
                source: v.source,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuestionSummary {
    pub n: usize,
    pub mean: f64,
    /// 95% normal-approximation interval; `None` for fewer than two scores.
    pub ci95: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowupRow {
    /// 0 is the first kept visit.
    pub followup_index: usize,
    pub n_patients: usize,
    pub questions: [Option<QuestionSummary>; N_QUESTIONS],
}

/// Patient counts and mean scores per follow-up position across usable patients.
pub fn cohort_followup_profile(patients: &[AlignedPatient]) -> Vec<FollowupRow> {
    let usable: Vec<&AlignedPatient> = patients.iter().filter(|p| p.is_usable()).collect();
    let depth = usable.iter().map(|p| p.visits.len()).max().unwrap_or(0);
    (0..depth)
        .map(|k| {
            let at_k: Vec<&VisitRecord> = usable.iter().filter_map(|p| p.visits.get(k)).collect();
            let mut questions = [None; N_QUESTIONS];
            for q in QuestionId::all() {
                let xs: Vec<f64> = at_k
                    .iter()
                    .filter_map(|v| v.score(q))
                    .map(Score::as_f64)
                    .collect();
                if xs.is_empty() {
                    continue;
                }
                let n = xs.len();
                let mean = xs.iter().sum::<f64>() / n as f64;
                let ci95 = (n >= 2).then(|| {
                    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    let half = 1.96 * var.sqrt() / (n as f64).sqrt();
                    (mean - half, mean + half)
                });
                questions[q.slot()] = Some(QuestionSummary { n, mean, ci95 });
            }
            FollowupRow {
                followup_index: k,
                n_patients: at_k.len(),
                questions,
            }
        })
        .collect()
}

/// `patient_id,day,action,reason` — one row per clinician visit considered.
pub fn write_audit<W: Write>(out: W, patients: &[AlignedPatient]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "day", "action", "reason"])
        .map_err(csv_err)?;
    for p in patients {
        let mut rows: Vec<(i64, &str, &str)> = p
            .visits
            .iter()
            .map(|v| (v.day, "keep", ""))
            .chain(p.dropped.iter().map(|d| (d.day, "drop", d.reason.as_str())))
            .collect();
        rows.sort();
        for (day, action, reason) in rows {
            w.write_record([p.patient_id.as_str(), &day.to_string(), action, reason])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<audit>", e))
}

pub fn write_followup_profile<W: Write>(out: W, rows: &[FollowupRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["followup_index", "n_patients", "question", "n", "mean", "ci_low", "ci_high"])
        .map_err(csv_err)?;
    for r in rows {
        for q in QuestionId::all() {
            if let Some(s) = r.questions[q.slot()] {
                let (lo, hi) = s
                    .ci95
                    .map(|(l, h)| (l.to_string(), h.to_string()))
                    .unwrap_or_default();
                w.write_record([
                    r.followup_index.to_string(),
                    r.n_patients.to_string(),
                    q.to_string(),
                    s.n.to_string(),
                    s.mean.to_string(),
                    lo,
                    hi,
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<profile>", e))
}

const WINDOW_HEADER: [&str; 10] = [
    "patient_id",
    "question",
    "window_start",
    "window_end",
    "previous_value",
    "target_value",
    "delta_days",
    "days_since_diagnosis",
    "followup_index",
    "target_source",
];

pub fn write_windows<W: Write>(out: W, windows: &[ObservationWindow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WINDOW_HEADER).map_err(csv_err)?;
    for x in windows {
        w.write_record([
            x.patient_id.clone(),
            x.question.to_string(),
            x.window_start.to_string(),
            x.window_end.to_string(),
            x.previous_value.to_string(),
            x.target_value.to_string(),
            x.delta_days.to_string(),
            x.days_since_diagnosis.to_string(),
            x.followup_index.to_string(),
            x.target_source.as_str().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<windows>", e))
}

/// Reads windows written by [`write_windows`].
pub fn read_windows<R: Read>(input: R, file: &str) -> Result<Vec<ObservationWindow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?;
    if headers.iter().collect::<Vec<_>>() != WINDOW_HEADER {
        return Err(Error::InvalidInput(format!("{file}: not a window table")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |c: usize| Error::InvalidInput(format!("{file}:{}: bad {}", i + 1, WINDOW_HEADER[c]));
        let int = |c: usize| rec[c].parse::<i64>().map_err(|_| bad(c));
        let score = |c: usize| {
            rec[c]
                .parse::<u8>()
                .ok()
                .and_then(|v| Score::new(v).ok())
                .ok_or_else(|| bad(c))
        };
        out.push(ObservationWindow {
            patient_id: rec[0].to_string(),
            question: rec[1].parse().map_err(|_| bad(1))?,
            window_start: int(2)?,
            window_end: int(3)?,
            previous_value: score(4)?,
            target_value: score(5)?,
            delta_days: int(6)?,
            days_since_diagnosis: int(7)?,
            followup_index: rec[8].parse().map_err(|_| bad(8))?,
            target_source: rec[9].parse().map_err(|_| bad(9))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn visit(day: i64, q1: Option<u8>) -> VisitRecord {
        let mut scores = [Some(Score::new(4).unwrap()); N_QUESTIONS];
        scores[0] = q1.map(|v| Score::new(v).unwrap());
        VisitRecord {
            patient_id: "p".into(),
            day,
            source: Source::Clinician,
            scores,
        }
    }

    fn sensors(days: std::ops::RangeInclusive<i64>) -> Vec<SensorSeries> {
        vec![SensorSeries {
            patient_id: "p".into(),
            channel: "steps".into(),
            samples: days.map(|d| (d, d as f64)).collect(),
        }]
    }

    fn kept_days(a: &AlignedPatient) -> Vec<i64> {
        a.visits.iter().map(|v| v.day).collect()
    }

    #[test]
    fn sensor_late_drops_only_pre_anchor_visits() {
        let visits = [visit(690, Some(4)), visit(780, Some(4)), visit(873, Some(3))];
        let a = align("p", &visits, &sensors(800..=900), &AlignConfig::default());
        assert_eq!(kept_days(&a), vec![780, 873]);
        assert_eq!(
            a.dropped,
            vec![DroppedVisit {
                day: 690,
                reason: DropReason::PreSensor
            }]
        );
        assert_eq!(a.sensor_first_day, Some(800));
        assert_eq!(a.clinical_first_day, Some(690));
        assert_eq!(a.sensors[0].last_day(), Some(873));
    }

    #[test]
    fn sensor_early_keeps_everything() {
        let visits = [visit(150, Some(4)), visit(250, Some(4)), visit(350, Some(4))];
        let a = align("p", &visits, &sensors(100..=400), &AlignConfig::default());
        assert_eq!(kept_days(&a), vec![150, 250, 350]);
        assert!(a.dropped.is_empty());
        assert_eq!(a.sensors[0].first_day(), Some(100));
        assert_eq!(a.sensors[0].last_day(), Some(350));
    }

    #[test]
    fn tail_gap_boundary() {
        let cfg = AlignConfig::default();
        let dropped = align(
            "p",
            &[visit(800, Some(4)), visit(850, Some(4)), visit(961, Some(4))],
            &sensors(700..=900),
            &cfg,
        );
        assert_eq!(kept_days(&dropped), vec![800, 850]);
        assert_eq!(dropped.dropped[0].reason, DropReason::TailGt60d);

        let kept = align(
            "p",
            &[visit(800, Some(4)), visit(850, Some(4)), visit(960, Some(4))],
            &sensors(700..=900),
            &cfg,
        );
        assert_eq!(kept_days(&kept), vec![800, 850, 960]);
    }

    #[test]
    fn single_visit_patients_are_excluded() {
        let a = align("p", &[visit(100, Some(4))], &sensors(50..=200), &AlignConfig::default());
        assert_eq!(a.excluded, Some(Exclusion::SingleVisit));
        assert_eq!(a.dropped[0].reason, DropReason::SingleVisitPatient);
        assert!(build_windows(&a).is_empty());

        let none = align("p", &[], &sensors(50..=200), &AlignConfig::default());
        assert_eq!(none.excluded, Some(Exclusion::NoClinicianVisits));
    }

    #[test]
    fn only_one_visit_survives_past_sensor_end() {
        let visits = [visit(100, Some(4)), visit(210, Some(4)), visit(220, Some(4))];
        let a = align("p", &visits, &sensors(50..=200), &AlignConfig::default());
        assert_eq!(kept_days(&a), vec![100, 210]);
    }

    #[test]
    fn alignment_is_a_fixed_point() {
        let visits = [
            visit(10, Some(4)),
            visit(690, Some(4)),
            visit(780, Some(4)),
            visit(873, Some(3)),
            visit(990, Some(2)),
        ];
        let mut s = sensors(800..=850);
        s[0].samples.push((930, 1.0));
        let once = align("p", &visits, &s, &AlignConfig::default());
        let twice = align("p", &once.visits, &once.sensors, &AlignConfig::default());
        assert_eq!(once.visits, twice.visits);
        assert_eq!(once.sensors, twice.sensors);
        assert!(twice.dropped.is_empty());
    }

    #[test]
    fn windows_follow_consecutive_visits() {
        let visits = [visit(780, Some(4)), visit(873, Some(3))];
        let a = align("p", &visits, &sensors(700..=900), &AlignConfig::default());
        let w = build_windows(&a);
        assert_eq!(w.len(), 12);
        let q1 = &w[0];
        assert_eq!(q1.question.index(), 1);
        assert_eq!((q1.window_start, q1.window_end, q1.delta_days), (780, 873, 93));
        assert_eq!(q1.previous_value.value(), 4);
        assert_eq!(q1.target_value.value(), 3);
        assert_eq!(q1.followup_index, 1);
    }

    #[test]
    fn three_full_visits_give_24_windows() {
        let visits = [visit(0, Some(4)), visit(90, Some(4)), visit(180, Some(4))];
        let a = align("p", &visits, &sensors(0..=200), &AlignConfig::default());
        assert_eq!(build_windows(&a).len(), 24);
    }

    #[test]
    fn windows_csv_round_trip() {
        let visits = [visit(0, Some(4)), visit(90, Some(2)), visit(180, Some(1))];
        let w = build_windows(&align("p", &visits, &sensors(0..=200), &AlignConfig::default()));
        let mut buf = Vec::new();
        write_windows(&mut buf, &w).unwrap();
        assert_eq!(read_windows(&buf[..], "w.csv").unwrap(), w);
    }

    #[test]
    fn missing_score_suppresses_window() {
        let visits = [visit(0, Some(4)), visit(90, None), visit(180, Some(3))];
        let a = align("p", &visits, &sensors(0..=200), &AlignConfig::default());
        let q1: Vec<_> = build_windows(&a)
            .into_iter()
            .filter(|w| w.question.index() == 1)
            .collect();
        assert!(q1.is_empty());
    }

    #[test]
    fn followup_profile_degenerate_ci() {
        let visits = [visit(0, Some(4)), visit(90, Some(4)), visit(180, Some(4))];
        let a = align("p", &visits, &sensors(0..=200), &AlignConfig::default());
        let prof = cohort_followup_profile(&[a]);
        assert_eq!(prof.iter().map(|r| r.n_patients).collect::<Vec<_>>(), vec![1, 1, 1]);
        assert!(prof[0].questions[0].unwrap().ci95.is_none());
    }

    #[test]
    fn followup_profile_zero_variance() {
        let mk = |id: &str| {
            let mut v = [visit(0, Some(4)), visit(90, Some(4))];
            for x in &mut v {
                x.patient_id = id.into();
            }
            align(id, &v, &sensors(0..=100), &AlignConfig::default())
        };
        let prof = cohort_followup_profile(&[mk("a"), mk("b"), mk("c")]);
        let s = prof[1].questions[0].unwrap();
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.ci95, Some((4.0, 4.0)));
    }
}
