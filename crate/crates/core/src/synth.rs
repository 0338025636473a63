//! Seeded synthetic cohorts with a known generating model.
//!
//! Each question follows its own chain: the score after a visit interval is
//! `clip(round(latent))`, where the latent value is a linear combination of
//! the previous score, summaries of the sensor samples inside the interval,
//! static covariates and Gaussian noise. Every transition is recorded in the
//! manifest so tests can compare fitted models against the truth.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{
    assemble_cohort, read_sensors, read_static, read_visits, write_sensors, write_static, write_visits, Cohort,
    SensorSeries, StaticRecord, StaticTable,
};
use crate::rng::substream;
use crate::types::{QuestionId, Score, Source, VisitRecord, N_QUESTIONS};

pub const NUMERIC_STATIC_FIELDS: [&str; 2] = ["age_at_diagnosis", "fvc"];
pub const CATEGORICAL_STATIC_FIELDS: [&str; 2] = ["onset_site", "sex"];

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelTerm {
    /// `coef * [interval mean of channel < threshold]`
    Indicator { channel: usize, threshold: f64, coef: f64 },
    /// `coef * interval mean of channel`
    Linear { channel: usize, coef: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticTerm {
    pub field: String,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionSignal {
    pub intercept: f64,
    pub previous_weight: f64,
    pub channel_terms: Vec<ChannelTerm>,
    pub static_terms: Vec<StaticTerm>,
}

impl QuestionSignal {
    pub fn persistence() -> Self {
        QuestionSignal {
            intercept: 0.0,
            previous_weight: 1.0,
            channel_terms: vec![],
            static_terms: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub visits_min: usize,
    pub visits_max: usize,
    pub visit_gap_mean: f64,
    pub visit_gap_jitter: f64,
    pub n_channels: usize,
    /// One per question.
    pub signals: Vec<QuestionSignal>,
    pub noise_std: f64,
    /// Per interval and channel, probability of the low activity level.
    pub low_level_prob: f64,
    pub level_low: f64,
    pub level_high: f64,
    pub level_std: f64,
    pub daily_std: f64,
    pub sensor_missing_frac: f64,
    pub static_missing_frac: f64,
    pub self_fraction: f64,
    pub disagreement_fraction: f64,
    pub self_gap_min: i64,
    pub self_gap_max: i64,
}

impl Default for SynthConfig {
    /// Planted signal: every question drops one point below its previous
    /// value when the first channel's interval mean is low.
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            n_patients: 60,
            visits_min: 6,
            visits_max: 9,
            visit_gap_mean: 100.0,
            visit_gap_jitter: 25.0,
            n_channels: 3,
            signals: vec![
                QuestionSignal {
                    intercept: 0.0,
                    previous_weight: 1.0,
                    channel_terms: vec![ChannelTerm::Indicator {
                        channel: 0,
                        threshold: 5.0,
                        coef: -1.0,
                    }],
                    static_terms: vec![],
                };
                N_QUESTIONS
            ],
            noise_std: 0.3,
            low_level_prob: 0.3,
            level_low: 3.0,
            level_high: 7.0,
            level_std: 0.3,
            daily_std: 0.5,
            sensor_missing_frac: 0.1,
            static_missing_frac: 0.05,
            self_fraction: 0.5,
            disagreement_fraction: 0.0,
            self_gap_min: 20,
            self_gap_max: 30,
        }
    }
}

impl SynthConfig {
    /// Targets always equal the previous score.
    pub fn persistence(seed: u64) -> Self {
        SynthConfig {
            seed,
            signals: vec![QuestionSignal::persistence(); N_QUESTIONS],
            noise_std: 0.0,
            ..Self::default()
        }
    }

    pub fn channel_name(&self, c: usize) -> String {
        format!("ch{}", c + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_patients == 0 || self.n_channels == 0 {
            return bad("synth: n_patients and n_channels must be positive".into());
        }
        if self.visits_min < 2 || self.visits_max < self.visits_min {
            return bad("synth: need 2 <= visits_min <= visits_max".into());
        }
        if !(self.visit_gap_mean - self.visit_gap_jitter >= 1.0) || self.visit_gap_jitter < 0.0 {
            return bad("synth: visit gaps must stay >= 1 day".into());
        }
        if !(self.self_gap_min >= 1 && self.self_gap_max >= self.self_gap_min) {
            return bad("synth: need 1 <= self_gap_min <= self_gap_max".into());
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("level_std", self.level_std),
            ("daily_std", self.daily_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("synth: {name} must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("low_level_prob", self.low_level_prob),
            ("sensor_missing_frac", self.sensor_missing_frac),
            ("static_missing_frac", self.static_missing_frac),
            ("self_fraction", self.self_fraction),
            ("disagreement_fraction", self.disagreement_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("synth: {name} must lie in [0, 1]"));
            }
        }
        if self.sensor_missing_frac >= 1.0 {
            return bad("synth: sensor_missing_frac must be < 1".into());
        }
        if self.signals.len() != N_QUESTIONS {
            return bad(format!("synth: expected {N_QUESTIONS} question signals"));
        }
        for s in &self.signals {
            for t in &s.channel_terms {
                let (ChannelTerm::Indicator { channel, .. } | ChannelTerm::Linear { channel, .. }) = t;
                if *channel >= self.n_channels {
                    return bad(format!("synth: channel index {channel} out of range"));
                }
            }
            for t in &s.static_terms {
                if !NUMERIC_STATIC_FIELDS.contains(&t.field.as_str()) {
                    return bad(format!("synth: static term on unknown numeric field {:?}", t.field));
                }
            }
        }
        Ok(())
    }
}

/// One generated score change.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub patient_id: String,
    pub question: u8,
    pub window_start: i64,
    pub window_end: i64,
    pub previous_value: u8,
    /// Value before rounding and clipping.
    pub latent: f64,
    pub target: u8,
    /// Interval mean per channel over the emitted samples in `[start, end)`.
    pub channel_means: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub generator: String,
    pub config: SynthConfig,
    pub channels: Vec<String>,
    pub transitions: Vec<Transition>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub statics: StaticTable,
    pub visits: Vec<VisitRecord>,
    pub sensors: Vec<SensorSeries>,
    pub manifest: Manifest,
}

/// The three input tables as CSV bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFiles {
    pub static_csv: Vec<u8>,
    pub visits_csv: Vec<u8>,
    pub sensors_csv: Vec<u8>,
}

impl SynthCohort {
    pub fn to_csv(&self) -> Result<SynthFiles> {
        let mut f = SynthFiles {
            static_csv: Vec::new(),
            visits_csv: Vec::new(),
            sensors_csv: Vec::new(),
        };
        write_static(&mut f.static_csv, &self.statics)?;
        write_visits(&mut f.visits_csv, &self.visits)?;
        write_sensors(&mut f.sensors_csv, &self.sensors)?;
        Ok(f)
    }

    /// The cohort exactly as `ingest` would read it back from the CSV files.
    pub fn to_cohort(&self) -> Result<Cohort> {
        let f = self.to_csv()?;
        assemble_cohort(
            read_static(&f.static_csv[..], "static.csv")?,
            read_visits(&f.visits_csv[..], "visits.csv")?,
            read_sensors(&f.sensors_csv[..], "sensors.csv")?,
            "visits.csv",
            "sensors.csv",
        )
    }
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).expect("validated std")
}

fn interval_mean(samples: &[(i64, f64)], start: i64, end: i64) -> Option<f64> {
    let lo = samples.partition_point(|s| s.0 < start);
    let hi = samples.partition_point(|s| s.0 < end);
    let w = &samples[lo..hi];
    (!w.is_empty()).then(|| w.iter().map(|s| s.1).sum::<f64>() / w.len() as f64)
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

struct Patient {
    statics: StaticRecord,
    visits: Vec<VisitRecord>,
    sensors: Vec<SensorSeries>,
    transitions: Vec<Transition>,
}

fn generate_patient(cfg: &SynthConfig, index: usize) -> Patient {
    let pid = format!("P{:04}", index + 1);
    let mut rng: ChaCha8Rng = substream(cfg.seed, &format!("synth/patient/{pid}"));

    // statics; the first patient is always complete so no field is all-missing
    let age = round3(normal(60.0, 10.0).sample(&mut rng));
    let fvc = round3(normal(80.0, 15.0).sample(&mut rng));
    let onset = if rng.random_bool(0.3) { "bulbar" } else { "spinal" };
    let sex = if rng.random_bool(0.5) { "F" } else { "M" };
    let mask = |rng: &mut ChaCha8Rng| index > 0 && rng.random_bool(cfg.static_missing_frac);
    let statics = StaticRecord {
        patient_id: pid.clone(),
        numeric: vec![
            (!mask(&mut rng)).then_some(age),
            (!mask(&mut rng)).then_some(fvc),
        ],
        categorical: vec![
            (!mask(&mut rng)).then(|| onset.to_string()),
            (!mask(&mut rng)).then(|| sex.to_string()),
        ],
    };

    // clinician visit days
    let n_visits = rng.random_range(cfg.visits_min..=cfg.visits_max);
    let mut days = vec![rng.random_range(30..=400i64)];
    for _ in 1..n_visits {
        let jitter = if cfg.visit_gap_jitter > 0.0 {
            rng.random_range(-cfg.visit_gap_jitter..=cfg.visit_gap_jitter)
        } else {
            0.0
        };
        let gap = ((cfg.visit_gap_mean + jitter).round() as i64).max(1);
        days.push(days.last().unwrap() + gap);
    }
    let (first, last) = (days[0], *days.last().unwrap());

    // sensors: one activity level per interval and channel, daily samples around it
    let mut sensors = Vec::with_capacity(cfg.n_channels);
    for c in 0..cfg.n_channels {
        let mut samples = Vec::new();
        for k in 0..n_visits - 1 {
            let level = if rng.random_bool(cfg.low_level_prob) {
                normal(cfg.level_low, cfg.level_std).sample(&mut rng)
            } else {
                normal(cfg.level_high, cfg.level_std).sample(&mut rng)
            };
            let daily = normal(level, cfg.daily_std);
            for day in days[k]..days[k + 1] {
                let edge = day == first;
                let v = daily.sample(&mut rng);
                if edge || !rng.random_bool(cfg.sensor_missing_frac) {
                    samples.push((day, round3(v.max(0.001))));
                }
            }
        }
        // coverage through the last visit keeps every visit inside the sensor span
        samples.push((last, round3(normal(cfg.level_high, cfg.daily_std).sample(&mut rng).max(0.001))));
        sensors.push(SensorSeries {
            patient_id: pid.clone(),
            channel: cfg.channel_name(c),
            samples,
        });
    }

    // score chains
    let noise = normal(0.0, cfg.noise_std);
    let mut scores = vec![[0u8; N_QUESTIONS]; n_visits];
    let mut transitions = Vec::new();
    for q in QuestionId::all() {
        let sig = &cfg.signals[q.slot()];
        let mut s = rng.random_range(1..=4u8);
        scores[0][q.slot()] = s;
        for k in 0..n_visits - 1 {
            let (start, end) = (days[k], days[k + 1]);
            let means: Vec<Option<f64>> = sensors
                .iter()
                .map(|ser| interval_mean(&ser.samples, start, end))
                .collect();
            let mut latent = sig.intercept + sig.previous_weight * f64::from(s);
            for t in &sig.channel_terms {
                latent += match *t {
                    ChannelTerm::Indicator {
                        channel,
                        threshold,
                        coef,
                    } => match means[channel] {
                        Some(m) if m < threshold => coef,
                        _ => 0.0,
                    },
                    ChannelTerm::Linear { channel, coef } => coef * means[channel].unwrap_or(0.0),
                };
            }
            for t in &sig.static_terms {
                let j = NUMERIC_STATIC_FIELDS.iter().position(|f| *f == t.field).unwrap();
                latent += t.coef * [age, fvc][j];
            }
            if cfg.noise_std > 0.0 {
                latent += noise.sample(&mut rng);
            }
            let next = latent.round().clamp(0.0, 4.0) as u8;
            transitions.push(Transition {
                patient_id: pid.clone(),
                question: q.index(),
                window_start: start,
                window_end: end,
                previous_value: s,
                latent,
                target: next,
                channel_means: means,
            });
            s = next;
            scores[k + 1][q.slot()] = s;
        }
    }

    let to_scores = |row: &[u8; N_QUESTIONS]| row.map(|v| Some(Score::new(v).expect("clipped")));
    let mut visits: Vec<VisitRecord> = days
        .iter()
        .zip(&scores)
        .map(|(&day, row)| {
            VisitRecord::new(pid.clone(), day, Source::Clinician, to_scores(row)).expect("valid visit")
        })
        .collect();

    // self assessments copy the current clinician score, or relabel it when the pair disagrees
    if rng.random_bool(cfg.self_fraction) {
        let disagree: Vec<bool> = (0..N_QUESTIONS)
            .map(|_| rng.random_bool(cfg.disagreement_fraction))
            .collect();
        let mut day = first + rng.random_range(0..cfg.self_gap_max);
        while day <= last {
            let k = days.partition_point(|&d| d <= day) - 1;
            let mut row = scores[k];
            for (j, v) in row.iter_mut().enumerate() {
                if disagree[j] {
                    *v = (*v + 2) % 5;
                }
            }
            visits.push(VisitRecord::new(pid.clone(), day, Source::SelfAssessment, to_scores(&row)).expect("valid visit"));
            day += rng.random_range(cfg.self_gap_min..=cfg.self_gap_max);
        }
    }
    visits.sort_by(|a, b| (a.day, a.source.as_str()).cmp(&(b.day, b.source.as_str())));

    Patient {
        statics,
        visits,
        sensors,
        transitions,
    }
}

/// Generates the cohort; identical configs give identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCohort> {
    cfg.validate()?;
    let patients: Vec<Patient> = (0..cfg.n_patients).map(|i| generate_patient(cfg, i)).collect();
    let mut statics = StaticTable {
        numeric_fields: NUMERIC_STATIC_FIELDS.iter().map(|s| s.to_string()).collect(),
        categorical_fields: CATEGORICAL_STATIC_FIELDS.iter().map(|s| s.to_string()).collect(),
        records: Vec::with_capacity(cfg.n_patients),
    };
    let mut visits = Vec::new();
    let mut sensors = Vec::new();
    let mut transitions = Vec::new();
    for p in patients {
        statics.records.push(p.statics);
        visits.extend(p.visits);
        sensors.extend(p.sensors);
        transitions.extend(p.transitions);
    }
    Ok(SynthCohort {
        statics,
        visits,
        sensors,
        manifest: Manifest {
            generator: "alsfrs-synth/1".into(),
            config: cfg.clone(),
            channels: (0..cfg.n_channels).map(|c| cfg.channel_name(c)).collect(),
            transitions,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(cfg: SynthConfig) -> SynthConfig {
        SynthConfig {
            n_patients: 8,
            ..cfg
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(SynthConfig::default())).unwrap();
        let b = generate(&small(SynthConfig::default())).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(SynthConfig {
            seed: 43,
            ..SynthConfig::default()
        }))
        .unwrap();
        assert_ne!(a.visits, c.visits);
    }

    #[test]
    fn persistence_chains_never_move() {
        let c = generate(&small(SynthConfig::persistence(5))).unwrap();
        assert!(c.manifest.transitions.iter().all(|t| t.target == t.previous_value));
    }

    #[test]
    fn adding_patients_keeps_existing_ones() {
        let a = generate(&small(SynthConfig::default())).unwrap();
        let b = generate(&SynthConfig {
            n_patients: 9,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(a.statics.records[..], b.statics.records[..8]);
    }

    #[test]
    fn planted_indicator_is_honoured_without_noise() {
        let cfg = small(SynthConfig {
            noise_std: 0.0,
            ..SynthConfig::default()
        });
        let c = generate(&cfg).unwrap();
        for t in &c.manifest.transitions {
            let low = t.channel_means[0].is_some_and(|m| m < 5.0);
            let expect = (t.previous_value as i32 - i32::from(low)).max(0) as u8;
            assert_eq!(t.target, expect);
        }
    }

    #[test]
    fn disagreement_relabels_self_scores() {
        let cfg = small(SynthConfig {
            self_fraction: 1.0,
            disagreement_fraction: 1.0,
            ..SynthConfig::default()
        });
        let c = generate(&cfg).unwrap();
        let clin: Vec<&VisitRecord> = c.visits.iter().filter(|v| v.source == Source::Clinician).collect();
        for v in c.visits.iter().filter(|v| v.source == Source::SelfAssessment) {
            let cur = clin
                .iter()
                .filter(|c| c.patient_id == v.patient_id && c.day <= v.day)
                .last()
                .unwrap();
            for q in QuestionId::all() {
                let (a, b) = (cur.score(q).unwrap().value(), v.score(q).unwrap().value());
                assert_eq!(b, (a + 2) % 5);
            }
        }
    }

    #[test]
    fn files_pass_ingest() {
        let c = generate(&small(SynthConfig {
            self_fraction: 1.0,
            ..SynthConfig::default()
        }))
        .unwrap();
        let cohort = c.to_cohort().unwrap();
        assert_eq!(cohort.statics, c.statics);
        assert_eq!(cohort.sensors, c.sensors);
        assert_eq!(cohort.visits.len(), c.visits.len());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SynthConfig {
            visits_min: 1,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig {
            noise_std: -1.0,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
