//! Domain types shared across the pipeline.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of ALSFRS-R sub-scores.
pub const N_QUESTIONS: usize = 12;

/// One of the twelve ALSFRS-R questions, `Q1`..`Q12`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuestionId(u8);

impl QuestionId {
    pub fn new(index: u8) -> Result<Self> {
        if (1..=N_QUESTIONS as u8).contains(&index) {
            Ok(QuestionId(index))
        } else {
            Err(Error::InvalidInput(format!(
                "question index {index} outside 1..={N_QUESTIONS}"
            )))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Zero-based slot, handy for fixed-size per-question arrays.
    pub fn slot(self) -> usize {
        self.0 as usize - 1
    }

    pub fn all() -> impl Iterator<Item = QuestionId> {
        (1..=N_QUESTIONS as u8).map(QuestionId)
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}", self.0)
    }
}

impl FromStr for QuestionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches(['Q', 'q']);
        let index: u8 = digits
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad question id {s:?}")))?;
        QuestionId::new(index)
    }
}

/// Ordinal questionnaire score in `0..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Score(u8);

impl Score {
    pub const MAX: u8 = 4;

    pub fn new(value: u8) -> Result<Self> {
        if value <= Self::MAX {
            Ok(Score(value))
        } else {
            Err(Error::InvalidInput(format!("score {value} outside 0..=4")))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Who filled in the questionnaire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Clinician,
    SelfAssessment,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Clinician => "clinician",
            Source::SelfAssessment => "self",
        }
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clinician" => Ok(Source::Clinician),
            "self" => Ok(Source::SelfAssessment),
            other => Err(Error::InvalidInput(format!(
                "unknown source {other:?} (expected clinician|self)"
            ))),
        }
    }
}

/// One questionnaire observation.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitRecord {
    pub patient_id: String,
    /// Days since diagnosis.
    pub day: i64,
    pub source: Source,
    pub scores: [Option<Score>; N_QUESTIONS],
}

impl VisitRecord {
    pub fn new(
        patient_id: impl Into<String>,
        day: i64,
        source: Source,
        scores: [Option<Score>; N_QUESTIONS],
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        if day < 0 {
            return Err(Error::InvalidInput(format!(
                "visit of {patient_id} has negative day {day}"
            )));
        }
        if scores.iter().all(Option::is_none) {
            return Err(Error::InvalidInput(format!(
                "visit of {patient_id} at day {day} has no scores"
            )));
        }
        Ok(VisitRecord {
            patient_id,
            day,
            source,
            scores,
        })
    }

    pub fn score(&self, q: QuestionId) -> Option<Score> {
        self.scores[q.slot()]
    }
}

/// A single dated score for one question, used for per-question timelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScorePoint {
    pub day: i64,
    pub score: Score,
    pub source: Source,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn question_ids_are_exactly_twelve() {
        assert_eq!(QuestionId::all().count(), 12);
        assert!(QuestionId::new(0).is_err());
        assert!(QuestionId::new(13).is_err());
        assert_eq!("Q7".parse::<QuestionId>().unwrap().index(), 7);
        assert_eq!("12".parse::<QuestionId>().unwrap().slot(), 11);
    }

    #[test]
    fn score_range() {
        assert!(Score::new(4).is_ok());
        assert!(Score::new(5).is_err());
    }

    #[test]
    fn visit_requires_a_score_and_nonnegative_day() {
        let none = [None; N_QUESTIONS];
        assert!(VisitRecord::new("p", 3, Source::Clinician, none).is_err());
        let mut one = none;
        one[0] = Some(Score::new(2).unwrap());
        assert!(VisitRecord::new("p", -1, Source::Clinician, one).is_err());
        assert!(VisitRecord::new("p", 0, Source::Clinician, one).is_ok());
    }
}
