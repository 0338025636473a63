//! Score metrics and the rounding/clipping applied to regression outputs.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::Score;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
}

/// Whether predictions are scored before or after [`postprocess`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricMode {
    #[default]
    Rounded,
    Raw,
}

impl MetricMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricMode::Rounded => "rounded",
            MetricMode::Raw => "raw",
        }
    }

    /// Applies the mode to a raw prediction.
    pub fn apply(self, prediction: f64) -> Result<f64> {
        match self {
            MetricMode::Rounded => Ok(postprocess(prediction)?.as_f64()),
            MetricMode::Raw => {
                if prediction.is_finite() {
                    Ok(prediction)
                } else {
                    Err(Error::Numerical(format!("non-finite prediction {prediction}")))
                }
            }
        }
    }
}

impl FromStr for MetricMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rounded" => Ok(MetricMode::Rounded),
            "raw" => Ok(MetricMode::Raw),
            other => Err(Error::Config(format!("metric mode {other:?} (rounded|raw)"))),
        }
    }
}

/// RMSE and MAE over `(truth, prediction)` pairs.
pub fn compute_metrics<I>(pairs: I) -> Result<MetricReport>
where
    I: IntoIterator<Item = (Score, f64)>,
{
    let mut n = 0usize;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (truth, pred) in pairs {
        if !pred.is_finite() {
            return Err(Error::Numerical(format!("non-finite prediction {pred}")));
        }
        let e = truth.as_f64() - pred;
        sq += e * e;
        abs += e.abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput(
            "cannot compute metrics over zero predictions".into(),
        ));
    }
    let nf = n as f64;
    let rmse = (sq / nf).sqrt();
    // Floating-point summation may leave mae a few ulps above rmse when all
    // absolute errors are equal.
    let mae = (abs / nf).min(rmse);
    Ok(MetricReport { rmse, mae, n })
}

/// Nearest integer (halves away from zero), clipped to `0..=4`.
pub fn postprocess(prediction: f64) -> Result<Score> {
    if !prediction.is_finite() {
        return Err(Error::Numerical(format!(
            "cannot post-process non-finite prediction {prediction}"
        )));
    }
    let clipped = prediction.round().clamp(0.0, Score::MAX as f64);
    Score::new(clipped as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn s(v: u8) -> Score {
        Score::new(v).unwrap()
    }

    #[test]
    fn identity_case() {
        let r = compute_metrics([(s(1), 1.0), (s(2), 2.0)]).unwrap();
        assert_eq!((r.rmse, r.mae, r.n), (0.0, 0.0, 2));
    }

    #[test]
    fn constant_error_magnitude() {
        let r = compute_metrics([(s(0), 4.0), (s(4), 0.0)]).unwrap();
        assert_eq!(r.rmse, 4.0);
        assert_eq!(r.mae, 4.0);
    }

    #[test]
    fn hand_computed_errors() {
        let r = compute_metrics([(s(1), 2.0), (s(2), 2.0), (s(3), 2.0)]).unwrap();
        assert_abs_diff_eq!(r.rmse, (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.rmse, 0.81650, epsilon = 1e-5);
        assert_abs_diff_eq!(r.mae, 0.66667, epsilon = 1e-5);
    }

    #[test]
    fn empty_input_is_an_error() {
        let empty: Vec<(Score, f64)> = vec![];
        assert!(compute_metrics(empty).is_err());
    }

    #[test]
    fn postprocess_examples() {
        assert_eq!(postprocess(2.4).unwrap(), s(2));
        assert_eq!(postprocess(4.9).unwrap(), s(4));
        assert_eq!(postprocess(-0.3).unwrap(), s(0));
        assert_eq!(postprocess(2.5).unwrap(), s(3));
        assert_eq!(postprocess(-0.5).unwrap(), s(0));
        assert!(postprocess(f64::NAN).is_err());
        assert!(postprocess(f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn mae_never_exceeds_rmse(
            pairs in prop::collection::vec((0u8..=4, -10.0f64..10.0), 1..40)
        ) {
            let pairs: Vec<_> = pairs.into_iter().map(|(t, p)| (s(t), p)).collect();
            let r = compute_metrics(pairs.clone()).unwrap();
            prop_assert!(r.mae <= r.rmse);
            let mut rev = pairs;
            rev.reverse();
            let r2 = compute_metrics(rev).unwrap();
            prop_assert!((r.rmse - r2.rmse).abs() < 1e-12);
            prop_assert!((r.mae - r2.mae).abs() < 1e-12);
        }

        #[test]
        fn postprocess_lands_in_range(x in -1e6f64..1e6) {
            let v = postprocess(x).unwrap().value();
            prop_assert!(v <= 4);
        }

        #[test]
        fn postprocess_is_idempotent_on_scores(v in 0u8..=4) {
            prop_assert_eq!(postprocess(v as f64).unwrap().value(), v);
        }
    }
}
