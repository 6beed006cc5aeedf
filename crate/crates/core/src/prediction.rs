//! Structured classifier output shared by retrieval, prompting and the model gateway.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of diabetic retinopathy severity classes.
pub const NUM_GRADES: usize = 5;

const GRADE_NAMES: [&str; NUM_GRADES] = ["No DR", "Mild", "Moderate", "Severe", "Proliferative"];

/// Tolerance on the probability simplex for a validated prediction.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictionError {
    #[error("DR grade {0} outside 0..=4")]
    GradeOutOfRange(i64),
    #[error("{name} confidence {value} outside [0, 1]")]
    ConfidenceOutOfRange { name: &'static str, value: f64 },
    #[error("grade probabilities must have {NUM_GRADES} entries, got {0}")]
    ProbsLength(usize),
    #[error("grade probability {index} is negative or not finite ({value})")]
    NegativeProb { index: usize, value: f64 },
    #[error("grade probabilities sum to {0}, expected 1")]
    ProbsSum(f64),
    #[error("grade {grade} disagrees with argmax of probabilities ({argmax})")]
    ArgmaxMismatch { grade: u8, argmax: u8 },
}

/// Diabetic retinopathy severity grade on the five-step international scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct DrGrade(u8);

impl DrGrade {
    pub const NO_DR: DrGrade = DrGrade(0);
    pub const MILD: DrGrade = DrGrade(1);
    pub const MODERATE: DrGrade = DrGrade(2);
    pub const SEVERE: DrGrade = DrGrade(3);
    pub const PROLIFERATIVE: DrGrade = DrGrade(4);

    pub fn new(value: i64) -> Result<Self, PredictionError> {
        if (0..NUM_GRADES as i64).contains(&value) {
            Ok(DrGrade(value as u8))
        } else {
            Err(PredictionError::GradeOutOfRange(value))
        }
    }

    pub fn all() -> impl Iterator<Item = DrGrade> {
        (0..NUM_GRADES as u8).map(DrGrade)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Canonical display name, e.g. `"Moderate"` or `"No DR"`.
    pub fn name(self) -> &'static str {
        GRADE_NAMES[self.index()]
    }
}

impl TryFrom<i64> for DrGrade {
    type Error = PredictionError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        DrGrade::new(value)
    }
}

impl From<DrGrade> for u8 {
    fn from(g: DrGrade) -> u8 {
        g.0
    }
}

impl fmt::Display for DrGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classifier output: grade, macular edema flag, their confidences and the
/// full grade distribution.
///
/// Construction validates the simplex (entries non-negative, sum 1 within
/// [`PROB_SUM_TOLERANCE`]), confidence ranges, and that `grade` is the argmax
/// of `grade_probs` with ties resolved to the lowest index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticPrediction {
    grade: DrGrade,
    me_present: bool,
    grade_confidence: f64,
    me_confidence: f64,
    grade_probs: [f64; NUM_GRADES],
}

impl DiagnosticPrediction {
    pub fn new(
        grade: DrGrade,
        me_present: bool,
        grade_confidence: f64,
        me_confidence: f64,
        grade_probs: [f64; NUM_GRADES],
    ) -> Result<Self, PredictionError> {
        check_confidence("grade", grade_confidence)?;
        check_confidence("ME", me_confidence)?;
        for (index, &value) in grade_probs.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(PredictionError::NegativeProb { index, value });
            }
        }
        let sum: f64 = grade_probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(PredictionError::ProbsSum(sum));
        }
        let argmax = argmax(&grade_probs);
        if argmax != grade.index() {
            return Err(PredictionError::ArgmaxMismatch {
                grade: grade.value(),
                argmax: argmax as u8,
            });
        }
        Ok(DiagnosticPrediction {
            grade,
            me_present,
            grade_confidence,
            me_confidence,
            grade_probs,
        })
    }

    /// Builds a prediction from a grade distribution: the grade is its argmax
    /// and the grade confidence is the winning probability.
    pub fn from_probs(
        grade_probs: [f64; NUM_GRADES],
        me_present: bool,
        me_confidence: f64,
    ) -> Result<Self, PredictionError> {
        let grade = DrGrade(argmax(&grade_probs) as u8);
        let confidence = grade_probs[grade.index()];
        Self::new(grade, me_present, confidence, me_confidence, grade_probs)
    }

    /// Builds a prediction from summary values only. The remaining
    /// probability mass is spread evenly over the other grades, so
    /// `grade_confidence` must be large enough to stay the argmax.
    pub fn from_summary(
        grade: DrGrade,
        me_present: bool,
        grade_confidence: f64,
        me_confidence: f64,
    ) -> Result<Self, PredictionError> {
        check_confidence("grade", grade_confidence)?;
        let rest = (1.0 - grade_confidence) / (NUM_GRADES - 1) as f64;
        let mut probs = [rest; NUM_GRADES];
        probs[grade.index()] = grade_confidence;
        Self::new(grade, me_present, grade_confidence, me_confidence, probs)
    }

    pub fn grade(&self) -> DrGrade {
        self.grade
    }

    pub fn me_present(&self) -> bool {
        self.me_present
    }

    pub fn grade_confidence(&self) -> f64 {
        self.grade_confidence
    }

    pub fn me_confidence(&self) -> f64 {
        self.me_confidence
    }

    pub fn grade_probs(&self) -> &[f64; NUM_GRADES] {
        &self.grade_probs
    }

    /// Probability that macular edema is present, derived from the binary
    /// decision and its confidence.
    pub fn me_probability(&self) -> f64 {
        if self.me_present {
            self.me_confidence
        } else {
            1.0 - self.me_confidence
        }
    }
}

fn check_confidence(name: &'static str, value: f64) -> Result<(), PredictionError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(PredictionError::ConfidenceOutOfRange { name, value })
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Formats a value in `[0, 1]` with two decimals, rounding half up on the
/// shortest decimal representation of the float (so `0.555` becomes `0.56`
/// and `0.125` becomes `0.13`).
pub fn format_confidence(value: f64) -> String {
    round_half_up(value, 2)
}

fn round_half_up(value: f64, places: usize) -> String {
    let negative = value.is_sign_negative() && value != 0.0;
    // Display for f64 is the shortest round-trip form and never uses exponents.
    let repr = format!("{}", value.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((repr.as_str(), ""));
    let mut digits: Vec<u8> = int_part
        .bytes()
        .chain(frac_part.bytes().chain(std::iter::repeat(b'0')).take(places))
        .map(|b| b - b'0')
        .collect();
    let round_up = frac_part.as_bytes().get(places).is_some_and(|&d| d >= b'5');
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - places;
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    out.extend(digits[..split].iter().map(|d| (d + b'0') as char));
    if places > 0 {
        out.push('.');
        out.extend(digits[split..].iter().map(|d| (d + b'0') as char));
    }
    out
}
