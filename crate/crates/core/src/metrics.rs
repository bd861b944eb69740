//! Benchmark scoring functions.
//!
//! Every string comparison goes through [`normalize_answer`]: lowercase,
//! trim, and collapse internal whitespace runs to a single space.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ANLS_TAU: f64 = 0.5;
pub const RELAXED_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ExactMatch,
    Anls,
    RelaxedAccuracy,
    VqaAccuracy,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::ExactMatch => "exact_match",
            MetricKind::Anls => "anls",
            MetricKind::RelaxedAccuracy => "relaxed_accuracy",
            MetricKind::VqaAccuracy => "vqa_accuracy",
        }
    }

    /// Scores one prediction. `tau` is only used by ANLS.
    pub fn score(&self, pred: &str, golds: &[String], tau: f64) -> Result<Score> {
        match self {
            MetricKind::ExactMatch => exact_match(pred, golds),
            MetricKind::Anls => anls_single(pred, golds, tau),
            MetricKind::RelaxedAccuracy => relaxed_accuracy(pred, golds),
            MetricKind::VqaAccuracy => vqa_accuracy(pred, golds),
        }
    }

    /// Binarizes a score into correct / incorrect: full credit for exact and
    /// relaxed match, any credit for VQA accuracy, `>= tau` for ANLS.
    pub fn is_correct(&self, score: Score, tau: f64) -> bool {
        let v = score.value();
        match self {
            MetricKind::ExactMatch | MetricKind::RelaxedAccuracy => v >= 1.0,
            MetricKind::VqaAccuracy => v > 0.0,
            MetricKind::Anls => v >= tau,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_match" => Ok(MetricKind::ExactMatch),
            "anls" => Ok(MetricKind::Anls),
            "relaxed_accuracy" => Ok(MetricKind::RelaxedAccuracy),
            "vqa_accuracy" => Ok(MetricKind::VqaAccuracy),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// A per-example score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(f64);

impl Score {
    pub const ZERO: Score = Score(0.0);
    pub const ONE: Score = Score(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Score(value))
        } else {
            Err(Error::Validation(format!("score {value} outside [0, 1]")))
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Score {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Score::new(v)
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.0
    }
}

pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn require_golds(golds: &[String]) -> Result<()> {
    if golds.is_empty() {
        Err(Error::Empty("gold answer list"))
    } else {
        Ok(())
    }
}

/// Normalized Levenshtein similarity between two already-normalized strings.
fn nl_similarity(pred: &str, gold: &str) -> f64 {
    let longest = pred.chars().count().max(gold.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(pred, gold) as f64 / longest as f64
}

/// Best normalized Levenshtein similarity against any gold, zeroed when it
/// falls below `tau`.
pub fn anls_single(pred: &str, golds: &[String], tau: f64) -> Result<Score> {
    require_golds(golds)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Validation(format!("ANLS tau {tau} outside [0, 1]")));
    }
    let pred = normalize_answer(pred);
    let best = golds
        .iter()
        .map(|g| nl_similarity(&pred, &normalize_answer(g)))
        .fold(0.0f64, f64::max);
    Score::new(if best >= tau { best } else { 0.0 })
}

pub fn exact_match(pred: &str, golds: &[String]) -> Result<Score> {
    require_golds(golds)?;
    let pred = normalize_answer(pred);
    let hit = golds.iter().any(|g| normalize_answer(g) == pred);
    Ok(if hit { Score::ONE } else { Score::ZERO })
}

/// Parses a chart-style numeric answer. Accepts surrounding whitespace, a
/// trailing `%`, thousands separators and a sign. Non-finite values are
/// rejected.
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    let s = s.strip_suffix('%').unwrap_or(s).trim_end();
    let cleaned: String = s.chars().filter(|&c| c != ',').collect();
    if cleaned.is_empty() || cleaned.chars().any(char::is_whitespace) {
        return None;
    }
    // Rust also parses "inf" and "NaN"; only plain decimals count here.
    if !cleaned.chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Exact match that also accepts numbers within 5% of the gold (inclusive).
pub fn relaxed_accuracy(pred: &str, golds: &[String]) -> Result<Score> {
    require_golds(golds)?;
    let pred_num = parse_number(pred);
    let pred_norm = normalize_answer(pred);
    let hit = golds.iter().any(|g| match (pred_num, parse_number(g)) {
        // A few ULPs of slack keep the bound inclusive for decimal inputs
        // such as 1.05 vs 1, whose f64 difference lands just above 0.05.
        (Some(p), Some(g)) => {
            (p - g).abs() <= RELAXED_TOLERANCE * g.abs() + 4.0 * f64::EPSILON * p.abs().max(g.abs())
        }
        _ => normalize_answer(g) == pred_norm,
    });
    Ok(if hit { Score::ONE } else { Score::ZERO })
}

/// `min(matching annotators / 3, 1)`.
pub fn vqa_accuracy(pred: &str, golds: &[String]) -> Result<Score> {
    require_golds(golds)?;
    let pred = normalize_answer(pred);
    let matches = golds.iter().filter(|g| normalize_answer(g) == pred).count();
    Score::new((matches as f64 / 3.0).min(1.0))
}

/// Mean score over a dataset, as a percentage.
pub fn dataset_score(rows: &[Score]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Empty("dataset_score"));
    }
    let sum: f64 = rows.iter().map(Score::value).sum();
    Ok(100.0 * sum / rows.len() as f64)
}
