//! Diagnostics relating model behaviour to properties of the serialized
//! input: reading-order perplexity, whether the answer is present in the
//! context at all, and how context length and order strategy affect scores.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::datasets::{QaRecord, QuestionFlag};
use crate::error::{Error, Result};
use crate::metrics::{normalize_answer, MetricKind, Score};
use crate::ordering::Strategy;

/// One generated token and its natural-log probability under the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProb {
    #[serde(rename = "text")]
    pub token_text: String,
    pub logprob: f64,
}

impl TokenLogProb {
    pub fn new(token_text: impl Into<String>, logprob: f64) -> Result<Self> {
        let t = Self {
            token_text: token_text.into(),
            logprob,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.logprob.is_finite() || self.logprob > 0.0 {
            return Err(Error::Validation(format!(
                "token {:?} has invalid logprob {}",
                self.token_text, self.logprob
            )));
        }
        Ok(())
    }
}

/// `exp(-mean(logprob))` over the predicted tokens. Always >= 1.
pub fn reading_order_perplexity(tokens: &[TokenLogProb]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::Empty("reading_order_perplexity"));
    }
    let mut sum = 0.0;
    for t in tokens {
        t.validate()?;
        sum += t.logprob;
    }
    Ok((-sum / tokens.len() as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub example_id: String,
    pub score: Score,
    pub correct: bool,
    pub context_token_len: usize,
    /// `None` when not computed for this example.
    pub answer_in_text: Option<bool>,
    pub rop: Option<f64>,
}

impl EvalRow {
    /// Derives `correct` from `score` with the metric's correctness rule.
    pub fn new(
        example_id: impl Into<String>,
        metric: MetricKind,
        tau: f64,
        score: Score,
        context_token_len: usize,
    ) -> Self {
        Self {
            example_id: example_id.into(),
            correct: metric.is_correct(score, tau),
            score,
            context_token_len,
            answer_in_text: None,
            rop: None,
        }
    }
}

/// Partitions rows into (correct, incorrect), preserving input order.
pub fn split_by_correctness(rows: &[EvalRow]) -> (Vec<&EvalRow>, Vec<&EvalRow>) {
    rows.iter().partition(|r| r.correct)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityStats {
    pub mean_rop_correct: Option<f64>,
    pub mean_rop_incorrect: Option<f64>,
    /// Dataset-level zero-shot perplexity.
    pub mean_rop_all: Option<f64>,
    pub n_correct: usize,
    pub n_incorrect: usize,
}

/// Mean ROP over the correct set, the incorrect set and all rows. Empty
/// sets report `None`.
pub fn zero_shot_perplexity(rows: &[EvalRow]) -> Result<PerplexityStats> {
    let rop = |r: &EvalRow| {
        r.rop.ok_or_else(|| {
            Error::Validation(format!(
                "{} carries no reading-order perplexity",
                r.example_id
            ))
        })
    };
    let all = rows.iter().map(rop).collect::<Result<Vec<_>>>()?;
    let (correct, incorrect) = split_by_correctness(rows);
    Ok(PerplexityStats {
        mean_rop_correct: mean(correct.iter().map(|r| r.rop.unwrap_or_default())),
        mean_rop_incorrect: mean(incorrect.iter().map(|r| r.rop.unwrap_or_default())),
        mean_rop_all: mean(all),
        n_correct: correct.len(),
        n_incorrect: incorrect.len(),
    })
}

/// True when any normalized gold answer is a contiguous substring of the
/// normalized context. Answers that normalize to nothing never match.
pub fn answer_in_text(answers: &[String], context: &str) -> bool {
    let context = normalize_answer(context);
    answers.iter().any(|a| {
        let a = normalize_answer(a);
        !a.is_empty() && context.contains(&a)
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PresenceFilter {
    /// Also drop genre-classification questions (yes/no questions are
    /// always dropped).
    pub drop_genre: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerPresence {
    pub pct_correct_set: Option<f64>,
    pub pct_incorrect_set: Option<f64>,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub n_excluded: usize,
}

/// Percentage of examples whose answer appears in the context, separately
/// for the correct and incorrect sets, after removing yes/no questions (and
/// genre questions when the filter asks for it).
pub fn answer_presence_report(
    rows: &[EvalRow],
    records: &[QaRecord],
    filter: PresenceFilter,
) -> Result<AnswerPresence> {
    let by_id: HashMap<&str, &QaRecord> =
        records.iter().map(|r| (r.example_id.as_str(), r)).collect();

    let mut tallies = [(0usize, 0usize); 2]; // [correct, incorrect] -> (in_text, total)
    let mut excluded = 0;
    for row in rows {
        let rec = by_id.get(row.example_id.as_str()).ok_or_else(|| {
            Error::Validation(format!("no QA record for example {}", row.example_id))
        })?;
        if rec.has_flag(QuestionFlag::YesNo)
            || (filter.drop_genre && rec.has_flag(QuestionFlag::Genre))
        {
            excluded += 1;
            continue;
        }
        let present = row.answer_in_text.ok_or_else(|| {
            Error::Validation(format!(
                "{} carries no answer_in_text value",
                row.example_id
            ))
        })?;
        let slot = &mut tallies[usize::from(!row.correct)];
        slot.0 += usize::from(present);
        slot.1 += 1;
    }
    let pct = |(hit, total): (usize, usize)| (total > 0).then(|| 100.0 * hit as f64 / total as f64);
    Ok(AnswerPresence {
        pct_correct_set: pct(tallies[0]),
        pct_incorrect_set: pct(tallies[1]),
        n_correct: tallies[0].1,
        n_incorrect: tallies[1].1,
        n_excluded: excluded,
    })
}

/// Median; even-length inputs average the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextLengthReport {
    pub norm_median_correct: Option<f64>,
    pub norm_median_incorrect: Option<f64>,
    pub dataset_median: f64,
}

/// Median context length of each correctness set divided by the median of
/// the whole dataset.
pub fn context_length_report(rows: &[EvalRow]) -> Result<ContextLengthReport> {
    let lens = |rs: &[&EvalRow]| {
        rs.iter()
            .map(|r| r.context_token_len as f64)
            .collect::<Vec<_>>()
    };
    let all: Vec<&EvalRow> = rows.iter().collect();
    let dataset_median = median(&lens(&all)).ok_or(Error::Empty("context_length_report"))?;
    if dataset_median == 0.0 {
        return Err(Error::Validation(
            "dataset median context length is zero".into(),
        ));
    }
    let (correct, incorrect) = split_by_correctness(rows);
    Ok(ContextLengthReport {
        norm_median_correct: median(&lens(&correct)).map(|m| m / dataset_median),
        norm_median_incorrect: median(&lens(&incorrect)).map(|m| m / dataset_median),
        dataset_median,
    })
}

/// Dataset-level scores of one dataset under several reading orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyScores {
    pub dataset: String,
    pub median_len: f64,
    pub scores: BTreeMap<Strategy, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub dataset: String,
    pub median_len: f64,
    /// Standard-order score minus shuffled-order score.
    pub delta: f64,
}

/// One row per dataset, sorted by ascending median context length (ties by
/// dataset name).
pub fn order_sensitivity_report(inputs: &[StrategyScores]) -> Result<Vec<SensitivityRow>> {
    let mut rows = inputs
        .iter()
        .map(|s| {
            let get = |strategy: Strategy| {
                s.scores.get(&strategy).copied().ok_or_else(|| {
                    Error::Validation(format!(
                        "{} has no score for the {strategy} order",
                        s.dataset
                    ))
                })
            };
            Ok(SensitivityRow {
                dataset: s.dataset.clone(),
                median_len: s.median_len,
                delta: get(Strategy::Standard)? - get(Strategy::Shuffled)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        a.median_len
            .total_cmp(&b.median_len)
            .then_with(|| a.dataset.cmp(&b.dataset))
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn toks(lps: &[f64]) -> Vec<TokenLogProb> {
        lps.iter()
            .map(|&l| TokenLogProb::new("t", l).unwrap())
            .collect()
    }

    fn row(id: &str, correct: bool, len: usize) -> EvalRow {
        EvalRow {
            example_id: id.into(),
            score: if correct { Score::ONE } else { Score::ZERO },
            correct,
            context_token_len: len,
            answer_in_text: None,
            rop: None,
        }
    }

    #[test]
    fn rop_closed_forms() {
        assert_eq!(
            reading_order_perplexity(&toks(&[0.0, 0.0, 0.0])).unwrap(),
            1.0
        );
        let ln2 = std::f64::consts::LN_2;
        assert!((reading_order_perplexity(&toks(&[-ln2, -ln2])).unwrap() - 2.0).abs() < 1e-12);
        let e = reading_order_perplexity(&toks(&[-1.0, -1.0, -1.0])).unwrap();
        assert!((e - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn rop_errors() {
        assert!(reading_order_perplexity(&[]).is_err());
        let bad = vec![TokenLogProb {
            token_text: "x".into(),
            logprob: 0.1,
        }];
        assert!(matches!(
            reading_order_perplexity(&bad),
            Err(Error::Validation(_))
        ));
        assert!(TokenLogProb::new("x", f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn split_examples() {
        let all = vec![row("a", true, 1), row("b", true, 1)];
        let (c, i) = split_by_correctness(&all);
        assert_eq!(c.len(), 2);
        assert!(i.is_empty());

        let s = |v: f64| Score::new(v).unwrap();
        let anls = vec![
            EvalRow::new("x", MetricKind::Anls, 0.5, s(0.8), 3),
            EvalRow::new("y", MetricKind::Anls, 0.5, s(0.4), 3),
        ];
        let (c, i) = split_by_correctness(&anls);
        assert_eq!(c[0].example_id, "x");
        assert_eq!(i[0].example_id, "y");

        let (c, i) = split_by_correctness(&[]);
        assert!(c.is_empty() && i.is_empty());
    }

    #[test]
    fn zero_shot_examples() {
        let mut a = row("a", true, 1);
        a.rop = Some(1.0);
        let mut b = row("b", true, 1);
        b.rop = Some(3.0);
        let stats = zero_shot_perplexity(&[a, b]).unwrap();
        assert_eq!(stats.mean_rop_correct, Some(2.0));
        assert_eq!(stats.mean_rop_incorrect, None);

        let mut c = row("c", true, 1);
        c.rop = Some(2.0);
        let mut d = row("d", false, 1);
        d.rop = Some(4.0);
        let stats = zero_shot_perplexity(&[c.clone(), d.clone()]).unwrap();
        assert_eq!(
            (
                stats.mean_rop_correct,
                stats.mean_rop_incorrect,
                stats.mean_rop_all
            ),
            (Some(2.0), Some(4.0), Some(3.0))
        );
        assert_eq!(zero_shot_perplexity(&[d, c]).unwrap(), stats);

        assert!(zero_shot_perplexity(&[row("x", true, 1)]).is_err());
    }

    #[test]
    fn answer_in_text_examples() {
        let ctx = "the total is 42 dollars";
        assert!(answer_in_text(&["42".into()], ctx));
        assert!(!answer_in_text(&["43".into()], ctx));
        assert!(answer_in_text(&["Total".into()], "total due"));
        assert!(!answer_in_text(&["  ".into()], "anything"));
    }

    fn record(id: &str, flags: &[QuestionFlag]) -> QaRecord {
        QaRecord {
            example_id: id.into(),
            doc_id: "d".into(),
            question: "q".into(),
            answers: vec!["a".into()],
            flags: flags.iter().copied().collect::<BTreeSet<_>>(),
        }
    }

    #[test]
    fn presence_ratios_and_filters() {
        let mut rows = vec![
            row("c1", true, 1),
            row("i1", false, 1),
            row("i2", false, 1),
            row("yn", false, 1),
        ];
        rows[0].answer_in_text = Some(true);
        rows[1].answer_in_text = Some(true);
        rows[2].answer_in_text = Some(false);
        let recs = vec![
            record("c1", &[]),
            record("i1", &[]),
            record("i2", &[]),
            record("yn", &[QuestionFlag::YesNo]),
        ];
        let rep = answer_presence_report(&rows, &recs, PresenceFilter::default()).unwrap();
        assert_eq!(rep.pct_correct_set, Some(100.0));
        assert_eq!(rep.pct_incorrect_set, Some(50.0));
        assert_eq!(rep.n_excluded, 1);

        let only_yn = vec![row("yn", true, 1)];
        let rep = answer_presence_report(&only_yn, &recs, PresenceFilter::default()).unwrap();
        assert_eq!((rep.pct_correct_set, rep.pct_incorrect_set), (None, None));

        let missing = vec![row("ghost", true, 1)];
        let err = answer_presence_report(&missing, &recs, PresenceFilter::default()).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn context_length_examples() {
        let rows = vec![
            row("a", true, 10),
            row("b", true, 20),
            row("c", false, 30),
            row("d", false, 40),
        ];
        let rep = context_length_report(&rows).unwrap();
        assert_eq!(rep.dataset_median, 25.0);
        assert!((rep.norm_median_correct.unwrap() - 0.6).abs() < 1e-12);
        assert!((rep.norm_median_incorrect.unwrap() - 1.4).abs() < 1e-12);

        let flat = vec![row("a", true, 7), row("b", false, 7)];
        let rep = context_length_report(&flat).unwrap();
        assert_eq!(
            (rep.norm_median_correct, rep.norm_median_incorrect),
            (Some(1.0), Some(1.0))
        );

        let single = vec![row("a", true, 5)];
        assert_eq!(
            context_length_report(&single).unwrap().norm_median_correct,
            Some(1.0)
        );

        assert!(context_length_report(&[row("z", true, 0)]).is_err());
        assert!(context_length_report(&[]).is_err());
    }

    fn scores(ds: &str, median_len: f64, standard: f64, shuffled: f64) -> StrategyScores {
        StrategyScores {
            dataset: ds.into(),
            median_len,
            scores: [
                (Strategy::Standard, standard),
                (Strategy::Shuffled, shuffled),
            ]
            .into_iter()
            .collect(),
        }
    }

    #[test]
    fn order_sensitivity_examples() {
        let rows = order_sensitivity_report(&[scores("a", 10.0, 50.0, 50.0)]).unwrap();
        assert_eq!(rows[0].delta, 0.0);

        let rows = order_sensitivity_report(&[
            scores("long", 900.0, 78.5, 60.0),
            scores("short", 20.0, 70.0, 69.0),
        ])
        .unwrap();
        assert_eq!(rows[0].dataset, "short");
        assert_eq!(rows[1].dataset, "long");
        assert!((rows[1].delta - 18.5).abs() < 1e-12);

        let mut partial = scores("x", 1.0, 1.0, 1.0);
        partial.scores.remove(&Strategy::Shuffled);
        assert!(order_sensitivity_report(&[partial]).is_err());
    }
}
