//! QA records, per-dataset configuration and multi-task mixture sampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Document;
use crate::jsonl;
use crate::metrics::MetricKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionFlag {
    YesNo,
    Genre,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub example_id: String,
    pub doc_id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default)]
    pub flags: BTreeSet<QuestionFlag>,
}

impl QaRecord {
    pub fn has_flag(&self, flag: QuestionFlag) -> bool {
        self.flags.contains(&flag)
    }
}

pub fn load_qa(path: &Path) -> Result<Vec<QaRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_qa(file, path)
}

pub fn read_qa<R: std::io::Read>(reader: R, path: &Path) -> Result<Vec<QaRecord>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    jsonl::read_records(reader, path, |line, rec: QaRecord| {
        let fail = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if rec.answers.is_empty() {
            return Err(fail(format!(
                "{}: answers must not be empty",
                rec.example_id
            )));
        }
        if rec.question.trim().is_empty() {
            return Err(fail(format!(
                "{}: question must not be empty",
                rec.example_id
            )));
        }
        if !ids.insert(rec.example_id.clone()) {
            return Err(fail(format!("duplicate example_id `{}`", rec.example_id)));
        }
        out.push(rec);
        Ok(())
    })?;
    Ok(out)
}

/// Fails on the first record whose `doc_id` is not in `corpus`.
pub fn check_doc_refs(records: &[QaRecord], corpus: &[Document]) -> Result<()> {
    let known: HashSet<&str> = corpus.iter().map(|d| d.doc_id.as_str()).collect();
    match records.iter().find(|r| !known.contains(r.doc_id.as_str())) {
        Some(r) => Err(Error::Validation(format!(
            "{} references unknown document {}",
            r.example_id, r.doc_id
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(skip)]
    pub name: String,
    pub metric: MetricKind,
    pub context_budget: usize,
    pub target_budget: usize,
    pub anls_tau: f64,
    /// Excludes genre-classification questions from answer-presence stats.
    #[serde(default)]
    pub drop_genre_questions: bool,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_budget == 0 || self.target_budget == 0 {
            return Err(Error::Config(format!(
                "{}: budgets must be >= 1",
                self.name
            )));
        }
        if !(0.0..=1.0).contains(&self.anls_tau) {
            return Err(Error::Config(format!(
                "{}: anls_tau {} outside [0, 1]",
                self.name, self.anls_tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRegistry {
    pub version: u32,
    pub datasets: BTreeMap<String, DatasetConfig>,
}

const BUNDLED: &str = include_str!("../datasets.toml");

impl DatasetRegistry {
    /// The six benchmark defaults shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_toml(BUNDLED).expect("bundled datasets.toml is valid")
    }

    pub fn bundled_source() -> &'static str {
        BUNDLED
    }

    pub fn from_toml(src: &str) -> Result<Self> {
        let mut reg: DatasetRegistry =
            toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        for (name, cfg) in reg.datasets.iter_mut() {
            cfg.name = name.clone();
            cfg.validate()?;
        }
        Ok(reg)
    }

    pub fn get(&self, name: &str) -> Result<&DatasetConfig> {
        self.datasets
            .get(name)
            .ok_or_else(|| Error::UnknownDataset(name.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureStrategy {
    /// Pick a dataset with probability 1/K, then an example within it.
    Uniform,
    /// Pool all datasets and pick an example uniformly.
    Normalized,
}

impl FromStr for MixtureStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(MixtureStrategy::Uniform),
            "normalized" => Ok(MixtureStrategy::Normalized),
            other => Err(Error::Config(format!("unknown mixture strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draw {
    pub dataset: String,
    pub index: usize,
}

/// Draws `n_draws` examples with replacement from the named datasets.
/// The sequence is a pure function of the arguments.
pub fn sample_mixture(
    datasets: &[(String, usize)],
    strategy: MixtureStrategy,
    seed: u64,
    n_draws: usize,
) -> Result<Vec<Draw>> {
    if datasets.is_empty() {
        return Err(Error::Empty("sample_mixture"));
    }
    if n_draws == 0 {
        return Err(Error::Validation("n_draws must be at least 1".into()));
    }
    if let Some((name, _)) = datasets.iter().find(|(_, size)| *size == 0) {
        return Err(Error::Validation(format!("dataset {name} is empty")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = datasets.iter().map(|(_, s)| s).sum();
    let draw = |rng: &mut ChaCha8Rng| -> (usize, usize) {
        match strategy {
            MixtureStrategy::Uniform => {
                let d = rng.gen_range(0..datasets.len());
                (d, rng.gen_range(0..datasets[d].1))
            }
            MixtureStrategy::Normalized => {
                let mut global = rng.gen_range(0..total);
                for (d, (_, size)) in datasets.iter().enumerate() {
                    if global < *size {
                        return (d, global);
                    }
                    global -= size;
                }
                unreachable!("global index below pooled size")
            }
        }
    };

    Ok((0..n_draws)
        .map(|_| {
            let (d, index) = draw(&mut rng);
            Draw {
                dataset: datasets[d].0.clone(),
                index,
            }
        })
        .collect())
}
