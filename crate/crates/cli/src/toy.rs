//! A small synthetic corpus for demos and end-to-end tests.
//!
//! Each document is a single-column page of filler text with two labelled
//! fields ("total due 412 dollars"). Answers are multi-word and globally
//! unique, so they are contiguous under the reading order and usually torn
//! apart once the words are shuffled — more so on long pages.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use docqa::datasets::{QaRecord, QuestionFlag};
use docqa::geometry::{save_ocr_corpus, BoundingBox, Document};
use docqa::jsonl;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLER: &[&str] = &[
    "the",
    "of",
    "and",
    "for",
    "with",
    "please",
    "note",
    "account",
    "service",
    "period",
    "customer",
    "reference",
    "page",
    "terms",
    "conditions",
    "apply",
    "thank",
    "you",
    "your",
    "order",
    "items",
    "listed",
    "below",
    "were",
    "shipped",
    "via",
    "ground",
    "freight",
    "contact",
    "office",
    "hours",
    "monday",
    "through",
    "friday",
    "regarding",
    "this",
    "notice",
    "remit",
    "payment",
    "upon",
    "receipt",
    "department",
    "records",
    "copy",
    "file",
    "attached",
];
const FIRST: &[&str] = &[
    "alice", "bruno", "chen", "dana", "emeka", "farah", "goran", "hana",
];
const LAST: &[&str] = &[
    "okafor",
    "lindqvist",
    "moreau",
    "tanaka",
    "silva",
    "novak",
    "reyes",
];
const STREETS: &[&str] = &["maple", "harbor", "quarry", "willow", "station", "orchard"];
const MONTHS: &[&str] = &["january", "march", "april", "june", "august", "october"];
const FIRMS: &[&str] = &[
    "acme", "globex", "initech", "umbrella", "hooli", "vandelay", "wonka",
];

#[derive(Debug, Clone, Copy)]
enum Field {
    Total,
    Signer,
    Address,
    Meeting,
    Company,
}

const FIELDS: [Field; 5] = [
    Field::Total,
    Field::Signer,
    Field::Address,
    Field::Meeting,
    Field::Company,
];

impl Field {
    fn question(self) -> &'static str {
        match self {
            Field::Total => "what is the total due?",
            Field::Signer => "who signed the letter?",
            Field::Address => "what is the delivery address?",
            Field::Meeting => "when is the meeting?",
            Field::Company => "which company issued the document?",
        }
    }

    fn label(self) -> &'static [&'static str] {
        match self {
            Field::Total => &["total", "due:"],
            Field::Signer => &["signed", "by"],
            Field::Address => &["deliver", "to"],
            Field::Meeting => &["meeting", "on"],
            Field::Company => &["issued", "by"],
        }
    }

    fn answer(self, rng: &mut ChaCha8Rng, numbers: &mut Vec<u32>) -> String {
        let pick =
            |rng: &mut ChaCha8Rng, xs: &[&str]| xs.choose(rng).expect("non-empty").to_string();
        match self {
            Field::Total => format!("{} dollars", numbers.pop().expect("number pool")),
            Field::Signer => format!("{} {}", pick(rng, FIRST), pick(rng, LAST)),
            Field::Address => format!(
                "{} {} street",
                numbers.pop().expect("number pool"),
                pick(rng, STREETS)
            ),
            Field::Meeting => format!("{} {}", pick(rng, MONTHS), rng.gen_range(1..=28)),
            Field::Company => format!("{} {} industries", pick(rng, FIRMS), pick(rng, FIRST)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub docs: Vec<Document>,
    pub qa: Vec<QaRecord>,
}

#[derive(Debug, Clone, Copy)]
pub struct ToySpec {
    pub short_docs: usize,
    pub long_docs: usize,
    pub short_filler: (usize, usize),
    pub long_filler: (usize, usize),
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            short_docs: 10,
            long_docs: 10,
            short_filler: (4, 8),
            long_filler: (150, 250),
            seed: 7,
        }
    }
}

const LINE_WIDTH: f64 = 600.0;
const CHAR_WIDTH: f64 = 7.0;
const LINE_HEIGHT: f64 = 12.0;
const LINE_PITCH: f64 = 20.0;
const GAP: f64 = 5.0;

fn lay_out(words: Vec<String>) -> Vec<(String, BoundingBox)> {
    let (mut x, mut y) = (0.0, 0.0);
    words
        .into_iter()
        .map(|w| {
            let width = CHAR_WIDTH * w.chars().count() as f64;
            if x > 0.0 && x + width > LINE_WIDTH {
                x = 0.0;
                y += LINE_PITCH;
            }
            let b = BoundingBox::new(x, y, x + width, y + LINE_HEIGHT).expect("finite layout");
            x += width + GAP;
            (w, b)
        })
        .collect()
}

pub fn generate(spec: ToySpec) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut numbers: Vec<u32> = (100..1000).collect();
    numbers.shuffle(&mut rng);
    let mut used_answers = HashSet::new();

    let mut docs = Vec::new();
    let mut qa = Vec::new();
    let kinds = std::iter::repeat_n(("short", spec.short_filler), spec.short_docs)
        .enumerate()
        .chain(std::iter::repeat_n(("long", spec.long_filler), spec.long_docs).enumerate());
    for (i, (kind, (lo, hi))) in kinds {
        let doc_id = format!("{kind}-{i:02}");
        let mut fields = FIELDS.to_vec();
        fields.shuffle(&mut rng);
        fields.truncate(2);

        let filler_len = rng.gen_range(lo..=hi);
        let mut words: Vec<String> = (0..filler_len)
            .map(|_| FILLER.choose(&mut rng).expect("non-empty").to_string())
            .collect();
        for (k, field) in fields.iter().enumerate() {
            let answer = loop {
                let a = field.answer(&mut rng, &mut numbers);
                if used_answers.insert(a.clone()) {
                    break a;
                }
            };
            let mut phrase: Vec<String> = field.label().iter().map(|s| s.to_string()).collect();
            phrase.extend(answer.split(' ').map(str::to_string));
            let at = rng.gen_range(0..=words.len());
            words.splice(at..at, phrase);

            // The second question on every fifth page is a yes/no question
            // whose answer never appears on the page.
            let (question, answers, flags) = if k == 1 && i % 5 == 4 {
                (
                    "was the document signed?".to_string(),
                    vec![if rng.gen_bool(0.5) { "yes" } else { "no" }.to_string()],
                    BTreeSet::from([QuestionFlag::YesNo]),
                )
            } else {
                (field.question().to_string(), vec![answer], BTreeSet::new())
            };
            qa.push(QaRecord {
                example_id: format!("{doc_id}-q{k}"),
                doc_id: doc_id.clone(),
                question,
                answers,
                flags,
            });
        }
        docs.push(Document::new(doc_id, true, lay_out(words)).expect("toy words are valid"));
    }
    ToyCorpus { docs, qa }
}

impl ToyCorpus {
    pub fn write(&self, corpus: &Path, qa: &Path) -> docqa::Result<()> {
        save_ocr_corpus(corpus, &self.docs)?;
        jsonl::write_file(qa, &self.qa)
    }

    /// The sub-corpus whose document ids start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ToyCorpus {
        ToyCorpus {
            docs: self
                .docs
                .iter()
                .filter(|d| d.doc_id.starts_with(prefix))
                .cloned()
                .collect(),
            qa: self
                .qa
                .iter()
                .filter(|r| r.doc_id.starts_with(prefix))
                .cloned()
                .collect(),
        }
    }
}
