//! OCR data model: words with bounding boxes grouped into documents.
//!
//! Coordinates are image pixels with the origin at the top-left corner and
//! `y` growing downward. Integer coordinates in input files are widened to
//! `f64`. Zero-area boxes are legal; inverted or non-finite boxes are not.

use std::collections::HashSet;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite box coordinates {coords:?}"
            )));
        }
        if x_min > x_max {
            return Err(Error::Validation(format!(
                "inverted box: x_min {x_min} > x_max {x_max}"
            )));
        }
        if y_min > y_max {
            return Err(Error::Validation(format!(
                "inverted box: y_min {y_min} > y_max {y_max}"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Midpoint of the box as `(x, y)`.
    pub fn centroid(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Multiplies every coordinate by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.x_min * factor,
            self.y_min * factor,
            self.x_max * factor,
            self.y_max * factor,
        )
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// Free-function form of [`BoundingBox::centroid`].
pub fn centroid(bbox: &BoundingBox) -> (f64, f64) {
    bbox.centroid()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub index: usize,
    pub text: String,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub words: Vec<Word>,
    /// Whether the word list is already in the standard (externally
    /// predicted) reading order.
    pub provided_order_is_reading_order: bool,
}

impl Document {
    /// Builds a document from `(text, box)` pairs, assigning indices in
    /// input order and validating word text.
    pub fn new(
        doc_id: impl Into<String>,
        reading_ordered: bool,
        words: impl IntoIterator<Item = (String, BoundingBox)>,
    ) -> Result<Self> {
        let doc_id = doc_id.into();
        let words = words
            .into_iter()
            .enumerate()
            .map(|(index, (text, bbox))| {
                validate_text(&doc_id, index, &text)?;
                Ok(Word { index, text, bbox })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            doc_id,
            words,
            provided_order_is_reading_order: reading_ordered,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

fn validate_text(doc_id: &str, index: usize, text: &str) -> Result<()> {
    let message = if text.is_empty() {
        "word text is empty"
    } else if text.trim() != text {
        "word text has leading or trailing whitespace"
    } else {
        return Ok(());
    };
    Err(Error::InvalidWord {
        doc_id: doc_id.to_string(),
        index,
        message: message.to_string(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct WordRecord {
    text: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    reading_ordered: bool,
    words: Vec<WordRecord>,
}

impl DocumentRecord {
    fn into_document(self) -> Result<Document> {
        let doc_id = self.doc_id;
        let words = self
            .words
            .into_iter()
            .enumerate()
            .map(|(index, w)| {
                let bbox = BoundingBox::try_from(w.bbox).map_err(|e| Error::InvalidWord {
                    doc_id: doc_id.clone(),
                    index,
                    message: match e {
                        Error::Validation(m) => m,
                        other => other.to_string(),
                    },
                })?;
                Ok((w.text, bbox))
            })
            .collect::<Result<Vec<_>>>()?;
        Document::new(doc_id, self.reading_ordered, words)
    }

    fn from_document(doc: &Document) -> Self {
        Self {
            doc_id: doc.doc_id.clone(),
            reading_ordered: doc.provided_order_is_reading_order,
            words: doc
                .words
                .iter()
                .map(|w| WordRecord {
                    text: w.text.clone(),
                    bbox: w.bbox.into(),
                })
                .collect(),
        }
    }
}

/// Reads an OCR corpus file: one JSON document record per line.
pub fn load_ocr_corpus(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ocr_corpus(file, path)
}

pub fn read_ocr_corpus<R: std::io::Read>(reader: R, path: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    jsonl::read_records(reader, path, |line, rec: DocumentRecord| {
        if !seen.insert(rec.doc_id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate doc_id `{}`", rec.doc_id),
            });
        }
        docs.push(rec.into_document()?);
        Ok(())
    })?;
    Ok(docs)
}

pub fn save_ocr_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    jsonl::write_file(path, docs.iter().map(DocumentRecord::from_document))
}
