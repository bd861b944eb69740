//! Reading-order strategies. Each produces a permutation of a document's
//! word indices.
//!
//! * [`standard_order`] passes through the order the OCR pipeline already
//!   provided (only valid when the document is flagged as reading-ordered).
//! * [`raster_scan_order`] rebuilds lines from box geometry and reads them
//!   top to bottom, left to right.
//! * [`shuffled_order`] is a seeded uniform shuffle, used as an ablation.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Document, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Standard,
    RasterScan,
    Shuffled,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Standard => "standard",
            Strategy::RasterScan => "raster_scan",
            Strategy::Shuffled => "shuffled",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Strategy::Standard),
            "raster_scan" => Ok(Strategy::RasterScan),
            "shuffled" => Ok(Strategy::Shuffled),
            other => Err(Error::Config(format!("unknown order strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterScanParams {
    line_threshold_factor: f64,
}

impl RasterScanParams {
    pub const DEFAULT_FACTOR: f64 = 0.5;

    /// `factor` is multiplied by the line seed's box height to get the
    /// vertical centroid tolerance. Must be positive and finite.
    pub fn new(factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Validation(format!(
                "line_threshold_factor must be positive, got {factor}"
            )));
        }
        Ok(Self {
            line_threshold_factor: factor,
        })
    }

    pub fn line_threshold_factor(&self) -> f64 {
        self.line_threshold_factor
    }
}

impl Default for RasterScanParams {
    fn default() -> Self {
        Self {
            line_threshold_factor: Self::DEFAULT_FACTOR,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OrderParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_threshold_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingOrder {
    pub doc_id: String,
    pub strategy: Strategy,
    pub params: OrderParams,
    pub permutation: Vec<usize>,
    /// Positions in `permutation` where a new raster-scan line begins.
    /// Empty for strategies with no line structure.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub line_starts: Vec<usize>,
}

impl ReadingOrder {
    /// Checks that `permutation` is a bijection on `0..n` and that the line
    /// starts are strictly increasing positions inside it.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.permutation.len() != n {
            return Err(Error::OrderMismatch(format!(
                "order for {} has {} entries, document has {n} words",
                self.doc_id,
                self.permutation.len()
            )));
        }
        let mut seen = vec![false; n];
        for &i in &self.permutation {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::OrderMismatch(format!(
                    "order for {} is not a permutation of 0..{n}",
                    self.doc_id
                )));
            }
        }
        if self.line_starts.windows(2).any(|w| w[0] >= w[1])
            || self.line_starts.last().is_some_and(|&s| s >= n)
        {
            return Err(Error::OrderMismatch(format!(
                "order for {} has invalid line starts",
                self.doc_id
            )));
        }
        Ok(())
    }
}

pub fn standard_order(doc: &Document) -> Result<ReadingOrder> {
    if !doc.provided_order_is_reading_order {
        return Err(Error::NoStandardOrder(doc.doc_id.clone()));
    }
    Ok(ReadingOrder {
        doc_id: doc.doc_id.clone(),
        strategy: Strategy::Standard,
        params: OrderParams::default(),
        permutation: (0..doc.len()).collect(),
        line_starts: Vec::new(),
    })
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}

/// Raster scan: repeatedly take the uppermost-leftmost remaining word as a
/// line seed, gather every remaining word whose vertical centroid lies
/// within `factor * seed.height()` of the seed's, and emit that line sorted
/// by horizontal centroid (ties by original index).
pub fn raster_scan_order(doc: &Document, params: RasterScanParams) -> ReadingOrder {
    let factor = params.line_threshold_factor();
    let mut remaining: Vec<&Word> = doc.words.iter().collect();
    let mut permutation = Vec::with_capacity(remaining.len());
    let mut line_starts = Vec::new();

    while !remaining.is_empty() {
        let seed = *remaining
            .iter()
            .min_by(|a, b| {
                let (ax, ay) = a.bbox.centroid();
                let (bx, by) = b.bbox.centroid();
                cmp_f64(ay, by)
                    .then(cmp_f64(ax, bx))
                    .then(a.index.cmp(&b.index))
            })
            .expect("non-empty");
        let seed_y = seed.bbox.centroid().1;
        let tolerance = factor * seed.bbox.height();

        let (mut line, rest): (Vec<&Word>, Vec<&Word>) = remaining
            .into_iter()
            .partition(|w| (w.bbox.centroid().1 - seed_y).abs() <= tolerance);
        line.sort_by(|a, b| {
            cmp_f64(a.bbox.centroid().0, b.bbox.centroid().0).then(a.index.cmp(&b.index))
        });

        line_starts.push(permutation.len());
        permutation.extend(line.iter().map(|w| w.index));
        remaining = rest;
    }

    ReadingOrder {
        doc_id: doc.doc_id.clone(),
        strategy: Strategy::RasterScan,
        params: OrderParams {
            line_threshold_factor: Some(factor),
            seed: None,
        },
        permutation,
        line_starts,
    }
}

/// Fisher-Yates shuffle of `0..n` driven by ChaCha8 seeded with `seed`.
pub fn shuffled_order(doc: &Document, seed: u64) -> ReadingOrder {
    let mut permutation: Vec<usize> = (0..doc.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    permutation.shuffle(&mut rng);
    ReadingOrder {
        doc_id: doc.doc_id.clone(),
        strategy: Strategy::Shuffled,
        params: OrderParams {
            line_threshold_factor: None,
            seed: Some(seed),
        },
        permutation,
        line_starts: Vec::new(),
    }
}

/// Kendall-tau distance: the number of word pairs the two orders place in
/// opposite relative order.
pub fn order_distance(a: &ReadingOrder, b: &ReadingOrder) -> Result<u64> {
    if a.doc_id != b.doc_id {
        return Err(Error::OrderMismatch(format!(
            "cannot compare orders of {} and {}",
            a.doc_id, b.doc_id
        )));
    }
    let n = a.permutation.len();
    if b.permutation.len() != n {
        return Err(Error::OrderMismatch(format!(
            "orders of {} have lengths {n} and {}",
            a.doc_id,
            b.permutation.len()
        )));
    }
    a.validate(n)?;
    b.validate(n)?;

    let mut rank_in_b = vec![0usize; n];
    for (pos, &word) in b.permutation.iter().enumerate() {
        rank_in_b[word] = pos;
    }
    let mut seq: Vec<usize> = a.permutation.iter().map(|&w| rank_in_b[w]).collect();
    let mut buf = vec![0usize; n];
    Ok(count_inversions(&mut seq, &mut buf))
}

// Merge sort that counts inversions, O(n log n).
fn count_inversions(seq: &mut [usize], buf: &mut [usize]) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = {
        let (left, right) = seq.split_at_mut(mid);
        let (lbuf, rbuf) = buf.split_at_mut(mid);
        count_inversions(left, lbuf) + count_inversions(right, rbuf)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if seq[i] <= seq[j] {
            buf[k] = seq[i];
            i += 1;
        } else {
            buf[k] = seq[j];
            inv += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&seq[i..mid]);
    k += mid - i;
    buf[k..n].copy_from_slice(&seq[j..n]);
    seq.copy_from_slice(&buf[..n]);
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest, Just};
    use proptest::strategy::Strategy as _;

    fn doc(reading_ordered: bool, boxes: &[(f64, f64, f64, f64)]) -> Document {
        Document::new(
            "d",
            reading_ordered,
            boxes
                .iter()
                .enumerate()
                .map(|(i, &(a, b, c, d))| (format!("w{i}"), BoundingBox::new(a, b, c, d).unwrap())),
        )
        .unwrap()
    }

    fn with_perm(perm: Vec<usize>) -> ReadingOrder {
        ReadingOrder {
            doc_id: "d".into(),
            strategy: Strategy::Standard,
            params: OrderParams::default(),
            permutation: perm,
            line_starts: vec![],
        }
    }

    fn brute_force_distance(a: &[usize], b: &[usize]) -> u64 {
        let pos = |p: &[usize], w: usize| p.iter().position(|&x| x == w).unwrap();
        let n = a.len();
        let mut d = 0;
        for x in 0..n {
            for y in x + 1..n {
                let ab = pos(a, x) < pos(a, y);
                let bb = pos(b, x) < pos(b, y);
                if ab != bb {
                    d += 1;
                }
            }
        }
        d
    }

    #[test]
    fn standard_is_identity() {
        let d = doc(true, &[(0., 0., 1., 1.); 3]);
        assert_eq!(standard_order(&d).unwrap().permutation, vec![0, 1, 2]);
        let empty = doc(true, &[]);
        assert!(standard_order(&empty).unwrap().permutation.is_empty());
    }

    #[test]
    fn standard_requires_flag() {
        let d = doc(false, &[(0., 0., 1., 1.)]);
        let err = standard_order(&d).unwrap_err();
        assert!(err
            .to_string()
            .contains("carries no standard reading order"));
    }

    #[test]
    fn raster_singleton() {
        let d = doc(false, &[(3., 3., 5., 5.)]);
        assert_eq!(
            raster_scan_order(&d, RasterScanParams::default()).permutation,
            vec![0]
        );
    }

    #[test]
    fn raster_two_by_two_grid() {
        // Input order: BR, TL, BL, TR; unit boxes at (0,0),(20,0),(0,20),(20,20).
        let d = doc(
            false,
            &[
                (20., 20., 21., 21.),
                (0., 0., 1., 1.),
                (0., 20., 1., 21.),
                (20., 0., 21., 1.),
            ],
        );
        let order = raster_scan_order(&d, RasterScanParams::default());
        // TL, TR, BL, BR
        assert_eq!(order.permutation, vec![1, 3, 2, 0]);
        assert_eq!(order.line_starts, vec![0, 2]);
    }

    #[test]
    fn raster_merges_aligned_columns_into_lines() {
        // Left column at x 0..40, right column at x 100..140, three rows each.
        let mut boxes = Vec::new();
        for col in [100.0, 0.0] {
            for row in 0..3 {
                let y = row as f64 * 30.0;
                boxes.push((col, y, col + 40.0, y + 10.0));
            }
        }
        let d = doc(false, &boxes);
        let order = raster_scan_order(&d, RasterScanParams::default());
        // Right column words are 0..3, left column 3..6.
        assert_eq!(order.permutation, vec![3, 0, 4, 1, 5, 2]);
    }

    #[test]
    fn raster_groups_relative_to_seed_height() {
        // Second word is 4 px lower; within 0.5 * 10 of the seed.
        let d = doc(
            false,
            &[(50., 4., 60., 14.), (0., 0., 10., 10.), (0., 30., 10., 40.)],
        );
        let order = raster_scan_order(&d, RasterScanParams::default());
        assert_eq!(order.permutation, vec![1, 0, 2]);
        let strict = raster_scan_order(&d, RasterScanParams::new(0.1).unwrap());
        assert_eq!(strict.permutation, vec![1, 0, 2]);
        assert_eq!(strict.line_starts, vec![0, 1, 2]);
    }

    #[test]
    fn raster_params_reject_non_positive() {
        assert!(RasterScanParams::new(0.0).is_err());
        assert!(RasterScanParams::new(-1.0).is_err());
        assert!(RasterScanParams::new(f64::NAN).is_err());
    }

    #[test]
    fn shuffle_singleton_and_determinism() {
        let one = doc(false, &[(0., 0., 1., 1.)]);
        assert_eq!(shuffled_order(&one, 12345).permutation, vec![0]);
        let five = doc(false, &[(0., 0., 1., 1.); 5]);
        assert_eq!(
            shuffled_order(&five, 99).permutation,
            shuffled_order(&five, 99).permutation
        );
    }

    #[test]
    fn shuffle_is_uniform_over_permutations() {
        let five = doc(false, &[(0., 0., 1., 1.); 5]);
        let mut counts = std::collections::HashMap::new();
        let trials = 10_000u64;
        for seed in 0..trials {
            *counts
                .entry(shuffled_order(&five, seed).permutation)
                .or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 120);
        let p = 1.0 / 120.0;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (perm, c) in counts {
            assert!(
                (c as f64 - mean).abs() <= 5.0 * sigma,
                "{perm:?} seen {c} times, expected {mean:.1} ± {:.1}",
                5.0 * sigma
            );
        }
    }

    #[test]
    fn distance_examples() {
        let id = with_perm(vec![0, 1, 2]);
        assert_eq!(order_distance(&id, &id).unwrap(), 0);
        assert_eq!(
            order_distance(&id, &with_perm(vec![2, 1, 0])).unwrap(),
            brute_force_distance(&[0, 1, 2], &[2, 1, 0])
        );
        assert_eq!(order_distance(&id, &with_perm(vec![2, 1, 0])).unwrap(), 3);
        assert_eq!(
            order_distance(&with_perm(vec![0, 1]), &with_perm(vec![1, 0])).unwrap(),
            1
        );
    }

    #[test]
    fn distance_rejects_mismatch() {
        let a = with_perm(vec![0, 1]);
        let b = with_perm(vec![0, 1, 2]);
        assert!(order_distance(&a, &b).is_err());
        let mut c = with_perm(vec![0, 1]);
        c.doc_id = "other".into();
        assert!(order_distance(&a, &c).is_err());
    }

    #[test]
    fn order_json_shape() {
        let d = doc(false, &[(0., 0., 1., 1.), (5., 0., 6., 1.)]);
        let o = shuffled_order(&d, 7);
        let v = serde_json::to_value(&o).unwrap();
        assert_eq!(v["strategy"], "shuffled");
        assert_eq!(v["params"]["seed"], 7);
        assert!(v.get("line_starts").is_none());
        let r = raster_scan_order(&d, RasterScanParams::default());
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["strategy"], "raster_scan");
        assert_eq!(v["params"]["line_threshold_factor"], 0.5);
    }

    proptest! {
        #[test]
        fn distance_matches_pair_enumeration(
            (a, b) in (1usize..9).prop_flat_map(|n| (
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            ))
        ) {
            let d = order_distance(&with_perm(a.clone()), &with_perm(b.clone())).unwrap();
            prop_assert_eq!(d, brute_force_distance(&a, &b));
        }

        #[test]
        fn every_strategy_yields_a_permutation(
            boxes in prop::collection::vec((0.0f64..500.0, 0.0f64..500.0, 0.0f64..40.0, 0.0f64..20.0), 0..30),
            seed in any::<u64>(),
        ) {
            let d = doc(true, &boxes.iter().map(|&(x, y, w, h)| (x, y, x + w, y + h)).collect::<Vec<_>>());
            let n = d.len();
            for order in [
                standard_order(&d).unwrap(),
                raster_scan_order(&d, RasterScanParams::default()),
                shuffled_order(&d, seed),
            ] {
                let mut sorted = order.permutation.clone();
                sorted.sort_unstable();
                prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
                prop_assert!(order.validate(n).is_ok());
            }
        }
    }
}
