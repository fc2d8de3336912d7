//! Confusion counts, F1, MCC and pixel-level AUROC.
//!
//! Defective is the positive class. Metrics whose denominator is zero are
//! `N/A` rather than a number.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{BBox, Label};
use crate::verdict::MetricLabel;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("score map is {score_w}x{score_h} but mask is {mask_w}x{mask_h}")]
    DimensionMismatch {
        score_w: u32,
        score_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("unknown category {0}")]
    UnknownCategory(String),
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn record(&mut self, truth: Label, predicted_defective: bool) {
        match (truth.is_defective(), predicted_defective) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// A metric that may be undefined because of a zero division.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Defined(f64),
    NotAvailable,
}

impl MetricValue {
    pub fn value(self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(v),
            MetricValue::NotAvailable => None,
        }
    }

    pub fn is_na(self) -> bool {
        self == MetricValue::NotAvailable
    }
}

impl fmt::Display for MetricValue {
    /// Three decimals, or the literal `N/A`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Defined(v) => write!(f, "{v:.3}"),
            MetricValue::NotAvailable => f.write_str("N/A"),
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            MetricValue::Defined(v) => s.serialize_f64(*v),
            MetricValue::NotAvailable => s.serialize_str("N/A"),
        }
    }
}

impl<'de> Deserialize<'de> for MetricValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(MetricValue::Defined(v)),
            Repr::Text(s) if s == "N/A" => Ok(MetricValue::NotAvailable),
            Repr::Text(s) => Err(serde::de::Error::custom(format!("expected number or \"N/A\", got {s:?}"))),
        }
    }
}

/// `2TP / (2TP + FP + FN)`.
pub fn f1(c: &ConfusionCounts) -> MetricValue {
    let den = 2 * u128::from(c.tp) + u128::from(c.fp) + u128::from(c.fn_);
    if den == 0 {
        return MetricValue::NotAvailable;
    }
    MetricValue::Defined((2 * u128::from(c.tp)) as f64 / den as f64)
}

/// Matthews correlation coefficient. `N/A` when any of the four marginal
/// sums is zero.
pub fn mcc(c: &ConfusionCounts) -> MetricValue {
    let (tp, fp, tn, fn_) = (c.tp as u128, c.fp as u128, c.tn as u128, c.fn_ as u128);
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if factors.contains(&0) {
        return MetricValue::NotAvailable;
    }
    // products of two u64 counts fit in u128; the difference is exact in i128
    // up to 2^127, far beyond any dataset
    let num = (tp * tn) as i128 - (fp * fn_) as i128;
    // pairing the factors keeps a perfect split at exactly 1
    let den = ((factors[0] * factors[1]) as f64).sqrt() * ((factors[2] * factors[3]) as f64).sqrt();
    MetricValue::Defined((num as f64 / den).clamp(-1.0, 1.0))
}

/// Binary per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize, "mask data length");
        Self { width, height, data }
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self::new(width, height, vec![false; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }
}

/// Per-pixel anomaly scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl ScoreMap {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize, "score data length");
        Self { width, height, data }
    }

    /// 1 inside any box, 0 elsewhere.
    pub fn from_boxes(boxes: &[BBox], width: u32, height: u32) -> Self {
        let mut data = vec![0.0; width as usize * height as usize];
        for b in boxes {
            let (x0, y0, x1, y1) = b.pixel_span(width, height);
            for y in y0..y1 {
                let row = (y * width) as usize;
                data[row + x0 as usize..row + x1 as usize].fill(1.0);
            }
        }
        Self { width, height, data }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Scores grouped by exact value, with positive/negative counts per group.
/// Merging two accumulators is exact, so pooled AUROC over millions of
/// pixels needs memory proportional to the number of distinct scores only.
#[derive(Debug, Clone, Default)]
pub struct RankAccumulator {
    groups: BTreeMap<OrdF64, (u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct OrdF64(i64);

impl OrdF64 {
    // total order key; -0.0 and 0.0 collapse to one group
    fn new(v: f64) -> Self {
        let v = if v == 0.0 { 0.0 } else { v };
        let bits = v.to_bits() as i64;
        OrdF64(bits ^ (((bits >> 63) as u64) >> 1) as i64)
    }
}

impl RankAccumulator {
    pub fn push(&mut self, score: f64, positive: bool) {
        let g = self.groups.entry(OrdF64::new(score)).or_default();
        if positive {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }

    pub fn push_map(&mut self, scores: &ScoreMap, mask: &BinaryMask) -> Result<(), MetricsError> {
        check_dims(scores, mask)?;
        // run-length over equal scores; box maps have long constant runs
        let mut run: Option<(OrdF64, u64, u64)> = None;
        for (&s, &m) in scores.data.iter().zip(&mask.data) {
            let key = OrdF64::new(s);
            match &mut run {
                Some((k, p, n)) if *k == key => {
                    if m {
                        *p += 1;
                    } else {
                        *n += 1;
                    }
                }
                _ => {
                    if let Some((k, p, n)) = run.take() {
                        self.add(k, p, n);
                    }
                    run = Some((key, u64::from(m), u64::from(!m)));
                }
            }
        }
        if let Some((k, p, n)) = run {
            self.add(k, p, n);
        }
        Ok(())
    }

    fn add(&mut self, key: OrdF64, pos: u64, neg: u64) {
        let g = self.groups.entry(key).or_default();
        g.0 += pos;
        g.1 += neg;
    }

    pub fn merge(&mut self, other: &RankAccumulator) {
        for (&k, &(p, n)) in &other.groups {
            self.add(k, p, n);
        }
    }

    /// Mann-Whitney AUROC with mid-ranks for ties:
    /// `U = R+ - P(P+1)/2`, `AUROC = U / (P N)`. Computed as `2U` in integers.
    pub fn auroc(&self) -> MetricValue {
        let (p, n) = self
            .groups
            .values()
            .fold((0u128, 0u128), |(p, n), &(gp, gn)| (p + u128::from(gp), n + u128::from(gn)));
        if p == 0 || n == 0 {
            return MetricValue::NotAvailable;
        }
        // twice the positive rank sum; a group occupying ranks offset+1..=offset+k
        // has mid-rank offset + (k+1)/2
        let mut offset = 0u128;
        let mut twice_rank_sum = 0u128;
        for &(gp, gn) in self.groups.values() {
            let k = u128::from(gp) + u128::from(gn);
            twice_rank_sum += u128::from(gp) * (2 * offset + k + 1);
            offset += k;
        }
        let twice_u = twice_rank_sum - p * (p + 1);
        MetricValue::Defined(twice_u as f64 / (2 * p * n) as f64)
    }
}

fn check_dims(scores: &ScoreMap, mask: &BinaryMask) -> Result<(), MetricsError> {
    if (scores.width, scores.height) != (mask.width, mask.height) {
        return Err(MetricsError::DimensionMismatch {
            score_w: scores.width,
            score_h: scores.height,
            mask_w: mask.width,
            mask_h: mask.height,
        });
    }
    Ok(())
}

/// Rank-based AUROC of arbitrary scores against binary labels.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<MetricValue, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let mut acc = RankAccumulator::default();
    for (&s, &l) in scores.iter().zip(labels) {
        acc.push(s, l);
    }
    Ok(acc.auroc())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AurocScope {
    /// Mean of per-image AUROCs over images where both classes occur.
    PerImageMean,
    /// All pixels of all images ranked together.
    #[default]
    MicroPooled,
}

/// Pixel-level AUROC of box predictions against masks.
pub fn pixel_auroc(predictions: &[(Vec<BBox>, BinaryMask)], scope: AurocScope) -> Result<MetricValue, MetricsError> {
    let per_image = predictions
        .iter()
        .map(|(boxes, mask)| {
            let scores = ScoreMap::from_boxes(boxes, mask.width, mask.height);
            let mut acc = RankAccumulator::default();
            acc.push_map(&scores, mask)?;
            Ok(acc)
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(match scope {
        AurocScope::MicroPooled => {
            let mut all = RankAccumulator::default();
            for acc in &per_image {
                all.merge(acc);
            }
            all.auroc()
        }
        AurocScope::PerImageMean => mean_defined(per_image.iter().map(RankAccumulator::auroc)),
    })
}

/// Mean of the defined values; `N/A` if none.
pub fn mean_defined(values: impl IntoIterator<Item = MetricValue>) -> MetricValue {
    let (sum, n) = values
        .into_iter()
        .filter_map(MetricValue::value)
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        MetricValue::NotAvailable
    } else {
        MetricValue::Defined(sum / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub counts: ConfusionCounts,
    pub f1: MetricValue,
    pub mcc: MetricValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_auroc: Option<MetricValue>,
    pub format_error_count: u64,
    pub excluded_count: u64,
}

impl CategoryMetrics {
    fn from_counts(counts: ConfusionCounts, format_error_count: u64, excluded_count: u64) -> Self {
        Self {
            counts,
            f1: f1(&counts),
            mcc: mcc(&counts),
            pixel_auroc: None,
            format_error_count,
            excluded_count,
        }
    }
}

/// Per-category rows plus the all-category row computed on pooled counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_category: BTreeMap<String, CategoryMetrics>,
    pub all_category: CategoryMetrics,
    /// Unweighted mean of defined per-category values.
    pub macro_f1: MetricValue,
    pub macro_mcc: MetricValue,
}

/// One scored image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutcome {
    pub category: String,
    pub truth: Label,
    pub prediction: MetricLabel,
    pub format_error: bool,
}

pub fn aggregate(outcomes: &[ImageOutcome], categories: &[String]) -> Result<MetricReport, MetricsError> {
    let known: HashSet<&str> = categories.iter().map(String::as_str).collect();
    let mut tallies: BTreeMap<String, (ConfusionCounts, u64, u64)> = BTreeMap::new();
    for o in outcomes {
        if !known.contains(o.category.as_str()) {
            return Err(MetricsError::UnknownCategory(o.category.clone()));
        }
        let t = tallies.entry(o.category.clone()).or_default();
        match o.prediction {
            MetricLabel::Positive => t.0.record(o.truth, true),
            MetricLabel::Negative => t.0.record(o.truth, false),
            MetricLabel::Excluded => t.2 += 1,
        }
        t.1 += u64::from(o.format_error);
    }
    let per_category: BTreeMap<String, CategoryMetrics> = tallies
        .into_iter()
        .map(|(cat, (c, fe, ex))| (cat, CategoryMetrics::from_counts(c, fe, ex)))
        .collect();
    let (counts, fe, ex) = per_category.values().fold((ConfusionCounts::default(), 0, 0), |(c, fe, ex), m| {
        (c.merge(m.counts), fe + m.format_error_count, ex + m.excluded_count)
    });
    Ok(MetricReport {
        macro_f1: mean_defined(per_category.values().map(|m| m.f1)),
        macro_mcc: mean_defined(per_category.values().map(|m| m.mcc)),
        all_category: CategoryMetrics::from_counts(counts, fe, ex),
        per_category,
    })
}
