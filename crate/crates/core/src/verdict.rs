//! Parsing model answers into inspection verdicts.
//!
//! Accepted forms, after trimming:
//!
//! * `None` (any case, optionally followed by one period): no defect.
//! * One or more `<mode words> [f, f, f, f]` segments: defect with boxes.
//!   Segments may be separated by `,`, `;` or `and`; later segments may omit
//!   the mode. Numbers above 1 are pixel coordinates and stay as they are
//!   until [`normalize_boxes`].
//! * Anything else is a format error, which is a value, not a failure.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Answer, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    NonDefective,
    Defective,
    FormatError,
}

/// Box as parsed, possibly in pixel units or out of order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RawBox(pub [f64; 4]);

impl RawBox {
    pub fn to_bbox(self) -> Option<BBox> {
        BBox::try_from(self.0).ok()
    }
}

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        RawBox(b.coords())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionVerdict {
    pub classification: Classification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default)]
    pub boxes: Vec<RawBox>,
    pub raw_text: String,
}

impl InspectionVerdict {
    fn format_error(raw: &str) -> Self {
        Self {
            classification: Classification::FormatError,
            mode: None,
            boxes: vec![],
            raw_text: raw.to_string(),
        }
    }

    /// Normalized boxes (invalid ones skipped).
    pub fn bboxes(&self) -> Vec<BBox> {
        self.boxes.iter().filter_map(|b| b.to_bbox()).collect()
    }

    /// The single-box answer this verdict encodes, if it is one.
    pub fn to_answer(&self) -> Option<Answer> {
        match (self.classification, self.boxes.as_slice()) {
            (Classification::NonDefective, _) => Some(Answer::None),
            (Classification::Defective, [b]) => Some(Answer::Defect {
                mode: self.mode.clone().unwrap_or_default(),
                bbox: b.to_bbox()?,
            }),
            _ => None,
        }
    }
}

const NUM: &str = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)";

static SEGMENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"([^\[\]]*?)\[\s*({NUM})\s*,\s*({NUM})\s*,\s*({NUM})\s*,\s*({NUM})\s*\]"
    ))
    .expect("segment regex")
});

fn clean_mode(text: &str, first: bool) -> Option<String> {
    let mut m = text.trim();
    if !first {
        m = m.trim_start_matches([',', ';']).trim_start();
        if let Some(rest) = m.strip_prefix("and ") {
            m = rest.trim_start();
        } else if m == "and" {
            m = "";
        }
    }
    let m = m.trim_end_matches(':').trim_end();
    (!m.is_empty()).then(|| m.to_string())
}

/// Parse raw model text. Total: never fails, unparseable text becomes a
/// format error carrying the text untouched.
pub fn parse(raw: &str) -> InspectionVerdict {
    let text = raw.trim();
    let folded = text.to_lowercase();
    if folded.strip_suffix('.').unwrap_or(&folded) == "none" {
        return InspectionVerdict {
            classification: Classification::NonDefective,
            mode: None,
            boxes: vec![],
            raw_text: raw.to_string(),
        };
    }

    let mut pos = 0;
    let mut mode = None;
    let mut boxes = Vec::new();
    for caps in SEGMENT.captures_iter(text) {
        let whole = caps.get(0).expect("match");
        if whole.start() != pos {
            return InspectionVerdict::format_error(raw);
        }
        pos = whole.end();
        let seg_mode = clean_mode(&caps[1], boxes.is_empty());
        if mode.is_none() {
            mode = seg_mode;
        }
        let mut c = [0.0; 4];
        for (i, v) in c.iter_mut().enumerate() {
            match caps[i + 2].parse::<f64>() {
                Ok(x) if x.is_finite() => *v = x,
                _ => return InspectionVerdict::format_error(raw),
            }
        }
        boxes.push(RawBox(c));
    }
    let tail_ok = text[pos..].chars().all(|c| c.is_whitespace() || matches!(c, '.' | ',' | ';'));
    if boxes.is_empty() || !tail_ok {
        return InspectionVerdict::format_error(raw);
    }
    InspectionVerdict {
        classification: Classification::Defective,
        mode,
        boxes,
        raw_text: raw.to_string(),
    }
}

/// Scale pixel coordinates by the image size, clamp to [0, 1], order the
/// corners and drop zero-area boxes. A defective verdict left with no boxes
/// becomes a format error. Idempotent.
pub fn normalize_boxes(verdict: &InspectionVerdict, width: u32, height: u32) -> InspectionVerdict {
    if verdict.classification != Classification::Defective || width == 0 || height == 0 {
        return verdict.clone();
    }
    let (w, h) = (f64::from(width), f64::from(height));
    let boxes: Vec<RawBox> = verdict
        .boxes
        .iter()
        .filter_map(|b| {
            let mut c = b.0;
            for (i, v) in c.iter_mut().enumerate() {
                if *v > 1.0 {
                    *v /= if i % 2 == 0 { w } else { h };
                }
                *v = v.clamp(0.0, 1.0);
            }
            let (x1, x2) = (c[0].min(c[2]), c[0].max(c[2]));
            let (y1, y2) = (c[1].min(c[3]), c[1].max(c[3]));
            (x1 < x2 && y1 < y2).then_some(RawBox([x1, y1, x2, y2]))
        })
        .collect();
    if boxes.is_empty() {
        return InspectionVerdict::format_error(&verdict.raw_text);
    }
    InspectionVerdict {
        boxes,
        ..verdict.clone()
    }
}

/// How format errors enter the binary confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    /// Unparseable answers fail the part.
    #[default]
    ErrorAsDefective,
    ErrorAsNondefective,
    ErrorExcluded,
}

impl FromStr for ErrorPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "error_as_defective" => Ok(Self::ErrorAsDefective),
            "error_as_nondefective" | "error_as_non_defective" => Ok(Self::ErrorAsNondefective),
            "error_excluded" => Ok(Self::ErrorExcluded),
            _ => Err(format!(
                "unknown policy {s:?} (error-as-defective, error-as-nondefective, error-excluded)"
            )),
        }
    }
}

impl fmt::Display for ErrorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ErrorAsDefective => "error-as-defective",
            Self::ErrorAsNondefective => "error-as-nondefective",
            Self::ErrorExcluded => "error-excluded",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricLabel {
    Positive,
    Negative,
    Excluded,
}

pub fn classify_for_metrics(verdict: &InspectionVerdict, policy: ErrorPolicy) -> MetricLabel {
    match verdict.classification {
        Classification::NonDefective => MetricLabel::Negative,
        Classification::Defective => MetricLabel::Positive,
        Classification::FormatError => match policy {
            ErrorPolicy::ErrorAsDefective => MetricLabel::Positive,
            ErrorPolicy::ErrorAsNondefective => MetricLabel::Negative,
            ErrorPolicy::ErrorExcluded => MetricLabel::Excluded,
        },
    }
}
