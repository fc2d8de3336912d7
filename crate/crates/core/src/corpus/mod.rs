//! Dataset records, VQA manifests and curation utilities.

mod curate;
mod layout;
mod vqa;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use curate::{
    dhash, dhash_file, dedup_by_perceptual_hash, flag_unclear, hamming, DedupOutcome, Removal,
    UnclearCandidate, UnclearCriteria, DEFAULT_HAMMING_THRESHOLD,
};
pub use layout::{load_custom_manifest, load_dataset, load_mvtec_layout, load_visa_layout, write_image_manifest, DatasetKind};
pub use vqa::{
    emit_vqa_manifest, ground_truth_answers, load_vqa_manifest, mask_bbox, read_binary_mask,
    vqa_records, write_vqa_manifest,
};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("dataset not found at {0}")]
    DatasetNotFound(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("duplicate image id {0}")]
    DuplicateId(String),
    #[error("record {id}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("mask {mask} is {mask_w}x{mask_h} but image {id} is {width}x{height}")]
    MaskDimensionMismatch {
        id: String,
        mask: PathBuf,
        mask_w: u32,
        mask_h: u32,
        width: u32,
        height: u32,
    },
    #[error("{path}:{line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },
    #[error("invalid bounding box {0:?}: need 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1")]
    InvalidBBox([f64; 4]),
    #[error("defective records without annotation: {}", .0.join(", "))]
    MissingAnnotations(Vec<String>),
    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Good,
    Defective,
}

impl Label {
    pub fn is_defective(self) -> bool {
        self == Label::Defective
    }
}

/// Non-fatal problems found while loading a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFlag {
    /// Defective image with no ground-truth mask on disk.
    MissingMask,
}

/// One dataset image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub category: String,
    pub split: Split,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect_type: Option<String>,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default)]
    pub width: u32,
    #[serde(default)]
    pub height: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<RecordFlag>,
}

impl ImageRecord {
    /// Product name used in prompts: the category with underscores as spaces.
    pub fn product(&self) -> String {
        product_name(&self.category)
    }

    pub(crate) fn check_label_invariants(&self) -> Result<()> {
        if self.label == Label::Good && (self.defect_type.is_some() || self.mask_path.is_some()) {
            return Err(CorpusError::InvalidRecord {
                id: self.id.clone(),
                message: "good record must not carry a defect type or mask".into(),
            });
        }
        Ok(())
    }
}

pub fn product_name(category: &str) -> String {
    category.replace('_', " ")
}

/// Normalized box, `0 <= x1 < x2 <= 1` and `0 <= y1 < y2 <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let ok = [x1, y1, x2, y2].iter().all(|v| v.is_finite())
            && 0.0 <= x1
            && x1 < x2
            && x2 <= 1.0
            && 0.0 <= y1
            && y1 < y2
            && y2 <= 1.0;
        if ok {
            Ok(Self { x1, y1, x2, y2 })
        } else {
            Err(CorpusError::InvalidBBox([x1, y1, x2, y2]))
        }
    }

    /// Convert a pixel-space box to normalized coordinates.
    pub fn from_pixels(x1: f64, y1: f64, x2: f64, y2: f64, width: u32, height: u32) -> Result<Self> {
        let (w, h) = (f64::from(width), f64::from(height));
        Self::new(x1 / w, y1 / h, x2 / w, y2 / h)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Half-open pixel span `[x0, x1) x [y0, y1)` covered on a `width` x `height` grid.
    pub fn pixel_span(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let sx = |v: f64| ((v * f64::from(width)).round() as u32).min(width);
        let sy = |v: f64| ((v * f64::from(height)).round() as u32).min(height);
        (sx(self.x1), sy(self.y1), sx(self.x2), sy(self.y2))
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = CorpusError;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.coords()
    }
}

/// Ground-truth or predicted answer in the VQA format.
///
/// Serialized as the string `"None"` or `{"mode": ..., "bbox": [x1, y1, x2, y2]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnswerRepr", into = "AnswerRepr")]
pub enum Answer {
    None,
    Defect { mode: String, bbox: BBox },
}

impl Answer {
    pub fn is_defect(&self) -> bool {
        matches!(self, Answer::Defect { .. })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AnswerRepr {
    Text(String),
    // raw coordinates so an invalid box reports its own error
    Defect { mode: String, bbox: [f64; 4] },
}

impl TryFrom<AnswerRepr> for Answer {
    type Error = String;

    fn try_from(r: AnswerRepr) -> std::result::Result<Self, String> {
        match r {
            AnswerRepr::Text(s) if s == "None" => Ok(Answer::None),
            AnswerRepr::Text(s) => Err(format!("answer must be \"None\" or an object, got {s:?}")),
            AnswerRepr::Defect { mode, bbox } => Ok(Answer::Defect {
                mode,
                bbox: BBox::try_from(bbox).map_err(|e| e.to_string())?,
            }),
        }
    }
}

impl From<Answer> for AnswerRepr {
    fn from(a: Answer) -> Self {
        match a {
            Answer::None => AnswerRepr::Text("None".into()),
            Answer::Defect { mode, bbox } => AnswerRepr::Defect {
                mode,
                bbox: bbox.coords(),
            },
        }
    }
}

/// One line of the fine-tuning / reference manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRecord {
    pub image_id: String,
    pub product: String,
    pub question: String,
    pub answer: Answer,
}

/// Loaded dataset with an id index. Immutable after construction.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    records: Vec<ImageRecord>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.check_label_invariants()?;
            if index.insert(r.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self { records, index })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted, de-duplicated category names.
    pub fn categories(&self) -> Vec<String> {
        let mut c: Vec<String> = self.records.iter().map(|r| r.category.clone()).collect();
        c.sort();
        c.dedup();
        c
    }

    pub fn test_records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.split == Split::Test)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Good => "good",
            Label::Defective => "defective",
        })
    }
}
