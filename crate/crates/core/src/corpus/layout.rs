//! Dataset directory layouts (MVTec AD, VisA, and a JSON-lines manifest).

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{io_err, CorpusError, ImageRecord, Label, RecordFlag, Result, Split};

const IMAGE_EXTS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Mvtec,
    Visa,
    Custom,
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mvtec" => Ok(Self::Mvtec),
            "visa" => Ok(Self::Visa),
            "custom" => Ok(Self::Custom),
            other => Err(format!("unknown dataset kind {other:?} (mvtec, visa, custom)")),
        }
    }
}

pub fn load_dataset(kind: DatasetKind, root: &Path) -> Result<Vec<ImageRecord>> {
    match kind {
        DatasetKind::Mvtec => load_mvtec_layout(root),
        DatasetKind::Visa => load_visa_layout(root),
        DatasetKind::Custom => load_custom_manifest(root),
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn find_mask(gt_dir: &Path, stem: &str) -> Option<PathBuf> {
    IMAGE_EXTS
        .iter()
        .map(|ext| gt_dir.join(format!("{stem}_mask.{ext}")))
        .find(|p| p.is_file())
}

/// Load the test split of an MVTec AD style tree.
///
/// ```text
/// root/<category>/test/good/000.png
/// root/<category>/test/<defect>/000.png
/// root/<category>/ground_truth/<defect>/000_mask.png
/// ```
///
/// Ids are `<category>/test/<subdir>/<stem>`.
pub fn load_mvtec_layout(root: &Path) -> Result<Vec<ImageRecord>> {
    if !root.is_dir() {
        return Err(CorpusError::DatasetNotFound(root.to_path_buf()));
    }
    let mut records = Vec::new();
    for cat_dir in sorted_entries(root)? {
        let test_dir = cat_dir.join("test");
        if !test_dir.is_dir() {
            continue;
        }
        let category = cat_dir.file_name().unwrap().to_string_lossy().into_owned();
        for sub in sorted_entries(&test_dir)? {
            if !sub.is_dir() {
                continue;
            }
            let subname = sub.file_name().unwrap().to_string_lossy().into_owned();
            let label = if subname == "good" { Label::Good } else { Label::Defective };
            let gt_dir = cat_dir.join("ground_truth").join(&subname);
            for img in sorted_entries(&sub)?.into_iter().filter(|p| is_image(p)) {
                let stem = file_stem(&img);
                let mut rec = ImageRecord {
                    id: format!("{category}/test/{subname}/{stem}"),
                    category: category.clone(),
                    split: Split::Test,
                    label,
                    defect_type: None,
                    image_path: img,
                    mask_path: None,
                    width: 0,
                    height: 0,
                    flags: vec![],
                };
                if label == Label::Defective {
                    rec.defect_type = Some(subname.clone());
                    rec.mask_path = find_mask(&gt_dir, &stem);
                }
                records.push(rec);
            }
        }
    }
    finalize(records)
}

#[derive(Debug, Deserialize)]
struct VisaRow {
    object: String,
    split: String,
    label: String,
    image: String,
    #[serde(default)]
    mask: String,
}

/// Load the test split of a VisA tree through its `split_csv/1cls.csv` index.
///
/// Rows are normalized into the same record shape as MVTec; anomalous images
/// get defect type `anomaly` since VisA does not name defect classes there.
pub fn load_visa_layout(root: &Path) -> Result<Vec<ImageRecord>> {
    let csv_path = root.join("split_csv").join("1cls.csv");
    if !root.is_dir() || !csv_path.is_file() {
        return Err(CorpusError::DatasetNotFound(root.to_path_buf()));
    }
    let csv_err = |e: csv::Error| CorpusError::Csv {
        path: csv_path.clone(),
        message: e.to_string(),
    };
    let mut reader = csv::Reader::from_path(&csv_path).map_err(csv_err)?;
    let mut records = Vec::new();
    for row in reader.deserialize::<VisaRow>() {
        let row = row.map_err(csv_err)?;
        if row.split != "test" {
            continue;
        }
        let label = match row.label.as_str() {
            "normal" => Label::Good,
            "anomaly" => Label::Defective,
            other => {
                return Err(CorpusError::Csv {
                    path: csv_path.clone(),
                    message: format!("unknown label {other:?}"),
                })
            }
        };
        let image_path = root.join(&row.image);
        let stem = file_stem(&image_path);
        let mask_path = (label == Label::Defective && !row.mask.is_empty())
            .then(|| root.join(&row.mask))
            .filter(|p| p.is_file());
        records.push(ImageRecord {
            id: format!("{}/test/{}/{}", row.object, row.label, stem),
            category: row.object,
            split: Split::Test,
            label,
            defect_type: (label == Label::Defective).then(|| "anomaly".to_string()),
            image_path,
            mask_path,
            width: 0,
            height: 0,
            flags: vec![],
        });
    }
    finalize(records)
}

/// Load a JSON-lines manifest of image records.
///
/// Relative paths resolve against the manifest's directory; zero or missing
/// width/height are read from the image header.
pub fn load_custom_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    if !path.is_file() {
        return Err(CorpusError::DatasetNotFound(path.to_path_buf()));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: ImageRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.image_path.is_relative() {
            rec.image_path = base.join(&rec.image_path);
        }
        if let Some(m) = rec.mask_path.as_mut().filter(|m| m.is_relative()) {
            *m = base.join(&*m);
        }
        records.push(rec);
    }
    finalize(records)
}

/// Write records as a JSON-lines image manifest (the format `load_custom_manifest`
/// reads and the embedding extractor consumes).
pub fn write_image_manifest(records: &[ImageRecord], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| CorpusError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Fill dimensions, pair-check masks and enforce record invariants.
fn finalize(mut records: Vec<ImageRecord>) -> Result<Vec<ImageRecord>> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in &records {
        r.check_label_invariants()?;
        if !seen.insert(r.id.as_str()) {
            return Err(CorpusError::DuplicateId(r.id.clone()));
        }
    }
    records.par_iter_mut().try_for_each(|r| -> Result<()> {
        if r.width == 0 || r.height == 0 {
            (r.width, r.height) = dimensions(&r.image_path)?;
        }
        match &r.mask_path {
            Some(mask) => {
                if !mask.is_file() {
                    return Err(CorpusError::InvalidRecord {
                        id: r.id.clone(),
                        message: format!("mask {} does not exist", mask.display()),
                    });
                }
                let (mw, mh) = dimensions(mask)?;
                if (mw, mh) != (r.width, r.height) {
                    return Err(CorpusError::MaskDimensionMismatch {
                        id: r.id.clone(),
                        mask: mask.clone(),
                        mask_w: mw,
                        mask_h: mh,
                        width: r.width,
                        height: r.height,
                    });
                }
            }
            None if r.label == Label::Defective => {
                if !r.flags.contains(&RecordFlag::MissingMask) {
                    r.flags.push(RecordFlag::MissingMask);
                }
            }
            None => {}
        }
        Ok(())
    })?;
    for r in records.iter().filter(|r| r.flags.contains(&RecordFlag::MissingMask)) {
        warn!("defective image {} has no ground-truth mask", r.id);
    }
    Ok(records)
}
