//! VQA manifest reading/writing and ground-truth answer derivation.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use image::imageops::FilterType;
use rayon::prelude::*;

use super::{io_err, Answer, BBox, CorpusError, ImageRecord, Label, Result, VqaRecord};
use crate::metrics::BinaryMask;
use crate::prompting::build_question;

/// Read a JSON-lines VQA manifest, validating every line.
pub fn load_vqa_manifest(path: &Path) -> Result<Vec<VqaRecord>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CorpusError::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: VqaRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let expected = build_question(&rec.product).map_err(|e| bad(e.to_string()))?;
        if rec.question != expected {
            return Err(bad(format!("question does not match the template for product {:?}", rec.product)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_vqa_manifest(records: &[VqaRecord], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("vqa record serializes")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Build VQA records for `records`. Every defective record needs an
/// annotation; good records always answer `None`.
pub fn vqa_records(
    records: &[ImageRecord],
    annotations: &BTreeMap<String, (String, BBox)>,
) -> Result<Vec<VqaRecord>> {
    let missing: Vec<String> = records
        .iter()
        .filter(|r| r.label == Label::Defective && !annotations.contains_key(&r.id))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingAnnotations(missing));
    }
    records
        .iter()
        .map(|r| {
            let product = r.product();
            let question = build_question(&product).map_err(|e| CorpusError::InvalidRecord {
                id: r.id.clone(),
                message: e.to_string(),
            })?;
            let answer = match r.label {
                Label::Good => Answer::None,
                Label::Defective => {
                    let (mode, bbox) = annotations[&r.id].clone();
                    Answer::Defect { mode, bbox }
                }
            };
            Ok(VqaRecord {
                image_id: r.id.clone(),
                product,
                question,
                answer,
            })
        })
        .collect()
}

pub fn emit_vqa_manifest(
    records: &[ImageRecord],
    annotations: &BTreeMap<String, (String, BBox)>,
    path: &Path,
) -> Result<Vec<VqaRecord>> {
    let vqa = vqa_records(records, annotations)?;
    write_vqa_manifest(&vqa, path)?;
    Ok(vqa)
}

/// Load a mask as binary (any non-zero pixel is defective), resized with
/// nearest-neighbour to `width` x `height` when the sizes differ.
pub fn read_binary_mask(path: &Path, width: u32, height: u32) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| CorpusError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut gray = img.to_luma8();
    if gray.dimensions() != (width, height) {
        gray = image::imageops::resize(&gray, width, height, FilterType::Nearest);
    }
    Ok(BinaryMask::new(
        width,
        height,
        gray.pixels().map(|p| p.0[0] > 0).collect(),
    ))
}

/// Tight normalized bounding box of the positive pixels, if any.
pub fn mask_bbox(mask: &BinaryMask) -> Option<BBox> {
    let (w, h) = (mask.width(), mask.height());
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                any = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    any.then(|| BBox::from_pixels(x0.into(), y0.into(), x1.into(), y1.into(), w, h).expect("mask bbox is valid"))
}

/// Ground-truth answers derived from labels and masks.
///
/// Good images answer `None`; defective images answer their defect type with
/// the bounding box of their mask. Defective images without a usable mask are
/// left out of the map and returned in the second element.
pub fn ground_truth_answers(records: &[ImageRecord]) -> Result<(BTreeMap<String, Answer>, Vec<String>)> {
    let derived: Vec<(String, Option<Answer>)> = records
        .par_iter()
        .map(|r| -> Result<(String, Option<Answer>)> {
            let answer = match (r.label, &r.mask_path) {
                (Label::Good, _) => Some(Answer::None),
                (Label::Defective, Some(mask)) => {
                    let m = read_binary_mask(mask, r.width, r.height)?;
                    mask_bbox(&m).map(|bbox| Answer::Defect {
                        mode: r.defect_type.clone().unwrap_or_else(|| "defect".into()),
                        bbox,
                    })
                }
                (Label::Defective, None) => None,
            };
            Ok((r.id.clone(), answer))
        })
        .collect::<Result<_>>()?;
    let mut answers = BTreeMap::new();
    let mut unknown = Vec::new();
    for (id, a) in derived {
        match a {
            Some(a) => {
                answers.insert(id, a);
            }
            None => unknown.push(id),
        }
    }
    Ok((answers, unknown))
}
