//! Corpus curation: near-duplicate removal and unclear-image flagging.

use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::{CorpusError, ImageRecord, Result};

pub const DEFAULT_HAMMING_THRESHOLD: u32 = 8;

/// 64-bit difference hash: 9x8 grayscale thumbnail, one bit per horizontal
/// neighbour pair, set when brightness increases to the right.
pub fn dhash(img: &DynamicImage) -> u64 {
    let thumb = image::imageops::resize(&img.to_luma8(), 9, 8, FilterType::Triangle);
    let mut hash = 0u64;
    for y in 0..8 {
        for x in 0..8 {
            let left = thumb.get_pixel(x, y).0[0];
            let right = thumb.get_pixel(x + 1, y).0[0];
            hash = (hash << 1) | u64::from(left < right);
        }
    }
    hash
}

pub fn dhash_file(path: &Path) -> Result<u64> {
    let img = image::open(path).map_err(|e| CorpusError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(dhash(&img))
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Removal {
    pub removed_id: String,
    pub kept_id: String,
    pub distance: u32,
}

#[derive(Debug, Clone, Default)]
pub struct DedupOutcome {
    pub kept: Vec<ImageRecord>,
    pub removed: Vec<Removal>,
    /// Ids whose image could not be decoded; they are in neither list.
    pub skipped: Vec<String>,
}

/// Drop near-duplicates, first-seen wins.
///
/// A record is removed when its hash is within `hamming_threshold` of an
/// already kept record; it is paired with the closest kept record (earliest on
/// ties). Every pair of kept records ends up strictly farther apart than the
/// threshold.
pub fn dedup_by_perceptual_hash(records: &[ImageRecord], hamming_threshold: u32) -> DedupOutcome {
    let hashes: Vec<Option<u64>> = records
        .par_iter()
        .map(|r| match dhash_file(&r.image_path) {
            Ok(h) => Some(h),
            Err(e) => {
                warn!("skipping {}: {e}", r.id);
                None
            }
        })
        .collect();

    let mut out = DedupOutcome::default();
    let mut kept_hashes: Vec<u64> = Vec::new();
    for (rec, hash) in records.iter().zip(hashes) {
        let Some(hash) = hash else {
            out.skipped.push(rec.id.clone());
            continue;
        };
        let nearest = kept_hashes
            .iter()
            .enumerate()
            .map(|(i, &k)| (hamming(hash, k), i))
            .min();
        match nearest {
            Some((distance, i)) if distance <= hamming_threshold => out.removed.push(Removal {
                removed_id: rec.id.clone(),
                kept_id: out.kept[i].id.clone(),
                distance,
            }),
            _ => {
                kept_hashes.push(hash);
                out.kept.push(rec.clone());
            }
        }
    }
    out
}

/// Thresholds for flagging possibly unclear images for manual review.
#[derive(Debug, Clone, Copy)]
pub struct UnclearCriteria {
    pub min_file_bytes: u64,
    pub min_side: u32,
    pub max_aspect_ratio: f64,
}

impl Default for UnclearCriteria {
    fn default() -> Self {
        Self {
            min_file_bytes: 2048,
            min_side: 64,
            max_aspect_ratio: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnclearCandidate {
    pub id: String,
    pub reasons: Vec<String>,
}

/// Flag tiny files, tiny images and extreme aspect ratios. Nothing is deleted;
/// the output is a review list.
pub fn flag_unclear(records: &[ImageRecord], criteria: &UnclearCriteria) -> Vec<UnclearCandidate> {
    records
        .iter()
        .filter_map(|r| {
            let mut reasons = Vec::new();
            match std::fs::metadata(&r.image_path) {
                Ok(m) if m.len() < criteria.min_file_bytes => {
                    reasons.push(format!("file is {} bytes (< {})", m.len(), criteria.min_file_bytes))
                }
                Ok(_) => {}
                Err(e) => reasons.push(format!("unreadable: {e}")),
            }
            let (w, h) = (r.width, r.height);
            if w.min(h) < criteria.min_side {
                reasons.push(format!("{w}x{h} is smaller than {} px on a side", criteria.min_side));
            }
            if w > 0 && h > 0 {
                let aspect = f64::from(w.max(h)) / f64::from(w.min(h));
                if aspect > criteria.max_aspect_ratio {
                    reasons.push(format!("aspect ratio {aspect:.2} exceeds {}", criteria.max_aspect_ratio));
                }
            }
            (!reasons.is_empty()).then(|| UnclearCandidate {
                id: r.id.clone(),
                reasons,
            })
        })
        .collect()
}
