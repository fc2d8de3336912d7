//! Qualitative overlays: predicted boxes with the mode label, the
//! ground-truth mask outline, and a caption for `None` or unparseable output.

use std::path::{Path, PathBuf};

use image::{DynamicImage, Rgb, RgbImage};
use log::warn;

use crate::corpus::{read_binary_mask, BBox, CorpusError};
use crate::metrics::BinaryMask;
use crate::runner::PredictionRecord;
use crate::verdict::Classification;

const BOX_COLOR: Rgb<u8> = Rgb([230, 30, 30]);
const MASK_COLOR: Rgb<u8> = Rgb([40, 220, 60]);
const TEXT_COLOR: Rgb<u8> = Rgb([255, 255, 255]);
const TEXT_BG: Rgb<u8> = Rgb([0, 0, 0]);

#[derive(Debug, thiserror::Error)]
pub enum OverlayError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("failed to write {path}: {message}")]
    Write { path: PathBuf, message: String },
}

/// What to draw on one image.
#[derive(Debug, Clone, Default)]
pub struct OverlaySpec<'a> {
    pub boxes: Vec<BBox>,
    pub label: Option<&'a str>,
    /// Drawn in the top-left corner, e.g. `None` or `FORMAT ERROR`.
    pub caption: Option<&'a str>,
    pub mask: Option<&'a BinaryMask>,
}

fn thickness(w: u32, h: u32) -> u32 {
    (w.min(h) / 150).clamp(1, 6)
}

fn text_scale(w: u32, h: u32) -> u32 {
    (w.min(h) / 200).clamp(1, 4)
}

fn put(img: &mut RgbImage, x: u32, y: u32, c: Rgb<u8>) {
    if x < img.width() && y < img.height() {
        img.put_pixel(x, y, c);
    }
}

/// Outline of a half-open pixel span, `t` pixels wide, drawn inwards.
fn draw_rect(img: &mut RgbImage, (x0, y0, x1, y1): (u32, u32, u32, u32), color: Rgb<u8>, t: u32) {
    if x1 <= x0 || y1 <= y0 {
        return;
    }
    let (xl, yl) = (x1 - 1, y1 - 1);
    for k in 0..t {
        for x in x0..x1 {
            put(img, x, (y0 + k).min(yl), color);
            put(img, x, yl.saturating_sub(k).max(y0), color);
        }
        for y in y0..y1 {
            put(img, (x0 + k).min(xl), y, color);
            put(img, xl.saturating_sub(k).max(x0), y, color);
        }
    }
}

/// Bitmap text on a filled background; `(x, y)` is the top-left corner.
fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str, scale: u32) {
    use font8x8::UnicodeFonts;
    let glyph_px = 8 * scale;
    let pad = scale;
    let width = text.chars().count() as u32 * glyph_px + 2 * pad;
    for dy in 0..glyph_px + 2 * pad {
        for dx in 0..width {
            put(img, x + dx, y + dy, TEXT_BG);
        }
    }
    for (i, ch) in text.chars().enumerate() {
        let glyph = font8x8::BASIC_FONTS.get(ch).or_else(|| font8x8::BASIC_FONTS.get('?')).unwrap_or([0; 8]);
        let gx = x + pad + i as u32 * glyph_px;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8u32 {
                if bits & (1 << col) == 0 {
                    continue;
                }
                for sy in 0..scale {
                    for sx in 0..scale {
                        put(img, gx + col * scale + sx, y + pad + row as u32 * scale + sy, TEXT_COLOR);
                    }
                }
            }
        }
    }
}

/// Positive pixels with a negative 4-neighbour or on the image border.
fn draw_mask_outline(img: &mut RgbImage, mask: &BinaryMask) {
    let (w, h) = (mask.width(), mask.height());
    if (w, h) != img.dimensions() {
        warn!("mask {w}x{h} does not match image {:?}; outline skipped", img.dimensions());
        return;
    }
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1);
            if edge {
                img.put_pixel(x, y, MASK_COLOR);
            }
        }
    }
}

pub fn render_overlay(base: &DynamicImage, spec: &OverlaySpec<'_>) -> RgbImage {
    let mut img = base.to_rgb8();
    let (w, h) = img.dimensions();
    let (t, s) = (thickness(w, h), text_scale(w, h));
    if let Some(mask) = spec.mask {
        draw_mask_outline(&mut img, mask);
    }
    for b in &spec.boxes {
        let span = b.pixel_span(w, h);
        draw_rect(&mut img, span, BOX_COLOR, t);
        if let Some(label) = spec.label {
            let text_h = 8 * s + 2 * s;
            // above the box, or just inside it when the box touches the top edge
            let ty = if span.1 >= text_h { span.1 - text_h } else { span.1 + t };
            draw_text(&mut img, span.0, ty, label, s);
        }
    }
    if let Some(caption) = spec.caption {
        draw_text(&mut img, 0, 0, caption, s);
    }
    img
}

/// File name for an overlay: the image id with path separators flattened.
pub fn overlay_file_name(image_id: &str) -> String {
    format!("{}.png", image_id.replace(['/', '\\'], "__"))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OverlaySummary {
    pub written: usize,
    /// Rows with no verdict (inference failures).
    pub skipped: usize,
}

/// One PNG per prediction row under `out_dir`.
pub fn write_prediction_overlays(records: &[PredictionRecord], out_dir: &Path) -> Result<OverlaySummary, OverlayError> {
    std::fs::create_dir_all(out_dir).map_err(|e| OverlayError::Write {
        path: out_dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut summary = OverlaySummary::default();
    for rec in records {
        let Some(verdict) = &rec.verdict else {
            summary.skipped += 1;
            continue;
        };
        let base = image::open(&rec.image_path).map_err(|e| CorpusError::Image {
            path: rec.image_path.clone(),
            message: e.to_string(),
        })?;
        let mask = rec
            .mask_path
            .as_ref()
            .map(|p| read_binary_mask(p, base.width(), base.height()))
            .transpose()?;
        let spec = OverlaySpec {
            boxes: verdict.bboxes(),
            label: verdict.mode.as_deref(),
            caption: match verdict.classification {
                Classification::NonDefective => Some("None"),
                Classification::FormatError => Some("FORMAT ERROR"),
                Classification::Defective => None,
            },
            mask: mask.as_ref(),
        };
        let path = out_dir.join(overlay_file_name(&rec.image_id));
        render_overlay(&base, &spec).save(&path).map_err(|e| OverlayError::Write {
            path: path.clone(),
            message: e.to_string(),
        })?;
        summary.written += 1;
    }
    Ok(summary)
}
