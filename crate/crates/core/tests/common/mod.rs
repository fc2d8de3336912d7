//! Synthetic MVTec-style dataset for integration tests.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};

pub const CATEGORIES: [&str; 3] = ["bottle", "metal_nut", "screw"];
pub const GOOD_PER_CATEGORY: usize = 5;
pub const DEFECTS: [&str; 2] = ["crack", "scratch"];
pub const SIDE: u32 = 32;

/// Defect rectangle for image `i`, as a half-open pixel span.
pub fn defect_span(i: usize) -> (u32, u32, u32, u32) {
    let x0 = 2 + (i as u32 * 5) % 16;
    let y0 = 4 + (i as u32 * 3) % 14;
    (x0, y0, x0 + 8, y0 + 6)
}

fn texture(cat: usize, i: usize) -> RgbImage {
    RgbImage::from_fn(SIDE, SIDE, |x, y| {
        let v = ((x * (cat as u32 + 3) + y * (i as u32 + 1)) % 200) as u8;
        Rgb([v, v.wrapping_add(20 * cat as u8), 255 - v])
    })
}

/// Writes 3 categories of 5 good and 5 defective test images (30 total),
/// with masks for the defective ones. Returns the dataset root.
pub fn write_mvtec(root: &Path) -> PathBuf {
    let data = root.join("mvtec");
    for (c, cat) in CATEGORIES.iter().enumerate() {
        let good = data.join(cat).join("test").join("good");
        fs::create_dir_all(&good).unwrap();
        for i in 0..GOOD_PER_CATEGORY {
            texture(c, i).save(good.join(format!("{i:03}.png"))).unwrap();
        }
        for (k, defect) in DEFECTS.iter().enumerate() {
            let dir = data.join(cat).join("test").join(defect);
            let gt = data.join(cat).join("ground_truth").join(defect);
            fs::create_dir_all(&dir).unwrap();
            fs::create_dir_all(&gt).unwrap();
            let n = if k == 0 { 3 } else { 2 };
            for i in 0..n {
                let idx = 10 + k * 3 + i;
                let (x0, y0, x1, y1) = defect_span(idx);
                let mut img = texture(c, idx);
                let mut mask = GrayImage::new(SIDE, SIDE);
                for y in y0..y1 {
                    for x in x0..x1 {
                        img.put_pixel(x, y, Rgb([0, 0, 0]));
                        mask.put_pixel(x, y, Luma([255]));
                    }
                }
                img.save(dir.join(format!("{i:03}.png"))).unwrap();
                mask.save(gt.join(format!("{i:03}_mask.png"))).unwrap();
            }
        }
    }
    data
}

/// Deterministic embeddings for every image id under `data`.
pub fn write_embeddings(data: &Path, out: &Path, dim: usize) {
    let records = fewshot_inspect::corpus::load_mvtec_layout(data).unwrap();
    let mut text = String::new();
    for (n, r) in records.iter().enumerate() {
        let vec: Vec<f64> = (0..dim)
            .map(|d| (((n * 7 + d * 13) % 17) as f64 - 8.0) / 4.0 + if r.label.is_defective() { 1.5 } else { 0.0 })
            .collect();
        text.push_str(&serde_json::json!({"id": r.id, "vec": vec}).to_string());
        text.push('\n');
    }
    fs::write(out, text).unwrap();
    let meta = serde_json::json!({
        "backbone": "synthetic",
        "layer": "none",
        "preprocessing": {"resize": SIDE},
        "dimension": dim,
    });
    fs::write(out.with_file_name("emb.meta.json"), meta.to_string()).unwrap();
}

/// Run config TOML for a mock run over the synthetic dataset.
pub fn mock_config(setting: &str, shot_plan: &str, out_dir: &str, extra_oracle: &str) -> String {
    format!(
        r#"
setting = "{setting}"
shot_plan = "{shot_plan}"
embeddings_path = "emb.jsonl"
output_dir = "{out_dir}"
seed = 7

[dataset]
kind = "mvtec"
root = "mvtec"

[gateway]
backend = "mock"

[oracle]
seed = 11
{extra_oracle}
"#
    )
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = write_mvtec(dir.path());
        write_embeddings(&data, &dir.path().join("emb.jsonl"), 8);
        Self { dir }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self, name: &str, toml: &str) -> PathBuf {
        let p = self.path().join(name);
        fs::write(&p, toml).unwrap();
        p
    }
}
