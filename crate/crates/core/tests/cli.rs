mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::Fixture;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewshot-inspect"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cli(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn run_metrics_and_table() {
    let fx = Fixture::new();
    let d = fx.path();
    fx.config("ours.toml", &common::mock_config("icl_ours", "1-neg", "ours", "flip_probability = 0.2"));
    fx.config("zero.toml", &common::mock_config("no_icl", "0", "zero", "respond = \"always_defect\""));
    let stdout = ok(d, &["run", "--config", "ours.toml"]);
    assert!(stdout.starts_with("| Settings | ICL (Ours) |  |\n"), "{stdout}");
    ok(d, &["run", "--config", "zero.toml"]);

    let replayed = ok(
        d,
        &["metrics", "--predictions", "ours/predictions.jsonl", "--dataset-root", "mvtec", "--out", "again"],
    );
    assert_eq!(replayed, fs::read_to_string(d.join("ours/report.md")).unwrap());
    assert_eq!(fs::read(d.join("again/report.json")).unwrap(), fs::read(d.join("ours/report.json")).unwrap());

    let table = ok(d, &["table", "zero/report.json", "ours/report.json"]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "| Settings | w/o ICL |  | ICL (Ours) |  |");
    assert_eq!(lines[2], "| Product Name | F1-score | MCC | F1-score | MCC |");
    assert_eq!(lines[3].split(" | ").next(), Some("| Bottle"));
    assert_eq!(lines[4].split(" | ").next(), Some("| Metal Nut"));
    assert!(lines.last().unwrap().starts_with("| All category | 0.667 | N/A | "));

    let by_plan = ok(d, &["table", "--columns", "shot-plan", "ours/report.json"]);
    assert!(by_plan.starts_with("| Settings | 1-neg |\n"));
}

#[test]
fn metrics_policy_changes_format_error_handling() {
    let fx = Fixture::new();
    let d = fx.path();
    fx.config("r.toml", &common::mock_config("no_icl", "0", "out", ""));
    ok(d, &["run", "--config", "r.toml"]);
    // turn every good-image answer into unparseable text
    let text = fs::read_to_string(d.join("out/predictions.jsonl")).unwrap();
    let garbled: String = text
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            if v["image_id"].as_str().unwrap().contains("/good/") {
                v["verdict"]["classification"] = "format_error".into();
            }
            format!("{v}\n")
        })
        .collect();
    fs::write(d.join("garbled.jsonl"), garbled).unwrap();
    let base = ["metrics", "--predictions", "garbled.jsonl", "--dataset-root", "mvtec", "--no-pixel-auroc"];
    let as_defect = ok(d, &[&base[..], &["--policy", "error-as-defective"]].concat());
    assert!(as_defect.contains("| All category | 0.667 | N/A |"), "{as_defect}");
    let as_none = ok(d, &[&base[..], &["--policy", "error-as-nondefective"]].concat());
    assert!(as_none.contains("| All category | 1.000 | 1.000 |"), "{as_none}");
    let excluded = ok(d, &[&base[..], &["--policy", "error-excluded"]].concat());
    assert!(excluded.contains("| All category | 1.000 | N/A |"), "{excluded}");
}

#[test]
fn select_prints_chosen_examples() {
    let fx = Fixture::new();
    let d = fx.path();
    fx.config("r.toml", &common::mock_config("icl_ours", "2-pos-neg", "out", ""));
    let out = ok(d, &["select", "--config", "r.toml", "--query", "bottle/test/good/000"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let chosen = v["chosen"].as_array().unwrap();
    assert_eq!(chosen.len(), 2);
    assert!(chosen[0]["image_id"].as_str().unwrap().starts_with("bottle/test/crack/")
        || chosen[0]["image_id"].as_str().unwrap().starts_with("bottle/test/scratch/"));
    assert!(chosen[1]["image_id"].as_str().unwrap().starts_with("bottle/test/good/"));

    let out = ok(
        d,
        &["select", "--config", "r.toml", "--query", "screw/test/good/001", "--setting", "icl-rices", "--shots", "1-neg"],
    );
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["strategy"], "rices");
    assert_eq!(v["chosen"].as_array().unwrap().len(), 1);

    let bad = cli(d, &["select", "--config", "r.toml", "--query", "nope/1"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("not in the corpus"));
}

#[test]
fn export_and_curation_commands() {
    let fx = Fixture::new();
    let d = fx.path();
    ok(d, &["export-images", "--dataset-root", "mvtec", "--out", "images.jsonl"]);
    let images = fs::read_to_string(d.join("images.jsonl")).unwrap();
    assert_eq!(images.lines().count(), 30);
    let custom = ok(d, &["export-images", "--dataset-root", "images.jsonl", "--dataset-kind", "custom", "--out", "again.jsonl"]);
    assert!(custom.is_empty());
    assert_eq!(fs::read_to_string(d.join("again.jsonl")).unwrap(), images);

    ok(d, &["curate", "emit-vqa", "--dataset-root", "mvtec", "--out", "vqa.jsonl"]);
    let vqa = fewshot_inspect::corpus::load_vqa_manifest(&d.join("vqa.jsonl")).unwrap();
    assert_eq!(vqa.len(), 30);
    assert_eq!(vqa.iter().filter(|r| r.answer.is_defect()).count(), 15);

    let removed = ok(d, &["curate", "dedup", "--dataset-root", "mvtec", "--threshold", "0", "--out", "kept.jsonl"]);
    let removed: Vec<serde_json::Value> = serde_json::from_str(&removed).unwrap();
    let kept = fs::read_to_string(d.join("kept.jsonl")).unwrap().lines().count();
    assert_eq!(kept + removed.len(), 30);

    let flagged = ok(d, &["curate", "flag-unclear", "--dataset-root", "mvtec"]);
    let flagged: Vec<serde_json::Value> = serde_json::from_str(&flagged).unwrap();
    // 32x32 synthetic images are below the minimum side
    assert_eq!(flagged.len(), 30);
}

#[test]
fn bad_config_fails_cleanly() {
    let fx = Fixture::new();
    let d = fx.path();
    fx.config("bad.toml", "setting = \"icl_ours\"\n");
    let out = cli(d, &["run", "--config", "bad.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid run config"));
}
