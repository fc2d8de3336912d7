use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use fewshot_inspect::corpus::{
    dedup_by_perceptual_hash, flag_unclear, ground_truth_answers, load_dataset, vqa_records, write_image_manifest,
    write_vqa_manifest, Answer, BBox, Corpus, DatasetKind, UnclearCriteria, DEFAULT_HAMMING_THRESHOLD,
};
use fewshot_inspect::metrics::AurocScope;
use fewshot_inspect::overlay::write_prediction_overlays;
use fewshot_inspect::report::{render_comparison, render_run_report, ColumnKey};
use fewshot_inspect::runner::{
    self, read_predictions, read_report, replay, write_report, ReplayOptions, RunConfig, Setting,
};
use fewshot_inspect::selector::ShotPlan;
use fewshot_inspect::verdict::ErrorPolicy;

type CliResult<T = ()> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "fewshot-inspect", version, about = "Few-shot visual inspection with a VLM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DatasetArgs {
    /// Dataset root (or manifest file for `custom`).
    #[arg(long)]
    dataset_root: PathBuf,
    #[arg(long, default_value = "mvtec")]
    dataset_kind: DatasetKind,
}

impl DatasetArgs {
    fn corpus(&self) -> CliResult<Corpus> {
        Ok(Corpus::new(load_dataset(self.dataset_kind, &self.dataset_root)?)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    MicroPooled,
    PerImageMean,
}

impl From<Scope> for AurocScope {
    fn from(s: Scope) -> Self {
        match s {
            Scope::MicroPooled => AurocScope::MicroPooled,
            Scope::PerImageMean => AurocScope::PerImageMean,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Columns {
    Setting,
    ShotPlan,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a predictions log again.
    Metrics {
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long, default_value_t = ErrorPolicy::default())]
        policy: ErrorPolicy,
        #[arg(long)]
        no_pixel_auroc: bool,
        #[arg(long, value_enum, default_value = "micro-pooled")]
        auroc_scope: Scope,
        /// Also write report.json and report.md here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw predicted boxes and mask outlines for a predictions log.
    Overlays {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Show the examples chosen for one query image.
    Select {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        query: String,
        /// Overrides the config's setting.
        #[arg(long)]
        setting: Option<Setting>,
        /// Overrides the config's shot plan.
        #[arg(long)]
        shots: Option<ShotPlan>,
    },
    /// Combine report.json files into one table.
    Table {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "setting")]
        columns: Columns,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset curation.
    #[command(subcommand)]
    Curate(CurateCommand),
    /// Write the image manifest consumed by the embedding extractor.
    ExportImages {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CurateCommand {
    /// Remove perceptual near-duplicates, first seen wins.
    Dedup {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long, default_value_t = DEFAULT_HAMMING_THRESHOLD)]
        threshold: u32,
        /// Image manifest of the kept records.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List images that look unclear and need a manual look.
    FlagUnclear {
        #[command(flatten)]
        dataset: DatasetArgs,
    },
    /// Write a VQA manifest with answers derived from masks.
    EmitVqa {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        out: PathBuf,
        /// Drop defective images without a mask instead of failing.
        #[arg(long)]
        skip_unannotated: bool,
    },
}

fn print_json(value: &impl serde::Serialize) -> CliResult {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_run(config: &Path) -> CliResult {
    let cfg = RunConfig::load(config)?;
    let outcome = runner::run(&cfg)?;
    print!("{}", render_run_report(&outcome.report));
    info!("outputs in {}", cfg.output_dir.display());
    if outcome.report.degraded {
        warn!("run is degraded: {} failures", outcome.report.failures);
    }
    Ok(())
}

fn cmd_metrics(
    predictions: &Path,
    dataset: &DatasetArgs,
    policy: ErrorPolicy,
    pixel: Option<AurocScope>,
    out: Option<&Path>,
) -> CliResult {
    let corpus = dataset.corpus()?;
    let rows = read_predictions(predictions)?;
    let report = replay(&rows, &corpus, &ReplayOptions { policy, pixel_auroc: pixel })?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_report(dir, &report)?;
    }
    print!("{}", render_run_report(&report));
    Ok(())
}

fn cmd_select(config: &Path, query: &str, setting: Option<Setting>, shots: Option<ShotPlan>) -> CliResult {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = setting {
        cfg.setting = s;
    }
    if let Some(p) = shots {
        cfg.shot_plan = p;
    }
    cfg.validate()?;
    if cfg.setting.strategy().is_none() {
        return Err(format!("setting {} uses no examples", cfg.setting).into());
    }
    let prepared = runner::prepare(&cfg)?;
    let result = runner::select_examples(&cfg, &prepared, query)?;
    print_json(&result)
}

fn cmd_table(reports: &[PathBuf], columns: Columns, out: Option<&Path>) -> CliResult {
    let reports = reports.iter().map(|p| read_report(p)).collect::<Result<Vec<_>, _>>()?;
    let key = match columns {
        Columns::Setting => ColumnKey::Setting,
        Columns::ShotPlan => ColumnKey::ShotPlan,
    };
    let md = render_comparison(&reports, key);
    match out {
        Some(p) => fs::write(p, &md)?,
        None => print!("{md}"),
    }
    Ok(())
}

fn cmd_curate(cmd: &CurateCommand) -> CliResult {
    match cmd {
        CurateCommand::Dedup { dataset, threshold, out } => {
            let records = load_dataset(dataset.dataset_kind, &dataset.dataset_root)?;
            let outcome = dedup_by_perceptual_hash(&records, *threshold);
            for id in &outcome.skipped {
                warn!("could not hash {id}");
            }
            if let Some(p) = out {
                write_image_manifest(&outcome.kept, p)?;
            }
            eprintln!(
                "kept {}, removed {}, skipped {}",
                outcome.kept.len(),
                outcome.removed.len(),
                outcome.skipped.len()
            );
            print_json(&outcome.removed)
        }
        CurateCommand::FlagUnclear { dataset } => {
            let records = load_dataset(dataset.dataset_kind, &dataset.dataset_root)?;
            print_json(&flag_unclear(&records, &UnclearCriteria::default()))
        }
        CurateCommand::EmitVqa {
            dataset,
            out,
            skip_unannotated,
        } => {
            let mut records = load_dataset(dataset.dataset_kind, &dataset.dataset_root)?;
            let (answers, unannotated) = ground_truth_answers(&records)?;
            if *skip_unannotated && !unannotated.is_empty() {
                warn!("skipping {} defective images without a mask", unannotated.len());
                records.retain(|r| !unannotated.contains(&r.id));
            }
            let annotations: BTreeMap<String, (String, BBox)> = answers
                .into_iter()
                .filter_map(|(id, a)| match a {
                    Answer::Defect { mode, bbox } => Some((id, (mode, bbox))),
                    Answer::None => None,
                })
                .collect();
            let vqa = vqa_records(&records, &annotations)?;
            write_vqa_manifest(&vqa, out)?;
            eprintln!("wrote {} records to {}", vqa.len(), out.display());
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Metrics {
            predictions,
            dataset,
            policy,
            no_pixel_auroc,
            auroc_scope,
            out,
        } => cmd_metrics(
            &predictions,
            &dataset,
            policy,
            (!no_pixel_auroc).then(|| auroc_scope.into()),
            out.as_deref(),
        ),
        Command::Overlays { predictions, out } => {
            let summary = write_prediction_overlays(&read_predictions(&predictions)?, &out)?;
            eprintln!("wrote {} overlays ({} rows without a verdict)", summary.written, summary.skipped);
            Ok(())
        }
        Command::Select {
            config,
            query,
            setting,
            shots,
        } => cmd_select(&config, &query, setting, shots),
        Command::Table { reports, columns, out } => cmd_table(&reports, columns, out.as_deref()),
        Command::Curate(cmd) => cmd_curate(&cmd),
        Command::ExportImages { dataset, out } => {
            let records = load_dataset(dataset.dataset_kind, &dataset.dataset_root)?;
            write_image_manifest(&records, &out)?;
            eprintln!("wrote {} records to {}", records.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

