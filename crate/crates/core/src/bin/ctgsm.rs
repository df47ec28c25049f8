use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ctgsm::classifier::{Classifier, ClassifierSnapshot, LossKind, Mode};
use ctgsm::data::{load_snapshot, save_snapshot, Dataset};
use ctgsm::ctgan::CtganSnapshot;
use ctgsm::nn::FocalLossConfig;
use ctgsm::pipeline::{self, PipelineConfig, Variant};
use ctgsm::{Error, Result};

#[derive(Parser)]
#[command(name = "ctgsm", version, about = "Rare-attack intrusion detection pipeline")]
struct Cli {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    skip_ctgan: bool,
    #[arg(long, global = true)]
    skip_smoteenn: bool,
    #[arg(long, global = true, value_enum)]
    loss: Option<LossArg>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Focal,
    Ce,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Binary,
    Multiclass,
}

#[derive(Subcommand)]
enum Command {
    /// Load and clean CSV files (or generate the benchmark when none given).
    Ingest {
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
    /// Stratified split and min-max scaling of the ingested table.
    Preprocess,
    /// Fit CTGAN and append rows for the rare classes.
    Augment,
    /// SMOTE then ENN over the (augmented) training set.
    Resample,
    /// Train the classifier on the most processed training set available.
    Train,
    /// Score the trained classifier on the held-out split.
    Evaluate,
    /// Every stage end to end.
    Run,
    /// Run the proposed pipeline and its comparison baselines.
    Compare,
    /// Write the synthetic benchmark as a CSV table.
    Benchmark,
    /// Two-component PCA coordinates of two dataset snapshots.
    Project {
        /// Snapshot stem (without extension); defaults to the training split.
        #[arg(long)]
        before: Option<PathBuf>,
        /// Defaults to the most processed training set.
        #[arg(long)]
        after: Option<PathBuf>,
    },
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_json_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if cli.skip_ctgan {
        cfg.ctgan.enabled = false;
    }
    if cli.skip_smoteenn {
        cfg.smoteenn.enabled = false;
    }
    match cli.loss {
        Some(LossArg::Ce) => cfg.classifier.loss = LossKind::CrossEntropy,
        Some(LossArg::Focal) if !matches!(cfg.classifier.loss, LossKind::Focal(_)) => {
            cfg.classifier.loss = LossKind::Focal(FocalLossConfig::default())
        }
        _ => {}
    }
    match cli.mode {
        Some(ModeArg::Binary) => cfg.classifier.mode = Mode::Binary,
        Some(ModeArg::Multiclass) => cfg.classifier.mode = Mode::Multiclass,
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn artifact(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.out_dir.join("artifacts").join(name)
}

/// First snapshot stem among `names` that exists.
fn latest(cfg: &PipelineConfig, names: &[&str]) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| artifact(cfg, n))
        .find(|p| p.with_extension("csv").exists())
        .ok_or_else(|| Error::MissingFile(artifact(cfg, names[names.len() - 1]).with_extension("csv")))
}

fn load(stem: &Path) -> Result<Dataset> {
    Ok(load_snapshot(stem)?.0)
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Ingest { inputs } => {
            if !inputs.is_empty() {
                cfg.inputs = inputs.clone();
            }
            let data = pipeline::ingest(&cfg)?;
            cfg.rare_ids(&data)?;
            save_snapshot(&data, None, &artifact(&cfg, "cleaned"))?;
            println!("ingested {} rows, {} features, {} classes", data.n_rows(), data.n_features(), data.n_classes());
        }
        Command::Preprocess => {
            let data = load(&artifact(&cfg, "cleaned"))?;
            let split = pipeline::preprocess(&cfg, &data)?;
            save_snapshot(&split.train, Some(&split.scaler), &artifact(&cfg, "train"))?;
            save_snapshot(&split.test, Some(&split.scaler), &artifact(&cfg, "test"))?;
            println!("train {} rows, test {} rows", split.train.n_rows(), split.test.n_rows());
        }
        Command::Augment => {
            let train = load(&artifact(&cfg, "train"))?;
            let rare = cfg.rare_ids(&train)?;
            let aug = pipeline::augment(&cfg, &train, &rare, cfg.seed)?;
            if let Some(m) = &aug.model {
                pipeline::write_json(&artifact(&cfg, "ctgan.json"), &CtganSnapshot::from(m))?;
            }
            save_snapshot(&aug.data, None, &artifact(&cfg, "augmented"))?;
            println!("augmented {} -> {} rows", train.n_rows(), aug.data.n_rows());
        }
        Command::Resample => {
            let input = load(&latest(&cfg, &["augmented", "train"])?)?;
            let rare = cfg.rare_ids(&input)?;
            let out = pipeline::resample(&cfg, &input, &rare, cfg.seed)?;
            save_snapshot(&out, None, &artifact(&cfg, "resampled"))?;
            println!("resampled {} -> {} rows", input.n_rows(), out.n_rows());
        }
        Command::Train => {
            let input = load(&latest(&cfg, &["resampled", "augmented", "train"])?)?;
            let (model, history) = pipeline::train(&cfg, &input, cfg.seed)?;
            pipeline::write_json(&artifact(&cfg, "classifier.json"), &ClassifierSnapshot::from(&model))?;
            fs::write(cfg.out_dir.join("curves.csv"), pipeline::curves_csv(&history))?;
            if let Some(last) = history.last() {
                println!("trained {} epochs, final loss {:.6}, accuracy {:.4}", last.epoch, last.loss, last.accuracy);
            }
        }
        Command::Evaluate => {
            let path = artifact(&cfg, "classifier.json");
            if !path.exists() {
                return Err(Error::MissingFile(path));
            }
            let snap: ClassifierSnapshot = serde_json::from_str(&fs::read_to_string(&path)?)?;
            let model = Classifier::try_from(snap)?;
            let test = load(&artifact(&cfg, "test"))?;
            let rare = cfg.rare_ids(&test)?;
            let eval = pipeline::evaluate(&model, &test, &rare)?;
            pipeline::write_evaluation(&cfg.out_dir, &eval, None)?;
            print_summary(&eval);
        }
        Command::Run => {
            let outcome = pipeline::run_pipeline(&cfg)?;
            print_summary(&outcome.evaluation);
        }
        Command::Compare => {
            println!("variant          accuracy  macro_P  macro_R  macro_F1  rare_recall");
            for r in pipeline::compare_variants(&cfg, &Variant::ALL)? {
                println!(
                    "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>9.4} {:>12.4}",
                    r.variant.name(),
                    r.accuracy,
                    r.macro_precision,
                    r.macro_recall,
                    r.macro_f1,
                    r.rare_recall
                );
            }
        }
        Command::Benchmark => {
            let data = pipeline::make_benchmark(&cfg.benchmark, ctgsm::rng::stage_seed(cfg.seed, pipeline::STAGE_BENCHMARK))?;
            fs::create_dir_all(&cfg.out_dir)?;
            let path = cfg.out_dir.join("benchmark.csv");
            let mut w = csv::Writer::from_path(&path)?;
            let raw = data.to_raw();
            w.write_record(raw.header())?;
            for row in &raw.rows {
                w.write_record(row)?;
            }
            w.flush()?;
            println!("wrote {} rows to {}", data.n_rows(), path.display());
        }
        Command::Project { before, after } => {
            let before = match before {
                Some(p) => p.clone(),
                None => artifact(&cfg, "train"),
            };
            let after = match after {
                Some(p) => p.clone(),
                None => latest(&cfg, &["resampled", "augmented", "train"])?,
            };
            let p = pipeline::write_projection(&cfg.out_dir, &load(&before)?, &load(&after)?)?;
            println!(
                "explained variance: {:.4}, {:.4}",
                p.explained_variance_ratio[0], p.explained_variance_ratio[1]
            );
        }
    }
    Ok(())
}

fn print_summary(eval: &pipeline::Evaluation) {
    let m = &eval.metrics;
    println!(
        "accuracy {:.4}  macro precision {:.4}  recall {:.4}  F1 {:.4}",
        m.accuracy, m.macro_avg.precision, m.macro_avg.recall, m.macro_avg.f1
    );
    for r in &eval.rare {
        println!("  {}: {}/{} detected", r.name, r.detected, r.support);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
