//! `srf-tad`: synthesize data, train, evaluate, run inference, ablate, and
//! verify gradients.
//!
//! Failures exit with status 1 and print one JSON object on stderr:
//! `{"error": "<kind>", "message": "..."}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use srf_tad::data::{
    generate_dataset, load_dataset, read_features, write_dataset, AnnotatedSequence,
    SyntheticDataset, ANNOTATIONS_FILE,
};
use srf_tad::decode_eval::{CenternessMode, DetectionRecord};
use srf_tad::gradient_suite::run_gradient_suite;
use srf_tad::srfc::SrfcVariant;
use srf_tad::trainer::{
    ablation_run, configure_threads, detect, evaluate, train, Checkpoint, EpochMetrics,
    ExperimentConfig,
};
use srf_tad::Error;

#[derive(Parser)]
#[command(name = "srf-tad", version, about = "Anchor-free temporal action detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let config = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let config = match self.seed {
            Some(s) => config.with_seed(s),
            None => config,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into `<out>/train` and `<out>/eval`.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on `<data>/train`; writes checkpoint, metrics and config to `<out>`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides `train.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        /// Also write `report.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect actions in one `.srft` feature file.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write each window's branch attention as `attention_<offset>.csv`.
        #[arg(long)]
        dump_attention: bool,
        #[arg(long, default_value_t = 25.0)]
        fps: f64,
    },
    /// Train and compare SRFC variants and center-ness modes.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Dataset root; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Variant names or column letters, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "a,b,c,d,e")]
        variants: Vec<SrfcVariant>,
        #[arg(long, value_delimiter = ',', default_value = "none,from_regression,learned")]
        modes: Vec<CenternessMode>,
        /// Overrides `train.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

enum Failure {
    Core(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult = Result<(), Failure>;

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    write_file(path, serde_json::to_string_pretty(value)?)
}

/// `root/<split>` when it holds annotations, otherwise `root` itself.
fn load_split(root: &Path, split: &str) -> Result<Vec<AnnotatedSequence>, Error> {
    let nested = root.join(split);
    if nested.join(ANNOTATIONS_FILE).is_file() {
        load_dataset(&nested)
    } else {
        load_dataset(root)
    }
}

fn print_epoch(m: &EpochMetrics) {
    println!(
        "epoch {:>3}  lr {:.3e}  loss {:.4}  cls {:.4}  loc {:.4}  ctr {:.4}  |g| {:.3}",
        m.epoch, m.lr, m.loss, m.cls, m.loc, m.ctr, m.grad_norm
    );
}

fn synth(common: Common, out: PathBuf) -> CliResult {
    let config = common.load()?;
    let data = generate_dataset(&config.synth)?;
    create_dir(&out)?;
    write_dataset(&out.join("train"), &data.train, &config.synth)?;
    write_dataset(&out.join("eval"), &data.eval, &config.synth)?;
    println!(
        "wrote {} training and {} eval sequences to {}",
        data.train.len(),
        data.eval.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(
    common: Common,
    data: PathBuf,
    out: PathBuf,
    resume: Option<PathBuf>,
    epochs: Option<usize>,
) -> CliResult {
    let mut config = common.load()?;
    let resume = resume.map(|p| Checkpoint::load(&p)).transpose()?;
    if let Some(ck) = &resume {
        config.model = ck.model_config;
        config.train = ck.train_config.clone();
    }
    if let Some(e) = epochs {
        config.train.epochs = e;
    }
    let train_data = load_split(&data, "train")?;
    create_dir(&out)?;
    write_json(&out.join("config.json"), &config)?;
    let metrics_path = out.join("metrics.jsonl");
    let mut log = fs::File::create(&metrics_path).map_err(|e| Error::Io {
        path: metrics_path.clone(),
        source: e,
    })?;
    let mut log_err = None;
    let outcome = train(&config.model, &config.train, &train_data, resume.as_ref(), &mut |m| {
        print_epoch(m);
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::Io {
            path: metrics_path,
            source: e,
        }
        .into());
    }
    let ck_path = out.join("checkpoint.ckpt");
    outcome.checkpoint.save(&ck_path)?;
    println!(
        "checkpoint {} (sha256 {})",
        ck_path.display(),
        outcome.checkpoint.content_hash()?
    );
    Ok(())
}

fn eval_cmd(
    common: Common,
    checkpoint: PathBuf,
    data: PathBuf,
    split: String,
    out: Option<PathBuf>,
) -> CliResult {
    let config = common.load()?;
    let ck = Checkpoint::load(&checkpoint)?;
    let model = ck.model()?;
    let videos = load_split(&data, &split)?;
    let report = evaluate(&model, ck.train_config.centerness, &videos, &config.eval)?;
    println!("{}", report.table(ck.model_config.variant.as_str()));
    if let Some(dir) = out {
        create_dir(&dir)?;
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(())
}

fn infer_cmd(
    common: Common,
    checkpoint: PathBuf,
    features: PathBuf,
    out: PathBuf,
    dump_attention: bool,
    fps: f64,
) -> CliResult {
    let config = common.load()?;
    let ck = Checkpoint::load(&checkpoint)?;
    let model = ck.model()?;
    let x = read_features(&features)?;
    let result = detect(&model, &x, ck.train_config.centerness, &config.eval, dump_attention)?;
    let video_id = features
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let records: Vec<DetectionRecord> = result
        .detections
        .iter()
        .map(|d| DetectionRecord::new(&video_id, d, fps))
        .collect();
    create_dir(&out)?;
    write_json(&out.join("detections.json"), &records)?;
    for w in &result.attention {
        write_file(&out.join(format!("attention_{}.csv", w.offset)), w.map.to_csv())?;
    }
    println!(
        "{} detections, {} attention maps written to {}",
        records.len(),
        result.attention.len(),
        out.display()
    );
    Ok(())
}

fn ablate_cmd(
    common: Common,
    data: Option<PathBuf>,
    out: PathBuf,
    variants: Vec<SrfcVariant>,
    modes: Vec<CenternessMode>,
    epochs: Option<usize>,
) -> CliResult {
    let mut config = common.load()?;
    if let Some(e) = epochs {
        config.train.epochs = e;
    }
    let dataset = match data {
        Some(root) => SyntheticDataset {
            train: load_split(&root, "train")?,
            eval: load_split(&root, "eval")?,
        },
        None => generate_dataset(&config.synth)?,
    };
    let report = ablation_run(&config, &dataset, &variants, &modes, &mut |r| {
        println!(
            "trained variant {} / center-ness {}: mAP {:?}",
            r.variant, r.centerness.as_str(), r.report.map
        );
    })?;
    create_dir(&out)?;
    write_json(&out.join("ablation.json"), &report)?;
    let tables = format!(
        "Branch combinations\n{}\nCenter-ness\n{}",
        report.variant_table(),
        report.centerness_table()
    );
    write_file(&out.join("ablation.txt"), &tables)?;
    println!("{tables}");
    Ok(())
}

fn gradcheck_cmd(seed: u64, seeds: u64) -> CliResult {
    let seeds: Vec<u64> = (seed..seed + seeds).collect();
    let reports = run_gradient_suite(&seeds)?;
    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status}  {:<24} max rel err {:.3e} (< {:.0e})",
            r.op, r.max_rel_error, r.tolerance
        );
        if !r.passed() {
            failed.push(r.op.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> CliResult {
    configure_threads()?;
    match cli.command {
        Command::Synth { common, out } => synth(common, out),
        Command::Train {
            common,
            data,
            out,
            resume,
            epochs,
        } => train_cmd(common, data, out, resume, epochs),
        Command::Eval {
            common,
            checkpoint,
            data,
            split,
            out,
        } => eval_cmd(common, checkpoint, data, split, out),
        Command::Infer {
            common,
            checkpoint,
            features,
            out,
            dump_attention,
            fps,
        } => infer_cmd(common, checkpoint, features, out, dump_attention, fps),
        Command::Ablate {
            common,
            data,
            out,
            variants,
            modes,
            epochs,
        } => ablate_cmd(common, data, out, variants, modes, epochs),
        Command::Gradcheck { seed, seeds } => gradcheck_cmd(seed, seeds),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, message) = match f {
                Failure::Core(e) => (e.kind(), e.to_string()),
                Failure::Check(m) => ("check_failed", m),
            };
            eprintln!("{}", json!({ "error": kind, "message": message }));
            ExitCode::FAILURE
        }
    }
}
