use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tiktoc::config::{parse_override, ExperimentConfig};
use tiktoc::data::{load_dataset, Dataset};
use tiktoc::executor::{backend_by_name, grade_dataset, ExecutionBackend, ExternalConfig};
use tiktoc::pipeline::{self, ExperimentReport};
use tiktoc::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(name = "tiktoc", version, about = "Test-case-level knowledge tracing for coding problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Submissions CSV.
    #[arg(long)]
    dataset: PathBuf,
    /// Problems JSON.
    #[arg(long)]
    problems: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run every submission against its test suite and write a labeled CSV.
    Grade {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "minilang")]
        backend: String,
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
        /// Re-run submissions that already carry labels.
        #[arg(long)]
        regrade: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train one fold and save a checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// 1-based fold index.
        #[arg(long, default_value_t = 1)]
        fold: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the test students of a fold.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        fold: usize,
        /// Directory for `evaluation.json` and `predictions.jsonl`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated training and evaluation, optionally against a second model.
    Experiment {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a saved experiment report.
    Report {
        /// `report.json` or the directory holding it.
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write one student's predicted test-case grid as CSV and PNG.
    Heatmap {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        student: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic labeled corpus.
    Synth {
        /// full, desk or tiny.
        #[arg(long, default_value = "desk")]
        size: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let overrides = args.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentConfig::load(args.config.as_deref(), &overrides)?)
}

fn load(data: &DataArgs) -> Result<Dataset> {
    load_dataset(&data.dataset, &data.problems)
        .with_context(|| format!("loading {} and {}", data.dataset.display(), data.problems.display()))
}

fn backend(cfg: &ExperimentConfig) -> Result<Box<dyn ExecutionBackend>> {
    let external = (cfg.backend == "external")
        .then(|| ExternalConfig::new(&cfg.compile_cmd, &cfg.run_cmd, &cfg.source_name));
    Ok(backend_by_name(&cfg.backend, external)?)
}

fn pick_fold(cfg: &ExperimentConfig, dataset: &Dataset, fold: usize) -> Result<(tiktoc::data::Fold, u64)> {
    let mut splits = pipeline::splits(cfg, dataset)?;
    if fold == 0 || fold > splits.len() {
        bail!("fold {fold} out of range 1..={}", splits.len());
    }
    Ok(splits.swap_remove(fold - 1))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Grade { data, backend: name, timeout, regrade, out, cfg } => {
            let mut c = load_config(&cfg)?;
            c.backend = name;
            c.timeout_s = timeout;
            let dataset = load(&data)?;
            let b = backend(&c)?;
            let graded = grade_dataset(&dataset, b.as_ref(), c.timeout_s, regrade)?;
            std::fs::write(&out, graded.submissions_csv()).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("graded {} interactions -> {}", graded.num_interactions(), out.display());
        }
        Command::Train { data, cfg, fold, out } => {
            let c = load_config(&cfg)?;
            let dataset = load(&data)?;
            let (split, seed) = pick_fold(&c, &dataset, fold)?;
            let c = ExperimentConfig { seed, ..c };
            let trained = pipeline::train_fold(&c, &dataset, &split)?;
            pipeline::save_checkpoint(&out, &trained)?;
            for e in &trained.log.epochs {
                eprintln!("epoch {:>3}  train {:.4}  val {:?}", e.epoch, e.train_loss, e.val_loss);
            }
            eprintln!("best epoch {} -> {}", trained.log.best_epoch, out.display());
        }
        Command::Evaluate { data, checkpoint, fold, out } => {
            let trained = pipeline::load_checkpoint(&checkpoint)?;
            let dataset = load(&data)?;
            let (split, _) = pick_fold(&trained.cfg, &dataset, fold)?;
            let b = backend(&trained.cfg)?;
            let (report, records) = pipeline::evaluate(&trained, &dataset, &split.test, Some(b.as_ref()))?;
            create_dir(&out)?;
            std::fs::write(out.join("evaluation.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("predictions.jsonl"))?);
            for r in &records {
                writeln!(f, "{}", serde_json::to_string(r)?)?;
            }
            f.flush()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Experiment { data, cfg, out } => {
            let c = load_config(&cfg)?;
            let dataset = load(&data)?;
            let b = backend(&c)?;
            let report = pipeline::run_experiment(&c, &dataset, Some(b.as_ref()))?;
            pipeline::write_outputs(&out, &report)?;
            print!("{}", pipeline::format_table(&report));
        }
        Command::Report { path, json } => {
            let file = if path.is_dir() { path.join("report.json") } else { path };
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let report: ExperimentReport = serde_json::from_str(&text).context("parsing report")?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", pipeline::format_table(&report));
            }
        }
        Command::Heatmap { data, checkpoint, student, out } => {
            let trained = pipeline::load_checkpoint(&checkpoint)?;
            let dataset = load(&data)?;
            let b = backend(&trained.cfg)?;
            let records = pipeline::predict(&trained, &dataset, std::slice::from_ref(&student), Some(b.as_ref()))?;
            create_dir(&out)?;
            let files = pipeline::emit_heatmap(&records, &student, &out)?;
            println!("{}\n{}", files.csv.display(), files.png.display());
        }
        Command::Synth { size, seed, out } => {
            let sc = match size.as_str() {
                "full" => SynthConfig::full(seed),
                "desk" => SynthConfig::desk(seed),
                "tiny" => SynthConfig::tiny(seed),
                other => bail!("unknown size `{other}` (expected full, desk or tiny)"),
            };
            let dataset = synth::generate(&sc)?;
            create_dir(&out)?;
            dataset.write(&out.join("submissions.csv"), &out.join("problems.json"))?;
            eprintln!("{} students, {} interactions -> {}", dataset.trajectories.len(), dataset.num_interactions(), out.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(Cli::parse())
}
