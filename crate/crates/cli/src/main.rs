use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use npcseg::config::PipelineConfig;
use npcseg::intensity::Task;
use npcseg::phantom::PhantomSpec;
use npcseg::pipeline::{self, BatchSummary};
use npcseg::plan::plan_document;

#[derive(Parser)]
#[command(name = "npcseg", version, about = "Head-and-neck CT preprocessing, cropping and scoring")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON pipeline configuration; unset fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Number of worker threads (overrides the configuration).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Segmentation task: `oars` or `gtvs` (overrides the configuration).
    #[arg(long, global = true)]
    task: Option<Task>,
}

#[derive(Subcommand)]
enum Command {
    /// Window (and optionally z-score) paired contrast/plain CT volumes.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Crop preprocessed volumes to the body region found on the raw CT.
    Crop {
        /// Directory with the raw contrast CT volumes.
        #[arg(long)]
        raw: PathBuf,
        /// Directory with the volumes to crop.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// In-plane margin in voxels.
        #[arg(long)]
        margin: Option<usize>,
        /// Body threshold in HU.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Paste cropped label maps back onto their original grids.
    Restore {
        #[arg(long)]
        pred: PathBuf,
        /// Directory with the crop records written by `crop`.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Merge substructure labels into their target structures.
    MergeLabels {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Label schema JSON (overrides the configuration).
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Score predicted label maps against references.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Surface tolerance in millimetres.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Generate synthetic phantom cases with exact labels.
    Phantom {
        #[arg(long)]
        output: PathBuf,
        /// Phantom specification JSON; the built-in head-and-neck preset is used otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, num_args = 3, value_names = ["NX", "NY", "NZ"], default_values_t = [128, 128, 64])]
        dims: Vec<usize>,
        #[arg(long, num_args = 3, value_names = ["SX", "SY", "SZ"], default_values_t = [1.0, 1.0, 2.0])]
        spacing: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the training plan for a task as JSON.
    EmitPlan {
        /// Write to this file instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => {
            require_exists(p)?;
            PipelineConfig::load(p)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(t) = g.task {
        cfg.task = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_exists(p: &Path) -> Result<()> {
    if !p.exists() {
        bail!("input path does not exist: {}", p.display());
    }
    Ok(())
}

fn report(step: &str, s: &BatchSummary) -> ExitCode {
    for (id, msg) in &s.failed {
        eprintln!("{step}: case {id} failed: {msg}");
    }
    eprintln!("{step}: {} succeeded, {} failed", s.succeeded.len(), s.failed.len());
    if s.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Preprocess { input, output } => {
            require_exists(&input)?;
            let s = pipeline::preprocess_dir(&input, &output, &cfg)?;
            Ok(report("preprocess", &s))
        }
        Command::Crop {
            raw,
            input,
            output,
            margin,
            threshold,
        } => {
            require_exists(&raw)?;
            require_exists(&input)?;
            if let Some(m) = margin {
                cfg.crop.margin_px = m;
            }
            if let Some(t) = threshold {
                cfg.crop.threshold_hu = t;
            }
            let s = pipeline::crop_dir(&raw, &input, &output, &cfg)?;
            Ok(report("crop", &s))
        }
        Command::Restore { pred, records, output } => {
            require_exists(&pred)?;
            require_exists(&records)?;
            let s = pipeline::restore_dir(&pred, &records, &output, &cfg)?;
            Ok(report("restore", &s))
        }
        Command::MergeLabels { input, output, labels } => {
            require_exists(&input)?;
            if let Some(l) = labels {
                require_exists(&l)?;
                cfg.labels = Some(l);
            }
            let schema = pipeline::load_schema(&cfg)?;
            let s = pipeline::merge_dir(&input, &output, &schema, &cfg)?;
            Ok(report("merge-labels", &s))
        }
        Command::Evaluate {
            pred,
            reference,
            output,
            tau,
            labels,
        } => {
            require_exists(&pred)?;
            require_exists(&reference)?;
            if let Some(t) = tau {
                cfg.tau_mm = t;
            }
            if let Some(l) = labels {
                require_exists(&l)?;
                cfg.labels = Some(l);
            }
            cfg.validate()?;
            let (rep, s) = pipeline::evaluate_dirs(&pred, &reference, &output, &cfg)?;
            let o = &rep.overall;
            println!(
                "mean dice {:.4}  precision {:.4}  recall {:.4}  nsd {:.4}  ({} scores)",
                o.dice.mean, o.precision.mean, o.recall.mean, o.nsd.mean, o.count
            );
            Ok(report("evaluate", &s))
        }
        Command::Phantom {
            output,
            spec,
            count,
            dims,
            spacing,
            sigma,
            seed,
        } => {
            let spec = match spec {
                Some(p) => {
                    require_exists(&p)?;
                    PhantomSpec::load(&p)?
                }
                None => PhantomSpec::head_neck(
                    [dims[0], dims[1], dims[2]],
                    [spacing[0], spacing[1], spacing[2]],
                    sigma,
                    seed,
                ),
            };
            let written = pipeline::phantom_dir(&output, &spec, count, &cfg)?;
            eprintln!("phantom: wrote {} cases to {}", written.len(), output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::EmitPlan { output } => {
            let doc = plan_document(cfg.task);
            let text = serde_json::to_string_pretty(&doc)? + "\n";
            match output {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
