use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use veram::viewspace::ViewSpace;
use veram_harness::{
    cmd_ablate, cmd_confidence, cmd_eval, cmd_generate, cmd_ingest, cmd_oracle, cmd_train, default_out, CliError,
    CliResult, Settings,
};

#[derive(Parser)]
#[command(name = "veram", version, about = "Train and evaluate view-selection agents on feature grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Shared {
    /// Dataset directory (train.vfg, test.vfg) or a single .vfg file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any setting as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    recurrent: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long = "lambda-loc")]
    lambda_loc: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long = "checkpoint-every")]
    checkpoint_every: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/test split.
    Generate(Shared),
    /// Pack a manifest of per-shape feature matrices into a dataset file.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 12)]
        rows: usize,
        #[arg(long, default_value_t = 12)]
        cols: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the per-view classifier and store confidences in the dataset.
    Confidence(Shared),
    /// Train one agent; writes checkpoints, manifest.json and metrics.csv.
    Train {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        flags: TrainFlags,
        /// Continue from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Instance/class accuracy and confusion matrix of a checkpoint.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// All four variants over seeds and horizons.
    Ablate {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        flags: TrainFlags,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
        /// Comma-separated horizons.
        #[arg(long = "sweep-steps")]
        sweep_steps: Option<String>,
    },
    /// Best fixed view sequence, and the gap to a checkpoint if given.
    Oracle {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        steps: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn settings(shared: &Shared, pairs: &[(&str, &Option<String>)]) -> CliResult<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &shared.config {
        s.apply_file(path)?;
    }
    for kv in &shared.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        s.set(k, v)?;
    }
    for (k, v) in [("seed", &shared.seed), ("threads", &shared.threads)].iter().chain(pairs) {
        if let Some(v) = v {
            s.set(k, v)?;
        }
    }
    Ok(s)
}

fn train_pairs(f: &TrainFlags) -> Vec<(&'static str, &Option<String>)> {
    vec![
        ("variant", &f.variant),
        ("recurrent", &f.recurrent),
        ("steps", &f.steps),
        ("delta", &f.delta),
        ("lambda_loc", &f.lambda_loc),
        ("epochs", &f.epochs),
        ("batch", &f.batch),
        ("checkpoint_every", &f.checkpoint_every),
    ]
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn out_dir(shared: &Shared, sub: &str) -> PathBuf {
    shared.out.clone().unwrap_or_else(|| default_out(sub))
}

fn json<T: serde::Serialize>(x: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(x)?)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(shared) => {
            let s = settings(&shared, &[])?;
            let out = out_dir(&shared, "data");
            let r = cmd_generate(&s, &out)?;
            println!("wrote {} train / {} test shapes to {}", r.train_shapes, r.test_shapes, out.display());
        }
        Command::Ingest { manifest, rows, cols, out } => {
            let space = ViewSpace::new(rows, cols)?;
            let ds = cmd_ingest(&manifest, space, &out)?;
            println!("wrote {} shapes, {} classes to {}", ds.len(), ds.num_classes(), out.display());
        }
        Command::Confidence(shared) => {
            let s = settings(&shared, &[])?;
            let r = cmd_confidence(&s, need(&shared.dataset, "dataset")?)?;
            println!("{}", json(&r)?);
        }
        Command::Train { shared, flags, resume } => {
            let s = settings(&shared, &train_pairs(&flags))?;
            let out = out_dir(&shared, "train");
            let m = cmd_train(&s, need(&shared.dataset, "dataset")?, &out, resume.as_deref())?;
            let last = m.epochs.last();
            println!(
                "{} epochs, final nll {:.4}, test instance {:?} class {:?}, params {}",
                m.epochs.len(),
                last.map_or(f64::NAN, |r| r.metrics.nll),
                m.final_instance_accuracy,
                m.final_class_accuracy,
                m.param_checksum
            );
            println!("manifest: {}", out.join("manifest.json").display());
        }
        Command::Eval { shared, checkpoint } => {
            let s = settings(&shared, &[])?;
            let e = cmd_eval(&s, need(&shared.dataset, "dataset")?, &checkpoint)?;
            println!("instance accuracy {:.4}", e.instance_accuracy);
            println!("class accuracy    {:.4}", e.class_accuracy);
            println!("border fraction   {:.4}", e.border_fraction);
            println!("confusion (rows: true, cols: predicted)");
            for row in &e.confusion {
                println!("  {}", row.iter().map(|n| format!("{n:4}")).collect::<String>());
            }
            if let Some(out) = &shared.out {
                veram_harness::report::write_json(out, &e)?;
            }
        }
        Command::Ablate { shared, flags, seeds, sweep_steps } => {
            let mut pairs = train_pairs(&flags);
            pairs.push(("seeds", &seeds));
            pairs.push(("sweep_steps", &sweep_steps));
            let s = settings(&shared, &pairs)?;
            let out = out_dir(&shared, "ablate");
            let r = cmd_ablate(&s, need(&shared.dataset, "dataset")?, &out)?;
            for m in &r.summary {
                println!(
                    "{:<13} T={:<2} class {:.4} instance {:.4} border {:.3}",
                    m.variant.name(),
                    m.steps,
                    m.mean_class_accuracy,
                    m.mean_instance_accuracy,
                    m.mean_border_fraction
                );
            }
            println!("csv: {}", out.join("ablation.csv").display());
        }
        Command::Oracle { shared, steps, checkpoint } => {
            let s = settings(&shared, &[("steps", &steps)])?;
            let r = cmd_oracle(&s, need(&shared.dataset, "dataset")?, checkpoint.as_deref())?;
            println!("{}", json(&r)?);
            if let Some(out) = &shared.out {
                veram_harness::report::write_json(out, &r)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
