//! Command-line surface: train, evaluate, analyze, gradient-check, and
//! generate data. Exit codes: 0 success, 2 usage/input errors (unknown
//! flags, unreadable files, bad config), 1 runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spikedistill::config::RunConfig;
use spikedistill::data;
use spikedistill::error::Error;
use spikedistill::train;

#[derive(Parser)]
#[command(name = "spikedistill", version, about = "Spiking-network distillation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOverrides {
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory override.
    #[arg(long)]
    out_dir: Option<String>,
    /// Kernel thread count; 1 is the reference behavior and all values
    /// currently execute the same bit-identical single-threaded path.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the continuous teacher with plain cross-entropy.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a `last.ckpt` written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Train the spiking student against a frozen teacher checkpoint.
    TrainStudent {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        /// Distillation mode: none | ld | bkd | md (overrides the config).
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Evaluate a checkpoint on a split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Defaults to the config.toml next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Firing-rate and energy report for a checkpoint.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the full finite-difference gradient oracle suite.
    Gradcheck {
        #[arg(long, default_value_t = 20240)]
        seed: u64,
        /// Seeded cases per primitive family.
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
    /// Write a deterministic synthetic digit dataset in IDX format.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 2000)]
        test: usize,
        #[arg(long, default_value_t = 0x5d1617)]
        seed: u64,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Format(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

fn category(err: &Error) -> &'static str {
    match err {
        Error::Io { .. } => "io",
        Error::Format(_) => "format",
        Error::Config(_) => "config",
        Error::State(_) => "state",
        Error::Numeric(_) => "numeric",
        Error::Dimension(_) => "dimension",
        Error::Domain(_) => "domain",
        Error::Contract(_) => "contract",
    }
}

fn load_config(path: &Path, overrides: &CommonOverrides) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        cfg.run.seed = seed;
    }
    if let Some(out_dir) = &overrides.out_dir {
        cfg.run.out_dir = out_dir.clone();
    }
    if let Some(threads) = overrides.threads {
        cfg.run.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Config for eval/analyze: explicit flag, else the echo beside the ckpt.
fn config_near_ckpt(ckpt: &Path, explicit: Option<&PathBuf>) -> Result<RunConfig, Error> {
    match explicit {
        Some(p) => RunConfig::load(p),
        None => {
            let sibling = ckpt.parent().map(|d| d.join("config.toml")).unwrap_or_default();
            if sibling.is_file() {
                RunConfig::load(&sibling)
            } else {
                Err(Error::Config(format!(
                    "no config.toml next to {}; pass --config",
                    ckpt.display()
                )))
            }
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found")),
        ))
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::TrainTeacher { config, resume, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let out = train::train_teacher::<f32>(&cfg, resume.as_deref())?;
            println!(
                "teacher done: best epoch {} top1 {:.4}; checkpoint {}",
                out.best_epoch,
                out.best_top1,
                out.best_ckpt.display()
            );
            Ok(())
        }
        Command::TrainStudent { config, teacher, mode, resume, overrides } => {
            let mut cfg = load_config(&config, &overrides)?;
            if let Some(mode) = mode {
                cfg.distill.mode = mode;
                cfg.validate()?;
            }
            require_file(&teacher, "teacher checkpoint")?;
            let out = train::train_student::<f32>(&cfg, &teacher, resume.as_deref())?;
            println!(
                "student done (mode {}): best epoch {} top1 {:.4}; checkpoint {}",
                cfg.distill.mode,
                out.best_epoch,
                out.best_top1,
                out.best_ckpt.display()
            );
            Ok(())
        }
        Command::Eval { ckpt, split, config } => {
            require_file(&ckpt, "checkpoint")?;
            let cfg = config_near_ckpt(&ckpt, config.as_ref())?;
            let rec = train::evaluate_checkpoint::<f32>(&cfg, &ckpt, &split)?;
            println!("{}", rec.tsv_line());
            Ok(())
        }
        Command::Analyze { ckpt, config } => {
            require_file(&ckpt, "checkpoint")?;
            let cfg = config_near_ckpt(&ckpt, config.as_ref())?;
            let out = train::analyze_checkpoint::<f32>(&cfg, &ckpt)?;
            println!("# {}", out.norm_note);
            println!("{}", out.report.table());
            for line in out.report.machine_lines() {
                println!("{line}");
            }
            println!("tap_firing_rate:{}", out.tap_rate);
            println!("top1:{}", out.top1);
            Ok(())
        }
        Command::Gradcheck { seed, cases } => {
            let mut stdout = std::io::stdout();
            train::run_gradcheck(seed, cases, &mut stdout)
        }
        Command::SynthData { out, train: n_train, test: n_test, seed } => {
            std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
            let train_ds = data::synth_digits(n_train, seed, "train");
            data::write_idx(
                &train_ds,
                &out.join("train-images-idx3-ubyte"),
                &out.join("train-labels-idx1-ubyte"),
            )?;
            let test_ds = data::synth_digits(n_test, seed, "test");
            data::write_idx(
                &test_ds,
                &out.join("t10k-images-idx3-ubyte"),
                &out.join("t10k-labels-idx1-ubyte"),
            )?;
            println!(
                "wrote {n_train} train / {n_test} test synthetic digits to {}",
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error ({}): {err}", category(&err));
            ExitCode::from(exit_code_for(&err))
        }
    }
}
