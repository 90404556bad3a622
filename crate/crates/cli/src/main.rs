//! Command-line front end: corpus generation, training, evaluation, and the
//! four-system ablation.
//!
//! Exit codes: 0 on success, 2 for configuration or input problems (bad
//! config file, missing manifest, checkpoint/config mismatch), 1 for runtime
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use seddet::config::RunConfig;
use seddet::corpus::generate_corpus;
use seddet::model::checkpoint::load_checkpoint;
use seddet::trainer::{
    evaluate_model, load_dataset, run_ablation, run_experiment, ExperimentReport, System,
};
use seddet::{DefaultReal, Error};

#[derive(Parser)]
#[command(
    name = "seddet",
    about = "Sound event detection with mixed weak/strong supervision and \
             inter-frame distance domain adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the two-domain training corpus described by the config.
    Generate {
        /// Experiment configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for audio, labels, and the manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one system on a generated corpus and write run artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Manifest produced by `generate`.
        #[arg(long)]
        manifest: PathBuf,
        /// Run directory for logs, the checkpoint, and reports.
        #[arg(long)]
        out: PathBuf,
        /// Override the branch toggles with a named system.
        #[arg(long)]
        system: Option<System>,
    },
    /// Evaluate a saved checkpoint on one test split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalSplit::RealTest)]
        split: EvalSplit,
    },
    /// Train all four systems over several seeds and tabulate the scores.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training seeds, e.g. `--seeds 1,2,3`.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    #[value(name = "real_test")]
    RealTest,
    #[value(name = "synthetic_test")]
    SyntheticTest,
}

impl EvalSplit {
    fn name(self) -> &'static str {
        match self {
            EvalSplit::RealTest => "real_test",
            EvalSplit::SyntheticTest => "synthetic_test",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_class(&e))
        }
    }
}

/// Configuration and input problems exit with 2, runtime failures with 1.
fn exit_class(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Manifest(_) | Error::Checkpoint(_) => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Error> {
    let cfg = RunConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn require_file(path: &Path, what: &str) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{what} not found: {}", path.display()),
        )))
    }
}

fn print_report(split: &str, report: &seddet::metrics::EvalReport) {
    println!(
        "{split}: event macro F1 {:.4}, tagging macro F1 {:.4}",
        report.event.macro_f1, report.tagging.macro_f1
    );
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Generate { config, out } => {
            let cfg = load_config(&config)?;
            let corpus = generate_corpus(&cfg.corpus, &out)?;
            cfg.save(&out.join("config.toml"))?;
            let s = &corpus.stats;
            println!("manifest: {}", corpus.manifest_path.display());
            println!("clips: {}", s.clips);
            for (class, count) in s.class_histogram.iter().enumerate() {
                println!("class {class}: {count} events");
            }
            println!("mean polyphony: {:.3}", s.mean_polyphony);
            Ok(())
        }
        Command::Train { config, manifest, out, system } => {
            let mut cfg = load_config(&config)?;
            if let Some(system) = system {
                system.apply(&mut cfg.train);
            }
            require_file(&manifest, "manifest")?;
            let artifacts = run_experiment::<DefaultReal>(&cfg, &manifest, &out)?;
            // refuse to report success unless the written report parses back
            let parsed: ExperimentReport =
                serde_json::from_str(&std::fs::read_to_string(&artifacts.report_path)?)?;
            println!("run dir: {}", artifacts.run_dir.display());
            println!("system: {} (seed {})", parsed.system, parsed.seed);
            print_report("real_test", &parsed.real_test);
            print_report("synthetic_test", &parsed.synthetic_test);
            println!("checkpoint: {}", artifacts.checkpoint_path.display());
            Ok(())
        }
        Command::Evaluate { config, checkpoint, manifest, split } => {
            let cfg = load_config(&config)?;
            require_file(&checkpoint, "checkpoint")?;
            require_file(&manifest, "manifest")?;
            let (model, hash) = load_checkpoint::<DefaultReal>(&checkpoint)?;
            if hash != cfg.config_hash() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was trained under a different configuration \
                     (hash {hash}, config hash {})",
                    cfg.config_hash()
                )));
            }
            let dataset =
                load_dataset::<DefaultReal>(&manifest, &cfg.features, cfg.model.n_classes)?;
            let clips = match split {
                EvalSplit::RealTest => &dataset.real_test,
                EvalSplit::SyntheticTest => &dataset.syn_test,
            };
            let report = evaluate_model(&model, clips, &cfg.eval, dataset.frame_rate)?;
            print_report(split.name(), &report);
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Ablate { config, manifest, out, seeds } => {
            let cfg = load_config(&config)?;
            require_file(&manifest, "manifest")?;
            let table = run_ablation::<DefaultReal>(&cfg, &manifest, &out, &seeds)?;
            println!("{}", table.render());
            println!("table: {}", out.join("ablation.csv").display());
            Ok(())
        }
    }
}
