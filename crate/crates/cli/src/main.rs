use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradflow::experiment::{self, ExperimentConfig, RunMeta};
use gradflow::sde::ParticleDataset;
use gradflow::{Error, Result};

/// Learn Langevin potentials from particle snapshots.
#[derive(Parser)]
#[command(name = "gradflow", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the benchmark and write the dataset.
    Simulate(RunArgs),
    /// Train on a simulated dataset.
    Train(RunArgs),
    /// Evaluate the final checkpoint.
    Evaluate(RunArgs),
    /// Simulate, train and evaluate.
    Run(RunArgs),
    /// Tabulate finished runs as CSV.
    Compare {
        run_dirs: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML). Defaults to the `meta.json` in `--out`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bit-reproducible reductions (default).
    #[arg(long, conflicts_with = "fast")]
    deterministic: bool,
    /// Unordered parallel reductions.
    #[arg(long)]
    fast: bool,
}

impl RunArgs {
    fn config(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match (&self.config, &self.out) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(out)) => {
                let p = out.join("meta.json");
                let text = fs::read_to_string(&p).map_err(|e| Error::Io { path: p, source: e })?;
                serde_json::from_str::<RunMeta>(&text)?.config
            }
            (None, None) => return Err(Error::ConfigParse("either --config or --out is required".into())),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.fast {
            cfg.deterministic = false;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
        cfg.out_dir = out.clone();
        Ok((cfg, out))
    }
}

fn load_dataset(out: &Path) -> Result<ParticleDataset> {
    ParticleDataset::load(&out.join("dataset"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Simulate(a) => {
            let (cfg, out) = a.config()?;
            let r = cfg.resolve()?;
            r.simulate_stage(&out)?;
            eprintln!("dataset written to {}", out.join("dataset").display());
        }
        Command::Train(a) => {
            let (cfg, out) = a.config()?;
            let r = cfg.resolve()?;
            let ds = load_dataset(&out).map_err(|e| e.in_stage("train"))?;
            r.train_stage(&ds, &out)?;
            eprintln!("checkpoints written to {}", out.join("checkpoints").display());
        }
        Command::Evaluate(a) => {
            let (cfg, out) = a.config()?;
            let r = cfg.resolve()?;
            let ds = load_dataset(&out).map_err(|e| e.in_stage("evaluate"))?;
            let model = experiment::load_final_model(&out).map_err(|e| e.in_stage("evaluate"))?;
            let m = r.evaluate_stage(&ds, &model, &out)?;
            println!("grad_error = {}", m.grad_error);
        }
        Command::Run(a) => {
            let (cfg, out) = a.config()?;
            let m = experiment::run_pipeline(&cfg, Some(&out))?;
            println!("grad_error = {}", m.grad_error);
        }
        Command::Compare { run_dirs, out } => {
            let table = experiment::compare(&run_dirs)?;
            match out {
                Some(p) => fs::write(&p, table).map_err(|e| Error::Io { path: p, source: e })?,
                None => print!("{table}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
