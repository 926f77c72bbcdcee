use clap::Parser;
use prandtl_robin::config::{load_config, Experiment, EXPERIMENTS};
use prandtl_robin::runner::{run_experiment, write_failure_manifest};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

/// Desk-scale experiments for shear flows under a Robin wall law.
#[derive(Parser, Debug)]
#[command(name = "prandtl-robin", version, about)]
struct Cli {
    /// Experiment tag (shear, mollify, linearized-mms, nash-moser,
    /// stability, dirichlet-limit, norms-audit)
    experiment: String,

    /// Path to a JSON config file
    #[arg(long)]
    config: PathBuf,

    /// Output directory (overrides the config's output_dir)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Seed override for the run's random draws
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Ok(threads) = std::env::var("PRANDTL_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            // ignore AlreadyInitialized: tests and embedders may have built a pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        } else {
            eprintln!("PRANDTL_THREADS = {threads:?} is not a thread count; ignoring");
        }
    }

    let experiment = match Experiment::from_str(&cli.experiment) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("{e}");
            eprintln!("valid experiments: {}", EXPERIMENTS.map(|e| e.tag()).join(", "));
            return ExitCode::from(2);
        }
    };

    let mut cfg = match load_config(&cli.config, experiment) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("failed to load {}: {e}", cli.config.display());
            let out = cli.out.unwrap_or_else(|| PathBuf::from("out"));
            if let Err(werr) = write_failure_manifest(&out, experiment.tag(), &e) {
                eprintln!("could not write failure manifest: {werr}");
            }
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    match run_experiment(&cfg) {
        Ok(manifest) => {
            println!(
                "{}: {} ({} checks, {} files in {})",
                manifest.experiment,
                manifest.outcome,
                manifest.checks.len(),
                manifest.files.len(),
                cfg.output_dir.display()
            );
            for (name, check) in &manifest.checks {
                let flag = if check.pass { "pass" } else { "FAIL" };
                println!("  [{flag}] {name}: {}", check.detail);
            }
            if let Some(failure) = &manifest.failure {
                eprintln!("run aborted: {failure}");
            }
            ExitCode::from(manifest.exit_code.clamp(0, 255) as u8)
        }
        Err(e) => {
            // I/O trouble writing the manifest itself
            eprintln!("could not record the run: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
