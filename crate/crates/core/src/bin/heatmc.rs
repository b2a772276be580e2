use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use heatmc::config::ExperimentConfig;
use heatmc::runner::{run, write_failure_manifest};
use heatmc::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Validate,
    Simulate,
    Estimate,
    Couple,
    Holder,
    Envelope,
    Oracle,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Couple => "couple",
            Command::Holder => "holder",
            Command::Envelope => "envelope",
            Command::Oracle => "oracle",
        }
    }
}

/// Monte Carlo experiments on fundamental solutions of parabolic equations.
///
/// The experiment is described by a TOML file; the optional subcommand must
/// match its `experiment.kind`.
#[derive(Debug, Parser)]
#[command(name = "heatmc", version)]
struct Cli {
    command: Option<Command>,
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Output root; results go to `<out-dir>/<kind>-<hash>/`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_for(e: &Error) -> ExitCode {
    ExitCode::from(if e.is_config_error() { EXIT_CONFIG } else { EXIT_NUMERICAL })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let raw = match std::fs::read(&cli.config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {}: {e}", cli.config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let parsed = std::str::from_utf8(&raw)
        .map_err(|e| Error::Config(format!("{}: {e}", cli.config.display())))
        .and_then(|text| {
            ExperimentConfig::from_toml(text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", cli.config.display())),
                other => other,
            })
        });
    let fallback_root = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("heatmc-out"));
    let mut cfg = match parsed {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            if let Ok(dir) = write_failure_manifest(&fallback_root, &raw, &e) {
                eprintln!("manifest: {}", dir.join("manifest.json").display());
            }
            return exit_for(&e);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    let root = cli
        .out_dir
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or(fallback_root);
    let check = match cli.command {
        Some(c) if c.name() != cfg.experiment.kind() => Err(Error::Config(format!(
            "subcommand `{}` does not match experiment.kind = \"{}\"",
            c.name(),
            cfg.experiment.kind()
        ))),
        _ if cfg.workers == Some(0) => Err(Error::Config("--workers must be at least 1".into())),
        _ => Ok(()),
    };
    if let Err(e) = check {
        eprintln!("error: {e}");
        if let Ok(dir) = write_failure_manifest(&root, &raw, &e) {
            eprintln!("manifest: {}", dir.join("manifest.json").display());
        }
        return exit_for(&e);
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        pool = pool.num_threads(w);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    };
    match pool.install(|| run(&cfg, &root)) {
        Ok(out) => {
            println!("{}", out.dir.display());
            for f in &out.files {
                println!("  {f}");
            }
            ExitCode::SUCCESS
        }
        Err((dir, e)) => {
            eprintln!("error: {e}");
            if let Some(dir) = dir {
                eprintln!("manifest: {}", dir.join("manifest.json").display());
            }
            exit_for(&e)
        }
    }
}
