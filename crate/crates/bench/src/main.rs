use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glow_bench::config::ExperimentConfig;
use glow_bench::formats::{read_json, read_mdp, to_json_bytes, write_atomic, ClassFile, CoverageFile};
use glow_bench::plot::emit_plotdata;
use glow_bench::runner::{run_experiment, RunOptions, WORKERS_ENV};
use glow_bench::stats::{parse_grid, regret_slope};
use glow_bench::{BenchError, Result};
use glow_core::coverage::coverability;

#[derive(Parser)]
#[command(name = "glow-bench", version, about = "Sweeps, regret fits and coverability for glow-core")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (setting, seed) cell of a config.
    Run {
        config: PathBuf,
        /// Seeds overriding the config: `1,2,5` or a half-open range `0..100`.
        #[arg(long)]
        seeds: Option<String>,
        /// Output directory overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace every empirical mean by its exact expectation.
        #[arg(long)]
        exact: bool,
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
    },
    /// Fit log(median cumulative regret) against log T.
    Slope {
        /// Glob of run CSVs.
        pattern: String,
        #[arg(long, default_value = "64,128,256,512")]
        grid: String,
    },
    /// Write plot tables next to a manifest.
    Plotdata { manifest: PathBuf },
    /// Coverability of a policy (or value) class on an MDP.
    Coverability {
        mdp: PathBuf,
        class: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = |e: std::num::ParseIntError| BenchError::Config(format!("--seeds {text:?}: {e}"));
    if let Some((lo, hi)) = text.split_once("..") {
        let (lo, hi) = (lo.trim().parse::<u64>().map_err(bad)?, hi.trim().parse::<u64>().map_err(bad)?);
        return Ok((lo..hi).collect());
    }
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',').map(|s| s.trim().parse::<u64>().map_err(bad)).collect()
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seeds,
            out,
            exact,
            workers,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)?;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.exact |= exact;
            let manifest = run_experiment(cfg, RunOptions { workers })?;
            println!(
                "{} cells, manifest at {}",
                manifest.cells.len(),
                manifest.config.output_dir.join(glow_bench::runner::MANIFEST_NAME).display()
            );
        }
        Command::Slope { pattern, grid } => {
            let grid = parse_grid(&grid)?;
            let paths = glob::glob(&pattern)
                .map_err(|e| BenchError::Format(format!("{pattern}: {e}")))?
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| BenchError::Format(e.to_string()))?;
            if paths.is_empty() {
                return Err(BenchError::Format(format!("{pattern} matches no files")));
            }
            let (medians, fit) = regret_slope(&paths, &grid)?;
            for (t, m) in grid.iter().zip(&medians) {
                println!("T={t}\tmedian_cum_regret={m}");
            }
            match fit {
                Some(f) => println!("slope={}\tintercept={}\tr2={}", f.slope, f.intercept, f.r2),
                None => println!("slope=none\t(nonpositive median regret)"),
            }
        }
        Command::Plotdata { manifest } => {
            let out = emit_plotdata(&manifest)?;
            for p in &out.written {
                println!("{}", p.display());
            }
            for s in &out.skipped {
                eprintln!("skipped {s}");
            }
        }
        Command::Coverability { mdp, class, out } => {
            let mdp = read_mdp(&mdp)?;
            let file: ClassFile = read_json(&class)?;
            if file.shape() != (mdp.num_states(), mdp.num_actions(), mdp.horizon()) {
                return Err(BenchError::Format("class does not match the MDP's sizes".into()));
            }
            let report = coverability(&mdp, &file.into_policy_class()?)?;
            let bytes = to_json_bytes(&CoverageFile::from(&report));
            if let Some(path) = out {
                write_atomic(&path, &bytes)?;
            }
            print!("{}", String::from_utf8(bytes).expect("json is utf-8"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
