//! Experiment runner for control-based continuation studies.
//!
//! Subcommands: `run` (CBC continuation), `oracle` (model-aware reference
//! branches), `knots` (standalone free-knot fitting), `noise-compare`
//! (discretisation robustness under measurement noise), `plot` (SVG
//! overlays). Exit codes: 0 success, 2 config error, 3 continuation
//! terminated abnormally, 4 I/O error.

mod config;
mod output;
mod plot;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "\
usage: cbc <subcommand> [flags]

subcommands:
  run            run a CBC continuation      --config <path> --out <dir> [--seed <u64>] [--verbose]
  oracle         reference shooting branch   --config <path> --out <dir> [--verbose]
  knots          standalone free-knot fit    --samples <path> --coefficients <n> --out <dir>
                                             [--restarts <n>] [--seed <u64>]
  noise-compare  spline vs Fourier with      --config <path> --out <dir> [--seeds <n>] [--verbose]
                 noisy measurements
  plot           overlay branch/oracle CSVs  --branch <csv> [--branch <csv>...] [--oracle <csv>]
                                             --out <file.svg>
";

struct Flags {
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    verbose: bool,
    samples: Option<PathBuf>,
    coefficients: Option<usize>,
    restarts: Option<usize>,
    seeds: Option<usize>,
    branches: Vec<PathBuf>,
    oracle: Option<PathBuf>,
}

fn parse_flags(args: &[String]) -> Result<Flags, String> {
    let mut flags = Flags {
        config: None,
        out: None,
        seed: None,
        verbose: false,
        samples: None,
        coefficients: None,
        restarts: None,
        seeds: None,
        branches: Vec::new(),
        oracle: None,
    };
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        let mut take = || {
            iter.next()
                .cloned()
                .ok_or_else(|| format!("flag {arg} needs a value"))
        };
        match arg.as_str() {
            "--config" => flags.config = Some(PathBuf::from(take()?)),
            "--out" => flags.out = Some(PathBuf::from(take()?)),
            "--seed" => {
                flags.seed = Some(
                    take()?
                        .parse()
                        .map_err(|_| "--seed expects an unsigned integer".to_string())?,
                )
            }
            "--verbose" => flags.verbose = true,
            "--samples" => flags.samples = Some(PathBuf::from(take()?)),
            "--coefficients" => {
                flags.coefficients = Some(
                    take()?
                        .parse()
                        .map_err(|_| "--coefficients expects an integer".to_string())?,
                )
            }
            "--restarts" => {
                flags.restarts = Some(
                    take()?
                        .parse()
                        .map_err(|_| "--restarts expects an integer".to_string())?,
                )
            }
            "--seeds" => {
                flags.seeds = Some(
                    take()?
                        .parse()
                        .map_err(|_| "--seeds expects an integer".to_string())?,
                )
            }
            "--branch" => flags.branches.push(PathBuf::from(take()?)),
            "--oracle" => flags.oracle = Some(PathBuf::from(take()?)),
            other => return Err(format!("unknown flag `{other}`")),
        }
    }
    Ok(flags)
}

fn load_config(flags: &Flags) -> Result<(config::ExperimentConfig, String), ExitCode> {
    let Some(path) = &flags.config else {
        eprintln!("error: --config is required");
        return Err(ExitCode::from(2));
    };
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return Err(ExitCode::from(4));
        }
    };
    match config::parse_config_str(&text) {
        Ok(mut cfg) => {
            if let Some(seed) = flags.seed {
                cfg.seed = seed;
                cfg.knots.seed = cbc_core::rng::derive_seed(seed, "knots");
            }
            Ok((cfg, text))
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(2))
        }
    }
}

fn require_out(flags: &Flags) -> Result<PathBuf, ExitCode> {
    flags.out.clone().ok_or_else(|| {
        eprintln!("error: --out is required");
        ExitCode::from(2)
    })
}

fn finish(result: anyhow::Result<i32>) -> ExitCode {
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let io_like = e
                .chain()
                .any(|c| c.downcast_ref::<std::io::Error>().is_some());
            ExitCode::from(if io_like { 4 } else { 3 })
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(subcommand) = args.first() else {
        eprint!("{USAGE}");
        return ExitCode::from(2);
    };
    let flags = match parse_flags(&args[1..]) {
        Ok(flags) => flags,
        Err(msg) => {
            eprintln!("error: {msg}");
            eprint!("{USAGE}");
            return ExitCode::from(2);
        }
    };

    match subcommand.as_str() {
        "run" => {
            let (cfg, text) = match load_config(&flags) {
                Ok(pair) => pair,
                Err(code) => return code,
            };
            let out = match require_out(&flags) {
                Ok(out) => out,
                Err(code) => return code,
            };
            finish(runner::run_experiment(&cfg, &text, &out, flags.verbose))
        }
        "oracle" => {
            let (cfg, _) = match load_config(&flags) {
                Ok(pair) => pair,
                Err(code) => return code,
            };
            let out = match require_out(&flags) {
                Ok(out) => out,
                Err(code) => return code,
            };
            finish(runner::run_oracle(&cfg, &out, flags.verbose))
        }
        "knots" => {
            let Some(samples) = &flags.samples else {
                eprintln!("error: --samples is required");
                return ExitCode::from(2);
            };
            let Some(coefficients) = flags.coefficients else {
                eprintln!("error: --coefficients is required");
                return ExitCode::from(2);
            };
            let out = match require_out(&flags) {
                Ok(out) => out,
                Err(code) => return code,
            };
            finish(runner::run_knot_fit(
                samples,
                coefficients,
                flags.restarts.unwrap_or(20),
                flags.seed.unwrap_or(0),
                &out,
            ))
        }
        "noise-compare" => {
            let (mut cfg, _) = match load_config(&flags) {
                Ok(pair) => pair,
                Err(code) => return code,
            };
            if cfg.noise_variance == 0.0 {
                cfg.noise_variance = 0.1;
            }
            let out = match require_out(&flags) {
                Ok(out) => out,
                Err(code) => return code,
            };
            finish(runner::run_noise_compare(
                &cfg,
                &out,
                flags.seeds.unwrap_or(20),
                flags.verbose,
            ))
        }
        "plot" => {
            if flags.branches.is_empty() {
                eprintln!("error: at least one --branch is required");
                return ExitCode::from(2);
            }
            let out = match require_out(&flags) {
                Ok(out) => out,
                Err(code) => return code,
            };
            finish(runner::run_plot(
                &flags.branches,
                flags.oracle.as_deref(),
                &out,
            ))
        }
        other => {
            eprintln!("error: unknown subcommand `{other}`");
            eprint!("{USAGE}");
            ExitCode::from(2)
        }
    }
}
