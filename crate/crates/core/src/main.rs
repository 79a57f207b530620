//! Command-line entry point.
//!
//! Subcommands: run, verify, cycles, plot-data.
//! Flags: --config PATH, --seed N, --threads N, --out-dir DIR.
//! Exit codes: 0 pass, 1 check failed, 2 config error, 3 runtime abort.

use dvbolt::cli::{self, Scenario};
use dvbolt::Error;
use std::path::PathBuf;
use std::process::ExitCode;

struct Args {
    command: String,
    config: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
    out_dir: Option<PathBuf>,
}

fn usage() -> String {
    "usage: dvbolt <run|verify|cycles|plot-data> [--config PATH] [--seed N] \
     [--threads N] [--out-dir DIR]\n\
     The out directory defaults to $DVBOLT_OUT_DIR, then ./dvbolt-out."
        .to_string()
}

fn parse_args(mut argv: std::env::Args) -> Result<Args, String> {
    let _ = argv.next();
    let command = argv.next().ok_or_else(usage)?;
    let mut args = Args {
        command,
        config: None,
        seed: None,
        threads: None,
        out_dir: None,
    };
    while let Some(flag) = argv.next() {
        let mut value = || argv.next().ok_or(format!("flag {flag} needs a value"));
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(value()?)),
            "--seed" => {
                args.seed = Some(value()?.parse().map_err(|e| format!("--seed: {e}"))?)
            }
            "--threads" => {
                args.threads = Some(value()?.parse().map_err(|e| format!("--threads: {e}"))?)
            }
            "--out-dir" => args.out_dir = Some(PathBuf::from(value()?)),
            other => return Err(format!("unknown flag {other}\n{}", usage())),
        }
    }
    Ok(args)
}

fn load_scenario(args: &Args) -> Result<Scenario, Error> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(vec![format!("{}: {e}", path.display())]))?,
        None => String::new(),
    };
    let mut scenario = cli::parse_scenario(&text)?;
    if let Some(seed) = args.seed {
        scenario.rng.seed = seed;
    }
    Ok(scenario)
}

fn out_dir(args: &Args, scenario_name: &str) -> PathBuf {
    if let Some(dir) = &args.out_dir {
        return dir.clone();
    }
    let base = std::env::var(cli::OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from("dvbolt-out"));
    if scenario_name.is_empty() {
        base
    } else {
        base.join(scenario_name)
    }
}

fn main() -> ExitCode {
    let args = match parse_args(std::env::args()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    if let Some(threads) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("thread pool: {e}");
            return ExitCode::from(3);
        }
    }

    match args.command.as_str() {
        "run" | "verify" | "cycles" => {
            let mut scenario = match load_scenario(&args) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            match args.command.as_str() {
                "verify" => scenario.solver.march = false,
                "cycles" => {
                    scenario.solver.march = false;
                    scenario.checks.list = vec!["cycle_bound".into()];
                }
                _ => {}
            }
            let dir = out_dir(&args, &scenario.name);
            match cli::run_scenario(&scenario, &dir) {
                Ok(summary) => {
                    for check in &summary.checks {
                        println!(
                            "{} {}",
                            if check.pass { "PASS" } else { "FAIL" },
                            check.name
                        );
                    }
                    if summary.marched {
                        println!(
                            "march finished: {} diagnostics rows, {} clipped negatives",
                            summary.rows.len(),
                            summary.clipped_total
                        );
                    }
                    println!("artifacts in {}", summary.out_dir.display());
                    if summary.all_pass() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(Error::ConfigInvalid(problems)) => {
                    for p in problems {
                        eprintln!("config: {p}");
                    }
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("run aborted: {e}");
                    ExitCode::from(3)
                }
            }
        }
        "plot-data" => {
            let dir = out_dir(&args, "");
            let dir = args.config.clone().unwrap_or(dir);
            match cli::emit_plot_data(&dir) {
                Ok(path) => {
                    println!("wrote {}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("plot-data: {e}");
                    ExitCode::from(3)
                }
            }
        }
        other => {
            eprintln!("unknown command {other}\n{}", usage());
            ExitCode::from(2)
        }
    }
}
