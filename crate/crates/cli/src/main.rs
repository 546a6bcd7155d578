//! `horolab` command-line runner.
//!
//! Exit codes: 0 all checks pass, 1 some check failed, 2 usage error,
//! 3 configuration error, 4 numerical failure, 5 output could not be written.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use horolab::experiment::{self, ExperimentConfig};
use horolab::report::Report;
use horolab::Error;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_OUTPUT: u8 = 5;

#[derive(Parser)]
#[command(name = "horolab", version, about = "Run geometry experiments from JSON configurations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file or a built-in experiment name.
    Run {
        config: String,
        /// Override the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the report and tables.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the JSON report to stdout instead of the check table.
        #[arg(long)]
        json: bool,
        /// Also write SVG plots of each table.
        #[arg(long)]
        plots: bool,
    },
    /// List built-in profiles, surfaces and experiments.
    ListBuiltins {
        #[arg(long)]
        json: bool,
    },
    /// Run every built-in experiment.
    VerifyAll {
        #[arg(long)]
        seed: Option<u64>,
        /// Write every report into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn error_code(e: &Error) -> u8 {
    if e.is_config() {
        EXIT_CONFIG
    } else if matches!(e, Error::Io(_)) {
        EXIT_OUTPUT
    } else {
        EXIT_NUMERIC
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(error_code(e))
}

fn load(config: &str) -> Result<ExperimentConfig, Error> {
    let path = Path::new(config);
    if !path.exists() {
        if let Some(c) = experiment::builtin_experiment(config) {
            return Ok(c);
        }
    }
    ExperimentConfig::load(path)
}

fn print_checks(rep: &Report) {
    for c in &rep.records {
        let cert = c.certificate.map(|v| format!("  cert {v:.3e}")).unwrap_or_default();
        println!(
            "{}  {:<70} residual {:>11.3e}  bound {:>9.2e}{cert}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.residual,
            c.bound
        );
    }
    let s = &rep.summary;
    println!(
        "{}: {}/{} checks passed, worst {} (severity {:.3e})",
        rep.name,
        s.passed,
        s.total,
        s.worst_check.as_deref().unwrap_or("-"),
        s.worst_severity
    );
}

fn run(config: &str, seed: Option<u64>, out: Option<PathBuf>, json: bool, plots: bool) -> ExitCode {
    let mut cfg = match load(config) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let rep = match experiment::run(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let dir = out.or_else(|| cfg.output_dir.as_ref().map(PathBuf::from));
    if let Some(dir) = dir {
        if let Err(e) = rep.write(&dir, plots || cfg.plots) {
            return fail(&e);
        }
    }
    if json {
        match rep.to_json() {
            Ok(s) => println!("{s}"),
            Err(e) => return fail(&e),
        }
    } else {
        print_checks(&rep);
    }
    if rep.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}

fn list_builtins(json: bool) -> ExitCode {
    let cat = experiment::builtins();
    if json {
        println!("{}", serde_json::to_string_pretty(&cat).expect("catalog serializes"));
    } else {
        for e in &cat {
            println!("{:<11} {:<20} {}", e.category, e.name, e.description);
        }
    }
    ExitCode::SUCCESS
}

fn verify_all(seed: Option<u64>, out: Option<PathBuf>, json: bool) -> ExitCode {
    let mut ok = true;
    let mut reports = Vec::new();
    for mut cfg in experiment::builtin_experiments() {
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let start = Instant::now();
        let rep = match experiment::run(&cfg) {
            Ok(r) => r,
            Err(e) => return fail(&e),
        };
        if let Some(dir) = &out {
            if let Err(e) = rep.write(dir, false) {
                return fail(&e);
            }
        }
        ok &= rep.all_pass();
        if !json {
            print_checks(&rep);
            eprintln!("{} finished in {:.1} s", rep.name, start.elapsed().as_secs_f64());
        }
        reports.push(rep);
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            json,
            plots,
        } => run(&config, seed, out, json, plots),
        Command::ListBuiltins { json } => list_builtins(json),
        Command::VerifyAll { seed, out, json } => verify_all(seed, out, json),
    }
}
