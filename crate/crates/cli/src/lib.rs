//! Command-line front end: embedding, extraction, analysis and the scored
//! experiment suite.
//!
//! Exit codes: 0 success, 1 I/O or parse error, 2 capacity exceeded,
//! 3 corrupt stream or wrong keys, 64 usage error.

pub mod commands;
pub mod config;
pub mod exit;
pub mod experiments;

use std::path::Path;

use clap::{Parser, ValueEnum};
use serde_json::{json, Value};

use config::{BenchArgs, Cli, Command};
use exit::Failure;

fn emit(report: &Value, path: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(report)? + "\n";
    match path {
        Some(p) => commands::write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Parses `args` (program name first) and runs it in-process.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli.command),
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            code
        }
    }
}

/// Runs one subcommand, writing its report, and returns the exit code.
pub fn run(command: &Command) -> i32 {
    let (result, report_path) = match command {
        Command::Embed(a) => (commands::embed(a), a.report.as_deref()),
        Command::Extract(a) => (commands::extract(a), a.report.as_deref()),
        Command::Analyze(a) => (commands::analyze(a), a.report.as_deref()),
        Command::Bench(a) => return finish(bench(a)),
    };
    let result = result.and_then(|report| emit(&report, report_path));
    match result {
        Err(Failure::Capacity {
            capacity,
            required,
            report,
        }) => {
            eprintln!("error: message needs {required} bits, capacity is {capacity}");
            match emit(&report, report_path) {
                Ok(()) => exit::CAPACITY,
                Err(e) => finish(Err(e)),
            }
        }
        other => finish(other),
    }
}

fn finish(result: Result<(), Failure>) -> i32 {
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

/// `bench`: runs the selected suites, writes `results.json` and the side
/// files into the output directory and prints one line per criterion.
/// Criterion failures are reported, not fatal.
pub fn bench(a: &BenchArgs) -> Result<(), Failure> {
    std::fs::create_dir_all(&a.out)?;
    let covers = match &a.corpus {
        Some(dir) => experiments::Covers::from_dir(dir)?,
        None => experiments::Covers::Synthetic,
    };
    let scale = if a.quick {
        experiments::Scale::quick()
    } else {
        experiments::Scale::full()
    };
    let exe = std::env::args_os().next().unwrap_or_default();
    let runner = move |args: &[String]| run_args(std::iter::once(exe.clone()).chain(args.iter().map(Into::into)));
    let outcome = experiments::run_suites(&[a.suite], &covers, &scale, a.seed, &a.out, &runner);
    for v in &outcome.verdicts {
        println!("{}", v.line());
    }
    for (name, contents) in &outcome.files {
        commands::write(&a.out.join(name), contents.as_bytes())?;
    }
    let passed = outcome.verdicts.iter().filter(|v| v.passed).count();
    println!("{passed}/{} criteria passed", outcome.verdicts.len());
    let results = json!({
        "suite": a.suite.to_possible_value().map(|v| v.get_name().to_owned()),
        "seed": a.seed,
        "corpus": covers.describe(),
        "scale": scale,
        "passed": passed,
        "criteria": outcome.verdicts,
    });
    commands::write(
        &a.out.join("results.json"),
        (serde_json::to_string_pretty(&results)? + "\n").as_bytes(),
    )
}
