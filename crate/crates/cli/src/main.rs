//! Command-line driver for scenario runs, sweeps, kernel checks and field norms.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use transdiff::runner::{self, RunReport, StageStatus};
use transdiff::verify::Certificate;

#[derive(Parser)]
#[command(name = "transdiff", version, about = "Transport-diffusion laboratory")]
struct Cli {
    /// Print the full JSON report instead of the summary.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run { config: PathBuf },
    /// Run a scenario once per value of a numeric config entry.
    Sweep {
        config: PathBuf,
        /// Dotted path of the swept entry, e.g. `kernel.alpha`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
    /// Certify the kernel bounds and the symbol bounds of a scenario.
    CheckKernel { config: PathBuf },
    /// Evaluate norms of the fields in a field file.
    Norms {
        field_file: PathBuf,
        /// Comma-separated norms: l1, l2, linf, lp:P, holder:G, holder-semi:G, besov:S:P, sobolev:S:P, morrey:Q:A.
        #[arg(long)]
        spec: String,
    },
}

const EXIT_FAIL: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn print_certificates(certs: &[Certificate]) {
    for c in certs {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {:<28} worst margin {:+.3e}", c.name, c.worst_margin());
    }
}

fn print_run(r: &RunReport) {
    println!("scenario {} (seed {}, digest {})", r.name, r.seed, &r.scenario_digest[..12]);
    for s in &r.stages {
        if s.status != StageStatus::Ok {
            let status = if s.status == StageStatus::Failed { "FAILED" } else { "skipped" };
            println!("stage {} {status}: {}", s.name, s.detail.as_deref().unwrap_or(""));
        }
    }
    print_certificates(&r.certificates);
}

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    runner::configure_workers();
    let result = match cli.command {
        Command::Run { config } => runner::run(&config).map(|(out, dir)| {
            if cli.json {
                println!("{}", json(&out.report));
            } else {
                print_run(&out.report);
                println!("artifacts {}", dir.display());
            }
            verdict(out.report.pass)
        }),
        Command::Sweep { config, axis, values } => runner::parse_values(&values)
            .and_then(|vals| runner::sweep(&config, &axis, &vals))
            .map(|(rep, dir)| {
                if cli.json {
                    println!("{}", json(&rep));
                } else {
                    for p in &rep.points {
                        let v = if p.report.pass { "PASS" } else { "FAIL" };
                        println!("{v} {axis} = {}", p.value);
                    }
                    println!("artifacts {}", dir.display());
                }
                verdict(rep.pass)
            }),
        Command::CheckKernel { config } => runner::check_kernel(&config).map(|rep| {
            if cli.json {
                println!("{}", json(&rep));
            } else {
                println!("kernel {}", rep.kernel_id);
                print_certificates(&rep.certificates);
            }
            verdict(rep.pass)
        }),
        Command::Norms { field_file, spec } => runner::field_norms(&field_file, &spec).map(|rows| {
            println!("{}", json(&rows));
            ExitCode::SUCCESS
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
