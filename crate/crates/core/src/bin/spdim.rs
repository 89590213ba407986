use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use spdim::generative::{simulate_problem, GenerativeConfig};
use spdim::io::save_dataset;
use spdim::sim::{
    check_propositions, grad_check, mean_accuracy, run_experiment, write_results_csv,
    ExperimentConfig, GradCheckConfig, PropositionConfig, Report,
};

#[derive(Parser)]
#[command(
    name = "spdim",
    version,
    about = "SPD domain adaptation under label shift"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config for the subcommand; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the number of seeds (simulate) or the base seed (other commands).
    #[arg(long, global = true)]
    seeds: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
    /// Print machine-readable output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the label-shift grid and write per-run results as CSV.
    Simulate,
    /// Verify the alignment propositions on synthetic fixtures.
    CheckProps,
    /// Compare analytic gradients with finite differences.
    GradCheck,
    /// Write one simulated source/target problem as a dataset CSV.
    GenData,
}

fn load<T: DeserializeOwned + Default>(
    path: &Option<PathBuf>,
) -> Result<T, Box<dyn std::error::Error>> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn emit_report(report: &Report, cli: &Cli) -> Result<bool, Box<dyn std::error::Error>> {
    if cli.json {
        println!("{}", serde_json::to_string_pretty(report)?);
    } else if !cli.quiet {
        print!("{report}");
    }
    Ok(report.all_passed())
}

fn run(cli: &Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Simulate => {
            let mut cfg: ExperimentConfig = load(&cli.config)?;
            if let Some(n) = cli.seeds {
                cfg.n_seeds = n as usize;
            }
            if cli.out.is_some() {
                cfg.output_path = cli.out.clone();
            }
            let rows = run_experiment(&cfg)?;
            match &cfg.output_path {
                Some(p) => write_results_csv(&rows, fs::File::create(p)?)?,
                None if !cli.json => write_results_csv(&rows, std::io::stdout().lock())?,
                None => {}
            }
            let failures = rows.iter().filter(|r| !r.is_ok()).count();
            let summary: Vec<_> = cfg
                .label_ratios
                .iter()
                .flat_map(|&lr| cfg.methods.iter().map(move |&m| (lr, m)))
                .map(|(lr, m)| (lr, m, mean_accuracy(&rows, m, lr)))
                .collect();
            if cli.json {
                let v: Vec<_> = summary
                    .iter()
                    .map(|(lr, m, a)| serde_json::json!({"label_ratio": lr, "method": m, "mean_balanced_accuracy": a}))
                    .collect();
                println!(
                    "{}",
                    serde_json::json!({"rows": rows.len(), "failures": failures, "summary": v})
                );
            } else if !cli.quiet {
                for (lr, m, a) in &summary {
                    match a {
                        Some(a) => eprintln!("label_ratio={lr:<5} {m:<15} mean BA {a:.4}"),
                        None => eprintln!("label_ratio={lr:<5} {m:<15} no successful runs"),
                    }
                }
                eprintln!("{} rows, {failures} failed", rows.len());
            }
            Ok(failures == 0)
        }
        Command::CheckProps => {
            let mut cfg: PropositionConfig = load(&cli.config)?;
            if let Some(s) = cli.seeds {
                cfg.seed = s;
            }
            emit_report(&check_propositions(&cfg), cli)
        }
        Command::GradCheck => {
            let mut cfg: GradCheckConfig = load(&cli.config)?;
            if let Some(s) = cli.seeds {
                cfg.seed = s;
            }
            emit_report(&grad_check(&cfg), cli)
        }
        Command::GenData => {
            let mut cfg: GenerativeConfig = load(&cli.config)?;
            if let Some(s) = cli.seeds {
                cfg.seed = s;
            }
            let out = cli.out.clone().ok_or("gen-data needs --out")?;
            let problem = simulate_problem(&cfg)?;
            let mut all = problem.sources.clone();
            all.push(problem.target.clone());
            save_dataset(&out, &all, &cfg)?;
            if !cli.quiet {
                eprintln!("wrote {} domains to {}", all.len(), out.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
