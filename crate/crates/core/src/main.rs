use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vlasov_lowrank::config::parse_config;
use vlasov_lowrank::runner::run;
use vlasov_lowrank::scenarios::RateFit;

#[derive(Parser)]
#[command(version, about = "Low-rank Vlasov-Poisson benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configuration in CONFIG and write its diagnostics as CSV.
    Run {
        config: PathBuf,
        /// CSV path, overriding `output` in the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Only report errors.
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    let Command::Run { config, output, quiet } = Cli::parse().command;
    let level = if quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = std::fs::read_to_string(&config)
        .map_err(vlasov_lowrank::Error::from)
        .and_then(|text| parse_config(&text))
        .and_then(|mut cfg| {
            if let Some(path) = output {
                cfg.output = path;
            }
            run(&cfg).map(|summary| (cfg, summary))
        });
    let (cfg, summary) = match outcome {
        Ok(done) => done,
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            return ExitCode::FAILURE;
        }
    };
    if quiet {
        return ExitCode::SUCCESS;
    }
    println!("{} rows written to {}", summary.rows, cfg.output.display());
    if let Some(rate) = summary.rate {
        let what = match rate.fit {
            RateFit::Growth => "growth",
            _ => "damping",
        };
        println!("{what} rate {:.5} over t in [{}, {}]", rate.value, rate.window.0, rate.window.1);
    }
    for (order, t, energy) in &summary.echo_peaks {
        println!("echo of order {order} at t = {t:.2} (electric energy {energy:.3e})");
    }
    println!(
        "max relative errors: mass {:.2e}, energy {:.2e}, l2 {:.2e}",
        summary.max_mass_err, summary.max_energy_err, summary.max_l2_err
    );
    ExitCode::SUCCESS
}
