use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rough_transport::scenario::{default_config, list_scenarios, load_config, run_scenario};

const THREADS_VAR: &str = "ROUGH_TRANSPORT_THREADS";

#[derive(Parser)]
#[command(name = "rough-transport", version, about = "Lagrangian diagnostics for the damped continuity equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario described by a JSON config.
    Run { config: PathBuf },
    /// List registered scenarios whose id contains FILTER.
    List { filter: Option<String> },
    /// Print the default config of a scenario as JSON.
    EmitDefaults { scenario_id: String },
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{THREADS_VAR} must be a positive integer, got `{raw}`"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match cli.command {
        Command::List { filter } => {
            for (id, description) in list_scenarios(filter.as_deref()) {
                println!("{id:<28} {description}");
            }
            ExitCode::SUCCESS
        }
        Command::EmitDefaults { scenario_id } => match default_config(&scenario_id) {
            Some(c) => {
                println!("{}", serde_json::to_string_pretty(&c).expect("config serializes"));
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("error: unknown scenario `{scenario_id}`; see `rough-transport list`");
                ExitCode::from(2)
            }
        },
        Command::Run { config } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let report = match run_scenario(&cfg) {
                Ok(r) => r,
                Err(e @ rough_transport::scenario::RunError::Io { .. }) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            for d in &report.diagnostics {
                let status = match (d.skipped, d.pass) {
                    (true, _) => "SKIP",
                    (false, true) => "PASS",
                    (false, false) => "FAIL",
                };
                println!("{status} {:<22} {:>8.3}s {}", d.name, d.wall_time_s, d.note.as_deref().unwrap_or(""));
                for m in &d.measurements {
                    println!("       {} = {:.6e} ({} {:e}) {}", m.quantity, m.value, m.relation, m.tolerance, if m.pass { "ok" } else { "violated" });
                }
            }
            println!("{} -> {}", report.scenario_id, cfg.output_dir.display());
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
