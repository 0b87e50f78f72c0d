//! `powertalk-sim`: runs one scenario pipeline and writes its artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use powertalk_core::sim::{load_scenario, run, Command, SHIPPED};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "powertalk-sim", version, about = "Power talk co-simulator for DC microgrids")]
struct Cli {
    #[arg(value_parser = ["solve", "ber", "dispatch-sweep", "jam-demo"])]
    command: String,
    /// Scenario file, or one of the shipped names (eq1, fig5b, fig6).
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write slot-level power-talk traces.
    #[arg(long)]
    trace: bool,
}

fn execute(cli: &Cli) -> anyhow::Result<serde_json::Value> {
    let command: Command = cli.command.parse()?;
    let scenario = load_scenario(&cli.scenario)
        .with_context(|| format!("loading scenario {}", cli.scenario.display()))?;
    let seed = cli.seed.unwrap_or(scenario.seed);
    log::info!("{command} on {} with seed {seed}", cli.scenario.display());
    let artifacts = run(command, &scenario, seed, &cli.out, cli.trace)?;
    Ok(json!({
        "status": "ok",
        "command": command.name(),
        "seed": seed,
        "out": artifacts.dir,
        "files": artifacts.manifest.files,
        "wall_time_seconds": artifacts.manifest.wall_time_seconds,
    }))
}

fn error_line(kind: &str, message: String) -> String {
    json!({ "status": "error", "kind": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let hint = format!("{}; shipped scenarios: {}", e.kind(), SHIPPED.join(", "));
            eprintln!("{}", error_line("usage", format!("{} ({hint})", e.to_string().lines().next().unwrap_or(""))));
            return ExitCode::from(2);
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<powertalk_core::Error>())
                .map_or("internal", |c| c.kind());
            eprintln!("{}", error_line(kind, format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
