use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use assembly_engine::service::{self, server, ServiceError};

#[derive(Parser)]
#[command(name = "assembly-engine", version, about = "Guided assembly engine: headless runs, replay checks and a client server")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario headless and write events.jsonl, metrics.json and timing.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
        /// Replay the fresh log and check it reproduces.
        #[arg(long)]
        verify: bool,
    },
    /// Serve clients over length-prefixed TCP and optionally WebSocket.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long)]
        ws_bind: Option<String>,
        /// Write each session's event log here on disconnect.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Replay an event log and compare it line by line.
    Verify { log: PathBuf },
    /// Run a scenario repeatedly and print per-frame latency figures.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 3)]
        runs: u32,
    },
}

fn exit_code(e: &ServiceError) -> u8 {
    match e {
        ServiceError::ScenarioInvalid(_) | ServiceError::Io { .. } => 2,
        ServiceError::ReplayDiverged { .. } => 3,
        _ => 1,
    }
}

fn run(cmd: Cmd) -> Result<(), ServiceError> {
    match cmd {
        Cmd::Run { scenario, out, seed_override, verify } => {
            let mut sc = service::load_scenario(&scenario)?;
            if let Some(seed) = seed_override {
                sc.seed = seed;
            }
            let report = service::run_headless(sc)?;
            service::write_report(&report, &out)?;
            let m = &report.metrics;
            println!(
                "{}: {} frames, {} steps done, {} remaining, {} replans, state {}",
                m.name, m.frames, m.steps_completed, m.steps_remaining, m.replans, m.state_hash
            );
            if verify {
                let hash = service::verify_log(&report.log)?;
                println!("replay ok: {hash}");
            }
        }
        Cmd::Serve { bind, ws_bind, log_dir } => {
            server::serve(bind.as_str(), ws_bind.as_deref(), log_dir)
                .map_err(|source| ServiceError::Io { path: PathBuf::from(&bind), source })?;
        }
        Cmd::Verify { log } => {
            let hash = service::verify_file(&log)?;
            println!("replay ok: {hash}");
        }
        Cmd::Bench { scenario, runs } => {
            let sc = service::load_scenario(&scenario)?;
            for i in 0..runs.max(1) {
                let report = service::run_headless(sc.clone())?;
                let t = &report.timing;
                println!(
                    "run {i}: {} frames, p50 {} us, p99 {} us, max {} us, wall {:.2} s",
                    t.frames, t.latency_p50_us, t.latency_p99_us, t.latency_max_us, t.wall_time_s
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ASSEMBLY_ENGINE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
