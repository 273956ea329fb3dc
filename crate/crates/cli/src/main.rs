use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use chainpass::scenario::{self, RunOptions, Scenario, ScenarioError};
use chainpass::server::parse_store;
use chainpass::simnet::{AdversaryPolicy, Network, SimConfig, UserAction};
use chainpass::tsp::SimId;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "chainpass", version, about = "Run protocol scenarios on the simulated network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a built-in scenario by name, or a scenario file.
    Run {
        /// Built-in name or path to a .toml scenario file.
        scenario: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        chain_length: Option<u32>,
        #[arg(long, value_enum, default_value_t = LogLevel::Info)]
        log_level: LogLevel,
        /// Directory to write each server's account store into.
        #[arg(long)]
        store_path: Option<PathBuf>,
        /// Deliberately weaken the servers.
        #[arg(long, value_enum)]
        weaken: Vec<Weakening>,
    },
    /// Walk one user through registration, login, phone loss and recovery.
    Demo {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// List the built-in scenarios.
    ListScenarios,
    /// Inspect a persisted server store.
    Store {
        #[command(subcommand)]
        command: StoreCommand,
    },
}

#[derive(Subcommand)]
enum StoreCommand {
    /// Print the accounts in a store file. Secrets are not printed.
    Dump { path: PathBuf },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LogLevel {
    /// Verdict line only.
    Quiet,
    /// Transcript and verdict.
    Info,
    /// Transcript, verdict, notes and final stores.
    Trace,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Weakening {
    /// Servers issue the same challenge nonce every time.
    ConstantNonce,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, chain_length, log_level, store_path, weaken } => {
            let options = RunOptions {
                seed,
                chain_length,
                constant_nonce: weaken.contains(&Weakening::ConstantNonce),
                ..RunOptions::default()
            };
            run(&scenario, &options, log_level, store_path.as_deref())
        }
        Command::Demo { seed } => demo(seed),
        Command::ListScenarios => {
            for name in scenario::list_scenarios() {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Store { command: StoreCommand::Dump { path } } => dump(&path),
    };
    result.unwrap_or_else(|message| {
        eprintln!("error: {message}");
        ExitCode::from(EXIT_USAGE)
    })
}

fn load(target: &str, options: &RunOptions) -> Result<Scenario, ScenarioError> {
    let path = Path::new(target);
    if path.extension().is_some_and(|e| e == "toml") || path.is_file() {
        scenario::load_scenario_file(path)
    } else {
        scenario::builtin(target, options)
    }
}

fn run(target: &str, options: &RunOptions, level: LogLevel, store_path: Option<&Path>) -> Result<ExitCode, String> {
    if options.chain_length.is_some_and(|n| n < 2) {
        return Err("--chain-length must be at least 2".into());
    }
    let scenario = load(target, options).map_err(|e| e.to_string())?;
    let report = scenario::run_scenario(&scenario, options).map_err(|e| e.to_string())?;

    if level != LogLevel::Quiet {
        print!("{}", report.transcript.render());
    }
    if level == LogLevel::Trace {
        for note in &report.verdict.notes {
            println!("# note {note}");
        }
        println!("# kiosk_log {} bytes", report.kiosk_log.len());
        for (server, text) in &report.stores {
            println!("# store {server}");
            for line in text.lines() {
                println!("#   {line}");
            }
        }
    } else if !report.verdict.pass {
        for note in &report.verdict.notes {
            eprintln!("{note}");
        }
    }
    println!("{}", report.verdict);

    if let Some(dir) = store_path {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        for (server, text) in &report.stores {
            let file = dir.join(format!("{server}.store"));
            std::fs::write(&file, text).map_err(|e| format!("{}: {e}", file.display()))?;
        }
    }
    Ok(if report.verdict.pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAIL) })
}

fn demo(seed: u64) -> Result<ExitCode, String> {
    let roster = scenario::standard_roster();
    let server = roster.servers[0].server_id.clone();
    let config = SimConfig { seed, ..SimConfig::default() };
    let mut net = Network::new("demo", config, roster, AdversaryPolicy::passive()).map_err(|e| e.to_string())?;
    let phases = [
        ("registration", vec![UserAction::Register(server.clone())]),
        ("login", vec![UserAction::Login(server.clone())]),
        ("phone lost and replaced", vec![UserAction::LosePhone, UserAction::ReplacePhone(SimId::new("sim-alice-2"))]),
        ("recovery", vec![UserAction::Recover(server.clone())]),
        ("login after recovery", vec![UserAction::Login(server.clone())]),
    ];
    println!("# seed {seed}");
    let mut shown = 0;
    for (title, actions) in phases {
        println!("== {title} ==");
        for action in &actions {
            net.perform(action).map_err(|e| e.to_string())?;
        }
        for entry in &net.transcript().entries[shown..] {
            println!("{entry}");
        }
        shown = net.transcript().entries.len();
    }
    let transcript = net.finish();
    for line in transcript.render().lines().filter(|l| l.starts_with("# final")) {
        println!("{line}");
    }
    Ok(ExitCode::SUCCESS)
}

fn dump(path: &Path) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let records = parse_store(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    println!("{:<16} {:<16} {:<10} {:>6} {:>6}  seed", "user", "phone", "status", "next", "N");
    for r in records {
        println!(
            "{:<16} {:<16} {:<10} {:>6} {:>6}  {}",
            r.user_id(),
            r.user_phone().as_str(),
            r.status().as_str(),
            r.next_index(),
            r.chain_length(),
            hex::encode(r.seed().as_bytes()),
        );
    }
    Ok(ExitCode::SUCCESS)
}
