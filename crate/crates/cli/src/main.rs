use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use supervisor_core::config::SupervisorConfig;
use supervisor_core::decision::backend::BackendKind;
use supervisor_core::harness::{replay_file, simulate, SavingsTable, Scenario, SimBackend};
use supervisor_core::purify::{purify, purify_html, purify_text, PurifiedObservation};
use supervisor_core::service::{http, stdio, Supervisor};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "supervisor", version, about = "Step-level supervision for multi-agent traces")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for session logs.
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Decision backend: mock, scripted-replay or http-chat-completion.
    #[arg(long, global = true, value_name = "NAME")]
    backend: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Re-classify every step of a session log without calling a backend.
    Replay {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run a built-in scenario with and without supervision.
    Simulate {
        /// Scenario name, or `all`.
        scenario: String,
    },
    /// Purify a file (or `-` for stdin) and print the result.
    Purify {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Auto)]
        kind: Kind,
    },
    /// Savings table over the session logs in a directory.
    Report {
        data_dir: Option<PathBuf>,
        #[arg(long)]
        csv: bool,
    },
    /// Run the supervision service.
    Serve {
        /// Address to listen on; overrides the configuration.
        #[arg(long, conflicts_with = "stdio")]
        listen: Option<String>,
        /// Speak the line protocol on stdin/stdout instead of HTTP.
        #[arg(long)]
        stdio: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Auto,
    Html,
    Text,
}

fn load_config(cli: &Cli) -> Result<SupervisorConfig> {
    let mut cfg = match &cli.config {
        Some(path) => SupervisorConfig::load(path)?,
        None => SupervisorConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(dir) = &cli.data_dir {
        cfg.service.data_dir = Some(dir.clone());
    }
    if let Some(name) = &cli.backend {
        cfg.backend.backend_name = name.parse::<BackendKind>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_input(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).context("reading stdin")?;
        return Ok(s);
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_purify(cfg: &SupervisorConfig, file: &Path, kind: Kind) -> Result<()> {
    let text = read_input(file)?;
    let out: PurifiedObservation = match kind {
        Kind::Auto => purify(&text, &cfg.filter.report_marker),
        Kind::Html => purify_html(&text),
        Kind::Text => purify_text(&text),
    };
    print!("{}", out.content);
    if !out.content.ends_with('\n') {
        println!();
    }
    eprintln!(
        "original: {} chars, purified: {} chars, reduction: {:.2}%",
        out.original_length,
        out.purified_length,
        out.reduction() * 100.0
    );
    Ok(())
}

async fn cmd_simulate(cfg: &SupervisorConfig, name: &str, explicit_backend: bool) -> Result<()> {
    let scenarios = if name == "all" {
        Scenario::builtins()
    } else {
        match Scenario::builtin(name) {
            Some(s) => vec![s],
            None => bail!("unknown scenario `{name}` (expected one of: all, {})", builtin_names()),
        }
    };
    let backend = if explicit_backend { SimBackend::Custom(cfg.backend.build()?) } else { SimBackend::Scenario };
    for (i, s) in scenarios.iter().enumerate() {
        if i > 0 {
            println!();
        }
        let report = simulate(s, cfg, backend.clone(), cfg.service.data_dir.clone()).await?;
        println!("{report}");
    }
    Ok(())
}

fn builtin_names() -> String {
    Scenario::builtins().iter().map(|s| s.name.clone()).collect::<Vec<_>>().join(", ")
}

fn cmd_report(cfg: &SupervisorConfig, dir: Option<PathBuf>, csv: bool) -> Result<()> {
    let Some(dir) = dir.or_else(|| cfg.service.data_dir.clone()) else {
        bail!("no data directory given (pass one, or use --data-dir)");
    };
    let table = SavingsTable::load(&dir).with_context(|| format!("reading {}", dir.display()))?;
    if csv {
        for w in &table.warnings {
            eprintln!("warning: {w}");
        }
        if table.is_empty() {
            eprintln!("{}", supervisor_core::harness::report::NO_DATA);
        }
        print!("{}", table.to_csv()?);
    } else {
        print!("{}", table.to_text());
    }
    Ok(())
}

async fn cmd_serve(cfg: SupervisorConfig, listen: Option<String>, use_stdio: bool) -> Result<()> {
    let token = match &cfg.service.auth_token_env {
        Some(var) => Some(std::env::var(var).with_context(|| format!("environment variable {var} is not set"))?),
        None => None,
    };
    let listen = listen.unwrap_or_else(|| cfg.service.listen.clone());
    let supervisor = Arc::new(Supervisor::from_config(cfg)?);
    if use_stdio {
        let stdin = tokio::io::BufReader::new(tokio::io::stdin());
        stdio::run(&supervisor, stdin, tokio::io::stdout()).await?;
        return Ok(());
    }
    let listener = tokio::net::TcpListener::bind(&listen).await.with_context(|| format!("binding {listen}"))?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    eprintln!("listening on {}", listener.local_addr()?);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    http::serve(supervisor, listener, token, shutdown).await?;
    Ok(())
}

async fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Replay { file, json } => {
            let report = replay_file(&file, &cfg.filter)?;
            if json {
                for w in &report.warnings {
                    eprintln!("warning: {w}");
                }
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("{report}");
            }
        }
        Command::Simulate { scenario } => cmd_simulate(&cfg, &scenario, cli.backend.is_some()).await?,
        Command::Purify { file, kind } => cmd_purify(&cfg, &file, kind)?,
        Command::Report { data_dir, csv } => cmd_report(&cfg, data_dir, csv)?,
        Command::Serve { listen, stdio } => cmd_serve(cfg, listen, stdio).await?,
    }
    Ok(())
}

#[tokio::main]
async fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
