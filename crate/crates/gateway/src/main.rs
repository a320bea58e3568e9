use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use grg_core::grg::Mode;
use grg_gateway::adapters::Backends;
use grg_gateway::commands::{self, Outcome};
use grg_gateway::config::{Config, STORE_ROOT_ENV};
use grg_gateway::error::GatewayError;
use grg_gateway::service::{self, AppState};
use serde_json::json;

/// Graph and retrieval augmented QA over communication-technology corpora.
///
/// Every command prints one JSON line with its result, then a short summary.
#[derive(Debug, Parser)]
#[command(name = "grg", version)]
struct Cli {
    /// TOML config file. Without one, defaults apply.
    #[arg(long, global = true, env = "GRG_CONFIG")]
    config: Option<PathBuf>,
    /// Store directory; overrides `store_root` from the config.
    #[arg(long, global = true, env = STORE_ROOT_ENV)]
    store_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, filter and deduplicate the documents listed in a manifest.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Chunk and embed the clean corpus.
    Index,
    /// Extract the knowledge graph from the chunks.
    Graph,
    /// Generate instruction records and training configs from the chunks.
    Forge,
    /// Answer one question.
    Query {
        /// Question text; `--text` works too.
        #[arg(required_unless_present = "text_flag", conflicts_with = "text_flag")]
        text: Option<String>,
        #[arg(long = "text", id = "text_flag", value_name = "TEXT")]
        text_flag: Option<String>,
        /// Attach a registered image by id (repeatable).
        #[arg(long = "image")]
        images: Vec<String>,
        /// base, rag or grg; defaults to `retrieval.default_mode`.
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Score a multiple-choice benchmark in one or more modes.
    Eval {
        #[arg(long)]
        benchmark: PathBuf,
        /// Repeatable; all three modes when omitted.
        #[arg(long = "mode")]
        modes: Vec<Mode>,
    },
    /// Run the HTTP service.
    Serve {
        /// Listen address; overrides `service.addr`.
        #[arg(long)]
        addr: Option<String>,
    },
}

fn run(cli: Cli) -> Result<Outcome, GatewayError> {
    let cfg = Config::load(cli.config.as_deref(), cli.store_root)?;
    let backends = Backends::from_config(&cfg)?;
    match cli.command {
        Command::Ingest { manifest } => commands::ingest(&cfg, &backends, &manifest),
        Command::Index => commands::index(&cfg, &backends),
        Command::Graph => commands::graph(&cfg, &backends),
        Command::Forge => commands::forge(&cfg, &backends),
        Command::Query { text, text_flag, images, mode } => {
            let text = text.or(text_flag).unwrap_or_default();
            let mode = mode.unwrap_or(cfg.retrieval.default_mode);
            commands::query(&cfg, &backends, &text, &images, mode)
        }
        Command::Eval { benchmark, modes } => {
            let modes = if modes.is_empty() { Mode::ALL.to_vec() } else { modes };
            commands::eval(&cfg, &backends, &benchmark, &modes)
        }
        Command::Serve { addr } => serve(cfg, backends, addr),
    }
}

fn serve(cfg: Config, backends: Backends, addr: Option<String>) -> Result<Outcome, GatewayError> {
    let addr = addr.unwrap_or_else(|| cfg.service.addr.clone());
    let rt = tokio::runtime::Runtime::new().map_err(GatewayError::pipeline)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| GatewayError::Config(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(GatewayError::pipeline)?;
        let state = Arc::new(AppState::new(cfg, backends));
        println!("{}", json!({ "command": "serve", "addr": local.to_string() }));
        eprintln!("listening on http://{local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        service::serve(state, listener, shutdown).await.map_err(GatewayError::pipeline)?;
        Ok(Outcome {
            json: json!({ "command": "serve", "stopped": true }),
            summary: "service stopped".into(),
        })
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            println!("{}", out.json);
            println!("{}", out.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}", json!({ "error": { "code": e.code(), "message": e.to_string() } }));
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
