use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{ArgAction, Parser, Subcommand};
use serde_json::json;

use retina_rag::gateway::mock::MockEmbedder;
use retina_rag::gateway::server::{serve_mock_models, MockBackends};
use retina_rag::gateway::Embedder;
use retina_rag::kb::{attach_texts, build_index, parse_kb, save_index, VectorIndex};
use retina_rag::pipeline::{Backends, DatasetManifest, Pipeline, RunConfig};
use retina_rag::prediction::{DiagnosticPrediction, DrGrade};
use retina_rag::retrieval::{retrieve_top_k, serialize_query, QueryEmbedding, DEFAULT_K};
use retina_rag::service;

/// Classifier-guided retrieval-augmented report generation for fundus images.
#[derive(Debug, Parser)]
#[command(name = "retina-rag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Knowledge-base index tools.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Class-matched top-k retrieval for a given prediction.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        /// Predicted DR grade, 0 to 4.
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=4))]
        grade: u8,
        /// Predicted macular edema (true or false).
        #[arg(long, action = ArgAction::Set)]
        me: bool,
        /// Grade confidence in [0, 1].
        #[arg(long, value_parser = parse_unit)]
        conf: f64,
        #[arg(long, default_value_t = DEFAULT_K, value_parser = parse_k)]
        k: usize,
        /// Knowledge base for snippet texts.
        #[arg(long)]
        kb: Option<PathBuf>,
        /// Run config naming the embedder; defaults to the mock embedder.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate one report and print it with its trace as JSON.
    Report {
        #[arg(long)]
        image: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a manifest through the pipeline and write the metrics file.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve POST /v1/report and GET /healthz.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bind: String,
    },
    /// Serve the deterministic mock models over the endpoint wire protocol.
    MockServer {
        #[arg(long)]
        bind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
enum KbCommand {
    /// Embed a JSON-lines knowledge base and write the index.
    Build {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run config naming the embedder; defaults to the mock embedder.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print an index summary as JSON.
    Inspect { index: PathBuf },
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_k(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(k),
        _ => Err(format!("k must be a positive integer, got {s:?}")),
    }
}

fn embedder_from(config: Option<&Path>) -> Result<Arc<dyn Embedder>> {
    match config {
        None => Ok(Arc::new(MockEmbedder::default())),
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            Backends::from_config(&cfg)?
                .embedder
                .context("config provides no embedder")
        }
    }
}

fn read_index(path: &Path) -> Result<VectorIndex> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(VectorIndex::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))?)
}

fn read_kb(path: &Path) -> Result<Vec<retina_rag::kb::KnowledgeEntry>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_kb(text.as_bytes())?)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

/// The error and its causes, skipping causes already quoted by their parent.
fn render_error(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg.push_str(": ");
            msg.push_str(&c);
        }
    }
    msg
}

async fn shutdown_signal() {
    if tokio::signal::ctrl_c().await.is_err() {
        std::future::pending::<()>().await;
    }
}

async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Kb {
            command: KbCommand::Build { kb, out, config },
        } => {
            let entries = read_kb(&kb)?;
            let embedder = embedder_from(config.as_deref())?;
            let index = build_index(entries, embedder.as_ref()).await?;
            let file = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            save_index(&index, std::io::BufWriter::new(file))?;
            print_json(&json!({
                "entries": index.len(),
                "dimension": index.dimension(),
                "fingerprint": index.fingerprint_hex(),
                "out": out,
            }))
        }
        Command::Kb {
            command: KbCommand::Inspect { index },
        } => {
            let index = read_index(&index)?;
            let mut by_grade = [0usize; 6];
            let (mut me_true, mut me_false, mut me_null) = (0, 0, 0);
            for e in index.entries() {
                by_grade[e.entry.dr_grade.map_or(5, |g| g.index())] += 1;
                match e.entry.me_label {
                    Some(true) => me_true += 1,
                    Some(false) => me_false += 1,
                    None => me_null += 1,
                }
            }
            print_json(&json!({
                "entries": index.len(),
                "dimension": index.dimension(),
                "fingerprint": index.fingerprint_hex(),
                "dr_grade": {
                    "0": by_grade[0], "1": by_grade[1], "2": by_grade[2],
                    "3": by_grade[3], "4": by_grade[4], "untagged": by_grade[5],
                },
                "me_label": {"true": me_true, "false": me_false, "untagged": me_null},
            }))
        }
        Command::Retrieve {
            index,
            grade,
            me,
            conf,
            k,
            kb,
            config,
        } => {
            let mut idx = read_index(&index)?;
            if let Some(kb) = &kb {
                attach_texts(&mut idx, &read_kb(kb)?)?;
            }
            let p = DiagnosticPrediction::from_summary(DrGrade::new(grade as i64)?, me, conf, conf)?;
            let query = serialize_query(&p);
            let embedder = embedder_from(config.as_deref())?;
            let raw = embedder
                .embed(std::slice::from_ref(&query))
                .await?
                .pop()
                .context("embedder returned no vector")?;
            let result = retrieve_top_k(&idx, &QueryEmbedding::new(raw)?, &p, k)?;
            let snippets: Vec<_> = result
                .snippets
                .iter()
                .map(|s| {
                    json!({
                        "id": s.entry.id,
                        "score": s.score,
                        "dr_grade": s.entry.dr_grade,
                        "me_label": s.entry.me_label,
                        "text": if kb.is_some() { Some(&s.entry.text) } else { None },
                    })
                })
                .collect();
            print_json(&json!({"query": query, "fallback": result.fallback, "snippets": snippets}))
        }
        Command::Report { image, config } => {
            let pipeline = Pipeline::from_config(RunConfig::load(&config)?).await?;
            let out = pipeline.run_report(&image).await?;
            print_json(&json!({
                "report": out.report.text,
                "generator_id": out.report.generator_id,
                "trace": out.trace,
            }))
        }
        Command::Eval { manifest, config, out } => {
            let pipeline = Pipeline::from_config(RunConfig::load(&config)?).await?;
            let manifest = DatasetManifest::load(&manifest)?;
            let report = pipeline.run_eval(&manifest).await?;
            report.write(&out)?;
            eprintln!(
                "evaluated {} records ({} failed); wrote {}",
                report.n_examples + report.n_failed,
                report.n_failed,
                out.display()
            );
            Ok(())
        }
        Command::Serve { config, bind } => {
            let pipeline = Arc::new(Pipeline::from_config(RunConfig::load(&config)?).await?);
            let listener = tokio::net::TcpListener::bind(&bind)
                .await
                .with_context(|| format!("binding {bind}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            service::serve(pipeline, listener, shutdown_signal()).await?;
            Ok(())
        }
        Command::MockServer { bind, seed } => {
            let listener = tokio::net::TcpListener::bind(&bind)
                .await
                .with_context(|| format!("binding {bind}"))?;
            eprintln!("mock models listening on {}", listener.local_addr()?);
            serve_mock_models(listener, MockBackends::builtin(seed), shutdown_signal()).await?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };

    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::from(2)
        }
    }
}
