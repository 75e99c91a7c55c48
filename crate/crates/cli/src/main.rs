use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use icopro::buffers::FeedbackBuffer;
use icopro::envs::EnvSpec;
use icopro::labelers::{LabelBridge, LabelerConfig};
use icopro::qfunction::load_checkpoint;
use icopro::trainer::{evaluate, run_to_dir, train_labeler_checkpoint, EvalSummary, Greedy, RunConfig, RunContext, LABELS_FILE};
use icopro_cli::compare::{render_table, summarize, summarize_run};
use icopro_cli::config::{load_config, parse_config, validate};
use icopro_cli::serve::router;
use icopro_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "icopro", version, about = "Learning from corrective actions and proxy rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run ICoPro or a baseline from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (default: runs/<method>_seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a value-only labeler and save checkpoints.
    TrainLabeler {
        /// Run config (default: rainbow_lite on highway with PRExp).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 330_000)]
        steps: usize,
        /// Extra checkpoint step counts (repeatable).
        #[arg(long = "snapshot")]
        snapshots: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "labelers")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint greedily and print the episode metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episode count (default: the training run's evaluation size).
        #[arg(long)]
        episodes: Option<usize>,
        /// Evaluate under this proxy reward instead of the stored environment.
        #[arg(long)]
        proxy_reward: Option<String>,
        /// Print the full summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Train with a human labeler, serving queries over HTTP.
    LabelServe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Rebuild the label buffer from a JSON-lines file or run directory.
    ReplayLabels {
        path: PathBuf,
        /// Write the rebuilt buffer as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize finished run directories per method.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn default_out(cfg: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}_seed{}", cfg.method.name(), cfg.seed))
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<()> {
    let (cfg, base) = load_config(config, seed)?;
    if matches!(cfg.labeler, LabelerConfig::Human { .. }) {
        return Err(CliError::Config {
            location: "labeler".into(),
            message: "human labelers need the label service; use `label-serve`".into(),
        });
    }
    let dir = out.unwrap_or_else(|| default_out(&cfg));
    let outcome = run_to_dir(&cfg, &dir, &base, &RunContext::default())?;
    if let Some(last) = outcome.records.last() {
        println!("{}", summary_line(&last.eval));
    }
    println!("run directory: {}", dir.display());
    Ok(())
}

fn train_labeler(config: Option<PathBuf>, steps: usize, snapshots: &[usize], seed: Option<u64>, out: &Path) -> CliResult<()> {
    let mut cfg = match config {
        Some(path) => load_config(&path, None)?.0,
        None => parse_config(r#"{"method": "rainbow_lite", "env": {"kind": "highway", "proxy_reward": "PRExp"}}"#)?,
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    validate(&cfg)?;
    for c in train_labeler_checkpoint(&cfg, steps, snapshots, out)? {
        println!("{} steps: {} -> {}", c.steps, summary_line(&c.metrics), c.path.display());
    }
    Ok(())
}

fn summary_line(e: &EvalSummary) -> String {
    format!(
        "crash {:.3} distance {:.1} speed {:.2} lane_change {:.3} lane_pos {:.3} steps {:.1}",
        e.crash_rate.mean, e.distance.mean, e.speed.mean, e.lane_change_ratio.mean, e.lane_position.mean, e.steps.mean
    )
}

fn eval(checkpoint: &Path, episodes: Option<usize>, proxy_reward: Option<String>, json: bool) -> CliResult<()> {
    let (q, meta) = load_checkpoint(checkpoint)?;
    let bad = |field: &str, e: serde_json::Error| CliError::Config {
        location: format!("extra.{field}"),
        message: format!("checkpoint sidecar: {e}"),
    };
    let mut env: EnvSpec = serde_json::from_value(meta.extra["env"].clone()).map_err(|e| bad("env", e))?;
    let seed: u64 = serde_json::from_value(meta.extra["eval_seed"].clone()).map_err(|e| bad("eval_seed", e))?;
    let stored_episodes: Option<usize> = serde_json::from_value(meta.extra["eval_episodes"].clone()).ok();
    if let Some(name) = proxy_reward {
        env = env.with_proxy_reward(&name);
    }
    let n = episodes.or(stored_episodes).unwrap_or(50);
    if n == 0 {
        return Err(CliError::Config { location: "episodes".into(), message: "need at least one episode".into() });
    }
    let summary = evaluate(&mut Greedy(&q), &env, n, seed)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&summary).map_err(icopro::Error::from)?);
    } else {
        let rows = [
            ("crash_rate", &summary.crash_rate),
            ("distance_avg", &summary.distance),
            ("speed_avg", &summary.speed),
            ("lane_change_ratio", &summary.lane_change_ratio),
            ("lane_pos_avg", &summary.lane_position),
            ("steps_avg", &summary.steps),
        ];
        println!("episodes {n}");
        for (name, s) in rows {
            println!("{name:<18} {:>10.4} ± {:.4}", s.mean, s.std);
        }
    }
    Ok(())
}

fn label_serve(config: &Path, seed: Option<u64>, out: Option<PathBuf>, addr: SocketAddr) -> CliResult<()> {
    let (cfg, base) = load_config(config, seed)?;
    if !matches!(cfg.labeler, LabelerConfig::Human { .. }) {
        return Err(CliError::Config {
            location: "labeler.type".into(),
            message: "label-serve needs a human labeler".into(),
        });
    }
    let dir = out.unwrap_or_else(|| default_out(&cfg));
    let bridge = Arc::new(LabelBridge::new(cfg.hash()[..12].to_string()));
    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    println!("listening on http://{}", listener.local_addr()?);

    let ctx = RunContext { bridge: Some(bridge.clone()) };
    let trainer_bridge = bridge.clone();
    let trainer = std::thread::spawn(move || {
        let result = run_to_dir(&cfg, &dir, &base, &ctx).map(|_| dir);
        trainer_bridge.finish();
        result
    });

    let app = router(bridge.clone());
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let server = rt.spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stop_rx.await;
            })
            .await
    });
    let result = trainer.join().expect("trainer thread panicked");
    // Give clients a moment to observe the finished session.
    std::thread::sleep(Duration::from_millis(500));
    let _ = stop_tx.send(());
    rt.block_on(server).expect("server task panicked")?;
    let dir = result?;
    println!("run directory: {}", dir.display());
    Ok(())
}

fn replay_labels(path: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let file = if path.is_dir() { path.join(LABELS_FILE) } else { path.to_path_buf() };
    let reader = std::io::BufReader::new(std::fs::File::open(&file)?);
    let buffer = FeedbackBuffer::read_jsonl(reader)?;
    let mut by_source = std::collections::BTreeMap::new();
    for label in buffer.labels() {
        *by_source.entry(format!("{:?}", label.source)).or_insert(0usize) += 1;
    }
    println!("{} labels from {}", buffer.len(), file.display());
    for (source, n) in by_source {
        println!("  {source}: {n}");
    }
    if let Some(out) = out {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
        buffer.write_jsonl(&mut w)?;
        std::io::Write::flush(&mut w)?;
    }
    Ok(())
}

fn compare(runs: &[PathBuf], json: bool) -> CliResult<()> {
    let summaries = runs.iter().map(|d| summarize_run(d)).collect::<CliResult<Vec<_>>>()?;
    let table = summarize(&summaries);
    if json {
        println!("{}", serde_json::to_string_pretty(&table).map_err(icopro::Error::from)?);
    } else {
        print!("{}", render_table(&table));
    }
    for s in summaries.iter().filter(|s| !s.budget.ok()) {
        eprintln!("budget violated in {}: {:?}", s.dir.display(), s.budget);
    }
    if table.iter().all(|s| s.budget_ok) {
        Ok(())
    } else {
        Err(CliError::Run(icopro::Error::Usage("runs do not share the configured budget".into())))
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, seed, out } => train(&config, seed, out),
        Command::TrainLabeler { config, steps, snapshots, seed, out } => train_labeler(config, steps, &snapshots, seed, &out),
        Command::Eval { checkpoint, episodes, proxy_reward, json } => eval(&checkpoint, episodes, proxy_reward, json),
        Command::LabelServe { config, seed, out, addr } => label_serve(&config, seed, out, addr),
        Command::ReplayLabels { path, out } => replay_labels(&path, out),
        Command::Compare { runs, json } => compare(&runs, json),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
