use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autosculpt::harness::{self, HarnessError, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "autosculpt", about = "Pattern-based pruning search for small CNNs and Transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; every output file goes here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Topology JSON of a dense model.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Weight container. With `eval`, evaluates these weights over the dense topology.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Pattern count, or a pattern library JSON file.
    #[arg(long, global = true)]
    patterns: Option<String>,
    #[arg(long, global = true)]
    flops_target: Option<f64>,
    #[arg(long, global = true)]
    acc_floor: Option<f64>,
    #[arg(long, global = true)]
    episodes: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dense model.
    Train,
    /// Search pattern assignments on the dense model.
    Prune,
    /// Fine-tune the pruned model with frozen masks.
    Finetune,
    /// Print accuracy and MACs.
    Eval {
        /// Assignment JSON to mask with.
        #[arg(long)]
        assignment: Option<PathBuf>,
    },
    /// Merge run summaries into report.json.
    Report,
    /// Prune and fine-tune once per value of one axis.
    Sweep {
        /// patterns, node_dim or flops_target.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
}

fn config(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(m) = &cli.model {
        cfg.model_path = Some(m.clone());
        cfg.weights_path = cli.weights.clone();
    }
    if let Some(p) = &cli.patterns {
        match p.parse::<usize>() {
            Ok(n) => cfg.patterns = n,
            Err(_) => cfg.patterns_path = Some(PathBuf::from(p)),
        }
    }
    if let Some(f) = cli.flops_target {
        cfg.flops_target = f;
    }
    if cli.acc_floor.is_some() {
        cfg.acc_floor = cli.acc_floor;
    }
    if let Some(e) = cli.episodes {
        cfg.episodes = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String, HarnessError> {
    let cfg = config(cli)?;
    let json = match &cli.command {
        Command::Train => serde_json::to_string(&harness::cmd_train(&cfg)?)?,
        Command::Prune => serde_json::to_string(&harness::cmd_prune(&cfg)?)?,
        Command::Finetune => serde_json::to_string(&harness::cmd_finetune(&cfg)?)?,
        Command::Eval { assignment } => {
            let weights = if cli.model.is_none() { cli.weights.as_deref() } else { None };
            serde_json::to_string(&harness::cmd_eval(&cfg, weights, assignment.as_deref().map(Path::new))?)?
        }
        Command::Report => serde_json::to_string(&harness::cmd_report(&cfg, None)?)?,
        Command::Sweep { axis, values } => serde_json::to_string(&harness::cmd_sweep(&cfg, axis, values)?)?,
    };
    Ok(json)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = match &e {
                HarnessError::Config(_) => "config",
                HarnessError::Format(_) | HarnessError::Json(_) => "format",
                HarnessError::Missing(_) => "missing",
                HarnessError::Io(_) => "io",
                _ => "run",
            };
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}", serde_json::json!({ "error": kind, "message": msg }));
            ExitCode::FAILURE
        }
    }
}
