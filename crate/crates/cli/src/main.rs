//! Command-line entry point: synth, train, rank, bench and check
//! subcommands over the expertmatch pipeline.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use expertmatch::config::RunConfig;
use expertmatch::error::Error;
use expertmatch::pipeline;

#[derive(Parser)]
#[command(
    name = "expertmatch",
    version,
    about = "Expert-matching engine: knowledge graph + GNN embeddings + ranked engineer recommendations",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (key = value lines).
    config: PathBuf,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap the worker thread count.
    #[arg(long)]
    threads: Option<usize>,
    /// Force fully reproducible execution. Accepted for compatibility; this
    /// implementation is deterministic either way.
    #[arg(long)]
    deterministic: bool,
    /// Overwrite artifacts produced by a different configuration.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted expertise structure.
    Synth(CommonArgs),
    /// Ingest, featurize, build the graph and train the ranking model.
    Train(CommonArgs),
    /// Rank engineers for one query incident.
    Rank {
        #[command(flatten)]
        common: CommonArgs,
        /// Query record file (incident JSON plus optional current_swarm).
        #[arg(long)]
        query: PathBuf,
        /// Engineers already on the incident (comma separated); they are
        /// fused into the query and excluded from the output.
        #[arg(long, value_delimiter = ',')]
        swarm: Option<Vec<String>>,
        /// Emit only the top k rows.
        #[arg(short, long)]
        k: Option<usize>,
        /// Incident/swarm fusion weight in [0, 1].
        #[arg(long)]
        lambda: Option<f64>,
        /// Write the ranked CSV here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate the trained ranker and all baselines over the test split.
    Bench(CommonArgs),
    /// Run gradient checks and numeric invariant probes.
    Check {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    if common.deterministic {
        cfg.deterministic = true;
    }
    if let Some(threads) = common.threads {
        cfg.threads = Some(threads);
    }
    init_thread_pool(cfg.threads);
    Ok(cfg)
}

#[cfg(feature = "parallel")]
fn init_thread_pool(threads: Option<usize>) {
    if let Some(n) = threads {
        // Ignore the error if a pool was already configured.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn init_thread_pool(_threads: Option<usize>) {}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth(common) => {
            let cfg = load_config(&common)?;
            let outputs = pipeline::run_synth(&cfg, common.force)?;
            println!("manifest: {}", outputs.manifest_path.display());
            println!("planted truth: {}", outputs.truth_path.display());
            Ok(())
        }
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            let artifacts = pipeline::run_train(&cfg, common.force)?;
            println!("checkpoint: {}", artifacts.checkpoint_path.display());
            println!("engineer index: {}", artifacts.index_path.display());
            println!(
                "best validation hit@{}: {:.4} over {} epochs",
                cfg.train.eval_k,
                artifacts.best_val_hit,
                artifacts.history.epochs.len()
            );
            Ok(())
        }
        Command::Rank { common, query, swarm, k, lambda, output } => {
            let cfg = load_config(&common)?;
            let outputs = pipeline::run_rank(&cfg, &query, swarm, k, lambda)?;
            if outputs.degraded {
                eprintln!("warning: query had no usable text or components; low-confidence ranking");
            }
            match output {
                Some(path) => {
                    std::fs::write(&path, &outputs.csv).map_err(|e| Error::io(&path, e))?;
                    println!("ranked output: {}", path.display());
                }
                None => print!("{}", outputs.csv),
            }
            Ok(())
        }
        Command::Bench(common) => {
            let cfg = load_config(&common)?;
            let outputs = pipeline::run_bench(&cfg, common.force)?;
            print!("{}", outputs.table.to_text());
            println!("csv: {}", outputs.csv_path.display());
            println!("txt: {}", outputs.txt_path.display());
            Ok(())
        }
        Command::Check { seed } => {
            let outputs = pipeline::run_check(seed)?;
            for line in &outputs.lines {
                println!("{line}");
            }
            if outputs.invariants_ok {
                println!("all checks passed");
                Ok(())
            } else {
                Err(Error::numeric("one or more numeric checks failed"))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are success; everything else is usage.
            use clap::error::ErrorKind;
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Config(_) => 1,
                Error::Io { .. } | Error::Data(_) | Error::UnknownNode(_) => 2,
                Error::Numeric(_) => 3,
            };
            ExitCode::from(code)
        }
    }
}
