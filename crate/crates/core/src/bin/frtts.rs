use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use frtts::config::RunConfigFile;
use frtts::engine::Method;
use frtts::experiments::{ablate, correlate, run_prompts, Axis};
use frtts::report::{write_ablation, write_correlation, write_run_report};
use frtts::Error;

#[derive(Parser)]
#[command(name = "frtts", version, about = "Filling-based reward test-time scaling on a toy token-grid world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file (flat key = value).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `prompt_count`.
    #[arg(long)]
    prompts: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Scaled generation over the prompt set.
    Run(Common),
    /// Best-of-N baseline over the prompt set.
    Bon(Common),
    /// Rank correlation of intermediate rewards against final rewards.
    Correlate(Common),
    /// Sweep one axis and write a comparison table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// strategy | block-size | filling-times
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Check a configuration and exit.
    ValidateConfig(Common),
}

fn load(common: &Common) -> Result<RunConfigFile, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfigFile::load(path)?,
        None => RunConfigFile::default(),
    }
    .with_env();
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.display().to_string();
    }
    if let Some(n) = common.prompts {
        cfg.prompt_count = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(common) => run_method(&common, Method::FrTts, "run"),
        Command::Bon(common) => run_method(&common, Method::BestOfN, "bon"),
        Command::Correlate(common) => {
            let cfg = load(&common)?;
            let oracle = cfg.oracle()?;
            let started = Instant::now();
            let table = correlate(&cfg, oracle.as_ref())?;
            let files = write_correlation(&PathBuf::from(&cfg.output_dir), "correlation", &cfg, &table, started.elapsed())?;
            for c in &table.cells {
                let rho = c.rho.map(|r| format!("{r:.4}")).unwrap_or_else(|| "undefined".into());
                println!("{:<18} checkpoint {} (frontier {:>4}): rho = {rho} (n = {})", c.probe, c.checkpoint, c.frontier, c.n);
            }
            print_files(&files);
            Ok(())
        }
        Command::Ablate { common, axis, values } => {
            let cfg = load(&common)?;
            let axis: Axis = axis.parse()?;
            let oracle = cfg.oracle()?;
            let started = Instant::now();
            let rows = ablate(&cfg, axis, &values, oracle.as_ref())?;
            let name = format!("ablate-{}", axis.as_str());
            let files = write_ablation(&PathBuf::from(&cfg.output_dir), &name, &cfg, axis.as_str(), &rows, started.elapsed())?;
            println!("{:<18} {:>12} {:>12} {:>12} {:>12}", axis.as_str(), "best_reward", "final_best", "final_mean", "oracle_calls");
            for r in &rows {
                let bound = r.best_reward.map(|b| format!("{b:.6}")).unwrap_or_else(|| "-".into());
                println!("{:<18} {:>12} {:>12.6} {:>12.6} {:>12}", r.value, bound, r.final_best, r.final_mean, r.oracle_calls);
            }
            print_files(&files);
            Ok(())
        }
        Command::ValidateConfig(common) => {
            let cfg = load(&common)?;
            println!("ok {}", cfg.hash());
            Ok(())
        }
    }
}

fn run_method(common: &Common, method: Method, name: &str) -> Result<(), Error> {
    let cfg = load(common)?;
    let oracle = cfg.oracle()?;
    let prompts = cfg.prompts()?;
    let results = run_prompts(&cfg.scaling(), &prompts, oracle.as_ref(), method)?;
    let files = write_run_report(&PathBuf::from(&cfg.output_dir), name, &cfg, &results)?;
    let n = results.len() as f64;
    println!(
        "{name}: {} prompts, mean best reward {:.6}, mean population reward {:.6}, {} oracle calls",
        results.len(),
        results.iter().map(|r| r.best_score).sum::<f64>() / n,
        results.iter().map(|r| r.mean_score).sum::<f64>() / n,
        results.iter().map(|r| r.oracle_calls).sum::<u64>()
    );
    print_files(&files);
    Ok(())
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Alignment(_) | Error::Parameter(_) => 2,
        Error::Transport(_) | Error::Protocol(_) => 3,
        Error::Io(_) => 4,
        _ => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("frtts: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
