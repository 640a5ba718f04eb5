//! On-disk artifacts.
//!
//! Every experiment writes a deterministic payload (`<name>.json` plus CSV
//! tables) and, separately, `<name>.env.json` with timestamps, host and
//! wall-clock times. Re-running with the same config reproduces the payload
//! files byte for byte. Every file carries the config hash.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;

use crate::analysis::CorrelationTable;
use crate::config::RunConfigFile;
use crate::engine::RunResult;
use crate::error::{Error, Result};
use crate::toy::Codebook;

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn config_echo(cfg: &RunConfigFile) -> serde_json::Value {
    serde_json::to_value(cfg.identity()).expect("config serializes")
}

pub fn write_environment(dir: &Path, name: &str, cfg: &RunConfigFile, wall_clock: Duration) -> Result<PathBuf> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let host = std::env::var("HOSTNAME").unwrap_or_else(|_| "unknown".into());
    let path = dir.join(format!("{name}.env.json"));
    write_json(
        &path,
        &json!({
            "config_hash": cfg.hash(),
            "finished_unix_secs": now.as_secs(),
            "host": host,
            "wall_clock_secs": wall_clock.as_secs_f64(),
            "threads": rayon::current_num_threads(),
        }),
    )?;
    Ok(path)
}

/// Summary over a prompt set.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub prompts: usize,
    pub mean_best: f64,
    pub mean_of_means: f64,
    pub oracle_calls: u64,
    pub expected_oracle_calls: u64,
}

impl RunSummary {
    pub fn of(results: &[RunResult]) -> Self {
        let n = results.len().max(1) as f64;
        RunSummary {
            prompts: results.len(),
            mean_best: results.iter().map(|r| r.best_score).sum::<f64>() / n,
            mean_of_means: results.iter().map(|r| r.mean_score).sum::<f64>() / n,
            oracle_calls: results.iter().map(|r| r.oracle_calls).sum(),
            expected_oracle_calls: results.iter().map(|r| r.expected_oracle_calls).sum(),
        }
    }
}

/// Writes `<name>.json`, `<name>.rewards.csv`, `<name>.trials.csv`, the
/// environment file and, when configured, PNGs of the best final grids.
pub fn write_run_report(dir: &Path, name: &str, cfg: &RunConfigFile, results: &[RunResult]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    let mut written = Vec::new();

    let runs: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            let mut v = serde_json::to_value(r).expect("run result serializes");
            v["best_grid"] = json!(r.best_grid().to_record());
            v
        })
        .collect();
    let path = dir.join(format!("{name}.json"));
    write_json(
        &path,
        &json!({
            "config_hash": hash,
            "config": config_echo(cfg),
            "summary": RunSummary::of(results),
            "runs": runs,
        }),
    )?;
    written.push(path);

    let path = dir.join(format!("{name}.rewards.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record([
        "config_hash", "prompt", "checkpoint", "frontier", "sample", "raw_fr", "raw_div", "norm_fr",
        "norm_div", "weight", "fr_variance", "adjusted_weight", "unified", "parent_of_child",
    ])
    .map_err(csv_err)?;
    for r in results {
        for ck in &r.checkpoints {
            let b = &ck.bundle;
            for i in 0..b.raw_fr.len() {
                w.write_record([
                    hash.clone(),
                    r.prompt_id.to_string(),
                    ck.index.to_string(),
                    ck.frontier.to_string(),
                    i.to_string(),
                    b.raw_fr[i].to_string(),
                    b.raw_div[i].to_string(),
                    b.norm_fr[i].to_string(),
                    b.norm_div[i].to_string(),
                    b.weight.to_string(),
                    b.fr_variance.to_string(),
                    b.adjusted_weight.to_string(),
                    b.unified[i].to_string(),
                    ck.parents[i].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    written.push(path);

    let path = dir.join(format!("{name}.trials.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["config_hash", "prompt", "sample", "checkpoint", "trial", "phase", "scheme_hash", "score", "accepted"])
        .map_err(csv_err)?;
    for r in results {
        for ck in &r.checkpoints {
            for (sample, log) in ck.trials.iter().enumerate() {
                for t in log {
                    w.write_record([
                        hash.clone(),
                        r.prompt_id.to_string(),
                        sample.to_string(),
                        ck.index.to_string(),
                        t.index.to_string(),
                        t.phase.as_str().to_string(),
                        format!("{:016x}", t.scheme_hash),
                        t.score.to_string(),
                        t.accepted.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    w.flush()?;
    written.push(path);

    if cfg.export_png {
        let codebook = Codebook::new(cfg.vocab_size, cfg.patch_size)?;
        let png_dir = dir.join(format!("{name}.png"));
        fs::create_dir_all(&png_dir)?;
        for r in results {
            let path = png_dir.join(format!("prompt_{}_{}.png", r.prompt_id, &hash[..12]));
            fs::write(&path, codebook.decode(r.best_grid())?.to_png()?)?;
            written.push(path);
        }
    }

    let wall: Duration = results.iter().map(|r| r.wall_clock).sum();
    written.push(write_environment(dir, name, cfg, wall)?);
    Ok(written)
}

/// Writes `<name>.json` and `<name>.csv` (`strategy,checkpoint,rho,n`).
pub fn write_correlation(dir: &Path, name: &str, cfg: &RunConfigFile, table: &CorrelationTable, wall: Duration) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    let json_path = dir.join(format!("{name}.json"));
    write_json(&json_path, &json!({ "config_hash": hash, "config": config_echo(cfg), "table": table }))?;
    let csv_path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    w.write_record(["config_hash", "strategy", "checkpoint", "frontier", "rho", "n", "note"]).map_err(csv_err)?;
    for c in &table.cells {
        w.write_record([
            hash.clone(),
            c.probe.clone(),
            c.checkpoint.to_string(),
            c.frontier.to_string(),
            c.rho.map(|r| r.to_string()).unwrap_or_default(),
            c.n.to_string(),
            c.note.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    let env = write_environment(dir, name, cfg, wall)?;
    Ok(vec![json_path, csv_path, env])
}

/// One row of an ablation table.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub value: String,
    /// Mean coarse-phase best filling reward over a fixed probe batch.
    pub best_reward: Option<f64>,
    /// Mean over prompts of the scaled run's best final reward.
    pub final_best: f64,
    pub final_mean: f64,
    pub oracle_calls: u64,
}

pub fn write_ablation(dir: &Path, name: &str, cfg: &RunConfigFile, axis: &str, rows: &[AblationRow], wall: Duration) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    let json_path = dir.join(format!("{name}.json"));
    write_json(&json_path, &json!({ "config_hash": hash, "config": config_echo(cfg), "axis": axis, "rows": rows }))?;
    let csv_path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    w.write_record(["config_hash", "axis", "value", "best_reward", "final_best", "final_mean", "oracle_calls"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            hash.clone(),
            axis.to_string(),
            r.value.clone(),
            r.best_reward.map(|x| x.to_string()).unwrap_or_default(),
            r.final_best.to_string(),
            r.final_mean.to_string(),
            r.oracle_calls.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    let env = write_environment(dir, name, cfg, wall)?;
    Ok(vec![json_path, csv_path, env])
}
