//! Writes the procedural prompt library as grid records, and the canonical
//! default configuration.
//!
//! cargo run -p frtts --example export_fixtures -- <fixtures dir> [count]

use std::path::PathBuf;

use frtts::config::RunConfigFile;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fixtures/prompts".into()));
    let count: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(12);
    std::fs::create_dir_all(&dir)?;
    let cfg = RunConfigFile { prompt_count: count, ..Default::default() };
    for p in cfg.prompts()? {
        std::fs::write(dir.join(format!("prompt_{}.grid", p.class_id)), p.template.to_record())?;
    }
    print!("{}", RunConfigFile::default().canonical());
    Ok(())
}
