use crate::config::RunConfig;
use anyhow::Result;
use hoi_idiff_core::world::{generate_dataset, write_dataset};
use std::path::Path;
use std::process::ExitCode;

pub fn run(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let dataset = generate_dataset(&cfg.world)?;
    let header = write_dataset(out, &dataset)?;
    cfg.echo_into(out)?;
    println!(
        "generated {} train / {} test pairs into {} ({})",
        header.train_pairs,
        header.test_pairs,
        out.display(),
        header.content_hash
    );
    Ok(ExitCode::SUCCESS)
}
