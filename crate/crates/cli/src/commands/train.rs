use crate::config::RunConfig;
use crate::interrupt::STOP;
use anyhow::{bail, Context, Result};
use hoi_idiff_core::denoiser::save_checkpoint;
use hoi_idiff_core::train::train;
use hoi_idiff_core::world::read_dataset;
use std::path::Path;
use std::process::ExitCode;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.tsv";
pub const SCHEDULE_FILE: &str = "schedule.cfg";

pub fn run(cfg: &RunConfig, data: &Path, out: &Path) -> Result<ExitCode> {
    let dataset = read_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?;
    if dataset.config.h != cfg.world.h || dataset.config.w != cfg.world.w {
        bail!(hoi_idiff_core::Error::Config(format!(
            "dataset was generated for H={} W={}, config says H={} W={}",
            dataset.config.h, dataset.config.w, cfg.world.h, cfg.world.w
        )));
    }
    if dataset.config.d_appearance != cfg.world.d_appearance {
        bail!(hoi_idiff_core::Error::Config(format!(
            "dataset appearance width {} does not match config {}",
            dataset.config.d_appearance, cfg.world.d_appearance
        )));
    }
    let sched = cfg.schedule()?;
    let model_cfg = cfg.model_config();
    std::fs::create_dir_all(out)?;
    cfg.echo_into(out)?;
    sched.save_to(&out.join(SCHEDULE_FILE))?;

    let ckpt_path = out.join(CHECKPOINT_FILE);
    let steps = sched.steps();
    let outcome = train(
        &dataset.train,
        model_cfg,
        &cfg.train,
        &sched,
        Some(&STOP),
        |epoch, params, loss| {
            save_checkpoint(&ckpt_path, params, steps)?;
            println!("epoch {epoch}: mean loss {loss:.6}");
            Ok(())
        },
    )?;
    // Persist the final (or interrupted) state and the metrics log.
    save_checkpoint(&ckpt_path, &outcome.params, steps)?;
    std::fs::write(out.join(LOG_FILE), &outcome.log)?;
    if outcome.interrupted {
        println!(
            "interrupted after {} steps; resumable checkpoint written to {}",
            outcome.steps_run,
            ckpt_path.display()
        );
    } else {
        println!(
            "trained {} epochs ({} steps); checkpoint at {}",
            cfg.train.epochs,
            outcome.steps_run,
            ckpt_path.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}
