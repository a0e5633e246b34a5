use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use hoi_idiff_core::denoiser::load_checkpoint;
use hoi_idiff_core::infer::{
    evaluate, postprocess, predict_pairs, write_metrics_files, write_results, PairPrediction,
};
use hoi_idiff_core::world::{ground_truth_image, read_dataset};
use std::path::Path;
use std::process::ExitCode;

pub fn run(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    data: &Path,
    out: &Path,
    ideal_oracle: bool,
) -> Result<ExitCode> {
    let dataset = read_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let sched = cfg.schedule()?;
    let truth = &dataset.test;
    if truth.is_empty() {
        bail!(hoi_idiff_core::Error::Config(
            "dataset has no test pairs (raise world.scenes or lower world.train_fraction)".into()
        ));
    }

    let predictions: Vec<PairPrediction> = if ideal_oracle {
        // Ground-truth images straight into post-processing: verifies the
        // metric path (mAP must be 1).
        truth
            .iter()
            .map(|p| {
                Ok(PairPrediction {
                    pair_id: p.pair_id,
                    object_id: p.object_id,
                    image: ground_truth_image(p, dataset.config.w)?,
                })
            })
            .collect::<Result<_, hoi_idiff_core::Error>>()?
    } else {
        let ckpt = checkpoint.ok_or_else(|| {
            anyhow::Error::from(hoi_idiff_core::Error::Config(
                "eval needs --checkpoint (or --ideal-oracle)".into(),
            ))
        })?;
        let (params, ckpt_steps) = load_checkpoint(ckpt)?;
        if params.config().h != dataset.config.h || params.config().w != dataset.config.w {
            bail!(hoi_idiff_core::Error::Config(format!(
                "checkpoint shape {}x{} does not match dataset {}x{}",
                params.config().h,
                params.config().w,
                dataset.config.h,
                dataset.config.w
            )));
        }
        if ckpt_steps != sched.steps() {
            bail!(hoi_idiff_core::Error::Config(format!(
                "checkpoint was trained with K={ckpt_steps}, config schedule has K={}",
                sched.steps()
            )));
        }
        predict_pairs(
            &params,
            truth,
            &sched,
            cfg.eval.mode,
            cfg.eval.init,
            cfg.train.process,
            cfg.eval.seed,
            cfg.eval_threads(),
        )?
    };

    let result = postprocess(&predictions, cfg.eval.score_mode)?;
    let report = evaluate(&result, truth, &dataset.affinity)?;
    std::fs::create_dir_all(out)?;
    cfg.echo_into(out)?;
    write_results(out, &result)?;
    write_metrics_files(out, &report)?;
    print!("{}", report.to_table());
    Ok(ExitCode::SUCCESS)
}
