use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use hoi_idiff_core::denoiser::load_checkpoint;
use hoi_idiff_core::image::HoiImage;
use hoi_idiff_core::infer::{init_noisy_hoi_image, reverse_sample, ModelPredictor};
use hoi_idiff_core::rng;
use hoi_idiff_core::world::read_dataset;
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

/// Floor added before the log so zero-probability pixels stay finite.
const LOG_FLOOR: f64 = 1e-8;

pub fn run(cfg: &RunConfig, checkpoint: &Path, data: &Path, pair_id: u64, out: &Path) -> Result<ExitCode> {
    let dataset = read_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let pair = dataset
        .all_pairs()
        .find(|p| p.pair_id == pair_id)
        .ok_or(hoi_idiff_core::Error::MissingPair(pair_id))?
        .clone();
    let (params, ckpt_steps) = load_checkpoint(checkpoint)?;
    let sched = cfg.schedule()?;
    if ckpt_steps != sched.steps() {
        bail!(hoi_idiff_core::Error::Config(format!(
            "checkpoint was trained with K={ckpt_steps}, config schedule has K={}",
            sched.steps()
        )));
    }

    let init = init_noisy_hoi_image(&pair.detector_prior, dataset.config.w)?;
    let predictor = ModelPredictor {
        params: &params,
        appearance: &pair.appearance,
    };
    let mut r = rng::stream(cfg.eval.seed, pair_id);
    let (_, trajectory) = reverse_sample(&init, &predictor, &sched, cfg.eval.mode, &mut r, true)?;
    let trajectory = trajectory.expect("recording was requested");

    std::fs::create_dir_all(out)?;
    cfg.echo_into(out)?;
    let mut dump = String::from("k\th\tw\tc\tvalue\n");
    for (k, img) in &trajectory.steps {
        std::fs::write(out.join(format!("step_{k:03}.ppm")), render_p6(img))?;
        let shape = img.shape();
        for h in 0..shape.h {
            for w in 0..shape.w {
                for c in 0..2 {
                    let _ = writeln!(dump, "{k}\t{h}\t{w}\t{c}\t{:.17e}", img.at(h, w, c));
                }
            }
        }
    }
    std::fs::write(out.join("values.tsv"), dump)?;
    println!(
        "exported {} step images for pair {pair_id} into {}",
        trajectory.steps.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Renders an image as a binary P6 pixmap: presence and absence channels
/// side by side (width 2W, height H), each pixel `log(x + 1e-8)` min-max
/// scaled over the whole file to 0..255 grayscale.
pub fn render_p6(img: &HoiImage) -> Vec<u8> {
    let shape = img.shape();
    let logs: Vec<f64> = img.data().iter().map(|&x| (x + LOG_FLOOR).ln()).collect();
    let min = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let scale = |v: f64| -> u8 {
        if span <= 0.0 {
            0
        } else {
            ((v - min) / span * 255.0).round() as u8
        }
    };
    let width = 2 * shape.w;
    let mut bytes = format!(
        "P6\n# log(x + 1e-8), min-max scaled per file; presence block then absence block\n{} {}\n255\n",
        width, shape.h
    )
    .into_bytes();
    for h in 0..shape.h {
        for c in 0..2 {
            for w in 0..shape.w {
                let g = scale(logs[(h * shape.w + w) * 2 + c]);
                bytes.extend_from_slice(&[g, g, g]);
            }
        }
    }
    bytes
}
