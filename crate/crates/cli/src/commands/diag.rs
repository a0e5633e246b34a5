use crate::config::RunConfig;
use anyhow::Result;
use hoi_idiff_core::diffusion::diagnostics::{
    jump_chain_moment_check, posterior_tv_check, s_factor_recurrence_check, slice_conservation_check,
    terminal_convergence_check, CheckReport,
};
use hoi_idiff_core::diffusion::NoiseSchedule;
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<ExitCode> {
    let sched = cfg.schedule()?;
    let d = &cfg.diag;
    // The moment comparison runs at T=100 per its pinned instance.
    let moment_sched = NoiseSchedule::linear(
        cfg.schedule.steps.max(5),
        100,
        cfg.schedule.beta_start,
        cfg.schedule.beta_end,
    )?;

    let reports: Vec<CheckReport> = vec![
        s_factor_recurrence_check(&sched),
        slice_conservation_check(&sched, cfg.world.h, cfg.world.w, d.conservation_chains, d.seed)?,
        terminal_convergence_check(
            &sched,
            2 * cfg.world.h,
            d.terminal_pairs,
            d.terminal_samples,
            0.02,
            d.seed.wrapping_add(1),
        )?,
        jump_chain_moment_check(&moment_sched, 6, 5, d.moment_samples, 4.0, d.seed.wrapping_add(2))?,
        posterior_tv_check(d.tv_chains, 0.05, d.seed.wrapping_add(3))?,
    ];

    let mut text = String::new();
    for r in &reports {
        let line = format!("diag {}: {} ({})", r.name, r.status(), r.detail);
        println!("{line}");
        let _ = writeln!(text, "{line}");
    }
    for r in &reports {
        let line = format!("check.{} = {}", r.name.replace('-', "_"), r.status());
        println!("{line}");
        let _ = writeln!(text, "{line}");
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        cfg.echo_into(dir)?;
        std::fs::write(dir.join("diag.txt"), text)?;
    }
    if reports.iter().all(|r| r.passed) {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}
