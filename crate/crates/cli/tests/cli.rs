//! End-to-end command tests against the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hoi-idiff")
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        "world.h = 4\n\
         world.w = 3\n\
         world.scenes = 30\n\
         world.seed = 5\n\
         schedule.steps = 8\n\
         schedule.trials = 200\n\
         model.d_model = 16\n\
         model.blocks = 1\n\
         model.heads = 2\n\
         model.d_step = 8\n\
         train.epochs = 1\n\
         train.m_samples = 2\n\
         train.batch_size = 4\n\
         train.learning_rate = 0.001\n\
         eval.threads = 2\n",
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("HOI_IDIFF_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_deterministic_and_validates_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let d1 = dir.path().join("d1");
    let d2 = dir.path().join("d2");
    run_ok(&["gen", "--config", path_str(&cfg), "--out", path_str(&d1)]);
    run_ok(&["gen", "--config", path_str(&cfg), "--out", path_str(&d2)]);
    for f in ["train.jsonl", "test.jsonl", "header.json"] {
        assert_eq!(
            std::fs::read(d1.join(f)).unwrap(),
            std::fs::read(d2.join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }

    // Config errors exit 2.
    let bad = run(&[
        "gen",
        "--config",
        path_str(&cfg),
        "--set",
        "world.h=0",
        "--out",
        path_str(&dir.path().join("d3")),
    ]);
    assert_eq!(bad.status.code(), Some(2), "{}", String::from_utf8_lossy(&bad.stderr));
    assert!(!String::from_utf8_lossy(&bad.stderr).is_empty());

    let unknown = run(&[
        "gen",
        "--config",
        path_str(&cfg),
        "--set",
        "bogus.key=1",
        "--out",
        path_str(&dir.path().join("d4")),
    ]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn train_eval_round_trip_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = dir.path().join("data");
    run_ok(&["gen", "--config", path_str(&cfg), "--out", path_str(&data)]);

    let strip_wall = |log: &str| -> String {
        log.lines()
            .map(|l| l.rsplit_once('\t').map(|(a, _)| a).unwrap_or(l))
            .collect::<Vec<_>>()
            .join("\n")
    };

    type RunArtifacts = (Vec<u8>, Vec<u8>, Vec<u8>, String);
    let mut artifacts: Vec<RunArtifacts> = Vec::new();
    for run_name in ["r1", "r2"] {
        let rdir = dir.path().join(run_name);
        let edir = dir.path().join(format!("{run_name}_eval"));
        run_ok(&[
            "train",
            "--config",
            path_str(&cfg),
            "--data",
            path_str(&data),
            "--out",
            path_str(&rdir),
        ]);
        run_ok(&[
            "eval",
            "--config",
            path_str(&cfg),
            "--checkpoint",
            path_str(&rdir.join("model.ckpt")),
            "--data",
            path_str(&data),
            "--out",
            path_str(&edir),
        ]);
        artifacts.push((
            std::fs::read(rdir.join("model.ckpt")).unwrap(),
            std::fs::read(edir.join("metrics.kv")).unwrap(),
            std::fs::read(edir.join("results.jsonl")).unwrap(),
            strip_wall(&std::fs::read_to_string(rdir.join("train_log.tsv")).unwrap()),
        ));
    }
    assert_eq!(artifacts[0].0, artifacts[1].0, "checkpoints differ");
    assert_eq!(artifacts[0].1, artifacts[1].1, "metrics differ");
    assert_eq!(artifacts[0].2, artifacts[1].2, "results differ");
    assert_eq!(artifacts[0].3, artifacts[1].3, "logs differ beyond wall clock");
}

#[test]
fn ideal_oracle_eval_scores_perfect_map() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = dir.path().join("data");
    run_ok(&["gen", "--config", path_str(&cfg), "--out", path_str(&data)]);
    let edir = dir.path().join("eval");
    run_ok(&[
        "eval",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&data),
        "--out",
        path_str(&edir),
        "--ideal-oracle",
    ]);
    let kv = std::fs::read_to_string(edir.join("metrics.kv")).unwrap();
    assert!(kv.contains("metric.map = 1\n"), "metrics:\n{kv}");
    assert!(kv.contains("metric.triplet_f1 = 1\n"));
}

#[test]
fn ablation_flags_reach_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = dir.path().join("data");
    run_ok(&["gen", "--config", path_str(&cfg), "--out", path_str(&data)]);
    for ablation in ["gaussian-process", "local-patch", "horizontal-only", "vertical-only"] {
        let rdir = dir.path().join(format!("run_{ablation}"));
        run_ok(&[
            "train",
            "--config",
            path_str(&cfg),
            "--ablation",
            ablation,
            "--data",
            path_str(&data),
            "--out",
            path_str(&rdir),
        ]);
        let edir = dir.path().join(format!("eval_{ablation}"));
        run_ok(&[
            "eval",
            "--config",
            path_str(&cfg),
            "--ablation",
            ablation,
            "--checkpoint",
            path_str(&rdir.join("model.ckpt")),
            "--data",
            path_str(&data),
            "--out",
            path_str(&edir),
        ]);
        let resolved = std::fs::read_to_string(edir.join("config.resolved.cfg")).unwrap();
        match ablation {
            "gaussian-process" => assert!(resolved.contains("train.process = gaussian")),
            "local-patch" => assert!(resolved.contains("model.patchify = local")),
            "horizontal-only" => assert!(resolved.contains("model.patchify = horizontal-only")),
            "vertical-only" => assert!(resolved.contains("model.patchify = vertical-only")),
            _ => unreachable!(),
        }
    }
    // uniform-init is eval-side only.
    let rdir = dir.path().join("run_plain");
    run_ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&data),
        "--out",
        path_str(&rdir),
    ]);
    let edir = dir.path().join("eval_uniform");
    run_ok(&[
        "eval",
        "--config",
        path_str(&cfg),
        "--ablation",
        "uniform-init",
        "--checkpoint",
        path_str(&rdir.join("model.ckpt")),
        "--data",
        path_str(&data),
        "--out",
        path_str(&edir),
    ]);
    let resolved = std::fs::read_to_string(edir.join("config.resolved.cfg")).unwrap();
    assert!(resolved.contains("eval.init = uniform"));
}

#[test]
fn diag_passes_on_small_sizes_and_fails_on_broken_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--set",
        "diag.conservation_chains=20",
        "--set",
        "diag.terminal_pairs=2",
        "--set",
        "diag.terminal_samples=1500",
        "--set",
        "diag.moment_samples=20000",
        "--set",
        "diag.tv_chains=100000",
    ];
    let out_dir = dir.path().join("diag");
    let mut args = vec!["diag"];
    args.extend_from_slice(&small);
    args.extend_from_slice(&["--out", path_str(&out_dir)]);
    let out = run_ok(&args);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    for check in [
        "s-factor-recurrence",
        "slice-conservation",
        "terminal-convergence",
        "jump-chain-moments",
        "posterior-fidelity",
    ] {
        assert!(text.contains(&format!("diag {check}: PASS")), "missing {check}:\n{text}");
    }
    assert!(text.contains("check.terminal_convergence = PASS"));
    assert!(out_dir.join("diag.txt").exists());

    // A schedule leaving half the signal at K must fail terminal convergence.
    // (1 - beta)^50 = 0.5 -> beta ~ 0.01377.
    let mut args = vec![
        "diag",
        "--set",
        "schedule.beta_start=0.013769",
        "--set",
        "schedule.beta_end=0.013770",
    ];
    args.extend_from_slice(&small);
    let broken = run(&args);
    assert_eq!(broken.status.code(), Some(1));
    let text = String::from_utf8_lossy(&broken.stdout);
    assert!(
        text.contains("diag terminal-convergence: FAIL"),
        "expected failed convergence:\n{text}"
    );
}

#[test]
fn export_trajectory_emits_k_plus_one_images_and_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = dir.path().join("data");
    run_ok(&["gen", "--config", path_str(&cfg), "--out", path_str(&data)]);
    let rdir = dir.path().join("run");
    run_ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&data),
        "--out",
        path_str(&rdir),
    ]);
    let tdir = dir.path().join("traj");
    run_ok(&[
        "export-trajectory",
        "--config",
        path_str(&cfg),
        "--checkpoint",
        path_str(&rdir.join("model.ckpt")),
        "--data",
        path_str(&data),
        "--pair",
        "3",
        "--out",
        path_str(&tdir),
    ]);
    let ppms: Vec<_> = std::fs::read_dir(&tdir)
        .unwrap()
        .filter_map(|e| {
            let name = e.unwrap().file_name().into_string().unwrap();
            name.ends_with(".ppm").then_some(name)
        })
        .collect();
    assert_eq!(ppms.len(), 9, "expected K+1 = 9 images, got {ppms:?}");

    // P6 header sanity: width 2W, height H, binary payload of 3 bytes/pixel.
    let bytes = std::fs::read(tdir.join("step_000.ppm")).unwrap();
    let header_end = bytes
        .windows(4)
        .position(|w| w == b"255\n")
        .map(|p| p + 4)
        .unwrap();
    let header = String::from_utf8_lossy(&bytes[..header_end]).to_string();
    assert!(header.starts_with("P6\n"));
    assert!(header.contains("log(x + 1e-8)"));
    assert!(header.contains("\n6 4\n"));
    assert_eq!(bytes.len() - header_end, 6 * 4 * 3);

    // The numeric dump round-trips to the printed precision.
    let values = std::fs::read_to_string(tdir.join("values.tsv")).unwrap();
    let mut rows = 0;
    for line in values.lines().skip(1) {
        let v: f64 = line.split('\t').nth(4).unwrap().parse().unwrap();
        assert!(v.is_finite());
        let reprinted = format!("{v:.17e}");
        let back: f64 = reprinted.parse().unwrap();
        assert_eq!(back.to_bits(), v.to_bits());
        rows += 1;
    }
    assert_eq!(rows, 9 * 4 * 3 * 2);

    // Asking for a pair that does not exist is a runtime failure.
    let missing = run(&[
        "export-trajectory",
        "--config",
        path_str(&cfg),
        "--checkpoint",
        path_str(&rdir.join("model.ckpt")),
        "--data",
        path_str(&data),
        "--pair",
        "99999",
        "--out",
        path_str(&dir.path().join("traj2")),
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

#[cfg(unix)]
#[test]
fn sigint_writes_a_resumable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = dir.path().join("data");
    run_ok(&["gen", "--config", path_str(&cfg), "--out", path_str(&data)]);
    let rdir = dir.path().join("run");
    let mut child = Command::new(bin())
        .args([
            "train",
            "--config",
            path_str(&cfg),
            "--set",
            "train.epochs=100000",
            "--data",
            path_str(&data),
            "--out",
            path_str(&rdir),
        ])
        .spawn()
        .unwrap();
    // Give it time to get into the loop, then interrupt.
    std::thread::sleep(std::time::Duration::from_millis(1500));
    let _ = Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    let status = child.wait().unwrap();
    assert!(status.success(), "interrupted train should exit cleanly");
    assert!(rdir.join("model.ckpt").exists(), "no checkpoint after interrupt");
    assert!(rdir.join("train_log.tsv").exists());
}
