//! End-to-end runs of the tcyc binary: each test shells out to the real
//! executable and checks the files and streams it produces.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tcyc_cli::config::RunConfig;

fn tcyc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcyc"))
        .args(args)
        .output()
        .expect("spawning tcyc")
}

fn write_tiny_config(path: &Path, extra: &str) {
    let base = "image_side=24\npatch_side=8\nchannels=8,8\nfeature_dim=8\n\
                localizer_channels=4\nk=2\nbatch_size=2\nsteps=4\nlog_every=2\n\
                checkpoint_every=100\nsynth.object_side=8\nsynth.clip_len=3\n\
                synth.max_speed=2\nsynth.margin=8\n";
    fs::write(path, format!("{base}{extra}")).unwrap();
}

#[test]
fn train_writes_expected_rows_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.cfg");
    write_tiny_config(&cfg, "");
    let out = dir.path().join("run");
    let r = tcyc(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    // Echoed config parses back to the effective one.
    let echoed = String::from_utf8(r.stdout).unwrap();
    let cfg_lines: String = echoed
        .lines()
        .take_while(|l| l.contains('='))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut back = RunConfig::default();
    back.apply_text(&cfg_lines).unwrap();
    back.finalize().unwrap();
    assert_eq!(back.model.image_side, 24);
    assert_eq!(fs::read_to_string(out.join("config.txt")).unwrap(), cfg_lines);

    // steps=4, log_every=2: rows at 0, 2, 4.
    let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "step,total,sim,skip,long");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("0,"));
    assert!(rows[2].starts_with("2,"));
    assert!(rows[3].starts_with("4,"));

    // checkpoint_every=100 > steps: only the initial and final checkpoints.
    assert!(out.join("ckpt_000000.tcyc").exists());
    assert!(out.join("ckpt_000004.tcyc").exists());
    assert!(!out.join("ckpt_000002.tcyc").exists());
}

#[test]
fn zero_step_training_leaves_one_row_and_one_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.cfg");
    write_tiny_config(&cfg, "");
    let out = dir.path().join("run");
    let r = tcyc(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--steps",
        "0",
    ]);
    assert!(r.status.success());
    let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2); // header + row 0
    let ckpts: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| {
            let n = e.unwrap().file_name().into_string().unwrap();
            n.ends_with(".tcyc").then_some(n)
        })
        .collect();
    assert_eq!(ckpts, ["ckpt_000000.tcyc"]);
}

#[test]
fn identical_runs_produce_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.cfg");
    write_tiny_config(&cfg, "");
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let r = tcyc(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(r.status.success());
    }
    for f in ["loss.csv", "config.txt", "ckpt_000000.tcyc", "ckpt_000004.tcyc"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }
}

#[test]
fn bad_config_key_yields_json_error_and_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.cfg");
    fs::write(&cfg, "lambada=0.1\n").unwrap();
    let r = tcyc(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(!r.status.success());
    let err = String::from_utf8(r.stderr).unwrap();
    let line = err.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(line).expect("stderr line is JSON");
    assert!(v["error"].as_str().unwrap().contains("lambada"));
}

#[test]
fn no_skip_cycle_flag_lands_in_the_echoed_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.cfg");
    write_tiny_config(&cfg, "");
    let out = dir.path().join("run");
    let r = tcyc(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--steps",
        "0",
        "--no-skip-cycle",
    ]);
    assert!(r.status.success());
    let text = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(text.contains("enable_skip=false\n"));
    assert!(text.contains("enable_sim=true\n"));
}

/// Shared pipeline fixture: tiny training run plus one rendered clip.
fn train_and_synth(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let cfg = dir.join("t.cfg");
    write_tiny_config(&cfg, "");
    let run = dir.join("run");
    let r = tcyc(&["train", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let clips = dir.join("clips");
    let r = tcyc(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--clips",
        "1",
        "--out",
        clips.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert!(r.status.success());
    (run.join("ckpt_000004.tcyc"), clips.join("clip_000"))
}

#[test]
fn propagate_keeps_frame_zero_verbatim_and_eval_scores_it() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, clip) = train_and_synth(dir.path());
    let out = dir.path().join("prop");
    let labels = clip.join("mask_00000.pgm");
    let r = tcyc(&[
        "propagate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--frames",
        clip.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(
        fs::read(&labels).unwrap(),
        fs::read(out.join("mask_00000.pgm")).unwrap()
    );
    for t in 0..3 {
        assert!(out.join(format!("mask_{t:05}.pgm")).exists());
    }

    // Scoring the ground truth against itself is a perfect score.
    let metrics = dir.path().join("m.json");
    let r = tcyc(&[
        "eval",
        "--pred",
        clip.to_str().unwrap(),
        "--gt",
        clip.to_str().unwrap(),
        "--out",
        metrics.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["J"]["mean"], 1.0);
    assert_eq!(v["F"]["mean"], 1.0);
}

#[test]
fn propagate_rejects_a_conflicting_config() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, clip) = train_and_synth(dir.path());
    let other = dir.path().join("other.cfg");
    write_tiny_config(&other, "lambda=0.5\n");
    let r = tcyc(&[
        "propagate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--frames",
        clip.to_str().unwrap(),
        "--labels",
        clip.join("mask_00000.pgm").to_str().unwrap(),
        "--out",
        dir.path().join("p").to_str().unwrap(),
        "--config",
        other.to_str().unwrap(),
    ]);
    assert!(!r.status.success());
    let err = String::from_utf8(r.stderr).unwrap();
    assert!(err.contains("lambda"), "{err}");
}

#[test]
fn single_frame_video_propagates_to_a_copy() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, clip) = train_and_synth(dir.path());
    let one = dir.path().join("one");
    fs::create_dir_all(&one).unwrap();
    fs::copy(clip.join("frame_00000.ppm"), one.join("frame_00000.ppm")).unwrap();
    let out = dir.path().join("prop1");
    let r = tcyc(&[
        "propagate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--frames",
        one.to_str().unwrap(),
        "--labels",
        clip.join("mask_00000.pgm").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let entries: Vec<_> = fs::read_dir(&out).unwrap().collect();
    assert_eq!(entries.len(), 1);
    assert_eq!(
        fs::read(clip.join("mask_00000.pgm")).unwrap(),
        fs::read(out.join("mask_00000.pgm")).unwrap()
    );
}

#[test]
fn keypoints_propagate_through_the_csv_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, clip) = train_and_synth(dir.path());
    let kp = dir.path().join("kp.csv");
    fs::write(&kp, "name,x,y\ncenter,12.0,9.0\ncorner,4.0,4.0\n").unwrap();
    let out = dir.path().join("kprop");
    let r = tcyc(&[
        "propagate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--frames",
        clip.to_str().unwrap(),
        "--labels",
        kp.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--knn-k",
        "3",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(out.join("kp_00002.csv")).unwrap();
    assert!(text.starts_with("name,x,y\ncenter,"), "{text}");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn flowdump_writes_feature_resolution_fields() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, clip) = train_and_synth(dir.path());
    let out = dir.path().join("flow");
    let r = tcyc(&[
        "flowdump",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--frames",
        clip.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    // image 24, two stages: 6x6 feature grid, f64 scalars.
    let t = tcyc_cli::formats::read_raw_tensor::<f64>(&out.join("flow_00000.raw")).unwrap();
    assert_eq!(t.shape(), &[2, 6, 6]);
    assert!(!out.join("flow_00002.raw").exists());
}

#[test]
fn eval_pck_scores_keypoint_directories() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, y) in [("pred", 10.0f64), ("gt", 11.0f64)] {
        let d = dir.path().join(sub);
        fs::create_dir_all(&d).unwrap();
        for t in 0..2 {
            fs::write(
                d.join(format!("kp_{t:05}.csv")),
                format!("name,x,y\na,10.0,{y}\nb,20.0,{}\n", y + 10.0),
            )
            .unwrap();
        }
    }
    // Distance 1 for all four points: inside 0.1 * 24, outside 0.1 * 8.
    let r = tcyc(&[
        "eval",
        "--pred-kps",
        dir.path().join("pred").to_str().unwrap(),
        "--gt-kps",
        dir.path().join("gt").to_str().unwrap(),
        "--norm-size",
        "24",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value =
        serde_json::from_str(String::from_utf8(r.stdout).unwrap().lines().last().unwrap()).unwrap();
    assert_eq!(v["PCK"], 1.0);
    let r = tcyc(&[
        "eval",
        "--pred-kps",
        dir.path().join("pred").to_str().unwrap(),
        "--gt-kps",
        dir.path().join("gt").to_str().unwrap(),
        "--norm-size",
        "8",
    ]);
    assert!(r.status.success());
    let v: serde_json::Value =
        serde_json::from_str(String::from_utf8(r.stdout).unwrap().lines().last().unwrap()).unwrap();
    assert_eq!(v["PCK"], 0.0);
}
