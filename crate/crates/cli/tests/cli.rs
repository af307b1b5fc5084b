use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvlens_core::media_io::{write_y4m, Frame, FrameSequence};
use serde_json::Value;

fn mvlens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvlens"))
        .args(args)
        .output()
        .expect("spawn mvlens")
}

fn ok(args: &[&str]) -> String {
    let out = mvlens(args);
    assert!(
        out.status.success(),
        "mvlens {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Textured 32x32 clip whose content slides `step` pixels right per frame.
fn clip(dir: &Path, name: &str, frames: usize, step: usize) {
    let (w, h) = (32, 32);
    let seq = FrameSequence::new(
        (0..frames)
            .map(|t| {
                let data = (0..w * h)
                    .map(|k| {
                        let (x, y) = (k % w, k / w);
                        (((x + 64 - t * step) * 29 + y * 13 + (x * y) % 7) % 253) as u8
                    })
                    .collect();
                Frame::gray(w, h, data).unwrap()
            })
            .collect(),
    )
    .unwrap();
    write_y4m(&seq, dir.join(format!("{name}.y4m"))).unwrap();
}

fn manifest(dir: &Path, name: &str, rows: &[(&str, &str)]) -> PathBuf {
    let mut text = String::from("clip_id,class_label,frames_path,mv_path\n");
    for (id, class) in rows {
        text.push_str(&format!("{id},{class},{id}.y4m,\n"));
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

const SMALL: [&str; 4] = ["--block-size", "8", "--search-radius", "4"];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL).collect()
}

#[test]
fn estimate_writes_then_skips() {
    let dir = tempfile::tempdir().unwrap();
    clip(dir.path(), "a", 3, 2);
    let m = manifest(dir.path(), "m.csv", &[("a", "real")]);
    let out = dir.path().join("mv");
    ok(&with_small(&["estimate", s(&m), "--out", s(&out)]));
    let sidecar = fs::read_to_string(out.join("a.mv.csv")).unwrap();
    assert!(sidecar.starts_with("frame,block_i,block_j,dx,dy,t_sign\n"));
    // 3 frames of a 4x4 block grid
    assert_eq!(sidecar.lines().count(), 1 + 3 * 16);

    // The produced manifest has sidecars, so nothing is redone without --force.
    let out2 = dir.path().join("mv2");
    let line = ok(&with_small(&["estimate", s(&out.join("manifest.csv")), "--out", s(&out2)]));
    assert!(line.contains("already had sidecars"), "{line}");
    assert!(!out2.join("a.mv.csv").exists());
    ok(&with_small(&["estimate", s(&out.join("manifest.csv")), "--out", s(&out2), "--force"]));
    assert_eq!(fs::read_to_string(out2.join("a.mv.csv")).unwrap(), sidecar);
}

#[test]
fn estimate_unreadable_clip_exits_1_and_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    clip(dir.path(), "a", 3, 2);
    fs::write(dir.path().join("b.y4m"), b"YUV4MPEG2 W32 H32\nFRAME\nshort").unwrap();
    let m = manifest(dir.path(), "m.csv", &[("a", "real"), ("b", "real")]);
    let out = dir.path().join("mv");
    let res = mvlens(&with_small(&["estimate", s(&m), "--out", s(&out)]));
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("error"));
    assert!(!out.join("a.mv.csv").exists());
    assert!(!out.join("b.mv.csv").exists());
}

#[test]
fn stats_outputs_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    clip(dir.path(), "a", 6, 1);
    clip(dir.path(), "b", 6, 3);
    clip(dir.path(), "c", 2, 2);
    let m = manifest(dir.path(), "m.csv", &[("a", "real"), ("b", "fake gen"), ("c", "real")]);
    let out = dir.path().join("stats");
    ok(&with_small(&["stats", s(&m), "--out", s(&out), "--entropy-bins", "32"]));

    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["entropy_bins"], 32);
    assert_eq!(report["config"]["block_size"], 8);
    assert_eq!(report["conventions"]["log_base"], 2);
    assert_eq!(report["classes"].as_array().unwrap().len(), 2);
    assert!(out.join("heatmap_real.pgm").is_file());
    assert!(out.join("heatmap_fake_gen.pgm").is_file());

    let frames = fs::read_to_string(out.join("frame_stats.csv")).unwrap();
    assert_eq!(frames.lines().next(), Some("clip_id,frame,S_t,mean,entropy"));
    assert_eq!(frames.lines().filter(|l| l.starts_with("c,")).count(), 2);
    let clips = fs::read_to_string(out.join("clip_stats.csv")).unwrap();
    assert_eq!(clips.lines().next(), Some("clip_id,class,M_i,H_i"));
    for f in ["direction_hist.csv", "regional.csv", "evolution.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    // Re-running from the echoed config alone reproduces every byte.
    let again = dir.path().join("again");
    ok(&["stats", s(&m), "--out", s(&again), "--config", s(&out.join("report.json"))]);
    for entry in fs::read_dir(&out).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(out.join(&name)).unwrap(),
            fs::read(again.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn stats_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    for (k, id) in ["a", "b", "c", "d"].iter().enumerate() {
        clip(dir.path(), id, 6, k);
    }
    let m = manifest(dir.path(), "m.csv", &[("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]);
    let one = dir.path().join("one");
    let many = dir.path().join("many");
    ok(&with_small(&["stats", s(&m), "--out", s(&one), "--threads", "1"]));
    ok(&with_small(&["stats", s(&m), "--out", s(&many), "--threads", "8"]));
    let mut names: Vec<_> = fs::read_dir(&one).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 6 + 2);
    for name in names {
        assert_eq!(fs::read(one.join(&name)).unwrap(), fs::read(many.join(&name)).unwrap());
    }
}

#[test]
fn compare_schema_and_self_comparison() {
    let dir = tempfile::tempdir().unwrap();
    for (id, step) in [("r1", 1), ("r2", 2), ("g1", 1), ("g2", 2), ("h1", 3), ("h2", 4)] {
        clip(dir.path(), id, 4, step);
    }
    let real = manifest(dir.path(), "real.csv", &[("r1", "real"), ("r2", "real")]);
    let same = manifest(dir.path(), "same.csv", &[("g1", "copy"), ("g2", "copy")]);
    let two = manifest(
        dir.path(),
        "two.csv",
        &[("g1", "m1"), ("g2", "m1"), ("h1", "m2"), ("h2", "m2")],
    );

    let out = dir.path().join("self");
    ok(&with_small(&["compare", s(&real), s(&same), "--out", s(&out)]));
    let json: Value = serde_json::from_str(&fs::read_to_string(out.join("compare.json")).unwrap()).unwrap();
    assert_eq!(json["raw"], serde_json::json!([[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]]));
    let header = "model,mv_sum KL(P‖Q),mv_sum KL(Q‖P),mv_sum JS,mv_sum WD,\
                  motion_entropy KL(P‖Q),motion_entropy KL(Q‖P),motion_entropy JS,motion_entropy WD";
    let div = fs::read_to_string(out.join("divergences.csv")).unwrap();
    assert_eq!(div.lines().next(), Some(header));

    let out = dir.path().join("two");
    ok(&with_small(&["compare", s(&real), s(&two), "--out", s(&out)]));
    let norm = fs::read_to_string(out.join("normalized.csv")).unwrap();
    let rows: Vec<&str> = norm.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("m1,") && rows[2].starts_with("m2,"));
    assert!(rows[1..].iter().all(|r| r.split(',').count() == 9));
}

#[test]
fn calibrate_static_corpus() {
    let dir = tempfile::tempdir().unwrap();
    clip(dir.path(), "a", 4, 0);
    clip(dir.path(), "b", 4, 0);
    let m = manifest(dir.path(), "m.csv", &[("a", "real"), ("b", "real")]);
    let out = dir.path().join("cal");
    ok(&with_small(&["calibrate", s(&m), "--out", s(&out), "--q-mv", "0.6", "--epsilon", "0.001"]));
    let json: Value = serde_json::from_str(&fs::read_to_string(out.join("thresholds.json")).unwrap()).unwrap();
    assert_eq!(json["thresholds"]["p_low"], 0.001);
    assert_eq!(json["config"]["q_mv"], 0.6);
    assert_eq!(json["config"]["alpha_low"], 0.25);
    assert_eq!(json["config"]["alpha_high"], 0.75);
    let f = &json["fractions"];
    let sum = f["low"].as_f64().unwrap() + f["mid"].as_f64().unwrap() + f["high"].as_f64().unwrap();
    assert_eq!(sum, 1.0);
}

#[test]
fn input_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let missing = mvlens(&["stats", s(&dir.path().join("nope.csv")), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(1));

    clip(dir.path(), "a", 3, 1);
    let m = manifest(dir.path(), "m.csv", &[("a", "real")]);
    let bad_q = mvlens(&["calibrate", s(&m), "--out", s(&out), "--q-mv", "1.5"]);
    assert_eq!(bad_q.status.code(), Some(1));
    let bad_flag = mvlens(&["stats", s(&m), "--out", s(&out), "--no-such-flag"]);
    assert_eq!(bad_flag.status.code(), Some(1));
    assert!(!out.exists());
    assert!(mvlens(&["--help"]).status.success());
}
