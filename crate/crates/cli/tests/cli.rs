use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowcut::flowviz::FlowField;
use flowcut::tensor_io::{read_mask, read_rgb, write_array, write_mask, write_rgb, FeatureGrid, FeatureKind, MaskSource, PixelMask, RgbFrame};

const ROWS: usize = 4;
const COLS: usize = 5;
const PATCH: usize = 4;
const CHANNELS: usize = 8;

fn flowcut(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowcut"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn foreground(r: usize, c: usize) -> bool {
    (1..3).contains(&r) && (1..4).contains(&c)
}

/// Features of two clusters (unit vectors e0 and e1 plus a small
/// deterministic wobble), the planted pixel mask and a two-colour image.
fn planted(frame: usize, kind: FeatureKind) -> FeatureGrid {
    let mut data = Vec::new();
    for r in 0..ROWS {
        for c in 0..COLS {
            for k in 0..CHANNELS {
                let base = if k == usize::from(foreground(r, c)) { 1.0 } else { 0.0 };
                let wobble = 0.05 * (((r * 7 + c * 3 + k * 5 + frame) as f32) * 1.3).sin();
                data.push(base + wobble);
            }
        }
    }
    FeatureGrid::with_patch_size(ROWS, COLS, CHANNELS, data, PATCH, kind).unwrap()
}

fn planted_gt() -> PixelMask {
    let (h, w) = (ROWS * PATCH, COLS * PATCH);
    let data = (0..h * w).map(|i| u8::from(foreground(i / w / PATCH, i % w / PATCH))).collect();
    PixelMask::new(h, w, data, MaskSource::GroundTruth).unwrap()
}

fn write_fixture(root: &Path) {
    fs::create_dir_all(root).unwrap();
    fs::write(root.join("dataset.toml"), format!("averaging_mode = \"sequence_average\"\npatch_size = {PATCH}\n")).unwrap();
    let gt = planted_gt();
    let img = RgbFrame::new(
        gt.height,
        gt.width,
        gt.data.iter().flat_map(|&v| if v == 1 { [210u8, 40, 40] } else { [20, 80, 170] }).collect(),
    )
    .unwrap();
    for (k, seq) in ["cat", "kite"].iter().enumerate() {
        for f in 0..3 {
            let frame = format!("{f:05}");
            let idx = k * 3 + f;
            write_array(root.join("feat_app").join(seq).join(format!("{frame}.npy")), &planted(idx, FeatureKind::Appearance).to_array()).unwrap();
            write_array(root.join("feat_flow").join(seq).join(format!("{frame}.npy")), &planted(idx + 10, FeatureKind::Flow).to_array()).unwrap();
            write_mask(root.join("gt").join(seq).join(format!("{frame}.png")), &gt).unwrap();
            write_rgb(root.join("frames").join(seq).join(format!("{frame}.png")), &img).unwrap();
        }
    }
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn segment_writes_planted_masks_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    write_fixture(&data);
    let o = flowcut(&["segment", "--dataset", s(&data), "--out", s(&out), "--tau", "0.5", "--no-crf"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let masks = tree(&out.join("masks"));
    assert_eq!(masks.len(), 6);
    for (rel, _) in &masks {
        let m = read_mask(out.join("masks").join(rel), MaskSource::Graphcut).unwrap();
        assert_eq!(m.data, planted_gt().data, "{}", rel.display());
    }
    let snapshot: serde_json::Value = serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot["config"]["affinity"]["tau"], 0.5);
    assert_eq!(snapshot["hash"].as_str().unwrap().len(), 64);
    let log = fs::read_to_string(out.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(log.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["status"] == "ok"));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!("dataset = {:?}\noutput = {:?}\ncrf_enabled = false\n[affinity]\ntau = 0.5\n", s(&data), s(&dir.path().join("a"))),
    )
    .unwrap();
    assert!(flowcut(&["--config", s(&cfg), "segment"]).status.success());
    let o = flowcut(&["--config", s(&cfg), "--threads", "1", "segment", "--out", s(&dir.path().join("b"))]);
    assert!(o.status.success());
    assert_eq!(tree(&dir.path().join("a/masks")), tree(&dir.path().join("b/masks")));
}

#[test]
fn appearance_only_ignores_permuted_flow() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = flowcut(&["segment", "--dataset", s(&data), "--out", s(&out), "--alpha", "1.0"]);
        assert!(o.status.success());
        tree(&out.join("masks"))
    };
    let before = run("a");
    // rotate the flow files of one sequence
    let flow = data.join("feat_flow/cat");
    fs::rename(flow.join("00000.npy"), flow.join("tmp.npy")).unwrap();
    fs::rename(flow.join("00001.npy"), flow.join("00000.npy")).unwrap();
    fs::rename(flow.join("00002.npy"), flow.join("00001.npy")).unwrap();
    fs::rename(flow.join("tmp.npy"), flow.join("00002.npy")).unwrap();
    assert_eq!(before, run("b"));
}

#[test]
fn segment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data);
    let trees: Vec<_> = ["a", "b"]
        .iter()
        .map(|n| {
            let out = dir.path().join(n);
            assert!(flowcut(&["--seed", "3", "segment", "--dataset", s(&data), "--out", s(&out)]).status.success());
            (tree(&out.join("masks")), fs::read(out.join("log.jsonl")).unwrap())
        })
        .collect();
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn broken_frame_is_a_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    write_fixture(&data);
    fs::write(data.join("feat_app/kite/00001.npy"), b"not an array").unwrap();
    let o = flowcut(&["segment", "--dataset", s(&data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kite/00001"));
    assert_eq!(tree(&out.join("masks")).len(), 5);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data);
    let out = dir.path().join("out");
    for args in [
        vec!["segment", "--dataset", s(&data), "--out", s(&out), "--alpha", "1.5"],
        vec!["segment", "--dataset", s(&dir.path().join("missing")), "--out", s(&out)],
        vec!["segment", "--out", s(&out)],
        vec!["segment", "--dataset", s(&data), "--out", s(&out), "--tau", "abc"],
        vec!["--config", s(&dir.path().join("none.toml")), "segment"],
    ] {
        assert_eq!(flowcut(&args).status.code(), Some(2), "{args:?}");
    }
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "unknown_key = 1\n").unwrap();
    assert_eq!(flowcut(&["--config", s(&bad), "segment"]).status.code(), Some(2));
    assert!(!out.exists());
}

fn mask(data: [u8; 16]) -> PixelMask {
    PixelMask::new(4, 4, data.to_vec(), MaskSource::Graphcut).unwrap()
}

#[test]
fn evaluate_matches_hand_computed_scores() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    let full = mask([1; 16]);
    let left2 = mask([1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0]);
    let left1 = mask([1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
    let top_left = mask([1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
    let bottom_right = mask([0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1]);
    // J: 1, 1/2, 0.  F (tol 1 px): 1, 1, 0.  accuracy: 1, 3/4, 1/2
    for (f, p, g) in [("a", &full, &full), ("b", &left1, &left2), ("c", &bottom_right, &top_left)] {
        write_mask(pred.join("s").join(format!("{f}.png")), p).unwrap();
        write_mask(gt.join("s").join(format!("{f}.png")), g).unwrap();
    }
    let report_path = dir.path().join("report.json");
    let o = flowcut(&["evaluate", "--pred", s(&pred), "--gt", s(&gt), "--mode", "frame", "--out", s(&report_path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["dataset_j"], 0.5);
    assert_eq!(report["dataset_f"], 0.6667);
    assert_eq!(report["dataset_accuracy"], 0.75);
    assert_eq!(report["averaging_mode"], "frame_average");
    let saved: serde_json::Value = serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    assert_eq!(saved, report);
}

#[test]
fn evaluate_identity_and_missing_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data);
    let o = flowcut(&["evaluate", "--pred", s(&data.join("gt")), "--gt", s(&data.join("gt"))]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["dataset_j"], 1.0);

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = flowcut(&["evaluate", "--pred", s(&empty), "--gt", s(&data.join("gt"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("cat/00000") && err.contains("kite/00002"), "{err}");
}

#[test]
fn selftrain_with_zero_rounds_keeps_graph_cut_masks() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    write_fixture(&data);
    let o = flowcut(&["selftrain", "--dataset", s(&data), "--out", s(&run), "--rounds", "0", "--no-crf", "--tau", "0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(tree(&run.join("round_0/masks")).len(), 6);
    assert!(!run.join("round_1").exists());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.join("round_0/report.json")).unwrap()).unwrap();
    assert_eq!(report["dataset_j"], 1.0);
}

#[test]
fn seed_varied_runs_ensemble_into_one_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data);
    let mut inputs = Vec::new();
    for seed in 0..5 {
        let run = dir.path().join(format!("run{seed}"));
        let seed = seed.to_string();
        let o = flowcut(&[
            "--seed", &seed, "selftrain", "--dataset", s(&data), "--out", s(&run), "--rounds", "1",
            "--init-scale", "0.5", "--iters", "50", "--early-stop", "0",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(run.join("round_1/probe.json").is_file());
        inputs.push(run.join("round_1/masks").to_str().unwrap().to_string());
    }
    let out = dir.path().join("ensemble");
    let o = flowcut(&["ensemble", "--inputs", &inputs.join(","), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(tree(&out).len(), 6);
    // an even number of voters is rejected
    let o = flowcut(&["ensemble", "--inputs", &inputs[..2].join(","), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn selftrain_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture(&data);
    let trees: Vec<_> = ["a", "b"]
        .iter()
        .map(|n| {
            let run = dir.path().join(n);
            let o = flowcut(&["--seed", "9", "selftrain", "--dataset", s(&data), "--out", s(&run), "--rounds", "2", "--init-scale", "0.3", "--early-stop", "0"]);
            assert!(o.status.success());
            (tree(&run.join("round_1")), tree(&run.join("round_2")))
        })
        .collect();
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn external_predictions_become_the_next_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    write_fixture(&data);
    let base = ["selftrain", "--dataset", s(&data), "--out", s(&run)];
    assert!(flowcut(&[&base[..], &["--rounds", "0"]].concat()).status.success());
    // nothing deposited yet
    assert_eq!(flowcut(&[&base[..], &["--external"]].concat()).status.code(), Some(1));
    for (rel, bytes) in tree(&data.join("gt")) {
        let p = run.join("round_0/external").join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, bytes).unwrap();
    }
    let o = flowcut(&[&base[..], &["--external"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(tree(&run.join("round_1/masks")), tree(&data.join("gt")));
    // and training continues from there
    assert!(flowcut(&[&base[..], &["--continue", "--rounds", "1"]].concat()).status.success());
    assert!(run.join("round_2/probe.json").is_file());
}

#[test]
fn flow2rgb_renders_zero_flow_white() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("flow");
    let out = dir.path().join("rgb");
    let zero = FlowField::new(5, 7, vec![0.0; 35], vec![0.0; 35]).unwrap();
    for f in ["00000", "00001"] {
        write_array(input.join("seq").join(format!("{f}.npy")), &zero.to_array()).unwrap();
    }
    let o = flowcut(&["flow2rgb", "--in", s(&input), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["00000", "00001"] {
        let rgb = read_rgb(out.join("seq").join(format!("{f}.png"))).unwrap();
        assert_eq!((rgb.height, rgb.width), (5, 7));
        assert!(rgb.data.iter().all(|&v| v == 255));
    }
    let o = flowcut(&["flow2rgb", "--in", s(&input), "--out", s(&out), "--max-magnitude", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}
