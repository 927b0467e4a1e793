use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use panocompose::manifest::Manifest;
use panocompose::pipeline::{oracle_predictions, write_predictions, PredictionRecord};
use panocompose::projection::{render_view, CameraIntrinsics, CameraPose, ErpImage};
use panocompose::scene::PoseRecord;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pano-compose"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a command that must fail and returns its single-line reason.
fn fails(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let errors: Vec<&str> = stderr.lines().filter(|l| l.starts_with("error: ")).collect();
    assert_eq!(errors.len(), 1, "stderr: {stderr}");
    errors[0].to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset with equatorial initial poses so every candidate survives.
fn equatorial_dataset(dir: &Path, count: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "synth",
        "--dataset",
        s(&data),
        "--count",
        &count.to_string(),
        "--width",
        "256",
        "--height",
        "128",
        "--seed",
        "3",
        "--view-width",
        "96",
        "--view-height",
        "72",
    ]);
    let path = data.join("manifest.jsonl");
    let mut m = Manifest::read(&path).unwrap();
    for (i, scene) in m.scenes.iter_mut().enumerate() {
        scene.init_pose = PoseRecord {
            theta_deg: 10.0 * i as f64,
            phi_deg: 0.0,
        };
    }
    m.write(&path).unwrap();
    path
}

#[test]
fn synth_single_panorama_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    for out in [&a, &b] {
        let line = ok(&["synth", "--width", "128", "--height", "64", "--pattern", "direction", "--seed", "5", "--out", s(out)]);
        assert!(line.starts_with("wrote 128x64 direction panorama"));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ErpImage::open(&a).unwrap().width(), 128);
}

#[test]
fn extract_defaults_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let erp = dir.path().join("erp.png");
    ok(&["synth", "--width", "256", "--height", "128", "--out", s(&erp)]);
    let view = dir.path().join("view.png");
    let stdout = ok(&["extract", "--erp", s(&erp), "--theta", "-30", "--phi", "12.5", "--out", s(&view)]);
    assert!(stdout.starts_with("rect center_theta_deg=-30 center_phi_deg=12.5 alpha_deg="));
    assert!(stdout.contains("beta_deg=60.000000"));

    let img = ErpImage::open(&view).unwrap();
    assert_eq!((img.width(), img.height()), (1024, 768));
    let expected = render_view(
        &ErpImage::open(&erp).unwrap(),
        &CameraPose::new(-30.0, 12.5).unwrap(),
        &CameraIntrinsics::default(),
    )
    .to_png_bytes()
    .unwrap();
    assert_eq!(std::fs::read(&view).unwrap(), expected);
}

#[test]
fn extract_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.png");
    let msg = fails(&["extract", "--erp", s(&dir.path().join("missing.png")), "--out", s(&out)]);
    assert!(msg.contains("missing.png"), "{msg}");
    let erp = dir.path().join("erp.png");
    ok(&["synth", "--width", "64", "--height", "32", "--out", s(&erp)]);
    let msg = fails(&["extract", "--erp", s(&erp), "--phi", "120", "--out", s(&out)]);
    assert!(msg.contains("latitude 120"), "{msg}");
    fails(&["extract", "--erp", s(&erp), "--fov-y", "0", "--out", s(&out)]);
    assert!(!out.exists());
}

#[test]
fn candidates_label_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = equatorial_dataset(dir.path(), 3);
    let cands = dir.path().join("cands.jsonl");
    let stdout = ok(&[
        "candidates", "--manifest", s(&manifest), "--out", s(&cands), "--lambda", "0", "--test-mode",
    ]);
    assert!(stdout.contains("candidates: 240 over 3 scenes"), "{stdout}");
    let m = Manifest::read(&cands).unwrap();
    assert!(m.scenes.iter().all(|sc| sc.candidates.len() == 80));
    let gen = m.header.generation.as_ref().unwrap();
    assert_eq!((gen.lambda, gen.test_mode), (0.0, true));

    let default_cands = dir.path().join("default.jsonl");
    ok(&["candidates", "--manifest", s(&manifest), "--out", s(&default_cands)]);
    let d = Manifest::read(&default_cands).unwrap();
    assert!(d.scenes.iter().all(|sc| !sc.candidates.is_empty() && sc.candidates.len() < 80));

    let labeled = dir.path().join("labeled.jsonl");
    let stdout = ok(&["label", "--manifest", s(&default_cands), "--out", s(&labeled), "--top-n", "0.25"]);
    assert!(stdout.starts_with("n_frac: 0.25\nlabeled: 3"), "{stdout}");
    let l = Manifest::read(&labeled).unwrap();
    assert!(l.scenes.iter().all(|sc| sc.labels.is_some() && sc.init_score.is_some()));
    assert_eq!(l.header.labeling.as_ref().unwrap().scorer, "heuristic");

    let preds = dir.path().join("preds.jsonl");
    write_predictions(&preds, &oracle_predictions(&l)).unwrap();
    let report_path = dir.path().join("report.json");
    let stdout = ok(&["eval", "--predictions", s(&preds), "--manifest", s(&labeled), "--out", s(&report_path)]);
    assert_eq!(stdout, std::fs::read_to_string(&report_path).unwrap());
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["count"], 3);
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        ["auc", "cs", "mae_rad", "sphiou_tp", "sphiou_tp_fp", "confusion", "count", "decision_threshold"]
    );
    if !report["mae_rad"].is_null() {
        assert_eq!(report["mae_rad"], 0.0);
        assert_eq!(report["sphiou_tp"], 1.0);
    }
}

#[test]
fn planted_score_table_drives_labels() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = equatorial_dataset(dir.path(), 2);
    let cands = dir.path().join("cands.jsonl");
    ok(&["candidates", "--manifest", s(&manifest), "--out", s(&cands), "--lambda", "0", "--test-mode"]);
    let m = Manifest::read(&cands).unwrap();

    let mut table = String::from("scene_id,theta_deg,phi_deg,score\n");
    for scene in &m.scenes {
        let init = scene.init_pose;
        table.push_str(&format!("{},{},{},-1\n", scene.scene_id, init.theta_deg, init.phi_deg));
        for (i, c) in scene.candidates.iter().enumerate() {
            let score = if i == 10 { 1.0 } else { 0.0 };
            table.push_str(&format!("{},{},{},{score}\n", scene.scene_id, c.theta_deg, c.phi_deg));
        }
    }
    let csv = dir.path().join("scores.csv");
    std::fs::write(&csv, table).unwrap();

    let labeled = dir.path().join("labeled.jsonl");
    let scorer = format!("csv:{}", s(&csv));
    let stdout = ok(&["label", "--manifest", s(&cands), "--out", s(&labeled), "--scorer", &scorer]);
    assert!(stdout.contains("y_s=1: 2"), "{stdout}");
    for scene in Manifest::read(&labeled).unwrap().scenes {
        let l = scene.labels.unwrap();
        let target = &scene.candidates[10];
        assert_eq!(l.y_s, 1);
        let dt = panocompose::labeling::shortest_arc(scene.init_pose.theta_deg, target.theta_deg);
        assert!((l.d_theta_deg - dt).abs() < 1e-9);
        assert!((l.d_phi_deg - (target.phi_deg - scene.init_pose.phi_deg)).abs() < 1e-9);
    }

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "scene_id,theta_deg,phi_deg,score\n").unwrap();
    let out = dir.path().join("failed.jsonl");
    let msg = fails(&["label", "--manifest", s(&cands), "--out", s(&out), "--scorer", &format!("csv:{}", s(&empty))]);
    assert!(msg.contains("labeling failed for all 2 scenes"), "{msg}");
    let failed = Manifest::read(&out).unwrap();
    assert!(failed.scenes.iter().all(|sc| sc.extra.contains_key("error")));
}

#[test]
fn candidates_report_missing_panoramas() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = equatorial_dataset(dir.path(), 2);
    std::fs::remove_file(dir.path().join("data/erp/scene_0001.png")).unwrap();
    let out_path = dir.path().join("cands.jsonl");
    let out = run(&["candidates", "--manifest", s(&manifest), "--out", s(&out_path)]);
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("scene-error: scene scene_0001"), "{stderr}");
    let m = Manifest::read(&out_path).unwrap();
    assert!(m.scene("scene_0001").unwrap().candidates.is_empty());
    assert!(!m.scene("scene_0000").unwrap().candidates.is_empty());

    std::fs::remove_file(dir.path().join("data/erp/scene_0000.png")).unwrap();
    let msg = fails(&["candidates", "--manifest", s(&manifest), "--out", s(&out_path)]);
    assert!(msg.contains("candidate generation failed for all 2 scenes"), "{msg}");
}

#[test]
fn eval_reports_misaligned_ids() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = equatorial_dataset(dir.path(), 2);
    let cands = dir.path().join("cands.jsonl");
    ok(&["candidates", "--manifest", s(&manifest), "--out", s(&cands)]);
    let labeled = dir.path().join("labeled.jsonl");
    ok(&["label", "--manifest", s(&cands), "--out", s(&labeled)]);
    let preds = dir.path().join("preds.jsonl");
    write_predictions(
        &preds,
        &[PredictionRecord {
            scene_id: "scene_0000".into(),
            suggest_prob: 0.4,
            d_theta_deg: 0.0,
            d_phi_deg: 0.0,
        }, PredictionRecord {
            scene_id: "ghost".into(),
            suggest_prob: 0.4,
            d_theta_deg: 0.0,
            d_phi_deg: 0.0,
        }],
    )
    .unwrap();
    let msg = fails(&["eval", "--predictions", s(&preds), "--manifest", s(&labeled)]);
    assert!(msg.contains("missing predictions [scene_0001]"), "{msg}");
    assert!(msg.contains("no labeled scene for [ghost]"), "{msg}");

    std::fs::write(&preds, "{not json}\n").unwrap();
    let msg = fails(&["eval", "--predictions", s(&preds), "--manifest", s(&labeled)]);
    assert!(msg.contains("line 1"), "{msg}");
}

#[test]
fn gradcheck_passes_and_rejects_zero_trials() {
    let stdout = ok(&["gradcheck", "--seed", "4", "--trials", "20"]);
    assert!(stdout.trim_end().ends_with("overall: PASS"), "{stdout}");
    for loss in ["mse", "rank", "quality", "suggest", "cs", "norm", "cpam"] {
        assert!(stdout.contains(loss), "{loss} missing");
    }
    fails(&["gradcheck", "--trials", "0"]);
}

#[test]
fn serve_reports_unusable_address() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = equatorial_dataset(dir.path(), 1);
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let msg = fails(&["serve", "--manifest", s(&manifest), "--port", &port]);
    assert!(msg.contains("cannot listen on 127.0.0.1"), "{msg}");

    let msg = fails(&["serve", "--manifest", s(&dir.path().join("nope.jsonl"))]);
    assert!(msg.contains("nope.jsonl"), "{msg}");
}
