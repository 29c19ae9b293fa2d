use std::path::Path;
use std::process::{Command, Output};

fn lamina(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lamina"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn tilt_out_of_range_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lamina(&["pipeline", "--tilt-deg", "91"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[0, 90]"), "{err}");
}

#[test]
fn unknown_flags_and_config_keys_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lamina(&["phantom", "--out", "p.vol", "--bogus"], dir.path()).status.code(), Some(1));
    std::fs::write(dir.path().join("c.json"), r#"{"train": {"lr": {"densty": 1}}}"#).unwrap();
    let out = lamina(&["--config", "c.json", "phantom", "--out", "p.vol"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("densty"));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lamina(&["fdk", "--projections", "none.proj", "--out", "v.vol"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_of_identical_volumes_reports_the_sentinel() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lamina(&["phantom", "--dims", "16", "--out", "a.vol"], dir.path()));
    let out = lamina(&["eval", "a.vol", "a.vol"], dir.path());
    ok(&out);
    let r = json(&out);
    assert_eq!(r["psnr_db"], 99.0);
    assert_eq!(r["identical"], true);
    assert_eq!(r["ssim"], 1.0);
}

#[test]
fn stages_compose_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let grid = ["--dims", "16"];
    ok(&lamina(&[&["phantom", "--out", "p.vol"][..], &grid].concat(), d));
    ok(&lamina(&["simulate", "--phantom", "p.vol", "--out", "s.proj", "--views", "6", "--samples-per-ray", "64"], d));
    ok(&lamina(&[&["fdk", "--projections", "s.proj", "--out", "f.vol"][..], &grid].concat(), d));
    ok(&lamina(&["init", "--volume", "f.vol", "--out", "i.lgsc", "--num-points", "200"], d));
    ok(&lamina(&["init", "--volume", "f.vol", "--out", "u.lgsc", "--num-points", "200", "--init", "uniform"], d));
    ok(&lamina(
        &[
            "reconstruct", "--projections", "s.proj", "--init-scene", "i.lgsc", "--out", "r.lgsc", "--metrics",
            "m.jsonl", "--iterations", "40", "--log-interval", "10",
        ],
        d,
    ));
    let log = std::fs::read_to_string(d.join("m.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3]["iter"], 40);
    for key in ["loss", "l1", "ssim_term", "M"] {
        assert!(lines[0].get(key).is_some(), "{key}");
    }
    let out = lamina(&["eval", "r.lgsc", "p.vol"], d);
    ok(&out);
    assert!(json(&out)["psnr_db"].as_f64().unwrap() > 0.0);
    ok(&lamina(&["export", "r.lgsc", "--out-dir", "png", "--dims", "16"], d));
    assert_eq!(std::fs::read_dir(d.join("png")).unwrap().count(), 16);
}

#[test]
fn pipeline_emits_scene_volume_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = lamina(
        &[
            "pipeline", "--views", "50", "--tilt-deg", "30", "--dims", "64", "--iterations", "100", "--threads", "1",
            "--out-dir", "run",
        ],
        dir.path(),
    );
    ok(&out);
    let run = dir.path().join("run");
    for f in ["scene.lgsc", "reconstruction.vol", "report.json", "metrics.jsonl", "settings.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let report = json(&out);
    assert_eq!(report["views"], 50);
    assert!(report["reconstruction"]["psnr_db"].as_f64().unwrap() > report["fdk"]["psnr_db"].as_f64().unwrap());
    let log = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert!(!log.contains("wall_ms"));
}
