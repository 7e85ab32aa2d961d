use std::path::Path;
use std::process::{Command, Output};

fn ttmkit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttmkit"))
        .args(args)
        .current_dir(dir)
        .env_remove("TTMKIT_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = ttmkit(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn synth_small(dir: &Path) {
    ok(&["synth", "--size", "13", "--grid", "2,2,1", "--spacing", "16", "-o", "data"], dir);
    ok(&["template-build", "--template", "data/template.mrc", "--n-integration", "5000", "-o", "tt"], dir);
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["match", "--help"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Usage") && text.contains("--refine"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["match", "--no-such-flag"]] {
        let out = ttmkit(args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
    assert_eq!(ttmkit(&["tm-match", "--n-rotations", "many"], dir.path()).status.code(), Some(1));
    // range checks and missing inputs are usage errors too
    assert_eq!(ttmkit(&["synth", "--size", "16", "-o", "x"], dir.path()).status.code(), Some(1));
    assert_eq!(ttmkit(&["match"], dir.path()).status.code(), Some(1));
    std::fs::write(dir.path().join("c.json"), r#"{"n_peak": 3}"#).unwrap();
    let out = ttmkit(&["--config", "c.json", "synth", "-o", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_peak"));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = ttmkit(&["match", "--image", "missing.mrc", "--tensorial-template", "tt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.mrc"));
    std::fs::write(dir.path().join("bad.mrc"), [0u8; 2000]).unwrap();
    std::fs::create_dir(dir.path().join("tt")).unwrap();
    let out = ttmkit(&["match", "--image", "bad.mrc", "--tensorial-template", "tt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_writes_table_shaped_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    for f in ["data/template.mrc", "data/tomogram.mrc", "data/gt.csv", "data/gt.json", "tt/meta.json", "tt/comp_34.mrc"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    ok(&["match", "--image", "data/tomogram.mrc", "--tensorial-template", "tt", "--n-peaks", "4", "--refine", "-o", "peaks.csv"], d);
    let out = ok(&["eval", "--peaks", "peaks.csv", "--gt", "data/gt.csv", "--template-name", "l-shape", "--method", "ttm-ref"], d);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "template,method,n_gt,n_matched,pos_mean,pos_max,rot_mean_deg,rot_max_deg");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..6], ["l-shape", "ttm-ref", "4", "4", "0.0", "0.0"]);
    assert!(row[6].parse::<f64>().unwrap() <= 1.0);

    ok(&["eval", "--peaks", "peaks.csv", "--gt", "data/gt.csv", "--picking-factors", "0.5,1", "-o", "ev"], d);
    let curve = std::fs::read_to_string(d.join("ev/curve.csv")).unwrap();
    assert!(curve.starts_with("picking_factor,n_peaks,n_matched,precision,recall,f1\n"));
    assert!(curve.lines().nth(2).unwrap().ends_with(",1.0,1.0,1.0"));
    assert!(d.join("ev/stats.csv").is_file());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    std::fs::write(
        d.join("run.json"),
        r#"{"image": "data/tomogram.mrc", "tensorial_template": "tt", "n_peaks": 2}"#,
    )
    .unwrap();
    let rows = |out: Output| String::from_utf8(out.stdout).unwrap().lines().count() - 1;
    assert_eq!(rows(ok(&["--config", "run.json", "match"], d)), 2);
    assert_eq!(rows(ok(&["--config", "run.json", "match", "--n-peaks", "3"], d)), 3);
    let out = ttmkit(&["--config", "run.json", "match", "--threads", "2"], d);
    assert!(out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_ttmkit"))
        .args(["--config", "run.json", "match"])
        .current_dir(d)
        .env("TTMKIT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_emits_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    ok(
        &[
            "bench", "--image", "data/tomogram.mrc", "--template", "data/template.mrc", "--tensorial-template", "tt",
            "--rotations", "20,40", "--repeats", "1", "-o", "bench.csv",
        ],
        d,
    );
    let text = std::fs::read_to_string(d.join("bench.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,n_rotations,angular_accuracy_deg,wall_seconds,correlations");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("tm,20,") && lines[1].ends_with(",22"));
    assert!(lines[4].starts_with("ttm,40,") && lines[4].ends_with(",35"));
}
