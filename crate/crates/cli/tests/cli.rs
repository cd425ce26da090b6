use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn uavtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uavtrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(uavtrack(&["--help"]).status.code(), Some(0));
    assert_eq!(uavtrack(&["--version"]).status.code(), Some(0));
    assert_eq!(uavtrack(&["track", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_flag_is_a_usage_error_and_echoed() {
    let out = uavtrack(&["track", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--frobnicate"));
    assert_eq!(uavtrack(&[]).status.code(), Some(1));
    assert_eq!(uavtrack(&["synth"]).status.code(), Some(1), "--out is required");
}

#[test]
fn missing_or_malformed_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let out = uavtrack(&[
        "track",
        "--det",
        path(&missing),
        "--out",
        path(&dir.path().join("o.txt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.txt"));

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "1,1,0,0,10,10,0.9\n1,2,0,0,ten,10,0.9\n").unwrap();
    let out = uavtrack(&["track", "--det", path(&bad), "--out", path(&dir.path().join("o.txt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:5:"));

    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[tracker]\nbogus = 3\n").unwrap();
    let out = uavtrack(&["synth", "--config", path(&cfg), "--out", path(&dir.path().join("s"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tracker.bogus"));
}

#[test]
fn synth_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = uavtrack(&["synth", "--seed", "7", "--out", path(&dir.path().join(name))]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["gt.txt", "det.txt", "det.emb"] {
        let a = fs::read(dir.path().join("a/seq01").join(file)).unwrap();
        let b = fs::read(dir.path().join("b/seq01").join(file)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{file}");
    }
    let other = uavtrack(&["synth", "--seed", "8", "--out", path(&dir.path().join("c"))]);
    assert_eq!(other.status.code(), Some(0));
    assert_ne!(
        fs::read(dir.path().join("a/seq01/gt.txt")).unwrap(),
        fs::read(dir.path().join("c/seq01/gt.txt")).unwrap()
    );
}

#[test]
fn clean_detections_track_almost_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let (data, results, report) = (
        dir.path().join("data"),
        dir.path().join("res"),
        dir.path().join("r.json"),
    );
    assert!(uavtrack(&["synth", "--seed", "3", "--clean", "--out", path(&data)])
        .status
        .success());
    assert!(
        uavtrack(&["track", "--input-dir", path(&data), "--out-dir", path(&results)])
            .status
            .success()
    );
    let out = uavtrack(&[
        "eval",
        "--gt-dir",
        path(&data),
        "--results-dir",
        path(&results),
        "--report",
        path(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("IDF1"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let agg = &json["aggregate"];
    assert!(agg["mota"].as_f64().unwrap() >= 0.99, "{agg}");
    assert_eq!(agg["ids"].as_u64(), Some(0));
}

#[test]
fn single_file_mode_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(uavtrack(&["synth", "--seed", "1", "--out", path(&data)])
        .status
        .success());
    let seq = data.join("seq01");
    let res = dir.path().join("res.txt");
    let out = uavtrack(&[
        "track",
        "--det",
        path(&seq.join("det.txt")),
        "--emb",
        path(&seq.join("det.emb")),
        "--out",
        path(&res),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = dir.path().join("table.txt");
    let out = uavtrack(&[
        "eval",
        "--gt",
        path(&seq.join("gt.txt")),
        "--results",
        path(&res),
        "--table",
        path(&table),
    ]);
    assert!(out.status.success());
    assert_eq!(
        fs::read_to_string(&table).unwrap(),
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn modules_self_test_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = uavtrack(&["modules", "--seed", "5", "--dump", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["maps.stct", "tebm.stct", "tdrm.stct"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let again = uavtrack(&[
        "modules",
        "--seed",
        "5",
        "--tebm-params",
        path(&dir.path().join("tebm.stct")),
        "--tdrm-params",
        path(&dir.path().join("tdrm.stct")),
    ]);
    assert_eq!(
        again.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&again.stderr)
    );
}
