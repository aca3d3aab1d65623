use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn posdec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posdec"))
        .current_dir(dir)
        .env_remove("POSDEC_CONFIG")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = posdec(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn desk_chain_runs_and_repeats_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--data-dir", "data"]);
    for f in ["montage.txt", "subjects.txt", "truth.txt", "S01.pdrc", "S01.rest.pdrc", "S04.events.csv"] {
        assert!(d.join("data").join(f).is_file(), "{f}");
    }
    ok(d, &["preprocess", "--data-dir", "data", "--out-dir", "out"]);
    ok(d, &["features", "--out-dir", "out", "--export-outlier-report"]);
    fs::create_dir_all(d.join("again")).unwrap();
    for f in ["features.pfm", "mu_bands.csv"] {
        fs::copy(d.join("out").join(f), d.join("again").join(f)).unwrap();
    }
    fs::create_dir_all(d.join("again/preprocessed")).unwrap();
    fs::copy(d.join("out/preprocessed/montage.txt"), d.join("again/preprocessed/montage.txt")).unwrap();

    for (out, threads) in [("out", "2"), ("again", "1")] {
        ok(d, &["crossval", "--out-dir", out, "--trees", "30", "--threads", threads]);
        ok(d, &["importance", "--out-dir", out, "--threads", threads]);
        ok(d, &["report", "--out-dir", out]);
    }
    for f in [
        "crossval.txt",
        "report.txt",
        "confusion.csv",
        "folds/fold_00_S01.forest",
        "importance/fis.csv",
        "importance/wis.csv",
        "importance/topomap_beta.svg",
    ] {
        let a = fs::read(d.join("out").join(f)).unwrap();
        let b = fs::read(d.join("again").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    assert!(d.join("out/outliers.csv").is_file());
    let report = fs::read_to_string(d.join("out/report.txt")).unwrap();
    assert!(report.contains("top_channel = C3"), "{report}");
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let bad = posdec(d, &["--set", "forest.n_trees=0", "crossval"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("forest.n_trees"));
    assert_eq!(posdec(d, &["--set", "nonsense", "report"]).status.code(), Some(2));
    assert_eq!(posdec(d, &["--config", "missing.toml", "report"]).status.code(), Some(2));
    assert_eq!(posdec(d, &["crossval", "--out-dir", "nowhere"]).status.code(), Some(3));
    fs::create_dir_all(d.join("data")).unwrap();
    fs::write(d.join("data/subjects.txt"), "S01\n").unwrap();
    fs::write(d.join("data/montage.txt"), "not a montage\n").unwrap();
    assert_eq!(posdec(d, &["preprocess"]).status.code(), Some(3));
}

#[test]
fn config_prints_effective_values() {
    let tmp = tempfile::tempdir().unwrap();
    let out = posdec(tmp.path(), &["--set", "forest.seed=9", "config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 9"), "{text}");
}
