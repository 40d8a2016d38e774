use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

fn tdreg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdreg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn tdreg")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = tdreg(dir, args);
    assert!(
        out.status.success(),
        "tdreg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Rows of an artifact CSV with the provenance lines stripped.
fn rows(path: &Path) -> Vec<csv::StringRecord> {
    let text = std::fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    csv::Reader::from_reader(body.as_bytes()).records().map(Result::unwrap).collect()
}

#[test]
fn m1_activity_term_is_calibrated_under_the_null() {
    let dir = tempfile::tempdir().unwrap();
    let reps = 40;
    let mut rejections = 0;
    for seed in 0..reps {
        let s = seed.to_string();
        ok(dir.path(), &["--seed", &s, "--out", "syn", "synth", "--effect", "none", "--days", "3"]);
        ok(
            dir.path(),
            &["--minutes", "syn/minutes.csv", "--subjects", "syn/subjects.csv", "--out", "fit", "fit", "--model", "m1"],
        );
        let coef = rows(&dir.path().join("fit/coefficients.csv"));
        let p: f64 = coef.iter().find(|r| &r[1] == "activity_mean").unwrap()[5].parse().unwrap();
        if p < 0.05 {
            rejections += 1;
        }
    }
    assert!(rejections * 10 <= reps, "{rejections}/{reps} null rejections");
}

#[test]
fn constant_panel_gives_constant_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("subject_id,day_index,minute,value,missing\n");
    for s in ["A", "B", "C"] {
        for d in 0..2 {
            for m in 0..1440 {
                writeln!(csv, "{s},{d},{m},4.5,0").unwrap();
            }
        }
    }
    std::fs::write(dir.path().join("flat.csv"), csv).unwrap();
    ok(dir.path(), &["--minutes", "flat.csv", "--out", "feat", "features"]);
    let surf = rows(&dir.path().join("feat/td_surfaces.csv"));
    assert_eq!(surf.len(), 3 * 144 * 99);
    assert!(surf.iter().all(|r| r[3].parse::<f64>().unwrap() == 4.5));
    let q = rows(&dir.path().join("feat/quantile_functions.csv"));
    assert!(q.iter().all(|r| r[2].parse::<f64>().unwrap() == 4.5));
}

#[test]
fn cv_is_reproducible_and_stages_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "5", "--out", "syn", "synth", "--effect", "td_surface", "--n-subjects", "120"]);
    let inputs = ["--minutes", "syn/minutes.csv", "--subjects", "syn/subjects.csv"];
    for out in ["a", "b"] {
        let mut args = inputs.to_vec();
        args.extend(["--seed", "9", "--out", out, "cv", "--model", "m4", "--repeats", "2"]);
        ok(dir.path(), &args);
    }
    for f in ["cv_summary.csv", "cv_repeats.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    for out in ["fa", "fb"] {
        let mut args = inputs.to_vec();
        args.extend(["--out", out, "features"]);
        ok(dir.path(), &args);
    }
    let a = std::fs::read(dir.path().join("fa/td_surfaces.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("fb/td_surfaces.csv")).unwrap());
}

#[test]
fn artifacts_carry_provenance() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "12", "--out", "syn", "synth", "--n-subjects", "20", "--days", "2"]);
    let text = std::fs::read_to_string(dir.path().join("syn/subjects.csv")).unwrap();
    let head: Vec<&str> = text.lines().take(3).collect();
    assert!(head[0].starts_with("# tdreg "));
    assert!(head[1].starts_with("# config_sha256 ") && head[1].len() == "# config_sha256 ".len() + 64);
    assert_eq!(head[2], "# seed 12");
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("syn/truth.json")).unwrap()).unwrap();
    assert_eq!(truth["provenance"]["seed"], 12);
    let resolved = std::fs::read_to_string(dir.path().join("syn/config.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 12"));
}

#[test]
fn failure_leaves_no_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("syn");
    std::fs::create_dir_all(out.join("subjects.csv")).unwrap();
    let res = tdreg(dir.path(), &["--out", "syn", "synth", "--n-subjects", "20", "--days", "2"]);
    assert_eq!(res.status.code(), Some(8));
    let left: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(left, vec!["subjects.csv".to_string()]);
}

#[test]
fn errors_carry_codes_and_category_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let res = tdreg(dir.path(), &["--set", "fit.k_t=notanumber", "fit"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error[cli.config]"));

    std::fs::write(dir.path().join("bad.csv"), "subject_id,day_index,minute,value\nA,0,0,-1\n").unwrap();
    let res = tdreg(dir.path(), &["--minutes", "bad.csv", "--out", "o", "ingest"]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error[ingest."));
}
