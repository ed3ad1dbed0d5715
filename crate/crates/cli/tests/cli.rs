use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pidlens::analysis::{pid_shares, ProfileReport};
use pidlens::ingest::Dataset;
use pidlens::synth::{continuous_manifest, gen_continuous, ContinuousSpec, Structure};
use pidlens::PidAtoms;

fn pidlens(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pidlens"))
        .args(args)
        .current_dir(dir)
        .env_remove("PIDLENS_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Value of `column` in the first data row of a CSV file.
fn csv_field(path: &Path, column: &str) -> String {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    row[header.iter().position(|h| *h == column).unwrap()].to_string()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn write_synth(dir: &Path, name: &str, structure: Structure, n: usize, sep: f64, seed: u64) -> PathBuf {
    let spec = ContinuousSpec {
        cluster_separation: sep,
        ..ContinuousSpec::new(structure, n, seed)
    };
    let mut manifest = continuous_manifest(&spec);
    manifest.model = name.into();
    let mut records = gen_continuous(&spec).unwrap();
    for r in &mut records {
        r.model = name.into();
    }
    let path = dir.join(format!("{name}.jsonl"));
    Dataset { manifest, records }.save(&path).unwrap();
    path
}

#[test]
fn gate_decompositions() {
    let dir = tempfile::tempdir().unwrap();
    ok(&pidlens(dir.path(), &["decompose", "--gate", "xor", "--out-dir", "xor"]));
    let s: f64 = csv_field(&dir.path().join("xor/atoms.csv"), "S").parse().unwrap();
    assert!((s - 1.0).abs() < 1e-3);

    ok(&pidlens(dir.path(), &["decompose", "--gate", "and", "--out-dir", "and"]));
    let csv = dir.path().join("and/atoms.csv");
    let r: f64 = csv_field(&csv, "R").parse().unwrap();
    let s: f64 = csv_field(&csv, "S").parse().unwrap();
    assert!((r - 0.311278).abs() < 1e-3 && (s - 0.5).abs() < 1e-3);
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("and/decomposition.json")).unwrap()).unwrap();
    assert_eq!(doc["estimator"], "discrete");
    assert_eq!(doc["diagnostics"]["converged"], true);
    assert!(dir.path().join("and/provenance.json").exists());
}

#[test]
fn joint_tables_and_their_errors() {
    let dir = tempfile::tempdir().unwrap();
    ok(&pidlens(dir.path(), &["synth", "gate", "--gate", "copy", "--out", "copy.json"]));
    ok(&pidlens(dir.path(), &["decompose", "--joint", "copy.json"]));
    let r: f64 = csv_field(&dir.path().join("atoms.csv"), "R").parse().unwrap();
    assert!((r - 1.0).abs() < 1e-3);

    fs::write(dir.path().join("bad.json"), r#"{"dims":{"n1":1,"n2":1,"k":2},"table":[0.9,0.9]}"#).unwrap();
    assert_eq!(pidlens(dir.path(), &["decompose", "--joint", "bad.json"]).status.code(), Some(2));
    let out = pidlens(dir.path(), &["decompose", "--gate", "xor", "--estimator", "batch"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(pidlens(dir.path(), &["decompose", "--gate", "nand"]).status.code(), Some(2));
    assert_eq!(pidlens(dir.path(), &["decompose"]).status.code(), Some(2));
    assert_eq!(pidlens(dir.path(), &["decompose", "--joint", "missing.json"]).status.code(), Some(1));
}

#[test]
fn batch_decomposition_finds_synergy_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "synth", "continuous", "--structure", "synergy", "--n", "1200", "--separation", "3", "--out", "synth_synergy.jsonl",
    ];
    ok(&pidlens(dir.path(), &args));
    let run = ["decompose", "--estimator", "batch", "--in", "synth_synergy.jsonl", "--out-dir", "out", "--seed", "3"];
    ok(&pidlens(dir.path(), &run));
    let csv = dir.path().join("out/atoms.csv");
    let atoms: Vec<f64> = ["R", "U1", "U2", "S"].iter().map(|c| csv_field(&csv, c).parse().unwrap()).collect();
    assert!(atoms[3] > atoms[0] && atoms[3] > atoms[1] && atoms[3] > atoms[2], "{atoms:?}");
    let first = snapshot(&dir.path().join("out"));
    assert!(first.contains_key("model.bin") && first.contains_key("loss.json"));

    let mut single = run.to_vec();
    single.extend(["--threads", "1"]);
    ok(&pidlens(dir.path(), &single));
    assert_eq!(snapshot(&dir.path().join("out")), first);

    ok(&pidlens(dir.path(), &["decompose", "--estimator", "batch", "--in", "synth_synergy.jsonl", "--out-dir", "out", "--seed", "4"]));
    assert_ne!(snapshot(&dir.path().join("out"))["model.bin"], first["model.bin"]);
}

#[test]
fn malformed_record_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_synth(dir.path(), "m", Structure::Unique1, 5, 2.0, 1);
    let mut text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    text = format!("{}\n{}\n{{\"id\": 3\n{}\n", lines[0], lines[1], lines[3]);
    fs::write(&path, text).unwrap();
    let out = pidlens(dir.path(), &["decompose", "--in", "m.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":3:"), "{}", String::from_utf8_lossy(&out.stderr));

    let out = pidlens(dir.path(), &["validate", "--in", "m.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("m.jsonl:3:"));
}

#[test]
fn validate_and_stats_on_clean_records() {
    let dir = tempfile::tempdir().unwrap();
    write_synth(dir.path(), "m", Structure::Redundancy, 30, 2.0, 1);
    let out = pidlens(dir.path(), &["validate", "--in", "m.jsonl"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("30 records ok"));
    ok(&pidlens(dir.path(), &["stats", "--in", "m.jsonl", "--modality", "text", "--out", "text.json"]));
    let stats = pidlens::ingest::ModalityStats::load(&dir.path().join("text.json")).unwrap();
    assert_eq!((stats.dims(), stats.count), (4, 30));
}

#[test]
fn profile_then_correlate() {
    let dir = tempfile::tempdir().unwrap();
    let mut inputs = Vec::new();
    for (i, sep) in [0.5, 1.0, 2.0, 4.0].iter().enumerate() {
        let p = write_synth(dir.path(), &format!("model{i}"), Structure::Synergy, 600, *sep, 7);
        inputs.push(p.file_name().unwrap().to_string_lossy().into_owned());
    }
    let mut args = vec!["profile", "--estimator", "discrete", "--out-dir", "prof", "--in"];
    args.extend(inputs.iter().map(String::as_str));
    ok(&pidlens(dir.path(), &args));
    let reports: Vec<ProfileReport> = serde_json::from_slice(&fs::read(dir.path().join("prof/profiles.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 4);
    assert!(reports.iter().all(|r| r.accuracy.is_some()));

    ok(&pidlens(dir.path(), &["correlate", "--profiles", "prof/profiles.json", "--out-dir", "corr"]));
    let text = fs::read_to_string(dir.path().join("corr/correlations.csv")).unwrap();
    let s_row = text.lines().find(|l| l.starts_with("S,")).unwrap();
    let rho: f64 = s_row.split(',').nth(1).unwrap().parse().unwrap();
    assert!(rho.abs() <= 1.0);
    for f in ["families.csv", "scaling.csv", "regimes.csv", "correlations.json", "provenance.json"] {
        assert!(dir.path().join("corr").join(f).exists(), "{f}");
    }
}

#[test]
fn inconsistent_manifests_report_the_field() {
    let dir = tempfile::tempdir().unwrap();
    write_synth(dir.path(), "a", Structure::Synergy, 40, 2.0, 1);
    write_synth(dir.path(), "b", Structure::Unique1, 40, 2.0, 1);
    let out = pidlens(dir.path(), &["profile", "--estimator", "discrete", "--in", "a.jsonl", "b.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset:"));
}

fn profile_file(dir: &Path, name: &str, reports: &[ProfileReport]) -> String {
    fs::write(dir.join(name), serde_json::to_vec_pretty(reports).unwrap()).unwrap();
    name.to_string()
}

fn toy_report(model: &str, s: f64, acc: f64) -> ProfileReport {
    let atoms = PidAtoms { redundancy: 0.2, unique1: 0.1, unique2: 0.6 - s, synergy: s, total: 0.9 };
    ProfileReport {
        model: model.into(),
        dataset: "toy".into(),
        layer: None,
        checkpoint: None,
        family: Some("fam".into()),
        size_b: None,
        regime: None,
        atoms,
        shares: pid_shares(&atoms).ok(),
        accuracy: Some(acc),
        accuracy_text_only: None,
        manifest_digest: "ab".into(),
    }
}

#[test]
fn correlate_needs_three_reports() {
    let dir = tempfile::tempdir().unwrap();
    let f = profile_file(dir.path(), "two.json", &[toy_report("a", 0.1, 0.5), toy_report("b", 0.2, 0.6)]);
    let out = pidlens(dir.path(), &["correlate", "--profiles", &f]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn checkpoint_trace_marks_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for stage in [2, 1] {
        for c in 1..=4 {
            let r = ProfileReport {
                checkpoint: Some(format!("s{stage}c{c}")),
                ..toy_report("m", 0.05 * c as f64, 0.5)
            };
            files.push(profile_file(dir.path(), &format!("s{stage}c{c}.json"), &[r]));
        }
    }
    let mut args = vec!["trace", "--profiles"];
    args.extend(files.iter().map(String::as_str));
    ok(&pidlens(dir.path(), &args));
    let text = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows[0].starts_with("s1c1,") && rows[4].starts_with("s2c1,"));
    let stage_starts = rows.iter().filter(|r| r.contains(",false,true,")).count();
    assert_eq!(stage_starts, 2);

    files.push(files[0].clone());
    let mut dup = vec!["trace", "--profiles"];
    dup.extend(files.iter().map(String::as_str));
    assert_eq!(pidlens(dir.path(), &dup).status.code(), Some(2));
}

#[test]
fn config_file_env_and_manual() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "sead = 1\n").unwrap();
    let out = pidlens(dir.path(), &["--config", "bad.toml", "decompose", "--gate", "xor"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(dir.path().join("run.toml"), "seed = 5\n[solver]\ntol = 1e-10\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pidlens"))
        .args(["--config", "run.toml", "decompose", "--gate", "and"])
        .current_dir(dir.path())
        .env("PIDLENS_OUT_DIR", "from_env")
        .output()
        .unwrap();
    ok(&out);
    let prov: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("from_env/provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["config"]["seed"], 5);
    assert_eq!(prov["config"]["solver"]["tol"], 1e-10);
    assert_eq!(prov["config"]["batch"]["seed"], 5);

    let man = pidlens(dir.path(), &["man"]);
    ok(&man);
    let text = String::from_utf8_lossy(&man.stdout);
    assert!(text.contains("PIDLENS DECOMPOSE") && text.contains("EXIT STATUS"));
}

#[test]
fn iteration_cap_is_judged_by_certified_gap() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("strict.toml"), "gap_tolerance = 0.0\n[solver]\nmax_iters = 3\n").unwrap();
    fs::write(dir.path().join("loose.toml"), "gap_tolerance = 10.0\n[solver]\nmax_iters = 3\n").unwrap();
    let args = ["decompose", "--gate", "and", "--noise", "0.1"];

    let strict = pidlens(dir.path(), &[&args[..], &["--config", "strict.toml", "--out-dir", "a"]].concat());
    assert_eq!(strict.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&strict.stderr).contains("certified gap"));

    ok(&pidlens(dir.path(), &[&args[..], &["--config", "loose.toml", "--out-dir", "b"]].concat()));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("b/decomposition.json")).unwrap()).unwrap();
    assert_eq!(doc["diagnostics"]["converged"], false);
    assert_eq!(doc["diagnostics"]["accepted_by_gap"], true);
}
