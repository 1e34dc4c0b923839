//! End-to-end tests of the binary: exit codes, output determinism, and
//! the file-format round trip.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rematch")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("REMATCH_SEED")
        .output()
        .expect("binary runs")
}

fn write_file(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

const TIGHT: &str = r#"{
  "version": 1,
  "T": 2,
  "resources": [
    { "reward": 1.0, "dist": { "type": "geometric", "p": 0.5 } },
    { "reward": 1.1, "dist": { "type": "geometric", "p": 0.5 } }
  ],
  "arrivals": [[0, 1], [1]]
}"#;

#[test]
fn validate_accepts_a_good_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(dir.path(), "tight.json", TIGHT);
    let out = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

#[test]
fn validate_reports_violations_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(
        dir.path(),
        "bad.json",
        r#"{
  "version": 1,
  "T": 1,
  "resources": [
    { "reward": 1.0, "dist": { "type": "finite", "pmf": [[1, 0.5], [2, 0.4]] } }
  ],
  "arrivals": [[0, 3]]
}"#,
    );
    let out = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("pmf sums to 0.9"), "{stdout}");
    assert!(stdout.contains("resource 1"), "{stdout}");
    assert!(stdout.contains("index 3 out of range"), "{stdout}");
}

#[test]
fn malformed_json_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(dir.path(), "truncated.json", "{ \"version\": 1, \"T\": 2,");
    let out = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line"), "{stderr}");

    let wrong_version = write_file(
        dir.path(),
        "v2.json",
        &TIGHT.replace("\"version\": 1", "\"version\": 2"),
    );
    let out = run(&["validate", wrong_version.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let unknown_field = write_file(
        dir.path(),
        "extra.json",
        &TIGHT.replace("\"T\": 2", "\"T\": 2, \"comment\": \"hi\""),
    );
    let out = run(&["validate", unknown_field.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_reports_the_tight_example_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(dir.path(), "tight.json", TIGHT);
    let out = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["results"]["opt"].as_f64().unwrap() - 2.1).abs() < 1e-12);
    assert!((v["results"]["greedy"].as_f64().unwrap() - 1.65).abs() < 1e-12);
    assert!((v["results"]["ratio"].as_f64().unwrap() - 1.65 / 2.1).abs() < 1e-12);
    let bounds = v["results"]["bounds"].as_array().unwrap();
    assert_eq!(bounds.len(), 2);
    assert!(bounds.iter().all(|b| b["pass"].as_bool().unwrap()));
}

#[test]
fn identical_invocations_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(dir.path(), "tight.json", TIGHT);
    for args in [
        vec!["solve", path.to_str().unwrap()],
        vec![
            "couple",
            path.to_str().unwrap(),
            "--runs",
            "500",
            "--seed",
            "11",
        ],
        vec!["oracle", path.to_str().unwrap(), "--output", "csv"],
        vec!["sweep", "--p-grid", "0.5", "--delta-grid", "0.1,0.01"],
        vec![
            "search",
            "--n",
            "2",
            "--horizon",
            "2",
            "--budget",
            "50",
            "--seed",
            "9",
        ],
        vec![
            "verify", "--random", "20", "--bound", "theorem2", "--seed", "4",
        ],
    ] {
        let a = run(&args);
        let b = run(&args);
        assert_eq!(a.status.code(), b.status.code());
        assert_eq!(a.stdout, b.stdout, "output differs for {args:?}");
    }
}

#[test]
fn state_space_guard_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let resources: Vec<String> = (0..15)
        .map(|i| {
            format!(
                r#"{{ "reward": {}.0, "dist": {{ "type": "geometric", "p": 0.5 }} }}"#,
                i + 1
            )
        })
        .collect();
    let content = format!(
        r#"{{ "version": 1, "T": 1, "resources": [{}], "arrivals": [[0]] }}"#,
        resources.join(", ")
    );
    let path = write_file(dir.path(), "big.json", &content);
    let out = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("state-space guard"), "{stderr}");

    // --force overrides, with a memory estimate on stderr.
    let out = run(&["solve", path.to_str().unwrap(), "--force"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("overridden by --force"), "{stderr}");
}

#[test]
fn couple_with_too_few_runs_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(dir.path(), "tight.json", TIGHT);
    let out = run(&["couple", path.to_str().unwrap(), "--runs", "0"]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let out = run(&["couple", path.to_str().unwrap(), "--runs", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bernoulli_coupling_rejects_finite_instances() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(
        dir.path(),
        "finite.json",
        r#"{
  "version": 1,
  "T": 2,
  "resources": [
    { "reward": 1.0, "dist": { "type": "finite", "pmf": [[3, 1.0]] } },
    { "reward": 1.1, "dist": { "type": "finite", "pmf": [[3, 1.0]] } }
  ],
  "arrivals": [[0, 1], [1]]
}"#,
    );
    let out = run(&["couple", path.to_str().unwrap(), "--coupling", "bernoulli"]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    // The stack coupling handles it.
    let out = run(&[
        "couple",
        path.to_str().unwrap(),
        "--coupling",
        "stack",
        "--runs",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
}

#[test]
fn trace_export_is_one_record_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(dir.path(), "tight.json", TIGHT);
    let out = run(&[
        "couple",
        path.to_str().unwrap(),
        "--emit-trace",
        "0",
        "--seed",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 4); // meta + 2 steps + totals
    for line in &lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.is_object());
    }
    let step1: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(step1["t"], 1);
    assert_eq!(step1["primary_action"]["resource"], 1);
}

#[test]
fn oracle_csv_has_the_tight_example_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(dir.path(), "tight.json", TIGHT);
    let out = run(&["oracle", path.to_str().unwrap(), "--output", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    // Row for resource 2 (1-based), step 2: lost and coincidence both 1/2.
    let row = stdout
        .lines()
        .find(|l| l.starts_with("2,2,"))
        .expect("row for (2,2)");
    assert!(row.starts_with("2,2,0.5,0.5,"), "{row}");
}

#[test]
fn verify_prints_a_summary_and_passes_a_clean_corpus() {
    let dir = tempfile::tempdir().unwrap();
    write_file(dir.path(), "a.json", TIGHT);
    write_file(
        dir.path(),
        "b.json",
        &TIGHT.replace("\"p\": 0.5", "\"p\": 0.9"),
    );
    let out = run(&[
        "verify",
        "--corpus-dir",
        dir.path().to_str().unwrap(),
        "--bound",
        "theorem2",
        "--output",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.trim_end().ends_with("# summary: 2/2 pass theorem2"),
        "{stdout}"
    );
}

#[test]
fn search_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("worst");
    let out = run(&[
        "search",
        "--n",
        "2",
        "--horizon",
        "2",
        "--p-min",
        "0.5",
        "--budget",
        "20",
        "--keep",
        "2",
        "--seed",
        "13",
        "--dump-dir",
        dump.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dump)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert_eq!(files.len(), 2);
    // A dumped instance re-validates and re-solves cleanly, and its
    // file name carries the canonical hash it re-parses to.
    for file in files {
        let out = run(&["validate", file.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        let out = run(&["solve", file.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let hash = v["instance"]["hash"].as_str().unwrap();
        assert!(
            file.file_name().unwrap().to_str().unwrap().contains(hash),
            "dumped name should contain the canonical hash"
        );
    }
}

#[test]
fn seed_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(dir.path(), "tight.json", TIGHT);
    let with_env = Command::new(bin())
        .args(["couple", path.to_str().unwrap(), "--runs", "100"])
        .env("REMATCH_SEED", "42")
        .output()
        .unwrap();
    let with_flag = run(&[
        "couple",
        path.to_str().unwrap(),
        "--runs",
        "100",
        "--seed",
        "42",
    ]);
    assert_eq!(with_env.stdout, with_flag.stdout);
}

#[test]
fn unsorted_rewards_fail_strict_validation_but_load_canonically() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(
        dir.path(),
        "unsorted.json",
        r#"{
  "version": 1,
  "T": 1,
  "resources": [
    { "reward": 2.0, "dist": { "type": "geometric", "p": 0.5 } },
    { "reward": 1.0, "dist": { "type": "geometric", "p": 0.5 } }
  ],
  "arrivals": [[0]]
}"#,
    );
    let out = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("permutation"));
    // Loaders canonicalize: solve works fine.
    let out = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
}
