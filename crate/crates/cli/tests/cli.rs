use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_targetsearch"))
        .args(args)
        .env_remove(targetsearch_core::runtime::API_KEY_ENV)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn search(out: &Path, instances: &Path, extra: &[&str]) -> Output {
    let f = fixtures();
    let mut args = vec![
        "search",
        "--corpus",
        s(&f),
        "--instances",
        s(instances),
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn validate_accepts_fixtures() {
    let f = fixtures();
    let o = run(&[
        "validate",
        "--corpus",
        s(&f),
        "--instances",
        s(&f.join("instances.jsonl")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("ok: 48 molecules, 24 proteins"));
}

#[test]
fn validate_names_the_broken_rule() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let bad = dir.path().join("bad.jsonl");
    fs::write(
        &bad,
        r#"{"query_molecule_id":"M001","candidate_molecule_ids":["M002"],"candidate_protein_ids":["P01","P02"],"ground_truth_protein_ids":[]}"#,
    )
    .unwrap();
    let o = run(&["validate", "--corpus", s(&f), "--instances", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("ground_truth_size"));
}

#[test]
fn missing_or_malformed_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["validate", "--corpus", s(dir.path())])), 2);
    let f = fixtures();
    let junk = dir.path().join("molecules.jsonl");
    fs::write(&junk, "{not json}\n").unwrap();
    let o = run(&[
        "validate",
        "--molecules",
        s(&junk),
        "--proteins",
        s(&f.join("proteins.jsonl")),
        "--interactions",
        s(&f.join("interactions.jsonl")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("molecules.jsonl:1"));
}

#[test]
fn build_dataset_writes_instances_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let out = dir.path().join("ds");
    let o = run(&[
        "build-dataset",
        "--corpus",
        s(&f),
        "--out",
        s(&out),
        "--baseline",
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("47 of 48 queries accepted"));
    let full = fs::read_to_string(out.join("instances.jsonl")).unwrap();
    let base = fs::read_to_string(out.join("baseline.jsonl")).unwrap();
    assert_eq!(full.lines().count(), 47);
    assert_eq!(base.lines().count(), 47);
    let first: Value = serde_json::from_str(base.lines().next().unwrap()).unwrap();
    assert!(first.get("candidate_molecule_ids").is_none());
    let report = read_json(&out.join("build_report.json"));
    assert_eq!(report["accepted"], 47);

    let v = run(&[
        "validate",
        "--corpus",
        s(&f),
        "--instances",
        s(&out.join("instances.jsonl")),
    ]);
    assert_eq!(code(&v), 0);

    let tight = dir.path().join("tight");
    let o = run(&[
        "build-dataset",
        "--corpus",
        s(&f),
        "--out",
        s(&tight),
        "--max-candidates",
        "5",
    ]);
    assert_eq!(code(&o), 0);
    let n = fs::read_to_string(tight.join("instances.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert!(n < 47, "{n}");
    let report = read_json(&tight.join("build_report.json"));
    assert!(report["rejected"]["too_many_candidates"].as_u64().unwrap() > 0);
}

#[test]
fn retrieve_prints_hits() {
    let f = fixtures();
    let o = run(&["retrieve", "--corpus", s(&f), "--query", "M001"]);
    assert_eq!(code(&o), 0);
    let hits: Vec<Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(hits.len(), 20);
    assert!(hits.iter().all(|h| h["molecule_id"] != "M001"));
    assert_eq!(
        code(&run(&["retrieve", "--corpus", s(&f), "--query", "NOPE"])),
        1
    );
}

#[test]
fn search_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let out = dir.path().join("run");
    let o = search(
        &out,
        &f.join("toy_instance.jsonl"),
        &["--seed", "7", "--rollouts", "24"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tree = read_json(&out.join("trees/M001.json"));
    assert_eq!(tree["nodes"][0]["visits"], 24);
    let result = read_json(&out.join("results/M001.json"));
    assert_eq!(result["rollout_outcomes"].as_array().unwrap().len(), 24);
    assert_eq!(fs::read_dir(out.join("traces/M001")).unwrap().count(), 24);
    let config = read_json(&out.join("config.json"));
    assert_eq!(config["seed"], 7);

    let results = out.join("results");
    let inst = f.join("toy_instance.jsonl");
    let report_dir = dir.path().join("report");
    let gt = run(&[
        "evaluate",
        "--results",
        s(&results),
        "--instances",
        s(&inst),
        "--out",
        s(&report_dir),
    ]);
    assert_eq!(code(&gt), 0);
    assert!(stdout(&gt).starts_with("mean recall (topk=gt): "));
    let narrow = read_json(&report_dir.join("report.json"))["mean_recall"]
        .as_f64()
        .unwrap();
    let csv = fs::read_to_string(report_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("instance_id,gt_size,K,hits,recall,tokens,rollouts\nM001,2,2,"));
    let wide = run(&[
        "evaluate",
        "--results",
        s(&results),
        "--instances",
        s(&inst),
        "--topk",
        "gt+3",
        "--out",
        s(&report_dir),
    ]);
    assert_eq!(code(&wide), 0);
    let wide = read_json(&report_dir.join("report.json"))["mean_recall"]
        .as_f64()
        .unwrap();
    assert!(wide >= narrow);
}

#[test]
fn baseline_makes_one_call_per_instance() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let out = dir.path().join("base");
    let o = search(
        &out,
        &f.join("instances.jsonl"),
        &["--mode", "baseline", "--jobs", "3"],
    );
    assert_eq!(code(&o), 0);
    let mut n = 0;
    for e in fs::read_dir(out.join("results")).unwrap() {
        let r = read_json(&e.unwrap().path());
        assert_eq!(r["agent_calls"], 1);
        assert_eq!(r["method"], "baseline");
        n += 1;
    }
    assert_eq!(n, 10);
    assert_eq!(fs::read_dir(out.join("trees")).unwrap().count(), 0);
}

#[test]
fn scripted_backend_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let script = dir.path().join("script.json");
    fs::write(&script, r#"["only one reply"]"#).unwrap();
    let out = dir.path().join("run");
    let o = search(
        &out,
        &f.join("toy_instance.jsonl"),
        &["--backend", "scripted", "--script", s(&script)],
    );
    assert_eq!(code(&o), 3);
    // the partial run is still written
    assert!(out.join("results/M001.json").exists());
}

#[test]
fn bad_configuration_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let toy = f.join("toy_instance.jsonl");
    assert_eq!(
        code(&search(&dir.path().join("a"), &toy, &["--rollouts", "0"])),
        2
    );
    assert_eq!(
        code(&search(
            &dir.path().join("b"),
            &toy,
            &["--temperature", "-1"]
        )),
        2
    );
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"rollouts": 3, "unknown_knob": true}"#).unwrap();
    assert_eq!(
        code(&search(&dir.path().join("c"), &toy, &["--config", s(&cfg)])),
        2
    );
    assert_ne!(code(&run(&["search", "--bogus-flag"])), 0);
}

#[test]
fn evaluate_needs_matching_results() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let inst = f.join("instances.jsonl");
    let missing = dir.path().join("nowhere");
    assert_eq!(
        code(&run(&[
            "evaluate",
            "--results",
            s(&missing),
            "--instances",
            s(&inst)
        ])),
        2
    );
    let out = dir.path().join("toy");
    assert_eq!(
        code(&search(
            &out,
            &f.join("toy_instance.jsonl"),
            &["--rollouts", "2"]
        )),
        0
    );
    // results for one instance cannot cover ten
    let o = run(&[
        "evaluate",
        "--results",
        s(&out.join("results")),
        "--instances",
        s(&inst),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn help_lists_search_flags() {
    let o = run(&["search", "--help"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for flag in [
        "--rollouts",
        "--k-samples",
        "--temperature",
        "--seed",
        "--no-molecule-analysis",
        "--no-interaction-analysis",
        "--reward",
        "--ps-branching",
        "--backend",
        "--mode",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}
