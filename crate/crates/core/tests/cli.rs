//! End-to-end runs of the `densebench` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_densebench"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Three small synthetic datasets plus `config.json` under `root`.
fn synthesize(root: &Path) -> PathBuf {
    ok(&["synthesize", "--out", s(root), "--datasets", "3", "--docs", "120", "--queries", "30", "--seed", "11"]);
    root.join("config.json")
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn without_timestamps(bytes: &[u8]) -> Value {
    let mut v: Value = serde_json::from_slice(bytes).unwrap();
    let prov = v["provenance"].as_object_mut().unwrap();
    prov.remove("started_at");
    prov.remove("finished_at");
    v
}

#[test]
fn sweep_writes_every_table_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthesize(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let stdout = ok(&["--config", s(&config), "--out", s(&a), "sweep"]);
    ok(&["--config", s(&config), "--out", s(&b), "sweep"]);
    assert!(stdout.contains("Average performance (synth0, synth1, synth2)"));
    assert!(stdout.contains("reference-perturbed-20%"));

    let fa = files(&a);
    let fb = files(&b);
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        if name == Path::new("result.json") {
            assert_eq!(without_timestamps(bytes), without_timestamps(&fb[name]));
        } else {
            assert!(bytes == &fb[name], "{} differs between identical runs", name.display());
        }
    }

    let json: Vec<_> = fa.keys().filter(|p| p.extension().is_some_and(|e| e == "json")).collect();
    let per_dataset = json.iter().filter(|p| p.starts_with("datasets")).count();
    assert_eq!(per_dataset, 3);
    assert!(fa.contains_key(Path::new("average.json")));
    assert!(fa.contains_key(Path::new("drop.json")));
    assert_eq!(fa.keys().filter(|p| p.starts_with("runs")).count(), 9);

    let result: Value = serde_json::from_slice(&fa[Path::new("result.json")]).unwrap();
    assert_eq!(result["rates"], serde_json::json!([0.05, 0.2]));
    for d in result["datasets"].as_array().unwrap() {
        let conds: Vec<&str> = d["conditions"].as_array().unwrap().iter().map(|c| c["condition"].as_str().unwrap()).collect();
        assert_eq!(conds, ["clean", "perturbed@0.05", "perturbed@0.2"]);
        assert_eq!(d["conditions"][0]["report"]["averaged"]["NDCG@10"], 1.0);
    }

    let drops: Value = serde_json::from_slice(&fa[Path::new("drop.json")]).unwrap();
    let avg: Value = serde_json::from_slice(&fa[Path::new("average.json")]).unwrap();
    let rows = avg["rows"].as_array().unwrap();
    let clean = rows[0]["values"]["MRR@10"].as_f64().unwrap();
    let p20 = rows[2]["values"]["MRR@10"].as_f64().unwrap();
    assert_eq!(drops["rows"][1]["drops"]["MRR@10"].as_f64().unwrap(), clean - p20);

    // A different seed perturbs differently.
    let c = dir.path().join("c");
    ok(&["--config", s(&config), "--out", s(&c), "--seed", "99", "sweep"]);
    assert_ne!(files(&c)[Path::new("drop.json")], fa[Path::new("drop.json")]);
}

#[test]
fn run_uses_single_rate_and_k_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthesize(dir.path());
    let out = dir.path().join("run");
    ok(&["--config", s(&config), "--out", s(&out), "--perturb-rate", "0.3", "--k", "1,5", "run"]);
    let result: Value = serde_json::from_slice(&std::fs::read(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["rates"], serde_json::json!([0.3]));
    let averaged = result["datasets"][0]["conditions"][1]["report"]["averaged"].as_object().unwrap();
    assert!(averaged.contains_key("NDCG@5") && averaged.contains_key("MAP@1"));
    assert!(!averaged.contains_key("NDCG@10"));
}

#[test]
fn file_provider_matches_reference_after_embed_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthesize(dir.path());
    let stores = dir.path().join("stores");
    let stdout = ok(&["--config", s(&config), "--out", s(&stores), "embed-corpus"]);
    assert_eq!(stdout.lines().count(), 3);
    for i in 0..3 {
        let store = densebench::embed::read_store(stores.join(format!("synth{i}.dre"))).unwrap();
        assert_eq!((store.len(), store.dim()), (120, 64));
    }

    let reference = dir.path().join("ref");
    ok(&["--config", s(&config), "--out", s(&reference), "sweep"]);
    // With --provider file the stores are read from --out.
    ok(&["--config", s(&config), "--out", s(&stores), "--provider", "file", "sweep"]);
    for i in 0..3 {
        let name = format!("datasets/synth{i}.json");
        assert_eq!(
            std::fs::read(reference.join(&name)).unwrap(),
            std::fs::read(stores.join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn report_rebuilds_tables_from_result() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthesize(dir.path());
    let out = dir.path().join("out");
    ok(&["--config", s(&config), "--out", s(&out), "sweep"]);
    let again = dir.path().join("again");
    let stdout = ok(&["report", "--from", s(&out), "--out", s(&again)]);
    assert!(stdout.contains("Average performance drop with 5%, 20% perturbation"));
    for name in ["average.txt", "drop.txt", "datasets/synth1.txt"] {
        assert_eq!(std::fs::read(out.join(name)).unwrap(), std::fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn show_perturbation_prints_two_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthesize(dir.path());
    let args = ["--config", s(&config), "--perturb-rate", "0.5", "show-perturbation", "--limit", "4"];
    let first = ok(&args);
    assert_eq!(first, ok(&args));
    let header = first.lines().next().unwrap();
    assert!(header.starts_with("Previous Input") && header.ends_with("After Perturbation"));
    assert_eq!(first.lines().filter(|l| l.starts_with("[CLS]")).count(), 4);

    let vocab = dir.path().join("synth0/vocab.txt");
    let text = ok(&["--perturb-rate", "0", "show-perturbation", "--vocab", s(&vocab), "wa wb"]);
    assert!(text.contains("[CLS] wa wb [SEP] | [CLS] wa wb [SEP]"), "{text}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthesize(dir.path());
    assert!(ok(&["--config", s(&config), "validate"]).contains("synth2: ok"));

    // A judgment naming a missing document fails validation.
    let qrels = dir.path().join("synth1/qrels.tsv");
    let mut text = std::fs::read_to_string(&qrels).unwrap();
    text.push_str("q0000\tnope\t1\n");
    std::fs::write(&qrels, text).unwrap();
    let out = run(&["--config", s(&config), "validate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("synth1: INVALID"));
    assert_eq!(run(&["--config", s(&config), "sweep"]).status.code(), Some(1));

    // Unreadable inputs are IO failures.
    std::fs::remove_file(dir.path().join("synth0/corpus.jsonl")).unwrap();
    assert_eq!(run(&["--config", s(&config), "validate"]).status.code(), Some(2));

    // Missing stores for the file provider are provider failures.
    let fresh = tempfile::tempdir().unwrap();
    let config = synthesize(fresh.path());
    let empty = fresh.path().join("empty");
    let out = run(&["--config", s(&config), "--out", s(&empty), "--provider", "file", "sweep"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth0"));

    assert_eq!(run(&["--config", s(&config), "--perturb-rate", "1.5", "run"]).status.code(), Some(1));
    assert_eq!(run(&["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&["sweep"]).status.code(), Some(1));
}
