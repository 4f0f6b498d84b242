use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TINY: &str = "d=8\nh=8\nblocks=1\nheads=2\npatch=4\nresample_len=16\nepochs=2\nbatch=8\n";

fn omnitraj(args: &[&str], data: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omnitraj"))
        .args(args)
        .arg("--data")
        .arg(data)
        .env_remove("OMNITRAJ_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], data: &Path) -> String {
    let out = omnitraj(args, data);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("stderr line")).expect("json error line")
}

fn gen(dir: &Path, seed: &str) {
    ok(
        &["gen-data", "--seed", seed, "--rows", "4", "--cols", "4", "--count", "120", "--min-hops", "8", "--max-hops", "12"],
        dir,
    );
}

/// Generated, extracted, trained and embedded fixture.
fn fixture() -> TempDir {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    gen(d, "3");
    ok(&["extract", "--test", "30"], d);
    fs::write(d.join("tiny.conf"), TINY).unwrap();
    let conf = d.join("tiny.conf");
    ok(&["train", "--seed", "5", "--config", conf.to_str().unwrap()], d);
    ok(&["embed"], d);
    dir
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let (a, b, c) = (TempDir::new().unwrap(), TempDir::new().unwrap(), TempDir::new().unwrap());
    gen(a.path(), "9");
    gen(b.path(), "9");
    gen(c.path(), "10");
    for f in ["raw.jsonl", "network.jsonl", "grid.json", "corpus.conf"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.path().join("raw.jsonl")).unwrap(), fs::read(c.path().join("raw.jsonl")).unwrap());
}

#[test]
fn pipeline_stages_reproduce_bit_for_bit() {
    let a = fixture();
    let b = fixture();
    for f in ["train.jsonl", "test.jsonl", "model.otwt", "losses.jsonl"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    for m in ["traj", "top", "road", "region"] {
        let f = format!("stores/{m}.otes");
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn evaluation_reports_and_queries() {
    let dir = fixture();
    let d = dir.path();

    let table = ok(&["eval-sim", "--two-stage-subset", "10"], d);
    assert!(table.contains("MRR"));
    let text = fs::read_to_string(d.join("eval_sim.jsonl")).unwrap();
    let reports: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 7);
    for r in &reports {
        for key in ["MR", "MRR", "HR@1", "HR@5", "HR@10"] {
            assert!(r[key].is_number(), "missing {key} in {r}");
        }
        assert_eq!(r["queries"], 30);
    }

    ok(&["eval-cond", "--lengths", "1,3", "--ks", "1,5"], d);
    let cond = fs::read_to_string(d.join("eval_cond.jsonl")).unwrap();
    let first: Value = serde_json::from_str(cond.lines().next().unwrap()).unwrap();
    assert!(first["CR@1"].is_number() && first["CR@5"].is_number());
    assert_eq!(cond.lines().count(), 2 + 2 * 2 * 2);

    let test = fs::read_to_string(d.join("test.jsonl")).unwrap();
    let rec: Value = serde_json::from_str(test.lines().next().unwrap()).unwrap();
    let roads: Vec<String> = rec["road"].as_array().unwrap().iter().map(|v| v.to_string()).collect();
    let out = ok(&["query", "--road", &roads.join(","), "--k", "5"], d);
    let resp: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(resp["results"].as_array().unwrap().len(), 5);
    assert_eq!(resp["provenance"]["modalities"], "road");

    let out = ok(&["query", "--road", &roads.join(","), "--k", "3", "--coarse", "road", "--subset", "10"], d);
    let resp: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(resp["provenance"]["stage"], "two_stage");

    let bad = omnitraj(&["query", "--road", "1", "--region", "2"], d);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(stderr_json(&bad)["error"], "config");
}

#[test]
fn heuristic_bench_is_seeded() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    gen(d, "4");
    ok(&["extract", "--test", "20"], d);
    let run = |seed: &str| {
        ok(&["bench-heuristics", "--queries", "15", "--seed", seed], d);
        fs::read_to_string(d.join("heuristics.jsonl")).unwrap()
    };
    let a = run("1");
    let b = run("1");
    assert_eq!(a, b);
    let names: Vec<String> = a
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["variant"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["dtw", "edr", "hausdorff", "frechet"]);
    assert_ne!(a, run("2"));
}

#[test]
fn usage_and_runtime_errors_have_distinct_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = omnitraj(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");

    let out = omnitraj(&["query", "--k", "not-a-number"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = omnitraj(&["embed"], &dir.path().join("missing"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["message"].is_string());

    let out = omnitraj(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
}
