use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn orfel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orfel"))
        .args(args)
        .env_remove("ORFEL_LOG")
        .env_remove("ORFEL_BLOCK_SIZE")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = orfel(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Last stdout line, which every subcommand prints as a JSON summary.
fn summary(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().last().expect("summary line");
    serde_json::from_str(line).expect("summary is JSON")
}

struct Pipeline {
    dir: tempfile::TempDir,
}

impl Pipeline {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Host graph with two defamation attacks, preprocessed.
    fn build() -> Pipeline {
        let p = Pipeline {
            dir: tempfile::tempdir().unwrap(),
        };
        let (host, attacked, truth, graph) = (
            p.path("host.csv"),
            p.path("attacked.csv"),
            p.path("truth.json"),
            p.path("graph"),
        );
        ok(&[
            "gen",
            "--users",
            "200",
            "--products",
            "400",
            "--edges",
            "4000",
            "--rng-seed",
            "3",
            "--out",
            s(&host),
        ]);
        ok(&[
            "inject",
            "--input",
            s(&host),
            "--output",
            s(&attacked),
            "--truth",
            s(&truth),
            "--users",
            "30",
            "--products",
            "8",
            "--attacks",
            "2",
            "--mode",
            "defamation",
            "--rng-seed",
            "5",
        ]);
        ok(&[
            "preprocess",
            "--input",
            s(&attacked),
            "--out",
            s(&graph),
            "--memory-budget",
            "20000",
            "--block-size",
            "4096",
        ]);
        p
    }

    fn detect(&self, out: &str, extra: &[&str]) -> Output {
        let graph = self.path("graph");
        let report = self.path(out);
        let mut args = vec![
            "detect",
            "--graph",
            s(&graph),
            "--out",
            s(&report),
            "--mode",
            "defamation",
            "--n",
            "20",
        ];
        args.extend_from_slice(extra);
        orfel(&args)
    }
}

#[test]
fn pipeline_catches_injected_attacks() {
    let p = Pipeline::build();
    let out = p.detect("report.json", &["--threads", "1", "--rng-seed", "7"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: Value = serde_json::from_slice(&fs::read(p.path("report.json")).unwrap()).unwrap();
    let locksteps = report["locksteps"].as_array().unwrap();
    assert!(!locksteps.is_empty());
    for l in locksteps {
        assert_eq!(l["mode"], "defamation");
        assert!(l["users"].as_array().unwrap().len() >= 20);
        assert_eq!(
            l["products"].as_array().unwrap().len(),
            l["centers"].as_object().unwrap().len()
        );
    }
    assert!(report["meta"]["converged"].as_bool().unwrap());

    let truth = p.path("truth.json");
    let report = p.path("report.json");
    let eval = ok(&["eval", "--report", s(&report), "--truth", s(&truth)]);
    let sum = summary(&eval);
    assert_eq!(sum["caught"], 2);
    assert_eq!(sum["total"], 2);
    assert!(String::from_utf8_lossy(&eval.stdout).contains("recall 2/2"));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let p = Pipeline::build();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = p.detect("r.json", &["--threads", "1", "--rng-seed", "7"]);
        assert_eq!(out.status.code(), Some(0));
        runs.push(fs::read(p.path("r.json")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    let out = p.detect("c.json", &["--threads", "3", "--rng-seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let a = runs.swap_remove(0);
    let c: Value = serde_json::from_slice(&fs::read(p.path("c.json")).unwrap()).unwrap();
    let a: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(a["locksteps"], c["locksteps"]);
}

#[test]
fn preprocess_skips_unchanged_input() {
    let p = Pipeline::build();
    let (attacked, graph) = (p.path("attacked.csv"), p.path("graph"));
    let base = [
        "preprocess",
        "--input",
        s(&attacked),
        "--out",
        s(&graph),
        "--memory-budget",
        "20000",
        "--block-size",
        "4096",
    ];
    let again = ok(&base);
    assert_eq!(summary(&again)["up_to_date"], true);
    assert!(String::from_utf8_lossy(&again.stdout).contains("is up to date"));

    let mut forced = base.to_vec();
    forced.push("--force");
    assert_eq!(summary(&ok(&forced))["up_to_date"], false);

    let mut other_block = base.to_vec();
    other_block[8] = "8192";
    assert_eq!(summary(&ok(&other_block))["up_to_date"], false);
}

#[test]
fn iteration_cap_exits_4_and_still_writes_report() {
    let p = Pipeline::build();
    let out = p.detect("capped.json", &["--max-iters", "1"]);
    assert_eq!(out.status.code(), Some(4));
    let report: Value = serde_json::from_slice(&fs::read(p.path("capped.json")).unwrap()).unwrap();
    assert_eq!(report["meta"]["converged"], false);
    assert_eq!(report["meta"]["iterations"], 1);
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (missing, report) = (dir.path().join("nope"), dir.path().join("r.json"));
    let out = orfel(&["detect", "--graph", s(&missing), "--out", s(&report)]);
    assert_eq!(out.status.code(), Some(2));
    let out = orfel(&[
        "preprocess",
        "--input",
        s(&missing.join("x.csv")),
        "--out",
        s(&dir.path().join("g")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "u1,p1,not-a-time,3\nu2,p1\n???\n").unwrap();
    let out = orfel(&[
        "preprocess",
        "--input",
        s(&csv),
        "--out",
        s(&dir.path().join("g")),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let truth = dir.path().join("truth.json");
    let report = dir.path().join("report.json");
    fs::write(&truth, "{\"attacks\": [").unwrap();
    fs::write(&report, "{\"meta\": {}, \"locksteps\": []}").unwrap();
    let out = orfel(&["eval", "--report", s(&report), "--truth", s(&truth)]);
    assert_eq!(out.status.code(), Some(3));

    let p = Pipeline::build();
    let graph = p.path("graph");
    let manifest: Value = serde_json::from_slice(&fs::read(graph.join("manifest.json")).unwrap()).unwrap();
    let shard = manifest["shards"][0]["file"].as_str().unwrap();
    let mut bytes = fs::read(graph.join(shard)).unwrap();
    bytes[0] = b'X';
    fs::write(graph.join(shard), bytes).unwrap();
    let out = p.detect("r.json", &[]);
    assert_eq!(out.status.code(), Some(3));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[detect]\nn = \"ten\"\n").unwrap();
    let out = orfel(&[
        "--config",
        s(&cfg),
        "detect",
        "--graph",
        s(&graph),
        "--out",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(orfel(&["detect", "--rho"]).status.code(), Some(1));
    assert_eq!(orfel(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        orfel(&["gen", "--out", s(&dir.path().join("x.csv"))])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn low_rho_warns_but_runs() {
    let p = Pipeline::build();
    let out = p.detect("r.json", &["--rho", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("WARN"), "{stderr}");
    assert!(stderr.contains("rho"), "{stderr}");
}

#[test]
fn empty_report_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (host, attacked, truth, graph, report) = (
        dir.path().join("h.csv"),
        dir.path().join("a.csv"),
        dir.path().join("t.json"),
        dir.path().join("g"),
        dir.path().join("r.json"),
    );
    ok(&[
        "gen",
        "--users",
        "100",
        "--products",
        "100",
        "--edges",
        "1000",
        "--out",
        s(&host),
    ]);
    ok(&[
        "inject",
        "--input",
        s(&host),
        "--output",
        s(&attacked),
        "--truth",
        s(&truth),
        "--users",
        "12",
        "--products",
        "6",
    ]);
    ok(&["preprocess", "--input", s(&host), "--out", s(&graph)]);
    ok(&[
        "detect",
        "--graph",
        s(&graph),
        "--out",
        s(&report),
        "--n",
        "50",
        "--mode",
        "defamation",
    ]);
    let r: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(r["locksteps"].as_array().unwrap().is_empty());
    let sum = summary(&ok(&["eval", "--report", s(&report), "--truth", s(&truth)]));
    assert_eq!(sum["caught"], 0);
    assert_eq!(sum["recall"], 0.0);
}

#[test]
fn flags_override_config_file() {
    let p = Pipeline::build();
    let cfg = p.path("orfel.toml");
    let graph = p.path("graph");
    fs::write(
        &cfg,
        format!(
            "[detect]\ngraph = {:?}\nn = 25\nm = 6\nseeds = 40\nmode = \"defamation\"\n",
            s(&graph)
        ),
    )
    .unwrap();
    let report = p.path("r.json");
    ok(&["--config", s(&cfg), "detect", "--out", s(&report), "--n", "20"]);
    let r: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let config = &r["meta"]["config"];
    assert_eq!(config["n"], "20");
    assert_eq!(config["m"], "6");
    assert_eq!(config["seeds"], "40");
    assert_eq!(config["mode"], "defamation");
}

#[test]
fn quiet_prints_only_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let host = dir.path().join("h.csv");
    let loud = ok(&[
        "gen",
        "--users",
        "10",
        "--products",
        "10",
        "--edges",
        "20",
        "--out",
        s(&host),
    ]);
    assert_eq!(String::from_utf8_lossy(&loud.stdout).lines().count(), 2);
    let quiet = ok(&[
        "--quiet",
        "gen",
        "--users",
        "10",
        "--products",
        "10",
        "--edges",
        "20",
        "--out",
        s(&host),
    ]);
    let text = String::from_utf8_lossy(&quiet.stdout);
    assert_eq!(text.lines().count(), 1);
    assert_eq!(summary(&quiet)["edges"], 20);
}

#[test]
fn block_size_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (host, graph) = (dir.path().join("h.csv"), dir.path().join("g"));
    ok(&[
        "gen",
        "--users",
        "50",
        "--products",
        "50",
        "--edges",
        "500",
        "--out",
        s(&host),
    ]);
    let out = Command::new(env!("CARGO_BIN_EXE_orfel"))
        .args(["preprocess", "--input", s(&host), "--out", s(&graph)])
        .env("ORFEL_BLOCK_SIZE", "512")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let manifest: Value = serde_json::from_slice(&fs::read(graph.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["block_size"], 512);
}
