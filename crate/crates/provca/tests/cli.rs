//! End-to-end CLI tests over the built binary. Mock backends only: no
//! network, no decoder.

use std::path::Path;
use std::process::{Command, Output};

use provca::sampler::synthetic::needle_payload;

fn provca(cache_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_provca"))
        .env("PROVCA_CACHE_DIR", cache_dir)
        .env_remove("PROVCA_API_BASE")
        .env_remove("PROVCA_API_KEY")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn answer_mock_oracle_prints_correct_letter() {
    let dir = tempfile::tempdir().unwrap();
    // seed/needle chosen to match the synthetic source below
    let payload = needle_payload(5, 64);
    let options = format!(
        "The marker event evt_aaaaaaaaaa takes place.,The marker event {payload} takes place.,Nothing happens"
    );
    let output = provca(
        dir.path(),
        &[
            "answer",
            "--mock",
            "--video",
            "synth:128:64:5",
            "--question",
            "Which description matches the special marker event at frame 64? [needle@64]",
            "--options",
            &options,
        ],
    );
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let out = stdout(&output);
    assert!(out.contains("Answer: (B)"), "unexpected output: {out}");
    assert!(out.contains("Images sent:"));
}

#[test]
fn answer_writes_trace_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("run.trace.json");
    let output = provca(
        dir.path(),
        &[
            "answer",
            "--mock",
            "--video",
            "synth:64:10:3",
            "--question",
            "what is marked? [needle@10]",
            "--options",
            "first,second",
            "--trace",
            trace_path.to_str().unwrap(),
        ],
    );
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let trace = provca::trace::PipelineTrace::read_from(&trace_path).unwrap();
    assert_eq!(trace.stages.len(), 7);
    assert!(trace.keyframes.unwrap().indices.contains(&10));
}

#[test]
fn answer_missing_question_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let output = provca(
        dir.path(),
        &["answer", "--mock", "--video", "synth:8:2:1", "--options", "a,b"],
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("--question"));
}

#[test]
fn answer_single_option_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let output = provca(
        dir.path(),
        &["answer", "--mock", "--video", "synth:8:2:1", "--question", "q?", "--options", "only"],
    );
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn answer_unreachable_endpoint_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    // port 9 is reserved/discard; connection is refused immediately
    let output = Command::new(env!("CARGO_BIN_EXE_provca"))
        .env("PROVCA_CACHE_DIR", dir.path())
        .env("PROVCA_API_BASE", "http://127.0.0.1:9")
        .args([
            "answer",
            "--video",
            "synth:8:2:1",
            "--question",
            "q?",
            "--options",
            "a,b",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err = stderr(&output);
    assert!(err.contains("error"), "missing transport diagnostic: {err}");
}

#[test]
fn bench_over_synth_suite_and_parallelism_invariance() {
    let dir = tempfile::tempdir().unwrap();
    let suite_dir = dir.path().join("suite");
    let synth = provca(
        dir.path(),
        &["synth", "--count", "6", "--seed", "3", "--out", suite_dir.to_str().unwrap()],
    );
    assert!(synth.status.success());
    let tasks = suite_dir.join("tasks.jsonl");

    let out1 = dir.path().join("report1.json");
    let out8 = dir.path().join("report8.json");
    let bench1 = provca(
        dir.path(),
        &[
            "bench",
            "--mock",
            "--tasks",
            tasks.to_str().unwrap(),
            "--out",
            out1.to_str().unwrap(),
            "--parallel",
            "1",
        ],
    );
    assert!(bench1.status.success(), "stderr: {}", stderr(&bench1));
    assert!(stdout(&bench1).contains("accuracy: 1.000"));
    assert!(stdout(&bench1).contains("per category"));

    let bench8 = provca(
        dir.path(),
        &[
            "bench",
            "--mock",
            "--tasks",
            tasks.to_str().unwrap(),
            "--out",
            out8.to_str().unwrap(),
            "--parallel",
            "8",
        ],
    );
    assert!(bench8.status.success());

    let report1 = provca::harness::BenchReport::read_from(&out1).unwrap();
    let report8 = provca::harness::BenchReport::read_from(&out8).unwrap();
    assert_eq!(report1.aggregates, report8.aggregates);
}

#[test]
fn bench_empty_task_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = dir.path().join("empty.jsonl");
    std::fs::write(&tasks, "").unwrap();
    let output = provca(
        dir.path(),
        &[
            "bench",
            "--mock",
            "--tasks",
            tasks.to_str().unwrap(),
            "--out",
            dir.path().join("r.json").to_str().unwrap(),
        ],
    );
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("empty"));
}

#[test]
fn synth_is_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let output = provca(
            dir.path(),
            &["synth", "--count", "10", "--seed", "3", "--out", out.to_str().unwrap()],
        );
        assert!(output.status.success());
    }
    let a = std::fs::read(out_a.join("tasks.jsonl")).unwrap();
    let b = std::fs::read(out_b.join("tasks.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn trace_renderer_shows_stages_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("run.trace.json");
    let answer = provca(
        dir.path(),
        &[
            "answer",
            "--mock",
            "--video",
            "synth:32:7:2",
            "--question",
            "marked? [needle@7]",
            "--options",
            "x,y",
            "--trace",
            trace_path.to_str().unwrap(),
        ],
    );
    assert!(answer.status.success());

    let output = provca(dir.path(), &["trace", "--show", trace_path.to_str().unwrap()]);
    assert!(output.status.success());
    let out = stdout(&output);
    let order = ["sample", "localize", "caption_embed", "cluster", "select", "refine", "answer"];
    let mut last = 0;
    for stage in order {
        let pos = out.find(&format!("stage {stage}")).unwrap_or_else(|| panic!("{stage} missing"));
        assert!(pos > last || last == 0, "stage {stage} out of order");
        last = pos;
    }
    assert!(out.contains("ledger:"));
}

#[test]
fn trace_rejects_corrupt_file() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.trace.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let output = provca(dir.path(), &["trace", "--show", bad.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("unreadable trace"));
}

#[test]
fn cache_stats_and_clear() {
    let dir = tempfile::tempdir().unwrap();
    let cache_dir = dir.path().join("cache");
    let stats = provca(&cache_dir, &["cache", "--stats"]);
    assert!(stats.status.success());
    assert!(stdout(&stats).contains("0 entries"));

    // populate the cache via a real ResponseCache, then observe and clear it
    let cache = provca::cache::ResponseCache::open(&cache_dir).unwrap();
    cache.put("abcd", b"{\"content\":\"x\"}").unwrap();
    let stats = provca(&cache_dir, &["cache", "--stats"]);
    assert!(stdout(&stats).contains("1 entries"));

    let clear = provca(&cache_dir, &["cache", "--clear"]);
    assert!(clear.status.success());
    let stats = provca(&cache_dir, &["cache", "--stats"]);
    assert!(stdout(&stats).contains("0 entries"));
}

#[test]
fn cache_requires_exactly_one_action() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(provca(dir.path(), &["cache"]).status.code(), Some(2));
    assert_eq!(provca(dir.path(), &["cache", "--stats", "--clear"]).status.code(), Some(2));
}

#[test]
fn help_enumerates_flags() {
    let dir = tempfile::tempdir().unwrap();
    let output = provca(dir.path(), &["answer", "--help"]);
    assert!(output.status.success());
    let help = stdout(&output);
    for flag in [
        "--video",
        "--question",
        "--options",
        "--trace",
        "--mock",
        "--config",
        "--n-segments",
        "--budget-cap",
        "--t-max",
        "--t-min",
        "--sampling",
        "--select-with-images",
        "--disable-localization",
        "--disable-snippet-selection",
        "--disable-refinement",
    ] {
        assert!(help.contains(flag), "answer --help missing {flag}");
    }

    let bench_help = stdout(&provca(dir.path(), &["bench", "--help"]));
    for flag in ["--tasks", "--out", "--adapter", "--parallel", "--strict", "--trace-dir"] {
        assert!(bench_help.contains(flag), "bench --help missing {flag}");
    }

    let unknown = provca(dir.path(), &["answer", "--definitely-not-a-flag"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn config_file_is_honored_and_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        serde_json::json!({ "n_segments": 2, "budget_cap": 3 }).to_string(),
    )
    .unwrap();
    let trace_path = dir.path().join("run.trace.json");
    let output = provca(
        dir.path(),
        &[
            "answer",
            "--mock",
            "--video",
            "synth:64:9:4",
            "--question",
            "marked? [needle@9]",
            "--options",
            "p,q",
            "--config",
            config_path.to_str().unwrap(),
            "--budget-cap",
            "5",
            "--trace",
            trace_path.to_str().unwrap(),
        ],
    );
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let trace = provca::trace::PipelineTrace::read_from(&trace_path).unwrap();
    assert_eq!(trace.config["n_segments"], 2, "config file value applied");
    assert_eq!(trace.config["budget_cap"], 5, "flag overrides config file");

    // config typos are rejected
    std::fs::write(&config_path, serde_json::json!({ "nsegments": 2 }).to_string()).unwrap();
    let bad = provca(
        dir.path(),
        &[
            "answer",
            "--mock",
            "--video",
            "synth:8:2:1",
            "--question",
            "q?",
            "--options",
            "a,b",
            "--config",
            config_path.to_str().unwrap(),
        ],
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("parsing config"));
}
