use std::path::Path;
use std::process::{Command, Output};

fn cgbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgbench")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn selfplay(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["selfplay", "--out", out.to_str().unwrap(), "--seed", "3"];
    args.extend_from_slice(extra);
    cgbench(&args)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn oracle_selfplay_analyze_and_audit() {
    let corpus = tempfile::tempdir().unwrap();
    let o = selfplay(corpus.path(), &["--sessions", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l.contains("5/5 solved") && l.ends_with("ok")), "{lines:?}");
    assert_eq!(files(corpus.path()).len(), 4);

    let a = cgbench(&["audit", "--corpus", corpus.path().to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a).lines().filter(|l| l.starts_with("PASS")).count(), 4);

    let out = tempfile::tempdir().unwrap();
    let r = cgbench(&["analyze", "--corpus", corpus.path().to_str().unwrap(), "--annotator", "rule", "--out", out.path().to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let names: Vec<String> = files(out.path()).into_iter().map(|f| f.0).collect();
    assert_eq!(names, ["metrics.csv", "report.json", "summary.txt", "utterances.jsonl"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join("report.json")).unwrap()).unwrap();
    let cells = report["cells"].as_array().unwrap();
    assert!(cells.iter().all(|c| c["success_rate"] == 1.0));
}

#[test]
fn noisy_corpus_is_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = selfplay(d.path(), &["--sessions", "2", "--conditions", "shared", "--worker", "noisy:0.5", "--jobs", "3"]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn endpoint_failure_is_partial() {
    let dir = tempfile::tempdir().unwrap();
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let config = dir.path().join("cg.toml");
    std::fs::write(
        &config,
        format!(
            "[endpoints.down]\nbase_url = \"http://127.0.0.1:{port}/v1\"\ntimeout_secs = 2\n[endpoints.down.retry]\nmax_attempts = 2\nbase_delay_ms = 1\nmax_delay_ms = 1\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("logs");
    let o = selfplay(
        &out,
        &["--conditions", "shared", "--roles", "helper", "--helper", "llm:endpoint=down,model=m", "--config", config.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("FAILED"));
    let log = std::fs::read_to_string(files(&out).first().map(|f| out.join(&f.0)).unwrap()).unwrap();
    assert!(log.contains("EndpointError"));
}

#[test]
fn broken_log_makes_analyze_partial() {
    let corpus = tempfile::tempdir().unwrap();
    assert_eq!(selfplay(corpus.path(), &["--sessions", "1", "--roles", "worker"]).status.code(), Some(0));
    std::fs::write(corpus.path().join("bad.events.jsonl"), "garbage\n").unwrap();
    let out = tempfile::tempdir().unwrap();
    let r = cgbench(&["analyze", "--corpus", corpus.path().to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("bad.events.jsonl"));
    let a = cgbench(&["audit", "--corpus", corpus.path().to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(2));
}

#[test]
fn fatal_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cg.toml");
    std::fs::write(&config, "puzzle = \"missing-trials.toml\"\n").unwrap();
    let o = cgbench(&["serve", "--config", config.to_str().unwrap(), "--port", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing-trials.toml"));

    let o = cgbench(&["selfplay", "--out", dir.path().to_str().unwrap(), "--conditions", "sideways"]);
    assert_eq!(o.status.code(), Some(1));
    let o = cgbench(&["analyze", "--corpus", dir.path().join("nope").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
