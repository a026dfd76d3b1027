use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("discopath-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_discopath")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn golden_args() -> (String, String) {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(fixture("golden/instance.json")).unwrap()).unwrap();
    (v["arg1"].as_str().unwrap().into(), v["arg2"].as_str().unwrap().into())
}

#[test]
fn hierarchy_show() {
    assert_eq!(json(&run(&["hierarchy", "show", "pdtb2"]))["paths"].as_array().unwrap().len(), 11);
    let c = json(&run(&["hierarchy", "show", "conll16"]));
    assert_eq!(c["paths"][13]["path"], "Temporal -> Synchrony -> when");
    let t = run(&["--format", "table", "hierarchy", "show", "pdtb2"]);
    assert!(stdout(&t).contains("Expansion -> Instantiation -> for example"));
    assert_eq!(run(&["hierarchy", "show", "pdtb3"]).status.code(), Some(3));
}

#[test]
fn parse_path_exit_codes() {
    let v = json(&run(&["parse-path", "Temporal -> Synchrony -> when"]));
    assert_eq!(v["second"], "Synchrony");
    assert_eq!(run(&["parse-path", "no idea"]).status.code(), Some(1));

    let mut child = Command::new(env!("CARGO_BIN_EXE_discopath"))
        .arg("parse-path")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"Expansion.List, and").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(json(&out)["path_id"], 7);
}

#[test]
fn prior_build_and_rank() {
    let m = run(&["prior", "build", "--in", fixture("explicit_contrast.tsv").to_str().unwrap(), "--alpha", "1"]);
    let v = json(&m);
    assert_eq!(v["alpha"], 1.0);
    assert_eq!(v["rejected"], 0);
    let path = scratch("prior.json");
    std::fs::write(&path, &m.stdout).unwrap();
    let r = json(&run(&["prior", "rank", "--matrix", path.to_str().unwrap(), "--top", "1"]));
    let contrast = r.as_array().unwrap().iter().find(|s| s["sense"] == "Contrast").unwrap();
    assert_eq!(contrast["connectives"][0][0], "however");
    assert_eq!(run(&["prior", "build", "--in", "/no/such/file", "--alpha", "0"]).status.code(), Some(3));
    assert_eq!(
        run(&["prior", "build", "--in", fixture("explicit_contrast.tsv").to_str().unwrap(), "--alpha=-1"]).status.code(),
        Some(1)
    );
    assert_eq!(run(&["prior", "build"]).status.code(), Some(1));
}

#[test]
fn render_matches_golden() {
    let (a1, a2) = golden_args();
    let v = json(&run(&["render", "--variant", "discoprompt", "--arg1", &a1, "--arg2", &a2]));
    let golden = std::fs::read_to_string(fixture("golden/discoprompt.txt")).unwrap();
    assert_eq!(v[0]["text"], golden);
    assert_eq!(run(&["render", "--variant", "bogus", "--arg1", "a", "--arg2", "b"]).status.code(), Some(1));
}

#[test]
fn chat_prompt_table_is_raw_text() {
    let (a1, a2) = golden_args();
    let out = run(&["--format", "table", "chat-prompts", "--kind", "structure", "--arg1", &a1, "--arg2", &a2]);
    let golden = std::fs::read_to_string(fixture("golden/chat_structure.txt")).unwrap();
    assert_eq!(stdout(&out), format!("{golden}\n"));
}

#[test]
fn score_from_distributions() {
    let path = scratch("dists.jsonl");
    let uniform = serde_json::json!({
        "id": "u",
        "probs": {"top": vec![0.25; 4], "second": vec![1.0 / 11.0; 11], "connective": vec![1.0 / 11.0; 11]}
    });
    let mut point = uniform.clone();
    point["id"] = "p".into();
    point["probs"]["second"] = serde_json::json!([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    std::fs::write(&path, format!("{uniform}\n{point}\n")).unwrap();
    let out = run(&["score", "--distributions", path.to_str().unwrap()]);
    assert!(out.status.success());
    let lines: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["path_id"], 0);
    assert_eq!(lines[1]["second"], "List");
    let out = run(&["score", "--distributions", path.to_str().unwrap(), "--subset", "second"]);
    assert!(stdout(&out).lines().nth(1).unwrap().contains("\"top\":\"Expansion\""));
}

#[test]
fn score_with_mock_backend() {
    let input = scratch("instances.jsonl");
    std::fs::write(&input, "{\"id\":\"p00\",\"arg1\":\"x\",\"arg2\":\"y\"}\n{\"id\":\"zz\",\"arg1\":\"x\",\"arg2\":\"y\"}\n").unwrap();
    let out = run(&[
        "score",
        "--backend",
        "mock",
        "--table",
        fixture("pipeline_mock.json").to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let lines: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["second"], "Contrast");
    assert_eq!(lines[1]["path_id"], 0);
}

#[test]
fn unreachable_remote_is_backend_failure() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let input = scratch("one.jsonl");
    std::fs::write(&input, "{\"id\":\"a\",\"arg1\":\"x\",\"arg2\":\"y\"}\n").unwrap();
    let endpoint = format!("http://127.0.0.1:{port}");
    let out = run(&[
        "score", "--backend", "remote", "--endpoint", &endpoint, "--retries", "0", "--timeout-ms", "500",
        "--input", input.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("\"error\""));
}

#[test]
fn run_and_evaluate() {
    let dump_a = scratch("dump_a.jsonl");
    let dump_b = scratch("dump_b.jsonl");
    let cfg = fixture("pipeline.json");
    let a = json(&run(&["run", "--config", cfg.to_str().unwrap(), "--predictions", dump_a.to_str().unwrap()]));
    run(&["run", "--config", cfg.to_str().unwrap(), "--predictions", dump_b.to_str().unwrap()]);
    assert_eq!(a["top"]["accuracy"], 0.8);
    assert_eq!(a["second"]["accuracy"], 0.8);
    assert_eq!(std::fs::read(&dump_a).unwrap(), std::fs::read(&dump_b).unwrap());

    let e = json(&run(&[
        "evaluate", "--level", "second", "--predictions", dump_a.to_str().unwrap(), "--corpus",
        fixture("pipeline_corpus.tsv").to_str().unwrap(),
    ]));
    assert_eq!(e["accuracy"], 0.8);
    assert_eq!(e["macro_f1"], a["second"]["macro_f1"]);

    let t = run(&["--format", "table", "run", "--config", cfg.to_str().unwrap()]);
    assert!(stdout(&t).contains("Temporal.Asynchronous"));
    assert_eq!(run(&["run", "--config", "/no/such/config.json"]).status.code(), Some(3));
    let bad = scratch("bad.json");
    std::fs::write(&bad, "{\"hierarchy\":\"pdtb2\"}").unwrap();
    assert_eq!(run(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
}
