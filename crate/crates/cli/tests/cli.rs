use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn crs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crs"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn test_corpus<'a>(test: &'a str, header: &'a str) -> [&'a str; 4] {
    ["--test", test, "--test-header", header]
}

#[test]
fn eval_dg_response_writes_report_with_table_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let (script, test, th, train, trh) = (
        fixture("script.json"),
        fixture("test.jsonl"),
        fixture("test.header.json"),
        fixture("train.jsonl"),
        fixture("train.header.json"),
    );
    let mut args = vec!["--script", &script, "--out", out.to_str().unwrap(), "eval", "--task", "response", "--mode", "dg", "--shots", "3"];
    args.extend(test_corpus(&test, &th));
    args.extend(["--train", &train, "--train-header", &trh]);
    let o = crs(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for key in ["bleu1", "bleu2", "dist2", "f1"] {
        assert!(report["per_metric"][key].is_f64(), "{key}");
    }
    assert!(report["config_fingerprint"].as_str().unwrap().contains("shots=3"));
    assert!(stdout(&o).contains("bleu1="));
}

#[test]
fn chatcrs_without_kb_is_a_usage_error() {
    let (script, test, th) = (fixture("script.json"), fixture("test.jsonl"), fixture("test.header.json"));
    let mut args = vec!["--script", &script, "eval", "--task", "rec", "--mode", "chatcrs"];
    args.extend(test_corpus(&test, &th));
    let o = crs(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("knowledge base"));
}

#[test]
fn echoing_the_gold_item_prints_perfect_ndcg() {
    let (script, test, th) = (fixture("script.json"), fixture("test.jsonl"), fixture("test.header.json"));
    let mut args = vec!["--script", &script, "eval", "--task", "rec", "--mode", "dg"];
    args.extend(test_corpus(&test, &th));
    let o = crs(&args);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("ndcg@10=1.000"), "{}", stdout(&o));
}

#[test]
fn chatcrs_eval_from_config() {
    let config = fixture("crs.toml");
    let o = crs(&["--config", &config, "eval", "--task", "response", "--mode", "chatcrs"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("n_relation=2"));
}

#[test]
fn zero_evaluable_turns_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("t.jsonl");
    let header = dir.path().join("t.json");
    // no system turn carries recommendation items
    std::fs::write(&data, r#"{"id":"a","turns":[{"speaker":"user","text":"hi"},{"speaker":"system","text":"hello"}]}"#).unwrap();
    std::fs::write(&header, r#"{"name":"t","split":"test","goal_inventory":[]}"#).unwrap();
    let script = fixture("script.json");
    let o = crs(&[
        "--script", &script, "eval", "--task", "rec", "--mode", "dg",
        "--test", data.to_str().unwrap(), "--test-header", header.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_and_usage_errors_exit_2() {
    assert_eq!(crs(&["--config", "/definitely/missing.toml", "analyze"]).status.code(), Some(2));
    assert_eq!(crs(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(crs(&["eval", "--mode", "dg"]).status.code(), Some(2));
    assert_eq!(crs(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "kb_path = \"missing.tsv\"\n").unwrap();
    assert_eq!(crs(&["--config", cfg.to_str().unwrap(), "analyze"]).status.code(), Some(2));
}

#[test]
fn analyze_prints_sorted_ratio_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.json");
    let data = dir.path().join("c.jsonl");
    let header = dir.path().join("c.json");
    let turn = |k: bool, goal: &str| {
        let know = if k { r#"[["A","r",["b"]]]"# } else { "[]" };
        format!(r#"{{"speaker":"system","text":"t","goals":["{goal}"],"knowledge":{know}}}"#)
    };
    let turns = [turn(true, "X"), turn(true, "X"), turn(false, "X"), turn(true, "X"), turn(true, "B"), turn(true, "A")];
    std::fs::write(&data, format!(r#"{{"id":"d","turns":[{}]}}"#, turns.join(","))).unwrap();
    std::fs::write(&header, r#"{"name":"c","split":"train","goal_inventory":["X","A","B"]}"#).unwrap();
    let o = crs(&[
        "--out", out.to_str().unwrap(), "analyze",
        "--corpus", data.to_str().unwrap(), "--header", header.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).take(3).collect();
    assert_eq!(rows, ["A 1/1 1.000", "B 1/1 1.000", "X 3/4 0.750"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["knowledge_ratio"][2]["ratio"], 0.75);
    assert_eq!(report["goal_distribution"]["X"], 4);
}

#[test]
fn analyze_unannotated_corpus_fails() {
    let (data, header) = (fixture("test.jsonl"), fixture("test.header.json"));
    let dir = tempfile::tempdir().unwrap();
    let bare = dir.path().join("bare.jsonl");
    let stripped: String = std::fs::read_to_string(&data)
        .unwrap()
        .lines()
        .map(|l| {
            let mut d: serde_json::Value = serde_json::from_str(l).unwrap();
            for t in d["turns"].as_array_mut().unwrap() {
                t["goals"] = serde_json::json!([]);
            }
            d.to_string() + "\n"
        })
        .collect();
    std::fs::write(&bare, stripped).unwrap();
    let o = crs(&["analyze", "--corpus", bare.to_str().unwrap(), "--header", &header]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_goal_writes_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let out: PathBuf = dir.path().join("goal.json");
    let config = fixture("crs.toml");
    let o = crs(&["--config", &config, "--out", out.to_str().unwrap(), "train-goal", "--max-epochs", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let model = crs_core::GoalModel::load(&out).unwrap();
    assert_eq!(model.inventory.len(), 4);
    assert!(stdout(&o).contains("epochs="));
    assert_eq!(crs(&["--config", &config, "train-goal"]).status.code(), Some(2));
}

#[test]
fn retrieve_prints_triples_and_trace() {
    let config = fixture("crs.toml");
    let o = crs(&["--config", &config, "retrieve", "--text", "Do you know Jiong He's zodiac sign?"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["knowledge"], serde_json::json!([["Jiong He", "zodiac sign", ["Taurus"]]]));
    assert_eq!(v["trace"]["per_entity"][0]["selected"], "zodiac sign");
}

#[test]
fn chat_repl_answers_from_stdin() {
    let config = fixture("crs.toml");
    let mut child = Command::new(env!("CARGO_BIN_EXE_crs"))
        .args(["--config", &config, "chat"])
        .env("RUST_LOG", "off")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"Do you know Jiong He's zodiac sign?\n/quit\n")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("system> Jiong He's zodiac sign is Taurus."), "{text}");
    assert!(text.contains("[goal] Chit-chat about Star"));
}
