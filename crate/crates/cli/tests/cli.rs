use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_screensense"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn screensense")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Set `SCREENSENSE_BLESS=1` to rewrite golden files.
fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("SCREENSENSE_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, want, "golden {name} differs");
}

#[test]
fn describe_synthetic_matches_golden() {
    let o = run(&["describe", "--synthetic", "7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let (rendering, dump) = out.split_once("--- dump ---\n").expect("dump separator");
    let dump: serde_json::Value = serde_json::from_str(dump).expect("dump is JSON");
    assert!(dump["blocks"].as_array().is_some_and(|b| !b.is_empty()));
    golden("describe_seed7.txt", rendering);
}

#[test]
fn describe_is_deterministic() {
    assert_eq!(stdout(&run(&["describe", "--synthetic", "11"])), stdout(&run(&["describe", "--synthetic", "11"])));
}

#[test]
fn describe_missing_image_exits_3() {
    assert_eq!(code(&run(&["describe", "/definitely/not/here.png"])), 3);
}

#[test]
fn describe_corrupt_image_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.png");
    std::fs::write(&p, b"not a png").unwrap();
    assert_eq!(code(&run(&["describe", p.to_str().unwrap()])), 3);
}

#[test]
fn describe_without_sidecar_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[sidecar]\nurl = \"http://127.0.0.1:9\"\ntimeout_s = 2\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "describe", "--synthetic", "1", "--perception", "sidecar"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("perception unavailable"));
}

#[test]
fn sim_run_completes() {
    let o = run(&["run", "--device", "sim:settings_wlan"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let steps: Vec<&str> = out.lines().filter(|l| l.starts_with("step ")).collect();
    assert_eq!(steps.len(), 3, "{out}");
    assert!(steps[0].starts_with("step 1: Tap Settings"));
    assert!(out.trim_end().ends_with("status: completed (3 steps)"));
}

#[test]
fn step_limit_has_its_own_exit_code() {
    let o = run(&["run", "--device", "sim:food_search", "--max-steps", "2"]);
    assert_eq!(code(&o), 10);
    assert!(stdout(&o).contains("status: step_limit (2 steps)"));
}

#[test]
fn exhausted_script_is_an_llm_error() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("s.json");
    std::fs::write(&script, r#"{"replies": ["Tap Settings"]}"#).unwrap();
    let o = run(&["run", "--device", "sim:settings_wlan", "--llm", &format!("scripted:{}", script.display())]);
    assert_eq!(code(&o), 14);
}

#[test]
fn eval_scores_synthetic_records() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    let o = run(&["synth", "--seed", "1", "--count", "10", "--eval", "--out", ds.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let mut rules = Vec::new();
    for e in std::fs::read_dir(&ds).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
            let task = v["task"].as_str().unwrap().to_string();
            rules.push(serde_json::json!({"contains": format!("Task: {task}\n"), "reply": task}));
        }
    }
    assert_eq!(rules.len(), 10);
    let script = dir.path().join("oracle.json");
    std::fs::write(&script, serde_json::json!({ "rules": rules }).to_string()).unwrap();
    let llm = format!("scripted:{}", script.display());
    let o = run(&["eval", ds.to_str().unwrap(), "--llm", &llm, "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["records"], 10);
    assert_eq!(summary["accuracy"], 1.0);

    let wrong = dir.path().join("wrong.json");
    std::fs::write(&wrong, r#"{"rules": [{"contains": "Task:", "reply": "Tap [1]"}]}"#).unwrap();
    let o = run(&["eval", ds.to_str().unwrap(), "--llm", &format!("scripted:{}", wrong.display()), "--json"]);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["correct"], 0);
    assert_eq!(summary["planning_errors"], 10);
}

#[test]
fn eval_target_missing_from_perception_is_a_ui_error() {
    let dir = tempfile::tempdir().unwrap();
    let record = serde_json::json!({
        "schema": "1",
        "screen": {"w": 1080, "h": 2244},
        "widgets": [{"box": [100, 100, 500, 220], "category": "button", "conf": 0.99, "crop_id": ""}],
        "texts": [{"box": [130, 148, 226, 172], "text": "Save", "conf": 0.99}],
        "embeddings": {},
        "task": "Tap Cancel",
        "truth_element_box": [100, 1500, 500, 1620]
    });
    std::fs::write(dir.path().join("r.json"), record.to_string()).unwrap();
    let aux = tempfile::tempdir().unwrap();
    let script = aux.path().join("s.json");
    std::fs::write(&script, r#"{"replies": ["Tap Save"]}"#).unwrap();
    let o = run(&["eval", dir.path().to_str().unwrap(), "--llm", &format!("scripted:{}", script.display()), "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["ui_errors"], 1);
    assert_eq!(summary["breakdown"]["missed"], 1);
}

#[test]
fn eval_empty_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["eval", dir.path().to_str().unwrap(), "--llm", "scripted:x.json"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn record_then_replay_from_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("traces");
    let o = run(&["record", "--device", "sim:food_search", "--store", store.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("step 2: Enter 'pizza hut' in Search"));
    assert_eq!(std::fs::read_dir(&store).unwrap().count(), 1);

    let o = run(&["run", "--device", "sim:food_search", "--llm", "example", "--store", store.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn print_config_round_trips() {
    let o = run(&["--print-config"]);
    assert_eq!(code(&o), 0);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, &o.stdout).unwrap();
    let again = run(&["--config", cfg.to_str().unwrap(), "--print-config"]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn bad_config_and_usage_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[lexicon]\ntemperature = -1.0\n").unwrap();
    assert_eq!(code(&run(&["--config", cfg.to_str().unwrap(), "--print-config"])), 64);
    assert_eq!(code(&run(&["run", "--device", "usb:1"])), 64);
    assert_eq!(code(&run(&[])), 64);
    assert_eq!(code(&run(&["--help"])), 0);
}

/// Answers each completion request with `reply` after `delay`.
fn slow_llm(reply: &'static str, delay: std::time::Duration) -> String {
    use std::io::{Read, Write};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut s) = stream else { continue };
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            loop {
                let n = s.read(&mut chunk).unwrap_or(0);
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf);
                if let Some(end) = text.find("\r\n\r\n") {
                    let len = text[..end]
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if buf.len() >= end + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            std::thread::sleep(delay);
            let body = serde_json::json!({ "text": reply }).to_string();
            let _ = write!(s, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len());
        }
    });
    format!("http://{addr}/complete")
}

#[test]
fn interrupt_aborts_with_partial_history() {
    let url = slow_llm("Tap Settings", std::time::Duration::from_millis(1500));
    let child = bin()
        .args(["run", "--device", "sim:settings_wlan", "--llm", &url])
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    std::thread::sleep(std::time::Duration::from_millis(2200));
    let status = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let o = child.wait_with_output().unwrap();
    let out = stdout(&o);
    assert_eq!(code(&o), 130, "{out}");
    assert!(out.contains("step 1: Tap Settings"), "{out}");
    assert!(out.contains("history: Tap Settings"), "{out}");
    assert!(out.contains("status: aborted (1 steps)"), "{out}");
}
