#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread::JoinHandle;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn chain() -> PathBuf {
    fixtures().join("incident/chain")
}

pub fn scope_file() -> PathBuf {
    fixtures().join("incident/scope.json")
}

pub fn signatures() -> PathBuf {
    fixtures().join("incident/signatures.tsv")
}

pub fn model() -> PathBuf {
    fixtures().join("benchmark/model.json")
}

pub fn dataset() -> PathBuf {
    fixtures().join("benchmark/dataset.jsonl")
}

/// The binary with a scrubbed environment, run from `cwd`.
pub fn command(cwd: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trace-llm"));
    c.current_dir(cwd);
    for (k, _) in std::env::vars() {
        if k.starts_with("TRACELLM_") || k == "SOURCE_DATE_EPOCH" {
            c.env_remove(k);
        }
    }
    c
}

pub fn run(cwd: &Path, args: &[&str]) -> Output {
    command(cwd).args(args).output().expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Fixture chain plus signature table, as leading flags.
pub fn chain_flags() -> Vec<String> {
    vec![
        "--fixtures".into(),
        p(&chain()).into(),
        "--signatures".into(),
        p(&signatures()).into(),
    ]
}

pub fn stdout_json(o: &Output) -> serde_json::Value {
    assert!(
        o.status.success(),
        "exit {:?}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

/// Minimal chat-completions endpoint answering `requests` calls with `answer`.
pub fn serve_chat(answer: &str, requests: usize) -> (String, JoinHandle<usize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": answer}}]}).to_string();
    let handle = std::thread::spawn(move || {
        let mut served = 0;
        for stream in listener.incoming().take(requests) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut authorized = false;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end().to_ascii_lowercase();
                if l.is_empty() {
                    break;
                }
                if let Some(v) = l.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if l.starts_with("authorization: bearer ") {
                    authorized = true;
                }
            }
            let mut req = vec![0; len];
            reader.read_exact(&mut req).unwrap();
            let (status, text) = if authorized { ("200 OK", body.as_str()) } else { ("401 Unauthorized", "{}") };
            write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            )
            .unwrap();
            served += 1;
        }
        served
    });
    (url, handle)
}

pub fn scenario() -> tracekit::synthetic::IncidentScenario {
    tracekit::synthetic::incident_scenario().1
}
