use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

fn viewlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewlink"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = viewlink(args);
    assert!(
        out.status.success(),
        "viewlink {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) -> PathBuf {
    let out = dir.join("study");
    let printed = ok(&["synth", "--out", out.to_str().unwrap(), "--pairs", "80", "--seed", "7"]);
    PathBuf::from(printed.trim())
}

#[test]
fn run_profile_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    let c = config.to_str().unwrap();

    let summary = ok(&["run", "-c", c]);
    assert!(summary.contains("pending HITs:"), "{summary}");
    assert!(summary.contains("precision"), "{summary}");
    let out = config.parent().unwrap().join("out");
    for f in ["crosswalk.csv", "hits.csv", "unmatched_left.csv", "unmatched_right.csv", "run_report.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let first = std::fs::read(out.join("crosswalk.csv")).unwrap();

    let report: serde_json::Value = serde_json::from_str(&ok(&["run", "-c", c, "--json"])).unwrap();
    assert!(report["manifest"]["manifest_hash"].as_str().unwrap().starts_with("sha256:"));
    assert_eq!(std::fs::read(out.join("crosswalk.csv")).unwrap(), first);

    let metrics: serde_json::Value = serde_json::from_str(&ok(&["metrics", "-c", c])).unwrap();
    assert_eq!(metrics["precision"], report["metrics"]["precision"]);
    assert_eq!(metrics["counts"]["true_links"], 80);

    let text = ok(&["profile", "-c", c, "--attribute", "name", "--side", "left", "--top", "5"]);
    assert!(text.starts_with("left name:"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&ok(&["profile", "-c", c, "-a", "zip", "--json"])).unwrap();
    assert!(json["left"]["entropy_bits"].as_f64().unwrap() > 0.0);
    assert!(json["right"]["distinct_count"].as_u64().unwrap() > 0);
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = viewlink(&["run", "-c", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let config = synth(dir.path());
    let out = viewlink(&["metrics", "-c", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run first"));

    let out = viewlink(&["profile", "-c", config.to_str().unwrap(), "-a", "phone"]);
    assert!(!out.status.success());
}

struct Killed(Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn http_get(addr: &str, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(addr).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn serve_answers_and_refuses_a_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    let c = config.to_str().unwrap();

    let out = viewlink(&["serve", "-c", c, "--bind", "127.0.0.1:0"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no completed run"));

    ok(&["run", "-c", c]);
    let addr = {
        let probe = TcpListener::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap().to_string()
    };
    let _server = Killed(
        Command::new(env!("CARGO_BIN_EXE_viewlink"))
            .args(["serve", "-c", c, "--bind", &addr])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let deadline = Instant::now() + Duration::from_secs(30);
    let response = loop {
        if let Some(r) = http_get(&addr, "/progress") {
            break r;
        }
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.to_ascii_lowercase().contains("x-manifest-hash: sha256:"));
    assert!(response.contains("\"pending\""));

    let busy = viewlink(&["serve", "-c", c, "--bind", &addr]);
    assert_eq!(busy.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&busy.stderr).contains("already in use"));
}
