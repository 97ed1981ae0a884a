use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use flipdiag::model::{
    BridgeConfig, HttpBridge, ModelError, Predictor, ScoreRequest, ScoreResponse, ScoredModel,
    SubprocessBridge,
};
use tempfile::TempDir;

const SCORER: &str = r#"
import json, os, sys, time
mode = sys.argv[1]
marker = sys.argv[2] if len(sys.argv) > 2 else None
for line in sys.stdin:
    req = json.loads(line)
    n = len(req["items"])
    if mode == "const":
        scores = [0.5] * n
    elif mode == "size":
        scores = [min(1.0, len(b) / 10.0) for b in req["items"]]
    elif mode == "range":
        scores = [1.7] * n
    elif mode == "short":
        scores = [0.5] * (n - 1)
    elif mode == "garbage":
        print("this is not json", flush=True)
        continue
    elif mode == "sleep":
        time.sleep(5)
        scores = [0.5] * n
    elif mode == "stale":
        print(json.dumps({"id": req["id"] + 1000, "scores": [0.0] * n}), flush=True)
        scores = [0.25] * n
    elif mode == "crash-once":
        if not os.path.exists(marker):
            open(marker, "w").close()
            sys.exit(1)
        scores = [0.75] * n
    print(json.dumps({"id": req["id"], "scores": scores}), flush=True)
"#;

struct Scorer {
    dir: TempDir,
    script: PathBuf,
}

impl Scorer {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let script = dir.path().join("scorer.py");
        std::fs::write(&script, SCORER).unwrap();
        Self { dir, script }
    }

    fn command(&self, mode: &str) -> String {
        let marker = self.dir.path().join("crashed");
        format!(
            "python3 {} {mode} {} 2>/dev/null",
            self.script.display(),
            marker.display()
        )
    }
}

fn quick() -> BridgeConfig {
    BridgeConfig {
        timeout: Duration::from_millis(500),
        ..BridgeConfig::default()
    }
}

#[test]
fn constant_half_is_never_positive() {
    let s = Scorer::new();
    let bridge = SubprocessBridge::connect(s.command("const"), quick()).unwrap();
    let model = ScoredModel::new(Arc::new(bridge), 10, 0.5);
    for bag in [&[][..], &[1, 2][..], &[9][..]] {
        assert_eq!(model.score(bag).unwrap(), 0.5);
        assert!(!model.label(bag).unwrap());
    }
    assert!(!model.with_threshold(0.7).label(&[3]).unwrap());
}

#[test]
fn batch_of_three_keeps_order() {
    let s = Scorer::new();
    let bridge = SubprocessBridge::connect(s.command("size"), quick()).unwrap();
    let scores = bridge
        .score_batch(&[&[1, 2, 3][..], &[][..], &[4][..]])
        .unwrap();
    assert_eq!(scores, vec![0.3, 0.0, 0.1]);
}

#[test]
fn out_of_range_score_is_an_error() {
    let s = Scorer::new();
    let bridge = SubprocessBridge::connect(s.command("range"), quick()).unwrap();
    match bridge.score_batch(&[&[1][..]]) {
        Err(ModelError::BridgeExhausted { attempts, last }) => {
            assert_eq!(attempts, 3);
            assert!(last.contains("1.7"), "{last}");
        }
        other => panic!("expected exhausted retries, got {other:?}"),
    }
}

#[test]
fn wrong_batch_length_is_an_error() {
    let s = Scorer::new();
    let bridge = SubprocessBridge::connect(s.command("short"), quick()).unwrap();
    assert!(bridge.score_batch(&[&[1][..], &[2][..]]).is_err());
}

#[test]
fn malformed_line_is_an_error() {
    let s = Scorer::new();
    let bridge = SubprocessBridge::connect(s.command("garbage"), quick()).unwrap();
    assert!(matches!(
        bridge.score_batch(&[&[0][..]]),
        Err(ModelError::BridgeExhausted { .. })
    ));
}

#[test]
fn slow_model_times_out() {
    let s = Scorer::new();
    let cfg = BridgeConfig {
        timeout: Duration::from_millis(200),
        attempts: 2,
        connections: 1,
    };
    let bridge = SubprocessBridge::connect(s.command("sleep"), cfg).unwrap();
    match bridge.score_batch(&[&[0][..]]) {
        Err(ModelError::BridgeExhausted { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("expected timeout, got {other:?}"),
    }
}

#[test]
fn stale_ids_are_skipped() {
    let s = Scorer::new();
    let bridge = SubprocessBridge::connect(s.command("stale"), quick()).unwrap();
    assert_eq!(bridge.score_batch(&[&[0][..], &[1][..]]).unwrap(), vec![0.25, 0.25]);
    assert_eq!(bridge.score_batch(&[&[2][..]]).unwrap(), vec![0.25]);
}

#[test]
fn dead_child_is_respawned() {
    let s = Scorer::new();
    let bridge = SubprocessBridge::connect(s.command("crash-once"), quick()).unwrap();
    assert_eq!(bridge.score_batch(&[&[0][..]]).unwrap(), vec![0.75]);
}

#[test]
fn bad_command_fails_on_first_use() {
    let bridge = SubprocessBridge::connect("exit 3", quick()).unwrap();
    assert!(bridge.score_batch(&[&[0][..]]).is_err());
}

#[test]
fn pool_serves_concurrent_callers() {
    let s = Scorer::new();
    let cfg = BridgeConfig {
        connections: 3,
        ..quick()
    };
    let bridge = Arc::new(SubprocessBridge::connect(s.command("size"), cfg).unwrap());
    let handles: Vec<_> = (0..6u32)
        .map(|k| {
            let bridge = Arc::clone(&bridge);
            thread::spawn(move || {
                let bag: Vec<u32> = (0..k).collect();
                for _ in 0..5 {
                    let got = bridge.score_batch(&[&bag[..]]).unwrap();
                    assert_eq!(got, vec![k as f64 / 10.0]);
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

fn serve_http(listener: TcpListener, respond: fn(ScoreRequest) -> String) {
    for stream in listener.incoming() {
        let Ok(stream) = stream else { return };
        thread::spawn(move || {
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut writer = stream;
            loop {
                let mut length = 0usize;
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    return;
                }
                assert!(line.starts_with("POST /score "), "{line}");
                loop {
                    line.clear();
                    reader.read_line(&mut line).unwrap();
                    let header = line.trim_end();
                    if header.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = header.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            length = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                let request: ScoreRequest = serde_json::from_slice(&body).unwrap();
                let payload = respond(request);
                write!(
                    writer,
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
                    payload.len(),
                    payload
                )
                .unwrap();
                writer.flush().unwrap();
            }
        });
    }
}

fn spawn_http(respond: fn(ScoreRequest) -> String) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || serve_http(listener, respond));
    format!("http://{addr}")
}

#[test]
fn http_endpoint_round_trip() {
    let base = spawn_http(|req| {
        let scores = req.items.iter().map(|b| b.len() as f64 / 4.0).collect();
        serde_json::to_string(&ScoreResponse { id: req.id, scores }).unwrap()
    });
    let bridge = HttpBridge::new(&base, &quick());
    assert_eq!(
        bridge.score_batch(&[&[0, 1][..], &[][..], &[3][..]]).unwrap(),
        vec![0.5, 0.0, 0.25]
    );
    assert_eq!(bridge.score_batch(&[&[0, 1, 2, 3][..]]).unwrap(), vec![1.0]);
}

#[test]
fn http_endpoint_out_of_range() {
    let base = spawn_http(|req| {
        serde_json::to_string(&ScoreResponse {
            id: req.id,
            scores: vec![1.7; req.items.len()],
        })
        .unwrap()
    });
    let bridge = HttpBridge::new(&base, &quick());
    assert!(bridge.score_batch(&[&[0][..]]).is_err());
}

#[test]
fn http_endpoint_unreachable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let bridge = HttpBridge::new(&format!("http://{addr}"), &quick());
    assert!(bridge.score_batch(&[&[0][..]]).is_err());
}
