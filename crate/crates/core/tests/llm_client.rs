use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use gomoku_core::engine::{Board, Player, Position};
use gomoku_core::evaluation::{EvaluatorBackend, LlmBackend, LlmClient, LlmConfig, LlmError, MoveRequest};

#[derive(Clone)]
struct Reply {
    status: u16,
    content: String,
    delay: Duration,
}

fn ok(content: &str) -> Reply {
    Reply {
        status: 200,
        content: content.into(),
        delay: Duration::ZERO,
    }
}

fn status(code: u16) -> Reply {
    Reply {
        status: code,
        content: String::new(),
        delay: Duration::ZERO,
    }
}

#[derive(Default)]
struct Seen {
    bodies: Vec<String>,
    auth: Vec<Option<String>>,
}

struct Stub {
    url: String,
    seen: Arc<Mutex<Seen>>,
    peak: Arc<AtomicUsize>,
}

/// Minimal HTTP/1.1 server answering requests from `script` in order; the
/// last entry repeats once the script runs out.
fn serve(script: Vec<Reply>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Seen::default()));
    let peak = Arc::new(AtomicUsize::new(0));
    let active = Arc::new(AtomicUsize::new(0));
    let next = Arc::new(AtomicUsize::new(0));
    let script = Arc::new(script);
    {
        let seen = seen.clone();
        let peak = peak.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let (seen, peak, active, next, script) =
                    (seen.clone(), peak.clone(), active.clone(), next.clone(), script.clone());
                thread::spawn(move || {
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    handle(stream, &seen, &next, &script);
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
    }
    Stub { url, seen, peak }
}

fn handle(mut stream: TcpStream, seen: &Mutex<Seen>, next: &AtomicUsize, script: &[Reply]) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0;
    let mut auth = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        if lower.starts_with("authorization:") {
            auth = Some(line["authorization:".len()..].trim().to_string());
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    {
        let mut s = seen.lock().unwrap();
        s.bodies.push(String::from_utf8(body).unwrap());
        s.auth.push(auth);
    }
    let k = next.fetch_add(1, Ordering::SeqCst);
    let reply = script[k.min(script.len() - 1)].clone();
    thread::sleep(reply.delay);
    let payload = if reply.status == 200 {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": reply.content}}]})
            .to_string()
    } else {
        r#"{"error":"stub"}"#.to_string()
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        payload.len(),
        payload
    );
}

fn client(stub: &Stub, retries: u32, token_env: &str) -> LlmClient {
    LlmClient::new(LlmConfig {
        endpoint: stub.url.clone(),
        max_retries: retries,
        backoff_base_ms: 1,
        timeout_secs: 2.0,
        token_env: token_env.into(),
        ..LlmConfig::default()
    })
    .unwrap()
}

#[test]
fn passes_reply_through_with_bearer_token() {
    let stub = serve(vec![ok("I play (7,8).")]);
    std::env::set_var("GOMOKU_STUB_TOKEN_A", "secret-a");
    let reply = client(&stub, 0, "GOMOKU_STUB_TOKEN_A").complete("where to move?").unwrap();
    assert_eq!(reply, "I play (7,8).");
    let seen = stub.seen.lock().unwrap();
    assert_eq!(seen.bodies.len(), 1);
    let body: serde_json::Value = serde_json::from_str(&seen.bodies[0]).unwrap();
    assert_eq!(body["messages"][0]["content"], "where to move?");
    assert_eq!(body["model"], "deepseek-chat");
    assert_eq!(seen.auth[0].as_deref(), Some("Bearer secret-a"));
}

#[test]
fn transient_failures_are_retried() {
    let stub = serve(vec![status(500), status(429), ok("fine")]);
    let reply = client(&stub, 3, "GOMOKU_STUB_TOKEN_UNSET").complete("x").unwrap();
    assert_eq!(reply, "fine");
    let seen = stub.seen.lock().unwrap();
    assert_eq!(seen.bodies.len(), 3);
    assert_eq!(seen.auth[0], None);
}

#[test]
fn persistent_rate_limit_exhausts_retries() {
    let stub = serve(vec![status(429)]);
    let err = client(&stub, 2, "GOMOKU_STUB_TOKEN_UNSET").complete("x").unwrap_err();
    match err {
        LlmError::RetriesExhausted { attempts, last } => {
            assert_eq!(attempts, 3);
            assert!(matches!(*last, LlmError::RateLimited));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(stub.seen.lock().unwrap().bodies.len(), 3);
}

#[test]
fn auth_failure_is_not_retried() {
    let stub = serve(vec![status(401)]);
    let err = client(&stub, 3, "GOMOKU_STUB_TOKEN_UNSET").complete("x").unwrap_err();
    assert!(matches!(err, LlmError::AuthError(401)));
    assert_eq!(stub.seen.lock().unwrap().bodies.len(), 1);
}

#[test]
fn slow_server_times_out() {
    let stub = serve(vec![Reply {
        delay: Duration::from_millis(800),
        ..ok("late")
    }]);
    let c = LlmClient::new(LlmConfig {
        endpoint: stub.url.clone(),
        max_retries: 1,
        backoff_base_ms: 1,
        timeout_secs: 0.2,
        ..LlmConfig::default()
    })
    .unwrap();
    match c.complete("x").unwrap_err() {
        LlmError::RetriesExhausted { attempts: 2, last } => assert!(matches!(*last, LlmError::Timeout)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn in_flight_requests_are_bounded() {
    let stub = serve(vec![Reply {
        delay: Duration::from_millis(80),
        ..ok("ok")
    }]);
    let c = Arc::new(
        LlmClient::new(LlmConfig {
            endpoint: stub.url.clone(),
            max_in_flight: 2,
            ..LlmConfig::default()
        })
        .unwrap(),
    );
    let handles: Vec<_> = (0..6)
        .map(|_| {
            let c = c.clone();
            thread::spawn(move || c.complete("x").unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), "ok");
    }
    let peak = stub.peak.load(Ordering::SeqCst);
    assert!((1..=2).contains(&peak), "peak {peak}");
}

#[test]
fn backend_parses_model_replies() {
    let stub = serve(vec![
        ok("Considering the threat, the best point is (3, 4)."),
        ok("Score: 87"),
        ok("Black 30%, White 70%"),
    ]);
    let backend = LlmBackend::new(client(&stub, 0, "GOMOKU_STUB_TOKEN_UNSET"));
    let board = Board::new(15).unwrap().apply_move(Position::new(7, 7), Player::Black).unwrap();
    let pos = backend.propose_move(&MoveRequest::unguided(&board, Player::White)).unwrap();
    assert_eq!(pos, Position::new(3, 4));
    let score = backend.score_position(&board, Position::new(7, 8), Player::White).unwrap();
    assert_eq!(score.value(), 87.0);
    let rates = backend.estimate_win_rates(&board, Player::White).unwrap();
    assert!((rates.p_mover() - 0.7).abs() < 1e-9);
    let prompt: serde_json::Value = serde_json::from_str(&stub.seen.lock().unwrap().bodies[0]).unwrap();
    assert!(prompt["messages"][0]["content"].as_str().unwrap().contains("general-play"));
}
