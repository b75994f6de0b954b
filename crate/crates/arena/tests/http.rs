use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::{Duration, Instant};

use gomoku_arena::{serve, AppState, ArenaConfig, CreateSession};
use gomoku_core::catalog::Catalog;
use gomoku_core::engine::{Board, Player, Position};
use gomoku_core::evaluation::HeuristicBackend;
use gomoku_core::move_select::choose_move;
use gomoku_core::persistence::{load_checkpoint, Clock};
use gomoku_core::qlearn::TrainConfig;
use gomoku_core::selfplay::{run_selfplay, SelfPlayConfig};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

fn start(config: ArenaConfig) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            serve(listener, config).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn config_in(dir: &Path) -> ArenaConfig {
    ArenaConfig {
        store_path: dir.join("log.tsv"),
        checkpoint_path: dir.join("ckpt.bin"),
        workers: 2,
        ..ArenaConfig::default()
    }
}

fn post(c: &Client, url: &str, body: Value) -> (StatusCode, Value) {
    let r = c.post(url).json(&body).send().unwrap();
    (r.status(), r.json().unwrap())
}

fn get(c: &Client, url: &str) -> (StatusCode, Value) {
    let r = c.get(url).send().unwrap();
    (r.status(), r.json().unwrap())
}

fn new_session(c: &Client, base: &str, body: Value) -> String {
    let (status, v) = post(c, &format!("{base}/sessions"), body);
    assert_eq!(status, StatusCode::OK, "{v}");
    v["id"].as_str().unwrap().to_string()
}

#[test]
fn session_lifecycle_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config_in(dir.path()));
    let c = Client::new();

    let (status, v) = post(&c, &format!("{base}/sessions"), json!({"size": 15, "human": "black", "backend": "heuristic"}));
    assert_eq!(status, StatusCode::OK);
    assert!(v["cells"].as_array().unwrap().iter().all(|x| x == 0));
    assert_eq!(v["side_to_move"], "black");
    assert_eq!(v["status"]["state"], "in_progress");
    let id = v["id"].as_str().unwrap();

    let (status, v) = post(&c, &format!("{base}/sessions"), json!({"size": 4, "human": "black", "backend": "heuristic"}));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "bad_request");
    assert!(v["message"].as_str().unwrap().contains('4'));
    let (status, _) = post(&c, &format!("{base}/sessions"), json!({"backend": "oracle"}));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, v) = post(&c, &format!("{base}/sessions"), json!({"checkpoint": "/nonexistent/ckpt.bin"}));
    assert_eq!((status, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("checkpoint_error")));

    let moves = format!("{base}/sessions/{id}/moves");
    let (status, v) = post(&c, &moves, json!({"row": 7, "col": 7}));
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["cells"][7 * 15 + 7], 1);
    assert_eq!(v["side_to_move"], "white");

    let (status, v) = post(&c, &moves, json!({"row": 0, "col": 0}));
    assert_eq!((status, v["error"].as_str()), (StatusCode::CONFLICT, Some("not_your_turn")));

    let (status, ai) = post(&c, &format!("{base}/sessions/{id}/ai-move"), json!({}));
    assert_eq!(status, StatusCode::OK, "{ai}");
    let (status, again) = post(&c, &format!("{base}/sessions/{id}/ai-move"), json!({}));
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ai, again);

    let (status, v) = post(&c, &moves, json!({"row": 7, "col": 7}));
    assert_eq!((status, v["error"].as_str()), (StatusCode::CONFLICT, Some("occupied")));
    let (status, v) = post(&c, &moves, json!({"row": 15, "col": 2}));
    assert_eq!((status, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("out_of_bounds")));
    let (status, _) = post(&c, &moves, json!({"row": "x"}));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, v) = get(&c, &format!("{base}/sessions/{id}"));
    assert_eq!(v["moves"].as_array().unwrap().len(), 2);

    let (status, v) = get(&c, &format!("{base}/sessions/nope"));
    assert_eq!((status, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_session")));
}

#[test]
fn ai_moves_first_for_white_human_and_explains_itself() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config_in(dir.path()));
    let c = Client::new();
    let id = new_session(&c, &base, json!({"size": 15, "human": "white", "backend": "heuristic"}));
    let (_, v) = get(&c, &format!("{base}/sessions/{id}"));
    assert_eq!(v["side_to_move"], "black");
    assert!(v["moves"].as_array().unwrap().is_empty());

    // Four AI moves cannot yet make five.
    for turn in 0..4 {
        let (status, ai) = post(&c, &format!("{base}/sessions/{id}/ai-move"), json!({}));
        assert_eq!(status, StatusCode::OK, "{ai}");
        let ex = &ai["explanation"];
        let cands = ex["candidates"].as_array().unwrap();
        assert!(!cands.is_empty());
        assert_eq!(ex["chosen"], ai["position"]);
        assert_eq!(cands[0]["position"], ai["position"]);
        let scores: Vec<f64> = cands.iter().map(|c| c["score"].as_f64().unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        assert!(!ex["strategy"].as_str().unwrap().is_empty());
        assert_eq!(ai["session"]["moves"].as_array().unwrap().len(), 2 * turn + 1);
        // Human answers somewhere free.
        let cells = ai["session"]["cells"].as_array().unwrap();
        let free = cells.iter().position(|x| x == 0).unwrap();
        let (status, _) = post(&c, &format!("{base}/sessions/{id}/moves"), json!({"row": free / 15, "col": free % 15}));
        assert_eq!(status, StatusCode::OK);
    }
}

#[test]
fn human_five_finishes_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config_in(dir.path()));
    let c = Client::new();
    let id = new_session(&c, &base, json!({"size": 15, "human": "black", "backend": "random"}));
    let mut last = Value::Null;
    'rows: for row in 0..15 {
        for col in 0..5 {
            let (_, s) = get(&c, &format!("{base}/sessions/{id}"));
            if s["status"]["state"] != "in_progress" {
                break 'rows;
            }
            if s["cells"][row * 15 + col] == -1 {
                continue 'rows;
            }
            if s["cells"][row * 15 + col] == 1 {
                continue;
            }
            let (status, v) = post(&c, &format!("{base}/sessions/{id}/moves"), json!({"row": row, "col": col}));
            assert_eq!(status, StatusCode::OK, "{v}");
            last = v;
            if last["status"]["state"] != "in_progress" {
                break 'rows;
            }
            let (status, v) = post(&c, &format!("{base}/sessions/{id}/ai-move"), json!({}));
            assert_eq!(status, StatusCode::OK, "{v}");
        }
    }
    assert_eq!(last["status"]["state"], "won", "{last}");
    assert_eq!(last["status"]["winner"], "black");
    assert!(last["side_to_move"].is_null());
    let (status, v) = post(&c, &format!("{base}/sessions/{id}/moves"), json!({"row": 14, "col": 14}));
    assert_eq!((status, v["error"].as_str()), (StatusCode::CONFLICT, Some("session_finished")));
    let (status, v) = post(&c, &format!("{base}/sessions/{id}/ai-move"), json!({}));
    assert_eq!((status, v["error"].as_str()), (StatusCode::CONFLICT, Some("session_finished")));
}

#[test]
fn open_four_is_blocked_when_in_region() {
    // Black: open four on row 7, columns 5..8. White to move.
    let mut b = Board::new(15).unwrap();
    for (i, col) in (5..9).enumerate() {
        b = b.apply_move(Position::new(7, col), Player::Black).unwrap();
        b = b.apply_move(Position::new(0, 2 * i), Player::White).unwrap();
    }
    let b = b.undo().unwrap();
    assert_eq!(b.side_to_move(), Player::White);
    for candidate in [Position::new(7, 3), Position::new(6, 4), Position::new(8, 9), Position::new(7, 10)] {
        let (pos, scored) = choose_move(&b, candidate, &HeuristicBackend::default(), Player::White, 2).unwrap();
        assert!(pos == Position::new(7, 4) || pos == Position::new(7, 9), "{candidate} -> {pos}");
        assert_eq!(scored[0].position, pos);
    }
}

#[test]
fn replays_and_stats_come_from_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SelfPlayConfig {
        board_size: 9,
        workers: 2,
        clock: Clock::Logical,
        train: TrainConfig {
            hidden1: 16,
            hidden2: 16,
            batch_size: 8,
            ..TrainConfig::default()
        },
    };
    run_selfplay(3, &cfg, &Catalog::default_catalog(), &HeuristicBackend::default(), &dir.path().join("log.tsv"), &dir.path().join("ckpt.bin")).unwrap();
    let base = start(config_in(dir.path()));
    let c = Client::new();

    let (status, games) = get(&c, &format!("{base}/games"));
    assert_eq!(status, StatusCode::OK);
    let games = games.as_array().unwrap();
    assert_eq!(games.len(), 3);
    assert!(games.iter().all(|g| g["complete"] == true));

    for g in games {
        let id = g["game_id"].as_u64().unwrap();
        let (status, replay) = get(&c, &format!("{base}/games/{id}/replay"));
        assert_eq!(status, StatusCode::OK);
        let steps = replay["steps"].as_array().unwrap();
        assert_eq!(steps.len() as u64, g["moves"].as_u64().unwrap());
        let mut board = Board::new(9).unwrap();
        for s in steps {
            let p = Position::new(s["position"]["row"].as_u64().unwrap() as usize, s["position"]["col"].as_u64().unwrap() as usize);
            board = board.apply_move(p, board.side_to_move()).unwrap();
            assert!(!s["strategy"].as_str().unwrap().is_empty());
            assert!(!s["logic"].as_str().unwrap().is_empty());
        }
        assert!(board.status().is_over());
        assert_eq!(replay["winner"], json!(board.status().winner()));
    }
    let (status, v) = get(&c, &format!("{base}/games/99/replay"));
    assert_eq!((status, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_game")));

    let (status, stats) = get(&c, &format!("{base}/stats"));
    assert_eq!(status, StatusCode::OK);
    let cp = load_checkpoint(&dir.path().join("ckpt.bin")).unwrap();
    assert_eq!(stats["train_steps"].as_u64(), Some(cp.train_steps));
    assert_eq!(stats["games"], 3);
    assert_eq!(stats["last_checkpointed_game"], 2);
}

#[test]
fn empty_store_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config_in(dir.path()));
    let c = Client::new();
    let (status, v) = get(&c, &format!("{base}/games"));
    assert_eq!((status, v), (StatusCode::OK, json!([])));
    let (_, v) = get(&c, &format!("{base}/stats"));
    assert_eq!(v["records"], 0);
    assert!(v["train_steps"].is_null());
}

#[test]
fn event_stream_reports_moves() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(config_in(dir.path()));
    let c = Client::new();
    let id = new_session(&c, &base, json!({"human": "white"}));
    let stream = Client::builder()
        .timeout(Duration::from_secs(20))
        .build()
        .unwrap()
        .get(format!("{base}/sessions/{id}/events"))
        .send()
        .unwrap();
    assert_eq!(stream.status(), StatusCode::OK);
    let (status, _) = post(&c, &format!("{base}/sessions/{id}/ai-move"), json!({}));
    assert_eq!(status, StatusCode::OK);
    let mut names = Vec::new();
    for line in BufReader::new(stream).lines() {
        let line = line.unwrap();
        if let Some(name) = line.strip_prefix("event: ") {
            names.push(name.to_string());
            if name == "ai-moved" {
                break;
            }
        }
    }
    assert_eq!(names, ["ai-thinking", "move-applied", "ai-moved"]);
}

#[test]
fn idle_sessions_are_evicted() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::new(ArenaConfig {
        idle_timeout: Duration::from_secs(3600),
        ..config_in(dir.path())
    });
    for _ in 0..3 {
        state
            .create_session(CreateSession {
                size: Some(9),
                human: None,
                backend: None,
                checkpoint: None,
            })
            .unwrap();
    }
    assert_eq!(state.evict_idle(Instant::now()), 0);
    assert_eq!(state.evict_idle(Instant::now() + Duration::from_secs(3601)), 3);
    assert_eq!(state.session_count(), 0);
}
