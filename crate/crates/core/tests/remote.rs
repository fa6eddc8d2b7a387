mod common;

use std::time::Duration;

use common::{model_info, text, FakeServer, Reply};
use cultalign::respondents::{
    build_instruction, RemoteEndpointConfig, RemoteRespondent, Respondent, RespondentError, Secret,
};
use cultalign::vsm::SurveyQuestion;
use cultalign::SoftPrompt;

fn client(url: &str, retries: u32) -> RemoteRespondent {
    RemoteRespondent::new(RemoteEndpointConfig {
        max_retries: retries,
        timeout: Duration::from_millis(300),
        backoff_base: Duration::from_millis(5),
        ..RemoteEndpointConfig::new(url, "fake")
    })
}

fn prompt(dim: usize) -> SoftPrompt {
    SoftPrompt::from_fn(2, dim, |t, d| (t * dim + d) as f32 * 0.5)
}

fn question() -> SurveyQuestion {
    SurveyQuestion::new(3, "Which do you prefer: 1: restraint 2: indulgence.")
}

fn answering(reply: &'static str, dim: usize) -> FakeServer {
    FakeServer::start(move |req, _| match req.path.as_str() {
        "/v1/model-info" => model_info(dim),
        _ => text(reply),
    })
}

#[test]
fn parses_numerical_answer() {
    let server = answering("Numerical Answer: 4", 4);
    let r = client(&server.url, 0);
    let got = r.answer(&prompt(4), &build_instruction("persona"), &question()).unwrap();
    assert_eq!(got, 4.0);
}

#[test]
fn parses_open_ended_reply() {
    let server = answering("1. As a citizen of Saudi Arabia, I prefer restraint because...", 4);
    let r = client(&server.url, 0);
    assert_eq!(r.answer(&prompt(4), &build_instruction(""), &question()).unwrap(), 1.0);
}

#[test]
fn sends_the_wire_request() {
    let server = answering("3", 4);
    let mut cfg = RemoteEndpointConfig::new(server.url.clone(), "llama");
    cfg.auth_token = Some(Secret::new("tok-123"));
    cfg.max_new_tokens = 9;
    let r = RemoteRespondent::new(cfg);
    let v = prompt(4);
    let instr = build_instruction("Answer as a citizen of China.");
    r.answer(&v, &instr, &question()).unwrap();

    let reqs = server.requests();
    assert_eq!(reqs[0].method, "GET");
    assert_eq!(reqs[0].path, "/v1/model-info");
    let post = &server.completions()[0];
    assert_eq!(post.method, "POST");
    assert_eq!(post.headers.get("authorization").map(String::as_str), Some("Bearer tok-123"));
    let body = post.json();
    assert_eq!(body["model"], "llama");
    assert_eq!(body["instruction"], instr.system_text.as_str());
    assert_eq!(body["question"], question().text.as_str());
    assert_eq!(body["max_new_tokens"], 9);
    assert_eq!(body["temperature"], 0.0);
    let rows = body["virtual_tokens"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for (t, row) in rows.iter().enumerate() {
        let row: Vec<f32> = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap() as f32).collect();
        assert_eq!(row.as_slice(), v.row(t));
    }
}

#[test]
fn handshake_happens_once() {
    let server = answering("2", 4);
    let r = client(&server.url, 0);
    for _ in 0..3 {
        r.answer(&prompt(4), &build_instruction(""), &question()).unwrap();
    }
    let handshakes = server.requests().iter().filter(|q| q.path == "/v1/model-info").count();
    assert_eq!(handshakes, 1);
}

#[test]
fn empty_prompt_skips_handshake_and_sends_no_tokens() {
    let server = answering("5", 4);
    let r = client(&server.url, 0);
    assert_eq!(r.answer(&SoftPrompt::empty(), &build_instruction(""), &question()).unwrap(), 5.0);
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].json()["virtual_tokens"], serde_json::json!([]));
}

#[test]
fn retries_after_timeouts() {
    let server = FakeServer::start(|req, seen| match (req.path.as_str(), seen) {
        ("/v1/model-info", _) => model_info(4),
        (_, 0 | 1) => Reply::Delayed(Duration::from_millis(1500), Box::new(text("5"))),
        _ => text("2"),
    });
    let r = client(&server.url, 3);
    let got = r.answer(&prompt(4), &build_instruction(""), &question()).unwrap();
    assert_eq!(got, 2.0);
    assert_eq!(server.completions().len(), 3);
}

#[test]
fn retries_server_errors_but_not_client_errors() {
    let server = FakeServer::start(|req, seen| match (req.path.as_str(), seen) {
        ("/v1/model-info", _) => model_info(4),
        (_, 0) => Reply::Json(503, serde_json::json!({"error": "warming up"})),
        (_, 1) => Reply::Json(429, serde_json::json!({"error": "slow down"})),
        (_, 2) => Reply::Hangup,
        _ => text("4"),
    });
    let r = client(&server.url, 3);
    assert_eq!(r.answer(&prompt(4), &build_instruction(""), &question()).unwrap(), 4.0);

    let bad = FakeServer::start(|req, _| match req.path.as_str() {
        "/v1/model-info" => model_info(4),
        _ => Reply::Json(400, serde_json::json!({"error": "bad tokens"})),
    });
    let r = client(&bad.url, 3);
    match r.answer(&prompt(4), &build_instruction(""), &question()) {
        Err(RespondentError::HttpStatus { status, message }) => {
            assert_eq!(status, 400);
            assert_eq!(message, "bad tokens");
        }
        other => panic!("expected HttpStatus, got {other:?}"),
    }
    assert_eq!(bad.completions().len(), 1);
}

#[test]
fn request_count_is_capped() {
    for retries in [0u32, 1, 3] {
        let server = FakeServer::start(|req, _| match req.path.as_str() {
            "/v1/model-info" => model_info(4),
            _ => Reply::Json(500, serde_json::json!({"error": "down"})),
        });
        let r = client(&server.url, retries);
        let err = r.answer(&prompt(4), &build_instruction(""), &question()).unwrap_err();
        match err {
            RespondentError::Transport { attempts, .. } => assert_eq!(attempts, retries + 1),
            other => panic!("expected Transport, got {other:?}"),
        }
        assert_eq!(server.completions().len(), retries as usize + 1);
        // One handshake plus the completion attempts.
        assert_eq!(r.requests_sent(), retries as usize + 2);
    }
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let r = client(&format!("http://127.0.0.1:{port}"), 2);
    match r.answer(&prompt(4), &build_instruction(""), &question()) {
        Err(RespondentError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected Transport, got {other:?}"),
    }
    assert!(r.ping().is_err());
}

#[test]
fn dim_mismatch_is_reported() {
    let server = answering("3", 4096);
    let r = client(&server.url, 0);
    match r.answer(&prompt(8), &build_instruction(""), &question()) {
        Err(RespondentError::DimMismatch { served, prompt }) => {
            assert_eq!((served, prompt), (4096, 8));
        }
        other => panic!("expected DimMismatch, got {other:?}"),
    }
    assert!(server.completions().is_empty());
}

#[test]
fn unparseable_reply_is_typed() {
    let server = answering("Numerical Answer: Unclear", 4);
    let r = client(&server.url, 3);
    match r.answer(&prompt(4), &build_instruction(""), &question()) {
        Err(RespondentError::UnparseableAnswer { text }) => assert_eq!(text, "Numerical Answer: Unclear"),
        other => panic!("expected UnparseableAnswer, got {other:?}"),
    }
    // Parse failures are not transport failures; the client itself does not retry them.
    assert_eq!(server.completions().len(), 1);
}

#[test]
fn malformed_body_is_protocol_error() {
    let server = FakeServer::start(|req, _| match req.path.as_str() {
        "/v1/model-info" => model_info(4),
        _ => Reply::Json(200, serde_json::json!({"unexpected": true})),
    });
    let r = client(&server.url, 3);
    assert!(matches!(
        r.answer(&prompt(4), &build_instruction(""), &question()),
        Err(RespondentError::Protocol(_))
    ));
}

#[test]
fn in_flight_requests_are_bounded() {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    let current = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (c, p) = (current.clone(), peak.clone());
    let server = FakeServer::start(move |req, _| {
        if req.path == "/v1/model-info" {
            return model_info(4);
        }
        let now = c.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(40));
        c.fetch_sub(1, Ordering::SeqCst);
        text("3")
    });
    let r = RemoteRespondent::new(RemoteEndpointConfig {
        max_in_flight: 2,
        ..RemoteEndpointConfig::new(server.url.clone(), "fake")
    });
    std::thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| r.answer(&prompt(4), &build_instruction(""), &question()).unwrap());
        }
    });
    assert!(peak.load(Ordering::SeqCst) <= 2, "peak {}", peak.load(Ordering::SeqCst));
    assert_eq!(server.completions().len(), 8);
}

#[test]
fn temperature_controls_determinism() {
    let greedy = RemoteRespondent::new(RemoteEndpointConfig::new("http://x", "m"));
    assert!(greedy.is_deterministic());
    let sampled = RemoteRespondent::new(RemoteEndpointConfig {
        temperature: 0.7,
        ..RemoteEndpointConfig::new("http://x", "m")
    });
    assert!(!sampled.is_deterministic());
}
