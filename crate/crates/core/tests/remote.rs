mod common;

use std::time::Duration;

use common::{uniform_reply, FakeServer, Reply};
use discopath::backends::{BackendError, BackendErrorKind, MaskScorer, RemoteConfig, RemoteScorer, ScoreRequest};
use discopath::corpus::Instance;
use discopath::hierarchy::LabelHierarchy;
use discopath::prompting::{render, PromptTemplate};

fn request() -> ScoreRequest {
    let h = LabelHierarchy::pdtb2();
    let r = render(&PromptTemplate::discoprompt(), &Instance::implicit("i", "a", "b"), &h).unwrap();
    ScoreRequest::from_rendered(Some("i".into()), &r)
}

fn scorer(url: &str, retries: u32) -> RemoteScorer {
    let mut cfg = RemoteConfig::new(url);
    cfg.timeout_ms = 1000;
    cfg.retries = retries;
    cfg.backoff_base_ms = 1;
    cfg.backoff_max_ms = 5;
    RemoteScorer::new(cfg).unwrap()
}

#[test]
fn client_errors_are_not_retried() {
    let server = FakeServer::start(|_, _| Reply::Json(400, r#"{"error":"bad"}"#.into()));
    let err = scorer(&server.url, 3).score(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Http { status: 400, .. }), "{err:?}");
    assert_eq!(server.hits(), 1);
}

#[test]
fn persistent_server_errors_surface_status() {
    let server = FakeServer::start(|_, _| Reply::Json(500, "{}".into()));
    let err = scorer(&server.url, 2).score(&request()).unwrap_err();
    assert_eq!(err.kind(), BackendErrorKind::Http);
    assert_eq!(server.hits(), 3);
}

#[test]
fn malformed_and_wrong_version() {
    let server = FakeServer::start(|_, _| Reply::Json(200, "not json".into()));
    assert_eq!(scorer(&server.url, 0).score(&request()).unwrap_err().kind(), BackendErrorKind::Malformed);
    let server = FakeServer::start(|_, body| Reply::Json(200, uniform_reply(body, 1.0).replace("\"v\":1", "\"v\":2")));
    assert_eq!(scorer(&server.url, 0).score(&request()).unwrap_err().kind(), BackendErrorKind::Malformed);
}

#[test]
fn missing_role_in_response() {
    let server = FakeServer::start(|_, _| Reply::Json(200, r#"{"v":1,"probs":{"top":[0.25,0.25,0.25,0.25]}}"#.into()));
    let err = scorer(&server.url, 0).score(&request()).unwrap_err();
    assert!(matches!(err, BackendError::MissingRole(_)), "{err:?}");
}

#[test]
fn wire_request_reaches_server() {
    let server = FakeServer::start(|_, body| {
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["candidates"]["second"].as_array().unwrap().len(), 11);
        Reply::Json(200, uniform_reply(body, 1.0))
    });
    let resp = scorer(&server.url, 0).score(&request()).unwrap();
    assert_eq!(resp.probs.len(), 3);
}

#[test]
fn unreachable_endpoint_times_out_after_retries() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = scorer(&format!("http://127.0.0.1:{port}"), 1).score(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Timeout { attempts: 2, .. }), "{err:?}");
}

#[test]
fn backoff_is_bounded() {
    let mut cfg = RemoteConfig::new("http://x");
    cfg.backoff_base_ms = 100;
    cfg.backoff_max_ms = 300;
    for attempt in 1..10 {
        let d = cfg.backoff(attempt);
        assert!(d <= Duration::from_millis(300));
        assert!(d >= Duration::from_millis(50));
    }
}
