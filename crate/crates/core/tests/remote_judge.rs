//! The remote judge against a local stand-in for a chat-completions endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use hir_core::constraints::{Judge, VerdictSource, SOFT_KEYS};
use hir_core::harness::judge::{RemoteJudge, RemoteJudgeConfig};
use hir_core::instructions::TaskSpec;
use hir_core::HirError;

/// Serves `replies` in order (the last one repeats) as `(status, body)`; returns the endpoint
/// URL, a request counter and the received request bodies.
fn serve(
    replies: Vec<(u16, String)>,
) -> (String, Arc<AtomicUsize>, Arc<std::sync::Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let count = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(std::sync::Mutex::new(Vec::new()));
    let (c, b) = (count.clone(), bodies.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            b.lock()
                .unwrap()
                .push(String::from_utf8_lossy(&body).into_owned());
            let n = c.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = &replies[n.min(replies.len() - 1)];
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    (url, count, bodies)
}

fn chat(content: &str) -> (u16, String) {
    (
        200,
        serde_json::json!({"choices": [{"message": {"content": content}}]}).to_string(),
    )
}

fn judge(url: &str, relaxed: bool, retries: u32) -> RemoteJudge {
    let config = RemoteJudgeConfig {
        endpoint: url.to_string(),
        retries,
        timeout_secs: 5,
        relaxed,
        ..RemoteJudgeConfig::default()
    };
    RemoteJudge::with_key(config, TaskSpec::tiny().vocab, Some("secret".into())).unwrap()
}

#[test]
fn yes_and_no_replies() {
    let (url, count, bodies) = serve(vec![chat("YES"), chat(" no \n")]);
    let j = judge(&url, false, 0);
    assert!(j.judge_text("in", "out", "crit").unwrap());
    assert!(!j.judge_text("in", "out", "crit").unwrap());
    assert_eq!(count.load(Ordering::SeqCst), 2);
    let body: serde_json::Value = serde_json::from_str(&bodies.lock().unwrap()[0]).unwrap();
    let prompt = body["messages"][0]["content"].as_str().unwrap();
    assert!(prompt.contains("Criteria Item:\ncrit"));
    assert_eq!(body["temperature"], 0);
}

#[test]
fn strict_and_relaxed_parsing_of_chatty_replies() {
    let (url, _, _) = serve(vec![chat("Yes.")]);
    assert!(matches!(
        judge(&url, false, 0).judge_text("a", "b", "c"),
        Err(HirError::JudgeParseError(_))
    ));
    assert!(judge(&url, true, 0).judge_text("a", "b", "c").unwrap());
}

#[test]
fn server_errors_are_retried_then_reported() {
    let (url, count, _) = serve(vec![(503, "{}".into())]);
    assert!(matches!(
        judge(&url, false, 2).judge_text("a", "b", "c"),
        Err(HirError::JudgeUnavailable(_))
    ));
    assert_eq!(count.load(Ordering::SeqCst), 3);

    let (url, count, _) = serve(vec![(500, "{}".into()), chat("NO")]);
    assert!(!judge(&url, false, 1).judge_text("a", "b", "c").unwrap());
    assert_eq!(count.load(Ordering::SeqCst), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, count, _) = serve(vec![(401, "{}".into())]);
    assert!(matches!(
        judge(&url, false, 3).judge_text("a", "b", "c"),
        Err(HirError::JudgeUnavailable(_))
    ));
    assert_eq!(count.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_bodies_are_parse_errors() {
    let (url, _, _) = serve(vec![(200, "not json".into())]);
    assert!(matches!(
        judge(&url, false, 0).judge_text("a", "b", "c"),
        Err(HirError::JudgeParseError(_))
    ));
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    assert!(matches!(
        judge(&url, false, 1).judge_text("a", "b", "c"),
        Err(HirError::JudgeUnavailable(_))
    ));
}

#[test]
fn only_soft_keys_are_judged() {
    let (url, _, _) = serve(vec![chat("YES")]);
    let j = judge(&url, false, 0);
    assert!(matches!(
        j.judge("no-such-key", &[2], &[3]),
        Err(HirError::UnknownJudgeKey(_))
    ));
    let v = j.judge(SOFT_KEYS[0].0, &[2], &[3]).unwrap();
    assert!(v.satisfied);
    assert_eq!(v.source, VerdictSource::RemoteJudge);
}
