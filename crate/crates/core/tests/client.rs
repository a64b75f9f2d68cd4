use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use proptest::prelude::*;
use radstyle::llm::mock::{completion_body, ScriptedTransport};
use radstyle::llm::{AuthScheme, ClientConfig, HttpTransport, LlmClient, LlmError, RawResponse, TransportFailure, WireRequest};
use radstyle::prompt::{build_prompt, select_examples, PromptChain, PromptStyle, Role, StylePair, INSTRUCTION, SYSTEM_PROMPT};
use tokio::time::Instant;

fn pool(n: usize) -> Vec<StylePair> {
    (0..n).map(|i| StylePair::new(format!("ser {i}"), format!("Report number {i}."))).collect()
}

fn chain(tag: &str) -> PromptChain {
    build_prompt(&pool(1), tag).unwrap()
}

fn client(t: Arc<ScriptedTransport>, cfg: ClientConfig) -> LlmClient {
    LlmClient::new(t, cfg).unwrap()
}

fn ok(content: &str) -> Result<RawResponse, TransportFailure> {
    Ok(RawResponse::new(200, completion_body(content)))
}

fn status(code: u16) -> Result<RawResponse, TransportFailure> {
    Ok(RawResponse::new(code, "{}"))
}

proptest! {
    #[test]
    fn chain_structure_for_any_k(k in 0usize..12, seed in any::<u64>()) {
        let examples = select_examples(&pool(12), k, seed).unwrap();
        let c = build_prompt(&examples, "lungs clear").unwrap();
        prop_assert_eq!(c.messages().len(), 2 + 2 * k);
        prop_assert_eq!(c.messages()[0].role, Role::System);
        prop_assert_eq!(&c.messages()[0].content, SYSTEM_PROMPT);
        for (i, m) in c.messages().iter().enumerate().skip(1) {
            prop_assert_eq!(m.role, if i % 2 == 1 { Role::User } else { Role::Assistant });
        }
        prop_assert_eq!(c.last_user_content(), format!("{INSTRUCTION}\nlungs clear"));
        prop_assert_eq!(examples, select_examples(&pool(12), k, seed).unwrap());
    }

    #[test]
    fn wire_request_round_trips(k in 0usize..6, seed in any::<u64>()) {
        let c = build_prompt(&select_examples(&pool(8), k, seed).unwrap(), "no effusion").unwrap();
        let req = WireRequest::new(&c, &ClientConfig::default());
        let json = serde_json::to_string(&req).unwrap();
        let back: WireRequest = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &req);
        let rebuilt = PromptChain::from_messages(back.messages, PromptStyle::Template).unwrap();
        prop_assert_eq!(rebuilt, c);
    }
}

#[test]
fn select_examples_rejects_small_pool() {
    assert!(select_examples(&pool(3), 5, 1).is_err());
    assert!(select_examples(&[], 0, 1).unwrap().is_empty());
}

#[test]
fn wire_request_shape() {
    let req = WireRequest::new(&chain("x"), &ClientConfig::default());
    let v = serde_json::to_value(&req).unwrap();
    assert_eq!(v["model"], "gpt-3.5-turbo");
    assert_eq!(v["temperature"], 0.0);
    assert_eq!(v["messages"][0]["role"], "system");
    assert_eq!(v["messages"][2]["role"], "assistant");
}

#[tokio::test(start_paused = true)]
async fn retries_rate_limits_then_succeeds() {
    let t = Arc::new(ScriptedTransport::new([status(429), status(429)], ok("done")));
    let res = client(t.clone(), ClientConfig::default()).complete(&chain("a")).await.unwrap();
    assert_eq!(res.text, "done");
    assert_eq!(res.attempts, 3);
    assert_eq!(t.request_count(), 3);
    // Two backoffs of nominal 1 s and 2 s, each with at most 50% jitter.
    assert!(res.latency >= Duration::from_secs(3) && res.latency < Duration::from_secs_f64(4.5), "{:?}", res.latency);
}

#[tokio::test(start_paused = true)]
async fn unauthorized_is_not_retried() {
    let t = Arc::new(ScriptedTransport::new([status(401)], ok("never")));
    let err = client(t.clone(), ClientConfig::default()).complete(&chain("a")).await.unwrap_err();
    assert!(matches!(err, LlmError::Request { status: 401, .. }), "{err:?}");
    assert_eq!(t.request_count(), 1);
}

#[tokio::test(start_paused = true)]
async fn retries_are_bounded() {
    for max_retries in 0..5 {
        let t = Arc::new(ScriptedTransport::new([], Err(TransportFailure("connection reset".into()))));
        let cfg = ClientConfig { max_retries, ..ClientConfig::default() };
        let err = client(t.clone(), cfg).complete(&chain("a")).await.unwrap_err();
        assert_eq!(err, LlmError::Transport { attempts: max_retries + 1, message: "connection reset".into() });
        assert_eq!(t.request_count() as u32, max_retries + 1);
    }
    let t = Arc::new(ScriptedTransport::new([], status(503)));
    let err = client(t.clone(), ClientConfig::default()).complete(&chain("a")).await.unwrap_err();
    assert!(matches!(err, LlmError::Transport { attempts: 4, .. }));
}

#[tokio::test(start_paused = true)]
async fn slow_transport_times_out() {
    let t = Arc::new(ScriptedTransport::fixed("late").with_delay(Duration::from_secs(5)));
    let cfg = ClientConfig { timeout_secs: 1.0, max_retries: 1, ..ClientConfig::default() };
    let err = client(t, cfg).complete(&chain("a")).await.unwrap_err();
    assert!(matches!(err, LlmError::Transport { attempts: 2, .. }), "{err:?}");
}

#[tokio::test(start_paused = true)]
async fn malformed_body_is_protocol_error() {
    let t = Arc::new(ScriptedTransport::new([], Ok(RawResponse::new(200, r#"{"choices": []}"#))));
    let err = client(t, ClientConfig::default()).complete(&chain("a")).await.unwrap_err();
    assert!(matches!(err, LlmError::Protocol(_)));
}

#[tokio::test(start_paused = true)]
async fn batch_keeps_order_and_isolates_failures() {
    let mut script = Vec::new();
    for i in 0..10 {
        script.push(if i == 4 { status(400) } else { ok(&format!("reply {i}")) });
    }
    let t = Arc::new(ScriptedTransport::new(script, status(500)));
    let chains: Vec<PromptChain> = (0..10).map(|i| chain(&format!("item {i}"))).collect();
    // Parallelism 1 so the scripted replies line up with the inputs.
    let results = client(t, ClientConfig::default()).complete_batch(&chains, 1).await;
    assert_eq!(results.len(), 10);
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 9);
    assert!(matches!(results[4], Err(LlmError::Request { status: 400, .. })));
    for (i, r) in results.iter().enumerate().filter(|(i, _)| *i != 4) {
        assert_eq!(r.as_ref().unwrap().text, format!("reply {i}"));
    }
}

#[tokio::test(start_paused = true)]
async fn batch_order_holds_under_concurrency() {
    let mut replies = std::collections::HashMap::new();
    let chains: Vec<PromptChain> = (0..12).map(|i| chain(&format!("item {i}"))).collect();
    for (i, c) in chains.iter().enumerate() {
        replies.insert(c.last_user_content().to_string(), format!("reply {i}"));
    }
    let t = Arc::new(radstyle::llm::mock::LookupTransport::new(replies).with_delay(Duration::from_millis(50)));
    let c = LlmClient::new(t, ClientConfig::default()).unwrap();
    let results = c.complete_batch(&chains, 5).await;
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r.as_ref().unwrap().text, format!("reply {i}"));
    }
}

#[tokio::test(start_paused = true)]
async fn parallelism_bounds_wall_time() {
    let chains: Vec<PromptChain> = (0..8).map(|i| chain(&format!("item {i}"))).collect();
    let mut elapsed = Vec::new();
    for p in [1, 4] {
        let t = Arc::new(ScriptedTransport::fixed("ok").with_delay(Duration::from_millis(100)));
        let started = Instant::now();
        let results = client(t, ClientConfig::default()).complete_batch(&chains, p).await;
        assert!(results.iter().all(Result::is_ok));
        elapsed.push(started.elapsed());
    }
    assert_eq!(elapsed[0], Duration::from_millis(800));
    assert_eq!(elapsed[1], Duration::from_millis(200));
}

#[test]
fn invalid_config_rejected() {
    let t = Arc::new(ScriptedTransport::fixed("x"));
    assert!(LlmClient::new(t.clone(), ClientConfig { max_tokens: 0, ..ClientConfig::default() }).is_err());
    assert!(LlmClient::new(t, ClientConfig { temperature: -1.0, ..ClientConfig::default() }).is_err());
}

/// Serves `responses` in order to successive connections and returns the
/// raw request texts it received.
fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (code, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut content_length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut payload = vec![0; content_length];
            reader.read_exact(&mut payload).unwrap();
            head.push_str(&String::from_utf8(payload).unwrap());
            seen.push(head);
            let reply = format!(
                "HTTP/1.1 {code} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
        seen
    });
    (format!("http://{addr}/v1/chat/completions"), handle)
}

#[derive(Clone, Default)]
struct Captured(Arc<Mutex<Vec<u8>>>);

impl Write for Captured {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[tokio::test]
async fn http_transport_sends_key_but_never_logs_it() {
    const SECRET: &str = "sk-test-0123456789abcdef";
    std::env::set_var("RADSTYLE_TEST_SCRUB_KEY", SECRET);
    let logs = Captured::default();
    let sink = logs.clone();
    let subscriber = tracing_subscriber::fmt()
        .with_max_level(tracing::Level::TRACE)
        .with_writer(move || sink.clone())
        .finish();
    let _guard = tracing::subscriber::set_default(subscriber);

    let (endpoint, server) = serve(vec![
        (500, "upstream exploded".into()),
        (200, completion_body("Lungs are clear.")),
        (200, completion_body("ok")),
    ]);
    let cfg = ClientConfig {
        endpoint: endpoint.clone(),
        api_key_env: "RADSTYLE_TEST_SCRUB_KEY".into(),
        backoff_base_secs: 0.01,
        ..ClientConfig::default()
    };
    let c = LlmClient::new(Arc::new(HttpTransport::new()), cfg.clone()).unwrap();
    let res = c.complete(&chain("lungs clear")).await.unwrap();
    assert_eq!(res.text, "Lungs are clear.");
    assert_eq!(res.attempts, 2);

    let api_key_cfg = ClientConfig { auth: AuthScheme::ApiKey, auth_header: "api-key".into(), ..cfg };
    let c = LlmClient::new(Arc::new(HttpTransport::new()), api_key_cfg).unwrap();
    c.complete(&chain("x")).await.unwrap();

    let requests = server.join().unwrap();
    assert!(requests[0].to_ascii_lowercase().contains(&format!("authorization: bearer {SECRET}").to_ascii_lowercase()));
    assert!(requests[2].to_ascii_lowercase().contains(&format!("api-key: {SECRET}")));
    assert!(requests[0].contains(SYSTEM_PROMPT));

    let text = String::from_utf8(logs.0.lock().unwrap().clone()).unwrap();
    assert!(text.contains("retrying"), "expected retry log, got:\n{text}");
    assert!(!text.contains(SECRET), "secret leaked into logs:\n{text}");
    assert!(!format!("{:?}", ClientConfig::default()).contains("sk-"));
}

#[tokio::test]
async fn unreachable_endpoint_is_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let cfg = ClientConfig {
        endpoint: format!("http://{addr}/v1/chat/completions"),
        max_retries: 1,
        backoff_base_secs: 0.0,
        ..ClientConfig::default()
    };
    let err = LlmClient::new(Arc::new(HttpTransport::new()), cfg).unwrap().complete(&chain("x")).await.unwrap_err();
    assert!(matches!(err, LlmError::Transport { attempts: 2, .. }), "{err:?}");
}
