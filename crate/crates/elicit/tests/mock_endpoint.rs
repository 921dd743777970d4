//! End-to-end elicitation against a local chat-completion endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use persona_elicit::{
    elicit_modes, elicit_tensor, manifest_path, ApiConfig, Cache, ElicitConfig, ElicitError,
    HttpTransport, Manifest, PersonaProfile, QuestionSpec,
};

/// Serves `reply(body)` as the assistant message for every request, or a 500
/// when it returns `None`.
struct MockServer {
    url: String,
    requests: Arc<AtomicUsize>,
}

impl MockServer {
    fn start(reply: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let counter = requests.clone();
        let reply = Arc::new(reply);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let counter = counter.clone();
                let reply = reply.clone();
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut length = 0usize;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let line = line.trim_end();
                        if line.is_empty() {
                            break;
                        }
                        if let Some((name, value)) = line.split_once(':') {
                            if name.eq_ignore_ascii_case("content-length") {
                                length = value.trim().parse().unwrap();
                            }
                        }
                    }
                    let mut body = vec![0; length];
                    reader.read_exact(&mut body).unwrap();
                    counter.fetch_add(1, Ordering::SeqCst);
                    let response = match reply(&String::from_utf8_lossy(&body)) {
                        Some(content) => {
                            let json = serde_json::json!({
                                "choices": [{"message": {"role": "assistant", "content": content}}]
                            })
                            .to_string();
                            format!(
                                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{json}",
                                json.len()
                            )
                        }
                        None => "HTTP/1.1 500 Internal Server Error\r\nContent-Length: 0\r\nConnection: close\r\n\r\n".into(),
                    };
                    let _ = stream.write_all(response.as_bytes());
                });
            }
        });
        Self { url, requests }
    }

    fn transport(&self) -> HttpTransport {
        HttpTransport::new(ApiConfig {
            base_url: self.url.clone(),
            model: "mock".into(),
            token_env: "PERSONA_ELICIT_MOCK_TOKEN".into(),
            require_token: false,
            timeout_secs: 10,
            ..ApiConfig::default()
        })
        .unwrap()
    }

    fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

fn inputs(n: usize, m: usize) -> (Vec<PersonaProfile>, Vec<QuestionSpec>) {
    let personas = (0..n)
        .map(|i| PersonaProfile {
            persona_id: format!("p{i}"),
            profile_text: format!("Persona number {i}."),
        })
        .collect();
    let questions = (0..m)
        .map(|j| QuestionSpec {
            question_id: format!("q{j}"),
            question_text: format!("Question number {j}?"),
            n_categories: 4,
            labels: vec![],
        })
        .collect();
    (personas, questions)
}

fn fast(retries: usize) -> ElicitConfig {
    ElicitConfig {
        retries,
        backoff_ms: 1,
        concurrency: 3,
        ..ElicitConfig::default()
    }
}

#[test]
fn fixed_reply_fills_every_row_and_a_warm_cache_needs_no_calls() {
    let server = MockServer::start(|_| Some("[0.7,0.1,0.1,0.1]".into()));
    let dir = tempfile::tempdir().unwrap();
    let (personas, questions) = inputs(3, 5);
    let transport = server.transport();

    let mut cache = Cache::open(dir.path()).unwrap();
    let first = elicit_tensor::<f64>(
        &personas,
        &questions,
        &transport,
        "mock",
        &mut cache,
        &fast(3),
    )
    .unwrap();
    assert_eq!(server.requests(), 15);
    assert_eq!(first.stats.network_calls, 15);
    for p in 0..3 {
        for q in 0..5 {
            assert_eq!(first.bundle.tensor.row(p, q), &[0.7, 0.1, 0.1, 0.1]);
        }
    }

    let mut reopened = Cache::open(dir.path()).unwrap();
    let second = elicit_tensor::<f64>(
        &personas,
        &questions,
        &transport,
        "mock",
        &mut reopened,
        &fast(3),
    )
    .unwrap();
    assert_eq!(second.stats.network_calls, 0);
    assert_eq!(server.requests(), 15);
    assert_eq!(second.bundle, first.bundle);
    assert_eq!(second.bundle.hash(), first.bundle.hash());
}

#[test]
fn exhausted_pair_aborts_with_a_resumable_manifest() {
    let server = MockServer::start(|body| {
        (!body.contains("Persona number 1.") || !body.contains("Question number 2?"))
            .then(|| "[0.25,0.25,0.25,0.25]".into())
    });
    let dir = tempfile::tempdir().unwrap();
    let (personas, questions) = inputs(3, 4);
    let mut cache = Cache::open(dir.path()).unwrap();
    let err = elicit_tensor::<f64>(
        &personas,
        &questions,
        &server.transport(),
        "mock",
        &mut cache,
        &fast(0),
    )
    .unwrap_err();
    assert!(
        matches!(
            err,
            ElicitError::Exhausted {
                failed: 1,
                total: 12,
                ..
            }
        ),
        "{err}"
    );
    let manifest: Manifest = serde_json::from_str(
        &std::fs::read_to_string(manifest_path(
            dir.path(),
            persona_elicit::PromptKind::Distribution,
        ))
        .unwrap(),
    )
    .unwrap();
    assert_eq!(manifest.completed.len(), 3 * 4 - 1);
    assert_eq!(manifest.failed.len(), 1);
    assert_eq!(manifest.failed[0].pair.persona_id, "p1");
    assert_eq!(manifest.failed[0].pair.question_id, "q2");

    // Resuming against a healthy endpoint only requests the missing pair.
    let healthy = MockServer::start(|_| Some("[0.25,0.25,0.25,0.25]".into()));
    let mut cache = Cache::open(dir.path()).unwrap();
    let out = elicit_tensor::<f64>(
        &personas,
        &questions,
        &healthy.transport(),
        "mock",
        &mut cache,
        &fast(0),
    )
    .unwrap();
    assert_eq!(out.stats.network_calls, 1);
    assert_eq!(out.stats.cache_hits, 11);
}

#[test]
fn transient_failures_are_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let server = MockServer::start(move |_| {
        (seen.fetch_add(1, Ordering::SeqCst) % 2 == 1).then(|| "[0.4,0.3,0.2,0.1]".into())
    });
    let dir = tempfile::tempdir().unwrap();
    let (personas, questions) = inputs(1, 1);
    let mut cache = Cache::open(dir.path()).unwrap();
    let out = elicit_tensor::<f64>(
        &personas,
        &questions,
        &server.transport(),
        "mock",
        &mut cache,
        &fast(3),
    )
    .unwrap();
    assert_eq!(out.stats.network_calls, 2);
    assert_eq!(out.bundle.tensor.row(0, 0), &[0.4, 0.3, 0.2, 0.1]);
}

#[test]
fn mode_reply_is_zero_based() {
    let server = MockServer::start(|_| Some("3".into()));
    let dir = tempfile::tempdir().unwrap();
    let (personas, questions) = inputs(2, 2);
    let mut cache = Cache::open(dir.path()).unwrap();
    let out = elicit_modes(
        &personas,
        &questions,
        &server.transport(),
        "mock",
        &mut cache,
        &fast(0),
    )
    .unwrap();
    assert_eq!(out.modes.modes, vec![2, 2, 2, 2]);

    let mut reopened = Cache::open(dir.path()).unwrap();
    let again = elicit_modes(
        &personas,
        &questions,
        &server.transport(),
        "mock",
        &mut reopened,
        &fast(0),
    )
    .unwrap();
    assert_eq!(again.stats.network_calls, 0);
    assert_eq!(again.modes, out.modes);
}
