use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use lgsa_core::corpus::{Attribute, Example, Origin};
use lgsa_core::generation::{
    generate_batch, generate_candidates, read_archive, ArchiveRecord, ArchiveWriter, Backend, BackendError,
    FixedClock, GenerationError, GenerationParams, Generator, PromptTemplate, RemoteBackend, RetryPolicy,
};

fn example(id: &str, text: &str) -> Example {
    Example {
        id: id.into(),
        text: text.into(),
        attribute: Attribute::new("male"),
        label: 1,
        origin: Origin::Original,
        attribute_provenance: None,
        label_provenance: None,
    }
}

/// Fails the first `failures` calls with `error`, then echoes the sentence.
struct Flaky {
    failures: u32,
    error: BackendError,
    calls: AtomicU32,
    template: PromptTemplate,
}

impl Flaky {
    fn new(failures: u32, error: BackendError) -> Self {
        Flaky {
            failures,
            error,
            calls: AtomicU32::new(0),
            template: PromptTemplate::label_preserving(),
        }
    }
}

impl Backend for Flaky {
    fn id(&self) -> &str {
        "flaky"
    }

    fn complete(&self, prompt: &str, seed: u64, _: &GenerationParams) -> Result<String, BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) < self.failures {
            return Err(self.error.clone());
        }
        let (_, sentence) = self.template.parse(prompt).unwrap();
        Ok(format!("{sentence} [{seed}]"))
    }
}

fn generator<'a>(
    template: &'a PromptTemplate,
    backend: &'a dyn Backend,
    params: &'a GenerationParams,
    attempts: u32,
) -> Generator<'a> {
    Generator {
        template,
        backend,
        params,
        retry: RetryPolicy::no_delay(attempts),
        clock: &FixedClock(42),
        origin: Origin::Lgsa,
    }
}

#[test]
fn transient_failures_are_retried_and_archived() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("archive.jsonl");
    let template = PromptTemplate::label_preserving();
    let backend = Flaky::new(2, BackendError::Transport("reset".into()));
    let params = GenerationParams::with_seeds(vec![5]);
    let gen = generator(&template, &backend, &params, 3);
    let mut archive = ArchiveWriter::open(&path).unwrap();
    let out = generate_candidates(&example("e1", "He paid with cash."), &Attribute::new("female"), &gen, &mut archive)
        .unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].0.text, "He paid with cash. [5]");

    let records = read_archive(&path).unwrap();
    let kinds: Vec<&str> = records
        .iter()
        .map(|r| match r {
            ArchiveRecord::Failure(_) => "failure",
            ArchiveRecord::Generation(_) => "generation",
        })
        .collect();
    assert_eq!(kinds, ["failure", "failure", "generation"]);
    match &records[1] {
        ArchiveRecord::Failure(f) => assert_eq!(f.attempt, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn exhausted_retries_surface_the_last_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("archive.jsonl");
    let template = PromptTemplate::label_preserving();
    let backend = Flaky::new(10, BackendError::Transport("down".into()));
    let params = GenerationParams::with_seeds(vec![1]);
    let gen = generator(&template, &backend, &params, 3);
    let mut archive = ArchiveWriter::open(&path).unwrap();
    let err = generate_candidates(&example("e1", "He paid."), &Attribute::new("female"), &gen, &mut archive)
        .unwrap_err();
    assert!(matches!(err, GenerationError::Backend { attempts: 3, .. }), "{err}");
    assert_eq!(read_archive(&path).unwrap().len(), 3);
}

#[test]
fn rejections_are_not_retried() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("archive.jsonl");
    let template = PromptTemplate::label_preserving();
    let backend = Flaky::new(1, BackendError::Rejected("bad prompt".into()));
    let params = GenerationParams::with_seeds(vec![1]);
    let gen = generator(&template, &backend, &params, 5);
    let mut archive = ArchiveWriter::open(&path).unwrap();
    let err = generate_candidates(&example("e1", "He paid."), &Attribute::new("female"), &gen, &mut archive)
        .unwrap_err();
    assert!(matches!(err, GenerationError::Backend { attempts: 1, .. }));
    assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn same_attribute_target_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let template = PromptTemplate::label_preserving();
    let backend = Flaky::new(0, BackendError::Transport(String::new()));
    let params = GenerationParams::default();
    let gen = generator(&template, &backend, &params, 1);
    let mut archive = ArchiveWriter::open(&dir.path().join("a.jsonl")).unwrap();
    let err = generate_candidates(&example("e1", "He paid."), &Attribute::new("male"), &gen, &mut archive)
        .unwrap_err();
    assert!(matches!(err, GenerationError::SameAttribute(..)));
}

#[test]
fn batch_archive_order_ignores_concurrency() {
    let template = PromptTemplate::label_preserving();
    let params = GenerationParams::with_seeds(vec![3, 1]);
    let examples: Vec<Example> = (0..12)
        .rev()
        .map(|i| example(&format!("e{i:02}"), &format!("He paid bill {i} with cash.")))
        .collect();
    let jobs: Vec<(&Example, Attribute)> = examples.iter().map(|e| (e, Attribute::new("female"))).collect();
    let mut archives = Vec::new();
    for concurrency in [1, 4] {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let backend = Flaky::new(0, BackendError::Transport(String::new()));
        let gen = generator(&template, &backend, &params, 1);
        let mut archive = ArchiveWriter::open(&path).unwrap();
        let candidates = generate_batch(&jobs, &gen, &mut archive, concurrency).unwrap();
        assert_eq!(candidates.len(), 24);
        assert!(candidates.windows(2).all(|w| w[0].source_id <= w[1].source_id));
        archives.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(archives[0], archives[1]);
}

/// Serves one scripted `(status, body)` per connection and reports each
/// request body.
fn scripted_server(script: Vec<(u16, &'static str)>) -> (String, mpsc::Receiver<(String, String)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/complete", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line["authorization:".len()..].trim().to_string();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send((auth, String::from_utf8(buf).unwrap())).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

#[test]
fn remote_backend_retries_server_errors() {
    let (url, requests) = scripted_server(vec![(503, "{}"), (200, r#"{"text":"She paid with cash."}"#)]);
    let backend = RemoteBackend::new(url, Some("tok".into()), Duration::from_secs(5));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("archive.jsonl");
    let template = PromptTemplate::label_preserving();
    let params = GenerationParams::with_seeds(vec![9]);
    let gen = generator(&template, &backend, &params, 3);
    let mut archive = ArchiveWriter::open(&path).unwrap();
    let out = generate_candidates(&example("e1", "He paid with cash."), &Attribute::new("female"), &gen, &mut archive)
        .unwrap();
    assert_eq!(out[0].0.text, "She paid with cash.");

    let (auth, body) = requests.recv().unwrap();
    assert_eq!(auth, "Bearer tok");
    let body: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(body["seed"], 9);
    assert!(body["prompt"].as_str().unwrap().contains("He paid with cash."));
    assert_eq!(read_archive(&path).unwrap().len(), 2);
}

#[test]
fn remote_backend_rejects_client_errors_and_bad_bodies() {
    let (url, _requests) = scripted_server(vec![(400, "{}"), (200, "not json")]);
    let backend = RemoteBackend::new(url, None, Duration::from_secs(5));
    let params = GenerationParams::default();
    let err = backend.complete("p", 1, &params).unwrap_err();
    assert!(matches!(err, BackendError::Rejected(ref m) if m.contains("400")), "{err}");
    assert!(!err.is_retryable());
    let err = backend.complete("p", 1, &params).unwrap_err();
    assert!(matches!(err, BackendError::Rejected(_)));
}

#[test]
fn unreachable_remote_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = RemoteBackend::new(format!("http://127.0.0.1:{port}/"), None, Duration::from_secs(2));
    let err = backend.complete("p", 1, &GenerationParams::default()).unwrap_err();
    assert!(err.is_retryable(), "{err}");
}
