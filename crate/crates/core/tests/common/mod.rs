#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use contextqa::corpus::{load_corpus, CorpusTable};
use contextqa::embedding::{Embedder, EmbeddingBackendConfig};
use contextqa::eval::{load_test, MultipleChoiceQuestion};
use contextqa::retrieval::{build_store, VectorStore};
use contextqa::tokenizer::{Tokenizer, TokenizerSpec};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[derive(Debug, Clone)]
pub struct Captured {
    pub authorization: Option<String>,
    pub body: String,
}

/// Minimal HTTP/1.1 server answering each connection with the next canned
/// `(status, body)` pair. Once the script runs out the last pair repeats.
pub struct MockServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Captured>>>,
    _handle: JoinHandle<()>,
}

impl MockServer {
    pub fn start(script: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let handle = std::thread::spawn(move || {
            let mut served = 0usize;
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                let mut authorization = None;
                let mut line = String::new();
                loop {
                    line.clear();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let trimmed = line.trim_end();
                    if trimmed.is_empty() {
                        break;
                    }
                    if let Some((name, value)) = trimmed.split_once(':') {
                        match name.to_ascii_lowercase().as_str() {
                            "content-length" => length = value.trim().parse().unwrap_or(0),
                            "authorization" => authorization = Some(value.trim().to_string()),
                            _ => {}
                        }
                    }
                }
                let mut body = vec![0u8; length];
                if reader.read_exact(&mut body).is_err() {
                    continue;
                }
                log.lock().unwrap().push(Captured {
                    authorization,
                    body: String::from_utf8_lossy(&body).into_owned(),
                });
                let (status, payload) = script[served.min(script.len() - 1)].clone();
                served += 1;
                let response = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(response.as_bytes());
                let _ = stream.flush();
            }
        });
        Self {
            url,
            requests,
            _handle: handle,
        }
    }

    pub fn captured(&self) -> Vec<Captured> {
        self.requests.lock().unwrap().clone()
    }
}

/// A localhost URL with nothing listening.
pub fn dead_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/v1/endpoint")
}

pub fn fixture_tokenizer() -> Tokenizer {
    Tokenizer::from_spec(&TokenizerSpec::bpe(
        fixtures().join("vocab/fixture.tiktoken"),
        "fixture",
    ))
    .unwrap()
}

/// Handbook corpus, local-hash store and the 50-question test.
pub struct Handbook {
    pub tokenizer: Tokenizer,
    pub corpus: CorpusTable,
    pub embedder: Embedder,
    pub store: VectorStore,
    pub questions: Vec<MultipleChoiceQuestion>,
}

pub fn handbook() -> Handbook {
    let tokenizer = fixture_tokenizer();
    let corpus = load_corpus(&fixtures().join("handbook.csv"), &tokenizer).unwrap();
    let embedder = Embedder::new(EmbeddingBackendConfig::local(256), tokenizer.clone()).unwrap();
    let store = build_store(&corpus, &embedder).unwrap();
    let questions = load_test(&fixtures().join("driving_test.jsonl")).unwrap();
    Handbook {
        tokenizer,
        corpus,
        embedder,
        store,
        questions,
    }
}
