use std::path::Path;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{Classifier, ClassifierError};
use crate::domain::{BinColor, ClassificationOutcome};

const DEFAULT_CONFIG: &str = include_str!("../../config/remote_classifier.toml");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("server answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response body: {0}")]
    Decode(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Connect(_) => true,
            TransportError::Status { status, .. } => *status >= 500 || *status == 429,
            TransportError::Timeout | TransportError::Decode(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub prompt: String,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        toml::from_str(DEFAULT_CONFIG).expect("bundled classifier config parses")
    }
}

impl RemoteConfig {
    pub fn from_toml(text: &str) -> Result<Self, ClassifierError> {
        toml::from_str(text).map_err(|e| ClassifierError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClassifierError::Config(e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisionRequest {
    pub model: String,
    pub prompt: String,
    pub image_b64: String,
}

impl VisionRequest {
    /// Chat-completions request body with the image inlined as a data URL.
    pub fn body(&self) -> serde_json::Value {
        json!({
            "model": self.model,
            "max_tokens": 5,
            "temperature": 0,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": self.prompt},
                    {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{}", self.image_b64)}}
                ]
            }]
        })
    }
}

/// Sends one request and returns the model's reply text.
pub trait VisionTransport {
    fn send(&self, request: &VisionRequest) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
}

impl HttpTransport {
    pub fn new(config: &RemoteConfig) -> Result<Self, ClassifierError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| ClassifierError::Config(e.to_string()))?;
        Ok(HttpTransport {
            client,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            token: std::env::var(&config.api_key_env).ok(),
        })
    }
}

impl VisionTransport for HttpTransport {
    fn send(&self, request: &VisionRequest) -> Result<String, TransportError> {
        let mut req = self.client.post(&self.endpoint).json(&request.body());
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        let status = resp.status();
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Decode(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(TransportError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let value: serde_json::Value = serde_json::from_str(&body).map_err(|e| TransportError::Decode(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError::Decode("missing choices[0].message.content".into()))
    }
}

/// Maps free-form model output onto the closed label set. Anything other
/// than a single recognised word is invalid.
pub fn parse_reply(reply: &str) -> ClassificationOutcome {
    let word = reply
        .trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_ascii_lowercase();
    match word.parse::<BinColor>() {
        Ok(c) => ClassificationOutcome::Valid(c),
        Err(_) => ClassificationOutcome::Invalid,
    }
}

/// Classifies one image through `transport`, retrying connection failures
/// and 5xx answers up to `config.max_retries` times. A timeout is not
/// retried: it yields `Invalid` so the user is asked to try again.
pub fn classify_remote(
    image: &[u8],
    config: &RemoteConfig,
    transport: &dyn VisionTransport,
) -> Result<ClassificationOutcome, ClassifierError> {
    if image.is_empty() {
        return Err(ClassifierError::EmptyImage);
    }
    let request = VisionRequest {
        model: config.model.clone(),
        prompt: config.prompt.clone(),
        image_b64: BASE64.encode(image),
    };
    let attempts = config.max_retries + 1;
    let mut last = None;
    for attempt in 1..=attempts {
        match transport.send(&request) {
            Ok(reply) => return Ok(parse_reply(&reply)),
            Err(TransportError::Timeout) => {
                log::warn!("vision request timed out after {} s; treating image as invalid", config.timeout_secs);
                return Ok(ClassificationOutcome::Invalid);
            }
            Err(e) if e.retryable() && attempt < attempts => {
                log::warn!("vision request attempt {attempt}/{attempts} failed: {e}");
                last = Some(e);
            }
            Err(e) => {
                return Err(ClassifierError::Transport { attempts: attempt, last: e });
            }
        }
    }
    Err(ClassifierError::Transport {
        attempts,
        last: last.expect("loop ran at least once"),
    })
}

/// [`Classifier`] backed by a remote vision model.
pub struct RemoteClassifier<T: VisionTransport = HttpTransport> {
    config: RemoteConfig,
    transport: T,
}

impl RemoteClassifier<HttpTransport> {
    pub fn http(config: RemoteConfig) -> Result<Self, ClassifierError> {
        let transport = HttpTransport::new(&config)?;
        Ok(RemoteClassifier { config, transport })
    }
}

impl<T: VisionTransport> RemoteClassifier<T> {
    pub fn with_transport(config: RemoteConfig, transport: T) -> Self {
        RemoteClassifier { config, transport }
    }
}

impl<T: VisionTransport> Classifier for RemoteClassifier<T> {
    fn classify(&mut self, image: &[u8]) -> Result<ClassificationOutcome, ClassifierError> {
        classify_remote(image, &self.config, &self.transport)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    struct Scripted {
        replies: RefCell<Vec<Result<String, TransportError>>>,
        calls: RefCell<u32>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<String, TransportError>>) -> Self {
            replies.reverse();
            Scripted {
                replies: RefCell::new(replies),
                calls: RefCell::new(0),
            }
        }
    }

    impl VisionTransport for Scripted {
        fn send(&self, _request: &VisionRequest) -> Result<String, TransportError> {
            *self.calls.borrow_mut() += 1;
            self.replies.borrow_mut().pop().expect("script exhausted")
        }
    }

    #[test]
    fn bundled_config() {
        let c = RemoteConfig::default();
        assert_eq!(c.timeout_secs, 15);
        assert_eq!(c.max_retries, 2);
        for word in ["blue", "yellow", "brown", "invalid"] {
            assert!(c.prompt.contains(word));
        }
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_reply("yellow"), ClassificationOutcome::Valid(BinColor::Yellow));
        assert_eq!(parse_reply("  Brown.\n"), ClassificationOutcome::Valid(BinColor::Brown));
        assert_eq!(parse_reply("\"BLUE\""), ClassificationOutcome::Valid(BinColor::Blue));
        assert_eq!(parse_reply("I cannot tell"), ClassificationOutcome::Invalid);
        assert_eq!(parse_reply("invalid"), ClassificationOutcome::Invalid);
        assert_eq!(parse_reply("blue or yellow"), ClassificationOutcome::Invalid);
        assert_eq!(parse_reply(""), ClassificationOutcome::Invalid);
    }

    #[test]
    fn empty_image_is_precondition_error() {
        let t = Scripted::new(vec![]);
        assert_eq!(classify_remote(b"", &RemoteConfig::default(), &t), Err(ClassifierError::EmptyImage));
        assert_eq!(*t.calls.borrow(), 0);
    }

    #[test]
    fn retries_then_succeeds() {
        let t = Scripted::new(vec![
            Err(TransportError::Connect("refused".into())),
            Err(TransportError::Status {
                status: 503,
                body: String::new(),
            }),
            Ok("brown".into()),
        ]);
        let out = classify_remote(b"img", &RemoteConfig::default(), &t).unwrap();
        assert_eq!(out, ClassificationOutcome::Valid(BinColor::Brown));
        assert_eq!(*t.calls.borrow(), 3);
    }

    #[test]
    fn gives_up_after_two_retries() {
        let t = Scripted::new((0..5).map(|_| Err(TransportError::Connect("down".into()))).collect());
        let err = classify_remote(b"img", &RemoteConfig::default(), &t).unwrap_err();
        assert!(matches!(err, ClassifierError::Transport { attempts: 3, .. }));
        assert_eq!(*t.calls.borrow(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Scripted::new(vec![Err(TransportError::Status {
            status: 401,
            body: "no key".into(),
        })]);
        let err = classify_remote(b"img", &RemoteConfig::default(), &t).unwrap_err();
        assert!(matches!(err, ClassifierError::Transport { attempts: 1, .. }));
    }

    #[test]
    fn timeout_maps_to_invalid() {
        let t = Scripted::new(vec![Err(TransportError::Timeout)]);
        assert_eq!(
            classify_remote(b"img", &RemoteConfig::default(), &t).unwrap(),
            ClassificationOutcome::Invalid
        );
        assert_eq!(*t.calls.borrow(), 1);
    }

    #[test]
    fn request_body_shape() {
        let body = VisionRequest {
            model: "m".into(),
            prompt: "p".into(),
            image_b64: "aW1n".into(),
        }
        .body();
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["content"][0]["text"], "p");
        assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "data:image/png;base64,aW1n");
    }

    /// Serves one canned HTTP response and returns the request it received.
    fn one_shot_server(response_body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; content_length];
            reader.read_exact(&mut body).unwrap();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                response_body.len(),
                response_body
            )
            .unwrap();
            head + &String::from_utf8(body).unwrap()
        });
        (url, handle)
    }

    #[test]
    fn http_transport_against_local_server() {
        let (url, server) = one_shot_server(r#"{"choices":[{"message":{"role":"assistant","content":"Yellow"}}]}"#);
        let config = RemoteConfig {
            base_url: url,
            api_key_env: "ITRASH_TEST_UNSET_KEY".into(),
            ..RemoteConfig::default()
        };
        let mut classifier = RemoteClassifier::http(config).unwrap();
        let out = classifier.classify(b"bottle").unwrap();
        assert_eq!(out, ClassificationOutcome::Valid(BinColor::Yellow));
        let request = server.join().unwrap();
        assert!(request.starts_with("POST /chat/completions"));
        assert!(request.contains(&BASE64.encode(b"bottle")));
    }
}
