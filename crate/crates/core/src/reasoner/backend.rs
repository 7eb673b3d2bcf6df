//! Text-generation backends: a chat-completions HTTP client, a replay of
//! recorded completions, and a fixed stub.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("no recorded completion for key {key:?}")]
    TranscriptMiss { key: String },
    #[error("credential environment variable {0} is not set")]
    CredentialMissing(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Replay,
    #[serde(alias = "stub")]
    FixedStub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before retry i is `backoff_ms[min(i, len - 1)]`.
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_ms: vec![500, 1000, 2000],
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: usize) -> Duration {
        let ms = self
            .backoff_ms
            .get(retry)
            .or(self.backoff_ms.last())
            .copied()
            .unwrap_or(0);
        Duration::from_millis(ms)
    }
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_timeout() -> u64 {
    60
}

/// Backend settings, usually read from the `[backend]` table of a config
/// file. Credentials are only ever read from the environment variable named
/// by `credential_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Replay transcript (line-delimited `{"id"|"prompt_sha256", "completion"}`).
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    /// Completion returned by the fixed stub.
    #[serde(default)]
    pub completion: Option<String>,
}

impl BackendConfig {
    pub fn replay(transcript: impl Into<PathBuf>) -> Self {
        Self {
            transcript: Some(transcript.into()),
            ..Self::blank(BackendKind::Replay)
        }
    }

    pub fn stub(completion: impl Into<String>) -> Self {
        Self {
            completion: Some(completion.into()),
            ..Self::blank(BackendKind::FixedStub)
        }
    }

    pub fn remote(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: Some(endpoint.into()),
            model: Some(model.into()),
            ..Self::blank(BackendKind::Remote)
        }
    }

    fn blank(kind: BackendKind) -> Self {
        Self {
            kind,
            endpoint: None,
            model: None,
            credential_env: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
            transcript: None,
            completion: None,
        }
    }

    /// Resolves a relative transcript path against `base`.
    pub fn relative_to(mut self, base: &Path) -> Self {
        if let Some(t) = &self.transcript {
            if t.is_relative() {
                self.transcript = Some(base.join(t));
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let missing = |what: &str| Err(BackendError::Config(format!("{:?} backend requires {what}", self.kind)));
        match self.kind {
            BackendKind::Remote => {
                if self.endpoint.is_none() {
                    return missing("an endpoint");
                }
                if self.model.is_none() {
                    return missing("a model id");
                }
                if self.temperature.is_nan() || self.temperature < 0.0 {
                    return Err(BackendError::Config("temperature must be >= 0".into()));
                }
                if self.max_tokens == 0 {
                    return Err(BackendError::Config("max_tokens must be positive".into()));
                }
                if self.retry.max_attempts == 0 {
                    return Err(BackendError::Config("retry.max_attempts must be positive".into()));
                }
            }
            BackendKind::Replay if self.transcript.is_none() => return missing("a transcript path"),
            BackendKind::FixedStub if self.completion.is_none() => return missing("a completion"),
            _ => {}
        }
        Ok(())
    }
}

/// One generation call. `key` identifies the request for replay lookups
/// (usually the sample id); `system` and `user` form the chat messages.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub key: &'a str,
    pub system: Option<&'a str>,
    pub user: &'a str,
}

impl GenerationRequest<'_> {
    /// The prompt as one text, as hashed for replay lookups.
    pub fn rendered(&self) -> String {
        match self.system {
            Some(s) => format!("{s}\n\n{}", self.user),
            None => self.user.to_owned(),
        }
    }

    pub fn digest(&self) -> String {
        prompt_digest(&self.rendered())
    }
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub trait TextBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError>;
}

/// Builds the backend described by `config`.
pub fn connect(config: &BackendConfig) -> Result<Box<dyn TextBackend>, BackendError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Remote => Box::new(RemoteBackend::new(config)?),
        BackendKind::Replay => Box::new(ReplayBackend::load(config.transcript.as_deref().expect("validated"))?),
        BackendKind::FixedStub => Box::new(FixedStub::new(config.completion.clone().expect("validated"))),
    })
}

#[derive(Debug, Clone)]
pub struct FixedStub {
    completion: String,
}

impl FixedStub {
    pub fn new(completion: impl Into<String>) -> Self {
        Self {
            completion: completion.into(),
        }
    }
}

impl TextBackend for FixedStub {
    fn kind(&self) -> BackendKind {
        BackendKind::FixedStub
    }

    fn generate(&self, _: &GenerationRequest<'_>) -> Result<String, BackendError> {
        Ok(self.completion.clone())
    }
}

/// One line of a replay transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    pub completion: String,
}

/// Returns canned completions keyed by request key, or by prompt digest.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    by_id: HashMap<String, String>,
    by_digest: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut out = Self::default();
        for e in entries {
            if let Some(id) = e.id {
                out.by_id.insert(id, e.completion.clone());
            }
            if let Some(d) = e.prompt_sha256 {
                out.by_digest.insert(d.to_lowercase(), e.completion);
            }
        }
        out
    }

    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Self::new(pairs.into_iter().map(|(k, v)| TranscriptEntry {
            id: Some(k.into()),
            prompt_sha256: None,
            completion: v.into(),
        }))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("transcript {}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: TranscriptEntry = serde_json::from_str(line)
                .map_err(|e| BackendError::Config(format!("transcript {} line {}: {e}", path.display(), i + 1)))?;
            if entry.id.is_none() && entry.prompt_sha256.is_none() {
                return Err(BackendError::Config(format!(
                    "transcript {} line {}: entry needs \"id\" or \"prompt_sha256\"",
                    path.display(),
                    i + 1
                )));
            }
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }
}

impl TextBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError> {
        if let Some(c) = self.by_id.get(request.key) {
            return Ok(c.clone());
        }
        if !self.by_digest.is_empty() {
            if let Some(c) = self.by_digest.get(&request.digest()) {
                return Ok(c.clone());
            }
        }
        Err(BackendError::TranscriptMiss {
            key: request.key.to_owned(),
        })
    }
}

/// Chat-completions client (`POST {endpoint}` with `model` and `messages`).
pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
    max_tokens: u32,
    retry: RetryPolicy,
}

/// Reads the credential named by `credential_env`, if one is configured.
pub fn read_credential(credential_env: Option<&str>) -> Result<Option<String>, BackendError> {
    match credential_env {
        None => Ok(None),
        Some(var) => std::env::var(var)
            .ok()
            .filter(|v| !v.is_empty())
            .map(Some)
            .ok_or_else(|| BackendError::CredentialMissing(var.to_owned())),
    }
}

enum Failure {
    Transient(String),
    Fatal(String),
}

impl RemoteBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let api_key = read_credential(config.credential_env.as_deref())?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: config.endpoint.clone().expect("validated"),
            model: config.model.clone().expect("validated"),
            api_key,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            retry: config.retry.clone(),
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, Failure> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Transient(e.to_string()))?;
        if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Transient(format!("HTTP {status}: {}", snippet(&text))));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(format!("HTTP {status}: {}", snippet(&text))));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Failure::Fatal(format!("undecodable response: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| Failure::Fatal("response has no choices[0].message.content".into()))
    }
}

fn snippet(s: &str) -> String {
    s.chars().take(200).collect()
}

impl TextBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError> {
        let mut messages = Vec::new();
        if let Some(system) = request.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": request.user}));
        let body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });

        let mut last = String::new();
        for attempt in 0..self.retry.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt as usize - 1));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Failure::Transient(reason)) => last = reason,
                Err(Failure::Fatal(reason)) => {
                    return Err(BackendError::BackendUnavailable {
                        attempts: attempt + 1,
                        reason,
                    })
                }
            }
        }
        Err(BackendError::BackendUnavailable {
            attempts: self.retry.max_attempts,
            reason: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(key: &'a str, user: &'a str) -> GenerationRequest<'a> {
        GenerationRequest {
            key,
            system: None,
            user,
        }
    }

    #[test]
    fn replay_by_id_and_digest() {
        let mut backend = ReplayBackend::from_pairs([("s1", "hello")]);
        assert_eq!(backend.generate(&req("s1", "whatever")).unwrap(), "hello");
        assert_eq!(
            backend.generate(&req("s2", "x")),
            Err(BackendError::TranscriptMiss { key: "s2".into() })
        );
        backend
            .by_digest
            .insert(prompt_digest("the prompt"), "by digest".into());
        assert_eq!(backend.generate(&req("s2", "the prompt")).unwrap(), "by digest");
    }

    #[test]
    fn stub_is_constant() {
        let stub = FixedStub::new("c");
        assert_eq!(stub.generate(&req("a", "b")).unwrap(), "c");
        assert_eq!(stub.kind(), BackendKind::FixedStub);
    }

    #[test]
    fn config_invariants() {
        let mut cfg = BackendConfig::remote("http://x", "m");
        assert!(cfg.validate().is_ok());
        cfg.model = None;
        assert!(matches!(cfg.validate(), Err(BackendError::Config(_))));
        let mut replay = BackendConfig::replay("t.jsonl");
        assert!(replay.validate().is_ok());
        replay.transcript = None;
        assert!(replay.validate().is_err());
        let toml_cfg: BackendConfig = toml::from_str(
            r#"
            kind = "remote"
            endpoint = "http://localhost:8000/v1/chat/completions"
            model = "m"
            credential_env = "KEY"
            temperature = 0.2
            [retry]
            max_attempts = 5
            backoff_ms = [10, 20]
            "#,
        )
        .unwrap();
        assert_eq!(toml_cfg.retry.max_attempts, 5);
        assert_eq!(toml_cfg.retry.delay(7), Duration::from_millis(20));
    }

    #[test]
    fn missing_credential() {
        let mut cfg = BackendConfig::remote("http://127.0.0.1:1/v1/chat/completions", "m");
        cfg.credential_env = Some("CTXAGENT_TEST_SURELY_UNSET_VAR".into());
        assert_eq!(
            connect(&cfg).err(),
            Some(BackendError::CredentialMissing("CTXAGENT_TEST_SURELY_UNSET_VAR".into()))
        );
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        let mut cfg = BackendConfig::remote("http://127.0.0.1:1/v1/chat/completions", "m");
        cfg.retry = RetryPolicy {
            max_attempts: 2,
            backoff_ms: vec![0],
        };
        cfg.timeout_secs = 2;
        let backend = connect(&cfg).unwrap();
        match backend.generate(&req("k", "hi")) {
            Err(BackendError::BackendUnavailable { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transcript_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(
            &path,
            "{\"id\": \"a\", \"completion\": \"x\"}\n\n{\"prompt_sha256\": \"ABC\", \"completion\": \"y\"}\n",
        )
        .unwrap();
        let b = ReplayBackend::load(&path).unwrap();
        assert_eq!(b.generate(&req("a", "")).unwrap(), "x");
        std::fs::write(&path, "{\"completion\": \"x\"}\n").unwrap();
        assert!(ReplayBackend::load(&path).is_err());
    }
}
