use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use super::wire::{InfoResponse, Merges, ScoreRequest, ScoreResponse, TokenizerPayload};
use super::ScoringBackend;
use crate::error::{BackendError, Error, Result};
use crate::tokenizer::{TokenId, TokenizerSpec};

/// HTTP client for a scoring service speaking the [`super::wire`] protocol.
///
/// Requests are blocking; the client is shareable and each call is an
/// independent request.
#[derive(Debug)]
pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
    info: InfoResponse,
    truncations: AtomicU64,
}

fn transport(e: ureq::Error) -> Error {
    BackendError::Transport(e.to_string()).into()
}

fn malformed(e: impl std::fmt::Display) -> Error {
    BackendError::MalformedResponse(e.to_string()).into()
}

impl RemoteBackend {
    /// Connects to `base_url` (e.g. `http://127.0.0.1:8000`) and reads `/info`.
    pub fn connect(base_url: &str) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        let base_url = base_url.trim_end_matches('/').to_string();
        let info: InfoResponse = agent
            .get(format!("{base_url}/info"))
            .call()
            .map_err(transport)?
            .into_body()
            .read_json()
            .map_err(malformed)?;
        if info.vocab_size == 0 {
            return Err(malformed("vocab_size is zero"));
        }
        Ok(RemoteBackend { base_url, agent, info, truncations: AtomicU64::new(0) })
    }

    pub fn info(&self) -> &InfoResponse {
        &self.info
    }

    /// Number of requests whose prefix was left-truncated to fit the context.
    pub fn truncations(&self) -> u64 {
        self.truncations.load(Ordering::Relaxed)
    }

    /// The tokenizer the service's model was trained with.
    pub fn fetch_tokenizer(&self) -> Result<TokenizerSpec> {
        let payload: TokenizerPayload = self
            .agent
            .get(format!("{}/tokenizer", self.base_url))
            .call()
            .map_err(transport)?
            .into_body()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_json()
            .map_err(malformed)?;
        let vocab = serde_json::to_string(&payload.vocab)?;
        match payload.merges {
            Merges::Text(text) => TokenizerSpec::from_gpt2_strings(&vocab, &text),
            Merges::Lines(lines) => {
                let lines: Vec<&str> = lines.iter().map(String::as_str).collect();
                TokenizerSpec::from_gpt2_parts(&vocab, &lines)
            }
        }
    }
}

impl ScoringBackend for RemoteBackend {
    fn vocab_size(&self) -> usize {
        self.info.vocab_size
    }

    fn context_limit(&self) -> usize {
        self.info.context_limit
    }

    fn bos_token(&self) -> Option<TokenId> {
        self.info.bos_token_id
    }

    fn model_name(&self) -> String {
        self.info.model_name.clone()
    }

    fn score_continuations(&self, prefix: &[TokenId], candidates: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        let vocab_size = self.info.vocab_size;
        for &id in prefix.iter().chain(candidates.iter().flatten()) {
            if id as usize >= vocab_size {
                return Err(BackendError::IdOutOfRange { id, vocab_size }.into());
            }
        }
        if candidates.iter().any(Vec::is_empty) {
            return Err(BackendError::EmptyCandidate.into());
        }
        if candidates.is_empty() {
            return Ok(Vec::new());
        }

        let mut prefix = prefix;
        let limit = self.info.context_limit;
        if limit > 0 {
            let longest = candidates.iter().map(Vec::len).max().unwrap_or(0);
            let keep = limit.saturating_sub(longest);
            if prefix.len() > keep {
                prefix = &prefix[prefix.len() - keep..];
                self.truncations.fetch_add(1, Ordering::Relaxed);
            }
        }

        let request = ScoreRequest { prefix: prefix.to_vec(), candidates: candidates.to_vec() };
        let response: ScoreResponse = self
            .agent
            .post(format!("{}/score", self.base_url))
            .send_json(&request)
            .map_err(transport)?
            .into_body()
            .read_json()
            .map_err(malformed)?;
        if response.logprobs.len() != candidates.len() {
            return Err(malformed(format!(
                "expected {} logprobs, got {}",
                candidates.len(),
                response.logprobs.len()
            )));
        }
        if response.logprobs.iter().any(|&x| x.is_nan() || x > 1e-9) {
            return Err(malformed("log-probabilities must be <= 0"));
        }
        Ok(response.logprobs)
    }
}
