use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AdapterError, Generator, SamplingProfile};
use crate::store::digest_hex;

/// Text before the first occurrence of `stop`, or all of it.
pub fn truncate_at_stop<'a>(text: &'a str, stop: &str) -> &'a str {
    if stop.is_empty() {
        return text;
    }
    match text.find(stop) {
        Some(i) => &text[..i],
        None => text,
    }
}

#[derive(Debug, Deserialize)]
struct FixtureLine {
    prompt: String,
    #[serde(default = "any_profile")]
    profile_id: String,
    completion: String,
}

fn any_profile() -> String {
    ScriptedGenerator::ANY_PROFILE.to_string()
}

/// Replays canned completions keyed by (prompt digest, profile id).
///
/// Entries registered under [`ScriptedGenerator::ANY_PROFILE`] answer for
/// every profile that has no exact entry.
#[derive(Debug, Default, Clone)]
pub struct ScriptedGenerator {
    table: HashMap<(String, String), String>,
}

impl ScriptedGenerator {
    pub const ANY_PROFILE: &'static str = "*";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: &str, profile_id: &str, completion: impl Into<String>) {
        self.table
            .insert((digest_hex(prompt.as_bytes()), profile_id.to_string()), completion.into());
    }

    pub fn with(mut self, prompt: &str, profile_id: &str, completion: impl Into<String>) -> Self {
        self.insert(prompt, profile_id, completion);
        self
    }

    /// Loads JSON Lines of `{prompt, profile_id?, completion}`.
    pub fn from_fixture_file(path: impl AsRef<Path>) -> Result<Self, AdapterError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| {
            AdapterError::Config(format!("cannot read fixture file {}: {e}", path.display()))
        })?;
        let mut generator = Self::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: FixtureLine = serde_json::from_str(line).map_err(|e| {
                AdapterError::Config(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            generator.insert(&entry.prompt, &entry.profile_id, entry.completion);
        }
        Ok(generator)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Generator for ScriptedGenerator {
    fn complete(&self, prompt: &str, profile: &SamplingProfile) -> Result<String, AdapterError> {
        let digest = digest_hex(prompt.as_bytes());
        self.table
            .get(&(digest.clone(), profile.profile_id.clone()))
            .or_else(|| self.table.get(&(digest.clone(), Self::ANY_PROFILE.to_string())))
            .cloned()
            .ok_or(AdapterError::NoFixture {
                prompt_digest: digest,
                profile_id: profile.profile_id.clone(),
            })
    }
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    top_k: u32,
    top_p: f64,
    max_tokens: u32,
    stop: &'a str,
}

#[derive(Debug, Deserialize)]
struct CompletionReply {
    text: String,
}

/// Calls a completion endpoint: `POST {prompt, temperature, top_k, top_p,
/// max_tokens, stop}` answered with `{text}`.
#[derive(Debug, Clone)]
pub struct HttpGenerator {
    url: String,
    agent: ureq::Agent,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, AdapterError> {
        let url = url.into();
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(AdapterError::Config(format!("generator url `{url}` is not http(s)")));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Ok(HttpGenerator { url, agent })
    }
}

impl Generator for HttpGenerator {
    fn complete(&self, prompt: &str, profile: &SamplingProfile) -> Result<String, AdapterError> {
        let request = CompletionRequest {
            prompt,
            temperature: profile.temperature,
            top_k: profile.top_k,
            top_p: profile.top_p,
            max_tokens: profile.max_tokens,
            stop: &profile.stop_token,
        };
        let response = self.agent.post(&self.url).send_json(&request).map_err(|e| match e {
            ureq::Error::StatusCode(code) if (400..500).contains(&code) && code != 429 => {
                AdapterError::Config(format!("generator endpoint rejected request: HTTP {code}"))
            }
            other => AdapterError::Transient(format!("generator endpoint: {other}")),
        })?;
        let reply: CompletionReply = response
            .into_body()
            .read_json()
            .map_err(|e| AdapterError::Transient(format!("bad generator reply: {e}")))?;
        Ok(reply.text)
    }
}
