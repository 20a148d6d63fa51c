//! Article enrichment through a chat-completion endpoint: the
//! visualizable-event filter and news-caption generation.

use std::path::PathBuf;
use std::time::Duration;

use nrec_core::article::{Article, FLAG_CAPTION_FAILED, FLAG_FILTER_FAILED, MAX_NEWS_CAPTIONS};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CorpusError, Result};
use crate::fixture::FixtureTransport;
use crate::http::{send_checked, HttpRequest, LiveTransport, RetryPolicy, Transport};

pub const LLM_KEY_ENV: &str = "NEWSRECON_LLM_API_KEY";

const FILTER_PROMPT: &str = include_str!("../assets/filter_prompt.txt");
const FILTER_EXAMPLES: &str = include_str!("../assets/filter_examples.txt");
const CAPTION_PROMPT: &str = include_str!("../assets/caption_prompt.txt");
const CAPTION_EXAMPLES: &str = include_str!("../assets/caption_examples.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmEndpointConfig {
    /// Root of an OpenAI-style API; `/chat/completions` is appended.
    pub base_url: String,
    pub model_name: String,
    pub api_key_env_var: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    /// When set, responses come only from recordings in this directory.
    pub fixture_dir: Option<PathBuf>,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        LlmEndpointConfig {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "local-instruct".into(),
            api_key_env_var: LLM_KEY_ENV.into(),
            temperature: 0.0,
            timeout_secs: 60,
            fixture_dir: None,
        }
    }
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(CorpusError::Precondition(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.timeout_secs == 0 {
            return Err(CorpusError::Precondition("timeout_secs must be positive".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(CorpusError::Precondition("model_name is empty".into()));
        }
        Ok(())
    }
}

/// Prompt text with the shipped few-shot examples.
pub struct Prompts {
    filter_examples: Vec<(String, String)>,
    caption_examples: Vec<(String, String)>,
}

/// Parses the `H:` / `A:` example format used by the prompt assets.
pub fn parse_examples(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut pending: Option<String> = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(h) = line.strip_prefix("H:") {
            if pending.replace(h.trim().to_string()).is_some() {
                return Err(CorpusError::Parse(format!("example line {}: headline without answer", n + 1)));
            }
        } else if let Some(a) = line.strip_prefix("A:") {
            let h = pending
                .take()
                .ok_or_else(|| CorpusError::Parse(format!("example line {}: answer without headline", n + 1)))?;
            out.push((h, a.trim().to_string()));
        } else {
            return Err(CorpusError::Parse(format!("example line {}: expected H: or A:", n + 1)));
        }
    }
    if pending.is_some() {
        return Err(CorpusError::Parse("last example has no answer".into()));
    }
    Ok(out)
}

fn render(template: &str, examples: &[(String, String)], answer_label: &str, headline: &str) -> String {
    let shots = examples
        .iter()
        .map(|(h, a)| format!("Headline: {h}\n{answer_label}: {a}"))
        .collect::<Vec<_>>()
        .join("\n\n");
    template
        .trim_end()
        .replace("{EXAMPLES}", &shots)
        .replace("{HEADLINE}", headline.trim())
}

impl Prompts {
    pub fn builtin() -> Self {
        Prompts {
            filter_examples: parse_examples(FILTER_EXAMPLES).expect("shipped filter examples parse"),
            caption_examples: parse_examples(CAPTION_EXAMPLES).expect("shipped caption examples parse"),
        }
    }

    pub fn filter(&self, headline: &str) -> String {
        render(FILTER_PROMPT, &self.filter_examples, "Answer", headline)
    }

    pub fn caption(&self, headline: &str) -> String {
        render(CAPTION_PROMPT, &self.caption_examples, "Captions", headline)
    }
}

/// Verdict of a filter response: `Some(true)` for category 1, `Some(false)`
/// for category 2, `None` when neither is named.
pub fn parse_filter_response(text: &str) -> Option<bool> {
    let t = text.trim().to_lowercase();
    if t.contains("category 1") {
        Some(true)
    } else if t.contains("category 2") {
        Some(false)
    } else {
        None
    }
}

/// Extracts the first JSON list of strings from a response, tolerating
/// surrounding prose or code fences. Empty strings are dropped and the
/// result is cut to the caption limit.
pub fn parse_caption_response(text: &str) -> Option<Vec<String>> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    if end <= start {
        return None;
    }
    let items: Vec<Value> = serde_json::from_str(&text[start..=end]).ok()?;
    let captions: Vec<String> = items
        .iter()
        .filter_map(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .take(MAX_NEWS_CAPTIONS)
        .map(String::from)
        .collect();
    (!captions.is_empty()).then_some(captions)
}

fn is_fatal(e: &CorpusError) -> bool {
    matches!(e, CorpusError::Credential { .. } | CorpusError::FixtureMissing { .. } | CorpusError::Io { .. })
}

pub struct LlmClient {
    cfg: LlmEndpointConfig,
    transport: Box<dyn Transport>,
    api_key: String,
    prompts: Prompts,
    pub retry: RetryPolicy,
    pub sleep: fn(Duration),
}

impl LlmClient {
    /// Live client, or a replay-only one when `fixture_dir` is set.
    pub fn from_config(cfg: LlmEndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let transport: Box<dyn Transport> = match &cfg.fixture_dir {
            Some(dir) => Box::new(FixtureTransport::replay(dir)),
            None => Box::new(LiveTransport::new(Duration::from_secs(cfg.timeout_secs))),
        };
        let api_key = std::env::var(&cfg.api_key_env_var).unwrap_or_default();
        Self::with_transport(cfg, transport, api_key)
    }

    pub fn with_transport(cfg: LlmEndpointConfig, transport: Box<dyn Transport>, api_key: String) -> Result<Self> {
        cfg.validate()?;
        Ok(LlmClient {
            cfg,
            transport,
            api_key,
            prompts: Prompts::builtin(),
            retry: RetryPolicy::default(),
            sleep: std::thread::sleep,
        })
    }

    pub fn prompts(&self) -> &Prompts {
        &self.prompts
    }

    pub fn request_for(&self, prompt: &str) -> HttpRequest {
        let body = json!({
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut req = HttpRequest::post_json(url, body.to_string());
        if !self.api_key.is_empty() {
            req = req.header("Authorization", &format!("Bearer {}", self.api_key));
        }
        req
    }

    /// One chat completion; returns the first choice's message text.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let resp = send_checked(self.transport.as_ref(), &self.request_for(prompt), &self.retry, "llm", &self.sleep)?;
        let v: Value =
            serde_json::from_str(&resp.body).map_err(|e| CorpusError::Parse(format!("completion response: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(String::from)
            .ok_or_else(|| CorpusError::Parse("completion response has no choices[0].message.content".into()))
    }

    /// Two attempts at `prompt`, accepting the first response `parse` likes.
    /// Fatal errors (credentials, missing fixtures) propagate.
    fn ask<T>(&self, what: &str, id: &str, prompt: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        for attempt in 1..=2 {
            match self.complete(prompt) {
                Ok(text) => match parse(&text) {
                    Some(v) => return Ok(Some(v)),
                    None => log::warn!("{what} {id}: unusable response on attempt {attempt}: {text:?}"),
                },
                Err(e) if is_fatal(&e) => return Err(e),
                Err(e) => log::warn!("{what} {id}: attempt {attempt} failed: {e}"),
            }
        }
        Ok(None)
    }

    /// Classifies the headline and records the verdict in `article.keep`.
    /// Without a usable verdict after a retry the article is dropped and
    /// flagged.
    pub fn filter_visualizable(&self, article: &mut Article) -> Result<bool> {
        if article.headline.trim().is_empty() {
            return Err(CorpusError::Precondition(format!("article {} has no headline", article.id)));
        }
        let prompt = self.prompts.filter(&article.headline);
        let keep = match self.ask("filter", &article.id, &prompt, parse_filter_response)? {
            Some(k) => k,
            None => {
                article.add_flag(FLAG_FILTER_FAILED);
                false
            }
        };
        article.keep = Some(keep);
        Ok(keep)
    }

    /// Generates up to five captions into `article.news_captions`. A
    /// response without a usable list, twice, leaves the article caption-less
    /// and flagged.
    pub fn generate_news_captions(&self, article: &mut Article) -> Result<Vec<String>> {
        if article.keep != Some(true) {
            return Err(CorpusError::Precondition(format!(
                "article {} has not passed the filter",
                article.id
            )));
        }
        let prompt = self.prompts.caption(&article.headline);
        let captions = match self.ask("caption", &article.id, &prompt, parse_caption_response)? {
            Some(c) => c,
            None => {
                article.add_flag(FLAG_CAPTION_FAILED);
                Vec::new()
            }
        };
        article.news_captions = captions.clone();
        Ok(captions)
    }
}

/// Runs `f` over every article on up to `workers` threads. Articles come back
/// sorted by id whatever the scheduling. The first fatal error aborts.
pub fn enrich_all<F>(mut articles: Vec<Article>, workers: usize, f: F) -> Result<Vec<Article>>
where
    F: Fn(&mut Article) -> Result<()> + Sync,
{
    let workers = workers.max(1);
    let chunk = articles.len().div_ceil(workers).max(1);
    let results: Vec<Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = articles
            .chunks_mut(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter_mut().try_for_each(f))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("enrichment worker panicked")).collect()
    });
    results.into_iter().collect::<Result<()>>()?;
    articles.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(articles)
}
