//! Keyword/date search against the Guardian content API.

use std::time::Duration;

use chrono::{Days, NaiveDate};
use nrec_core::article::{Article, Source};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CorpusError, Result};
use crate::http::{send_checked, HttpRequest, RetryPolicy, Transport};

pub const GUARDIAN_SEARCH_URL: &str = "https://content.guardianapis.com/search";
pub const GUARDIAN_KEY_ENV: &str = "GUARDIAN_API_KEY";
pub const MAX_RESULTS: usize = 20;
/// Half-width of the publication window around a query date.
pub const DATE_WINDOW_DAYS: u64 = 3;

/// Country tags live in the `world` section (`world/ukraine`). Regional
/// sections such as `australia-news` mix places with topics, so they are
/// not trusted.
const GEO_SECTION: &str = "world";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardianQuery {
    #[serde(default)]
    pub date: Option<NaiveDate>,
    #[serde(default)]
    pub keywords: Vec<String>,
}

pub struct GuardianClient<'a> {
    transport: &'a dyn Transport,
    api_key: String,
    pub base_url: String,
    pub retry: RetryPolicy,
    pub sleep: fn(Duration),
}

impl<'a> GuardianClient<'a> {
    pub fn new(transport: &'a dyn Transport, api_key: impl Into<String>) -> Self {
        GuardianClient {
            transport,
            api_key: api_key.into(),
            base_url: GUARDIAN_SEARCH_URL.into(),
            retry: RetryPolicy::default(),
            sleep: std::thread::sleep,
        }
    }

    pub fn query_url(&self, q: &GuardianQuery) -> Result<String> {
        let keywords: Vec<String> = q
            .keywords
            .iter()
            .map(|k| k.trim())
            .filter(|k| !k.is_empty())
            .map(|k| if k.contains(' ') { format!("\"{k}\"") } else { k.to_string() })
            .collect();
        if keywords.is_empty() && q.date.is_none() {
            return Err(CorpusError::Precondition("query needs keywords or a date".into()));
        }
        let mut params: Vec<(&str, String)> = Vec::new();
        if !keywords.is_empty() {
            params.push(("q", keywords.join(" AND ")));
        }
        if let Some(d) = q.date {
            params.push(("from-date", (d - Days::new(DATE_WINDOW_DAYS)).to_string()));
            params.push(("to-date", (d + Days::new(DATE_WINDOW_DAYS)).to_string()));
        }
        params.push(("page-size", MAX_RESULTS.to_string()));
        params.push(("order-by", "relevance".into()));
        params.push(("show-fields", "headline,trailText,thumbnail".into()));
        params.push(("show-tags", "keyword".into()));
        params.push(("api-key", self.api_key.clone()));
        let url = url::Url::parse_with_params(&self.base_url, &params)
            .map_err(|e| CorpusError::Precondition(format!("bad base url {}: {e}", self.base_url)))?;
        Ok(url.to_string())
    }

    pub fn search(&self, q: &GuardianQuery) -> Result<Vec<Article>> {
        let url = self.query_url(q)?;
        if self.api_key.trim().is_empty() && !self.transport.is_offline() {
            return Err(CorpusError::Credential {
                service: "guardian",
                detail: format!("{GUARDIAN_KEY_ENV} is not set"),
            });
        }
        let resp = send_checked(self.transport, &HttpRequest::get(url), &self.retry, "guardian", &self.sleep)?;
        let mut articles = parse_search(&resp.body)?;
        articles.truncate(MAX_RESULTS);
        Ok(articles)
    }
}

fn strip_tags(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_tag = false;
    for c in s.chars() {
        match c {
            '<' => in_tag = true,
            '>' => in_tag = false,
            c if !in_tag => out.push(c),
            _ => {}
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse_search(body: &str) -> Result<Vec<Article>> {
    let v: Value = serde_json::from_str(body).map_err(|e| CorpusError::Parse(format!("search response: {e}")))?;
    let results = v
        .pointer("/response/results")
        .and_then(Value::as_array)
        .ok_or_else(|| CorpusError::Parse("search response has no response.results".into()))?;
    let mut out = Vec::new();
    for (i, r) in results.iter().enumerate() {
        match parse_result(r) {
            Ok(a) => out.push(a),
            Err(why) => log::warn!("skipping search result {i}: {why}"),
        }
    }
    Ok(out)
}

fn parse_result(r: &Value) -> std::result::Result<Article, String> {
    let s = |p: &str| r.pointer(p).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty());
    let id = s("/id").ok_or("missing id")?;
    let headline = s("/fields/headline").or_else(|| s("/webTitle")).ok_or("missing headline")?;
    let date = s("/webPublicationDate").ok_or("missing webPublicationDate")?;
    let day: NaiveDate = date
        .get(..10)
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| format!("bad date {date:?}"))?;
    let mut a = Article::new(format!("guardian:{id}"), Source::Guardian, headline, day);
    a.abstract_text = s("/fields/trailText").map(strip_tags).unwrap_or_default();
    if let Some(t) = s("/fields/thumbnail") {
        a.image_urls.push(t.to_string());
    }
    if let Some(tags) = r.get("tags").and_then(Value::as_array) {
        for t in tags {
            let tid = t.get("id").and_then(Value::as_str).unwrap_or_default();
            let title = t.get("webTitle").and_then(Value::as_str).map(str::trim).unwrap_or_default();
            let section = tid.split('/').next().unwrap_or_default();
            if section == GEO_SECTION && !title.is_empty() && !a.geo_keywords.iter().any(|g| g == title) {
                a.geo_keywords.push(title.to_string());
            }
        }
    }
    if let Some(u) = s("/webUrl") {
        a.extra.insert("web_url".into(), Value::String(u.into()));
    }
    Ok(a)
}
