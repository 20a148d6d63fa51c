//! Monthly archive client for the New York Times.

use std::time::Duration;

use chrono::NaiveDate;
use nrec_core::article::{Article, Source};
use serde_json::Value;

use crate::error::{CorpusError, Result};
use crate::http::{send_checked, HttpRequest, RetryPolicy, Transport};

pub const NYT_ARCHIVE_BASE: &str = "https://api.nytimes.com/svc/archive/v1";
pub const NYT_KEY_ENV: &str = "NYT_API_KEY";
const IMAGE_HOST: &str = "https://static01.nyt.com/";

pub struct NytClient<'a> {
    transport: &'a dyn Transport,
    api_key: String,
    pub base_url: String,
    pub retry: RetryPolicy,
    pub sleep: fn(Duration),
}

impl<'a> NytClient<'a> {
    pub fn new(transport: &'a dyn Transport, api_key: impl Into<String>) -> Self {
        NytClient {
            transport,
            api_key: api_key.into(),
            base_url: NYT_ARCHIVE_BASE.into(),
            retry: RetryPolicy::default(),
            sleep: std::thread::sleep,
        }
    }

    pub fn month_url(&self, year: i32, month: u32) -> String {
        format!("{}/{year}/{month}.json?api-key={}", self.base_url, self.api_key)
    }

    pub fn fetch_month(&self, year: i32, month: u32) -> Result<Vec<Article>> {
        if !(1..=12).contains(&month) {
            return Err(CorpusError::Precondition(format!("month {month} out of range")));
        }
        if !(2010..=2023).contains(&year) {
            return Err(CorpusError::Precondition(format!("year {year} outside 2010-2023")));
        }
        if self.api_key.trim().is_empty() && !self.transport.is_offline() {
            return Err(CorpusError::Credential {
                service: "nyt",
                detail: format!("{NYT_KEY_ENV} is not set"),
            });
        }
        let resp = send_checked(
            self.transport,
            &HttpRequest::get(self.month_url(year, month)),
            &self.retry,
            "nyt",
            &self.sleep,
        )?;
        let articles = parse_archive(&resp.body)?;
        log::info!("nyt {year}-{month:02}: {} articles", articles.len());
        Ok(articles)
    }
}

/// Parses an archive response. Documents that cannot be turned into an
/// article are skipped with a warning.
pub fn parse_archive(body: &str) -> Result<Vec<Article>> {
    let v: Value = serde_json::from_str(body).map_err(|e| CorpusError::Parse(format!("archive response: {e}")))?;
    let docs = v
        .pointer("/response/docs")
        .and_then(Value::as_array)
        .ok_or_else(|| CorpusError::Parse("archive response has no response.docs".into()))?;
    let mut out = Vec::with_capacity(docs.len());
    for (i, d) in docs.iter().enumerate() {
        match parse_doc(d) {
            Ok(a) => out.push(a),
            Err(why) => log::warn!("skipping archive document {i}: {why}"),
        }
    }
    Ok(out)
}

fn str_at<'v>(v: &'v Value, ptr: &str) -> Option<&'v str> {
    v.pointer(ptr).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty())
}

fn parse_doc(d: &Value) -> std::result::Result<Article, String> {
    let raw_id = str_at(d, "/_id").ok_or("missing _id")?;
    let id = format!("nyt:{}", raw_id.rsplit('/').next().unwrap_or(raw_id));
    let headline = str_at(d, "/headline/main").ok_or("missing headline")?;
    let pub_date = str_at(d, "/pub_date").ok_or("missing pub_date")?;
    let day: NaiveDate = pub_date
        .get(..10)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("bad pub_date {pub_date:?}"))?;
    let mut a = Article::new(id, Source::Nytimes, headline, day);
    a.abstract_text = ["/abstract", "/lead_paragraph", "/snippet"]
        .iter()
        .find_map(|p| str_at(d, p))
        .unwrap_or_default()
        .to_string();
    if let Some(kws) = d.get("keywords").and_then(Value::as_array) {
        for k in kws {
            if k.get("name").and_then(Value::as_str) == Some("glocations") {
                if let Some(v) = str_at(k, "/value") {
                    if !a.geo_keywords.iter().any(|g| g == v) {
                        a.geo_keywords.push(v.to_string());
                    }
                }
            }
        }
    }
    if let Some(media) = d.get("multimedia").and_then(Value::as_array) {
        for m in media {
            if let Some(u) = str_at(m, "/url") {
                let full = if u.starts_with("http") { u.to_string() } else { format!("{IMAGE_HOST}{u}") };
                if !a.image_urls.contains(&full) {
                    a.image_urls.push(full);
                }
            }
        }
    }
    if let Some(u) = str_at(d, "/web_url") {
        a.extra.insert("web_url".into(), Value::String(u.into()));
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_docs_and_skips_broken_ones() {
        let body = r#"{"response":{"docs":[
            {"_id":"nyt://article/abc","headline":{"main":"Flood in Town"},"pub_date":"2015-03-02T05:00:00+0000",
             "abstract":"Water rose.","keywords":[{"name":"glocations","value":"Kyiv (Ukraine)"},{"name":"subject","value":"Floods"}],
             "multimedia":[{"url":"images/2015/03/02/a.jpg"}],"web_url":"https://www.nytimes.com/x.html"},
            {"_id":"nyt://article/def","headline":{"main":""},"pub_date":"2015-03-02T05:00:00+0000"},
            {"_id":"nyt://article/ghi","headline":{"main":"No date"}}
        ]}}"#;
        let a = parse_archive(body).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].id, "nyt:abc");
        assert_eq!(a[0].geo_keywords, ["Kyiv (Ukraine)"]);
        assert_eq!(a[0].image_urls, ["https://static01.nyt.com/images/2015/03/02/a.jpg"]);
        assert_eq!(a[0].published_at, NaiveDate::from_ymd_opt(2015, 3, 2).unwrap());
        assert!(parse_archive("{}").is_err());
    }
}
