use std::path::PathBuf;
use std::sync::atomic::{AtomicU32, Ordering};
use std::time::Duration;

use chrono::NaiveDate;
use nrec_core::article::{write_articles, Article, Source, FLAG_CAPTION_FAILED, FLAG_FILTER_FAILED};
use nrec_corpus::http::{HttpRequest, HttpResponse, Transport};
use nrec_corpus::{
    ingest_guardian, ingest_nyt, CorpusError, FixtureMode, FixtureTransport, GuardianClient, GuardianQuery,
    LlmClient, LlmEndpointConfig, NytClient, RetryPolicy,
};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn no_sleep(_: Duration) {}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn llm() -> LlmClient {
    let cfg = LlmEndpointConfig {
        base_url: "http://llm.invalid/v1".into(),
        model_name: "fixture-model".into(),
        fixture_dir: Some(fixtures().join("llm")),
        ..Default::default()
    };
    let mut c = LlmClient::from_config(cfg).unwrap();
    c.sleep = no_sleep;
    c
}

fn article(headline: &str) -> Article {
    Article::new("nyt:t", Source::Nytimes, headline, ymd(2015, 3, 14))
}

/// Returns a fixed status, counting calls.
struct Status(u16, AtomicU32);

impl Transport for Status {
    fn send(&self, _: &HttpRequest) -> nrec_corpus::Result<HttpResponse> {
        self.1.fetch_add(1, Ordering::SeqCst);
        Ok(HttpResponse { status: self.0, body: String::new() })
    }
}

#[test]
fn nyt_month_replays_offline() {
    let t = FixtureTransport::replay(fixtures().join("http"));
    // the key never reaches the fixture hash, so any value replays
    let c = NytClient::new(&t, "");
    let a = c.fetch_month(2015, 3).unwrap();
    // one malformed doc skipped; the duplicate survives until merge
    assert_eq!(a.len(), 6);
    assert!(a.iter().all(|x| x.id.starts_with("nyt:") && x.published_at.format("%Y-%m").to_string() == "2015-03"));
    let v = a.iter().find(|x| x.id == "nyt:a1f0").unwrap();
    assert_eq!(v.geo_keywords, ["Vanuatu", "Port Vila (Vanuatu)"]);
    assert_eq!(v.image_urls, ["https://static01.nyt.com/images/2015/03/14/world/vanuatu.jpg"]);

    let merged = ingest_nyt(&c, "2015-03".parse().unwrap(), "2015-03".parse().unwrap()).unwrap();
    assert_eq!(merged.len(), 5);
    assert!(merged.windows(2).all(|w| w[0].id < w[1].id));
}

#[test]
fn guardian_keyword_query_caps_at_twenty() {
    let t = FixtureTransport::replay(fixtures().join("http"));
    let c = GuardianClient::new(&t, "");
    let q = GuardianQuery { date: Some(ymd(2020, 1, 15)), keywords: vec!["bushfire".into(), "Australia".into()] };
    let a = c.search(&q).unwrap();
    assert_eq!(a.len(), 20);
    assert!(a.iter().all(|x| x.source == Source::Guardian && x.id.starts_with("guardian:")));
    assert_eq!(a[0].geo_keywords, ["Australia"]);
}

#[test]
fn guardian_date_only_query_stays_near_date() {
    let t = FixtureTransport::replay(fixtures().join("http"));
    let c = GuardianClient::new(&t, "");
    let day = ymd(2019, 7, 20);
    let a = c.search(&GuardianQuery { date: Some(day), keywords: vec![] }).unwrap();
    assert!(!a.is_empty());
    assert!(a.iter().all(|x| (x.published_at - day).num_days().abs() <= 3));
}

#[test]
fn empty_guardian_query_is_a_precondition_error() {
    let t = FixtureTransport::replay(fixtures().join("http"));
    let c = GuardianClient::new(&t, "k");
    let e = c.search(&GuardianQuery { date: None, keywords: vec![] }).unwrap_err();
    assert!(matches!(e, CorpusError::Precondition(_)));
}

#[test]
fn bad_month_and_year_rejected_before_io() {
    let t = Status(200, AtomicU32::new(0));
    let c = NytClient::new(&t, "k");
    assert!(matches!(c.fetch_month(2015, 13), Err(CorpusError::Precondition(_))));
    assert!(matches!(c.fetch_month(2015, 0), Err(CorpusError::Precondition(_))));
    assert!(matches!(c.fetch_month(2009, 5), Err(CorpusError::Precondition(_))));
    assert_eq!(t.1.load(Ordering::SeqCst), 0);
}

#[test]
fn missing_key_and_rejected_key_are_credential_errors() {
    let t = Status(401, AtomicU32::new(0));
    assert!(matches!(NytClient::new(&t, "").fetch_month(2015, 3), Err(CorpusError::Credential { .. })));
    assert_eq!(t.1.load(Ordering::SeqCst), 0);
    assert!(matches!(NytClient::new(&t, "bad").fetch_month(2015, 3), Err(CorpusError::Credential { .. })));
    let g = GuardianClient::new(&t, "bad");
    let q = GuardianQuery { date: Some(ymd(2020, 1, 1)), keywords: vec![] };
    assert!(matches!(g.search(&q), Err(CorpusError::Credential { service: "guardian", .. })));
}

#[test]
fn rate_limit_backs_off_then_gives_up() {
    static SLEPT: AtomicU32 = AtomicU32::new(0);
    fn count_sleep(d: Duration) {
        SLEPT.fetch_add(d.as_secs() as u32, Ordering::SeqCst);
    }
    let t = Status(429, AtomicU32::new(0));
    let mut c = NytClient::new(&t, "k");
    c.sleep = count_sleep;
    c.retry = RetryPolicy { max_retries: 3, base_delay: Duration::from_secs(1), max_delay: Duration::from_secs(60) };
    match c.fetch_month(2015, 3) {
        Err(CorpusError::RateLimited { attempts, url }) => {
            assert_eq!(attempts, 4);
            assert!(url.contains("api-key=REDACTED") && !url.contains("=k"));
        }
        other => panic!("expected rate limit, got {other:?}"),
    }
    assert_eq!(t.1.load(Ordering::SeqCst), 4);
    assert_eq!(SLEPT.load(Ordering::SeqCst), 1 + 2 + 4);
}

#[test]
fn replay_miss_names_the_expected_fixture() {
    let t = FixtureTransport::replay(fixtures().join("http"));
    let e = NytClient::new(&t, "").fetch_month(2016, 1).unwrap_err();
    match e {
        CorpusError::FixtureMissing { url, path } => {
            assert!(url.ends_with("2016/1.json?api-key=REDACTED"));
            assert!(path.extension().is_some_and(|x| x == "json"));
        }
        other => panic!("expected fixture miss, got {other:?}"),
    }
}

#[test]
fn filter_verdicts_from_fixture_llm() {
    let c = llm();
    let mut a = article("Cyclone Flattens Homes Across Vanuatu");
    assert!(c.filter_visualizable(&mut a).unwrap());
    assert_eq!(a.keep, Some(true));

    let mut b = article("Fed Signals Patience on Raising Interest Rates");
    assert!(!c.filter_visualizable(&mut b).unwrap());
    assert!(!b.has_flag(FLAG_FILTER_FAILED));

    let mut o = article("On nearly every front, President Obama's goal of lower deficits is slipping away");
    assert!(!c.filter_visualizable(&mut o).unwrap());

    let mut u = article("Something Happened Somewhere");
    assert!(!c.filter_visualizable(&mut u).unwrap());
    assert_eq!(u.keep, Some(false));
    assert!(u.has_flag(FLAG_FILTER_FAILED));

    let mut empty = article(" ");
    assert!(matches!(c.filter_visualizable(&mut empty), Err(CorpusError::Precondition(_))));
}

#[test]
fn captions_from_fixture_llm() {
    let c = llm();
    let mut a = article("Cyclone Flattens Homes Across Vanuatu");
    a.keep = Some(true);
    assert_eq!(c.generate_news_captions(&mut a).unwrap().len(), 5);
    assert!(a.news_captions[0].contains("Port Vila"));

    let mut seven = article("Marchers Retrace Selma Bridge Crossing 50 Years On");
    seven.keep = Some(true);
    let caps = c.generate_news_captions(&mut seven).unwrap();
    assert_eq!(caps.len(), 5);
    assert_eq!(caps[0], "Marchers cross the Edmund Pettus Bridge in Selma.");

    let mut none = article("Long Lines as Nigerians Vote in Presidential Election");
    none.keep = Some(true);
    assert!(c.generate_news_captions(&mut none).unwrap().is_empty());
    assert!(none.has_flag(FLAG_CAPTION_FAILED));
    assert!(none.news_captions.is_empty());

    let mut dropped = article("Cyclone Flattens Homes Across Vanuatu");
    dropped.keep = Some(false);
    assert!(matches!(c.generate_news_captions(&mut dropped), Err(CorpusError::Precondition(_))));
}

#[test]
fn unrecorded_llm_prompt_is_fatal_not_a_silent_drop() {
    let c = llm();
    let mut a = article("A headline nobody recorded");
    assert!(matches!(c.filter_visualizable(&mut a), Err(CorpusError::FixtureMissing { .. })));
}

#[test]
fn llm_request_carries_key_only_in_header() {
    let cfg = LlmEndpointConfig { base_url: "http://h/v1/".into(), ..Default::default() };
    let c = LlmClient::with_transport(cfg, Box::new(Status(200, AtomicU32::new(0))), "sk-test".into()).unwrap();
    let r = c.request_for("hi");
    assert_eq!(r.url, "http://h/v1/chat/completions");
    assert!(!r.body.as_ref().unwrap().contains("sk-test"));
    assert!(r.headers.iter().any(|(k, v)| k == "Authorization" && v == "Bearer sk-test"));
}

#[test]
fn reingestion_from_fixtures_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let t = FixtureTransport::replay(fixtures().join("http"));
        let nyt = ingest_nyt(&NytClient::new(&t, ""), "2015-03".parse().unwrap(), "2015-03".parse().unwrap()).unwrap();
        let g = ingest_guardian(
            &GuardianClient::new(&t, ""),
            &[
                GuardianQuery { date: Some(ymd(2020, 1, 15)), keywords: vec!["bushfire".into(), "Australia".into()] },
                GuardianQuery { date: Some(ymd(2019, 7, 20)), keywords: vec![] },
            ],
        )
        .unwrap();
        let c = llm();
        let all = nrec_corpus::merge_articles([nyt, g]);
        let filtered = nrec_corpus::enrich_all(all, 3, |a| {
            // only recorded headlines go through the fixture LLM
            if a.id == "nyt:a1f0" {
                c.filter_visualizable(a)?;
                c.generate_news_captions(a)?;
            }
            Ok(())
        })
        .unwrap();
        let p = dir.path().join(name);
        write_articles(&p, &filtered).unwrap();
        std::fs::read(p).unwrap()
    };
    let first = run("a.jsonl");
    assert_eq!(first, run("b.jsonl"));
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().count(), 5 + 20 + 4);
    assert!(text.contains("\"keep\":true"));
}

#[test]
fn cache_mode_records_then_replays() {
    let dir = tempfile::tempdir().unwrap();
    let inner = Status(200, AtomicU32::new(0));
    struct Shared<'a>(&'a Status);
    impl Transport for Shared<'_> {
        fn send(&self, r: &HttpRequest) -> nrec_corpus::Result<HttpResponse> {
            self.0.send(r)
        }
    }
    // FixtureTransport owns its inner transport, so leak a reference for the test
    let inner: &'static Status = Box::leak(Box::new(inner));
    let t = FixtureTransport::new(dir.path(), FixtureMode::Cache, Box::new(Shared(inner)));
    let req = HttpRequest::get("https://example.com/x?api-key=SECRET");
    t.send(&req).unwrap();
    t.send(&req).unwrap();
    assert_eq!(inner.1.load(Ordering::SeqCst), 1);
    let text = std::fs::read_to_string(t.path_for(&req)).unwrap();
    assert!(!text.contains("SECRET"));
}
