//! Regenerates the synthetic recordings under `tests/fixtures` by running
//! the real clients in record mode against a canned in-process server.
//!
//! cargo run -p nrec-corpus --example make_fixtures -- crates/corpus/tests/fixtures

use std::path::PathBuf;

use nrec_corpus::http::{HttpRequest, HttpResponse, Transport};
use nrec_corpus::llm::parse_filter_response;
use nrec_corpus::{
    FixtureMode, FixtureTransport, GuardianClient, GuardianQuery, LlmClient, LlmEndpointConfig, NytClient, Result,
};
use nrec_core::article::{Article, Source};
use serde_json::{json, Value};

fn nyt_doc(id: &str, day: u32, headline: &str, abs: &str, places: &[&str], image: Option<&str>) -> Value {
    json!({
        "_id": format!("nyt://article/{id}"),
        "headline": {"main": headline, "kicker": null},
        "pub_date": format!("2015-03-{day:02}T09:30:00+0000"),
        "abstract": abs,
        "lead_paragraph": "",
        "keywords": places.iter().map(|p| json!({"name": "glocations", "value": p, "rank": 1}))
            .chain(std::iter::once(json!({"name": "subject", "value": "News", "rank": 2})))
            .collect::<Vec<_>>(),
        "multimedia": image.map(|u| vec![json!({"url": u, "subtype": "xlarge"})]).unwrap_or_default(),
        "web_url": format!("https://www.nytimes.com/2015/03/{day:02}/world/{id}.html"),
    })
}

fn nyt_march_2015() -> String {
    let docs = vec![
        nyt_doc("a1f0", 14, "Cyclone Flattens Homes Across Vanuatu", "Winds of more than 150 miles an hour tore through Port Vila.", &["Vanuatu", "Port Vila (Vanuatu)"], Some("images/2015/03/14/world/vanuatu.jpg")),
        nyt_doc("b2e1", 24, "Passenger Jet Crashes in the French Alps", "All 150 people aboard were killed when the plane went down near Digne.", &["Alps", "France"], Some("images/2015/03/24/world/alps.jpg")),
        nyt_doc("c3d2", 28, "Long Lines as Nigerians Vote in Presidential Election", "Voters queued for hours in Lagos and Kano.", &["Nigeria", "Lagos (Nigeria)"], None),
        nyt_doc("d4c3", 18, "Fed Signals Patience on Raising Interest Rates", "The central bank removed a word from its statement.", &[], None),
        nyt_doc("e5b4", 7, "Marchers Retrace Selma Bridge Crossing 50 Years On", "Tens of thousands crossed the Edmund Pettus Bridge.", &["Selma (Ala)", "Alabama"], Some("https://static01.nyt.com/images/2015/03/07/us/selma.jpg")),
        // malformed: no headline, must be skipped by the parser
        json!({"_id": "nyt://article/f6a5", "headline": {"main": ""}, "pub_date": "2015-03-02T00:00:00+0000"}),
        nyt_doc("a1f0", 14, "Cyclone Flattens Homes Across Vanuatu", "duplicate of the first document", &[], None),
    ];
    json!({"status": "OK", "response": {"meta": {"hits": docs.len()}, "docs": docs}}).to_string()
}

fn guardian_result(id: &str, date: &str, headline: &str, trail: &str, tags: &[(&str, &str)]) -> Value {
    json!({
        "id": id,
        "type": "article",
        "webTitle": headline,
        "webPublicationDate": format!("{date}T06:00:00Z"),
        "webUrl": format!("https://www.theguardian.com/{id}"),
        "fields": {"headline": headline, "trailText": trail, "thumbnail": format!("https://media.guim.co.uk/{}/500.jpg", id.replace('/', "-"))},
        "tags": tags.iter().map(|(tid, title)| json!({"id": tid, "type": "keyword", "webTitle": title})).collect::<Vec<_>>(),
    })
}

fn guardian_bushfire() -> String {
    let towns = [
        "Mallacoota", "Batemans Bay", "Cobargo", "Eden", "Bairnsdale", "Orbost", "Nowra", "Ulladulla", "Bega",
        "Merimbula", "Kangaroo Island", "Canberra", "Cooma", "Tumut", "Batlow", "Moruya", "Narooma", "Tathra",
        "Omeo", "Lakes Entrance", "Milton", "Mogo", "Tomerong",
    ];
    let results: Vec<Value> = towns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let day = 12 + (i % 7) as u32;
            guardian_result(
                &format!("australia-news/2020/jan/{day}/bushfire-{}", t.to_lowercase().replace(' ', "-")),
                &format!("2020-01-{day:02}"),
                &format!("Bushfire threat returns to {t} as temperatures climb"),
                &format!("Residents of <strong>{t}</strong> told to prepare to leave"),
                &[("australia-news/bushfires", "Bushfires"), ("australia-news/new-south-wales", "New South Wales"), ("world/australia", "Australia")],
            )
        })
        .collect();
    json!({"response": {"status": "ok", "total": results.len(), "pageSize": 20, "results": results}}).to_string()
}

fn guardian_date_only() -> String {
    let results = vec![
        guardian_result("world/2019/jul/17/hong-kong-march", "2019-07-17", "Hong Kong protesters march on government offices", "Hundreds of thousands take to the streets", &[("world/hong-kong", "Hong Kong")]),
        guardian_result("world/2019/jul/20/moon-landing-anniversary", "2019-07-20", "Crowds gather at Cape Canaveral for moon landing anniversary", "Fifty years after Apollo 11", &[("us-news/florida", "Florida")]),
        guardian_result("business/2019/jul/22/ftse-update", "2019-07-22", "FTSE edges higher as investors await rate decision", "Markets steady", &[("business/stock-markets", "Stock markets")]),
        guardian_result("uk-news/2019/jul/23/heatwave-london", "2019-07-23", "Londoners seek shade as heatwave breaks records", "Temperatures pass 35C", &[("uk-news/london", "London")]),
    ];
    json!({"response": {"status": "ok", "total": results.len(), "results": results}}).to_string()
}

/// Scripted chat responses, keyed by the headline in the prompt.
pub const LLM_SCRIPT: [(&str, &str, &str); 11] = [
    ("filter", "On nearly every front, President Obama's goal of lower deficits is slipping away", "Category 2"),
    ("filter", "Cyclone Flattens Homes Across Vanuatu", "Category 1"),
    ("filter", "Fed Signals Patience on Raising Interest Rates", "category 2."),
    ("filter", "Something Happened Somewhere", "I cannot tell from the headline."),
    ("filter", "Passenger Jet Crashes in the French Alps", "Category 1"),
    ("filter", "Long Lines as Nigerians Vote in Presidential Election", "Category 1"),
    ("filter", "Marchers Retrace Selma Bridge Crossing 50 Years On", "Category 1"),
    ("caption", "Passenger Jet Crashes in the French Alps", r#"["Rescue helicopters fly over the crash site in the French Alps.", "Debris scattered across a steep mountain slope.", "Relatives arrive at the airport in Barcelona.", "Gendarmes block a mountain road near Digne.", "Candles and flowers at a memorial in a village below the peaks."]"#),
    ("caption", "Cyclone Flattens Homes Across Vanuatu", r#"["Residents walk past flattened houses in Port Vila after the cyclone.", "Palm trees bent by the wind line a flooded road.", "Aid workers unload supplies from a military plane.", "A family sits among the remains of their home.", "Aerial view of damaged villages on the coast of Efate."]"#),
    ("caption", "Marchers Retrace Selma Bridge Crossing 50 Years On", r#"Here are the captions:
["Marchers cross the Edmund Pettus Bridge in Selma.", "Veterans of the 1965 march link arms at the front.", "A crowd fills the street leading to the bridge.", "A girl holds a sign reading 'we shall overcome'.", "Speakers address marchers from a stage in Selma.", "Police officers watch from the far side of the bridge.", "Marchers sing as they reach the top of the bridge."]"#),
    ("caption", "Long Lines as Nigerians Vote in Presidential Election", "no list here"),
];

struct Canned {
    nyt: String,
    bushfire: String,
    date_only: String,
}

fn chat(content: &str) -> String {
    json!({"id": "chatcmpl-fixture", "object": "chat.completion", "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]}).to_string()
}

impl Transport for Canned {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse> {
        let ok = |body: &str| Ok(HttpResponse { status: 200, body: body.to_string() });
        if req.url.contains("/archive/v1/2015/3.json") {
            return ok(&self.nyt);
        }
        if req.url.contains("guardianapis") {
            return if req.url.contains("bushfire") { ok(&self.bushfire) } else { ok(&self.date_only) };
        }
        let body: Value = serde_json::from_str(req.body.as_deref().unwrap_or("{}")).unwrap();
        let prompt = body.pointer("/messages/0/content").and_then(Value::as_str).unwrap_or_default();
        let kind = if prompt.contains("Category 1:") { "filter" } else { "caption" };
        for (k, headline, reply) in LLM_SCRIPT {
            if k == kind && prompt.contains(&format!("Headline: {headline}\n")) {
                return ok(&chat(reply));
            }
        }
        Ok(HttpResponse { status: 404, body: String::new() })
    }
}

fn main() -> Result<()> {
    let dir: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "crates/corpus/tests/fixtures".into()).into();
    let canned = Canned { nyt: nyt_march_2015(), bushfire: guardian_bushfire(), date_only: guardian_date_only() };

    let http = FixtureTransport::new(dir.join("http"), FixtureMode::Record, Box::new(canned));
    NytClient::new(&http, "recording-key").fetch_month(2015, 3)?;
    let g = GuardianClient::new(&http, "recording-key");
    g.search(&GuardianQuery { date: chrono::NaiveDate::from_ymd_opt(2020, 1, 15), keywords: vec!["bushfire".into(), "Australia".into()] })?;
    g.search(&GuardianQuery { date: chrono::NaiveDate::from_ymd_opt(2019, 7, 20), keywords: vec![] })?;

    let canned = Canned { nyt: String::new(), bushfire: String::new(), date_only: String::new() };
    let cfg = LlmEndpointConfig {
        base_url: "http://llm.invalid/v1".into(),
        model_name: "fixture-model".into(),
        ..Default::default()
    };
    let llm = LlmClient::with_transport(cfg, Box::new(FixtureTransport::new(dir.join("llm"), FixtureMode::Record, Box::new(canned))), String::new())?;
    let day = chrono::NaiveDate::from_ymd_opt(2015, 3, 14).unwrap();
    for (kind, headline, reply) in LLM_SCRIPT {
        let mut a = Article::new("nyt:x", Source::Nytimes, headline, day);
        if kind == "filter" {
            let got = llm.filter_visualizable(&mut a)?;
            assert_eq!(Some(got), parse_filter_response(reply).or(Some(false)));
        } else {
            a.keep = Some(true);
            llm.generate_news_captions(&mut a)?;
        }
    }
    println!("fixtures written under {}", dir.display());
    Ok(())
}
