//! News articles, the line-delimited corpus store, and corpus variants.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_NEWS_CAPTIONS: usize = 5;

/// Flag recorded when the visualizable-event filter could not get a usable verdict.
pub const FLAG_FILTER_FAILED: &str = "filter-failed";
/// Flag recorded when caption generation produced nothing usable.
pub const FLAG_CAPTION_FAILED: &str = "caption-failed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Nytimes,
    Guardian,
}

impl Source {
    pub fn id_prefix(self) -> &'static str {
        match self {
            Source::Nytimes => "nyt:",
            Source::Guardian => "guardian:",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub source: Source,
    pub headline: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub published_at: NaiveDate,
    #[serde(default)]
    pub geo_keywords: Vec<String>,
    #[serde(default)]
    pub news_captions: Vec<String>,
    #[serde(default)]
    pub image_urls: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    /// Fields this version does not know about, carried through untouched.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Article {
    pub fn new(
        id: impl Into<String>,
        source: Source,
        headline: impl Into<String>,
        published_at: NaiveDate,
    ) -> Self {
        Article {
            id: id.into(),
            source,
            headline: headline.into(),
            abstract_text: String::new(),
            published_at,
            geo_keywords: Vec::new(),
            news_captions: Vec::new(),
            image_urls: Vec::new(),
            keep: None,
            flags: Vec::new(),
            extra: serde_json::Map::new(),
        }
    }

    pub fn add_flag(&mut self, flag: &str) {
        if !self.flags.iter().any(|f| f == flag) {
            self.flags.push(flag.to_owned());
        }
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty article id".into());
        }
        if self.news_captions.len() > MAX_NEWS_CAPTIONS {
            return Err(format!(
                "article {} has {} news captions (max {MAX_NEWS_CAPTIONS})",
                self.id,
                self.news_captions.len()
            ));
        }
        Ok(())
    }
}

/// In-memory corpus keyed by article id, kept sorted by id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    articles: Vec<Article>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(mut articles: Vec<Article>) -> Result<Self> {
        articles.sort_by(|a, b| a.id.cmp(&b.id));
        for a in &articles {
            a.validate().map_err(Error::invalid)?;
        }
        if let Some(w) = articles.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::invalid(format!("duplicate article id {}", w[0].id)));
        }
        let by_id = articles
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.clone(), i))
            .collect();
        Ok(Corpus { articles, by_id })
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Article> {
        self.by_id.get(id).map(|&i| &self.articles[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn into_articles(self) -> Vec<Article> {
        self.articles
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut articles = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let article: Article = serde_json::from_str(&line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            article.validate().map_err(|message| Error::Record {
                line: i + 1,
                message,
            })?;
            articles.push(article);
        }
        Corpus::new(articles)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_articles(path, &self.articles)
    }
}

/// Writes articles one JSON record per line, in the given order.
pub fn write_articles(path: &Path, articles: &[Article]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for a in articles {
        let line = serde_json::to_string(a).expect("article serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A named subset of the corpus: a publication cut-off plus explicit exclusions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusVariant {
    pub name: String,
    pub max_date: NaiveDate,
    #[serde(default)]
    pub excluded_article_ids: BTreeSet<String>,
}

impl CorpusVariant {
    pub fn admits(&self, article: &Article) -> bool {
        article.published_at <= self.max_date && !self.excluded_article_ids.contains(&article.id)
    }
}

/// Selects the variant's articles, sorted by id. Exclusions naming unknown ids are ignored.
pub fn apply_variant(store: &Corpus, variant: &CorpusVariant) -> Vec<Article> {
    store
        .articles()
        .iter()
        .filter(|a| variant.admits(a))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn art(id: &str, date: &str) -> Article {
        Article::new(id, Source::Nytimes, "h", date.parse().unwrap())
    }

    fn far_future() -> NaiveDate {
        NaiveDate::from_ymd_opt(9999, 12, 31).unwrap()
    }

    #[test]
    fn variant_drops_articles_after_cutoff() {
        let store = Corpus::new(vec![art("nyt:a", "2021-06-01"), art("nyt:b", "2022-01-01")]).unwrap();
        let v = CorpusVariant {
            name: "tara".into(),
            max_date: "2021-12-31".parse().unwrap(),
            excluded_article_ids: BTreeSet::new(),
        };
        let ids: Vec<_> = apply_variant(&store, &v).into_iter().map(|a| a.id).collect();
        assert_eq!(ids, vec!["nyt:a"]);
    }

    #[test]
    fn variant_identity_and_total_exclusion() {
        let store = Corpus::new(vec![art("b", "2015-01-01"), art("a", "2016-01-01")]).unwrap();
        let mut v = CorpusVariant {
            name: "all".into(),
            max_date: far_future(),
            excluded_article_ids: BTreeSet::new(),
        };
        let all = apply_variant(&store, &v);
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].id, "a");

        v.excluded_article_ids = ["a", "b", "not-in-store"].iter().map(|s| s.to_string()).collect();
        assert!(apply_variant(&store, &v).is_empty());
    }

    #[test]
    fn variant_is_idempotent() {
        let store = Corpus::new(vec![art("a", "2015-01-01"), art("b", "2023-01-01"), art("c", "2019-01-01")]).unwrap();
        let v = CorpusVariant {
            name: "v".into(),
            max_date: "2021-12-31".parse().unwrap(),
            excluded_article_ids: ["c".to_string()].into(),
        };
        let once = apply_variant(&store, &v);
        let twice = apply_variant(&Corpus::new(once.clone()).unwrap(), &v);
        assert_eq!(once, twice);
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Corpus::new(vec![art("a", "2015-01-01"), art("a", "2015-01-02")]).is_err());
    }

    #[test]
    fn unknown_fields_survive_round_trip() {
        let line = r#"{"id":"nyt:1","source":"nytimes","headline":"H","abstract":"A","published_at":"2015-03-02","geo_keywords":["Kyiv"],"news_captions":[],"image_urls":[],"section":"World","word_count":812}"#;
        let a: Article = serde_json::from_str(line).unwrap();
        assert_eq!(a.extra.get("section").unwrap(), "World");
        let back = serde_json::to_string(&a).unwrap();
        let again: Article = serde_json::from_str(&back).unwrap();
        assert_eq!(a, again);
        assert!(back.contains(r#""word_count":812"#));
    }

    #[test]
    fn too_many_captions_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut a = art("a", "2015-01-01");
        a.news_captions = vec!["c".into(); 6];
        fs::write(&path, serde_json::to_string(&a).unwrap() + "\n").unwrap();
        assert!(matches!(Corpus::load(&path), Err(Error::Record { line: 1, .. })));
    }

    #[test]
    fn store_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        let mut a = art("x", "2015-01-01");
        a.geo_keywords = vec!["Paris (France)".into()];
        a.keep = Some(true);
        Corpus::new(vec![a, art("w", "2014-01-01")]).unwrap().save(&p1).unwrap();
        Corpus::load(&p1).unwrap().save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }
}
