//! Corpus assembly: month ranges, query files, and merging fetched
//! articles into one id-sorted, duplicate-free list.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use nrec_core::article::Article;

use crate::error::{CorpusError, Result};
use crate::guardian::{GuardianClient, GuardianQuery};
use crate::keywords::KeywordProvider;
use crate::nyt::NytClient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn next(self) -> Self {
        if self.month == 12 {
            YearMonth { year: self.year + 1, month: 1 }
        } else {
            YearMonth { month: self.month + 1, ..self }
        }
    }

    /// Every month from `from` to `to`, both included.
    pub fn range(from: YearMonth, to: YearMonth) -> Vec<YearMonth> {
        let mut out = Vec::new();
        let mut m = from;
        while m <= to {
            out.push(m);
            m = m.next();
        }
        out
    }
}

impl FromStr for YearMonth {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CorpusError::Precondition(format!("expected YYYY-MM, got {s:?}"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        let ym = YearMonth {
            year: y.parse().map_err(|_| bad())?,
            month: m.parse().map_err(|_| bad())?,
        };
        if !(1..=12).contains(&ym.month) {
            return Err(bad());
        }
        Ok(ym)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Union of article lists: first occurrence of an id wins, output sorted by id.
pub fn merge_articles(lists: impl IntoIterator<Item = Vec<Article>>) -> Vec<Article> {
    let mut by_id: BTreeMap<String, Article> = BTreeMap::new();
    for list in lists {
        for a in list {
            by_id.entry(a.id.clone()).or_insert(a);
        }
    }
    by_id.into_values().collect()
}

pub fn ingest_nyt(client: &NytClient<'_>, from: YearMonth, to: YearMonth) -> Result<Vec<Article>> {
    if from > to {
        return Err(CorpusError::Precondition(format!("empty month range {from}..{to}")));
    }
    let mut lists = Vec::new();
    for m in YearMonth::range(from, to) {
        lists.push(client.fetch_month(m.year, m.month)?);
    }
    Ok(merge_articles(lists))
}

pub fn ingest_guardian(client: &GuardianClient<'_>, queries: &[GuardianQuery]) -> Result<Vec<Article>> {
    let mut lists = Vec::new();
    for q in queries {
        lists.push(client.search(q)?);
    }
    Ok(merge_articles(lists))
}

/// Reads one JSON query object per line; blank lines are skipped.
pub fn read_queries(path: &Path) -> Result<Vec<GuardianQuery>> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::Parse(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// One search query per (date, caption) pair, with keywords from `provider`.
pub fn queries_from_captions(
    items: &[(Option<NaiveDate>, String)],
    provider: &dyn KeywordProvider,
) -> Vec<GuardianQuery> {
    items
        .iter()
        .map(|(date, caption)| GuardianQuery {
            date: *date,
            keywords: provider.keywords(caption),
        })
        .filter(|q| q.date.is_some() || !q.keywords.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keywords::CapitalizedPhrases;
    use nrec_core::article::Source;

    #[test]
    fn month_range_crosses_years() {
        let r = YearMonth::range("2019-11".parse().unwrap(), "2020-02".parse().unwrap());
        let s: Vec<String> = r.iter().map(ToString::to_string).collect();
        assert_eq!(s, ["2019-11", "2019-12", "2020-01", "2020-02"]);
        assert!("2020-13".parse::<YearMonth>().is_err());
        assert!("2020".parse::<YearMonth>().is_err());
    }

    #[test]
    fn merge_dedups_and_sorts() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let a = |id: &str, h: &str| Article::new(id, Source::Guardian, h, d);
        let m = merge_articles([vec![a("guardian:b", "first"), a("guardian:a", "x")], vec![a("guardian:b", "second")]]);
        assert_eq!(m.iter().map(|x| x.id.as_str()).collect::<Vec<_>>(), ["guardian:a", "guardian:b"]);
        assert_eq!(m[1].headline, "first");
    }

    #[test]
    fn caption_queries_skip_empty() {
        let items = vec![
            (None, "a quiet street".to_string()),
            (NaiveDate::from_ymd_opt(2020, 1, 15), "smoke over Sydney".to_string()),
        ];
        let q = queries_from_captions(&items, &CapitalizedPhrases::default());
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].keywords, ["Sydney"]);
    }
}
