use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::Args;
use nrec_core::article::{Corpus, CorpusVariant, FLAG_CAPTION_FAILED};
use nrec_corpus::http::Transport;
use nrec_corpus::ingest::read_queries;
use nrec_corpus::{
    enrich_all, merge_articles, FixtureMode, FixtureTransport, GuardianClient, LiveTransport, LlmClient,
    LlmEndpointConfig, NytClient, YearMonth,
};
use serde_json::json;

use crate::output::{emit, invalid};
use crate::{Ctx, FixtureModeArg, LlmArgs, NetArgs};

fn transport(net: &NetArgs) -> Box<dyn Transport> {
    let live = || LiveTransport::new(Duration::from_secs(net.timeout_secs));
    match (&net.fixtures, net.fixture_mode) {
        (None, _) => Box::new(live()),
        (Some(d), FixtureModeArg::Replay) => Box::new(FixtureTransport::replay(d)),
        (Some(d), FixtureModeArg::Record) => Box::new(FixtureTransport::new(d, FixtureMode::Record, Box::new(live()))),
        (Some(d), FixtureModeArg::Cache) => Box::new(FixtureTransport::new(d, FixtureMode::Cache, Box::new(live()))),
    }
}

fn corpus_path<'a>(ctx: &'a Ctx, out: Option<&'a PathBuf>) -> Result<&'a Path> {
    match out {
        Some(p) => Ok(p),
        None => Ok(ctx.cfg.require_path("corpus_path", &ctx.cfg.corpus_path)?),
    }
}

/// Merges fetched articles into the corpus file; existing records win, so
/// enrichment already done is kept.
fn merge_into(ctx: &Ctx, path: &Path, fetched: Vec<nrec_core::article::Article>) -> Result<()> {
    let fetched_n = fetched.len();
    let existing = if path.exists() { Corpus::load(path)?.into_articles() } else { Vec::new() };
    let before = existing.len();
    let corpus = Corpus::new(merge_articles([existing, fetched]))?;
    corpus.save(path)?;
    let added = corpus.len() - before;
    emit(
        ctx,
        format!("fetched {fetched_n} articles, {added} new, corpus now {} ({})", corpus.len(), path.display()),
        json!({"fetched": fetched_n, "added": added, "total": corpus.len(), "path": path}),
    );
    Ok(())
}

pub fn ingest_nyt(ctx: &Ctx, from: &str, to: &str, net: &NetArgs) -> Result<()> {
    let (from, to): (YearMonth, YearMonth) = (from.parse()?, to.parse()?);
    let path = corpus_path(ctx, net.out.as_ref())?;
    let t = transport(net);
    let key = std::env::var(nrec_corpus::nyt::NYT_KEY_ENV).unwrap_or_default();
    let client = NytClient::new(t.as_ref(), key);
    let articles = nrec_corpus::ingest_nyt(&client, from, to)?;
    merge_into(ctx, path, articles)
}

pub fn ingest_guardian(ctx: &Ctx, queries: &Path, net: &NetArgs) -> Result<()> {
    let qs = read_queries(queries)?;
    let path = corpus_path(ctx, net.out.as_ref())?;
    let t = transport(net);
    let key = std::env::var(nrec_corpus::guardian::GUARDIAN_KEY_ENV).unwrap_or_default();
    let client = GuardianClient::new(t.as_ref(), key);
    let articles = nrec_corpus::ingest_guardian(&client, &qs)?;
    merge_into(ctx, path, articles)
}

fn llm_client(a: &LlmArgs) -> Result<LlmClient> {
    let cfg = LlmEndpointConfig {
        base_url: a.llm_base_url.clone(),
        model_name: a.llm_model.clone(),
        api_key_env_var: a.llm_key_env.clone(),
        temperature: a.llm_temperature,
        timeout_secs: a.llm_timeout_secs,
        fixture_dir: a.llm_fixtures.clone(),
    };
    Ok(LlmClient::from_config(cfg)?)
}

pub fn filter(ctx: &Ctx, a: &LlmArgs) -> Result<()> {
    let path = corpus_path(ctx, None)?;
    let client = llm_client(a)?;
    let articles = Corpus::load(path)?.into_articles();
    let out = enrich_all(articles, a.workers, |art| {
        if a.redo || art.keep.is_none() {
            client.filter_visualizable(art)?;
        }
        Ok(())
    })?;
    let kept = out.iter().filter(|x| x.keep == Some(true)).count();
    let failed = out.iter().filter(|x| x.has_flag(nrec_core::article::FLAG_FILTER_FAILED)).count();
    let total = out.len();
    Corpus::new(out)?.save(path)?;
    emit(
        ctx,
        format!("{kept} of {total} articles kept ({failed} filter failures)"),
        json!({"kept": kept, "total": total, "filter_failed": failed}),
    );
    Ok(())
}

pub fn caption(ctx: &Ctx, a: &LlmArgs) -> Result<()> {
    let path = corpus_path(ctx, None)?;
    let client = llm_client(a)?;
    let articles = Corpus::load(path)?.into_articles();
    let out = enrich_all(articles, a.workers, |art| {
        let todo = art.keep == Some(true)
            && (a.redo || (art.news_captions.is_empty() && !art.has_flag(FLAG_CAPTION_FAILED)));
        if todo {
            client.generate_news_captions(art)?;
        }
        Ok(())
    })?;
    let captioned = out.iter().filter(|x| !x.news_captions.is_empty()).count();
    let failed = out.iter().filter(|x| x.has_flag(FLAG_CAPTION_FAILED)).count();
    Corpus::new(out)?.save(path)?;
    emit(
        ctx,
        format!("{captioned} articles have captions ({failed} caption failures)"),
        json!({"captioned": captioned, "caption_failed": failed}),
    );
    Ok(())
}

#[derive(Args)]
pub struct VariantArgs {
    /// Latest publication date admitted, YYYY-MM-DD.
    #[arg(long)]
    max_date: String,
    /// File of article ids to exclude, one per line ('#' comments allowed).
    #[arg(long)]
    exclude: Option<PathBuf>,
    #[arg(long, default_value = "variant")]
    name: String,
    /// Where to write the variant (default: config variant_path).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn variant(ctx: &Ctx, a: &VariantArgs) -> Result<()> {
    let max_date: NaiveDate = a
        .max_date
        .parse()
        .map_err(|_| invalid(format!("--max-date: expected YYYY-MM-DD, got {:?}", a.max_date)))?;
    let mut excluded = BTreeSet::new();
    if let Some(p) = &a.exclude {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        excluded.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from),
        );
    }
    let v = CorpusVariant { name: a.name.clone(), max_date, excluded_article_ids: excluded };
    let out = match &a.out {
        Some(p) => p.as_path(),
        None => ctx.cfg.require_path("variant_path", &ctx.cfg.variant_path)?,
    };
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    let admitted = match &ctx.cfg.corpus_path {
        Some(p) if p.exists() => Some(nrec_core::article::apply_variant(&Corpus::load(p)?, &v).len()),
        _ => None,
    };
    emit(
        ctx,
        match admitted {
            Some(n) => format!("variant {} written to {}: {n} articles admitted", v.name, out.display()),
            None => format!("variant {} written to {}", v.name, out.display()),
        },
        json!({"name": v.name, "path": out, "excluded": v.excluded_article_ids.len(), "admitted": admitted}),
    );
    Ok(())
}
