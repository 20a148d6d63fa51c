use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Args, ValueEnum};
use nrec_core::article::{Corpus, CorpusVariant};
use nrec_core::biencoder::HeadPair;
use nrec_core::cluster_event::event_template;
use nrec_core::config::{Config, IndexField};
use nrec_core::embedstore::{caption_row_id, CaptionIndex, EmbeddingMatrix};
use nrec_core::labeling::{load_images, save_images, ImageRecord, LabelStore, Split};
use nrec_core::manifest::{embed_fake, read_manifest, write_manifest, EntryKind, ManifestEntry};
use nrec_core::metrics::Gazetteer;
use nrec_core::pipeline::{
    candidate_clusters, evaluate_run, render_evidence_prompt, results_from_jsonl, results_to_jsonl, train_event_stage,
    train_heads, train_location_stage, Engine, Models, PromptTask, QueryParams, TrainInputs,
};
use nrec_core::rerank_loc::{location_template, UNKNOWN_LOCATION_TEMPLATE};
use nrec_core::synthetic::{World, WorldSpec};
use nrec_core::templates::{template_id, template_manifest, TemplateCache, TemplateEncoder};
use nrec_core::xenc::{CrossScorer, EVT_MAGIC, LOC_MAGIC};
use serde_json::json;

use crate::output::{emit, invalid};
use crate::Ctx;

fn path<'a>(cfg: &'a Config, key: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
    Ok(cfg.require_path(key, p)?)
}

/// The corpus with the configured variant applied.
fn load_corpus(cfg: &Config) -> Result<Corpus> {
    let store = Corpus::load(path(cfg, "corpus_path", &cfg.corpus_path)?)?;
    match &cfg.variant_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading variant {}", p.display()))?;
            let v: CorpusVariant =
                serde_json::from_str(&text).map_err(|e| invalid(format!("variant {}: {e}", p.display())))?;
            Ok(Corpus::new(nrec_core::article::apply_variant(&store, &v))?)
        }
        None => Ok(store),
    }
}

fn load_variant_max_date(cfg: &Config) -> Option<NaiveDate> {
    let text = std::fs::read_to_string(cfg.variant_path.as_ref()?).ok()?;
    serde_json::from_str::<CorpusVariant>(&text).ok().map(|v| v.max_date)
}

fn matrix(cfg: &Config, key: &str, p: &Option<PathBuf>) -> Result<EmbeddingMatrix> {
    let p = path(cfg, key, p)?;
    EmbeddingMatrix::load(p).with_context(|| format!("loading {key} {}", p.display()))
}

fn templates(cfg: &Config) -> Result<TemplateCache> {
    Ok(TemplateCache::new(matrix(cfg, "template_embeddings_path", &cfg.template_embeddings_path)?))
}

fn labels(cfg: &Config) -> Result<LabelStore> {
    let p = path(cfg, "labels_path", &cfg.labels_path)?;
    if !p.exists() {
        return Err(invalid(format!("labels file {} missing; run `nrec label` first", p.display())));
    }
    Ok(LabelStore::load(p)?)
}

fn heads(cfg: &Config) -> Result<HeadPair> {
    Ok(HeadPair::load(path(cfg, "heads_path", &cfg.heads_path)?, Some(cfg.biencoder_hash()))?)
}

fn models(cfg: &Config) -> Result<Models> {
    Ok(Models {
        heads: heads(cfg)?,
        location: CrossScorer::load(
            path(cfg, "loc_scorer_path", &cfg.loc_scorer_path)?,
            LOC_MAGIC,
            Some(cfg.loc_scorer_hash()),
        )?,
        event: CrossScorer::load(
            path(cfg, "evt_scorer_path", &cfg.evt_scorer_path)?,
            EVT_MAGIC,
            Some(cfg.evt_scorer_hash()),
        )?,
    })
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
    All,
}

#[derive(Args)]
pub struct Selection {
    /// Query image id (repeatable).
    #[arg(long = "image-id")]
    image_ids: Vec<String>,
    /// All images of a split from the images file.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
}

impl Selection {
    fn resolve(&self, cfg: &Config) -> Result<Vec<String>> {
        let mut ids = self.image_ids.clone();
        if let Some(s) = self.split {
            let images = load_images(path(cfg, "images_path", &cfg.images_path)?)?;
            ids.extend(
                images
                    .into_iter()
                    .filter(|i| match s {
                        SplitArg::Train => i.split == Split::Train,
                        SplitArg::Dev => i.split == Split::Dev,
                        SplitArg::Test => i.split == Split::Test,
                        SplitArg::All => true,
                    })
                    .map(|i| i.id),
            );
        }
        if ids.is_empty() {
            return Err(invalid("no query images: pass --image-id or --split"));
        }
        Ok(ids)
    }
}

pub fn label(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let corpus = load_corpus(cfg)?;
    let images = load_images(path(cfg, "images_path", &cfg.images_path)?)?;
    let store = LabelStore::build(&images, corpus.articles(), cfg.n_window_days, ctx.exec);
    store.save(path(cfg, "labels_path", &cfg.labels_path)?)?;
    let with_evt = store.iter().filter(|l| !l.event_relevant.is_empty()).count();
    let with_loc = store.iter().filter(|l| !l.location_relevant.is_empty()).count();
    emit(
        ctx,
        format!("{} images labeled: {with_loc} with location-relevant, {with_evt} with event-relevant articles", store.len()),
        json!({"images": store.len(), "with_location_relevant": with_loc, "with_event_relevant": with_evt}),
    );
    Ok(())
}

#[derive(Args)]
pub struct IndexArgs {
    /// Directory for captions.jsonl, templates.jsonl and images.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    /// Image payloads become `<dir>/<image id>.jpg` (default: the bare id).
    #[arg(long)]
    image_dir: Option<PathBuf>,
    /// Also embed the manifests with seeded fake vectors into the configured
    /// embedding paths (plumbing checks only; the vectors carry no meaning).
    #[arg(long)]
    fake_embed: bool,
    #[arg(long, default_value_t = 64)]
    dim: usize,
}

fn text_entries(cfg: &Config, corpus: &Corpus) -> (Vec<ManifestEntry>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for a in corpus.articles() {
        match cfg.index_field {
            IndexField::Caption => {
                if a.news_captions.is_empty() {
                    skipped += 1;
                }
                for (i, c) in a.news_captions.iter().enumerate() {
                    out.push(ManifestEntry::text(caption_row_id(&a.id, i), c.clone()));
                }
            }
            IndexField::Abstract => {
                let text = if a.abstract_text.trim().is_empty() { &a.headline } else { &a.abstract_text };
                out.push(ManifestEntry::text(a.id.clone(), text.clone()));
            }
        }
    }
    (out, skipped)
}

pub fn index(ctx: &Ctx, a: &IndexArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let corpus = Corpus::load(path(cfg, "corpus_path", &cfg.corpus_path)?)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;

    let (texts, skipped) = text_entries(cfg, &corpus);
    if skipped > 0 {
        log::warn!("{skipped} articles have no captions and are not indexed");
    }
    let loc_texts: Vec<String> = corpus
        .articles()
        .iter()
        .map(|x| location_template(&x.geo_keywords))
        .chain(std::iter::once(UNKNOWN_LOCATION_TEMPLATE.to_string()))
        .collect();
    let tpl: Vec<ManifestEntry> = template_manifest(loc_texts.iter().map(String::as_str))
        .into_iter()
        .map(|(id, t)| ManifestEntry::text(id, t))
        .collect();
    let images: Vec<ManifestEntry> = match &cfg.images_path {
        Some(p) => load_images(p)?
            .into_iter()
            .map(|i| {
                let payload = match &a.image_dir {
                    Some(d) => d.join(format!("{}.jpg", i.id)).display().to_string(),
                    None => i.id.clone(),
                };
                ManifestEntry::image(i.id, payload)
            })
            .collect(),
        None => Vec::new(),
    };

    let mut written = BTreeMap::new();
    for (name, entries) in [("captions", &texts), ("templates", &tpl), ("images", &images)] {
        if entries.is_empty() {
            continue;
        }
        let p = a.out_dir.join(format!("{name}.jsonl"));
        write_manifest(&p, entries)?;
        written.insert(name, entries.len());
    }
    if a.fake_embed {
        embed_fake(&texts, a.dim, cfg.seed)?.save(path(cfg, "caption_embeddings_path", &cfg.caption_embeddings_path)?)?;
        embed_fake(&tpl, a.dim, cfg.seed)?.save(path(cfg, "template_embeddings_path", &cfg.template_embeddings_path)?)?;
        if !images.is_empty() {
            embed_fake(&images, a.dim, cfg.seed)?
                .save(path(cfg, "image_embeddings_path", &cfg.image_embeddings_path)?)?;
        }
    }
    emit(
        ctx,
        written.iter().map(|(k, v)| format!("{k}: {v} entries")).collect::<Vec<_>>().join("\n"),
        json!({"manifests": written, "dir": a.out_dir, "fake_embedded": a.fake_embed}),
    );
    Ok(())
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seeded pseudo-random unit vectors (seed from --seed).
    #[arg(long)]
    fake: bool,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Encode texts the way the synthetic world described by this spec
    /// file (written by `synth`) does.
    #[arg(long, conflicts_with = "fake")]
    world: Option<PathBuf>,
    /// Add rows to an existing file; ids already present are kept as they are.
    #[arg(long)]
    append: bool,
}

pub fn embed(ctx: &Ctx, a: &EmbedArgs) -> Result<()> {
    let entries = read_manifest(&a.manifest)?;
    let new = match &a.world {
        Some(spec_path) => {
            let text = std::fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
            let spec: WorldSpec =
                serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", spec_path.display())))?;
            let world = World::generate(&spec)?;
            let mut data = Vec::with_capacity(entries.len() * world.dim());
            for e in &entries {
                if e.kind != EntryKind::Text {
                    return Err(invalid(format!("world encoder embeds text only; `{}` is an image", e.id)));
                }
                data.extend(world.encode(&e.payload)?);
            }
            EmbeddingMatrix::new(entries.iter().map(|e| e.id.clone()).collect(), world.dim(), data)?
        }
        None if a.fake => embed_fake(&entries, a.dim, ctx.cfg.seed)?,
        None => return Err(invalid("choose an encoder: --fake or --world")),
    };
    let (out, added) = if a.append && a.out.exists() {
        let old = EmbeddingMatrix::load(&a.out)?;
        if old.dim() != new.dim() {
            return Err(invalid(format!("{} has dim {}, new rows have {}", a.out.display(), old.dim(), new.dim())));
        }
        let mut ids = old.ids().to_vec();
        let mut data = old.data().to_vec();
        let mut added = 0;
        for (r, id) in new.ids().iter().enumerate() {
            if old.position(id).is_none() {
                ids.push(id.clone());
                data.extend_from_slice(new.row(r));
                added += 1;
            }
        }
        (EmbeddingMatrix::new(ids, new.dim(), data)?, added)
    } else {
        let n = new.rows();
        (new, n)
    };
    out.save(&a.out)?;
    emit(
        ctx,
        format!("{added} rows embedded, {} total in {}", out.rows(), a.out.display()),
        json!({"added": added, "rows": out.rows(), "dim": out.dim(), "path": a.out}),
    );
    Ok(())
}

struct Loaded {
    corpus: Corpus,
    images: Vec<ImageRecord>,
    image_embeddings: EmbeddingMatrix,
    article_images: Option<EmbeddingMatrix>,
    captions: CaptionIndex,
    labels: LabelStore,
    templates: TemplateCache,
}

impl Loaded {
    fn new(cfg: &Config, need_templates: bool) -> Result<Self> {
        let image_embeddings = matrix(cfg, "image_embeddings_path", &cfg.image_embeddings_path)?;
        let templates = if need_templates {
            templates(cfg)?
        } else {
            TemplateCache::new(EmbeddingMatrix::empty(image_embeddings.dim()))
        };
        Ok(Loaded {
            corpus: load_corpus(cfg)?,
            images: load_images(path(cfg, "images_path", &cfg.images_path)?)?,
            article_images: match &cfg.article_image_embeddings_path {
                Some(p) => Some(EmbeddingMatrix::load(p)?),
                None => None,
            },
            captions: CaptionIndex::new(matrix(cfg, "caption_embeddings_path", &cfg.caption_embeddings_path)?),
            labels: labels(cfg)?,
            image_embeddings,
            templates,
        })
    }

    fn inputs(&self) -> TrainInputs<'_> {
        TrainInputs {
            corpus: &self.corpus,
            images: &self.images,
            image_embeddings: &self.image_embeddings,
            article_images: self.article_images.as_ref(),
            captions: &self.captions,
            labels: &self.labels,
            templates: &self.templates,
        }
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.4}"))
}

pub fn train_biencoder(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = Loaded::new(cfg, false)?;
    let out = train_heads(&data.inputs(), cfg, ctx.exec)?;
    let p = path(cfg, "heads_path", &cfg.heads_path)?;
    out.heads.save(p, cfg.biencoder_hash())?;
    let mut human = format!("baseline dev R@{}: {}\n", cfg.bi_eval_k, fmt_opt(out.baseline_recall));
    for e in &out.log {
        human += &format!("epoch {:>3}  loss {:.5}  dev R@{} {}\n", e.epoch, e.loss, cfg.bi_eval_k, fmt_opt(e.r_at_100));
    }
    human += &format!("heads from epoch {} written to {}", out.best_epoch.map_or("-".into(), |e| e.to_string()), p.display());
    let log: Vec<_> = out.log.iter().map(|e| json!({"epoch": e.epoch, "loss": e.loss, "dev_recall": e.r_at_100})).collect();
    emit(
        ctx,
        human,
        json!({"baseline_recall": out.baseline_recall, "best_epoch": out.best_epoch, "log": log, "path": p}),
    );
    Ok(())
}

#[derive(Clone, Copy)]
pub enum Stage {
    Location,
    Event,
}

pub fn train_xenc(ctx: &Ctx, stage: Stage) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = Loaded::new(cfg, true)?;
    let heads = heads(cfg)?;
    let (outcome, p, name) = match stage {
        Stage::Location => {
            let o = train_location_stage(&data.inputs(), &heads, cfg, ctx.exec)?;
            let p = path(cfg, "loc_scorer_path", &cfg.loc_scorer_path)?;
            o.outcome.scorer.save(p, LOC_MAGIC, cfg.loc_scorer_hash())?;
            (o, p, "location")
        }
        Stage::Event => {
            let o = train_event_stage(&data.inputs(), &heads, cfg, ctx.exec)?;
            let p = path(cfg, "evt_scorer_path", &cfg.evt_scorer_path)?;
            o.outcome.scorer.save(p, EVT_MAGIC, cfg.evt_scorer_hash())?;
            (o, p, "event")
        }
    };
    emit(
        ctx,
        format!(
            "{name} dev R@1: bi-encoder order {}, reranked {}\nscorer written to {}",
            fmt_opt(outcome.baseline_r_at_1),
            fmt_opt(outcome.trained_r_at_1),
            p.display()
        ),
        json!({"stage": name, "baseline_r_at_1": outcome.baseline_r_at_1, "trained_r_at_1": outcome.trained_r_at_1, "path": p}),
    );
    Ok(())
}

#[derive(Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    select: Selection,
    /// Write results (JSON lines) here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Articles shown per ranking in the human-readable output.
    #[arg(long, default_value_t = 5)]
    show: usize,
}

pub fn retrieve(ctx: &Ctx, a: &RetrieveArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let ids = a.select.resolve(cfg)?;
    let corpus = load_corpus(cfg)?;
    let images = matrix(cfg, "image_embeddings_path", &cfg.image_embeddings_path)?;
    let captions = CaptionIndex::new(matrix(cfg, "caption_embeddings_path", &cfg.caption_embeddings_path)?);
    let templates = templates(cfg)?;
    let engine = Engine::new(&corpus, &images, &captions, &templates, models(cfg)?, QueryParams::from(cfg), ctx.exec)?;
    let results = engine.run_batch(&ids, ctx.exec)?;
    let jsonl = results_to_jsonl(&results);
    if let Some(p) = &a.out {
        std::fs::write(p, &jsonl).with_context(|| format!("writing {}", p.display()))?;
    }
    if ctx.json {
        print!("{jsonl}");
    } else if a.out.is_none() || results.len() <= 10 {
        for r in &results {
            let loc: Vec<&str> = r.location_ids().into_iter().take(a.show).collect();
            let evt: Vec<&str> = r.event_ranking.iter().take(a.show).map(String::as_str).collect();
            println!("{}\n  location: {}\n  event:    {}{}", r.image_id, loc.join(" "), evt.join(" "),
                if r.event_reranked { "" } else { "  (bi-encoder order)" });
        }
    } else {
        println!("{} results written to {}", results.len(), a.out.as_ref().unwrap().display());
    }
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    results: PathBuf,
    /// Write per-query metrics and the summary (JSON lines) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let text = std::fs::read_to_string(&a.results).with_context(|| format!("reading {}", a.results.display()))?;
    let results = results_from_jsonl(&text)?;
    let gold = load_images(path(cfg, "images_path", &cfg.images_path)?)?;
    let corpus = load_corpus(cfg)?;
    let gaz = match &cfg.gazetteer_path {
        Some(p) => Some(Gazetteer::load(p)?),
        None => None,
    };
    let report = evaluate_run(&results, &gold, &corpus, gaz.as_ref(), cfg)?;
    if let Some(p) = &a.out {
        report.save_jsonl(p)?;
    }
    if ctx.json {
        print!("{}", report.to_jsonl());
    } else {
        print!("{}", report.render_table());
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Date,
    Location,
}

#[derive(Args)]
pub struct PromptArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    image_id: String,
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Upper end of the allowed date range (default: the variant's cutoff).
    #[arg(long)]
    max_date: Option<String>,
    /// Articles included (default: config prompt_top_n).
    #[arg(long)]
    top_n: Option<usize>,
}

pub fn render_prompt(ctx: &Ctx, a: &PromptArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let text = std::fs::read_to_string(&a.results).with_context(|| format!("reading {}", a.results.display()))?;
    let results = results_from_jsonl(&text)?;
    let r = results
        .iter()
        .find(|r| r.image_id == a.image_id)
        .ok_or_else(|| invalid(format!("image {} not in {}", a.image_id, a.results.display())))?;
    let max_date = match &a.max_date {
        Some(s) => s.parse().map_err(|_| invalid(format!("--max-date: expected YYYY-MM-DD, got {s:?}")))?,
        None => load_variant_max_date(cfg).ok_or_else(|| invalid("--max-date is required without a corpus variant"))?,
    };
    let task = match a.task {
        TaskArg::Date => PromptTask::Date,
        TaskArg::Location => PromptTask::Location,
    };
    let corpus = load_corpus(cfg)?;
    let prompt = render_evidence_prompt(r, &corpus, task, max_date, a.top_n.unwrap_or(cfg.prompt_top_n))?;
    emit(ctx, prompt.trim_end(), json!({"image_id": r.image_id, "prompt": prompt}));
    Ok(())
}

#[derive(Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    select: Selection,
    /// Write the event templates of all clusters as an embedding manifest.
    #[arg(long)]
    template_manifest: Option<PathBuf>,
}

pub fn dump_clusters(ctx: &Ctx, a: &ClusterArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let ids = a.select.resolve(cfg)?;
    let corpus = load_corpus(cfg)?;
    let images = matrix(cfg, "image_embeddings_path", &cfg.image_embeddings_path)?;
    let captions = CaptionIndex::new(matrix(cfg, "caption_embeddings_path", &cfg.caption_embeddings_path)?);
    let per_image =
        candidate_clusters(&corpus, &images, &captions, &heads(cfg)?, &ids, QueryParams::from(cfg), ctx.exec)?;
    if let Some(p) = &a.template_manifest {
        let texts: Vec<String> = per_image.iter().flat_map(|(_, cs)| cs.iter().map(event_template)).collect();
        let entries: Vec<ManifestEntry> = template_manifest(texts.iter().map(String::as_str))
            .into_iter()
            .map(|(id, t)| ManifestEntry::text(id, t))
            .collect();
        write_manifest(p, &entries)?;
        let n = per_image.iter().map(|(_, c)| c.len()).sum::<usize>();
        emit(
            ctx,
            format!("{n} clusters over {} images, {} distinct templates in {}", per_image.len(), entries.len(), p.display()),
            json!({"images": per_image.len(), "clusters": n, "templates": entries.len(), "path": p}),
        );
        return Ok(());
    }
    for (id, clusters) in &per_image {
        if ctx.json {
            println!("{}", json!({"image_id": id, "clusters": clusters}));
            continue;
        }
        println!("{id}: {} clusters", clusters.len());
        for c in clusters {
            let locs: Vec<&str> = c.shared_locations.iter().map(String::as_str).collect();
            println!(
                "  {}..{} [{}] rep {} ({}): {}  {}",
                c.start_date,
                c.end_date,
                locs.join(", "),
                c.representative_id,
                c.article_ids.len(),
                c.article_ids.join(" "),
                template_id(&event_template(c))
            );
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    articles: Option<usize>,
    #[arg(long)]
    images: Option<usize>,
}

pub fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let d = WorldSpec::default();
    let spec = WorldSpec {
        seed: ctx.seed_override.unwrap_or(d.seed),
        num_articles: a.articles.unwrap_or(d.num_articles),
        num_images: a.images.unwrap_or(d.num_images),
        ..d
    };
    let world = World::generate(&spec)?;
    let dir = &a.out;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("world.json"), serde_json::to_string_pretty(&spec)? + "\n")
        .with_context(|| format!("writing {}", dir.join("world.json").display()))?;
    world.corpus.save(&dir.join("corpus.jsonl"))?;
    save_images(&dir.join("images.jsonl"), &world.images)?;
    world.gazetteer.save(&dir.join("gazetteer.csv"))?;
    world.image_embeddings.save(&dir.join("image_embeddings.nrec"))?;
    world.article_images.save(&dir.join("article_images.nrec"))?;
    world.captions.matrix().save(&dir.join("captions.nrec"))?;
    let loc_texts: Vec<String> = world
        .corpus
        .articles()
        .iter()
        .map(|x| location_template(&x.geo_keywords))
        .chain(std::iter::once(UNKNOWN_LOCATION_TEMPLATE.to_string()))
        .collect();
    world
        .template_matrix(loc_texts.iter().map(String::as_str))?
        .save(&dir.join("templates.nrec"))?;
    let cfg = Config {
        corpus_path: Some("corpus.jsonl".into()),
        images_path: Some("images.jsonl".into()),
        labels_path: Some("labels.jsonl".into()),
        gazetteer_path: Some("gazetteer.csv".into()),
        image_embeddings_path: Some("image_embeddings.nrec".into()),
        article_image_embeddings_path: Some("article_images.nrec".into()),
        caption_embeddings_path: Some("captions.nrec".into()),
        template_embeddings_path: Some("templates.nrec".into()),
        heads_path: Some("heads.nrhd".into()),
        loc_scorer_path: Some("location.nrxl".into()),
        evt_scorer_path: Some("event.nrxe".into()),
        ..world.config()
    };
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).with_context(|| format!("writing {}", cfg_path.display()))?;
    emit(
        ctx,
        format!(
            "synthetic world (seed {}): {} articles, {} images, dim {} in {}",
            spec.seed,
            world.corpus.len(),
            world.images.len(),
            spec.dim,
            dir.display()
        ),
        json!({"seed": spec.seed, "articles": world.corpus.len(), "images": world.images.len(), "dim": spec.dim, "config": cfg_path}),
    );
    Ok(())
}
