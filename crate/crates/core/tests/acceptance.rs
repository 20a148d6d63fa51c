//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line, then exits non-zero if any failed.

use std::collections::{BTreeSet, HashSet};
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nrec_core::article::{apply_variant, Corpus};
use nrec_core::biencoder::{
    build_batch, check_batch, info_nce_loss, random_pool, BiEncoder, HeadPair, ImageSampler, PairKind, ProjectionHead,
    TrainOutcome,
};
use nrec_core::cluster_event::{bi_order, event_ranking, form_clusters, ArticleCluster, ClusterItem};
use nrec_core::config::Config;
use nrec_core::date::PartialDate;
use nrec_core::embedstore::{CaptionIndex, EmbeddingMatrix};
use nrec_core::labeling::{LabelStore, RelevanceLabels, Split};
use nrec_core::metrics::{
    co_delta, date_component_scores, delta_year, em_at_k, em_at_k_dates, em_at_k_locations, example_f1, great_date,
    great_loc, great_loc_km, haversine_km, DateThresholds, DateUnit, DateWeights, Gazetteer, GazetteerRow, GeoPoint,
    HierLocation, MetricsConfig, MetricsReport, EARTH_RADIUS_KM,
};
use nrec_core::pipeline::{
    evaluate_run, results_to_jsonl, train_event_stage, train_heads, train_location_stage, Engine, Models, QueryParams,
    StageOutcome, TrainInputs,
};
use nrec_core::synthetic::{World, WorldSpec};
use nrec_core::xenc::{Combiner, CrossScorer, EVT_MAGIC, LOC_MAGIC};
use nrec_core::{Error, Execution};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(t: Instant, limit: Duration) -> Result<(), String> {
    ensure(t.elapsed() < limit, || format!("took {:?}, limit {:?}", t.elapsed(), limit))
}

// ---------------------------------------------------------------------------
// Independent metric reimplementations.

fn oracle_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    // atan2 form of the central angle, unrelated to the haversine code path
    let (p1, l1, p2, l2) = (a.0.to_radians(), a.1.to_radians(), b.0.to_radians(), b.1.to_radians());
    let dl = l2 - l1;
    let y = ((p2.cos() * dl.sin()).powi(2) + (p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos()).powi(2)).sqrt();
    let x = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    6371.0088 * y.atan2(x)
}

type Ymd = (i32, Option<u32>, Option<u32>);

fn oracle_great_date(p: Ymd, g: Ymd) -> f64 {
    let lin = |d: f64, t: f64| (1.0 - d.abs() / t).max(0.0);
    let floor = |y: i32, n: f64| (y as f64 / n).floor();
    let mut s = vec![
        if floor(p.0, 100.0) == floor(g.0, 100.0) { 1.0 } else { 0.0 },
        lin(floor(g.0, 10.0) - floor(p.0, 10.0), 5.0),
        lin((g.0 - p.0) as f64, 10.0),
    ];
    if let Some(gm) = g.1 {
        s.push(p.1.map_or(0.0, |pm| lin(gm as f64 - pm as f64, 6.0)));
    }
    if let Some(gd) = g.2 {
        s.push(p.2.map_or(0.0, |pd| lin(gd as f64 - pd as f64, 15.0)));
    }
    s.iter().sum::<f64>() / s.len() as f64
}

fn oracle_chains(loc: &[String]) -> BTreeSet<Vec<String>> {
    let n: Vec<String> = loc.iter().map(|c| c.trim().to_lowercase()).collect();
    (0..n.len()).map(|i| n[i..].to_vec()).collect()
}

fn oracle_ef1(p: &[String], g: &[String]) -> f64 {
    let (a, b) = (oracle_chains(p), oracle_chains(g));
    2.0 * a.intersection(&b).count() as f64 / (a.len() + b.len()) as f64
}

fn oracle_em_loc(preds: &[Vec<String>], gt: &[String], k: usize) -> f64 {
    let norm = |v: &[String]| v.iter().map(|c| c.trim().to_lowercase()).collect::<Vec<_>>();
    let g: BTreeSet<String> = norm(gt).into_iter().collect();
    let mut seen = BTreeSet::new();
    let mut taken = 0;
    for p in preds {
        if !seen.insert(norm(p).join(",")) {
            continue;
        }
        if taken == k {
            break;
        }
        taken += 1;
        let ps: BTreeSet<String> = norm(p).into_iter().collect();
        if g.is_subset(&ps) {
            return 1.0;
        }
    }
    0.0
}

fn oracle_em_date(preds: &[Ymd], gt: Ymd, k: usize) -> f64 {
    let rank = |d: &Ymd| 1 + usize::from(d.1.is_some()) + usize::from(d.2.is_some());
    let mut seen = BTreeSet::new();
    let mut taken = 0;
    for p in preds {
        if !seen.insert(*p) {
            continue;
        }
        if taken == k {
            break;
        }
        taken += 1;
        let hit = rank(p) >= rank(&gt)
            && p.0 == gt.0
            && (gt.1.is_none() || p.1 == gt.1)
            && (gt.2.is_none() || p.2 == gt.2);
        if hit {
            return 1.0;
        }
    }
    0.0
}

fn to_partial(d: Ymd) -> PartialDate {
    match d {
        (y, Some(m), Some(dd)) => PartialDate::ymd(y, m, dd).unwrap(),
        (y, Some(m), None) => PartialDate::year_month(y, m).unwrap(),
        (y, _, _) => PartialDate::year(y),
    }
}

fn random_ymd(rng: &mut ChaCha8Rng, year: i32) -> Ymd {
    let m = rng.gen_range(1..=12);
    let d = rng.gen_range(1..=28);
    match rng.gen_range(0..3) {
        0 => (year, None, None),
        1 => (year, Some(m), None),
        _ => (year, Some(m), Some(d)),
    }
}

const VOCAB: [&str; 8] = ["Paris", "France", "Europe", "Lyon", "Berlin", "Germany", "Texas", "Asia"];

fn random_loc(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.gen_range(1..=4);
    let mut idx: Vec<usize> = (0..VOCAB.len()).collect();
    idx.shuffle(rng);
    idx[..n]
        .iter()
        .map(|&i| {
            let s = VOCAB[i];
            match rng.gen_range(0..3) {
                0 => s.to_uppercase(),
                1 => format!(" {s} "),
                _ => s.to_string(),
            }
        })
        .collect()
}

fn point_at(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).unwrap()
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b}"))
}

fn metric_oracle_suite() -> Check {
    let t = Instant::now();
    // (city a, city b, great-circle km)
    let pairs: [((f64, f64), (f64, f64), f64); 10] = [
        ((48.8566, 2.3522), (51.5074, -0.1278), 343.6),
        ((40.7128, -74.0060), (34.0522, -118.2437), 3935.8),
        ((51.5074, -0.1278), (40.7128, -74.0060), 5570.2),
        ((35.6762, 139.6503), (-33.8688, 151.2093), 7825.8),
        ((52.5200, 13.4050), (55.7558, 37.6173), 1608.8),
        ((40.4168, -3.7038), (41.9028, 12.4964), 1364.2),
        ((39.9042, 116.4074), (31.2304, 121.4737), 1067.3),
        ((-22.9068, -43.1729), (-34.6037, -58.3816), 1967.8),
        ((-33.8688, 151.2093), (-37.8136, 144.9631), 713.4),
        ((19.0760, 72.8777), (28.7041, 77.1025), 1153.2),
    ];
    let mut worst = 0.0f64;
    for (a, b, km) in pairs {
        let d = haversine_km(point_at(a.0, a.1), point_at(b.0, b.1));
        worst = worst.max((d - km).abs() / km);
    }
    ensure(worst < 0.005, || format!("city-pair relative error {worst:.5}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mcfg = MetricsConfig::default();
    let (th, wt) = (DateThresholds::default(), DateWeights::default());
    let mut max_err = 0.0f64;
    for case in 0..1000 {
        let a = (rng.gen_range(-90.0..=90.0), rng.gen_range(-180.0..=180.0));
        // keep half the pairs within GREAT_loc's 1000 km support
        let b = if case % 2 == 0 {
            ((a.0 + rng.gen_range(-5.0..5.0f64)).clamp(-90.0, 90.0), (a.1 + rng.gen_range(-5.0..5.0f64)).clamp(-180.0, 180.0))
        } else {
            (rng.gen_range(-90.0..=90.0), rng.gen_range(-180.0..=180.0))
        };
        let (pa, pb) = (point_at(a.0, a.1), point_at(b.0, b.1));
        let d = oracle_distance(a, b);
        let gl = great_loc(pa, pb);
        let errs = [
            (haversine_km(pa, pb) - d).abs() / d.max(1.0),
            (gl - (1.0 - d / 1000.0).max(0.0)).abs(),
            (co_delta(pa, pb) - 1.0 / (1.0 + d / 1000.0)).abs(),
        ];
        let gy = rng.gen_range(1900..2030);
        let g = random_ymd(&mut rng, gy);
        let py = gy + rng.gen_range(-25..=25);
        let p = random_ymd(&mut rng, py);
        let gd = great_date(&to_partial(p), &to_partial(g), &th, &wt);
        let want_gd = oracle_great_date(p, g);
        let date_errs = [
            (gd - want_gd).abs(),
            (delta_year(&to_partial(p), &to_partial(g)) - 1.0 / (1.0 + (p.0 - g.0).abs() as f64)).abs(),
            (mcfg.great(gd, gl) - (0.5 * want_gd + 0.5 * (1.0 - d / 1000.0).max(0.0))).abs(),
        ];
        let (lp, lg) = (random_loc(&mut rng), random_loc(&mut rng));
        let hp = HierLocation::new(&lp).unwrap();
        let hg = HierLocation::new(&lg).unwrap();
        let ef1 = (example_f1(&hp, &hg) - oracle_ef1(&lp, &lg)).abs();
        let k = rng.gen_range(1..=5);
        let mut lpreds: Vec<Vec<String>> = (0..rng.gen_range(0..7)).map(|_| random_loc(&mut rng)).collect();
        if rng.gen_bool(0.3) && !lpreds.is_empty() {
            let i = rng.gen_range(0..lpreds.len());
            lpreds[i] = lg.clone();
        }
        let hpreds: Vec<HierLocation> = lpreds.iter().map(|l| HierLocation::new(l).unwrap()).collect();
        let em_l = (em_at_k_locations(&hpreds, &hg, k) - oracle_em_loc(&lpreds, &lg, k)).abs();
        let dpreds: Vec<Ymd> = (0..rng.gen_range(0..7))
            .map(|_| {
                if rng.gen_bool(0.4) {
                    (g.0, g.1.or(Some(rng.gen_range(1..=12))), if rng.gen_bool(0.5) { g.2 } else { None })
                } else {
                    let y = g.0 + rng.gen_range(-1..=1);
                    random_ymd(&mut rng, y)
                }
            })
            .map(|d: Ymd| if d.1.is_none() { (d.0, None, None) } else { d })
            .collect();
        let pd: Vec<PartialDate> = dpreds.iter().map(|d| to_partial(*d)).collect();
        let em_d = (em_at_k_dates(&pd, &to_partial(g), k) - oracle_em_date(&dpreds, g, k)).abs();
        for e in errs.iter().chain(&date_errs).chain([&ef1, &em_l, &em_d]) {
            max_err = max_err.max(*e);
        }
    }
    ensure(max_err <= 1e-9, || format!("max deviation from oracle {max_err:e}"))?;

    // boundary examples
    let p = point_at(10.0, 20.0);
    ensure(haversine_km(p, p) == 0.0, || "a = b distance".into())?;
    close(haversine_km(point_at(0.0, 0.0), point_at(0.0, 180.0)), PI * EARTH_RADIUS_KM, 1e-6, "antipodal")?;
    ensure(great_loc_km(0.0) == 1.0 && great_loc_km(1000.0) == 0.0, || "great_loc boundaries".into())?;
    let day = |y, m, d| PartialDate::ymd(y, m, d).unwrap();
    ensure(great_date(&day(2019, 4, 21), &day(2019, 4, 21), &th, &wt) == 1.0, || "identical dates".into())?;
    ensure(
        great_date(&day(2019, 1, 30), &PartialDate::year(2019), &th, &wt) == 1.0,
        || "year-level ground truth must ignore month/day".into(),
    )?;
    let loc = |s: &str| HierLocation::parse(s).unwrap();
    ensure(example_f1(&loc("Paris, France, Europe"), &loc("Paris, France, Europe")) == 1.0, || "E-F1 equal".into())?;
    close(example_f1(&loc("France, Europe"), &loc("Paris, France, Europe")), 0.8, 1e-12, "E-F1 parent")?;
    close(example_f1(&loc("Berlin, Germany, Europe"), &loc("Paris, France, Europe")), 1.0 / 3.0, 1e-12, "E-F1 sibling")?;
    let y = PartialDate::year;
    ensure(delta_year(&y(2000), &y(2000)) == 1.0, || "delta same year".into())?;
    close(delta_year(&y(2001), &y(2000)), 0.5, 1e-12, "delta 1y")?;
    close(delta_year(&y(2009), &y(2000)), 0.1, 1e-12, "delta 9y")?;
    let east = |km: f64| point_at(0.0, (km / EARTH_RADIUS_KM).to_degrees());
    ensure(co_delta(east(0.0), east(0.0)) == 1.0, || "co_delta d=0".into())?;
    close(co_delta(east(0.0), east(1000.0)), 0.5, 1e-9, "co_delta 1000 km")?;
    close(co_delta(east(0.0), east(9000.0)), 0.1, 1e-9, "co_delta 9000 km")?;
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    ensure(em_at_k(&s(&["2019-04-21", "2018"]), "2019-04-21", 1) == 1.0, || "EM@1 hit".into())?;
    ensure(em_at_k(&s(&["2011", "2012", "2013", "2014", "2015"]), "2015", 1) == 0.0, || "EM@1 miss".into())?;
    ensure(em_at_k(&s(&["2015-06-12"]), "2015-06", 1) == 1.0, || "EM granularity truncation".into())?;
    let empty = MetricsReport::aggregate(Vec::new());
    ensure(empty.empty && empty.num_queries == 0, || "empty report marker".into())?;
    within_budget(t, Duration::from_secs(10))?;
    Ok(format!("10 city pairs worst {:.3}%, 1000 cases max dev {max_err:.1e}", worst * 100.0))
}

fn worked_examples() -> Check {
    let row = |p: &str, par: &str, c: &str, lat, lon| GazetteerRow {
        place: p.into(),
        parent: par.into(),
        continent: c.into(),
        lat,
        lon,
    };
    let gaz = Gazetteer::new(vec![
        row("Paris", "France", "", 48.8566, 2.3522),
        row("France", "", "Europe", 46.2276, 2.2137),
    ])
    .map_err(|e| e.to_string())?;
    let chains = HierLocation::parse("Paris, France").unwrap().expanded(&gaz).chains();
    let v = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let want: BTreeSet<Vec<String>> =
        [v(&["paris", "france", "europe"]), v(&["france", "europe"]), v(&["europe"])].into_iter().collect();
    ensure(chains == want, || format!("chain set {chains:?}"))?;

    let scores = date_component_scores(
        &PartialDate::ymd(2020, 5, 20).unwrap(),
        &PartialDate::ymd(2020, 5, 10).unwrap(),
        &DateThresholds::default(),
    );
    let s_day = scores.iter().find(|(u, _)| *u == DateUnit::Day).map(|(_, s)| *s).ok_or("no day score")?;
    close(s_day, 1.0 / 3.0, 1e-12, "S_day")?;

    let g = great_loc(point_at(48.8566, 2.3522), point_at(51.5074, -0.1278));
    close(g, 0.6564, 1e-3, "GREAT_loc Paris-London")?;
    Ok(format!("chains ok, S_day {s_day:.12}, GREAT_loc {g:.4}"))
}

fn gradient_check() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for inst in 0..50 {
        let b = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=16);
        let tau = if inst % 2 == 0 { 0.07 } else { 1.0 };
        let unit = |rng: &mut ChaCha8Rng| {
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            v.iter_mut().for_each(|x| *x /= n);
            v
        };
        let imgs: Vec<f64> = (0..b).flat_map(|_| unit(&mut rng)).collect();
        let caps: Vec<f64> = (0..b).flat_map(|_| unit(&mut rng)).collect();
        let r = info_nce_loss(&imgs, &caps, d, tau).map_err(|e| e.to_string())?;
        let h = 1e-6;
        for side in 0..2 {
            let analytic = if side == 0 { &r.grad_images } else { &r.grad_captions };
            for i in 0..b * d {
                let (mut plus_i, mut minus_i, mut plus_c, mut minus_c) = (imgs.clone(), imgs.clone(), caps.clone(), caps.clone());
                if side == 0 {
                    plus_i[i] += h;
                    minus_i[i] -= h;
                } else {
                    plus_c[i] += h;
                    minus_c[i] -= h;
                }
                let lp = info_nce_loss(&plus_i, &plus_c, d, tau).unwrap().loss;
                let lm = info_nce_loss(&minus_i, &minus_c, d, tau).unwrap().loss;
                let numeric = (lp - lm) / (2.0 * h);
                let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-4);
                worst = worst.max(rel);
            }
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    within_budget(t, Duration::from_secs(5))?;
    Ok(format!("50 instances, max relative error {worst:.2e}"))
}

fn batch_builder_property() -> Check {
    let (shared, free, caps_per) = (40usize, 20usize, 2usize);
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for a in 0..shared + free {
        for c in 0..caps_per {
            ids.push(format!("art{a:03}#{c}"));
            data.extend([1.0f32, 0.0]);
        }
    }
    let texts = CaptionIndex::new(EmbeddingMatrix::new(ids, 2, data).map_err(|e| e.to_string())?);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // adversarial: every image draws 3 relevant articles from one small shared pool
    let labels = LabelStore::from_labels((0..300).map(|i| {
        let mut pool: Vec<usize> = (0..shared).collect();
        pool.shuffle(&mut rng);
        let s: BTreeSet<String> = pool[..3].iter().map(|a| format!("art{a:03}")).collect();
        RelevanceLabels::new(format!("img{i:03}"), s.clone(), s).unwrap()
    }));
    let train: Vec<String> = (0..300).map(|i| format!("img{i:03}")).collect();
    let pool = random_pool(&texts, |_| true, &labels, &train);
    ensure(pool.len() == free, || format!("random pool {} != {free}", pool.len()))?;
    let mut sampler = ImageSampler::new(&train, &labels, &texts, 17);
    let mut violations = 0usize;
    let mut off_ratio = 0usize;
    for n in 0..10_000 {
        let size = rng.gen_range(2..=12);
        let n_random = [0.0, 0.25, 0.5, 0.75, 1.0][n % 5];
        let b = build_batch(&mut sampler, &pool, &texts, size, n_random, &mut rng);
        if check_batch(&b, &labels).is_err() {
            violations += 1;
        }
        // independent check of the forbidden-caption rule
        let sup: Vec<&str> = b.pairs.iter().filter(|p| p.kind == PairKind::Supervised).map(|p| p.image_id.as_str()).collect();
        for p in &b.pairs {
            let article = p.caption_id.split('#').next().unwrap();
            let hits = sup
                .iter()
                .filter(|i| labels.event_relevant(i).is_some_and(|s| s.contains(article)))
                .count();
            let ok = match p.kind {
                PairKind::Supervised => hits == 1,
                PairKind::Random => hits == 0 && !train.iter().any(|i| labels.event_relevant(i).unwrap().contains(article)),
            };
            if !ok {
                violations += 1;
            }
        }
        let want_random = n_random * size as f64;
        let got_random = b.count(PairKind::Random) as f64;
        let got_sup = b.count(PairKind::Supervised) as f64;
        if b.pairs.len() != size || (got_random - want_random).abs() > 1.0 || (got_sup - (size as f64 - want_random)).abs() > 1.0 {
            off_ratio += 1;
        }
    }
    ensure(violations == 0 && off_ratio == 0, || format!("{violations} violations, {off_ratio} batches off ratio"))?;
    Ok("10000 batches, 0 violations, proportions exact".into())
}

// ---------------------------------------------------------------------------
// Clustering.

fn valid_cluster(members: &[&ClusterItem], n_window: u32) -> bool {
    if members.is_empty() {
        return false;
    }
    let mut shared = members[0].keywords.clone();
    for m in &members[1..] {
        shared.retain(|k| m.keywords.contains(k));
    }
    let lo = members.iter().map(|m| m.published_at).min().unwrap();
    let hi = members.iter().map(|m| m.published_at).max().unwrap();
    !shared.is_empty() && (hi - lo).num_days() <= 2 * n_window as i64
}

fn random_items(rng: &mut ChaCha8Rng, n: usize) -> Vec<ClusterItem> {
    let base = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
    (0..n)
        .map(|i| ClusterItem {
            article_id: format!("a{i:02}"),
            s_bi: (rng.gen_range(0..40) as f32) / 40.0,
            published_at: base + chrono::Days::new(rng.gen_range(0..30)),
            keywords: ["K1", "K2", "K3", "K4"].iter().filter(|_| rng.gen_bool(0.45)).map(|k| k.to_string()).collect(),
        })
        .collect()
}

fn check_clustering(items: &[ClusterItem], n_window: u32, n_min: usize) -> Result<(), String> {
    let out = form_clusters(items, n_window, n_min);
    let index = |id: &str| items.iter().position(|i| i.article_id == id).unwrap();
    let mut seen = HashSet::new();
    let mut masks = Vec::new();
    for c in &out.clusters {
        let members: Vec<&ClusterItem> = c.article_ids.iter().map(|a| &items[index(a)]).collect();
        ensure(valid_cluster(&members, n_window), || format!("rule violation in {c:?}"))?;
        ensure(c.len() >= n_min, || format!("undersized cluster {c:?}"))?;
        let mut shared = members[0].keywords.clone();
        members.iter().for_each(|m| shared.retain(|k| m.keywords.contains(k)));
        ensure(shared == c.shared_locations, || "shared_locations is not the intersection".into())?;
        ensure(
            c.start_date == members.iter().map(|m| m.published_at).min().unwrap()
                && c.end_date == members.iter().map(|m| m.published_at).max().unwrap(),
            || "date bounds".into(),
        )?;
        let rep = members.iter().min_by(|a, b| bi_order(a, b)).unwrap();
        ensure(rep.article_id == c.representative_id, || "representative is not the top s_bi member".into())?;
        let mut mask = 0u32;
        for a in &c.article_ids {
            ensure(seen.insert(a.clone()), || format!("{a} emitted twice"))?;
            mask |= 1 << index(a);
        }
        masks.push(mask);
    }
    for a in &out.unclustered {
        ensure(seen.insert(a.clone()), || format!("{a} both clustered and unclustered"))?;
    }
    ensure(seen.len() == items.len(), || "articles lost".into())?;

    // brute force: no valid cluster strictly extends an emitted one using leftovers
    let free: u32 = out.unclustered.iter().map(|a| 1u32 << index(a)).sum();
    for &m in &masks {
        let mut extra = free;
        loop {
            if extra != 0 {
                let s = m | extra;
                let members: Vec<&ClusterItem> = (0..items.len()).filter(|i| s & (1 << i) != 0).map(|i| &items[i]).collect();
                ensure(!valid_cluster(&members, n_window), || format!("cluster {m:b} extendable by {extra:b}"))?;
            }
            if extra == 0 {
                break;
            }
            extra = (extra - 1) & free;
        }
    }
    Ok(())
}

fn clustering_oracle() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let day = |d: u32| NaiveDate::from_ymd_opt(2022, 3, d).unwrap();
    let item = |id: &str, d: u32, kws: &[&str]| ClusterItem {
        article_id: id.into(),
        s_bi: 0.5,
        published_at: day(d),
        keywords: kws.iter().map(|k| k.to_string()).collect(),
    };
    let same = [item("a", 1, &["Kyiv"]), item("b", 1, &["Kyiv"]), item("c", 1, &["Kyiv"])];
    ensure(form_clusters(&same, 7, 3).clusters.len() == 1, || "three same-day articles".into())?;
    let wide = [item("a", 1, &["Kyiv"]), item("b", 9, &["Kyiv"]), item("c", 17, &["Kyiv"])];
    ensure(form_clusters(&wide, 7, 3).clusters.iter().all(|c| c.len() < 3), || "16-day span clustered".into())?;
    ensure(form_clusters(&same[..2], 7, 3).clusters.is_empty(), || "pair below min size".into())?;

    let mut emitted = 0;
    for n in 0..500 {
        let size = rng.gen_range(1..=12);
        let items = random_items(&mut rng, size);
        let (w, m) = ([2u32, 3, 7][n % 3], [1usize, 2, 3][(n / 3) % 3]);
        check_clustering(&items, w, m).map_err(|e| format!("instance {n}: {e}"))?;
        emitted += form_clusters(&items, w, m).clusters.len();
    }
    within_budget(t, Duration::from_secs(30))?;
    Ok(format!("500 instances, {emitted} clusters, all valid and maximal"))
}

fn algorithm_conformance(trained: &Trained) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut fallbacks = 0;
    for n in 0..500 {
        let size = rng.gen_range(0..=12);
        let items = random_items(&mut rng, size);
        let mut clusters: Vec<ArticleCluster> = form_clusters(&items, 3, 2).clusters;
        for c in &mut clusters {
            c.s_evt = Some(rng.gen_range(0..4) as f32 / 4.0);
        }
        let (ranking, reranked) = event_ranking(&items, &clusters, 2);
        let mut by_bi: Vec<&ClusterItem> = items.iter().collect();
        by_bi.sort_by(|a, b| bi_order(a, b));
        let bi: Vec<String> = by_bi.iter().map(|i| i.article_id.clone()).collect();
        if clusters.len() < 2 {
            fallbacks += 1;
            ensure(!reranked && ranking == bi, || format!("instance {n}: fallback differs from s_bi order"))?;
        }
        let set: BTreeSet<&String> = ranking.iter().collect();
        ensure(set.len() == ranking.len() && ranking.len() == items.len(), || format!("instance {n}: not a permutation"))?;
    }

    // and through the engine on the synthetic world
    let w = &trained.world;
    let enc = BiEncoder::new(trained.models.heads.clone(), &w.captions, Execution::Sequential).map_err(|e| e.to_string())?;
    let k = trained.cfg.k_evt.max(trained.cfg.k_loc);
    let mut engine_fallbacks = 0;
    for r in &trained.results {
        let hits = enc.search(w.image_embeddings.get(&r.image_id).unwrap(), k).map_err(|e| e.to_string())?;
        let hit_ids: Vec<&str> = hits.iter().take(trained.cfg.k_evt).map(|h| h.article_id.as_str()).collect();
        let got: Vec<&str> = r.event_ranking.iter().map(String::as_str).collect();
        let a: BTreeSet<&str> = got.iter().copied().collect();
        let b: BTreeSet<&str> = hit_ids.iter().copied().collect();
        ensure(a == b && got.len() == hit_ids.len(), || format!("{}: event ranking is not a permutation of top-K", r.image_id))?;
        if r.clusters.len() < 2 {
            engine_fallbacks += 1;
            ensure(got == hit_ids, || format!("{}: fallback differs from s_bi order", r.image_id))?;
        }
    }
    Ok(format!("{fallbacks} random + {engine_fallbacks} engine fallbacks bit-exact, all permutations"))
}

// ---------------------------------------------------------------------------
// Synthetic end-to-end.

struct Trained {
    world: World,
    cfg: Config,
    bi: TrainOutcome,
    loc: StageOutcome,
    evt: StageOutcome,
    models: Models,
    results: Vec<nrec_core::pipeline::RetrievalResult>,
    results_jsonl: String,
    report_jsonl: String,
}

fn train_world(seed: u64, exec: Execution) -> nrec_core::Result<Trained> {
    let world = World::generate(&WorldSpec {
        seed,
        ..WorldSpec::default()
    })?;
    let cfg = world.config();
    let labels = world.labels(cfg.n_window_days, exec);
    let inputs = TrainInputs {
        corpus: &world.corpus,
        images: &world.images,
        image_embeddings: &world.image_embeddings,
        article_images: Some(&world.article_images),
        captions: &world.captions,
        labels: &labels,
        templates: &world,
    };
    let bi = train_heads(&inputs, &cfg, exec)?;
    let loc = train_location_stage(&inputs, &bi.heads, &cfg, exec)?;
    let evt = train_event_stage(&inputs, &bi.heads, &cfg, exec)?;
    let models = Models {
        heads: bi.heads.clone(),
        location: loc.outcome.scorer.clone(),
        event: evt.outcome.scorer.clone(),
    };
    let engine = Engine::new(&world.corpus, &world.image_embeddings, &world.captions, &world, models.clone(), QueryParams::from(&cfg), exec)?;
    let results = engine.run_batch(&world.image_ids(Split::Test), exec)?;
    let report = evaluate_run(&results, &world.images, &world.corpus, Some(&world.gazetteer), &cfg)?;
    let results_jsonl = results_to_jsonl(&results);
    let report_jsonl = report.to_jsonl();
    Ok(Trained {
        world,
        cfg,
        bi,
        loc,
        evt,
        models,
        results,
        results_jsonl,
        report_jsonl,
    })
}

fn synthetic_end_to_end(trained: &Trained, elapsed: Duration) -> Check {
    let base = trained.bi.baseline_recall.ok_or("no bi-encoder baseline")?;
    let best = trained
        .bi
        .best_epoch
        .and_then(|e| trained.bi.log[e - 1].r_at_100)
        .ok_or("no trained bi-encoder recall")?;
    let (lb, lt) = (trained.loc.baseline_r_at_1.ok_or("no location baseline")?, trained.loc.trained_r_at_1.ok_or("no location R@1")?);
    let (eb, et) = (trained.evt.baseline_r_at_1.ok_or("no event baseline")?, trained.evt.trained_r_at_1.ok_or("no event R@1")?);
    let line = format!("R@100 {base:.3}->{best:.3}, loc R@1 {lb:.3}->{lt:.3}, evt R@1 {eb:.3}->{et:.3}, {elapsed:.1?}");
    ensure(best > base, || format!("bi-encoder did not improve: {line}"))?;
    ensure(lt > lb, || format!("location reranking did not improve: {line}"))?;
    ensure(et > eb, || format!("event reranking did not improve: {line}"))?;
    ensure(elapsed < Duration::from_secs(300), || format!("too slow: {line}"))?;
    Ok(line)
}

fn corpus_size_trend(trained: &Trained) -> Check {
    let t = Instant::now();
    let w = &trained.world;
    let test = w.image_ids(Split::Test);
    let mut greats = Vec::new();
    for f in [1.0 / 3.0, 2.0 / 3.0, 1.0] {
        let corpus = Corpus::new(apply_variant(&w.corpus, &w.nested_variant(f))).map_err(|e| e.to_string())?;
        let engine = Engine::new(
            &corpus,
            &w.image_embeddings,
            &w.captions,
            w,
            trained.models.clone(),
            QueryParams::from(&trained.cfg),
            Execution::Parallel,
        )
        .map_err(|e| e.to_string())?;
        let results = engine.run_batch(&test, Execution::Parallel).map_err(|e| e.to_string())?;
        let report = evaluate_run(&results, &w.images, &corpus, Some(&w.gazetteer), &trained.cfg).map_err(|e| e.to_string())?;
        greats.push(report.mean("great").ok_or("no GREAT")?);
    }
    let line = format!("GREAT 1/3 {:.4}, 2/3 {:.4}, full {:.4}", greats[0], greats[1], greats[2]);
    ensure(greats.windows(2).all(|p| p[1] >= p[0]), || format!("not non-decreasing: {line}"))?;
    within_budget(t, Duration::from_secs(120))?;
    Ok(line)
}

fn determinism(first: &Trained) -> Check {
    let again = train_world(first.world.spec.seed, Execution::Parallel).map_err(|e| e.to_string())?;
    ensure(again.results_jsonl == first.results_jsonl, || "rankings differ between runs".into())?;
    ensure(again.report_jsonl == first.report_jsonl, || "reports differ between runs".into())?;
    let seq = train_world(first.world.spec.seed, Execution::Sequential).map_err(|e| e.to_string())?;
    ensure(seq.results_jsonl == first.results_jsonl, || "sequential rankings differ from parallel".into())?;
    ensure(seq.report_jsonl == first.report_jsonl, || "sequential report differs from parallel".into())?;
    Ok(format!(
        "{} result bytes and {} report bytes identical across 2 parallel + 1 sequential run",
        first.results_jsonl.len(),
        first.report_jsonl.len()
    ))
}

fn format_round_trips() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = EmbeddingMatrix::from_unnormalized(
        (0..7).map(|i| format!("row{i}")).collect(),
        5,
        (0..35).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let p1 = dir.path().join("a.nrec");
    let p2 = dir.path().join("b.nrec");
    m.save(&p1).map_err(|e| e.to_string())?;
    EmbeddingMatrix::load(&p1).and_then(|x| x.save(&p2)).map_err(|e| e.to_string())?;
    ensure(std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap(), || "NREC save/load/save differs".into())?;

    let w: Vec<f32> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let heads = HeadPair::new(
        ProjectionHead::new(5, 3, w.clone(), vec![0.1, 0.0, -0.1]).unwrap(),
        ProjectionHead::new(5, 3, w.iter().map(|x| x * 0.5).collect(), vec![0.0; 3]).unwrap(),
    )
    .unwrap();
    let h1 = dir.path().join("h1");
    let h2 = dir.path().join("h2");
    heads.save(&h1, 42).map_err(|e| e.to_string())?;
    HeadPair::load(&h1, Some(42)).and_then(|h| h.save(&h2, 42)).map_err(|e| e.to_string())?;
    ensure(std::fs::read(&h1).unwrap() == std::fs::read(&h2).unwrap(), || "head checkpoint differs".into())?;

    let all = [Combiner::Concatenation, Combiner::Multiplication, Combiner::Difference];
    let scorer = CrossScorer::new(&all, 5, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0.25).unwrap();
    for magic in [LOC_MAGIC, EVT_MAGIC] {
        let bytes = scorer.to_bytes(magic, 9);
        let (back, hash) = CrossScorer::from_bytes(&bytes, magic).map_err(|e| e.to_string())?;
        ensure(hash == 9 && back.to_bytes(magic, 9) == bytes, || "scorer checkpoint differs".into())?;
    }

    // corruption cases, for every format
    let blobs: Vec<(&str, Vec<u8>, Box<dyn Fn(&[u8]) -> nrec_core::Result<()>>)> = vec![
        ("NREC", m.to_bytes(), Box::new(|b| EmbeddingMatrix::from_bytes(b).map(|_| ()))),
        ("NRHD", heads.to_bytes(1), Box::new(|b| HeadPair::from_bytes(b).map(|_| ()))),
        ("NRXL", scorer.to_bytes(LOC_MAGIC, 1), Box::new(|b| CrossScorer::from_bytes(b, LOC_MAGIC).map(|_| ()))),
        ("NRXE", scorer.to_bytes(EVT_MAGIC, 1), Box::new(|b| CrossScorer::from_bytes(b, EVT_MAGIC).map(|_| ()))),
    ];
    let mut cases = 0;
    for (name, bytes, parse) in &blobs {
        let is_format = |r: nrec_core::Result<()>| matches!(r, Err(Error::Format { .. }));
        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xff;
        ensure(matches!(parse(&bad_magic), Err(Error::Format { offset: 0, .. })), || format!("{name}: bad magic"))?;
        let mut bad_version = bytes.clone();
        bad_version[4] = bad_version[4].wrapping_add(1);
        ensure(is_format(parse(&bad_version)), || format!("{name}: bad version"))?;
        for cut in [0, 3, 8, bytes.len() / 2, bytes.len() - 1] {
            ensure(is_format(parse(&bytes[..cut])), || format!("{name}: truncated at {cut}"))?;
            cases += 1;
        }
        for pos in (6..bytes.len()).step_by(3) {
            let mut flipped = bytes.clone();
            flipped[pos] ^= 0x10;
            ensure(is_format(parse(&flipped)), || format!("{name}: flipped byte {pos} accepted"))?;
            cases += 1;
        }
        let mut trailing = bytes.clone();
        trailing.push(0);
        ensure(is_format(parse(&trailing)), || format!("{name}: trailing byte accepted"))?;
        cases += 3;
    }
    Ok(format!("4 formats byte-identical, {cases} corruption cases rejected"))
}

fn main() {
    let mut rows: Vec<(&str, Check)> = Vec::new();
    rows.push(("metric oracle suite", metric_oracle_suite()));
    rows.push(("worked examples", worked_examples()));
    rows.push(("info_nce gradient check", gradient_check()));
    rows.push(("batch builder property", batch_builder_property()));
    rows.push(("clustering oracle", clustering_oracle()));

    let t = Instant::now();
    let trained = train_world(7, Execution::Parallel);
    let elapsed = t.elapsed();
    match &trained {
        Ok(tr) => {
            rows.push(("ranking algorithm conformance", algorithm_conformance(tr)));
            rows.push(("synthetic end-to-end", synthetic_end_to_end(tr, elapsed)));
            rows.push(("corpus-size trend", corpus_size_trend(tr)));
            rows.push(("determinism", determinism(tr)));
        }
        Err(e) => {
            for name in ["ranking algorithm conformance", "synthetic end-to-end", "corpus-size trend", "determinism"] {
                rows.push((name, Err(format!("synthetic run failed: {e}"))));
            }
        }
    }
    rows.push(("format round-trips", format_round_trips()));

    let mut failed = 0;
    for (name, r) in &rows {
        match r {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", rows.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
