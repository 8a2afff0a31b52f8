//! Rating metrics and the word/aspect interpretation reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::{InteractionRecord, PolarityDocuments, MAX_RATING, MIN_RATING};
use crate::error::{Error, Result};
use crate::model::{word_weights, AspectProfile, EntityIndex, Example, ModelParams, Polarity, Predictor, UserImportance};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub n: usize,
}

impl MetricsReport {
    /// From `(rating, prediction)` pairs, accumulated in order.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let (mut se, mut ae, mut n) = (0.0, 0.0, 0usize);
        for (r, p) in pairs {
            let e = r - p;
            se += e * e;
            ae += e.abs();
            n += 1;
        }
        if n == 0 {
            return Self::default();
        }
        Self { mse: se / n as f64, mae: ae / n as f64, n }
    }

    pub fn csv_header() -> &'static str {
        "mse,mae,n"
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.mse, self.mae, self.n)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    /// Clip predictions into the rating range.
    pub clip: bool,
    /// Predict this value for records whose user or item is unknown
    /// instead of failing.
    pub mean_fallback: Option<f64>,
}

fn finish(r_hat: f64, clip: bool) -> f64 {
    if clip {
        r_hat.clamp(MIN_RATING, MAX_RATING)
    } else {
        r_hat
    }
}

/// Predictions for index-form examples, caching each user's importance.
pub fn predict_examples(predictor: &Predictor, docs: &[PolarityDocuments], examples: &[Example], clip: bool) -> Result<Vec<f64>> {
    let mut cache: HashMap<usize, UserImportance> = HashMap::new();
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        if !cache.contains_key(&ex.user) {
            let d = docs.get(ex.user).ok_or(Error::Index { id: ex.user, rows: docs.len() })?;
            cache.insert(ex.user, predictor.importance(d)?);
        }
        let prof = predictor.profile(ex.user, ex.item, &cache[&ex.user])?;
        out.push(finish(prof.r_hat, clip));
    }
    Ok(out)
}

pub fn evaluate(predictor: &Predictor, docs: &[PolarityDocuments], examples: &[Example], clip: bool) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::Config("cannot evaluate an empty record list".into()));
    }
    let preds = predict_examples(predictor, docs, examples, clip)?;
    Ok(MetricsReport::from_pairs(examples.iter().map(|e| e.rating).zip(preds)))
}

/// Evaluation over raw records. Unknown users or items are lookup errors
/// unless a fallback value is configured.
pub fn evaluate_records(
    predictor: &Predictor,
    entities: &EntityIndex,
    docs: &[PolarityDocuments],
    records: &[InteractionRecord],
    opts: EvalOptions,
) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::Config("cannot evaluate an empty record list".into()));
    }
    let mut cache: HashMap<usize, UserImportance> = HashMap::new();
    let mut pairs = Vec::with_capacity(records.len());
    for r in records {
        let ids = entities.user(&r.user_id).and_then(|u| Ok((u, entities.item(&r.item_id)?)));
        let (u, i) = match (ids, opts.mean_fallback) {
            (Ok(ids), _) => ids,
            (Err(Error::Lookup { .. }), Some(mean)) => {
                pairs.push((r.rating, finish(mean, opts.clip)));
                continue;
            }
            (Err(e), _) => return Err(e),
        };
        if !cache.contains_key(&u) {
            let d = docs.get(u).ok_or(Error::Index { id: u, rows: docs.len() })?;
            cache.insert(u, predictor.importance(d)?);
        }
        pairs.push((r.rating, finish(predictor.profile(u, i, &cache[&u])?.r_hat, opts.clip)));
    }
    Ok(MetricsReport::from_pairs(pairs))
}

/// Mean per-word aspect weights and occurrence count of one distinct token.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WordStat {
    pub mean_weights: Vec<f64>,
    pub count: usize,
}

impl WordStat {
    /// Argmax aspect, lowest index on ties.
    pub fn aspect(&self) -> usize {
        argmax(&self.mean_weights)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

/// Occurrence-averaged aspect weights of every distinct token in `doc`.
pub fn word_stats(params: &ModelParams, doc: &[usize], side: Polarity) -> Result<BTreeMap<usize, WordStat>> {
    let mut stats: BTreeMap<usize, WordStat> = BTreeMap::new();
    if doc.is_empty() {
        return Ok(stats);
    }
    let weights = word_weights(params, doc, side)?;
    for (j, &tok) in doc.iter().enumerate() {
        let row = weights.row(j);
        let s = stats.entry(tok).or_insert_with(|| WordStat { mean_weights: vec![0.0; row.len()], count: 0 });
        s.mean_weights.iter_mut().zip(row).for_each(|(a, w)| *a += w);
        s.count += 1;
    }
    for s in stats.values_mut() {
        let n = s.count as f64;
        s.mean_weights.iter_mut().for_each(|a| *a /= n);
    }
    Ok(stats)
}

/// Token id → aspect with the largest mean weight.
pub fn classify_words(params: &ModelParams, doc: &[usize], side: Polarity) -> Result<BTreeMap<usize, usize>> {
    Ok(word_stats(params, doc, side)?.into_iter().map(|(t, s)| (t, s.aspect())).collect())
}

/// Per aspect, the words classified into it ranked by mean weight on that
/// aspect times occurrence count, highest first (token id breaks ties),
/// at most `k` each.
pub fn top_aspect_words(params: &ModelParams, doc: &[usize], side: Polarity, k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let aspects = side.aspects(params.dims());
    let mut lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); aspects];
    for (tok, s) in word_stats(params, doc, side)? {
        let a = s.aspect();
        lists[a].push((tok, s.mean_weights[a] * s.count as f64));
    }
    for l in &mut lists {
        l.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        l.truncate(k);
    }
    Ok(lists)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AspectRow {
    pub aspect: usize,
    pub importance: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExplanationReport {
    pub user_id: String,
    pub item_id: String,
    pub preferred: Vec<AspectRow>,
    pub rejected: Vec<AspectRow>,
    pub predicted_rating: f64,
    pub positive_term: f64,
    pub negative_term: f64,
}

impl ExplanationReport {
    pub fn from_profile(user_id: &str, item_id: &str, p: &AspectProfile) -> Self {
        let rows = |imp: &crate::kernel::Tensor, score: &crate::kernel::Tensor| {
            imp.data()
                .iter()
                .zip(score.data())
                .enumerate()
                .map(|(aspect, (i, s))| AspectRow { aspect, importance: *i, score: *s })
                .collect()
        };
        Self {
            user_id: user_id.to_string(),
            item_id: item_id.to_string(),
            preferred: rows(&p.rho_p_plus, &p.s_p),
            rejected: rows(&p.rho_r_plus, &p.s_r),
            predicted_rating: p.r_hat,
            positive_term: p.positive_term(),
            negative_term: p.negative_term(),
        }
    }

    /// Plain-text rendering with a fixed field order.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "user: {}", self.user_id);
        let _ = writeln!(s, "item: {}", self.item_id);
        for (title, rows) in [("preferred", &self.preferred), ("rejected", &self.rejected)] {
            let _ = writeln!(s, "[{title}]");
            let _ = writeln!(s, "aspect\timportance\tscore");
            for r in rows {
                let _ = writeln!(s, "{}\t{:.6}\t{:.6}", r.aspect, r.importance, r.score);
            }
        }
        let _ = writeln!(s, "positive_term: {:.6}", self.positive_term);
        let _ = writeln!(s, "negative_term: {:.6}", self.negative_term);
        let _ = writeln!(s, "predicted_rating: {:.6}", self.predicted_rating);
        s
    }
}

/// Full profile of one known `(user, item)` pair, formatted.
pub fn explain_rating(
    predictor: &Predictor,
    entities: &EntityIndex,
    docs: &[PolarityDocuments],
    user_id: &str,
    item_id: &str,
) -> Result<ExplanationReport> {
    let u = entities.user(user_id)?;
    let i = entities.item(item_id)?;
    let d = docs.get(u).ok_or(Error::Index { id: u, rows: docs.len() })?;
    Ok(ExplanationReport::from_profile(user_id, item_id, &predictor.predict(d, u, i)?))
}
