//! Familiarity analysis: n-gram perplexity and rank association.
//!
//! Perplexity here is measured under an additively smoothed n-gram model
//! trained on the human corpus, so "familiar" means close to the human
//! training distribution. Externally computed per-item perplexities can be
//! ingested from file instead; both paths feed the same report.
//!
//! A text is scored as one sentence: the first tokens are conditioned on
//! boundary padding and no end-of-sentence event is predicted, so the mean
//! negative log-likelihood runs over exactly the text's tokens. Duplicating
//! a token sequence is perplexity-invariant exactly for unigram models; for
//! higher orders the junction tokens see a non-padding context.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusBundle, GenerationMode, NewsItem, Veracity};
use crate::error::{Error, Result};
use crate::textrep::{quantile, tokenize};

/// Reserved id for the unknown-token symbol.
const UNK: u32 = 0;
/// Reserved id for boundary padding; never a predicted symbol.
const BOS: u32 = u32::MAX;

/// What to do with tokens outside the training vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnknownPolicy {
    /// Map them to a shared UNK symbol that owns one slot of the
    /// smoothing mass.
    MapToUnk,
    /// Reject them; the vocabulary is exactly the training vocabulary.
    Closed,
}

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    counts: BTreeMap<u32, u64>,
    total: u64,
}

/// Additively smoothed n-gram language model, order 1 to 3.
#[derive(Debug, Clone)]
pub struct NGramLM {
    order: usize,
    alpha: f64,
    policy: UnknownPolicy,
    vocab: BTreeMap<String, u32>,
    contexts: BTreeMap<Vec<u32>, ContextCounts>,
}

impl NGramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn policy(&self) -> UnknownPolicy {
        self.policy
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    /// Number of predictable symbols: the vocabulary, plus UNK when open.
    pub fn symbol_count(&self) -> usize {
        match self.policy {
            UnknownPolicy::MapToUnk => self.vocab.len() + 1,
            UnknownPolicy::Closed => self.vocab.len(),
        }
    }

    /// Uniform unigram over the given vocabulary: every token scores 1/V.
    pub fn uniform_unigram<I, S>(vocab: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        let mut next = 1u32;
        for tok in vocab {
            map.entry(tok.into()).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            });
        }
        if map.is_empty() {
            return Err(Error::EmptyInput("uniform unigram vocabulary"));
        }
        Ok(NGramLM {
            order: 1,
            alpha: 1.0,
            policy: UnknownPolicy::Closed,
            vocab: map,
            contexts: BTreeMap::new(),
        })
    }

    fn token_id(&self, token: &str) -> Result<u32> {
        match self.vocab.get(token) {
            Some(&id) => Ok(id),
            None => match self.policy {
                UnknownPolicy::MapToUnk => Ok(UNK),
                UnknownPolicy::Closed => Err(Error::UnknownToken(token.to_string())),
            },
        }
    }

    fn prob_ids(&self, ctx: &[u32], token: u32) -> f64 {
        let v = self.symbol_count() as f64;
        match self.contexts.get(ctx) {
            Some(c) => {
                let n = c.counts.get(&token).copied().unwrap_or(0) as f64;
                (n + self.alpha) / (c.total as f64 + self.alpha * v)
            }
            None => 1.0 / v,
        }
    }

    /// Smoothed conditional probability of `token` after `context`.
    ///
    /// `context` is the preceding tokens, most recent last; only the final
    /// `order - 1` are used, and missing positions count as boundary
    /// padding.
    pub fn prob(&self, context: &[&str], token: &str) -> Result<f64> {
        let tid = self.token_id(token)?;
        let need = self.order - 1;
        let mut ctx = vec![BOS; need];
        for (slot, tok) in ctx
            .iter_mut()
            .rev()
            .zip(context.iter().rev().take(need))
        {
            *slot = self.token_id(tok)?;
        }
        Ok(self.prob_ids(&ctx, tid))
    }

    /// All observed contexts, as token-id slices.
    fn observed_contexts(&self) -> impl Iterator<Item = &Vec<u32>> {
        self.contexts.keys()
    }

    /// Sum of conditional probabilities over every predictable symbol.
    ///
    /// 1 within float error for any context; exposed for the
    /// proper-distribution check.
    pub fn context_prob_sums(&self) -> Vec<f64> {
        let symbols: Vec<u32> = self.symbol_ids();
        self.observed_contexts()
            .map(|ctx| symbols.iter().map(|&s| self.prob_ids(ctx, s)).sum())
            .collect()
    }

    fn symbol_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.vocab.values().copied().collect();
        if self.policy == UnknownPolicy::MapToUnk {
            ids.push(UNK);
        }
        ids
    }
}

/// Train an additively smoothed n-gram model on whitespace-tokenized texts.
///
/// Each text is one sentence: its first tokens are conditioned on boundary
/// padding. The vocabulary is every token seen in training.
pub fn train_ngram_lm<S: AsRef<str>>(
    texts: &[S],
    n: usize,
    alpha: f64,
    policy: UnknownPolicy,
) -> Result<NGramLM> {
    if !(1..=3).contains(&n) {
        return Err(Error::Config(format!("n-gram order must be 1..=3, got {n}")));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::Config(format!("smoothing alpha must be > 0, got {alpha}")));
    }
    let tokenized: Vec<Vec<String>> = texts
        .iter()
        .map(|t| {
            tokenize(t.as_ref(), usize::MAX)
                .words()
                .map(str::to_string)
                .collect()
        })
        .filter(|toks: &Vec<String>| !toks.is_empty())
        .collect();
    if tokenized.is_empty() {
        return Err(Error::EmptyInput("n-gram training corpus"));
    }

    let mut vocab: BTreeMap<String, u32> = BTreeMap::new();
    let mut next = 1u32;
    for toks in &tokenized {
        for tok in toks {
            vocab.entry(tok.clone()).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            });
        }
    }

    let mut contexts: BTreeMap<Vec<u32>, ContextCounts> = BTreeMap::new();
    for toks in &tokenized {
        let ids: Vec<u32> = toks.iter().map(|t| vocab[t]).collect();
        let mut ctx = vec![BOS; n - 1];
        for &id in &ids {
            let slot = contexts.entry(ctx.clone()).or_default();
            *slot.counts.entry(id).or_insert(0) += 1;
            slot.total += 1;
            if n > 1 {
                ctx.rotate_left(1);
                ctx[n - 2] = id;
            }
        }
    }

    Ok(NGramLM {
        order: n,
        alpha,
        policy,
        vocab,
        contexts,
    })
}

/// Perplexity of a text: exp of its mean per-token negative log-likelihood.
pub fn perplexity(lm: &NGramLM, text: &str) -> Result<f64> {
    let toks: Vec<String> = tokenize(text, usize::MAX)
        .words()
        .map(str::to_string)
        .collect();
    if toks.is_empty() {
        return Err(Error::EmptyInput("text to score"));
    }
    let mut nll = 0.0;
    let mut ctx = vec![BOS; lm.order - 1];
    for tok in &toks {
        let id = lm.token_id(tok)?;
        nll -= lm.prob_ids(&ctx, id).ln();
        if lm.order > 1 {
            ctx.rotate_left(1);
            ctx[lm.order - 2] = id;
        }
    }
    Ok((nll / toks.len() as f64).exp())
}

/// Where a perplexity value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PplSource {
    Ngram,
    File,
}

/// Per-item perplexity observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplRecord {
    pub news_id: String,
    pub perplexity: f64,
    pub source: PplSource,
}

/// Supplies a perplexity per news item.
pub enum PplProvider<'a> {
    /// Score `title + content` under an n-gram model.
    Model(&'a NGramLM),
    /// Look the item up in a precomputed table.
    Table(&'a BTreeMap<String, f64>),
}

impl PplProvider<'_> {
    fn value(&self, item: &NewsItem) -> Result<f64> {
        match self {
            PplProvider::Model(lm) => {
                let text = format!("{} {}", item.title, item.content);
                perplexity(lm, &text)
            }
            PplProvider::Table(map) => map
                .get(&item.id)
                .copied()
                .ok_or_else(|| Error::MissingPerplexity(item.id.clone())),
        }
    }

    fn source(&self) -> PplSource {
        match self {
            PplProvider::Model(_) => PplSource::Ngram,
            PplProvider::Table(_) => PplSource::File,
        }
    }
}

/// Load a precomputed perplexity table: one `news_id perplexity` per line.
pub fn load_ppl_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_ppl_reader(BufReader::new(file), &path.display().to_string())
}

fn parse_ppl_reader<R: Read>(reader: BufReader<R>, path: &str) -> Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (id, value) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(v), None) => (id, v),
            _ => {
                return Err(Error::MalformedRecord {
                    path: path.to_string(),
                    line: lineno,
                    msg: "expected `news_id perplexity`".to_string(),
                })
            }
        };
        let ppl: f64 = value.parse().map_err(|_| Error::MalformedRecord {
            path: path.to_string(),
            line: lineno,
            msg: format!("unparsable perplexity `{value}`"),
        })?;
        if !ppl.is_finite() || ppl < 1.0 {
            return Err(Error::MalformedRecord {
                path: path.to_string(),
                line: lineno,
                msg: format!("perplexity must be finite and >= 1, got {ppl}"),
            });
        }
        if map.insert(id.to_string(), ppl).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(map)
}

/// Distribution summary of one perplexity bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplStats {
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn stats_of(values: &[f64]) -> PplStats {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    PplStats {
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    }
}

/// One type bucket of the perplexity report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplBucket {
    /// `HF`, `HR`, `GF-L1/<generator>`, `GR/<generator>`, ...
    pub label: String,
    pub count: usize,
    /// Absent when the bucket is empty.
    pub stats: Option<PplStats>,
    /// Raw values in news-id order, for plotting.
    pub values: Vec<f64>,
}

/// Per-type perplexity distributions over one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplReport {
    pub source: PplSource,
    pub buckets: Vec<PplBucket>,
    /// (news_id, bucket label, perplexity), in news-id order.
    pub rows: Vec<PplRecord>,
    labels: Vec<(String, String)>,
}

fn bucket_label(item: &NewsItem) -> String {
    match (&item.generator, item.veracity) {
        (None, Veracity::Fake) => "HF".to_string(),
        (None, Veracity::Real) => "HR".to_string(),
        (Some(g), Veracity::Real) => format!("GR/{g}"),
        (Some(g), Veracity::Fake) => format!("GF-{}/{g}", item.mode.label()),
    }
}

/// Bucket labels every report enumerates for this corpus, empty or not:
/// the two human buckets, and per generator the real counterpart bucket
/// plus one generated-fake bucket per faking level.
fn expected_labels(bundle: &CorpusBundle) -> Vec<String> {
    let mut labels = vec!["HF".to_string(), "HR".to_string()];
    let generators: std::collections::BTreeSet<&String> = bundle
        .items
        .values()
        .filter_map(|item| item.generator.as_ref())
        .collect();
    for g in generators {
        labels.push(format!("GR/{g}"));
        for mode in [GenerationMode::L1, GenerationMode::L2, GenerationMode::L3] {
            labels.push(format!("GF-{}/{g}", mode.label()));
        }
    }
    labels
}

/// Per-type perplexity report over every item in the corpus.
pub fn ppl_report(bundle: &CorpusBundle, provider: &PplProvider) -> Result<PplReport> {
    let items: Vec<&NewsItem> = bundle.items.values().collect();
    let values: Vec<f64> = items
        .par_iter()
        .map(|item| provider.value(item))
        .collect::<Result<_>>()?;

    let mut by_label: BTreeMap<String, Vec<f64>> = expected_labels(bundle)
        .into_iter()
        .map(|l| (l, Vec::new()))
        .collect();
    let mut rows = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for (item, &ppl) in items.iter().zip(&values) {
        let label = bucket_label(item);
        by_label.entry(label.clone()).or_default().push(ppl);
        rows.push(PplRecord {
            news_id: item.id.clone(),
            perplexity: ppl,
            source: provider.source(),
        });
        labels.push((item.id.clone(), label));
    }

    let buckets = by_label
        .into_iter()
        .map(|(label, values)| PplBucket {
            label,
            count: values.len(),
            stats: (!values.is_empty()).then(|| stats_of(&values)),
            values,
        })
        .collect();
    Ok(PplReport {
        source: provider.source(),
        buckets,
        rows,
        labels,
    })
}

impl PplReport {
    pub fn bucket(&self, label: &str) -> Option<&PplBucket> {
        self.buckets.iter().find(|b| b.label == label)
    }

    /// Perplexity keyed by news id, for rank association.
    pub fn table(&self) -> BTreeMap<String, f64> {
        self.rows
            .iter()
            .map(|r| (r.news_id.clone(), r.perplexity))
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("label,count,mean,min,q1,median,q3,max\n");
        for b in &self.buckets {
            match &b.stats {
                Some(s) => out.push_str(&format!(
                    "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                    b.label, b.count, s.mean, s.min, s.q1, s.median, s.q3, s.max
                )),
                None => out.push_str(&format!("{},0,,,,,,\n", b.label)),
            }
        }
        out
    }

    pub fn raw_csv(&self) -> String {
        let mut out = String::from("news_id,label,perplexity\n");
        for (row, (id, label)) in self.rows.iter().zip(&self.labels) {
            debug_assert_eq!(&row.news_id, id);
            out.push_str(&format!("{},{},{:.6}\n", id, label, row.perplexity));
        }
        out
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean (i+1 + j+1)/2
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimMismatch(format!(
            "spearman inputs: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::TooFewPairs(xs.len()));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 {
        return Err(Error::NoRankVariance("first input"));
    }
    if vy == 0.0 {
        return Err(Error::NoRankVariance("second input"));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Spearman correlation between perplexity and rank position, pooled over
/// impressions.
///
/// Rank position is 1 for the top-ranked candidate, so a positive
/// coefficient means higher perplexity goes with a numerically larger,
/// worse rank.
pub fn rank_ppl_association(
    evaluations: &[crate::recmodel::RankedEvaluation],
    ppl: &BTreeMap<String, f64>,
) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for ev in evaluations {
        for (pos, id) in ev.ranked_ids.iter().enumerate() {
            let p = ppl
                .get(id)
                .copied()
                .ok_or_else(|| Error::MissingPerplexity(id.clone()))?;
            xs.push(p);
            ys.push((pos + 1) as f64);
        }
    }
    spearman(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_news_corpus;
    use crate::recmodel::RankedEvaluation;
    use crate::rng::rng_for;
    use rand::Rng;

    fn lm(texts: &[&str], n: usize, alpha: f64) -> NGramLM {
        train_ngram_lm(texts, n, alpha, UnknownPolicy::MapToUnk).unwrap()
    }

    #[test]
    fn conditional_rows_sum_to_one() {
        for n in 1..=3 {
            let m = lm(&["the cat sat on the mat", "the dog sat"], n, 0.1);
            for sum in m.context_prob_sums() {
                assert!((sum - 1.0).abs() < 1e-9, "n={n} sum={sum}");
            }
        }
    }

    #[test]
    fn unseen_bigram_probability_matches_hand_formula() {
        // corpus "a b a c": context `a` observed twice; V = 3 words + UNK.
        let m = lm(&["a b a c"], 2, 0.1);
        let v = 4.0;
        let seen = m.prob(&["a"], "b").unwrap();
        assert!((seen - 1.1 / (2.0 + 0.1 * v)).abs() < 1e-12);
        let unseen = m.prob(&["a"], "a").unwrap();
        assert!((unseen - 0.1 / (2.0 + 0.1 * v)).abs() < 1e-12);
        // context never observed at all -> uniform 1/V
        let cold = m.prob(&["c"], "a").unwrap();
        assert!((cold - 1.0 / v).abs() < 1e-12);
    }

    #[test]
    fn uniform_unigram_perplexity_equals_vocab_size() {
        let vocab: Vec<String> = (0..7).map(|i| format!("w{i}")).collect();
        let m = NGramLM::uniform_unigram(vocab).unwrap();
        let p = perplexity(&m, "w0 w3 w6 w1 w1").unwrap();
        assert!((p - 7.0).abs() < 1e-9, "got {p}");
    }

    #[test]
    fn repeated_token_at_half_probability_gives_perplexity_two() {
        let m = NGramLM::uniform_unigram(["a", "b"]).unwrap();
        assert!((m.prob(&[], "a").unwrap() - 0.5).abs() < 1e-12);
        let p = perplexity(&m, "a a a a").unwrap();
        assert!((p - 2.0).abs() < 1e-12, "got {p}");
    }

    #[test]
    fn memorized_text_approaches_perplexity_one() {
        let text = "one two three four five six";
        let m = lm(&[text], 3, 1e-9);
        let p = perplexity(&m, text).unwrap();
        assert!(p < 1.0001, "got {p}");
    }

    #[test]
    fn single_token_corpus_probability_near_one() {
        let m = lm(&["a a a"], 1, 1e-9);
        let p = m.prob(&[], "a").unwrap();
        assert!(p > 0.999999, "got {p}");
    }

    #[test]
    fn duplication_is_perplexity_invariant_for_unigram() {
        let m = lm(&["red green blue red green"], 1, 0.1);
        let once = perplexity(&m, "red blue green").unwrap();
        let twice = perplexity(&m, "red blue green red blue green").unwrap();
        assert!((once - twice).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(
            train_ngram_lm::<&str>(&[], 2, 0.1, UnknownPolicy::MapToUnk),
            Err(Error::EmptyInput(_))
        ));
        let m = lm(&["a b"], 2, 0.1);
        assert!(matches!(perplexity(&m, "  "), Err(Error::EmptyInput(_))));
        assert!(matches!(
            train_ngram_lm(&["a"], 4, 0.1, UnknownPolicy::MapToUnk),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train_ngram_lm(&["a"], 1, 0.0, UnknownPolicy::MapToUnk),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn closed_policy_rejects_unknown_tokens() {
        let m = train_ngram_lm(&["a b c"], 2, 0.1, UnknownPolicy::Closed).unwrap();
        assert!(matches!(
            perplexity(&m, "a z"),
            Err(Error::UnknownToken(t)) if t == "z"
        ));
        // open policy scores it through UNK instead
        let open = lm(&["a b c"], 2, 0.1);
        assert!(perplexity(&open, "a z").unwrap() >= 1.0);
    }

    #[test]
    fn perplexity_is_at_least_one() {
        let m = lm(&["u v w x y z u v"], 2, 0.5);
        for text in ["u v", "z y x", "u u u"] {
            assert!(perplexity(&m, text).unwrap() >= 1.0);
        }
    }

    fn report_bundle() -> CorpusBundle {
        let jsonl = r#"
{"id":"h1","title":"storm hits coast","content":"the storm made landfall near the coast","veracity":"real","mode":"L0"}
{"id":"h2","title":"cure found","content":"miracle cure found in common herb","veracity":"fake","mode":"L0"}
{"id":"g1","title":"storm strikes shore","content":"the storm reached the shore area","veracity":"real","mode":"L1","generator":"gen-a","counterpart_of":"h1"}
{"id":"g2","title":"cure discovered","content":"wonder cure discovered in herb","veracity":"fake","mode":"L2","generator":"gen-a","counterpart_of":"h2"}
"#;
        parse_news_corpus(jsonl.trim()).unwrap()
    }

    #[test]
    fn report_buckets_cover_types_and_empty_buckets_have_no_stats() {
        let bundle = report_bundle();
        let m = lm(&["the storm made landfall near the coast"], 2, 0.1);
        let provider = PplProvider::Model(&m);
        let report = ppl_report(&bundle, &provider).unwrap();
        let hf = report.bucket("HF").unwrap();
        assert_eq!(hf.count, 1);
        assert!(hf.stats.is_some());
        assert_eq!(report.bucket("HR").unwrap().count, 1);
        assert_eq!(report.bucket("GR/gen-a").unwrap().count, 1);
        assert_eq!(report.bucket("GF-L2/gen-a").unwrap().count, 1);
        let empty = report.bucket("GF-L1/gen-a").unwrap();
        assert_eq!(empty.count, 0);
        assert!(empty.stats.is_none());
        assert!(report.bucket("GF-L3/gen-a").is_some());
        assert_eq!(report.rows.len(), 4);
        assert!(report.summary_csv().contains("GF-L1/gen-a,0,,,,,,"));
    }

    #[test]
    fn identical_corpora_give_identical_summaries() {
        let bundle = report_bundle();
        let m = lm(&["the storm made landfall", "cure found in herb"], 2, 0.1);
        let a = ppl_report(&bundle, &PplProvider::Model(&m)).unwrap();
        let b = ppl_report(&bundle, &PplProvider::Model(&m)).unwrap();
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.raw_csv(), b.raw_csv());
    }

    #[test]
    fn generated_repetition_of_frequent_tokens_scores_below_human() {
        // LM trained on a corpus dominated by a few tokens; "generated"
        // texts reuse exactly those, "human" texts mix in rare ones.
        let mut train = vec!["the market rose today"; 20];
        train.push("obscure lexeme cavalcade perambulates");
        let m = lm(&train, 2, 0.1);
        let generated = ["the market rose today", "the market rose"];
        let human = [
            "obscure cavalcade rose today",
            "the perambulates lexeme market",
        ];
        let mean = |texts: &[&str]| {
            texts.iter().map(|t| perplexity(&m, t).unwrap()).sum::<f64>() / texts.len() as f64
        };
        assert!(mean(&generated) < mean(&human));
    }

    #[test]
    fn table_provider_errors_on_missing_item() {
        let bundle = report_bundle();
        let mut table = BTreeMap::new();
        table.insert("h1".to_string(), 12.0);
        let err = ppl_report(&bundle, &PplProvider::Table(&table)).unwrap_err();
        assert!(matches!(err, Error::MissingPerplexity(_)));
    }

    #[test]
    fn ppl_file_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ppl.txt");
        fs::write(&path, "n1 12.5\nn2 1.0\n\nn3 300\n").unwrap();
        let map = load_ppl_file(&path).unwrap();
        assert_eq!(map.len(), 3);
        assert_eq!(map["n1"], 12.5);

        fs::write(&path, "n1 0.5\n").unwrap();
        assert!(matches!(
            load_ppl_file(&path),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
        fs::write(&path, "n1\n").unwrap();
        assert!(load_ppl_file(&path).is_err());
        fs::write(&path, "n1 2.0\nn1 3.0\n").unwrap();
        assert!(matches!(load_ppl_file(&path), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn spearman_is_signed_and_tie_aware() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = [2.0, 4.0, 6.0, 8.0, 10.0];
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
        // average ranks on ties: [1, 2.5, 2.5, 4]
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 9.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::TooFewPairs(2))));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::NoRankVariance(_))
        ));
    }

    #[test]
    fn spearman_invariant_under_monotone_transform() {
        let mut rng = rng_for(3, &["spearman-mono"]);
        let xs: Vec<f64> = (0..50).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let ys: Vec<f64> = (0..50).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let base = spearman(&xs, &ys).unwrap();
        let ex: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        let cy: Vec<f64> = ys.iter().map(|y| y.powi(3) + 2.0 * y).collect();
        assert!((spearman(&ex, &ys).unwrap() - base).abs() < 1e-12);
        assert!((spearman(&xs, &cy).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn independent_pairing_has_small_coefficient() {
        let mut rng = rng_for(9, &["spearman-null"]);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ys: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let rho = spearman(&xs, &ys).unwrap();
        assert!(rho.abs() < 0.1, "got {rho}");
    }

    fn eval(ids: &[&str]) -> RankedEvaluation {
        RankedEvaluation {
            user_id: "u".to_string(),
            target_id: ids[0].to_string(),
            ranked_ids: ids.iter().map(|s| s.to_string()).collect(),
            scores: (0..ids.len()).map(|i| -(i as f64)).collect(),
        }
    }

    #[test]
    fn rank_association_follows_sign_convention() {
        // perplexity rises with rank position -> +1
        let evals = [eval(&["a", "b", "c", "d"])];
        let table: BTreeMap<String, f64> = [("a", 2.0), ("b", 5.0), ("c", 9.0), ("d", 11.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        assert!((rank_ppl_association(&evals, &table).unwrap() - 1.0).abs() < 1e-12);
        let rev: BTreeMap<String, f64> = [("a", 11.0), ("b", 9.0), ("c", 5.0), ("d", 2.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        assert!((rank_ppl_association(&evals, &rev).unwrap() + 1.0).abs() < 1e-12);
        let missing: BTreeMap<String, f64> = BTreeMap::new();
        assert!(matches!(
            rank_ppl_association(&evals, &missing),
            Err(Error::MissingPerplexity(_))
        ));
    }
}
