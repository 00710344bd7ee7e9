//! Veracity-labeled news corpus, interaction logs, and impression derivation.
//!
//! The corpus file is line-delimited JSON, one news record per line; the
//! interaction log is line-delimited JSON `{user_id, news_id, timestamp}`.
//! From these the module builds per-user chronological sequences, slides a
//! history window over each sequence to produce (history, target) pairs,
//! attaches veracity-balanced candidate lists, and splits the result
//! chronologically into train/validation/test.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Veracity class of a news item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Veracity {
    Real,
    Fake,
}

impl Veracity {
    pub fn label(self) -> &'static str {
        match self {
            Veracity::Real => "real",
            Veracity::Fake => "fake",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Veracity::Real => Veracity::Fake,
            Veracity::Fake => Veracity::Real,
        }
    }
}

/// Degree of generator involvement. L0 is human-written; L4/L5 are
/// representable for forward compatibility but never emitted by loaders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GenerationMode {
    L0,
    L1,
    L2,
    L3,
    L4,
    L5,
}

impl GenerationMode {
    pub fn label(self) -> &'static str {
        match self {
            GenerationMode::L0 => "L0",
            GenerationMode::L1 => "L1",
            GenerationMode::L2 => "L2",
            GenerationMode::L3 => "L3",
            GenerationMode::L4 => "L4",
            GenerationMode::L5 => "L5",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "L0" => Some(GenerationMode::L0),
            "L1" => Some(GenerationMode::L1),
            "L2" => Some(GenerationMode::L2),
            "L3" => Some(GenerationMode::L3),
            "L4" => Some(GenerationMode::L4),
            "L5" => Some(GenerationMode::L5),
            _ => None,
        }
    }
}

/// One news article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub title: String,
    pub content: String,
    pub veracity: Veracity,
    pub mode: GenerationMode,
    /// Generator tag, present exactly when the item is generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    /// Id of the L0 item this was generated from, present iff generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterpart_of: Option<String>,
}

impl NewsItem {
    pub fn is_generated(&self) -> bool {
        self.mode != GenerationMode::L0
    }

    /// Per-record invariants (cross-record checks happen in the loader).
    fn validate(&self) -> Result<()> {
        let err = |msg: &str| {
            Err(Error::InvalidNewsItem {
                id: self.id.clone(),
                msg: msg.to_string(),
            })
        };
        match self.mode {
            GenerationMode::L0 => {
                if self.generator.is_some() || self.counterpart_of.is_some() {
                    return err("L0 items must not carry generator or counterpart_of");
                }
            }
            GenerationMode::L4 | GenerationMode::L5 => {
                return err("modes L4/L5 are reserved and may not appear in a corpus");
            }
            _ => {
                if self.generator.is_none() || self.counterpart_of.is_none() {
                    return err("generated items require generator and counterpart_of");
                }
            }
        }
        if matches!(self.mode, GenerationMode::L2 | GenerationMode::L3)
            && self.veracity == Veracity::Real
        {
            return err("L2/L3 must be Fake");
        }
        Ok(())
    }
}

/// One raw user-news interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub news_id: String,
    pub timestamp: i64,
}

/// A user's chronologically ordered interactions `(news_id, timestamp)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user_id: String,
    pub items: Vec<(String, i64)>,
}

impl UserSequence {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(id, _)| id.as_str())
    }
}

/// A (history, target) pair before candidate assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialInstance {
    pub user_id: String,
    pub history: Vec<String>,
    pub target_id: String,
    /// 1-based position of the target within the user's sequence; part of
    /// the sampling seed so candidate draws survive reordering.
    pub target_pos: usize,
    pub split_timestamp: i64,
}

/// One evaluation/training unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionInstance {
    pub user_id: String,
    pub history: Vec<String>,
    pub target_id: String,
    pub candidates: Vec<String>,
    pub split_timestamp: i64,
}

/// Index from (L0 id, generator, mode) to the generated counterpart id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CounterpartIndex {
    map: BTreeMap<(String, String, GenerationMode), String>,
}

impl CounterpartIndex {
    pub fn insert(
        &mut self,
        l0: &str,
        generator: &str,
        mode: GenerationMode,
        generated: &str,
    ) -> Result<()> {
        let key = (l0.to_string(), generator.to_string(), mode);
        if self.map.contains_key(&key) {
            return Err(Error::DuplicateCounterpart {
                l0: l0.to_string(),
                generator: generator.to_string(),
                mode: mode.label().to_string(),
            });
        }
        self.map.insert(key, generated.to_string());
        Ok(())
    }

    pub fn get(&self, l0: &str, generator: &str, mode: GenerationMode) -> Option<&str> {
        self.map
            .get(&(l0.to_string(), generator.to_string(), mode))
            .map(|s| s.as_str())
    }

    /// Counterpart id or a MissingCounterpart error.
    pub fn require(&self, l0: &str, generator: &str, mode: GenerationMode) -> Result<&str> {
        self.get(l0, generator, mode)
            .ok_or_else(|| Error::MissingCounterpart {
                l0: l0.to_string(),
                generator: generator.to_string(),
                mode: mode.label().to_string(),
            })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String, GenerationMode), &String)> {
        self.map.iter()
    }

    /// Distinct generator tags present in the index, sorted.
    pub fn generators(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.map.keys().map(|(_, g, _)| g).collect();
        set.into_iter().cloned().collect()
    }
}

/// L0 items that lack an expected counterpart, per (generator, mode).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub missing: Vec<(String, String, GenerationMode)>,
}

impl CompletenessReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Items, counterpart index, and user sequences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusBundle {
    pub items: BTreeMap<String, NewsItem>,
    pub counterparts: CounterpartIndex,
    pub sequences: Vec<UserSequence>,
}

impl CorpusBundle {
    pub fn item(&self, id: &str) -> Result<&NewsItem> {
        self.items
            .get(id)
            .ok_or_else(|| Error::UnknownNewsId(id.to_string()))
    }

    pub fn sequence(&self, user_id: &str) -> Option<&UserSequence> {
        self.sequences.iter().find(|s| s.user_id == user_id)
    }

    /// Sorted ids of L0 items with the given veracity.
    pub fn l0_ids(&self, veracity: Veracity) -> Vec<&str> {
        self.items
            .values()
            .filter(|i| i.mode == GenerationMode::L0 && i.veracity == veracity)
            .map(|i| i.id.as_str())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Loading and saving
// ---------------------------------------------------------------------------

fn parse_news_reader<R: Read>(reader: R, path: &str) -> Result<BTreeMap<String, NewsItem>> {
    let mut items: BTreeMap<String, NewsItem> = BTreeMap::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: NewsItem = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        item.validate()?;
        if items.contains_key(&item.id) {
            return Err(Error::DuplicateId(item.id));
        }
        items.insert(item.id.clone(), item);
    }
    // Cross-record checks: counterpart_of must resolve to an L0 item of the
    // same veracity.
    for item in items.values() {
        if let Some(ref l0) = item.counterpart_of {
            match items.get(l0) {
                Some(origin) if origin.mode == GenerationMode::L0 => {
                    if origin.veracity != item.veracity {
                        return Err(Error::InvalidNewsItem {
                            id: item.id.clone(),
                            msg: format!(
                                "veracity {} differs from counterpart `{}` ({})",
                                item.veracity.label(),
                                l0,
                                origin.veracity.label()
                            ),
                        });
                    }
                }
                _ => {
                    return Err(Error::DanglingCounterpart {
                        id: item.id.clone(),
                        target: l0.clone(),
                    })
                }
            }
        }
    }
    Ok(items)
}

/// Parse a line-delimited news corpus into a bundle (items only).
pub fn load_news_corpus(path: &Path) -> Result<CorpusBundle> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let items = parse_news_reader(file, &display)?;
    Ok(CorpusBundle {
        items,
        ..CorpusBundle::default()
    })
}

/// Parse a news corpus held in memory (tests, generated fixtures).
pub fn parse_news_corpus(text: &str) -> Result<CorpusBundle> {
    let items = parse_news_reader(text.as_bytes(), "<memory>")?;
    Ok(CorpusBundle {
        items,
        ..CorpusBundle::default()
    })
}

pub fn write_news_corpus<'a, I: IntoIterator<Item = &'a NewsItem>>(
    items: I,
    path: &Path,
) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::MalformedRecord {
            path: display.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(&display, e))?;
    }
    w.flush().map_err(|e| Error::io(&display, e))
}

pub fn load_interactions(path: &Path) -> Result<Vec<InteractionRecord>> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InteractionRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: display.clone(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_interactions(records: &[InteractionRecord], path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec).map_err(|e| Error::MalformedRecord {
            path: display.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(&display, e))?;
    }
    w.flush().map_err(|e| Error::io(&display, e))
}

pub fn write_impressions(instances: &[ImpressionInstance], path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        serde_json::to_writer(&mut w, inst).map_err(|e| Error::MalformedRecord {
            path: display.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(&display, e))?;
    }
    w.flush().map_err(|e| Error::io(&display, e))
}

pub fn load_impressions(path: &Path) -> Result<Vec<ImpressionInstance>> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: ImpressionInstance =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: display.clone(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        out.push(inst);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sequence and impression construction
// ---------------------------------------------------------------------------

/// Group interactions per user, sort chronologically (ties broken by news id)
/// and drop users with fewer than `min_interactions` interactions.
pub fn build_user_sequences(
    records: &[InteractionRecord],
    items: &BTreeMap<String, NewsItem>,
    min_interactions: usize,
) -> Result<Vec<UserSequence>> {
    let mut per_user: BTreeMap<&str, Vec<(String, i64)>> = BTreeMap::new();
    for rec in records {
        match items.get(&rec.news_id) {
            Some(item) if item.mode == GenerationMode::L0 => {}
            _ => return Err(Error::UnknownNewsId(rec.news_id.clone())),
        }
        per_user
            .entry(rec.user_id.as_str())
            .or_default()
            .push((rec.news_id.clone(), rec.timestamp));
    }
    let mut sequences = Vec::new();
    for (user_id, mut items) in per_user {
        if items.len() < min_interactions {
            continue;
        }
        items.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        sequences.push(UserSequence {
            user_id: user_id.to_string(),
            items,
        });
    }
    Ok(sequences)
}

/// Slide the history window over one sequence.
///
/// For every 1-based target position `t` with `h_min+1 <= t <= T` the target
/// is item `t` and the history is the most recent `min(h_max, t-1)` items
/// before it. When a user yields more than `per_user_cap` instances, a
/// seeded-random consecutive run of `per_user_cap` instances is kept.
pub fn derive_impressions(
    seq: &UserSequence,
    h_min: usize,
    h_max: usize,
    per_user_cap: usize,
    seed: u64,
) -> Vec<PartialInstance> {
    let t_len = seq.items.len();
    if t_len < h_min + 1 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for t in (h_min + 1)..=t_len {
        let hist_start = t.saturating_sub(1 + h_max);
        let history: Vec<String> = seq.items[hist_start..t - 1]
            .iter()
            .map(|(id, _)| id.clone())
            .collect();
        let (target_id, ts) = &seq.items[t - 1];
        out.push(PartialInstance {
            user_id: seq.user_id.clone(),
            history,
            target_id: target_id.clone(),
            target_pos: t,
            split_timestamp: *ts,
        });
    }
    if per_user_cap > 0 && out.len() > per_user_cap {
        let mut rng = rng_for(seed, &["cap", &seq.user_id]);
        let start = rng.gen_range(0..=out.len() - per_user_cap);
        out = out[start..start + per_user_cap].to_vec();
    }
    out
}

fn sample_without_replacement<'a>(
    pool: &mut Vec<&'a str>,
    need: usize,
    rng: &mut impl Rng,
) -> Vec<&'a str> {
    let mut picked = Vec::with_capacity(need);
    for _ in 0..need {
        let j = rng.gen_range(0..pool.len());
        picked.push(pool.swap_remove(j));
    }
    picked
}

pub(crate) fn shuffle_in_place<T>(v: &mut [T], rng: &mut impl Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

/// Attach a veracity-balanced candidate list to one partial instance.
///
/// A real target gets `k/2-1` sampled real plus `k/2` sampled fake items
/// (mirrored for fake targets), all L0 and outside the user's full sequence,
/// drawn uniformly without replacement; the final list is a seeded shuffle.
pub fn assemble_candidates(
    instance: &PartialInstance,
    pool: &CorpusBundle,
    k: usize,
    seed: u64,
) -> Result<ImpressionInstance> {
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::Config(format!("candidate list length {k} must be even and >= 2")));
    }
    let target = pool.item(&instance.target_id)?;
    let interacted: HashSet<&str> = match pool.sequence(&instance.user_id) {
        Some(seq) => seq.ids().collect(),
        None => instance
            .history
            .iter()
            .map(|s| s.as_str())
            .chain(std::iter::once(instance.target_id.as_str()))
            .collect(),
    };
    let eligible = |v: Veracity| -> Vec<&str> {
        pool.l0_ids(v)
            .into_iter()
            .filter(|id| !interacted.contains(id) && *id != instance.target_id)
            .collect()
    };
    let same_need = k / 2 - 1;
    let opp_need = k / 2;
    let mut same_pool = eligible(target.veracity);
    let mut opp_pool = eligible(target.veracity.opposite());
    if same_pool.len() < same_need {
        return Err(Error::PoolExhausted {
            veracity: target.veracity.label().to_string(),
            needed: same_need,
            available: same_pool.len(),
        });
    }
    if opp_pool.len() < opp_need {
        return Err(Error::PoolExhausted {
            veracity: target.veracity.opposite().label().to_string(),
            needed: opp_need,
            available: opp_pool.len(),
        });
    }
    let mut rng = rng_for(
        seed,
        &[
            "candidates",
            &instance.user_id,
            &instance.target_pos.to_string(),
        ],
    );
    let mut candidates: Vec<String> = Vec::with_capacity(k);
    candidates.push(instance.target_id.clone());
    candidates.extend(
        sample_without_replacement(&mut same_pool, same_need, &mut rng)
            .into_iter()
            .map(String::from),
    );
    candidates.extend(
        sample_without_replacement(&mut opp_pool, opp_need, &mut rng)
            .into_iter()
            .map(String::from),
    );
    shuffle_in_place(&mut candidates, &mut rng);
    Ok(ImpressionInstance {
        user_id: instance.user_id.clone(),
        history: instance.history.clone(),
        target_id: instance.target_id.clone(),
        candidates,
        split_timestamp: instance.split_timestamp,
    })
}

/// Chronological train/validation/test split.
///
/// Instances are stably sorted by target timestamp; the earliest
/// `1 - val_frac - test_frac` fraction becomes train and the remainder is
/// split into validation then test, validation taking the extra item when
/// the remainder is odd (for the default equal fractions).
pub fn temporal_split(
    instances: &[ImpressionInstance],
    val_frac: f64,
    test_frac: f64,
) -> Result<(
    Vec<ImpressionInstance>,
    Vec<ImpressionInstance>,
    Vec<ImpressionInstance>,
)> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("temporal_split on no instances"));
    }
    if !(0.0..1.0).contains(&(val_frac + test_frac)) || val_frac < 0.0 || test_frac < 0.0 {
        return Err(Error::Config(format!(
            "val_frac + test_frac must lie in [0, 1): got {val_frac} + {test_frac}"
        )));
    }
    let mut sorted: Vec<ImpressionInstance> = instances.to_vec();
    sorted.sort_by_key(|i| i.split_timestamp);
    let n = sorted.len();
    let train_n = ((n as f64) * (1.0 - val_frac - test_frac)).floor() as usize;
    let rem = n - train_n;
    let val_n = if rem == 0 || val_frac + test_frac == 0.0 {
        0
    } else {
        ((rem as f64) * val_frac / (val_frac + test_frac)).ceil() as usize
    };
    let test: Vec<_> = sorted.split_off(train_n + val_n);
    let val: Vec<_> = sorted.split_off(train_n);
    Ok((sorted, val, test))
}

/// Build the counterpart index and its completeness report.
///
/// Expected coverage per (generator, mode) key observed in the corpus: L1
/// counterparts for every L0 item, L2/L3 counterparts for every fake L0 item.
pub fn link_counterparts(bundle: &CorpusBundle) -> Result<(CounterpartIndex, CompletenessReport)> {
    let mut index = CounterpartIndex::default();
    for item in bundle.items.values() {
        if let (Some(l0), Some(generator)) = (&item.counterpart_of, &item.generator) {
            index.insert(l0, generator, item.mode, &item.id)?;
        }
    }
    let mut pairs: BTreeSet<(String, GenerationMode)> = BTreeSet::new();
    for (_, generator, mode) in index.map.keys().cloned() {
        pairs.insert((generator, mode));
    }
    let mut missing = Vec::new();
    for (generator, mode) in pairs {
        for item in bundle.items.values() {
            if item.mode != GenerationMode::L0 {
                continue;
            }
            let expected = match mode {
                GenerationMode::L1 => true,
                GenerationMode::L2 | GenerationMode::L3 => item.veracity == Veracity::Fake,
                _ => false,
            };
            if expected && index.get(&item.id, &generator, mode).is_none() {
                missing.push((item.id.clone(), generator.clone(), mode));
            }
        }
    }
    Ok((index, CompletenessReport { missing }))
}

// ---------------------------------------------------------------------------
// End-to-end derivation
// ---------------------------------------------------------------------------

/// Parameters for the impression pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineParams {
    pub min_interactions: usize,
    pub h_min: usize,
    pub h_max: usize,
    pub per_user_cap: usize,
    pub k: usize,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            min_interactions: 5,
            h_min: 4,
            h_max: 10,
            per_user_cap: 10,
            k: 20,
            val_frac: 0.1,
            test_frac: 0.1,
            seed: 0,
        }
    }
}

/// Train/validation/test impressions.
#[derive(Debug, Clone, Default)]
pub struct SplitImpressions {
    pub train: Vec<ImpressionInstance>,
    pub validation: Vec<ImpressionInstance>,
    pub test: Vec<ImpressionInstance>,
}

/// Full pipeline from a populated bundle to split impressions.
pub fn derive_all_impressions(
    bundle: &CorpusBundle,
    params: &PipelineParams,
) -> Result<SplitImpressions> {
    let mut assembled = Vec::new();
    for seq in &bundle.sequences {
        for partial in derive_impressions(
            seq,
            params.h_min,
            params.h_max,
            params.per_user_cap,
            params.seed,
        ) {
            assembled.push(assemble_candidates(&partial, bundle, params.k, params.seed)?);
        }
    }
    let (train, validation, test) = temporal_split(&assembled, params.val_frac, params.test_frac)?;
    Ok(SplitImpressions {
        train,
        validation,
        test,
    })
}

/// Corpus statistics in the shape of the dataset summary table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub interactions: usize,
    pub real_items: usize,
    pub fake_items: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl CorpusStats {
    pub fn compute(bundle: &CorpusBundle, split: &SplitImpressions) -> Self {
        let real_items = bundle
            .items
            .values()
            .filter(|i| i.mode == GenerationMode::L0 && i.veracity == Veracity::Real)
            .count();
        let fake_items = bundle
            .items
            .values()
            .filter(|i| i.mode == GenerationMode::L0 && i.veracity == Veracity::Fake)
            .count();
        CorpusStats {
            users: bundle.sequences.len(),
            interactions: bundle.sequences.iter().map(|s| s.items.len()).sum(),
            real_items,
            fake_items,
            train: split.train.len(),
            validation: split.validation.len(),
            test: split.test.len(),
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "users,interactions,real_items,fake_items,train,validation,test\n{},{},{},{},{},{},{}\n",
            self.users,
            self.interactions,
            self.real_items,
            self.fake_items,
            self.train,
            self.validation,
            self.test
        )
    }
}

/// SHA-256 over the items serialized in id order, hex-encoded.
///
/// Stable across runs: serialization is canonical serde JSON and the id
/// map iterates sorted.
pub fn corpus_digest(bundle: &CorpusBundle) -> String {
    let mut hasher = Sha256::new();
    for item in bundle.items.values() {
        hasher.update(serde_json::to_vec(item).expect("news item serializes"));
        hasher.update(b"\n");
    }
    let out: [u8; 32] = hasher.finalize().into();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Resolve the joint types of a candidate list (shared by metrics consumers).
pub fn resolve_types(
    bundle: &CorpusBundle,
    ids: &[String],
) -> Result<Vec<crate::metrics::JointType>> {
    ids.iter()
        .map(|id| Ok(crate::metrics::JointType::from_item(bundle.item(id)?)))
        .collect()
}
