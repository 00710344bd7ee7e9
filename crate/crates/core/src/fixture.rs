//! Deterministic synthetic corpora for tests and demos.
//!
//! The construction gives the learner a real signal to find and gives the
//! generated items a measurable statistical footprint:
//! - real and fake items draw from disjoint token pools, so veracity is
//!   linearly separable in content space;
//! - real items split into taste groups and every user clicks almost only
//!   their own group, so the next click is predictable from history;
//! - a small set of glue tokens appears in every real item, making them
//!   the corpus's most frequent tokens;
//! - generated counterparts keep a mode-dependent fraction of their source
//!   tokens and fill the rest with glue tokens, so higher faking levels
//!   are further from their source, closer to the corpus centroid, and
//!   lower in n-gram perplexity than human text.

use rand::Rng;

use crate::corpus::{
    CorpusBundle, GenerationMode, InteractionRecord, NewsItem, Veracity,
};
use crate::error::Result;
use crate::rng::rng_for;

/// Shape of a synthetic corpus.
#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub n_real: usize,
    pub n_fake: usize,
    pub n_users: usize,
    pub interactions_per_user: usize,
    /// Taste groups partitioning the real items.
    pub n_groups: usize,
    /// Fraction of clicks landing on fake items instead of the user's group.
    pub fake_click_frac: f64,
    pub generators: Vec<String>,
    pub title_len: usize,
    pub content_len: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            n_real: 100,
            n_fake: 100,
            n_users: 100,
            interactions_per_user: 12,
            n_groups: 10,
            fake_click_frac: 0.1,
            generators: vec!["genA".to_string()],
            title_len: 6,
            content_len: 20,
            seed: 0,
        }
    }
}

const GROUP_TOKENS: usize = 8;
const GLUE_TOKENS: usize = 8;
const FAKE_TOKENS: usize = 40;

/// Fraction of source tokens a counterpart keeps, per faking level.
fn keep_fraction(mode: GenerationMode) -> f64 {
    match mode {
        GenerationMode::L1 => 0.7,
        GenerationMode::L2 => 0.4,
        _ => 0.1,
    }
}

fn glue_token(rng: &mut impl Rng) -> String {
    format!("rc{}", rng.gen_range(0..GLUE_TOKENS))
}

fn group_token(group: usize, rng: &mut impl Rng) -> String {
    format!("r{group:02}x{}", rng.gen_range(0..GROUP_TOKENS))
}

fn fake_token(rng: &mut impl Rng) -> String {
    // Quadratic skew: low indices dominate, giving the fake pool its own
    // frequent tokens.
    let u: f64 = rng.gen();
    format!("fx{:02}", ((u * u) * FAKE_TOKENS as f64) as usize)
}

fn real_text(group: usize, len: usize, rng: &mut impl Rng) -> String {
    // 30% glue keeps the glue tokens the most frequent in the corpus.
    let words: Vec<String> = (0..len)
        .map(|_| {
            if rng.gen::<f64>() < 0.3 {
                glue_token(rng)
            } else {
                group_token(group, rng)
            }
        })
        .collect();
    words.join(" ")
}

fn fake_text(len: usize, rng: &mut impl Rng) -> String {
    let words: Vec<String> = (0..len).map(|_| fake_token(rng)).collect();
    words.join(" ")
}

fn counterpart_text(source: &str, mode: GenerationMode, rng: &mut impl Rng) -> String {
    let keep = keep_fraction(mode);
    let words: Vec<String> = source
        .split_whitespace()
        .map(|w| {
            if rng.gen::<f64>() < keep {
                w.to_string()
            } else {
                glue_token(rng)
            }
        })
        .collect();
    words.join(" ")
}

/// All L0 items plus, per generator, an L1 counterpart for each real item
/// and L1/L2/L3 counterparts for each fake item.
pub fn synth_news(spec: &FixtureSpec) -> Vec<NewsItem> {
    let mut items = Vec::new();
    for i in 0..spec.n_real {
        let group = i % spec.n_groups.max(1);
        let mut rng = rng_for(spec.seed, &["news", "real", &i.to_string()]);
        items.push(NewsItem {
            id: format!("r{i:03}"),
            title: real_text(group, spec.title_len, &mut rng),
            content: real_text(group, spec.content_len, &mut rng),
            veracity: Veracity::Real,
            mode: GenerationMode::L0,
            generator: None,
            counterpart_of: None,
        });
    }
    for i in 0..spec.n_fake {
        let mut rng = rng_for(spec.seed, &["news", "fake", &i.to_string()]);
        items.push(NewsItem {
            id: format!("f{i:03}"),
            title: fake_text(spec.title_len, &mut rng),
            content: fake_text(spec.content_len, &mut rng),
            veracity: Veracity::Fake,
            mode: GenerationMode::L0,
            generator: None,
            counterpart_of: None,
        });
    }

    let mut generated = Vec::new();
    for item in &items {
        let modes: &[GenerationMode] = match item.veracity {
            Veracity::Real => &[GenerationMode::L1],
            Veracity::Fake => &[GenerationMode::L1, GenerationMode::L2, GenerationMode::L3],
        };
        for generator in &spec.generators {
            for &mode in modes {
                let mut rng = rng_for(
                    spec.seed,
                    &["counterpart", generator, mode.label(), &item.id],
                );
                generated.push(NewsItem {
                    id: format!("{}-{}-{}", item.id, generator, mode.label()),
                    title: counterpart_text(&item.title, mode, &mut rng),
                    content: counterpart_text(&item.content, mode, &mut rng),
                    veracity: item.veracity,
                    mode,
                    generator: Some(generator.clone()),
                    counterpart_of: Some(item.id.clone()),
                });
            }
        }
    }
    items.extend(generated);
    items
}

/// Clicks: each user works through their taste group with occasional fake
/// detours; timestamps interleave users so the temporal split cuts every
/// user's tail.
pub fn synth_interactions(spec: &FixtureSpec) -> Vec<InteractionRecord> {
    let groups = spec.n_groups.max(1);
    let mut records = Vec::new();
    for u in 0..spec.n_users {
        let group = u % groups;
        let group_items: Vec<usize> = (0..spec.n_real).filter(|i| i % groups == group).collect();
        let mut rng = rng_for(spec.seed, &["clicks", &u.to_string()]);
        for i in 0..spec.interactions_per_user {
            let news_id = if rng.gen::<f64>() < spec.fake_click_frac && spec.n_fake > 0 {
                format!("f{:03}", rng.gen_range(0..spec.n_fake))
            } else {
                let pick = group_items[rng.gen_range(0..group_items.len())];
                format!("r{pick:03}")
            };
            records.push(InteractionRecord {
                user_id: format!("u{u:03}"),
                news_id,
                timestamp: (i * spec.n_users + u) as i64,
            });
        }
    }
    records
}

/// In-memory corpus: items parsed into a bundle (sequences not built).
pub fn synth_bundle(spec: &FixtureSpec) -> Result<(CorpusBundle, Vec<InteractionRecord>)> {
    let items = synth_news(spec);
    let mut text = String::new();
    for item in &items {
        text.push_str(&serde_json::to_string(item).expect("news item serializes"));
        text.push('\n');
    }
    let bundle = crate::corpus::parse_news_corpus(&text)?;
    Ok((bundle, synth_interactions(spec)))
}

/// Write `news.jsonl` and `clicks.jsonl` under `dir`; returns their paths.
pub fn write_fixture(
    spec: &FixtureSpec,
    dir: &std::path::Path,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let items = synth_news(spec);
    let news_path = dir.join("news.jsonl");
    crate::corpus::write_news_corpus(items.iter(), &news_path)?;
    let clicks_path = dir.join("clicks.jsonl");
    crate::corpus::write_interactions(&synth_interactions(spec), &clicks_path)?;
    Ok((news_path, clicks_path))
}
