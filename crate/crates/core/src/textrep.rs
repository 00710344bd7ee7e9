//! Text representation: tokenization, frozen per-token feature vectors, and
//! the counterpart semantic-similarity analysis.
//!
//! Token vectors come either from a seeded hash embedder (a fixed,
//! informative feature map standing in for a frozen language-model backbone)
//! or from a precomputed per-token file, so externally computed features can
//! be injected without code changes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::corpus::{CorpusBundle, GenerationMode, NewsItem};
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, rng_for};

/// One slot of a token sequence. Padding is distinguishable from vocabulary
/// tokens and always embeds to the zero vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Word(String),
    Pad,
}

/// Lowercased word tokens, optionally padded.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            Token::Word(w) => Some(w.as_str()),
            Token::Pad => None,
        })
    }

    /// Extend with padding slots up to `len` (no-op if already longer).
    pub fn pad_to(&mut self, len: usize) {
        while self.tokens.len() < len {
            self.tokens.push(Token::Pad);
        }
    }
}

/// Lowercase, split on non-alphanumeric runs, truncate to `max_len`.
pub fn tokenize(text: &str, max_len: usize) -> TokenSequence {
    let tokens = text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .take(max_len)
        .map(|w| Token::Word(w.to_string()))
        .collect();
    TokenSequence { tokens }
}

/// How a precomputed table treats tokens it does not contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OovPolicy {
    /// Unknown token is an error.
    Reject,
    /// Deterministic hash-derived vector seeded by this value.
    HashFallback { seed: u64 },
}

#[derive(Debug, Clone)]
enum Source {
    Hash { seed: u64, vocab_buckets: u64 },
    Precomputed { map: HashMap<String, Vec<f64>>, oov: OovPolicy },
}

/// Frozen token-to-vector map.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    source: Source,
    pub frozen: bool,
}

fn hash_vector(token: &str, seed: u64, vocab_buckets: u64, dim: usize) -> Vec<f64> {
    let bucket = fnv1a64(token.as_bytes()) % vocab_buckets.max(1);
    let mut rng = rng_for(seed, &["tok", &bucket.to_string()]);
    // Uniform on [-a, a] with a = sqrt(3/dim): per-coordinate variance 1/dim,
    // so vectors have expected squared norm 1.
    let a = (3.0 / dim as f64).sqrt();
    (0..dim).map(|_| rng.gen_range(-a..=a)).collect()
}

impl EmbeddingTable {
    pub fn hash(dim: usize, seed: u64, vocab_buckets: u64) -> Self {
        EmbeddingTable {
            dim,
            source: Source::Hash { seed, vocab_buckets },
            frozen: true,
        }
    }

    /// Parse the text format: header `count dim`, then `key v1 .. vdim`.
    pub fn from_text_file(path: &Path, oov: OovPolicy) -> Result<Self> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(&display, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Embedding(format!("{display}: empty file")))?
            .map_err(|e| Error::io(&display, e))?;
        let mut parts = header.split_whitespace();
        let parse_dim = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Embedding(format!("{display}: malformed header `{header}`")))
        };
        let count = parse_dim(parts.next())?;
        let dim = parse_dim(parts.next())?;
        let mut map = HashMap::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(&display, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let key = fields
                .next()
                .ok_or_else(|| Error::Embedding(format!("{display}:{}: empty row", i + 2)))?;
            let vec: Vec<f64> = fields
                .map(|v| {
                    v.parse().map_err(|_| {
                        Error::Embedding(format!("{display}:{}: bad float `{v}`", i + 2))
                    })
                })
                .collect::<Result<_>>()?;
            if vec.len() != dim {
                return Err(Error::Embedding(format!(
                    "{display}:{}: expected {dim} values, got {}",
                    i + 2,
                    vec.len()
                )));
            }
            map.insert(key.to_string(), vec);
        }
        if map.len() != count {
            return Err(Error::Embedding(format!(
                "{display}: header claims {count} rows, found {}",
                map.len()
            )));
        }
        Ok(EmbeddingTable {
            dim,
            source: Source::Precomputed { map, oov },
            frozen: true,
        })
    }

    /// Parse the packed binary format: magic, LE u32 count and dim, then
    /// count*dim LE f32 values; keys come from a sidecar file, one per line.
    pub fn from_packed_file(path: &Path, keys_path: &Path, oov: OovPolicy) -> Result<Self> {
        let display = path.display().to_string();
        let mut file = File::open(path).map_err(|e| Error::io(&display, e))?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic).map_err(|e| Error::io(&display, e))?;
        if &magic != PACKED_MAGIC {
            return Err(Error::Embedding(format!("{display}: bad magic")));
        }
        let mut word = [0u8; 4];
        file.read_exact(&mut word).map_err(|e| Error::io(&display, e))?;
        let count = u32::from_le_bytes(word) as usize;
        file.read_exact(&mut word).map_err(|e| Error::io(&display, e))?;
        let dim = u32::from_le_bytes(word) as usize;
        let mut payload = Vec::new();
        file.read_to_end(&mut payload).map_err(|e| Error::io(&display, e))?;
        if payload.len() != count * dim * 4 {
            return Err(Error::Embedding(format!(
                "{display}: expected {} payload bytes, got {}",
                count * dim * 4,
                payload.len()
            )));
        }
        let keys_display = keys_path.display().to_string();
        let keys_file = File::open(keys_path).map_err(|e| Error::io(&keys_display, e))?;
        let keys: Vec<String> = BufReader::new(keys_file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(&keys_display, e))?;
        if keys.len() != count {
            return Err(Error::Embedding(format!(
                "{keys_display}: {} keys for {count} rows",
                keys.len()
            )));
        }
        let mut map = HashMap::with_capacity(count);
        for (row, key) in keys.into_iter().enumerate() {
            let base = row * dim * 4;
            let vec: Vec<f64> = (0..dim)
                .map(|j| {
                    let off = base + j * 4;
                    f32::from_le_bytes(payload[off..off + 4].try_into().unwrap()) as f64
                })
                .collect();
            map.insert(key, vec);
        }
        Ok(EmbeddingTable {
            dim,
            source: Source::Precomputed { map, oov },
            frozen: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Vector for one token. Padding embeds to zeros.
    pub fn token_vector(&self, token: &Token) -> Result<Vec<f64>> {
        let word = match token {
            Token::Pad => return Ok(vec![0.0; self.dim]),
            Token::Word(w) => w,
        };
        match &self.source {
            Source::Hash { seed, vocab_buckets } => {
                Ok(hash_vector(word, *seed, *vocab_buckets, self.dim))
            }
            Source::Precomputed { map, oov } => match map.get(word) {
                Some(v) => Ok(v.clone()),
                None => match oov {
                    OovPolicy::Reject => Err(Error::UnknownToken(word.clone())),
                    OovPolicy::HashFallback { seed } => {
                        Ok(hash_vector(word, *seed, u64::MAX, self.dim))
                    }
                },
            },
        }
    }
}

/// Write a table's rows in the packed binary format plus sidecar keys.
pub fn write_packed_file(
    rows: &[(String, Vec<f64>)],
    dim: usize,
    path: &Path,
    keys_path: &Path,
) -> Result<()> {
    let display = path.display().to_string();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(&display, e))?);
    w.write_all(PACKED_MAGIC).map_err(|e| Error::io(&display, e))?;
    w.write_all(&(rows.len() as u32).to_le_bytes())
        .map_err(|e| Error::io(&display, e))?;
    w.write_all(&(dim as u32).to_le_bytes())
        .map_err(|e| Error::io(&display, e))?;
    for (key, vec) in rows {
        if vec.len() != dim {
            return Err(Error::Embedding(format!(
                "row `{key}` has {} values, expected {dim}",
                vec.len()
            )));
        }
        for v in vec {
            w.write_all(&(*v as f32).to_le_bytes())
                .map_err(|e| Error::io(&display, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&display, e))?;
    let keys_display = keys_path.display().to_string();
    let mut kw = BufWriter::new(File::create(keys_path).map_err(|e| Error::io(&keys_display, e))?);
    for (key, _) in rows {
        writeln!(kw, "{key}").map_err(|e| Error::io(&keys_display, e))?;
    }
    kw.flush().map_err(|e| Error::io(&keys_display, e))
}

const PACKED_MAGIC: &[u8; 8] = b"TDEMBIN1";

/// One vector per slot of the sequence (padding slots are zero vectors).
pub fn embed_tokens(table: &EmbeddingTable, seq: &TokenSequence) -> Result<Vec<Vec<f64>>> {
    seq.tokens().iter().map(|t| table.token_vector(t)).collect()
}

/// Sequence embedded as a (len, dim) matrix.
pub fn embed_matrix(table: &EmbeddingTable, seq: &TokenSequence) -> Result<Array2<f64>> {
    let rows = embed_tokens(table, seq)?;
    let mut out = Array2::zeros((rows.len(), table.dim()));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[[i, j]] = *v;
        }
    }
    Ok(out)
}

/// Mean-pooled vector over all title+content tokens; zeros for empty text.
pub fn item_embedding(table: &EmbeddingTable, item: &NewsItem) -> Result<Vec<f64>> {
    let text = format!("{} {}", item.title, item.content);
    let seq = tokenize(&text, usize::MAX);
    let mut acc = vec![0.0; table.dim()];
    if seq.is_empty() {
        return Ok(acc);
    }
    for vec in embed_tokens(table, &seq)? {
        for (a, v) in acc.iter_mut().zip(&vec) {
            *a += v;
        }
    }
    let n = seq.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}

/// Cosine of two equal-dimension vectors; zero vectors compare as 0.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch(format!(
            "cosine of {}-dim and {}-dim vectors",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        eprintln!("warning: cosine of a zero vector, reporting 0");
        return Ok(0.0);
    }
    Ok(dot / (nu * nv))
}

/// Distribution summary of counterpart-pair similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub generator: String,
    pub mode: GenerationMode,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// One value per (L0, generated) linked pair, in index order.
    pub values: Vec<f64>,
}

impl SimilarityReport {
    pub fn summary_csv_header() -> &'static str {
        "generator,mode,count,mean,min,q1,median,q3,max"
    }

    pub fn summary_csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.generator,
            self.mode.label(),
            self.count,
            self.mean,
            self.min,
            self.q1,
            self.median,
            self.q3,
            self.max
        )
    }
}

pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    // Linear interpolation at rank p*(n-1).
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Cosine similarity between every linked (L0, generated) pair for one
/// (generator, mode), with summary statistics.
pub fn similarity_report(
    table: &EmbeddingTable,
    bundle: &CorpusBundle,
    generator: &str,
    mode: GenerationMode,
) -> Result<SimilarityReport> {
    let mut values = Vec::new();
    for ((l0, g, m), generated) in bundle.counterparts.iter() {
        if g != generator || *m != mode {
            continue;
        }
        let u = item_embedding(table, bundle.item(l0)?)?;
        let v = item_embedding(table, bundle.item(generated)?)?;
        values.push(cosine_similarity(&u, &v)?);
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("similarity report over zero pairs"));
    }
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let count = values.len();
    Ok(SimilarityReport {
        generator: generator.to_string(),
        mode,
        count,
        mean: values.iter().sum::<f64>() / count as f64,
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[count - 1],
        values,
    })
}
