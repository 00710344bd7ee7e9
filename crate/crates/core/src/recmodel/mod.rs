//! Content-based neural recommenders over frozen text features.
//!
//! Two variants: an attention model (learned input projection, multi-head
//! self-attention over tokens and over history, additive attention pooling)
//! and a recurrent model (1-D convolution news encoder, gated recurrent user
//! encoder whose hidden state is initialized from a hashed user-id embedding
//! row). Both score candidates by dot product with the user vector and train
//! with softmax cross-entropy over the candidate list.

mod checkpoint;
mod gradcheck;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, GradCheckConfig};
pub use train::{
    grid_search, train, EarlyStopMetric, EpochRow, GridSearchResult, TrainConfig, TrainLog,
    LR_GRID,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, RwLock};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusBundle, ImpressionInstance};
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, rng_for};
use crate::tape::{NodeId, Tape};
use crate::textrep::{embed_matrix, tokenize, EmbeddingTable};

/// Which encoder family the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    AttentionNet,
    RecurrentNet,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub cnn_filters: usize,
    pub cnn_window: usize,
    pub attention_query_dim: usize,
    pub dropout: f64,
    pub user_mask_prob: f64,
    pub max_history: usize,
    pub user_buckets: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::AttentionNet,
            input_dim: 768,
            heads: 8,
            head_dim: 8,
            cnn_filters: 400,
            cnn_window: 3,
            attention_query_dim: 200,
            dropout: 0.2,
            user_mask_prob: 0.5,
            max_history: 10,
            user_buckets: 1024,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("cnn_filters", self.cnn_filters),
            ("cnn_window", self.cnn_window),
            ("attention_query_dim", self.attention_query_dim),
            ("max_history", self.max_history),
            ("user_buckets", self.user_buckets),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(0.0..=1.0).contains(&self.user_mask_prob) {
            return Err(Error::Config(format!(
                "user_mask_prob {} outside [0, 1]",
                self.user_mask_prob
            )));
        }
        if self.cnn_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "cnn_window {} must be odd for same-padding",
                self.cnn_window
            )));
        }
        Ok(())
    }

    /// Width of a news/user vector.
    pub fn news_dim(&self) -> usize {
        match self.variant {
            Variant::AttentionNet => self.heads * self.head_dim,
            Variant::RecurrentNet => self.cnn_filters,
        }
    }
}

/// Named trainable matrices with a stable (sorted) iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    fn insert_uniform(&mut self, name: &str, rows: usize, cols: usize, seed: u64) {
        // Symmetric uniform scaled by fan-in (the row count of x·W).
        let a = 1.0 / (rows as f64).sqrt();
        let mut rng = rng_for(seed, &["init", name]);
        let value = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..=a));
        self.entries.insert(name.to_string(), value);
    }

    fn insert_zero(&mut self, name: &str, rows: usize, cols: usize) {
        self.entries
            .insert(name.to_string(), Array2::zeros((rows, cols)));
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn set(&mut self, name: &str, value: Array2<f64>) {
        assert_eq!(
            self.get(name).dim(),
            value.dim(),
            "parameter `{name}` shape change"
        );
        self.entries.insert(name.to_string(), value);
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .values()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Parameter nodes bound onto one tape.
pub struct Bound {
    nodes: HashMap<String, NodeId>,
}

impl Bound {
    fn node(&self, name: &str) -> NodeId {
        *self
            .nodes
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }
}

/// Text source for news features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMode {
    TitleOnly,
    TitleContent,
}

/// Resolves news ids to frozen token-feature matrices, with a cache.
pub struct FeatureSource {
    bundle: Arc<CorpusBundle>,
    table: EmbeddingTable,
    mode: TextMode,
    max_tokens: usize,
    cache: RwLock<HashMap<String, Arc<Array2<f64>>>>,
}

impl FeatureSource {
    pub fn new(
        bundle: Arc<CorpusBundle>,
        table: EmbeddingTable,
        mode: TextMode,
        max_tokens: usize,
    ) -> Self {
        FeatureSource {
            bundle,
            table,
            mode,
            max_tokens,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn bundle(&self) -> &CorpusBundle {
        &self.bundle
    }

    /// (tokens, dim) feature matrix; empty text yields one padding row.
    pub fn features(&self, id: &str) -> Result<Arc<Array2<f64>>> {
        if let Some(hit) = self.cache.read().unwrap().get(id) {
            return Ok(hit.clone());
        }
        let item = self.bundle.item(id)?;
        let text = match self.mode {
            TextMode::TitleOnly => item.title.clone(),
            TextMode::TitleContent => format!("{} {}", item.title, item.content),
        };
        let mut seq = tokenize(&text, self.max_tokens);
        if seq.is_empty() {
            seq.pad_to(1);
        }
        let m = Arc::new(embed_matrix(&self.table, &seq)?);
        self.cache
            .write()
            .unwrap()
            .insert(id.to_string(), m.clone());
        Ok(m)
    }
}

/// One ranked candidate list for one impression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEvaluation {
    pub user_id: String,
    pub target_id: String,
    /// Candidate ids in descending score order, ties broken by id.
    pub ranked_ids: Vec<String>,
    /// Scores aligned with `ranked_ids`.
    pub scores: Vec<f64>,
}

impl RankedEvaluation {
    /// 1-based rank of the target id, if present.
    pub fn target_rank(&self) -> Option<usize> {
        self.ranked_ids
            .iter()
            .position(|id| *id == self.target_id)
            .map(|p| p + 1)
    }
}

/// A recommender: configuration plus named parameters.
#[derive(Debug, Clone)]
pub struct RecommenderModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen::<f64>() < p {
            0.0
        } else {
            keep
        }
    })
}

/// Unfold a (t, d) matrix into (t, window*d) rows of window-neighborhoods
/// with zero padding at the edges. Inputs are frozen, so this runs off-tape.
fn im2col(feats: &Array2<f64>, window: usize) -> Array2<f64> {
    let (t, d) = feats.dim();
    let half = window / 2;
    let mut out = Array2::zeros((t, window * d));
    for row in 0..t {
        for k in 0..window {
            let src = row as isize + k as isize - half as isize;
            if src < 0 || src >= t as isize {
                continue;
            }
            out.slice_mut(ndarray::s![row, k * d..(k + 1) * d])
                .assign(&feats.row(src as usize));
        }
    }
    out
}

impl RecommenderModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let seed = config.seed;
        let q = config.attention_query_dim;
        match config.variant {
            Variant::AttentionNet => {
                let d = config.heads * config.head_dim;
                params.insert_uniform("proj_w", config.input_dim, d, seed);
                params.insert_zero("proj_b", 1, d);
                for name in ["news_wq", "news_wk", "news_wv", "user_wq", "user_wk", "user_wv"] {
                    params.insert_uniform(name, d, d, seed);
                }
                for scope in ["news", "user"] {
                    params.insert_uniform(&format!("{scope}_att_w"), d, q, seed);
                    params.insert_zero(&format!("{scope}_att_b"), 1, q);
                    params.insert_uniform(&format!("{scope}_att_v"), q, 1, seed);
                }
            }
            Variant::RecurrentNet => {
                let d = config.cnn_filters;
                params.insert_uniform("cnn_w", config.cnn_window * config.input_dim, d, seed);
                params.insert_zero("cnn_b", 1, d);
                params.insert_uniform("news_att_w", d, q, seed);
                params.insert_zero("news_att_b", 1, q);
                params.insert_uniform("news_att_v", q, 1, seed);
                for name in ["gru_wz", "gru_wr", "gru_wh", "gru_uz", "gru_ur", "gru_uh"] {
                    params.insert_uniform(name, d, d, seed);
                }
                for name in ["gru_bz", "gru_br", "gru_bh"] {
                    params.insert_zero(name, 1, d);
                }
                // Zero rows so an untrained (cold-start) user reads a zero
                // long-term state.
                params.insert_zero("user_emb", config.user_buckets, d);
            }
        }
        Ok(RecommenderModel { config, params })
    }

    /// Register every parameter on a tape (trainable or frozen).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let mut nodes = HashMap::new();
        for (name, value) in self.params.iter() {
            let id = if trainable {
                tape.param(value.clone())
            } else {
                tape.constant(value.clone())
            };
            nodes.insert(name.to_string(), id);
        }
        Bound { nodes }
    }

    fn user_bucket(&self, user_id: &str) -> usize {
        (fnv1a64(user_id.as_bytes()) % self.config.user_buckets as u64) as usize
    }

    fn mhsa(&self, tape: &mut Tape, b: &Bound, x: NodeId, prefix: &str) -> NodeId {
        let q = tape.matmul(x, b.node(&format!("{prefix}_wq")));
        let k = tape.matmul(x, b.node(&format!("{prefix}_wk")));
        let v = tape.matmul(x, b.node(&format!("{prefix}_wv")));
        let hd = self.config.head_dim;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = tape.slice_cols(q, h * hd, hd);
            let kh = tape.slice_cols(k, h * hd, hd);
            let vh = tape.slice_cols(v, h * hd, hd);
            let kt = tape.transpose(kh);
            let logits = tape.matmul(qh, kt);
            let logits = tape.scale(logits, scale);
            let attn = tape.softmax_rows(logits);
            heads.push(tape.matmul(attn, vh));
        }
        tape.concat_cols(&heads)
    }

    fn additive_pool(&self, tape: &mut Tape, b: &Bound, x: NodeId, prefix: &str) -> NodeId {
        let h = tape.matmul(x, b.node(&format!("{prefix}_att_w")));
        let h = tape.add_row_broadcast(h, b.node(&format!("{prefix}_att_b")));
        let h = tape.tanh(h);
        let s = tape.matmul(h, b.node(&format!("{prefix}_att_v")));
        let st = tape.transpose(s);
        let w = tape.softmax_rows(st);
        tape.matmul(w, x)
    }

    /// News-encoding subgraph: (tokens, input_dim) features to a (1, d) node.
    pub fn news_node(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        feats: &Array2<f64>,
        mut drop_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        if feats.nrows() == 0 {
            return Err(Error::EmptyInput("news token list"));
        }
        if feats.ncols() != self.config.input_dim {
            return Err(Error::DimMismatch(format!(
                "news features are {}-dim, model expects {}",
                feats.ncols(),
                self.config.input_dim
            )));
        }
        let p = self.config.dropout;
        let mut input = feats.clone();
        if let Some(rng) = drop_rng.as_deref_mut() {
            if p > 0.0 {
                let mask = dropout_mask(input.nrows(), input.ncols(), p, rng);
                input = input * mask;
            }
        }
        match self.config.variant {
            Variant::AttentionNet => {
                let x = tape.constant(input);
                let proj = tape.matmul(x, bound.node("proj_w"));
                let proj = tape.add_row_broadcast(proj, bound.node("proj_b"));
                let mut enc = self.mhsa(tape, bound, proj, "news");
                if let Some(rng) = drop_rng {
                    if p > 0.0 {
                        let (r, c) = tape.value(enc).dim();
                        let mask = tape.constant(dropout_mask(r, c, p, rng));
                        enc = tape.mul_elem(enc, mask);
                    }
                }
                Ok(self.additive_pool(tape, bound, enc, "news"))
            }
            Variant::RecurrentNet => {
                let unfolded = tape.constant(im2col(&input, self.config.cnn_window));
                let conv = tape.matmul(unfolded, bound.node("cnn_w"));
                let conv = tape.add_row_broadcast(conv, bound.node("cnn_b"));
                let mut enc = tape.relu(conv);
                if let Some(rng) = drop_rng {
                    if p > 0.0 {
                        let (r, c) = tape.value(enc).dim();
                        let mask = tape.constant(dropout_mask(r, c, p, rng));
                        enc = tape.mul_elem(enc, mask);
                    }
                }
                Ok(self.additive_pool(tape, bound, enc, "news"))
            }
        }
    }

    /// User-encoding subgraph over already-encoded history news nodes.
    ///
    /// `mask_rng` enables training behavior: with probability
    /// `user_mask_prob` the recurrent long-term state starts at zero instead
    /// of the user-id embedding row.
    pub fn user_node(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        history: &[NodeId],
        user_id: &str,
        mask_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        if history.is_empty() {
            return Err(Error::EmptyInput("user history"));
        }
        let start = history.len().saturating_sub(self.config.max_history);
        let history = &history[start..];
        match self.config.variant {
            Variant::AttentionNet => {
                let stack = tape.concat_rows(history);
                let enc = self.mhsa(tape, bound, stack, "user");
                Ok(self.additive_pool(tape, bound, enc, "user"))
            }
            Variant::RecurrentNet => {
                let d = self.config.cnn_filters;
                let masked = match mask_rng {
                    Some(rng) => rng.gen::<f64>() < self.config.user_mask_prob,
                    None => false,
                };
                let mut h = if masked {
                    tape.constant(Array2::zeros((1, d)))
                } else {
                    let emb = bound.node("user_emb");
                    tape.row_slice(emb, self.user_bucket(user_id))
                };
                for x in history {
                    h = self.gru_step(tape, bound, *x, h);
                }
                Ok(h)
            }
        }
    }

    fn gru_step(&self, tape: &mut Tape, b: &Bound, x: NodeId, h: NodeId) -> NodeId {
        let gate = |tape: &mut Tape, w: &str, u: &str, bias: &str, hin: NodeId| {
            let xa = tape.matmul(x, b.node(w));
            let ha = tape.matmul(hin, b.node(u));
            let sum = tape.add(xa, ha);
            tape.add(sum, b.node(bias))
        };
        let z_pre = gate(tape, "gru_wz", "gru_uz", "gru_bz", h);
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, "gru_wr", "gru_ur", "gru_br", h);
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul_elem(r, h);
        let c_pre = gate(tape, "gru_wh", "gru_uh", "gru_bh", rh);
        let c = tape.tanh(c_pre);
        let neg_z = tape.scale(z, -1.0);
        let one_minus_z = tape.add_scalar(neg_z, 1.0);
        let keep = tape.mul_elem(one_minus_z, h);
        let update = tape.mul_elem(z, c);
        tape.add(keep, update)
    }

    /// Scores node: (1, k) dot products of the user against each candidate.
    pub fn score_node(&self, tape: &mut Tape, user: NodeId, candidates: &[NodeId]) -> NodeId {
        let stack = tape.concat_rows(candidates);
        let st = tape.transpose(stack);
        tape.matmul(user, st)
    }

    /// Encode the given news ids once each, in sorted order.
    pub fn batch_news_nodes(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        source: &FeatureSource,
        ids: &BTreeSet<String>,
        mut drop_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<HashMap<String, NodeId>> {
        let mut map = HashMap::with_capacity(ids.len());
        for id in ids {
            let feats = source.features(id)?;
            let node = self.news_node(tape, bound, &feats, drop_rng.as_deref_mut())?;
            map.insert(id.clone(), node);
        }
        Ok(map)
    }

    /// Cross-entropy loss node for one impression given encoded news nodes.
    pub fn instance_loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        news: &HashMap<String, NodeId>,
        inst: &ImpressionInstance,
        mask_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        let history: Vec<NodeId> = inst.history.iter().map(|id| news[id]).collect();
        let user = self.user_node(tape, bound, &history, &inst.user_id, mask_rng)?;
        let cands: Vec<NodeId> = inst.candidates.iter().map(|id| news[id]).collect();
        let scores = self.score_node(tape, user, &cands);
        let target = inst
            .candidates
            .iter()
            .position(|id| *id == inst.target_id)
            .ok_or_else(|| Error::TargetNotInCandidates(inst.target_id.clone()))?;
        Ok(tape.cross_entropy_logits(scores, target))
    }

    /// Inference-mode news vector for raw token features.
    pub fn encode_news(&self, feats: &Array2<f64>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let node = self.news_node(&mut tape, &bound, feats, None)?;
        Ok(tape.value(node).iter().copied().collect())
    }

    /// Inference-mode user vector from history news vectors.
    pub fn encode_user(&self, history: &[Vec<f64>], user_id: &str) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let nodes: Vec<NodeId> = history
            .iter()
            .map(|v| {
                let row = Array2::from_shape_vec((1, v.len()), v.clone())
                    .map_err(|e| Error::DimMismatch(e.to_string()))?;
                Ok(tape.constant(row))
            })
            .collect::<Result<_>>()?;
        let node = self.user_node(&mut tape, &bound, &nodes, user_id, None)?;
        Ok(tape.value(node).iter().copied().collect())
    }
}

/// Dot-product scores of a user vector against candidate vectors.
pub fn score(user: &[f64], candidates: &[Vec<f64>]) -> Result<Vec<f64>> {
    candidates
        .iter()
        .map(|c| {
            if c.len() != user.len() {
                return Err(Error::DimMismatch(format!(
                    "candidate is {}-dim, user vector {}-dim",
                    c.len(),
                    user.len()
                )));
            }
            Ok(user.iter().zip(c).map(|(a, b)| a * b).sum())
        })
        .collect()
}

/// Softmax cross-entropy with a single positive at `target`.
pub fn loss(scores: &[f64], target: usize) -> Result<f64> {
    if target >= scores.len() {
        return Err(Error::Config(format!(
            "loss target index {target} out of range for {} scores",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Diverged {
            batch: 0,
            msg: "non-finite score passed to loss".to_string(),
        });
    }
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(lse - scores[target])
}

/// Per-id news vectors precomputed for evaluation.
pub struct NewsVectors {
    map: HashMap<String, Vec<f64>>,
}

impl NewsVectors {
    pub fn get(&self, id: &str) -> Result<&Vec<f64>> {
        self.map
            .get(id)
            .ok_or_else(|| Error::UnknownNewsId(id.to_string()))
    }
}

/// Encode every distinct news id referenced by the instances (parallel over
/// ids, deterministic because ids are processed in sorted order).
pub fn precompute_news_vectors(
    model: &RecommenderModel,
    source: &FeatureSource,
    instances: &[ImpressionInstance],
) -> Result<NewsVectors> {
    let mut ids: BTreeSet<&str> = BTreeSet::new();
    for inst in instances {
        ids.extend(inst.history.iter().map(|s| s.as_str()));
        ids.extend(inst.candidates.iter().map(|s| s.as_str()));
    }
    let ordered: Vec<&str> = ids.into_iter().collect();
    let encoded: Vec<Vec<f64>> = ordered
        .par_iter()
        .map(|id| {
            let feats = source.features(id)?;
            model.encode_news(&feats)
        })
        .collect::<Result<_>>()?;
    let map = ordered
        .into_iter()
        .map(String::from)
        .zip(encoded)
        .collect();
    Ok(NewsVectors { map })
}

fn rank_with_vectors(
    model: &RecommenderModel,
    vectors: &NewsVectors,
    inst: &ImpressionInstance,
) -> Result<RankedEvaluation> {
    let history: Vec<Vec<f64>> = inst
        .history
        .iter()
        .map(|id| vectors.get(id).cloned())
        .collect::<Result<_>>()?;
    let user = model.encode_user(&history, &inst.user_id)?;
    let cand_vecs: Vec<Vec<f64>> = inst
        .candidates
        .iter()
        .map(|id| vectors.get(id).cloned())
        .collect::<Result<_>>()?;
    let scores = score(&user, &cand_vecs)?;
    let mut order: Vec<usize> = (0..inst.candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| inst.candidates[a].cmp(&inst.candidates[b]))
    });
    Ok(RankedEvaluation {
        user_id: inst.user_id.clone(),
        target_id: inst.target_id.clone(),
        ranked_ids: order.iter().map(|&i| inst.candidates[i].clone()).collect(),
        scores: order.iter().map(|&i| scores[i]).collect(),
    })
}

/// Rank one impression's candidates by descending score (ties by id).
pub fn rank_candidates(
    model: &RecommenderModel,
    source: &FeatureSource,
    inst: &ImpressionInstance,
) -> Result<RankedEvaluation> {
    let single = std::slice::from_ref(inst);
    let vectors = precompute_news_vectors(model, source, single)?;
    rank_with_vectors(model, &vectors, inst)
}

/// Rank every impression, parallel over impressions with deterministic
/// (input-ordered) output.
pub fn evaluate_impressions(
    model: &RecommenderModel,
    source: &FeatureSource,
    instances: &[ImpressionInstance],
) -> Result<Vec<RankedEvaluation>> {
    let vectors = precompute_news_vectors(model, source, instances)?;
    instances
        .par_iter()
        .map(|inst| rank_with_vectors(model, &vectors, inst))
        .collect()
}

/// Mean reciprocal rank of the target item (single-positive validation
/// metric, distinct from the type-level MRR used in reports).
pub fn target_mrr(evals: &[RankedEvaluation]) -> Result<f64> {
    if evals.is_empty() {
        return Err(Error::EmptyInput("target_mrr over no evaluations"));
    }
    let mut sum = 0.0;
    for e in evals {
        let rank = e
            .target_rank()
            .ok_or_else(|| Error::TargetNotInCandidates(e.target_id.clone()))?;
        sum += 1.0 / rank as f64;
    }
    Ok(sum / evals.len() as f64)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::corpus::{GenerationMode, NewsItem, Veracity};

    /// Bundle of `n` single-population items with distinct token vocabularies
    /// per item plus shared filler, and one impression over them.
    pub fn tiny_source(dim: usize, n: usize) -> (FeatureSource, Vec<String>) {
        let mut bundle = CorpusBundle::default();
        let mut ids = Vec::new();
        for i in 0..n {
            let id = format!("n{i}");
            bundle.items.insert(
                id.clone(),
                NewsItem {
                    id: id.clone(),
                    title: format!("story w{i} alpha beta t{i}"),
                    content: String::new(),
                    veracity: if i % 2 == 0 {
                        Veracity::Real
                    } else {
                        Veracity::Fake
                    },
                    mode: GenerationMode::L0,
                    generator: None,
                    counterpart_of: None,
                },
            );
            ids.push(id);
        }
        let table = EmbeddingTable::hash(dim, 7, 1 << 20);
        let source = FeatureSource::new(Arc::new(bundle), table, TextMode::TitleOnly, 30);
        (source, ids)
    }

    pub fn impression(ids: &[String], target: usize, hist: usize) -> ImpressionInstance {
        ImpressionInstance {
            user_id: "u0".to_string(),
            history: ids[..hist].to_vec(),
            target_id: ids[target].clone(),
            candidates: ids[hist..].to_vec(),
            split_timestamp: 0,
        }
    }

    pub fn small_config(variant: Variant, dim: usize) -> ModelConfig {
        ModelConfig {
            variant,
            input_dim: dim,
            heads: 2,
            head_dim: 4,
            cnn_filters: 12,
            cnn_window: 3,
            attention_query_dim: 6,
            dropout: 0.0,
            user_mask_prob: 0.0,
            max_history: 10,
            user_buckets: 16,
            seed: 11,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.news_dim(), 64);
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        cfg.dropout = 0.2;
        cfg.cnn_window = 4;
        assert!(cfg.validate().is_err());
        cfg.cnn_window = 3;
        cfg.heads = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn attention_news_vector_has_configured_width() {
        let model = RecommenderModel::new(ModelConfig::default()).unwrap();
        let feats = Array2::from_elem((5, 768), 0.01);
        let v = model.encode_news(&feats).unwrap();
        assert_eq!(v.len(), 64);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn encode_news_is_deterministic_and_checks_dims() {
        for variant in [Variant::AttentionNet, Variant::RecurrentNet] {
            let model = RecommenderModel::new(small_config(variant, 16)).unwrap();
            let feats = Array2::zeros((4, 16));
            let a = model.encode_news(&feats).unwrap();
            let b = model.encode_news(&feats).unwrap();
            assert_eq!(a, b);
            let bad = Array2::zeros((4, 8));
            assert!(matches!(
                model.encode_news(&bad),
                Err(Error::DimMismatch(_))
            ));
            let empty = Array2::zeros((0, 16));
            assert!(model.encode_news(&empty).is_err());
        }
    }

    #[test]
    fn single_history_attention_user_equals_value_transform() {
        // One history item: softmax over one row is 1, so per head the
        // attended output is V_h alone and pooling weights are 1; the user
        // vector must equal v · user_wv.
        let cfg = small_config(Variant::AttentionNet, 16);
        let model = RecommenderModel::new(cfg).unwrap();
        let v: Vec<f64> = (0..8).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        let user = model.encode_user(std::slice::from_ref(&v), "u").unwrap();
        let row = Array2::from_shape_vec((1, 8), v).unwrap();
        let expect = row.dot(model.params.get("user_wv"));
        for (a, b) in user.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_user_is_history_order_invariant() {
        let cfg = small_config(Variant::AttentionNet, 16);
        let model = RecommenderModel::new(cfg).unwrap();
        let mut rng = rng_for(3, &["order-test"]);
        let hist: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let base = model.encode_user(&hist, "u").unwrap();
        let permuted: Vec<Vec<f64>> = vec![
            hist[2].clone(),
            hist[0].clone(),
            hist[3].clone(),
            hist[1].clone(),
        ];
        let shuffled = model.encode_user(&permuted, "u").unwrap();
        for (a, b) in base.iter().zip(&shuffled) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn recurrent_user_cold_start_is_finite_and_zero_init() {
        let cfg = small_config(Variant::RecurrentNet, 16);
        let model = RecommenderModel::new(cfg).unwrap();
        // user_emb rows start at zero, so an unseen user reads a zero state
        assert!(model
            .params
            .get("user_emb")
            .iter()
            .all(|v| *v == 0.0));
        let hist = vec![vec![0.2; 12]];
        let out = model.encode_user(&hist, "never-seen-user").unwrap();
        assert_eq!(out.len(), 12);
        assert!(out.iter().all(|v| v.is_finite()));
        assert!(model.encode_user(&[], "u").is_err());
    }

    #[test]
    fn score_hand_values() {
        assert_eq!(
            score(&[1.0, 2.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![1.0, 2.0]
        );
        let unit = vec![0.6, 0.8];
        assert_abs_diff_eq!(score(&unit, std::slice::from_ref(&unit)).unwrap()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            score(&[1.0, 0.0], &[vec![0.0, 1.0]]).unwrap()[0],
            0.0,
            epsilon = 1e-12
        );
        assert!(score(&[1.0], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn loss_hand_values() {
        assert_abs_diff_eq!(loss(&[0.5, 0.5], 0).unwrap(), 2f64.ln(), epsilon = 1e-12);
        let expect = ((1f64.exp() + 2.0) / 1f64.exp()).ln();
        assert_abs_diff_eq!(loss(&[1.0, 0.0, 0.0], 0).unwrap(), expect, epsilon = 1e-12);
        assert!(loss(&[100.0, 0.0], 0).unwrap() < 1e-12);
        assert!(loss(&[f64::NAN, 0.0], 0).is_err());
        assert!(loss(&[1.0], 1).is_err());
    }

    #[test]
    fn ranking_sorts_and_breaks_ties_by_id() {
        let (source, ids) = tiny_source(16, 8);
        let model = RecommenderModel::new(small_config(Variant::AttentionNet, 16)).unwrap();
        let inst = impression(&ids, 5, 3);
        let eval = rank_candidates(&model, &source, &inst).unwrap();
        assert_eq!(eval.ranked_ids.len(), inst.candidates.len());
        for w in eval.scores.windows(2) {
            assert!(w[0] >= w[1]);
        }
        // repeated call identical (pure inference)
        let again = rank_candidates(&model, &source, &inst).unwrap();
        assert_eq!(eval, again);

        // tie rule via duplicate-content candidates: n-dup0/n-dup1 same text
        let (source2, _) = tiny_source(16, 2);
        let mut bundle = source2.bundle().clone();
        for id in ["b-dup", "a-dup"] {
            bundle.items.insert(
                id.to_string(),
                crate::corpus::NewsItem {
                    id: id.to_string(),
                    title: "same exact words".into(),
                    content: String::new(),
                    veracity: crate::corpus::Veracity::Real,
                    mode: crate::corpus::GenerationMode::L0,
                    generator: None,
                    counterpart_of: None,
                },
            );
        }
        let table = EmbeddingTable::hash(16, 7, 1 << 20);
        let source2 = FeatureSource::new(Arc::new(bundle), table, TextMode::TitleOnly, 30);
        let inst = ImpressionInstance {
            user_id: "u".into(),
            history: vec!["n0".into()],
            target_id: "a-dup".into(),
            candidates: vec!["b-dup".into(), "a-dup".into()],
            split_timestamp: 0,
        };
        let eval = rank_candidates(&model, &source2, &inst).unwrap();
        assert_abs_diff_eq!(eval.scores[0], eval.scores[1], epsilon = 1e-12);
        assert_eq!(eval.ranked_ids, vec!["a-dup", "b-dup"]);
    }

    #[test]
    fn single_candidate_rank_list() {
        let (source, ids) = tiny_source(16, 4);
        let model = RecommenderModel::new(small_config(Variant::RecurrentNet, 16)).unwrap();
        let inst = ImpressionInstance {
            user_id: "u".into(),
            history: ids[..3].to_vec(),
            target_id: ids[3].clone(),
            candidates: vec![ids[3].clone()],
            split_timestamp: 0,
        };
        let eval = rank_candidates(&model, &source, &inst).unwrap();
        assert_eq!(eval.ranked_ids.len(), 1);
        assert_eq!(eval.target_rank(), Some(1));
    }

    #[test]
    fn sorting_oracle_for_known_scores() {
        // scores [0.2, 0.9, 0.5] must order as [2nd, 3rd, 1st]
        let scores: [f64; 3] = [0.2, 0.9, 0.5];
        let ids = ["a", "b", "c"];
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then_with(|| ids[x].cmp(ids[y])));
        let ranked: Vec<&str> = order.iter().map(|&i| ids[i]).collect();
        assert_eq!(ranked, vec!["b", "c", "a"]);
    }

    #[test]
    fn shift_by_constant_preserves_argsort_for_equal_sum_candidates() {
        // Candidates with equal coordinate sums: adding a constant to every
        // user coordinate shifts all dot products equally.
        let cands = vec![
            vec![1.0, 0.0, 2.0], // sum 3
            vec![0.0, 3.0, 0.0], // sum 3
            vec![2.0, 1.0, 0.0], // sum 3
        ];
        let user = vec![0.5, -0.2, 0.9];
        let base = score(&user, &cands).unwrap();
        let shifted_user: Vec<f64> = user.iter().map(|v| v + 10.0).collect();
        let shifted = score(&shifted_user, &cands).unwrap();
        let argsort = |s: &[f64]| {
            let mut o: Vec<usize> = (0..s.len()).collect();
            o.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
            o
        };
        assert_eq!(argsort(&base), argsort(&shifted));
        for (a, b) in base.iter().zip(&shifted) {
            assert_abs_diff_eq!(b - a, 30.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn target_mrr_hand_value() {
        let evals = vec![
            RankedEvaluation {
                user_id: "u".into(),
                target_id: "a".into(),
                ranked_ids: vec!["a".into(), "b".into()],
                scores: vec![2.0, 1.0],
            },
            RankedEvaluation {
                user_id: "u".into(),
                target_id: "b".into(),
                ranked_ids: vec!["a".into(), "b".into()],
                scores: vec![2.0, 1.0],
            },
        ];
        assert_abs_diff_eq!(target_mrr(&evals).unwrap(), 0.75, epsilon = 1e-12);
        assert!(target_mrr(&[]).is_err());
    }
}
