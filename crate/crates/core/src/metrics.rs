//! Type-projected ranking metrics and the relative real advantage indicator.
//!
//! A ranked candidate list is projected onto a binary label sequence by a
//! [`TypeSelector`] (label 1 when the candidate belongs to the selected type),
//! then MRR / nDCG@k / Ratio@k are computed on the labels. MRR here averages
//! the reciprocal ranks of *all* type members, not just the first hit: the
//! metrics measure where a whole news type sits in the ranking, not whether
//! any one member was retrieved.

use serde::{Deserialize, Serialize};

use crate::corpus::{GenerationMode, NewsItem, Veracity};
use crate::error::{Error, Result};

/// Joint origin/veracity type of a single candidate.
///
/// `H*` items are human-written (L0), `G*` items are generated counterparts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JointType {
    /// Human-written fake.
    HF,
    /// Human-written real.
    HR,
    /// Generated fake.
    GF,
    /// Generated real.
    GR,
}

impl JointType {
    pub fn of(veracity: Veracity, generated: bool) -> Self {
        match (veracity, generated) {
            (Veracity::Fake, false) => JointType::HF,
            (Veracity::Real, false) => JointType::HR,
            (Veracity::Fake, true) => JointType::GF,
            (Veracity::Real, true) => JointType::GR,
        }
    }

    pub fn from_item(item: &NewsItem) -> Self {
        Self::of(item.veracity, item.mode != GenerationMode::L0)
    }

    pub fn label(self) -> &'static str {
        match self {
            JointType::HF => "HF",
            JointType::HR => "HR",
            JointType::GF => "GF",
            JointType::GR => "GR",
        }
    }
}

/// Candidate type filter: the four joint types plus their single-view unions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TypeSelector {
    HF,
    HR,
    GF,
    GR,
    Fake,
    Real,
    Human,
    Generated,
}

/// The four joint types partition every mixed candidate list.
pub const JOINT_VIEW: [TypeSelector; 4] = [
    TypeSelector::HF,
    TypeSelector::HR,
    TypeSelector::GF,
    TypeSelector::GR,
];

/// Single-view unions of the joint types.
pub const SINGLE_VIEW: [TypeSelector; 4] = [
    TypeSelector::Fake,
    TypeSelector::Real,
    TypeSelector::Human,
    TypeSelector::Generated,
];

pub const ALL_SELECTORS: [TypeSelector; 8] = [
    TypeSelector::HF,
    TypeSelector::HR,
    TypeSelector::GF,
    TypeSelector::GR,
    TypeSelector::Fake,
    TypeSelector::Real,
    TypeSelector::Human,
    TypeSelector::Generated,
];

impl TypeSelector {
    pub fn matches(self, t: JointType) -> bool {
        use JointType::*;
        match self {
            TypeSelector::HF => t == HF,
            TypeSelector::HR => t == HR,
            TypeSelector::GF => t == GF,
            TypeSelector::GR => t == GR,
            TypeSelector::Fake => t == HF || t == GF,
            TypeSelector::Real => t == HR || t == GR,
            TypeSelector::Human => t == HF || t == HR,
            TypeSelector::Generated => t == GF || t == GR,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TypeSelector::HF => "HF",
            TypeSelector::HR => "HR",
            TypeSelector::GF => "GF",
            TypeSelector::GR => "GR",
            TypeSelector::Fake => "Fake",
            TypeSelector::Real => "Real",
            TypeSelector::Human => "Human",
            TypeSelector::Generated => "Generated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ALL_SELECTORS.iter().copied().find(|t| t.label() == s)
    }
}

/// Metric family, with the cutoff baked in where one applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    Mrr,
    Ndcg(usize),
    Ratio(usize),
}

impl MetricKind {
    pub fn name(self) -> String {
        match self {
            MetricKind::Mrr => "MRR".to_string(),
            MetricKind::Ndcg(k) => format!("nDCG@{k}"),
            MetricKind::Ratio(k) => format!("Ratio@{k}"),
        }
    }

    pub fn k(self) -> Option<usize> {
        match self {
            MetricKind::Mrr => None,
            MetricKind::Ndcg(k) | MetricKind::Ratio(k) => Some(k),
        }
    }

    /// MRR and nDCG live in [0,1] and are conventionally displayed x100.
    pub fn display_scale(self) -> f64 {
        match self {
            MetricKind::Mrr | MetricKind::Ndcg(_) => 100.0,
            MetricKind::Ratio(_) => 1.0,
        }
    }

    /// The standard metric set for cutoff list `ks`.
    pub fn standard(ks: &[usize]) -> Vec<MetricKind> {
        let mut kinds = vec![MetricKind::Mrr];
        kinds.extend(ks.iter().map(|&k| MetricKind::Ndcg(k)));
        kinds.extend(ks.iter().map(|&k| MetricKind::Ratio(k)));
        kinds
    }
}

/// Project a ranked type sequence onto binary labels for one selector.
pub fn type_labels(ranked: &[JointType], selector: TypeSelector) -> Vec<bool> {
    ranked.iter().map(|&t| selector.matches(t)).collect()
}

/// Mean reciprocal rank over all positive-labeled items (1-based ranks).
pub fn mrr_type(labels: &[bool]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        if l {
            sum += 1.0 / (i + 1) as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoPositives);
    }
    Ok(sum / count as f64)
}

/// Binary-gain nDCG with 1/log2(rank+1) discount, ideal list truncated at k.
pub fn ndcg_at_k(labels: &[bool], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::CutoffTooLarge { k, len: labels.len() });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = labels
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &l)| l)
        .map(|(i, _)| discount(i + 1))
        .sum();
    let idcg: f64 = (1..=positives.min(k)).map(discount).sum();
    Ok(dcg / idcg)
}

/// Percentage of top-k items carrying the positive label.
pub fn ratio_at_k(labels: &[bool], k: usize) -> Result<f64> {
    if k == 0 || k > labels.len() {
        return Err(Error::CutoffTooLarge { k, len: labels.len() });
    }
    let hits = labels.iter().take(k).filter(|&&l| l).count();
    Ok(100.0 * hits as f64 / k as f64)
}

/// Relative real advantage: (real - fake) / fake x 100.
pub fn rra(metric_real: f64, metric_fake: f64) -> Result<f64> {
    if metric_fake == 0.0 {
        return Err(Error::RraUndefined);
    }
    Ok((metric_real - metric_fake) / metric_fake * 100.0)
}

/// Difference between a current RRA and a baseline RRA, in percentage points.
pub fn rra_delta(current_rra: f64, baseline_rra: f64) -> f64 {
    current_rra - baseline_rra
}

/// One aggregated cell: mean of a metric for a selector over impressions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub selector: TypeSelector,
    pub kind: MetricKind,
    /// Mean over contributing impressions. MRR/nDCG in [0,1], Ratio in [0,100].
    pub value: f64,
    /// Impressions that contributed to the mean.
    pub n_impressions: usize,
}

/// Per-(selector, metric) means over an evaluation set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn value(&self, selector: TypeSelector, kind: MetricKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.selector == selector && r.kind == kind)
            .map(|r| r.value)
    }

    /// RRA of the single-view Real/Fake pair for one metric.
    pub fn rra_for(&self, kind: MetricKind) -> Result<f64> {
        let real = self
            .value(TypeSelector::Real, kind)
            .ok_or(Error::MissingBaseline)?;
        let fake = self
            .value(TypeSelector::Fake, kind)
            .ok_or(Error::MissingBaseline)?;
        rra(real, fake)
    }

    /// `selector,metric,k,value,n_impressions` rows (header included).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("selector,metric,k,value,n_impressions\n");
        for row in &self.rows {
            let k = row.kind.k().map_or(String::new(), |k| k.to_string());
            out.push_str(&format!(
                "{},{},{},{:.6},{}\n",
                row.selector.label(),
                row.kind.name(),
                k,
                row.value * row.kind.display_scale(),
                row.n_impressions
            ));
        }
        out
    }
}

/// Mean metrics per selector over a set of ranked impressions.
///
/// Impressions without a single positive for a selector are skipped for
/// MRR/nDCG (the metrics are undefined there) but count as 0 toward Ratio.
/// Sums run in impression order so means are bitwise reproducible.
pub fn aggregate(
    evals: &[Vec<JointType>],
    selectors: &[TypeSelector],
    ks: &[usize],
) -> Result<MetricTable> {
    if evals.is_empty() {
        return Err(Error::EmptyInput("no evaluations to aggregate"));
    }
    let kinds = MetricKind::standard(ks);
    let mut rows = Vec::with_capacity(selectors.len() * kinds.len());
    for &selector in selectors {
        for &kind in &kinds {
            let mut sum = 0.0;
            let mut n = 0usize;
            for ranked in evals {
                let labels = type_labels(ranked, selector);
                match kind {
                    MetricKind::Mrr => {
                        if let Ok(v) = mrr_type(&labels) {
                            sum += v;
                            n += 1;
                        }
                    }
                    MetricKind::Ndcg(k) => {
                        if let Ok(v) = ndcg_at_k(&labels, k) {
                            sum += v;
                            n += 1;
                        }
                    }
                    MetricKind::Ratio(k) => {
                        let v = ratio_at_k(&labels, k)?;
                        sum += v;
                        n += 1;
                    }
                }
            }
            let value = if n == 0 { 0.0 } else { sum / n as f64 };
            rows.push(MetricRow {
                selector,
                kind,
                value,
                n_impressions: n,
            });
        }
    }
    Ok(MetricTable { rows })
}
