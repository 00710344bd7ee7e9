//! Four-phase intrusion experiment: condition construction and runs.
//!
//! Phase 0 evaluates on purely human data. Phase 1 doubles every candidate
//! list with generated counterparts. Phase 2 additionally replaces a
//! fraction t of each history. Phase 3 additionally retrains after
//! replacing a fraction t of the distinct human ids in the training pool.
//! Contamination is monotone across phases and every replacement preserves
//! veracity by corpus construction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    corpus_digest, shuffle_in_place, CorpusBundle, CounterpartIndex, GenerationMode,
    ImpressionInstance, Veracity,
};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, MetricKind, MetricTable, ALL_SELECTORS};
use crate::recmodel::{
    evaluate_impressions, train, FeatureSource, ModelConfig, RankedEvaluation, RecommenderModel,
    TrainConfig, TrainLog,
};
use crate::rng::rng_for;

/// Experimental condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    P0,
    P1,
    P2,
    P3,
}

/// Intrusion-ratio grid a sweep visits when none is configured.
pub const DEFAULT_SWEEP: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::P0 => "P0",
            Phase::P1 => "P1",
            Phase::P2 => "P2",
            Phase::P3 => "P3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Phase::P0, Phase::P1, Phase::P2, Phase::P3]
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(s))
    }
}

/// One phase run's condition parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub phase: Phase,
    /// Generator tag; required for P1..P3, forbidden for P0.
    pub generator: Option<String>,
    /// Faking level L1..L3; required for P1..P3, forbidden for P0.
    pub faking_level: Option<GenerationMode>,
    /// Intrusion ratio t; required for P2/P3, forbidden otherwise.
    pub llm_ratio: Option<f64>,
    pub seed: u64,
}

impl PhaseConfig {
    pub fn p0(seed: u64) -> Self {
        PhaseConfig {
            phase: Phase::P0,
            generator: None,
            faking_level: None,
            llm_ratio: None,
            seed,
        }
    }

    pub fn p1(generator: &str, level: GenerationMode, seed: u64) -> Self {
        PhaseConfig {
            phase: Phase::P1,
            generator: Some(generator.to_string()),
            faking_level: Some(level),
            llm_ratio: None,
            seed,
        }
    }

    pub fn p2(generator: &str, level: GenerationMode, t: f64, seed: u64) -> Self {
        PhaseConfig {
            phase: Phase::P2,
            generator: Some(generator.to_string()),
            faking_level: Some(level),
            llm_ratio: Some(t),
            seed,
        }
    }

    pub fn p3(generator: &str, level: GenerationMode, t: f64, seed: u64) -> Self {
        PhaseConfig {
            phase: Phase::P3,
            generator: Some(generator.to_string()),
            faking_level: Some(level),
            llm_ratio: Some(t),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let needs_generator = self.phase != Phase::P0;
        if needs_generator != self.generator.is_some() {
            return Err(Error::Config(format!(
                "{}: generator must be {}",
                self.phase.label(),
                if needs_generator { "set" } else { "absent" }
            )));
        }
        if needs_generator != self.faking_level.is_some() {
            return Err(Error::Config(format!(
                "{}: faking_level must be {}",
                self.phase.label(),
                if needs_generator { "set" } else { "absent" }
            )));
        }
        if let Some(level) = self.faking_level {
            if !matches!(
                level,
                GenerationMode::L1 | GenerationMode::L2 | GenerationMode::L3
            ) {
                return Err(Error::Config(format!(
                    "faking_level must be L1..L3, got {}",
                    level.label()
                )));
            }
        }
        let needs_t = matches!(self.phase, Phase::P2 | Phase::P3);
        if needs_t != self.llm_ratio.is_some() {
            return Err(Error::Config(format!(
                "{}: llm_ratio must be {}",
                self.phase.label(),
                if needs_t { "set" } else { "absent" }
            )));
        }
        if let Some(t) = self.llm_ratio {
            if !(0.0..=1.0).contains(&t) || !t.is_finite() {
                return Err(Error::Config(format!("llm_ratio {t} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Counterpart of a human item: real items map to their L1 rewrite, fake
/// items to the configured faking level.
fn counterpart_for(
    bundle: &CorpusBundle,
    index: &CounterpartIndex,
    id: &str,
    generator: &str,
    level: GenerationMode,
) -> Result<String> {
    let item = bundle.item(id)?;
    if item.mode != GenerationMode::L0 {
        return Err(Error::GeneratedIdInPhase0(id.to_string()));
    }
    let mode = match item.veracity {
        Veracity::Real => GenerationMode::L1,
        Veracity::Fake => level,
    };
    Ok(index.require(id, generator, mode)?.to_string())
}

fn assert_human_only(bundle: &CorpusBundle, ids: &[String]) -> Result<()> {
    for id in ids {
        if bundle.item(id)?.mode != GenerationMode::L0 {
            return Err(Error::GeneratedIdInPhase0(id.clone()));
        }
    }
    Ok(())
}

/// Validated human-only evaluation set: identity pass-through.
pub fn build_phase0(
    instances: &[ImpressionInstance],
    bundle: &CorpusBundle,
) -> Result<Vec<ImpressionInstance>> {
    for inst in instances {
        assert_human_only(bundle, &inst.history)?;
        assert_human_only(bundle, &inst.candidates)?;
        assert_human_only(bundle, std::slice::from_ref(&inst.target_id))?;
    }
    Ok(instances.to_vec())
}

/// Double every candidate list with generated counterparts and reshuffle.
///
/// Histories stay human. The K original candidates keep their human target;
/// each contributes its counterpart (real items the L1 rewrite, fake items
/// the `level` generation), giving 2K candidates.
pub fn build_phase1(
    instances: &[ImpressionInstance],
    bundle: &CorpusBundle,
    index: &CounterpartIndex,
    generator: &str,
    level: GenerationMode,
    seed: u64,
) -> Result<Vec<ImpressionInstance>> {
    instances
        .iter()
        .map(|inst| {
            assert_human_only(bundle, &inst.history)?;
            let mut out = inst.clone();
            let mut added = Vec::with_capacity(inst.candidates.len());
            for id in &inst.candidates {
                added.push(counterpart_for(bundle, index, id, generator, level)?);
            }
            out.candidates.extend(added);
            let mut rng = rng_for(seed, &["phase1", &inst.user_id, &inst.target_id]);
            shuffle_in_place(&mut out.candidates, &mut rng);
            Ok(out)
        })
        .collect()
}

/// Output of an injection pass, with its realized replacement fraction.
#[derive(Debug, Clone)]
pub struct InjectedSet {
    pub instances: Vec<ImpressionInstance>,
    /// History items replaced (phase 2) or distinct ids replaced (phase 3).
    pub replaced: usize,
    /// History items seen (phase 2) or distinct ids seen (phase 3).
    pub slots: usize,
}

impl InjectedSet {
    /// Global fraction actually replaced; per-impression rounding makes
    /// this differ slightly from the requested t.
    pub fn realized_fraction(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.replaced as f64 / self.slots as f64
        }
    }
}

/// Replacement count for a requested fraction: nearest integer.
fn rounded_count(t: f64, n: usize) -> usize {
    (t * n as f64 + 0.5).floor() as usize
}

/// First `m` indices of a seeded partial shuffle of `0..n`.
fn sample_positions(n: usize, m: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(m);
    idx
}

/// Replace a fraction t of each history with generated counterparts.
///
/// Exactly ⌊t·|history|+0.5⌋ seeded-uniform positions per impression;
/// candidates pass through untouched.
pub fn inject_history(
    instances: &[ImpressionInstance],
    bundle: &CorpusBundle,
    index: &CounterpartIndex,
    t: f64,
    generator: &str,
    level: GenerationMode,
    seed: u64,
) -> Result<InjectedSet> {
    if !(0.0..=1.0).contains(&t) || !t.is_finite() {
        return Err(Error::Config(format!("llm_ratio {t} outside [0, 1]")));
    }
    let mut replaced = 0usize;
    let mut slots = 0usize;
    let out: Vec<ImpressionInstance> = instances
        .iter()
        .map(|inst| {
            let mut out = inst.clone();
            let h = out.history.len();
            let m = rounded_count(t, h);
            let mut rng = rng_for(seed, &["phase2", &inst.user_id, &inst.target_id]);
            for pos in sample_positions(h, m, &mut rng) {
                out.history[pos] =
                    counterpart_for(bundle, index, &out.history[pos], generator, level)?;
            }
            replaced += m;
            slots += h;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(InjectedSet {
        instances: out,
        replaced,
        slots,
    })
}

/// Replace a fraction t of the distinct human ids in a training pool.
///
/// Selection is over distinct ids, so a chosen item disappears from every
/// history, candidate list, and target it appears in.
pub fn inject_training(
    instances: &[ImpressionInstance],
    bundle: &CorpusBundle,
    index: &CounterpartIndex,
    t: f64,
    generator: &str,
    level: GenerationMode,
    seed: u64,
) -> Result<InjectedSet> {
    if !(0.0..=1.0).contains(&t) || !t.is_finite() {
        return Err(Error::Config(format!("llm_ratio {t} outside [0, 1]")));
    }
    let mut distinct: BTreeSet<&str> = BTreeSet::new();
    for inst in instances {
        assert_human_only(bundle, &inst.history)?;
        assert_human_only(bundle, &inst.candidates)?;
        assert_human_only(bundle, std::slice::from_ref(&inst.target_id))?;
        distinct.extend(inst.history.iter().map(String::as_str));
        distinct.extend(inst.candidates.iter().map(String::as_str));
        distinct.insert(inst.target_id.as_str());
    }
    let ids: Vec<&str> = distinct.into_iter().collect();
    let n = ids.len();
    let m = rounded_count(t, n);
    let mut rng = rng_for(seed, &["phase3"]);
    let chosen = sample_positions(n, m, &mut rng);
    let mut replacement: BTreeMap<&str, String> = BTreeMap::new();
    for pos in chosen {
        let id = ids[pos];
        replacement.insert(id, counterpart_for(bundle, index, id, generator, level)?);
    }
    let swap = |id: &String| -> String {
        replacement
            .get(id.as_str())
            .cloned()
            .unwrap_or_else(|| id.clone())
    };
    let out: Vec<ImpressionInstance> = instances
        .iter()
        .map(|inst| {
            let mut out = inst.clone();
            out.history = out.history.iter().map(swap).collect();
            out.candidates = out.candidates.iter().map(swap).collect();
            out.target_id = swap(&out.target_id);
            out
        })
        .collect();
    Ok(InjectedSet {
        instances: out,
        replaced: m,
        slots: n,
    })
}

/// Distinct (L0, generated) id counts across every site of a training pool.
fn training_id_audit(
    instances: &[ImpressionInstance],
    bundle: &CorpusBundle,
) -> Result<(usize, usize)> {
    let mut l0 = BTreeSet::new();
    let mut generated = BTreeSet::new();
    for inst in instances {
        for id in inst
            .history
            .iter()
            .chain(&inst.candidates)
            .chain(std::iter::once(&inst.target_id))
        {
            if bundle.item(id)?.mode == GenerationMode::L0 {
                l0.insert(id.as_str());
            } else {
                generated.insert(id.as_str());
            }
        }
    }
    Ok((l0.len(), generated.len()))
}

/// Where generated ids appear in a set of instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Contamination {
    pub generated_in_history: usize,
    pub generated_in_candidates: usize,
    pub generated_targets: usize,
}

/// Count generated-id occurrences per site, for the phase monotonicity
/// audit: P0 has none anywhere, P1 only in candidates, P2/P3 also in
/// histories.
pub fn contamination(
    instances: &[ImpressionInstance],
    bundle: &CorpusBundle,
) -> Result<Contamination> {
    let mut c = Contamination::default();
    for inst in instances {
        for id in &inst.history {
            if bundle.item(id)?.mode != GenerationMode::L0 {
                c.generated_in_history += 1;
            }
        }
        for id in &inst.candidates {
            if bundle.item(id)?.mode != GenerationMode::L0 {
                c.generated_in_candidates += 1;
            }
        }
        if bundle.item(&inst.target_id)?.mode != GenerationMode::L0 {
            c.generated_targets += 1;
        }
    }
    Ok(c)
}

/// Either a ready model or instructions to train one.
pub enum ModelSource<'a> {
    Trained(&'a RecommenderModel),
    TrainSpec(ModelConfig, TrainConfig),
}

/// Shared inputs of a phase run.
pub struct ExperimentData<'a> {
    pub bundle: &'a CorpusBundle,
    pub index: &'a CounterpartIndex,
    pub train: &'a [ImpressionInstance],
    pub val: &'a [ImpressionInstance],
    pub test: &'a [ImpressionInstance],
    pub source: &'a FeatureSource,
}

/// Relative real advantage for one metric kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RraEntry {
    pub kind: MetricKind,
    pub rra: f64,
    pub delta_vs_baseline: Option<f64>,
}

/// Full result of one phase run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub phase: Phase,
    pub generator: Option<String>,
    pub faking_level: Option<GenerationMode>,
    pub llm_ratio: Option<f64>,
    pub seed: u64,
    pub table: MetricTable,
    pub rra: Vec<RraEntry>,
    /// Fraction of history items actually replaced (P2/P3).
    pub realized_history_fraction: Option<f64>,
    /// Fraction of distinct training ids actually replaced (P3).
    pub realized_training_fraction: Option<f64>,
    pub n_impressions: usize,
    pub metadata: BTreeMap<String, String>,
    /// Training log when this run trained a model.
    pub train_log: Option<TrainLog>,
    /// Per-impression rankings, for JSONL export.
    #[serde(skip)]
    pub evaluations: Vec<RankedEvaluation>,
}

impl ExperimentReport {
    pub fn rra_value(&self, kind: MetricKind) -> Option<f64> {
        self.rra.iter().find(|e| e.kind == kind).map(|e| e.rra)
    }

    /// `metric,rra,delta_vs_baseline` rows; delta empty without a baseline.
    pub fn rra_csv(&self) -> String {
        let mut out = String::from("metric,rra,delta_vs_baseline\n");
        for e in &self.rra {
            match e.delta_vs_baseline {
                Some(d) => out.push_str(&format!("{},{:.6},{:.6}\n", e.kind.name(), e.rra, d)),
                None => out.push_str(&format!("{},{:.6},\n", e.kind.name(), e.rra)),
            }
        }
        out
    }
}

/// Run one phase end to end: build the condition, obtain the model, rank
/// the evaluation set, aggregate metrics, attach RRA and baseline deltas.
pub fn run_experiment(
    cfg: &PhaseConfig,
    model_source: ModelSource,
    data: &ExperimentData,
    ks: &[usize],
    baseline: Option<&ExperimentReport>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let generator = cfg.generator.as_deref().unwrap_or("");
    let level = cfg.faking_level.unwrap_or(GenerationMode::L1);
    let t = cfg.llm_ratio.unwrap_or(0.0);

    // Evaluation set per phase.
    let mut realized_history_fraction = None;
    let eval_set: Vec<ImpressionInstance> = match cfg.phase {
        Phase::P0 => build_phase0(data.test, data.bundle)?,
        Phase::P1 => build_phase1(data.test, data.bundle, data.index, generator, level, cfg.seed)?,
        Phase::P2 | Phase::P3 => {
            let doubled =
                build_phase1(data.test, data.bundle, data.index, generator, level, cfg.seed)?;
            let injected = inject_history(
                &doubled,
                data.bundle,
                data.index,
                t,
                generator,
                level,
                cfg.seed,
            )?;
            realized_history_fraction = Some(injected.realized_fraction());
            injected.instances
        }
    };

    // Model: P0..P2 rank with a human-trained model; P3 retrains on the
    // injected pool (training and validation share one replacement map).
    let mut realized_training_fraction = None;
    let mut train_contamination = None;
    let mut train_log = None;
    let trained_here: Option<RecommenderModel>;
    let model: &RecommenderModel = match (cfg.phase, model_source) {
        (Phase::P3, ModelSource::TrainSpec(mcfg, tcfg)) => {
            let mut pool: Vec<ImpressionInstance> = data.train.to_vec();
            pool.extend_from_slice(data.val);
            let injected = inject_training(
                &pool,
                data.bundle,
                data.index,
                t,
                generator,
                level,
                cfg.seed,
            )?;
            realized_training_fraction = Some(injected.realized_fraction());
            train_contamination = Some(training_id_audit(&injected.instances, data.bundle)?);
            let (train_set, val_set) = injected.instances.split_at(data.train.len());
            let mut m = RecommenderModel::new(mcfg)?;
            train_log = Some(train(&mut m, data.source, train_set, val_set, &tcfg)?);
            trained_here = Some(m);
            trained_here.as_ref().unwrap()
        }
        (Phase::P3, ModelSource::Trained(_)) => {
            return Err(Error::Config(
                "P3 requires retraining: pass a train spec, not a trained model".to_string(),
            ));
        }
        (_, ModelSource::Trained(m)) => {
            trained_here = None;
            let _ = &trained_here;
            m
        }
        (_, ModelSource::TrainSpec(mcfg, tcfg)) => {
            for inst in data.train.iter().chain(data.val) {
                assert_human_only(data.bundle, &inst.history)?;
                assert_human_only(data.bundle, &inst.candidates)?;
            }
            let mut m = RecommenderModel::new(mcfg)?;
            train_log = Some(train(&mut m, data.source, data.train, data.val, &tcfg)?);
            trained_here = Some(m);
            trained_here.as_ref().unwrap()
        }
    };

    let evaluations = evaluate_impressions(model, data.source, &eval_set)?;
    let types: Vec<Vec<crate::metrics::JointType>> = evaluations
        .iter()
        .map(|e| crate::corpus::resolve_types(data.bundle, &e.ranked_ids))
        .collect::<Result<_>>()?;
    let table = aggregate(&types, &ALL_SELECTORS, ks)?;

    let mut rra = Vec::new();
    for kind in MetricKind::standard(ks) {
        let value = table.rra_for(kind)?;
        let delta_vs_baseline = baseline.and_then(|b| b.rra_value(kind)).map(|b| value - b);
        rra.push(RraEntry {
            kind,
            rra: value,
            delta_vs_baseline,
        });
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("phase".to_string(), cfg.phase.label().to_string());
    if let Some(g) = &cfg.generator {
        metadata.insert("generator".to_string(), g.clone());
    }
    if let Some(l) = cfg.faking_level {
        metadata.insert("faking_level".to_string(), l.label().to_string());
    }
    if let Some(t) = cfg.llm_ratio {
        metadata.insert("llm_ratio".to_string(), format!("{t}"));
    }
    metadata.insert("seed".to_string(), cfg.seed.to_string());
    if let Some((l0, generated)) = train_contamination {
        metadata.insert("train_l0_ids".to_string(), l0.to_string());
        metadata.insert("train_generated_ids".to_string(), generated.to_string());
    }
    metadata.insert("corpus_digest".to_string(), corpus_digest(data.bundle));
    metadata.insert("model_variant".to_string(), format!("{:?}", model.config.variant));
    metadata.insert("n_train".to_string(), data.train.len().to_string());
    metadata.insert("n_test".to_string(), eval_set.len().to_string());

    Ok(ExperimentReport {
        phase: cfg.phase,
        generator: cfg.generator.clone(),
        faking_level: cfg.faking_level,
        llm_ratio: cfg.llm_ratio,
        seed: cfg.seed,
        table,
        rra,
        realized_history_fraction,
        realized_training_fraction,
        n_impressions: eval_set.len(),
        metadata,
        train_log,
        evaluations,
    })
}
