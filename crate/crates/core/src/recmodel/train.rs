//! Mini-batch training with adaptive-moment updates, per-epoch validation,
//! best-model selection, and early stopping.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::ImpressionInstance;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tape::Tape;

use super::{evaluate_impressions, target_mrr, FeatureSource, ParamStore, RecommenderModel};

/// Learning-rate grid used by `grid_search`.
pub const LR_GRID: [f64; 8] = [5e-3, 1e-3, 5e-4, 1e-4, 5e-5, 1e-5, 5e-6, 1e-6];

/// Validation metric used for model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    TargetMrr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stop_metric: EarlyStopMetric,
    /// Stop after this many consecutive non-improving epochs.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            epochs: 10,
            early_stop_metric: EarlyStopMetric::TargetMrr,
            patience: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// One training-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub selected: bool,
}

/// Per-epoch training log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_metric,selected\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{}\n",
                r.epoch, r.train_loss, r.val_metric, r.selected
            ));
        }
        out
    }

    pub fn best_val(&self) -> Option<f64> {
        self.rows
            .iter()
            .map(|r| r.val_metric)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }
}

/// Adam state: first/second moments per parameter, shared step counter.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl Adam {
    fn new(lr: f64, params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| -> BTreeMap<String, Array2<f64>> {
            p.iter()
                .map(|(name, value)| (name.to_string(), Array2::zeros(value.dim())))
                .collect()
        };
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    fn update(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Array2<f64>>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for name in params.names() {
            let g = match grads.get(&name) {
                Some(g) => g,
                None => continue,
            };
            let m = self.m.get_mut(&name).unwrap();
            let v = self.v.get_mut(&name).unwrap();
            *m = &*m * self.beta1 + g * (1.0 - self.beta1);
            *v = &*v * self.beta2 + &g.mapv(|x| x * x) * (1.0 - self.beta2);
            let mut value = params.get(&name).clone();
            ndarray::Zip::from(&mut value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, mi, vi| {
                    let mh = mi / bc1;
                    let vh = vi / bc2;
                    *p -= self.lr * mh / (vh.sqrt() + self.eps);
                });
            params.set(&name, value);
        }
    }
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, &["epoch-shuffle", &epoch.to_string()]);
    for i in (1..idx.len()).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Train in place; returns the per-epoch log. The parameters left on the
/// model are those of the best-validation epoch.
pub fn train(
    model: &mut RecommenderModel,
    source: &FeatureSource,
    train_set: &[ImpressionInstance],
    val_set: &[ImpressionInstance],
    tcfg: &TrainConfig,
) -> Result<TrainLog> {
    tcfg.validate()?;
    if tcfg.epochs == 0 {
        return Ok(TrainLog::default());
    }
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let mut adam = Adam::new(tcfg.lr, &model.params);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0usize;
    let mut global_batch = 0usize;

    for epoch in 1..=tcfg.epochs {
        let order = shuffled_indices(train_set.len(), tcfg.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            global_batch += 1;
            let mut rng = rng_for(
                tcfg.seed,
                &["train-noise", &epoch.to_string(), &global_batch.to_string()],
            );
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let mut ids: BTreeSet<String> = BTreeSet::new();
            for &i in chunk {
                ids.extend(train_set[i].history.iter().cloned());
                ids.extend(train_set[i].candidates.iter().cloned());
            }
            let news = model.batch_news_nodes(&mut tape, &bound, source, &ids, Some(&mut rng))?;
            let mut total: Option<crate::tape::NodeId> = None;
            for &i in chunk {
                let li =
                    model.instance_loss(&mut tape, &bound, &news, &train_set[i], Some(&mut rng))?;
                total = Some(match total {
                    Some(t) => tape.add(t, li),
                    None => li,
                });
            }
            let mean = tape.scale(total.unwrap(), 1.0 / chunk.len() as f64);
            let batch_loss = tape.scalar(mean);
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    batch: global_batch,
                    msg: format!("batch loss = {batch_loss}"),
                });
            }
            epoch_loss += batch_loss;
            batches += 1;
            tape.backward(mean);
            let grads: BTreeMap<String, Array2<f64>> = bound
                .nodes
                .iter()
                .filter_map(|(name, node)| {
                    tape.try_grad(*node).map(|g| (name.clone(), g.clone()))
                })
                .collect();
            adam.update(&mut model.params, &grads);
            if !model.params.all_finite() {
                return Err(Error::Diverged {
                    batch: global_batch,
                    msg: "non-finite parameter after update".to_string(),
                });
            }
        }

        let val_metric = if val_set.is_empty() {
            0.0
        } else {
            let evals = evaluate_impressions(model, source, val_set)?;
            target_mrr(&evals)?
        };
        log.rows.push(EpochRow {
            epoch,
            train_loss: epoch_loss / batches.max(1) as f64,
            val_metric,
            selected: false,
        });
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_metric > *b);
        if improved {
            best = Some((val_metric, epoch, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > tcfg.patience {
                break;
            }
        }
    }

    if let Some((_, best_epoch, params)) = best {
        model.params = params;
        for row in &mut log.rows {
            row.selected = row.epoch == best_epoch;
        }
    }
    Ok(log)
}

/// Result of a learning-rate grid search.
#[derive(Debug)]
pub struct GridSearchResult {
    pub lr: f64,
    pub model: RecommenderModel,
    pub log: TrainLog,
    pub val_metric: f64,
}

/// Train one fresh model per learning rate and keep the best-validation one.
/// Ties keep the earliest grid entry.
pub fn grid_search(
    base: &RecommenderModel,
    source: &FeatureSource,
    train_set: &[ImpressionInstance],
    val_set: &[ImpressionInstance],
    grid: &[f64],
    tcfg: &TrainConfig,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("learning-rate grid"));
    }
    let mut best: Option<GridSearchResult> = None;
    for &lr in grid {
        let mut model = RecommenderModel::new(base.config.clone())?;
        let mut cfg = tcfg.clone();
        cfg.lr = lr;
        let log = train(&mut model, source, train_set, val_set, &cfg)?;
        let val_metric = log.best_val().unwrap_or(0.0);
        let better = best.as_ref().is_none_or(|b| val_metric > b.val_metric);
        if better {
            best = Some(GridSearchResult {
                lr,
                model,
                log,
                val_metric,
            });
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::Variant;
    use super::*;

    fn training_fixture(
        variant: Variant,
    ) -> (
        RecommenderModel,
        FeatureSource,
        Vec<ImpressionInstance>,
        Vec<ImpressionInstance>,
    ) {
        let (source, ids) = tiny_source(16, 12);
        let model = RecommenderModel::new(small_config(variant, 16)).unwrap();
        let make = |t: usize| ImpressionInstance {
            user_id: format!("u{t}"),
            history: ids[..3].to_vec(),
            target_id: ids[3 + (t % 4)].clone(),
            candidates: ids[3..9].to_vec(),
            split_timestamp: t as i64,
        };
        let train_set: Vec<_> = (0..8).map(make).collect();
        let val_set: Vec<_> = (0..3).map(make).collect();
        (model, source, train_set, val_set)
    }

    #[test]
    fn zero_epochs_leave_parameters_unchanged() {
        let (mut model, source, train_set, val_set) = training_fixture(Variant::AttentionNet);
        let before = model.params.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let log = train(&mut model, &source, &train_set, &val_set, &cfg).unwrap();
        assert!(log.rows.is_empty());
        assert_eq!(model.params, before);
    }

    #[test]
    fn same_seed_gives_bit_identical_trajectories() {
        for variant in [Variant::AttentionNet, Variant::RecurrentNet] {
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 3,
                lr: 1e-3,
                seed: 42,
                ..TrainConfig::default()
            };
            let (mut m1, source, train_set, val_set) = training_fixture(variant);
            let log1 = train(&mut m1, &source, &train_set, &val_set, &cfg).unwrap();
            let (mut m2, source2, train_set2, val_set2) = training_fixture(variant);
            let log2 = train(&mut m2, &source2, &train_set2, &val_set2, &cfg).unwrap();
            assert_eq!(log1, log2);
            for (name, v1) in m1.params.iter() {
                let v2 = m2.params.get(name);
                assert_eq!(v1, v2, "parameter {name} diverged");
            }
        }
    }

    #[test]
    fn training_reduces_loss_on_learnable_task() {
        let (mut model, source, train_set, val_set) = training_fixture(Variant::AttentionNet);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 4,
            lr: 5e-3,
            patience: 10,
            seed: 1,
            ..TrainConfig::default()
        };
        let log = train(&mut model, &source, &train_set, &val_set, &cfg).unwrap();
        assert!(log.rows.len() >= 2);
        let first = log.rows.first().unwrap().train_loss;
        let last = log.rows.last().unwrap().train_loss;
        assert!(
            last < first,
            "loss did not drop: first {first}, last {last}"
        );
        assert_eq!(log.rows.iter().filter(|r| r.selected).count(), 1);
    }

    #[test]
    fn log_csv_format() {
        let log = TrainLog {
            rows: vec![EpochRow {
                epoch: 1,
                train_loss: 0.5,
                val_metric: 0.25,
                selected: true,
            }],
        };
        let csv = log.to_csv();
        assert!(csv.starts_with("epoch,train_loss,val_metric,selected\n"));
        assert!(csv.contains("1,0.500000,0.250000,true"));
    }

    #[test]
    fn invalid_train_config_rejected() {
        let (mut model, source, train_set, val_set) = training_fixture(Variant::AttentionNet);
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(train(&mut model, &source, &train_set, &val_set, &bad).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&mut model, &source, &train_set, &val_set, &bad).is_err());
    }
}
