//! Analytic-versus-numeric gradient verification.
//!
//! For each parameter group a seeded subsample of coordinates is perturbed
//! by ±epsilon and the central difference of the impression loss is compared
//! against the backward-pass gradient. The reported figure is the worst
//! per-group relative error `‖ga−gn‖ / max(‖ga‖, ‖gn‖, group_floor)` over
//! the sampled coordinates.
//!
//! The denominator floor turns the comparison absolute for groups whose
//! gradient norm sits below it. Central differences in f64 cannot resolve
//! gradients smaller than roughly `eps_machine · |loss| / epsilon` (~1e-12
//! at the defaults); weakly coupled groups, such as attention-pool queries
//! at init, sit orders of magnitude below that, where the difference
//! quotient is pure cancellation noise. With the default floor those groups
//! are held to `‖ga−gn‖ < tol · group_floor`, which still flags any defect
//! large enough for finite differences to see.
//!
//! Coordinates whose ±epsilon perturbation flips the sign of any rectifier
//! input are resampled: the central difference straddles a kink there and
//! measures a blend of two linear regimes, not the derivative. Rectifier
//! pre-activations are affine in any single parameter coordinate, so equal
//! endpoint signs guarantee a kink-free bracket.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::Rng;

use crate::corpus::ImpressionInstance;
use crate::error::Result;
use crate::rng::rng_for;
use crate::tape::Tape;

use super::{FeatureSource, RecommenderModel};

/// Extra coordinates drawn per group as replacements for kink rejections.
const KINK_OVERDRAW: usize = 4;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub samples_per_group: usize,
    /// Gradient-norm scale below which a group is compared absolutely.
    pub group_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-3,
            samples_per_group: 4,
            group_floor: 1e-4,
            seed: 0,
        }
    }
}

pub(crate) fn relative_group_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / norm(analytic).max(norm(numeric)).max(floor)
}

/// Up to `want * (overdraw + 1)` distinct coordinates; the surplus replaces
/// coordinates rejected by the kink filter.
fn sample_coords(
    rows: usize,
    cols: usize,
    want: usize,
    overdraw: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let total = rows * cols;
    let cap = want.saturating_mul(overdraw + 1).min(total);
    if total <= cap {
        return (0..total).map(|i| (i / cols, i % cols)).collect();
    }
    let mut seen = BTreeSet::new();
    let mut order = Vec::with_capacity(cap);
    while order.len() < cap {
        let i = rng.gen_range(0..total);
        if seen.insert(i) {
            order.push((i / cols, i % cols));
        }
    }
    order
}

/// Worst per-group relative gradient error on one impression.
///
/// Dropout and user masking are disabled; the loss is the plain
/// cross-entropy of the impression.
pub fn grad_check(
    model: &RecommenderModel,
    source: &FeatureSource,
    inst: &ImpressionInstance,
    cfg: &GradCheckConfig,
) -> Result<f64> {
    let mut ids: BTreeSet<String> = BTreeSet::new();
    ids.extend(inst.history.iter().cloned());
    ids.extend(inst.candidates.iter().cloned());

    // Analytic gradients in one backward pass.
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let news = model.batch_news_nodes(&mut tape, &bound, source, &ids, None)?;
    let loss_node = model.instance_loss(&mut tape, &bound, &news, inst, None)?;
    tape.backward(loss_node);
    let analytic: BTreeMap<String, Array2<f64>> = model
        .params
        .iter()
        .map(|(name, value)| {
            let g = tape
                .try_grad(bound.node(name))
                .cloned()
                .unwrap_or_else(|| Array2::zeros(value.dim()));
            (name.to_string(), g)
        })
        .collect();

    let mut work = model.clone();
    let eval_loss = |m: &RecommenderModel| -> Result<(f64, Vec<bool>)> {
        let mut t = Tape::new();
        let b = m.bind(&mut t, false);
        let news = m.batch_news_nodes(&mut t, &b, source, &ids, None)?;
        let l = m.instance_loss(&mut t, &b, &news, inst, None)?;
        Ok((t.scalar(l), t.relu_input_signs()))
    };

    let mut worst: f64 = 0.0;
    for name in model.params.names() {
        let (rows, cols) = model.params.get(&name).dim();
        let mut rng = rng_for(cfg.seed, &["gradcheck", &name]);
        let coords = sample_coords(rows, cols, cfg.samples_per_group, KINK_OVERDRAW, &mut rng);
        let mut ga = Vec::with_capacity(cfg.samples_per_group);
        let mut gn = Vec::with_capacity(cfg.samples_per_group);
        let mut tainted: Vec<(f64, f64)> = Vec::new();
        for (r, c) in coords {
            if ga.len() == cfg.samples_per_group {
                break;
            }
            let orig = work.params.get(&name)[[r, c]];
            work.params.get_mut(&name)[[r, c]] = orig + cfg.epsilon;
            let (plus, signs_plus) = eval_loss(&work)?;
            work.params.get_mut(&name)[[r, c]] = orig - cfg.epsilon;
            let (minus, signs_minus) = eval_loss(&work)?;
            work.params.get_mut(&name)[[r, c]] = orig;
            let slope = (plus - minus) / (2.0 * cfg.epsilon);
            if signs_plus == signs_minus {
                ga.push(analytic[&name][[r, c]]);
                gn.push(slope);
            } else {
                tainted.push((analytic[&name][[r, c]], slope));
            }
        }
        // Every candidate crossed a kink: keep the tainted measurements
        // rather than silently passing an unmeasured group.
        if ga.is_empty() {
            for (a, n) in tainted {
                ga.push(a);
                gn.push(n);
            }
        }
        worst = worst.max(relative_group_error(&ga, &gn, cfg.group_floor));
    }
    Ok(worst)
}
