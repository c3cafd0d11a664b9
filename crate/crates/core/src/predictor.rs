//! Expert-activation predictors and critical-expert selection.
//!
//! The gating-based predictor stands in for feeding draft-model attention
//! outputs into the target model's router. Without real tensors its quality
//! is a single `fidelity` knob: the predicted scores are a convex mixture of
//! the true scores and a random simplex draw.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::trace::{ActivationTrace, LayerActivation, TokenRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorStrategy {
    #[default]
    GatingBased,
    CoarseHistory,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorModel {
    /// 1 reproduces the true gating scores, 0 is pure noise.
    pub fidelity: f64,
    pub noise_seed: u64,
    pub strategy: PredictorStrategy,
}

impl PredictorModel {
    pub fn perfect() -> Self {
        PredictorModel {
            fidelity: 1.0,
            noise_seed: 0,
            strategy: PredictorStrategy::GatingBased,
        }
    }
}

/// Routed-expert activation counts over every token seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryCounter {
    counts: Vec<Vec<u64>>,
    totals: Vec<u64>,
}

impl HistoryCounter {
    pub fn new(num_layers: usize, experts_per_layer: usize) -> Self {
        HistoryCounter {
            counts: vec![vec![0; experts_per_layer]; num_layers],
            totals: vec![0; num_layers],
        }
    }

    pub fn record(&mut self, token: &TokenRecord) {
        for (l, act) in token.per_layer.iter().enumerate() {
            for &e in &act.activated {
                self.counts[l][e] += 1;
            }
            self.totals[l] += act.activated.len() as u64;
        }
    }

    pub fn counts(&self, layer: usize) -> &[u64] {
        &self.counts[layer]
    }

    pub fn total(&self, layer: usize) -> u64 {
        self.totals[layer]
    }

    /// Normalized routed counts; uniform over routed experts before any
    /// observation.
    pub fn distribution(&self, layer: usize, shared: usize) -> Vec<f64> {
        let counts = &self.counts[layer];
        let total = self.totals[layer];
        counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if i < shared {
                    0.0
                } else if total == 0 {
                    1.0 / (counts.len() - shared) as f64
                } else {
                    c as f64 / total as f64
                }
            })
            .collect()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn noise_rng(seed: u64, token: usize, layer: usize) -> ChaCha8Rng {
    let key = splitmix(splitmix(splitmix(seed) ^ token as u64) ^ (layer as u64).rotate_left(32));
    ChaCha8Rng::seed_from_u64(key)
}

/// Symmetric Dirichlet concentration of the gating predictor's noise.
///
/// A misled router still emits a peaked softmax, so the noise is drawn close
/// to the simplex vertices rather than uniformly; this keeps noisy gating
/// predictions sharper than frequency counts.
pub const GATING_NOISE_CONCENTRATION: f64 = 0.1;

/// Symmetric Dirichlet draw over routed experts; shared slots stay zero.
/// `alpha = 1` is the uniform distribution on the simplex.
fn simplex_draw(rng: &mut ChaCha8Rng, len: usize, shared: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let mut v: Vec<f64> = (0..len)
        .map(|i| {
            if i < shared {
                0.0
            } else if alpha == 1.0 {
                Exp1.sample(rng)
            } else {
                gamma.sample(rng)
            }
        })
        .collect();
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    } else {
        // every gamma variate underflowed; fall back to one random vertex
        let pick = shared + (rng.next_u64() % (len - shared) as u64) as usize;
        v[pick] = 1.0;
    }
    v
}

/// Predicted score vector for `(token, layer)`; always a probability vector.
pub fn predict_scores(
    model: &PredictorModel,
    truth: &LayerActivation,
    history: &HistoryCounter,
    token: usize,
    layer: usize,
) -> Vec<f64> {
    let len = truth.gating_scores.len();
    let shared = truth.shared;
    match model.strategy {
        PredictorStrategy::CoarseHistory => history.distribution(layer, shared),
        PredictorStrategy::Random => {
            simplex_draw(&mut noise_rng(model.noise_seed, token, layer), len, shared, 1.0)
        }
        PredictorStrategy::GatingBased => {
            let f = model.fidelity;
            if f >= 1.0 {
                return truth.gating_scores.clone();
            }
            let noise = simplex_draw(
                &mut noise_rng(model.noise_seed, token, layer),
                len,
                shared,
                GATING_NOISE_CONCENTRATION,
            );
            let mut mixed: Vec<f64> = truth
                .gating_scores
                .iter()
                .zip(&noise)
                .map(|(t, n)| f * t + (1.0 - f) * n)
                .collect();
            let sum: f64 = mixed.iter().sum();
            mixed.iter_mut().for_each(|x| *x /= sum);
            mixed
        }
    }
}

/// Experts chosen for prefetching at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalExpertSet {
    pub layer: usize,
    /// Descending predicted score, ties to the lowest index.
    pub experts: Vec<usize>,
    pub scores: Vec<f64>,
}

pub fn select_critical(scores: Vec<f64>, k: usize, layer: usize) -> CriticalExpertSet {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    CriticalExpertSet {
        layer,
        experts: idx,
        scores,
    }
}

/// A critical set tagged with the token it was predicted for.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub token: usize,
    pub set: CriticalExpertSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccuracyMetric {
    /// The top-1 predicted expert is among the activated experts.
    #[default]
    Top1InTruth,
    /// Fraction of the predicted set found among the activated experts.
    TopKRecall,
    /// The predicted set equals the activated set.
    ExactSet,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("prediction {index} for token {token}, layer {layer} has no matching trace entry")]
pub struct MisalignedStream {
    pub index: usize,
    pub token: usize,
    pub layer: usize,
}

/// Per-layer accuracy; `None` for layers with no predictions.
pub fn prediction_accuracy(
    predicted: &[Prediction],
    truth: &ActivationTrace,
    metric: AccuracyMetric,
) -> Result<Vec<Option<f64>>, MisalignedStream> {
    let mut score = vec![0.0; truth.num_layers];
    let mut count = vec![0usize; truth.num_layers];
    for (index, p) in predicted.iter().enumerate() {
        let layer = p.set.layer;
        if p.token >= truth.len() || layer >= truth.num_layers {
            return Err(MisalignedStream {
                index,
                token: p.token,
                layer,
            });
        }
        let actual = &truth.layer(p.token, layer).activated;
        let experts = &p.set.experts;
        score[layer] += match metric {
            AccuracyMetric::Top1InTruth => {
                experts.first().is_some_and(|e| actual.contains(e)) as u8 as f64
            }
            AccuracyMetric::TopKRecall => {
                if experts.is_empty() {
                    0.0
                } else {
                    experts.iter().filter(|e| actual.contains(e)).count() as f64
                        / experts.len() as f64
                }
            }
            AccuracyMetric::ExactSet => {
                let mut a = experts.clone();
                let mut b = actual.clone();
                a.sort_unstable();
                b.sort_unstable();
                (a == b) as u8 as f64
            }
        };
        count[layer] += 1;
    }
    Ok(score
        .into_iter()
        .zip(count)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect())
}

/// Predicts every `(token, layer)` of a trace in order, with the history
/// counter holding all earlier tokens.
pub fn predict_trace(model: &PredictorModel, trace: &ActivationTrace, k: usize) -> Vec<Prediction> {
    let mut history = HistoryCounter::new(trace.num_layers, trace.experts_per_layer);
    let mut out = Vec::with_capacity(trace.len() * trace.num_layers);
    for tok in &trace.tokens {
        for (l, act) in tok.per_layer.iter().enumerate() {
            let scores = predict_scores(model, act, &history, tok.token_index, l);
            out.push(Prediction {
                token: tok.token_index,
                set: select_critical(scores, k, l),
            });
        }
        history.record(tok);
    }
    out
}

/// Mean over layers of the top-1-in-truth accuracy of `model` on `trace`.
pub fn mean_top1_accuracy(model: &PredictorModel, trace: &ActivationTrace) -> f64 {
    let preds = predict_trace(model, trace, 1);
    let per_layer = prediction_accuracy(&preds, trace, AccuracyMetric::Top1InTruth)
        .expect("predictions come from the same trace");
    let vals: Vec<f64> = per_layer.into_iter().flatten().collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Fidelity at which the gating-based predictor reaches `target` mean top-1
/// accuracy on `trace`, found by bisection.
pub fn calibrate_fidelity(trace: &ActivationTrace, target: f64, noise_seed: u64) -> f64 {
    let acc = |f: f64| {
        mean_top1_accuracy(
            &PredictorModel {
                fidelity: f,
                noise_seed,
                strategy: PredictorStrategy::GatingBased,
            },
            trace,
        )
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if acc(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}
