//! Expert-activation traces: the workload replayed by the simulator.
//!
//! A trace holds, for every token and every layer, the router's gating scores
//! and the activated experts derived from them. Shared experts occupy indices
//! `0..shared_experts`, carry a gating score of zero and are active for every
//! token; routing picks the top-k among the remaining indices.
//!
//! # File format
//!
//! ```text
//! #moe-trace model=mixtral-8x7b layers=32 experts=8 k=2 shared=0 seed=7
//! 0,0,0.031,0.402,...
//! 0,1,...
//! ```
//!
//! One line per `(token, layer)` in order, holding `experts` comma-separated
//! scores. Activated sets are recomputed on load. The `seed` key is optional.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::ModelSpec;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Router output for one token at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivation {
    /// Probability vector over all experts of the layer; shared slots are zero.
    pub gating_scores: Vec<f64>,
    /// Routed experts in descending score order.
    pub activated: Vec<usize>,
    /// Number of always-active experts (indices `0..shared`).
    pub shared: usize,
}

impl LayerActivation {
    pub fn from_scores(gating_scores: Vec<f64>, topk: usize, shared: usize) -> Self {
        let activated = top_k_routed(&gating_scores, topk, shared);
        LayerActivation {
            gating_scores,
            activated,
            shared,
        }
    }

    /// Routed plus shared experts.
    pub fn all_experts(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.shared).chain(self.activated.iter().copied())
    }
}

/// Indices of the `k` largest scores among `scores[offset..]`, descending,
/// ties to the lowest index.
pub fn top_k_routed(scores: &[f64], k: usize, offset: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (offset..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub token_index: usize,
    pub per_layer: Vec<LayerActivation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub model_ref: String,
    pub num_layers: usize,
    pub experts_per_layer: usize,
    pub topk: usize,
    pub shared_experts: usize,
    pub tokens: Vec<TokenRecord>,
    pub seed: Option<u64>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn layer(&self, token: usize, layer: usize) -> &LayerActivation {
        &self.tokens[token].per_layer[layer]
    }

    /// Fails unless the trace was produced for a model with these dimensions.
    pub fn check_matches(&self, model: &ModelSpec) -> Result<(), TraceError> {
        let dims = (
            self.num_layers,
            self.experts_per_layer,
            self.topk,
            self.shared_experts,
        );
        let want = (
            model.num_layers,
            model.experts_per_layer,
            model.topk_activated,
            model.shared_experts,
        );
        if dims != want {
            return Err(TraceError::Invalid(format!(
                "trace dimensions (layers, experts, k, shared) = {dims:?} do not match model {want:?}"
            )));
        }
        if self.tokens.is_empty() {
            return Err(TraceError::Invalid("trace has no tokens".into()));
        }
        Ok(())
    }

    /// First `n` tokens as a new trace.
    pub fn truncated(&self, n: usize) -> ActivationTrace {
        let mut t = self.clone();
        t.tokens.truncate(n);
        t
    }
}

/// Synthetic trace generator knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceParams {
    pub num_tokens: usize,
    /// Power-law exponent of the per-layer expert popularity.
    pub skew: f64,
    /// Weight of the previous token's scores in each new token's scores.
    pub correlation: f64,
    /// Gamma shape of the per-expert noise; smaller values give peakier
    /// router outputs, 1 gives exponential noise.
    pub concentration: f64,
    pub seed: u64,
}

/// Default router-noise shape: peaked score vectors like a trained router.
pub const DEFAULT_CONCENTRATION: f64 = 0.3;

impl TraceParams {
    pub fn new(num_tokens: usize, skew: f64, correlation: f64, seed: u64) -> Self {
        TraceParams {
            num_tokens,
            skew,
            correlation,
            concentration: DEFAULT_CONCENTRATION,
            seed,
        }
    }
}

/// Generates a trace whose gating scores follow a per-layer power-law
/// popularity with first-order token correlation.
///
/// Each layer ranks its routed experts by a random permutation and gives the
/// expert of rank `r` base weight `(r + 1)^-skew`. A fresh draw scales every
/// base weight by an independent `Gamma(concentration, 1)` variate and
/// normalizes, so `skew = 0` gives exchangeable scores and uniformly random
/// top-k sets. Token `t` then mixes
/// `correlation * scores[t-1] + (1 - correlation) * fresh`.
pub fn generate_synthetic_trace(
    model: &ModelSpec,
    params: TraceParams,
) -> Result<ActivationTrace, TraceError> {
    if params.num_tokens < 1 {
        return Err(TraceError::Invalid("num_tokens must be at least 1".into()));
    }
    if !(params.skew.is_finite() && params.skew >= 0.0) {
        return Err(TraceError::Invalid("skew must be finite and non-negative".into()));
    }
    if !(0.0..=1.0).contains(&params.correlation) {
        return Err(TraceError::Invalid("correlation must lie in [0, 1]".into()));
    }
    let noise = Gamma::new(params.concentration, 1.0)
        .ok()
        .filter(|_| params.concentration.is_finite() && params.concentration > 0.0)
        .ok_or_else(|| TraceError::Invalid("concentration must be positive".into()))?;
    let e = model.experts_per_layer;
    let s = model.shared_experts;
    let routed = e - s;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let base: Vec<Vec<f64>> = (0..model.num_layers)
        .map(|_| {
            let mut ranks: Vec<usize> = (0..routed).collect();
            // Fisher-Yates keeps the draw order independent of library shuffles.
            for i in (1..routed).rev() {
                let j = rng.random_range(0..=i);
                ranks.swap(i, j);
            }
            ranks
                .iter()
                .map(|&r| ((r + 1) as f64).powf(-params.skew))
                .collect()
        })
        .collect();

    let mut tokens = Vec::with_capacity(params.num_tokens);
    let mut prev: Vec<Vec<f64>> = Vec::new();
    for t in 0..params.num_tokens {
        let mut per_layer = Vec::with_capacity(model.num_layers);
        let mut current = Vec::with_capacity(model.num_layers);
        for (l, weights) in base.iter().enumerate() {
            let mut fresh: Vec<f64> = weights
                .iter()
                .map(|w| w * noise.sample(&mut rng))
                .collect();
            normalize(&mut fresh);
            let mixed = if t == 0 {
                fresh
            } else {
                let c = params.correlation;
                let mut m: Vec<f64> = prev[l]
                    .iter()
                    .zip(&fresh)
                    .map(|(p, f)| c * p + (1.0 - c) * f)
                    .collect();
                normalize(&mut m);
                m
            };
            let mut scores = vec![0.0; s];
            scores.extend_from_slice(&mixed);
            per_layer.push(LayerActivation::from_scores(scores, model.topk_activated, s));
            current.push(mixed);
        }
        prev = current;
        tokens.push(TokenRecord {
            token_index: t,
            per_layer,
        });
    }
    Ok(ActivationTrace {
        model_ref: model.name.clone(),
        num_layers: model.num_layers,
        experts_per_layer: e,
        topk: model.topk_activated,
        shared_experts: s,
        tokens,
        seed: Some(params.seed),
    })
}

fn normalize(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    } else {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Per-layer mean, over sliding windows of `window` consecutive tokens, of the
/// number of distinct routed experts activated divided by `experts_per_layer`.
pub fn activation_rate(trace: &ActivationTrace, window: usize) -> Result<Vec<f64>, TraceError> {
    if window < 1 || window > trace.len() {
        return Err(TraceError::Invalid(format!(
            "window {window} must lie in 1..={}",
            trace.len()
        )));
    }
    let starts = trace.len() - window + 1;
    let e = trace.experts_per_layer as f64;
    Ok((0..trace.num_layers)
        .map(|l| {
            let total: usize = (0..starts)
                .map(|s| {
                    let union: BTreeSet<usize> = trace.tokens[s..s + window]
                        .iter()
                        .flat_map(|tok| tok.per_layer[l].activated.iter().copied())
                        .collect();
                    union.len()
                })
                .sum();
            total as f64 / (starts as f64 * e)
        })
        .collect())
}

/// Which token pairs the overlap statistic considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapPairing {
    /// Consecutive tokens `(t, t + 1)`.
    #[default]
    Adjacent,
    /// Every pair at distance `1..=w`.
    AllPairsWithin(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapStats {
    /// Fraction of pairs with intersecting routed sets, per layer.
    pub per_layer: Vec<f64>,
    /// Macro average over layers.
    pub mean: f64,
    /// Pairs examined per layer.
    pub pairs: usize,
}

pub fn overlap_percentage(
    trace: &ActivationTrace,
    pairing: OverlapPairing,
) -> Result<OverlapStats, TraceError> {
    if trace.len() < 2 {
        return Err(TraceError::Invalid(
            "overlap needs at least two tokens".into(),
        ));
    }
    let reach = match pairing {
        OverlapPairing::Adjacent => 1,
        OverlapPairing::AllPairsWithin(w) if w >= 1 => w,
        OverlapPairing::AllPairsWithin(_) => {
            return Err(TraceError::Invalid("pair window must be at least 1".into()))
        }
    };
    let n = trace.len();
    let pairs: usize = (1..=reach.min(n - 1)).map(|d| n - d).sum();
    let per_layer: Vec<f64> = (0..trace.num_layers)
        .map(|l| {
            let mut hits = 0usize;
            for d in 1..=reach.min(n - 1) {
                for a in 0..n - d {
                    let x = &trace.tokens[a].per_layer[l].activated;
                    let y = &trace.tokens[a + d].per_layer[l].activated;
                    if x.iter().any(|i| y.contains(i)) {
                        hits += 1;
                    }
                }
            }
            hits as f64 / pairs as f64
        })
        .collect();
    let mean = per_layer.iter().sum::<f64>() / per_layer.len() as f64;
    Ok(OverlapStats {
        per_layer,
        mean,
        pairs,
    })
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn activation_entropy(probabilities: &[f64]) -> Result<f64, TraceError> {
    let sum: f64 = probabilities.iter().sum();
    if probabilities.is_empty()
        || (sum - 1.0).abs() > 1e-6
        || probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0))
    {
        return Err(TraceError::Invalid(format!(
            "not a probability vector (sum {sum})"
        )));
    }
    Ok(probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum::<f64>()
        .max(0.0))
}

/// Mean gating-score entropy per layer.
pub fn mean_entropy(trace: &ActivationTrace) -> Result<Vec<f64>, TraceError> {
    (0..trace.num_layers)
        .map(|l| {
            let mut total = 0.0;
            for tok in &trace.tokens {
                total += activation_entropy(&tok.per_layer[l].gating_scores)?;
            }
            Ok(total / trace.len() as f64)
        })
        .collect()
}

const HEADER_TAG: &str = "#moe-trace";

pub fn trace_to_string(trace: &ActivationTrace) -> Result<String, TraceError> {
    if trace.model_ref.is_empty() || trace.model_ref.contains(char::is_whitespace) {
        return Err(TraceError::Invalid(format!(
            "model name {:?} must be non-empty without whitespace",
            trace.model_ref
        )));
    }
    let mut out = format!(
        "{HEADER_TAG} model={} layers={} experts={} k={} shared={}",
        trace.model_ref, trace.num_layers, trace.experts_per_layer, trace.topk, trace.shared_experts
    );
    if let Some(seed) = trace.seed {
        let _ = write!(out, " seed={seed}");
    }
    out.push('\n');
    for tok in &trace.tokens {
        for (l, act) in tok.per_layer.iter().enumerate() {
            let _ = write!(out, "{},{}", tok.token_index, l);
            for s in &act.gating_scores {
                let _ = write!(out, ",{s}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn save_trace(trace: &ActivationTrace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    std::fs::write(path, trace_to_string(trace)?).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<ActivationTrace, TraceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace(&text)
}

pub fn parse_trace(text: &str) -> Result<ActivationTrace, TraceError> {
    let err = |line: usize, message: String| TraceError::Parse { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (hline, header) = lines
        .by_ref()
        .find(|(_, l)| !l.is_empty())
        .ok_or_else(|| err(1, "empty trace file".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(HEADER_TAG) {
        return Err(err(hline, format!("expected header starting with {HEADER_TAG}")));
    }
    let (mut model, mut layers, mut experts, mut k, mut shared, mut seed) =
        (None, None, None, None, 0usize, None);
    for f in fields {
        let (key, value) = f
            .split_once('=')
            .ok_or_else(|| err(hline, format!("malformed header field {f:?}")))?;
        let num = || {
            value
                .parse::<u64>()
                .map_err(|_| err(hline, format!("header field {key} is not an integer")))
        };
        match key {
            "model" => model = Some(value.to_string()),
            "layers" => layers = Some(num()? as usize),
            "experts" => experts = Some(num()? as usize),
            "k" => k = Some(num()? as usize),
            "shared" => shared = num()? as usize,
            "seed" => seed = Some(num()?),
            _ => return Err(err(hline, format!("unknown header field {key:?}"))),
        }
    }
    let missing = |name: &str| err(hline, format!("header lacks {name}="));
    let model = model.ok_or_else(|| missing("model"))?;
    let layers = layers.ok_or_else(|| missing("layers"))?;
    let experts = experts.ok_or_else(|| missing("experts"))?;
    let k = k.ok_or_else(|| missing("k"))?;
    if layers == 0 || k == 0 || shared + k > experts {
        return Err(err(hline, "inconsistent header dimensions".into()));
    }

    let mut tokens: Vec<TokenRecord> = Vec::new();
    let mut last_line = hline;
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        last_line = ln;
        let mut parts = line.split(',');
        let mut index = |what: &str| -> Result<usize, TraceError> {
            parts
                .next()
                .and_then(|p| p.trim().parse().ok())
                .ok_or_else(|| err(ln, format!("missing or malformed {what} index")))
        };
        let token = index("token")?;
        let layer = index("layer")?;
        let scores: Vec<f64> = parts
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(ln, "malformed gating score".into()))?;
        if scores.len() != experts {
            return Err(err(
                ln,
                format!("expected {experts} scores, found {}", scores.len()),
            ));
        }
        let sum: f64 = scores.iter().sum();
        if scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(err(ln, "gating scores are not a probability vector".into()));
        }
        let expected_layer = match tokens.last() {
            Some(t) if t.per_layer.len() < layers => {
                if token != t.token_index {
                    return Err(err(
                        ln,
                        format!(
                            "token {} has {} layers, expected {layers}",
                            t.token_index,
                            t.per_layer.len()
                        ),
                    ));
                }
                t.per_layer.len()
            }
            _ => {
                if token != tokens.len() {
                    return Err(err(
                        ln,
                        format!("expected token {}, found {token}", tokens.len()),
                    ));
                }
                tokens.push(TokenRecord {
                    token_index: token,
                    per_layer: Vec::with_capacity(layers),
                });
                0
            }
        };
        if layer != expected_layer {
            return Err(err(ln, format!("expected layer {expected_layer}, found {layer}")));
        }
        tokens
            .last_mut()
            .expect("token pushed above")
            .per_layer
            .push(LayerActivation::from_scores(scores, k, shared));
    }
    match tokens.last() {
        None => return Err(err(last_line, "trace has no token lines".into())),
        Some(t) if t.per_layer.len() != layers => {
            return Err(err(
                last_line,
                format!(
                    "token {} has {} layers, expected {layers}",
                    t.token_index,
                    t.per_layer.len()
                ),
            ))
        }
        _ => {}
    }
    Ok(ActivationTrace {
        model_ref: model,
        num_layers: layers,
        experts_per_layer: experts,
        topk: k,
        shared_experts: shared,
        tokens,
        seed,
    })
}
