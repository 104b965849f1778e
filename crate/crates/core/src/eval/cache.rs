use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{for_each_window, EvalOptions, EvalReport};
use crate::autodiff::{row_nll, softmax_in_place};
use crate::error::{Error, Result};
use crate::model::Parameters;

/// Continuous-cache mixture settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    /// Number of recent `(h_i, x_{i+1})` pairs kept per stream.
    pub size: usize,
    /// Sharpness of the dot-product match.
    pub theta: f64,
    /// Weight of the cache distribution in the mixture.
    pub lambda: f64,
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!(
                "cache theta must be finite and >= 0, got {}",
                self.theta
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "cache lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Mixture `(1-λ)·p_model + λ·p_cache` over the vocabulary, where
/// `p_cache(w) ∝ Σ_i 1[x_i = w]·exp(θ·h·h_i)`. With an empty cache the
/// model distribution is returned unchanged.
pub fn cache_distribution(
    p_model: &[f64],
    hidden: &[f64],
    cache: &VecDeque<(Vec<f64>, u32)>,
    config: &CacheConfig,
) -> Vec<f64> {
    let mut out = p_model.to_vec();
    if cache.is_empty() || config.lambda == 0.0 {
        return out;
    }
    let mut weights: Vec<f64> = cache
        .iter()
        .map(|(h, _)| config.theta * h.iter().zip(hidden).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    softmax_in_place(&mut weights);
    out.iter_mut().for_each(|p| *p *= 1.0 - config.lambda);
    for ((_, tok), w) in cache.iter().zip(weights) {
        out[*tok as usize] += config.lambda * w;
    }
    out
}

/// Evaluation with a per-stream continuous cache over final-layer
/// outputs. Each step is scored before its own pair enters the cache.
///
/// Whenever the cache term is dropped (`λ = 0` or an empty cache) the
/// token's NLL is taken from the logits exactly as in
/// [`evaluate`](super::evaluate).
pub fn cache_evaluate(params: &Parameters, ids: &[u32], opts: &EvalOptions, cache: &CacheConfig) -> Result<EvalReport> {
    cache.validate()?;
    let mut caches: Vec<VecDeque<(Vec<f64>, u32)>> = vec![VecDeque::new(); opts.batch];
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut token_nll = opts.per_token.then(Vec::new);
    for_each_window(params, ids, opts, |tape, trace, window| {
        let targets = window.targets_time_major();
        let base = row_nll(tape.value(trace.logits), &targets)?;
        let probs = tape.value(trace.probs);
        let hidden = tape.value(trace.raw_output);
        for (r, &target) in targets.iter().enumerate() {
            let b = r % trace.batch;
            let nll = if cache.lambda == 0.0 || caches[b].is_empty() {
                base[r]
            } else {
                let mixed = cache_distribution(probs.row(r), hidden.row(r), &caches[b], cache);
                -mixed[target].ln()
            };
            sum += nll;
            count += 1;
            if let Some(tn) = token_nll.as_mut() {
                tn.push(nll);
            }
            if cache.size > 0 {
                caches[b].push_back((hidden.row(r).to_vec(), target as u32));
                if caches[b].len() > cache.size {
                    caches[b].pop_front();
                }
            }
        }
        Ok(())
    })?;
    let mut report = EvalReport::from_nll_sum(sum, count);
    report.token_nll = token_nll;
    Ok(report)
}
