//! Perplexity and bits-per-character evaluation, continuous-cache scoring,
//! and per-token diagnostics.
//!
//! All log-likelihoods are natural log; BPC divides by `ln 2`.

mod cache;
mod histogram;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

pub use cache::{cache_distribution, cache_evaluate, CacheConfig};
pub use histogram::{
    context_nll_histogram, context_nlls, prediction_entropies, prediction_entropy_histogram, Histogram, HistogramSpec,
};

use crate::autodiff::{row_nll, Tape};
use crate::corpus::{BatchStreams, TokenWindow, WindowPolicy};
use crate::error::{Error, Result};
use crate::model::{forward_window, ForwardTrace, LstmState, Parameters};
use crate::rng::{self, Stream};

/// Aggregate metrics; per-token streams are optional extras.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tokens: usize,
    /// Mean negative log-likelihood (nats).
    pub nll: f64,
    pub ppl: f64,
    pub bpc: f64,
    #[serde(skip)]
    pub token_nll: Option<Vec<f64>>,
    /// Model probability of each target, in the same order as `token_nll`.
    #[serde(skip)]
    pub target_probs: Option<Vec<f64>>,
}

impl EvalReport {
    pub fn from_nll_sum(sum: f64, tokens: usize) -> Self {
        let nll = sum / tokens as f64;
        EvalReport {
            tokens,
            nll,
            ppl: nll.exp(),
            bpc: nll / LN_2,
            token_nll: None,
            target_probs: None,
        }
    }

    /// `{"tokens":…,"nll":…,"ppl":…,"bpc":…}`
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numbers serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub batch: usize,
    /// Fixed window length.
    pub bptt: usize,
    /// Keep per-token NLLs and target probabilities.
    pub per_token: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            batch: 1,
            bptt: 35,
            per_token: false,
        }
    }
}

/// Runs the model in evaluation mode over `ids`, carrying state across
/// windows, and hands each window's trace to `visit`.
pub(crate) fn for_each_window<F>(params: &Parameters, ids: &[u32], opts: &EvalOptions, mut visit: F) -> Result<()>
where
    F: FnMut(&mut Tape, &ForwardTrace, &TokenWindow) -> Result<()>,
{
    if ids.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut streams = BatchStreams::batchify(ids, opts.batch)?;
    let mut state = LstmState::zeros(&params.model, opts.batch);
    // fixed policy draws nothing
    let mut unused = rng::stream(0, Stream::Scratch);
    while let Some(window) = streams.next_window(WindowPolicy::Fixed(opts.bptt), &mut unused) {
        let mut tape = Tape::new();
        let trace = forward_window(&mut tape, params, &window, None, &state)?;
        visit(&mut tape, &trace, &window)?;
        state = trace.state;
    }
    Ok(())
}

/// Exact mean NLL of every target in `ids`, computed from the logits by
/// log-sum-exp.
pub fn evaluate(params: &Parameters, ids: &[u32], opts: &EvalOptions) -> Result<EvalReport> {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut token_nll = opts.per_token.then(Vec::new);
    let mut target_probs = opts.per_token.then(Vec::new);
    for_each_window(params, ids, opts, |tape, trace, window| {
        let targets = window.targets_time_major();
        let nll = row_nll(tape.value(trace.logits), &targets)?;
        // token-by-token so cache scoring can reproduce it bitwise
        for v in &nll {
            sum += v;
        }
        count += nll.len();
        if let (Some(tn), Some(tp)) = (token_nll.as_mut(), target_probs.as_mut()) {
            let probs = tape.value(trace.probs);
            tp.extend(targets.iter().enumerate().map(|(r, &t)| probs.get(r, t)));
            tn.extend(nll);
        }
        Ok(())
    })?;
    let mut report = EvalReport::from_nll_sum(sum, count);
    report.token_nll = token_nll;
    report.target_probs = target_probs;
    Ok(report)
}

#[cfg(test)]
mod tests;
