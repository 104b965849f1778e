use serde::{Deserialize, Serialize};

use super::{for_each_window, EvalOptions};
use crate::autodiff::row_nll;
use crate::error::{Error, Result};
use crate::model::{pdr_decode, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
    /// Divide counts by the sample count.
    pub normalize: bool,
}

impl Default for HistogramSpec {
    /// 15 equal bins over `[0, 10]`, normalized.
    fn default() -> Self {
        HistogramSpec {
            bins: 15,
            lo: 0.0,
            hi: 10.0,
            normalize: true,
        }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || self.hi.partial_cmp(&self.lo) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config(format!(
                "histogram needs bins > 0 and hi > lo, got {} bins over [{}, {}]",
                self.bins, self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    /// Bin of `x`; values outside `[lo, hi)` land in the edge bins.
    pub fn bin_of(&self, x: f64) -> usize {
        let i = ((x - self.lo) / self.width()).floor();
        if i < 0.0 {
            0
        } else {
            (i as usize).min(self.bins - 1)
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins)
            .map(|i| self.lo + (i as f64 + 0.5) * self.width())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub spec: HistogramSpec,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_samples(spec: HistogramSpec, samples: &[f64]) -> Result<Self> {
        spec.validate()?;
        let mut counts = vec![0u64; spec.bins];
        for &x in samples {
            counts[spec.bin_of(x)] += 1;
        }
        Ok(Histogram { spec, counts })
    }

    pub fn samples(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.samples().max(1) as f64;
        self.counts
            .iter()
            .map(|&c| if self.spec.normalize { c as f64 / n } else { c as f64 })
            .collect()
    }

    /// Index of the fullest bin (first on ties).
    pub fn modal_bin(&self) -> usize {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }

    /// CSV with header `bin_center,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,value\n");
        for (c, v) in self.spec.centers().iter().zip(self.values()) {
            out.push_str(&format!("{c},{v}\n"));
        }
        out
    }
}

/// Shannon entropy of each predicted next-token distribution, clamped to
/// `[0, ln |W|]` against rounding.
pub fn prediction_entropies(params: &Parameters, ids: &[u32], opts: &EvalOptions) -> Result<Vec<f64>> {
    let max = (params.model.vocab_size() as f64).ln();
    let mut out = Vec::new();
    for_each_window(params, ids, opts, |tape, trace, _| {
        let probs = tape.value(trace.probs);
        for r in 0..probs.rows() {
            let h: f64 = probs.row(r).iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
            out.push(h.clamp(0.0, max));
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn prediction_entropy_histogram(
    params: &Parameters,
    ids: &[u32],
    opts: &EvalOptions,
    spec: HistogramSpec,
) -> Result<Histogram> {
    Histogram::from_samples(spec, &prediction_entropies(params, ids, opts)?)
}

/// NLL of each input token `x_t` under the past-decoded distribution.
pub fn context_nlls(params: &Parameters, ids: &[u32], opts: &EvalOptions) -> Result<Vec<f64>> {
    if params.head.is_none() {
        return Err(Error::HeadAbsent);
    }
    let mut out = Vec::new();
    for_each_window(params, ids, opts, |tape, trace, window| {
        let mut trace = trace.clone();
        let logits = pdr_decode(tape, &mut trace)?;
        out.extend(row_nll(tape.value(logits), &window.inputs_time_major())?);
        Ok(())
    })?;
    Ok(out)
}

pub fn context_nll_histogram(
    params: &Parameters,
    ids: &[u32],
    opts: &EvalOptions,
    spec: HistogramSpec,
) -> Result<Histogram> {
    Histogram::from_samples(spec, &context_nlls(params, ids, opts)?)
}
