use std::path::Path;

use rand::Rng as _;
use serde::Serialize;

use super::config::RunConfig;
use super::metrics::RunSink;
use super::train::{train, Dataset};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Sampling interval for one config key. Integer bounds give integer
/// draws; anything else is sampled as `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Range {
    pub key: String,
    pub lo: f64,
    pub hi: f64,
    pub integer: bool,
}

/// Parses `key = lo, hi` lines; `#` starts a comment line.
pub fn parse_ranges(text: &str) -> Result<Vec<Range>> {
    let mut out: Vec<Range> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Config(format!("ranges line {}: expected `key = lo, hi`", n + 1));
        let (key, bounds) = line.split_once('=').ok_or_else(bad)?;
        let (lo, hi) = bounds.split_once(',').ok_or_else(bad)?;
        let (lo, hi) = (lo.trim(), hi.trim());
        let integer = lo.parse::<i64>().is_ok() && hi.parse::<i64>().is_ok();
        let range = Range {
            key: key.trim().to_string(),
            lo: lo.parse().map_err(|_| bad())?,
            hi: hi.parse().map_err(|_| bad())?,
            integer,
        };
        if !(range.lo.is_finite() && range.hi.is_finite() && range.lo <= range.hi) {
            return Err(Error::Config(format!("ranges line {}: need finite lo <= hi", n + 1)));
        }
        if out.iter().any(|r| r.key == range.key) {
            return Err(Error::Config(format!(
                "ranges line {}: duplicate key {:?}",
                n + 1,
                range.key
            )));
        }
        RunConfig::default().get(&range.key)?;
        out.push(range);
    }
    Ok(out)
}

pub fn load_ranges(path: &Path) -> Result<Vec<Range>> {
    parse_ranges(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Assigned `(key, value)` pairs and the resulting configuration.
pub type Sample = (Vec<(String, String)>, RunConfig);

/// Draws `n` configurations from the sweep stream of `base.seed`. The
/// training seed itself is left at `base.seed`.
pub fn sample_configs(base: &RunConfig, ranges: &[Range], n: usize) -> Result<Vec<Sample>> {
    let mut rng = rng::stream(base.seed, Stream::Sweep);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut config = base.clone();
        let mut assigned = Vec::new();
        for r in ranges {
            let value = if r.integer {
                rng.random_range(r.lo as i64..=r.hi as i64).to_string()
            } else if r.lo == r.hi {
                r.lo.to_string()
            } else {
                rng.random_range(r.lo..r.hi).to_string()
            };
            config.set(&r.key, &value)?;
            assigned.push((r.key.clone(), value));
        }
        config.out_dir = base.out_dir.join(format!("sample-{i:03}"));
        out.push((assigned, config));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub assigned: Vec<(String, String)>,
    /// Best validation perplexity of the configured run.
    pub valid_ppl: Option<f64>,
    /// Same sample with the PDR head disabled, in paired mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paired_valid_ppl: Option<f64>,
    /// Failures are recorded here and the sweep moves on.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

/// Runs every sampled configuration; with `paired` each sample is also
/// trained with `pdr = false`.
pub fn sweep<F>(
    base: &RunConfig,
    ranges: &[Range],
    n: usize,
    paired: bool,
    data: &Dataset,
    mut sink_for: F,
) -> Result<Vec<SweepRow>>
where
    F: FnMut(&str, &RunConfig) -> Result<Box<dyn RunSink>>,
{
    base.validate()?;
    let samples = sample_configs(base, ranges, n)?;
    let mut rows = Vec::with_capacity(n);
    for (index, (assigned, config)) in samples.into_iter().enumerate() {
        let mut errors = Vec::new();
        let mut run = |label: String, config: &RunConfig| -> Option<f64> {
            let result = config
                .validate()
                .and_then(|_| sink_for(&label, config))
                .and_then(|mut sink| train(config, data, sink.as_mut()));
            match result {
                Ok(outcome) => Some(outcome.best_valid.ppl),
                Err(e) => {
                    log::warn!("{label} failed: {e}");
                    errors.push(format!("{label}: {e}"));
                    None
                }
            }
        };
        let valid_ppl = run(format!("sample-{index:03}"), &config);
        let paired_valid_ppl = if paired {
            let mut off = config.clone();
            off.pdr = false;
            off.out_dir = config.out_dir.join("no_pdr");
            run(format!("sample-{index:03}/no_pdr"), &off)
        } else {
            None
        };
        rows.push(SweepRow {
            index,
            assigned,
            valid_ppl,
            paired_valid_ppl,
            errors,
        });
    }
    Ok(rows)
}
