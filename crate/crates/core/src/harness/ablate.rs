use std::fmt::Write as _;

use serde::Serialize;

use super::config::RunConfig;
use super::metrics::RunSink;
use super::train::{train, Dataset};
use crate::error::{Error, Result};
use crate::eval::EvalReport;

/// Names accepted by [`ablation_config`].
pub const ARMS: &[&str] = &[
    "finetune",
    "p_out",
    "p_layer",
    "p_embed",
    "p_word",
    "p_wdrop",
    "alpha/beta",
    "weight_decay",
    "lambda_pdr",
];

/// `base` with the knob named by `arm` disabled. `alpha/beta` zeroes both
/// activation penalties; every other arm touches a single key.
pub fn ablation_config(base: &RunConfig, arm: &str) -> Result<RunConfig> {
    let mut config = base.clone();
    match arm {
        "finetune" => config.finetune = false,
        "p_out" => config.dropout.p_out = 0.0,
        "p_layer" => config.dropout.p_layer = 0.0,
        "p_embed" => config.dropout.p_embed = 0.0,
        "p_word" => config.dropout.p_word = 0.0,
        "p_wdrop" => config.dropout.p_wdrop = 0.0,
        "alpha/beta" => {
            config.reg.alpha = 0.0;
            config.reg.beta = 0.0;
        }
        "weight_decay" => config.reg.weight_decay = 0.0,
        "lambda_pdr" => config.reg.lambda_pdr = 0.0,
        other => return Err(Error::UnknownArm(other.to_string())),
    }
    config.out_dir = base.out_dir.join(arm.replace('/', "_"));
    Ok(config)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    /// `"base"` or the arm name.
    pub arm: String,
    /// Changed keys as `(key, base value, arm value)`, `out_dir` excluded.
    pub changes: Vec<(String, String, String)>,
    pub valid: EvalReport,
    pub test: Option<EvalReport>,
}

/// Trains the base config and then one run per arm, all with the base
/// seed. Every arm name is checked before the first run starts.
pub fn ablate<F>(base: &RunConfig, arms: &[String], data: &Dataset, mut sink_for: F) -> Result<Vec<AblationRow>>
where
    F: FnMut(&str, &RunConfig) -> Result<Box<dyn RunSink>>,
{
    base.validate()?;
    let mut runs = vec![("base".to_string(), base.clone())];
    for arm in arms {
        runs.push((arm.clone(), ablation_config(base, arm)?));
    }
    let mut rows = Vec::new();
    for (arm, config) in runs {
        let mut sink = sink_for(&arm, &config)?;
        let outcome = train(&config, data, sink.as_mut())?;
        let changes = base
            .diff(&config)
            .into_iter()
            .filter(|(k, _, _)| k != "out_dir")
            .collect();
        rows.push(AblationRow {
            arm,
            changes,
            valid: outcome.best_valid,
            test: outcome.test,
        });
    }
    Ok(rows)
}

/// Plain-text table: arm, validation and test ppl/bpc, changed keys.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<14} {:>12} {:>10} {:>12} {:>10}  {}\n",
        "arm", "valid_ppl", "valid_bpc", "test_ppl", "test_bpc", "changed"
    );
    for row in rows {
        let (tp, tb) = row.test.as_ref().map_or(("-".to_string(), "-".to_string()), |t| {
            (format!("{:.3}", t.ppl), format!("{:.4}", t.bpc))
        });
        let changed: Vec<String> = row.changes.iter().map(|(k, a, b)| format!("{k}: {a} -> {b}")).collect();
        writeln!(
            out,
            "{:<14} {:>12.3} {:>10.4} {:>12} {:>10}  {}",
            row.arm,
            row.valid.ppl,
            row.valid.bpc,
            tp,
            tb,
            changed.join("; ")
        )
        .expect("string write");
    }
    out
}
