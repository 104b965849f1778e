use serde::{Deserialize, Serialize};

use super::forward::ForwardTrace;
use crate::autodiff::{Tape, Var};
use crate::corpus::TokenWindow;
use crate::error::{Error, Result};

/// Default PDR weight.
pub const DEFAULT_LAMBDA_PDR: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSpec {
    pub lambda_pdr: f64,
    /// Activation regularization weight.
    pub alpha: f64,
    /// Temporal activation regularization weight.
    pub beta: f64,
    /// Applied by the optimizer, not by [`compute_loss`].
    pub weight_decay: f64,
}

impl Default for RegularizationSpec {
    fn default() -> Self {
        RegularizationSpec {
            lambda_pdr: DEFAULT_LAMBDA_PDR,
            alpha: 0.0,
            beta: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl RegularizationSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_pdr", self.lambda_pdr),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("weight_decay", self.weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-window loss terms. `total = ce + λ·pdr + α·ar + β·tar`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub pdr: f64,
    pub ar: f64,
    pub tar: f64,
    pub total: f64,
}

/// Records the training objective on the tape and returns its terms along
/// with the scalar root.
///
/// Both cross-entropies average over the same `batch·steps` positions. The
/// PDR term is included only when [`pdr_decode`](super::pdr_decode) has run;
/// its targets are the window inputs `x_t`. AR uses the dropped final
/// outputs and TAR the raw ones.
pub fn compute_loss(
    tape: &mut Tape,
    trace: &ForwardTrace,
    window: &TokenWindow,
    reg: &RegularizationSpec,
) -> Result<(LossBreakdown, Var)> {
    if window.batch != trace.batch || window.steps != trace.steps {
        return Err(Error::ShapeMismatch {
            op: "compute_loss",
            left: vec![trace.batch, trace.steps],
            right: vec![window.batch, window.steps],
        });
    }
    let ce = tape.cross_entropy_from_logits(trace.logits, &window.targets_time_major())?;
    let mut total = ce;
    let mut pdr_value = 0.0;
    if let Some(pdr_logits) = trace.pdr_logits {
        let pdr = tape.cross_entropy_from_logits(pdr_logits, &window.inputs_time_major())?;
        pdr_value = tape.value(pdr).item();
        let weighted = tape.scale(pdr, reg.lambda_pdr);
        total = tape.add(total, weighted)?;
    }

    let sq = tape.hadamard(trace.dropped_output, trace.dropped_output)?;
    let ar = tape.mean(sq);
    let weighted = tape.scale(ar, reg.alpha);
    total = tape.add(total, weighted)?;

    let tar_value = if trace.steps > 1 {
        let b = trace.batch;
        let rows = trace.steps * b;
        let later = tape.slice_rows(trace.raw_output, b, rows)?;
        let earlier = tape.slice_rows(trace.raw_output, 0, rows - b)?;
        let neg = tape.scale(earlier, -1.0);
        let diff = tape.add(later, neg)?;
        let sq = tape.hadamard(diff, diff)?;
        let tar = tape.mean(sq);
        let weighted = tape.scale(tar, reg.beta);
        total = tape.add(total, weighted)?;
        tape.value(tar).item()
    } else {
        0.0
    };

    let breakdown = LossBreakdown {
        ce: tape.value(ce).item(),
        pdr: pdr_value,
        ar: tape.value(ar).item(),
        tar: tar_value,
        total: tape.value(total).item(),
    };
    Ok((breakdown, total))
}
