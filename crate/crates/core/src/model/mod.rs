//! The weight-tied LSTM language model, its past-decode head, dropout, and
//! the training objective.

mod dropout;
mod forward;
mod loss;
mod params;

pub use dropout::{tile_over_time, DropoutMasks, DropoutSpec};
pub use forward::{
    apply_head, forward_window, pdr_decode, pdr_decode_values, pdr_distribution, ForwardTrace, LstmState, ParamVars,
};
pub use loss::{compute_loss, LossBreakdown, RegularizationSpec, DEFAULT_LAMBDA_PDR};
pub use params::{LstmLayer, ModelConfig, ModelParams, ParamCounts, Parameters, PdrHead, HEAD_NAMES};

use crate::autodiff::{Gradients, Tape};
use crate::corpus::TokenWindow;
use crate::error::Result;

/// Result of one differentiated training window.
#[derive(Clone, Debug)]
pub struct WindowOutcome {
    pub loss: LossBreakdown,
    pub grads: Gradients,
    pub state: LstmState,
}

/// Forward, loss and backward for one window. The PDR term is computed
/// whenever the head is present.
pub fn train_window(
    params: &Parameters,
    window: &TokenWindow,
    masks: Option<&DropoutMasks>,
    state: &LstmState,
    reg: &RegularizationSpec,
) -> Result<WindowOutcome> {
    let mut tape = Tape::new();
    let mut trace = forward_window(&mut tape, params, window, masks, state)?;
    if params.head.is_some() {
        pdr_decode(&mut tape, &mut trace)?;
    }
    let (loss, root) = compute_loss(&mut tape, &trace, window, reg)?;
    let grads = tape.backward(root)?;
    Ok(WindowOutcome {
        loss,
        grads,
        state: trace.state,
    })
}

/// Loss value only, with the same graph as [`train_window`].
pub fn window_loss(
    params: &Parameters,
    window: &TokenWindow,
    masks: Option<&DropoutMasks>,
    state: &LstmState,
    reg: &RegularizationSpec,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let mut trace = forward_window(&mut tape, params, window, masks, state)?;
    if params.head.is_some() {
        pdr_decode(&mut tape, &mut trace)?;
    }
    Ok(compute_loss(&mut tape, &trace, window, reg)?.0)
}

#[cfg(test)]
mod tests;
