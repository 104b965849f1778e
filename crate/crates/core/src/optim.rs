//! Clipped SGD with decoupled weight decay, switching to averaged SGD when
//! validation stops improving (NT-ASGD).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameterized, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sgd,
    Asgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm threshold; `0` disables clipping.
    pub clip: f64,
    /// Non-monotone interval, in validation checks.
    pub nonmono: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 30.0,
            weight_decay: 1.2e-6,
            clip: 0.25,
            nonmono: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub mode: Mode,
    /// Steps taken in the current phase.
    pub step: u64,
    /// Step at which averaging began.
    pub avg_start: Option<u64>,
    /// Number of iterates folded into `averages`.
    pub avg_count: u64,
    /// Running parameter averages; present iff `mode == Asgd`.
    pub averages: Option<Vec<Tensor>>,
    /// Validation metric per check, append-only.
    pub history: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Applied {
        grad_norm: f64,
        clipped: bool,
    },
    /// A gradient entry was non-finite; parameters were left untouched.
    Skipped,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        OptimizerState {
            config,
            mode: Mode::Sgd,
            step: 0,
            avg_start: None,
            avg_count: 0,
            averages: None,
            history: Vec::new(),
        }
    }

    /// Switches to averaging, seeding the averages with the current
    /// parameters so the first averaged step reproduces them.
    pub fn start_averaging<P: Parameterized>(&mut self, params: &P) {
        if self.mode == Mode::Asgd {
            return;
        }
        self.mode = Mode::Asgd;
        self.avg_start = Some(self.step);
        self.avg_count = 0;
        self.averages = Some(params.tensors().into_iter().cloned().collect());
    }

    /// Appends a validation value and applies the non-monotone trigger.
    /// Returns true when this check switched the optimizer to ASGD.
    pub fn record_validation<P: Parameterized>(&mut self, value: f64, params: &P) -> bool {
        self.history.push(value);
        if self.mode == Mode::Sgd && ntasgd_check(&self.history, self.config.nonmono) {
            self.start_averaging(params);
            return true;
        }
        false
    }

    /// Fresh ASGD phase for finetuning: new averages, empty history.
    pub fn restart_asgd<P: Parameterized>(&mut self, params: &P) {
        self.mode = Mode::Sgd;
        self.step = 0;
        self.history.clear();
        self.start_averaging(params);
    }
}

/// True iff `history` holds more than `n` entries and its last value is
/// worse than the best value recorded more than `n` checks ago.
pub fn ntasgd_check(history: &[f64], n: usize) -> bool {
    let len = history.len();
    if len <= n {
        return false;
    }
    let best = history[..len - n].iter().copied().fold(f64::INFINITY, f64::min);
    history[len - 1] > best
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// One SGD step at learning rate `config.lr · lr_scale`:
/// clip to the global-norm threshold, decay non-bias weights by
/// `1 - lr·wd`, descend, then fold the new iterate into the averages.
pub fn clip_and_step<P: Parameterized>(
    params: &mut P,
    mut grads: Vec<Tensor>,
    is_bias: &[bool],
    lr_scale: f64,
    state: &mut OptimizerState,
) -> StepOutcome {
    let mut tensors = params.tensors_mut();
    assert_eq!(tensors.len(), grads.len(), "one gradient per parameter");
    if grads.iter().any(|g| !g.all_finite()) {
        log::warn!("non-finite gradient at step {}; update skipped", state.step);
        return StepOutcome::Skipped;
    }

    let norm = global_norm(&grads);
    let clip = state.config.clip;
    let clipped = clip > 0.0 && norm > clip;
    if clipped {
        let s = clip / norm;
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    let lr = state.config.lr * lr_scale;
    let decay = 1.0 - lr * state.config.weight_decay;
    for ((p, g), &bias) in tensors.iter_mut().zip(&grads).zip(is_bias) {
        if !bias && state.config.weight_decay != 0.0 {
            p.data_mut().iter_mut().for_each(|v| *v *= decay);
        }
        p.axpy(-lr, g);
    }
    state.step += 1;

    if let Some(avgs) = &mut state.averages {
        state.avg_count += 1;
        let k = state.avg_count as f64;
        for (a, p) in avgs.iter_mut().zip(&tensors) {
            for (av, &pv) in a.data_mut().iter_mut().zip(p.data()) {
                *av += (pv - *av) / k;
            }
        }
    }
    StepOutcome::Applied {
        grad_norm: norm,
        clipped,
    }
}

/// Training weights set aside while averages are swapped in.
#[derive(Debug)]
pub struct SavedWeights(Vec<Tensor>);

/// Loads the running averages into `params` for evaluation. Returns the
/// training weights to hand back to [`restore_weights`]; `None` (a logged
/// no-op) in SGD mode.
pub fn swap_in_averages<P: Parameterized>(params: &mut P, state: &OptimizerState) -> Option<SavedWeights> {
    let Some(avgs) = &state.averages else {
        log::info!("swap_in_averages called in SGD mode; nothing to swap");
        return None;
    };
    let mut saved = Vec::with_capacity(avgs.len());
    for (p, a) in params.tensors_mut().into_iter().zip(avgs) {
        saved.push(std::mem::replace(p, a.clone()));
    }
    Some(SavedWeights(saved))
}

pub fn restore_weights<P: Parameterized>(params: &mut P, saved: SavedWeights) {
    for (p, s) in params.tensors_mut().into_iter().zip(saved.0) {
        *p = s;
    }
}
