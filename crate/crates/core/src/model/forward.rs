use super::dropout::{tile_over_time, DropoutMasks};
use super::params::{ModelParams, Parameters, PdrHead};
use crate::autodiff::{matmul, softmax_rows, ParamId, Parameterized, Tape, Tensor, Var};
use crate::corpus::TokenWindow;
use crate::error::{Error, Result};

/// Carried `(h, c)` per layer, each `batch×hidden`. Always detached.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<Tensor>,
    pub c: Vec<Tensor>,
}

impl LstmState {
    pub fn zeros(params: &ModelParams, batch: usize) -> Self {
        let h: Vec<Tensor> = params.layers.iter().map(|l| Tensor::zeros(batch, l.hidden())).collect();
        LstmState { c: h.clone(), h }
    }

    pub fn batch(&self) -> usize {
        self.h.first().map_or(0, Tensor::rows)
    }
}

/// Tape handles for every parameter, registered once per window.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub embedding: Var,
    pub decoder_bias: Var,
    pub layers: Vec<[Var; 3]>,
    /// Transposed decoder weight, `d×|W|`, shared by both decoders.
    pub decoder_t: Var,
    pub head: Option<[Var; 3]>,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &Parameters) -> Self {
        let tensors = params.tensors();
        let mut next = 0;
        let mut reg = |tape: &mut Tape| {
            let v = tape.param(ParamId(next), tensors[next].clone());
            next += 1;
            v
        };
        let embedding = reg(tape);
        let decoder_bias = reg(tape);
        let layers = params
            .model
            .layers
            .iter()
            .map(|_| [reg(tape), reg(tape), reg(tape)])
            .collect();
        let decoder = if params.model.decoder.is_some() {
            reg(tape)
        } else {
            embedding
        };
        let head = params.head.as_ref().map(|_| [reg(tape), reg(tape), reg(tape)]);
        let decoder_t = tape.transpose(decoder);
        ParamVars {
            embedding,
            decoder_bias,
            layers,
            decoder_t,
            head,
        }
    }
}

/// Everything one window's forward pass leaves on the tape. Matrices with
/// `steps·batch` rows are time-major: row `t·batch + b`.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub vars: ParamVars,
    pub logits: Var,
    /// Next-token distributions `w_{t+1}`.
    pub probs: Var,
    /// Final-layer outputs before output dropout.
    pub raw_output: Var,
    /// Final-layer outputs after output dropout.
    pub dropped_output: Var,
    /// Past-decode logits, once [`pdr_decode`] has run.
    pub pdr_logits: Option<Var>,
    /// Final state, detached from the tape.
    pub state: LstmState,
    pub batch: usize,
    pub steps: usize,
}

impl ForwardTrace {
    pub fn row(&self, b: usize, t: usize) -> usize {
        t * self.batch + b
    }
}

/// Runs the embedding, LSTM stack and tied decoder over one window.
///
/// `masks = None` is evaluation mode: no dropout of any kind.
pub fn forward_window(
    tape: &mut Tape,
    params: &Parameters,
    window: &TokenWindow,
    masks: Option<&DropoutMasks>,
    state: &LstmState,
) -> Result<ForwardTrace> {
    let model = &params.model;
    let (batch, steps) = (window.batch, window.steps);
    let vocab = model.vocab_size();
    if window.max_id() as usize >= vocab {
        return Err(Error::VocabMismatch {
            model: vocab,
            data: window.max_id() as usize + 1,
        });
    }
    if state.h.len() != model.layers.len()
        || state.batch() != batch
        || state.h.iter().zip(&model.layers).any(|(h, l)| h.cols() != l.hidden())
    {
        return Err(Error::Model("carried state does not match the model and batch".into()));
    }

    let vars = ParamVars::register(tape, params);
    let ids = window.inputs_time_major();
    let mut x = tape.gather_rows(vars.embedding, &ids)?;
    if let Some(m) = masks.and_then(|m| m.input.as_ref()) {
        x = tape.mask_apply(x, m.clone())?;
    }

    let mut new_state = LstmState {
        h: Vec::with_capacity(model.layers.len()),
        c: Vec::with_capacity(model.layers.len()),
    };
    let last = model.layers.len() - 1;
    let mut raw_output = x;
    for (l, layer) in model.layers.iter().enumerate() {
        let hidden = layer.hidden();
        let [w_ih, w_hh, bias] = vars.layers[l];
        let w_hh = match masks.and_then(|m| m.weight[l].as_ref()) {
            Some(m) => tape.mask_apply(w_hh, m.clone())?,
            None => w_hh,
        };
        let projected = tape.matmul(x, w_ih)?;
        let mut h = tape.constant(state.h[l].clone());
        let mut c = tape.constant(state.c[l].clone());
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = tape.slice_rows(projected, t * batch, (t + 1) * batch)?;
            let rec = tape.matmul(h, w_hh)?;
            let gates = tape.add(xt, rec)?;
            let gates = tape.add_bias(gates, bias)?;
            let i = tape.slice_cols(gates, 0, hidden)?;
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(gates, hidden, 2 * hidden)?;
            let f = tape.sigmoid(f);
            let g = tape.slice_cols(gates, 2 * hidden, 3 * hidden)?;
            let g = tape.tanh(g);
            let o = tape.slice_cols(gates, 3 * hidden, 4 * hidden)?;
            let o = tape.sigmoid(o);
            let keep = tape.hadamard(f, c)?;
            let write = tape.hadamard(i, g)?;
            c = tape.add(keep, write)?;
            let squashed = tape.tanh(c);
            h = tape.hadamard(o, squashed)?;
            outputs.push(h);
        }
        new_state.h.push(tape.value(h).clone());
        new_state.c.push(tape.value(c).clone());
        let y = tape.concat_rows(&outputs)?;
        if l < last {
            x = match masks.and_then(|m| m.layer[l].as_ref()) {
                Some(m) => tape.mask_apply(y, tile_over_time(m, steps))?,
                None => y,
            };
        } else {
            raw_output = y;
        }
    }

    let dropped_output = match masks.and_then(|m| m.out.as_ref()) {
        Some(m) => tape.mask_apply(raw_output, tile_over_time(m, steps))?,
        None => raw_output,
    };
    let projected = tape.matmul(dropped_output, vars.decoder_t)?;
    let logits = tape.add_bias(projected, vars.decoder_bias)?;
    let probs = tape.softmax_rows(logits)?;

    Ok(ForwardTrace {
        vars,
        logits,
        probs,
        raw_output,
        dropped_output,
        pdr_logits: None,
        state: new_state,
        batch,
        steps,
    })
}

/// Decodes the previous input token from `w_{t+1}`:
/// `v = w_{t+1}·E`, `u = tanh(v·W_f + b_f)`, logits `u·Eᵀ + b′`.
///
/// Gradients flow back through `w_{t+1}` into the main model.
pub fn pdr_decode(tape: &mut Tape, trace: &mut ForwardTrace) -> Result<Var> {
    let [w_f, b_f, b_prime] = trace.vars.head.ok_or(Error::HeadAbsent)?;
    let soft = tape.matmul(trace.probs, trace.vars.embedding)?;
    let pre = tape.matmul(soft, w_f)?;
    let pre = tape.add_bias(pre, b_f)?;
    let u = tape.tanh(pre);
    let projected = tape.matmul(u, trace.vars.decoder_t)?;
    let logits = tape.add_bias(projected, b_prime)?;
    trace.pdr_logits = Some(logits);
    Ok(logits)
}

/// Tape-free past decoding of arbitrary distributions (one per row).
pub fn pdr_decode_values(probs: &Tensor, model: &ModelParams, head: Option<&PdrHead>) -> Result<Tensor> {
    let head = head.ok_or(Error::HeadAbsent)?;
    if probs.cols() != model.vocab_size() {
        return Err(Error::VocabMismatch {
            model: model.vocab_size(),
            data: probs.cols(),
        });
    }
    for r in 0..probs.rows() {
        let s: f64 = probs.row(r).iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Model(format!("row {r} of w_(t+1) sums to {s}, not 1")));
        }
    }
    apply_head(&matmul(probs, &model.embedding)?, model, head)
}

/// The head applied to `d`-dimensional rows directly: `tanh(v·W_f + b_f)·Eᵀ + b′`.
pub fn apply_head(v: &Tensor, model: &ModelParams, head: &PdrHead) -> Result<Tensor> {
    let mut pre = matmul(v, &head.w_f)?;
    for r in 0..pre.rows() {
        for (x, &b) in pre.row_mut(r).iter_mut().zip(head.b_f.data()) {
            *x = (*x + b).tanh();
        }
    }
    let mut logits = matmul(&pre, &model.decoder_weight().transposed())?;
    for r in 0..logits.rows() {
        for (x, &b) in logits.row_mut(r).iter_mut().zip(head.b_prime.data()) {
            *x += b;
        }
    }
    Ok(logits)
}

/// Past-decode distributions `w^r_t`, tape-free.
pub fn pdr_distribution(probs: &Tensor, model: &ModelParams, head: Option<&PdrHead>) -> Result<Tensor> {
    softmax_rows(&pdr_decode_values(probs, model, head)?)
}
