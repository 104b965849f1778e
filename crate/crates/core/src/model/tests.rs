use super::*;
use crate::autodiff::{max_relative_error, ParamId, Parameterized, Tape, Tensor};
use crate::corpus::TokenWindow;
use crate::rng::{self, Stream};
use rand::Rng;

fn config(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        emb_dim: 4,
        layers: vec![5, 4],
        tied: true,
    }
}

fn window(vocab: u32, batch: usize, steps: usize, seed: u64) -> TokenWindow {
    let mut r = rng::stream(seed, Stream::Scratch);
    let ids: Vec<u32> = (0..batch * (steps + 1)).map(|_| r.random_range(0..vocab)).collect();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for b in 0..batch {
        let row = &ids[b * (steps + 1)..(b + 1) * (steps + 1)];
        inputs.extend_from_slice(&row[..steps]);
        targets.extend_from_slice(&row[1..]);
    }
    TokenWindow::new(inputs, targets, batch, steps).unwrap()
}

fn zero_all(p: &mut Parameters) {
    for t in p.tensors_mut() {
        t.fill(0.0);
    }
}

#[test]
fn dropout_off_train_matches_eval() {
    let p = Parameters::init(&config(9), false, 1).unwrap();
    let w = window(9, 2, 4, 1);
    let state = LstmState::zeros(&p.model, 2);
    let spec = DropoutSpec::default();
    let masks = DropoutMasks::sample(&spec, &p.model.config(), &w, 3);

    let mut t1 = Tape::new();
    let a = forward_window(&mut t1, &p, &w, Some(&masks), &state).unwrap();
    let mut t2 = Tape::new();
    let b = forward_window(&mut t2, &p, &w, None, &state).unwrap();
    assert!(t1.value(a.logits).bit_eq(t2.value(b.logits)));
}

#[test]
fn zero_weights_give_bias_logits() {
    let mut p = Parameters::init(&config(6), false, 2).unwrap();
    zero_all(&mut p);
    let bias = Tensor::from_rows(&[[0.5, -1.0, 2.0, 0.0, 0.25, 3.0]]);
    p.model.decoder_bias = bias.clone();
    let w = window(6, 2, 3, 2);
    let mut tape = Tape::new();
    let trace = forward_window(&mut tape, &p, &w, None, &LstmState::zeros(&p.model, 2)).unwrap();
    let logits = tape.value(trace.logits);
    for r in 0..logits.rows() {
        assert_eq!(logits.row(r), bias.data());
    }
}

#[test]
fn probabilities_are_normalized() {
    let p = Parameters::init(&config(11), true, 4).unwrap();
    let w = window(11, 3, 5, 4);
    let mut tape = Tape::new();
    let trace = forward_window(&mut tape, &p, &w, None, &LstmState::zeros(&p.model, 3)).unwrap();
    let probs = tape.value(trace.probs);
    for r in 0..probs.rows() {
        let s: f64 = probs.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
    assert_eq!(trace.state.h[1].shape(), &[3, 4]);
}

#[test]
fn vocab_mismatch_rejected() {
    let p = Parameters::init(&config(5), false, 0).unwrap();
    let w = TokenWindow::new(vec![0, 7], vec![1, 2], 1, 2).unwrap();
    let mut tape = Tape::new();
    let err = forward_window(&mut tape, &p, &w, None, &LstmState::zeros(&p.model, 1)).unwrap_err();
    assert!(matches!(err, crate::Error::VocabMismatch { .. }));
}

#[test]
fn soft_lookup_of_one_hot_selects_row() {
    let p = Parameters::init(&config(7), true, 5).unwrap();
    let mut onehot = Tensor::zeros(7, 7);
    for i in 0..7 {
        onehot.set(i, i, 1.0);
    }
    let v = crate::autodiff::matmul(&onehot, &p.model.embedding).unwrap();
    assert!(v.bit_eq(&p.model.embedding));

    let via_probs = pdr_decode_values(&onehot, &p.model, p.head.as_ref()).unwrap();
    let direct = apply_head(&p.model.embedding, &p.model, p.head.as_ref().unwrap()).unwrap();
    assert!(via_probs.max_abs_diff(&direct) < 1e-12);
}

#[test]
fn zero_head_gives_zero_logits() {
    let mut p = Parameters::init(&config(6), true, 6).unwrap();
    let head = p.head.as_mut().unwrap();
    head.w_f.fill(0.0);
    let probs = Tensor::filled(3, 6, 1.0 / 6.0);
    let logits = pdr_decode_values(&probs, &p.model, p.head.as_ref()).unwrap();
    assert!(logits.data().iter().all(|&v| v == 0.0));
    let dist = pdr_distribution(&probs, &p.model, p.head.as_ref()).unwrap();
    for r in 0..3 {
        assert!((dist.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn pdr_needs_head() {
    let p = Parameters::init(&config(6), false, 6).unwrap();
    let probs = Tensor::filled(1, 6, 1.0 / 6.0);
    assert!(matches!(
        pdr_decode_values(&probs, &p.model, None),
        Err(crate::Error::HeadAbsent)
    ));
    let w = window(6, 1, 2, 0);
    let mut tape = Tape::new();
    let mut trace = forward_window(&mut tape, &p, &w, None, &LstmState::zeros(&p.model, 1)).unwrap();
    assert!(matches!(
        pdr_decode(&mut tape, &mut trace),
        Err(crate::Error::HeadAbsent)
    ));
}

#[test]
fn taped_and_direct_pdr_agree() {
    let p = Parameters::init(&config(8), true, 7).unwrap();
    let w = window(8, 2, 3, 7);
    let mut tape = Tape::new();
    let mut trace = forward_window(&mut tape, &p, &w, None, &LstmState::zeros(&p.model, 2)).unwrap();
    let logits = pdr_decode(&mut tape, &mut trace).unwrap();
    let direct = pdr_decode_values(tape.value(trace.probs), &p.model, p.head.as_ref()).unwrap();
    assert!(tape.value(logits).max_abs_diff(&direct) < 1e-12);
}

#[test]
fn lambda_zero_total_is_ce_plus_activation_terms() {
    let p = Parameters::init(&config(8), true, 8).unwrap();
    let w = window(8, 2, 4, 8);
    let reg = RegularizationSpec {
        lambda_pdr: 0.0,
        alpha: 2.0,
        beta: 1.0,
        weight_decay: 0.0,
    };
    let loss = window_loss(&p, &w, None, &LstmState::zeros(&p.model, 2), &reg).unwrap();
    assert!(loss.pdr > 0.0);
    assert_eq!(loss.total, loss.ce + reg.alpha * loss.ar + reg.beta * loss.tar);
}

#[test]
fn zero_outputs_have_no_activation_penalty() {
    let mut p = Parameters::init(&config(8), true, 9).unwrap();
    zero_all(&mut p);
    let w = window(8, 2, 4, 9);
    let loss = window_loss(
        &p,
        &w,
        None,
        &LstmState::zeros(&p.model, 2),
        &RegularizationSpec::default(),
    )
    .unwrap();
    assert_eq!(loss.ar, 0.0);
    assert_eq!(loss.tar, 0.0);
}

#[test]
fn pdr_invariant_under_batch_permutation() {
    let p = Parameters::init(&config(10), true, 10).unwrap();
    let w = window(10, 3, 4, 10);
    let perm = [2, 0, 1];
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for &b in &perm {
        inputs.extend_from_slice(&w.inputs[b * w.steps..(b + 1) * w.steps]);
        targets.extend_from_slice(&w.targets[b * w.steps..(b + 1) * w.steps]);
    }
    let permuted = TokenWindow::new(inputs, targets, 3, w.steps).unwrap();
    let reg = RegularizationSpec::default();
    let a = window_loss(&p, &w, None, &LstmState::zeros(&p.model, 3), &reg).unwrap();
    let b = window_loss(&p, &permuted, None, &LstmState::zeros(&p.model, 3), &reg).unwrap();
    assert!((a.pdr - b.pdr).abs() < 1e-12);
    assert!((a.ce - b.ce).abs() < 1e-12);
}

#[test]
fn tied_gradient_is_sum_of_untied_copies() {
    let tied = Parameters::init(&config(9), true, 12).unwrap();
    let mut untied = tied.clone();
    untied.model.decoder = Some(tied.model.embedding.clone());
    let w = window(9, 2, 4, 12);
    let reg = RegularizationSpec {
        lambda_pdr: 0.5,
        ..Default::default()
    };
    let state = LstmState::zeros(&tied.model, 2);
    let gt = train_window(&tied, &w, None, &state, &reg).unwrap().grads;
    let gu = train_window(&untied, &w, None, &state, &reg).unwrap().grads;

    let decoder_id = ParamId(untied.model_param_len() - 1);
    let mut summed = gu.get(ParamId(0)).unwrap().clone();
    summed.axpy(1.0, gu.get(decoder_id).unwrap());
    let tied_e = gt.get(ParamId(0)).unwrap();
    assert!(summed.max_abs_diff(tied_e) <= 1e-15 * tied_e.data().iter().map(|v| v.abs()).fold(1.0, f64::max));

    // Perturbing E moves both the input and the output path.
    let mut bumped = tied.clone();
    bumped.model.embedding.data_mut()[0] += 1e-3;
    let mut t1 = Tape::new();
    let a = forward_window(&mut t1, &tied, &w, None, &state).unwrap();
    let mut t2 = Tape::new();
    let b = forward_window(&mut t2, &bumped, &w, None, &state).unwrap();
    assert!(t1.value(a.logits).max_abs_diff(t2.value(b.logits)) > 0.0);
}

#[test]
fn gradients_match_finite_differences_with_dropout() {
    let mut p = Parameters::init(&config(7), true, 13).unwrap();
    let w = window(7, 2, 3, 13);
    let spec = DropoutSpec {
        p_word: 0.2,
        p_embed: 0.2,
        p_layer: 0.3,
        p_out: 0.3,
        p_wdrop: 0.3,
    };
    let masks = DropoutMasks::sample(&spec, &p.model.config(), &w, 99);
    let reg = RegularizationSpec {
        lambda_pdr: 0.1,
        alpha: 1.0,
        beta: 1.0,
        weight_decay: 0.0,
    };
    let mut r = rng::stream(13, Stream::Scratch);
    let state = LstmState {
        h: vec![
            Tensor::from_matrix(2, 5, (0..10).map(|_| r.random_range(-0.5..0.5)).collect()).unwrap(),
            Tensor::from_matrix(2, 4, (0..8).map(|_| r.random_range(-0.5..0.5)).collect()).unwrap(),
        ],
        c: vec![Tensor::zeros(2, 5), Tensor::filled(2, 4, 0.1)],
    };
    let analytic = train_window(&p, &w, Some(&masks), &state, &reg).unwrap().grads;
    let numeric = crate::autodiff::finite_difference_gradients(
        |p: &Parameters| Ok(window_loss(p, &w, Some(&masks), &state, &reg)?.total),
        &mut p,
        1e-3,
    )
    .unwrap();
    let (err, at) = max_relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "max relative error {err} at {at:?}");
}
