use std::collections::VecDeque;

use super::*;
use crate::autodiff::Parameterized;
use crate::model::ModelConfig;
use crate::rng::{self, Stream};
use rand::Rng;

fn params(vocab: usize, head: bool, seed: u64) -> Parameters {
    let config = ModelConfig {
        vocab_size: vocab,
        emb_dim: 4,
        layers: vec![6, 4],
        tied: true,
    };
    Parameters::init(&config, head, seed).unwrap()
}

fn ids(vocab: u32, n: usize, seed: u64) -> Vec<u32> {
    let mut r = rng::stream(seed, Stream::Scratch);
    (0..n).map(|_| r.random_range(0..vocab)).collect()
}

#[test]
fn uniform_model_scores_log_vocab() {
    let mut p = params(51, false, 1);
    for t in p.tensors_mut() {
        t.fill(0.0);
    }
    let data = ids(51, 200, 1);
    let report = evaluate(
        &p,
        &data,
        &EvalOptions {
            batch: 2,
            bptt: 7,
            per_token: false,
        },
    )
    .unwrap();
    assert_eq!(report.tokens, 2 * 99);
    assert!((report.ppl - 51.0).abs() / 51.0 < 1e-12);
    assert!((report.bpc - 51f64.log2()).abs() < 1e-12);
}

#[test]
fn window_length_does_not_change_the_score() {
    let p = params(13, false, 2);
    let data = ids(13, 301, 2);
    let short = evaluate(
        &p,
        &data,
        &EvalOptions {
            batch: 3,
            bptt: 4,
            per_token: true,
        },
    )
    .unwrap();
    let long = evaluate(
        &p,
        &data,
        &EvalOptions {
            batch: 3,
            bptt: 1000,
            per_token: true,
        },
    )
    .unwrap();
    assert_eq!(short.tokens, long.tokens);
    assert!((short.nll - long.nll).abs() < 1e-9);
    let probs = short.target_probs.as_ref().unwrap();
    let oracle = -probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64;
    assert!((oracle - short.nll).abs() < 1e-9);
}

#[test]
fn empty_input_rejected() {
    let p = params(5, false, 3);
    assert!(matches!(
        evaluate(&p, &[], &EvalOptions::default()),
        Err(Error::EmptyInput)
    ));
}

#[test]
fn json_report_has_four_fields() {
    let report = EvalReport::from_nll_sum(2.0, 2);
    let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
    assert_eq!(keys.len(), 4);
    assert_eq!(v["tokens"], 2);
}

#[test]
fn cache_with_zero_lambda_is_plain_eval() {
    let p = params(11, false, 4);
    let data = ids(11, 150, 4);
    let opts = EvalOptions {
        batch: 2,
        bptt: 5,
        per_token: false,
    };
    let plain = evaluate(&p, &data, &opts).unwrap();
    let cfg = CacheConfig {
        size: 20,
        theta: 0.5,
        lambda: 0.0,
    };
    let cached = cache_evaluate(&p, &data, &opts, &cfg).unwrap();
    assert_eq!(plain.nll.to_bits(), cached.nll.to_bits());
    let empty = CacheConfig {
        size: 0,
        theta: 0.5,
        lambda: 0.3,
    };
    assert_eq!(
        plain.nll.to_bits(),
        cache_evaluate(&p, &data, &opts, &empty).unwrap().nll.to_bits()
    );
}

#[test]
fn cache_mixture_is_a_distribution() {
    let p_model = [0.1, 0.2, 0.3, 0.4];
    let mut cache = VecDeque::new();
    cache.push_back((vec![1.0, 0.0], 2u32));
    cache.push_back((vec![0.0, 1.0], 2u32));
    cache.push_back((vec![0.5, 0.5], 0u32));
    let cfg = CacheConfig {
        size: 3,
        theta: 2.0,
        lambda: 0.25,
    };
    let mixed = cache_distribution(&p_model, &[0.3, -0.2], &cache, &cfg);
    assert!((mixed.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(mixed[2] > 0.75 * 0.3);
    assert!((mixed[1] - 0.75 * 0.2).abs() < 1e-15);
}

#[test]
fn cache_rejects_bad_lambda() {
    let cfg = CacheConfig {
        size: 3,
        theta: 1.0,
        lambda: 1.5,
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn histogram_binning_and_csv() {
    let spec = HistogramSpec {
        bins: 4,
        lo: 0.0,
        hi: 4.0,
        normalize: false,
    };
    let h = Histogram::from_samples(spec, &[-1.0, 0.5, 1.0, 1.5, 3.99, 4.0, 100.0]).unwrap();
    assert_eq!(h.counts, vec![2, 2, 0, 3]);
    assert_eq!(h.modal_bin(), 3);
    let csv = h.to_csv();
    assert!(csv.starts_with("bin_center,value\n0.5,2\n"));
    let norm = Histogram {
        spec: HistogramSpec {
            normalize: true,
            ..spec
        },
        ..h
    };
    assert!((norm.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(HistogramSpec::default().bins, 15);
    assert!(HistogramSpec { bins: 0, ..spec }.validate().is_err());
}

#[test]
fn entropies_bounded_by_log_vocab() {
    let p = params(9, false, 5);
    let data = ids(9, 120, 5);
    let opts = EvalOptions {
        batch: 2,
        bptt: 6,
        per_token: false,
    };
    let e = prediction_entropies(&p, &data, &opts).unwrap();
    assert_eq!(e.len(), 2 * 59);
    assert!(e.iter().all(|&h| (0.0..=9f64.ln()).contains(&h)));
}

#[test]
fn context_nll_needs_head() {
    let data = ids(9, 60, 6);
    let opts = EvalOptions {
        batch: 1,
        bptt: 6,
        per_token: false,
    };
    assert!(matches!(
        context_nlls(&params(9, false, 6), &data, &opts),
        Err(Error::HeadAbsent)
    ));
    let nll = context_nlls(&params(9, true, 6), &data, &opts).unwrap();
    assert_eq!(nll.len(), 59);
    assert!(nll.iter().all(|v| v.is_finite() && *v >= 0.0));
}
