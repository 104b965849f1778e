//! Shared fixtures for integration tests.

#![allow(dead_code)]

use pdr_lm::rng::{self, Stream};
use rand::Rng;

/// Deterministic English-like text of at least `bytes` bytes: sentences of
/// invented words drawn from a Zipfian lexicon, each word preferring a few
/// fixed successors.
pub fn synthetic_text(bytes: usize, seed: u64) -> String {
    let mut r = rng::stream(seed, Stream::Scratch);
    let cons = b"bcdfghklmnprstvz";
    let vows = b"aeiou";
    let n = 3000;
    let lexicon: Vec<String> = (0..n)
        .map(|_| {
            let mut w = String::new();
            for _ in 0..r.random_range(1..=4) {
                w.push(cons[r.random_range(0..cons.len())] as char);
                w.push(vows[r.random_range(0..vows.len())] as char);
                if r.random_bool(0.3) {
                    w.push(cons[r.random_range(0..cons.len())] as char);
                }
            }
            w
        })
        .collect();
    let weights: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-1.1)).collect();
    let total: f64 = weights.iter().sum();
    let cdf: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();
    let zipf = |r: &mut rng::Rng| {
        let u: f64 = r.random();
        cdf.partition_point(|&c| c < u).min(n - 1)
    };
    let successors: Vec<Vec<usize>> = (0..n).map(|_| (0..4).map(|_| zipf(&mut r)).collect()).collect();

    let mut out = String::new();
    while out.len() < bytes {
        let mut prev: Option<usize> = None;
        let mut words = Vec::new();
        for _ in 0..r.random_range(4..=14) {
            let w = match prev {
                Some(p) if r.random_bool(0.6) => successors[p][r.random_range(0..4)],
                _ => zipf(&mut r),
            };
            words.push(lexicon[w].as_str());
            prev = Some(w);
        }
        out.push_str(&words.join(" "));
        out.push_str(" .\n");
    }
    out
}

/// Splits `text` at a line boundary near `fraction`.
pub fn split_lines(text: &str, fraction: f64) -> (&str, &str) {
    let cut = (text.len() as f64 * fraction) as usize;
    let cut = text[..cut].rfind('\n').map_or(cut, |i| i + 1);
    text.split_at(cut)
}
