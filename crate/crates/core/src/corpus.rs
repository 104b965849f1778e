//! Corpus ingestion: vocabularies, encoding, contiguous batching and
//! BPTT windows.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

/// Tokenization granularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// Whitespace-separated words, `<eos>` appended per line.
    Word,
    /// One token per Unicode code point.
    Char,
    /// One token per byte.
    Byte,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Word => "word",
            Level::Char => "char",
            Level::Byte => "byte",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Level::Word),
            "char" | "character" => Ok(Level::Char),
            "byte" => Ok(Level::Byte),
            other => Err(Error::Config(format!("unknown level {other:?}"))),
        }
    }
}

/// Dense token ↔ id bijection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    level: Level,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

fn as_utf8(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| Error::InvalidUtf8 {
        offset: e.valid_up_to(),
    })
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .flat_map(|line| line.split_whitespace().chain(std::iter::once(EOS)))
}

fn byte_token(b: u8) -> String {
    char::from(b).to_string()
}

impl Vocabulary {
    /// Builds a vocabulary in first-appearance order.
    ///
    /// At word level, tokens seen fewer than `min_freq` times map to
    /// `<unk>`, which is always part of the vocabulary.
    pub fn build(text: &[u8], level: Level, min_freq: usize) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut vocab = Vocabulary {
            level,
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        match level {
            Level::Word => {
                let text = as_utf8(text)?;
                let mut counts: HashMap<&str, usize> = HashMap::new();
                let mut order = Vec::new();
                for w in words(text) {
                    let c = counts.entry(w).or_insert(0);
                    if *c == 0 {
                        order.push(w);
                    }
                    *c += 1;
                }
                for w in order {
                    if counts[w] >= min_freq.max(1) || w == UNK {
                        vocab.insert(w.to_string());
                    }
                }
                if !vocab.index.contains_key(UNK) {
                    vocab.insert(UNK.to_string());
                }
            }
            Level::Char => {
                for ch in as_utf8(text)?.chars() {
                    vocab.insert(ch.to_string());
                }
            }
            Level::Byte => {
                for &b in text {
                    vocab.insert(byte_token(b));
                }
            }
        }
        Ok(vocab)
    }

    fn insert(&mut self, token: String) {
        if !self.index.contains_key(&token) {
            self.index.insert(token.clone(), self.tokens.len() as u32);
            self.tokens.push(token);
        }
    }

    /// Rebuilds a vocabulary from an explicit id-ordered token list.
    pub fn from_tokens(level: Level, tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate token {t:?} in vocabulary")));
            }
        }
        if level == Level::Word && !index.contains_key(UNK) {
            return Err(Error::Config("word vocabulary lacks <unk>".into()));
        }
        Ok(Vocabulary { level, tokens, index })
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unk_id(&self) -> Option<u32> {
        self.id(UNK)
    }

    pub fn encode(&self, text: &[u8]) -> Result<Vec<u32>> {
        match self.level {
            Level::Word => {
                let unk = self.unk_id().expect("word vocabulary has <unk>");
                Ok(words(as_utf8(text)?).map(|w| self.id(w).unwrap_or(unk)).collect())
            }
            Level::Char => as_utf8(text)?
                .chars()
                .enumerate()
                .map(|(position, ch)| {
                    let mut buf = [0u8; 4];
                    self.id(ch.encode_utf8(&mut buf))
                        .ok_or(Error::UnknownCharacter { ch, position })
                })
                .collect(),
            Level::Byte => text
                .iter()
                .enumerate()
                .map(|(position, &byte)| self.id(&byte_token(byte)).ok_or(Error::UnknownByte { byte, position }))
                .collect(),
        }
    }

    /// Inverse of [`encode`](Self::encode) for in-vocabulary text. Words are
    /// joined by single spaces and `<eos>` becomes a newline.
    pub fn decode(&self, ids: &[u32]) -> Vec<u8> {
        match self.level {
            Level::Word => {
                let mut out = String::new();
                let mut line_start = true;
                for &id in ids {
                    let tok = self.token(id).unwrap_or(UNK);
                    if tok == EOS {
                        out.push('\n');
                        line_start = true;
                    } else {
                        if !line_start {
                            out.push(' ');
                        }
                        out.push_str(tok);
                        line_start = false;
                    }
                }
                out.into_bytes()
            }
            Level::Char => ids
                .iter()
                .filter_map(|&id| self.token(id))
                .collect::<String>()
                .into_bytes(),
            Level::Byte => ids
                .iter()
                .filter_map(|&id| self.token(id))
                .filter_map(|t| t.chars().next())
                .map(|c| c as u32 as u8)
                .collect(),
        }
    }

    /// One token per line, line number = id. Newline, carriage return and
    /// backslash are escaped.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            for ch in t.chars() {
                match ch {
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    '\\' => out.push_str("\\\\"),
                    c => out.push(c),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn import(level: Level, exported: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in exported.split_terminator('\n') {
            let mut tok = String::new();
            let mut chars = line.chars();
            while let Some(c) = chars.next() {
                if c == '\\' {
                    match chars.next() {
                        Some('n') => tok.push('\n'),
                        Some('r') => tok.push('\r'),
                        Some('\\') => tok.push('\\'),
                        other => {
                            return Err(Error::Config(format!(
                                "bad escape \\{} in vocabulary",
                                other.map(String::from).unwrap_or_default()
                            )))
                        }
                    }
                } else {
                    tok.push(c);
                }
            }
            tokens.push(tok);
        }
        Vocabulary::from_tokens(level, tokens)
    }
}

/// `batch` contiguous, non-overlapping id streams of equal length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchStreams {
    data: Vec<u32>,
    batch: usize,
    len: usize,
    cursor: usize,
}

impl BatchStreams {
    /// Splits the first `⌊len/B⌋·B` ids into `B` rows, preserving order.
    pub fn batchify(ids: &[u32], batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let needed = batch * 2;
        if ids.len() < needed {
            return Err(Error::TooFewTokens { needed, got: ids.len() });
        }
        let len = ids.len() / batch;
        Ok(BatchStreams {
            data: ids[..len * batch].to_vec(),
            batch,
            len,
            cursor: 0,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Length of each stream.
    pub fn stream_len(&self) -> usize {
        self.len
    }

    pub fn row(&self, b: usize) -> &[u32] {
        &self.data[b * self.len..(b + 1) * self.len]
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn reset(&mut self) {
        self.cursor = 0;
    }

    /// Number of prediction targets in one full pass.
    pub fn target_count(&self) -> usize {
        self.batch * (self.len - 1)
    }

    /// Emits the next window, or `None` at end of epoch. The caller carries
    /// hidden state across windows.
    pub fn next_window<R: Rng + ?Sized>(&mut self, policy: WindowPolicy, rng: &mut R) -> Option<TokenWindow> {
        if self.cursor + 1 >= self.len {
            return None;
        }
        let (drawn, lr_scale) = policy.draw(rng);
        let steps = drawn.min(self.len - 1 - self.cursor);
        let mut inputs = Vec::with_capacity(self.batch * steps);
        let mut targets = Vec::with_capacity(self.batch * steps);
        for b in 0..self.batch {
            let row = self.row(b);
            inputs.extend_from_slice(&row[self.cursor..self.cursor + steps]);
            targets.extend_from_slice(&row[self.cursor + 1..self.cursor + steps + 1]);
        }
        self.cursor += steps;
        Some(TokenWindow {
            inputs,
            targets,
            batch: self.batch,
            steps,
            lr_scale,
        })
    }
}

/// How BPTT window lengths are chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WindowPolicy {
    Fixed(usize),
    /// Mean `base` with probability 0.95, else `base/2`; normal with
    /// standard deviation 5; clamped to `[5, 2·base]`. The learning rate is
    /// scaled by `drawn/base`.
    Randomized {
        base: usize,
    },
}

impl WindowPolicy {
    pub const MIN_RANDOM: usize = 5;

    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> (usize, f64) {
        match self {
            WindowPolicy::Fixed(s) => (s.max(1), 1.0),
            WindowPolicy::Randomized { base } => {
                let mean = if rng.random::<f64>() < 0.95 {
                    base as f64
                } else {
                    base as f64 / 2.0
                };
                let normal = Normal::new(mean, 5.0).expect("positive std");
                let hi = (2 * base).max(Self::MIN_RANDOM) as f64;
                let s = normal.sample(rng).round().clamp(Self::MIN_RANDOM as f64, hi) as usize;
                (s, s as f64 / base as f64)
            }
        }
    }
}

/// Aligned input/target ids for one BPTT window, row-major `batch × steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenWindow {
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub batch: usize,
    pub steps: usize,
    /// Learning-rate multiplier implied by the drawn window length.
    pub lr_scale: f64,
}

impl TokenWindow {
    pub fn new(inputs: Vec<u32>, targets: Vec<u32>, batch: usize, steps: usize) -> Result<Self> {
        if inputs.len() != batch * steps || targets.len() != batch * steps || batch * steps == 0 {
            return Err(Error::ShapeMismatch {
                op: "token_window",
                left: vec![batch, steps],
                right: vec![inputs.len(), targets.len()],
            });
        }
        Ok(TokenWindow {
            inputs,
            targets,
            batch,
            steps,
            lr_scale: 1.0,
        })
    }

    pub fn input(&self, b: usize, t: usize) -> u32 {
        self.inputs[b * self.steps + t]
    }

    pub fn target(&self, b: usize, t: usize) -> u32 {
        self.targets[b * self.steps + t]
    }

    /// Flattens `ids` to time-major order (`t·batch + b`), the row layout
    /// used by the model.
    pub fn time_major(&self, ids: &[u32]) -> Vec<usize> {
        let mut out = Vec::with_capacity(ids.len());
        for t in 0..self.steps {
            for b in 0..self.batch {
                out.push(ids[b * self.steps + t] as usize);
            }
        }
        out
    }

    pub fn inputs_time_major(&self) -> Vec<usize> {
        self.time_major(&self.inputs)
    }

    pub fn targets_time_major(&self) -> Vec<usize> {
        self.time_major(&self.targets)
    }

    pub fn max_id(&self) -> u32 {
        self.inputs.iter().chain(&self.targets).copied().max().unwrap_or(0)
    }
}
