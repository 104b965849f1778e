use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::Serialize;

use crate::autodiff::{Parameterized, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Architecture of the language model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Embedding width `d`; must equal the last layer width.
    pub emb_dim: usize,
    /// Hidden width of each LSTM layer, bottom to top.
    pub layers: Vec<usize>,
    /// Decoder weight shares storage with the embedding matrix.
    pub tied: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.emb_dim == 0 {
            return Err(Error::Model("vocabulary size and d must be positive".into()));
        }
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(Error::Model(format!(
                "layer widths must be positive, got {:?}",
                self.layers
            )));
        }
        let last = *self.layers.last().unwrap();
        if last != self.emb_dim {
            return Err(Error::Model(format!(
                "last layer width {last} must equal d = {}",
                self.emb_dim
            )));
        }
        Ok(())
    }

    pub(crate) fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.emb_dim
        } else {
            self.layers[l - 1]
        }
    }

    /// Exact parameter counts implied by the shapes, without allocating.
    pub fn parameter_counts(&self, include_head: bool) -> ParamCounts {
        let (v, d) = (self.vocab_size, self.emb_dim);
        let lstm = (0..self.layers.len())
            .map(|l| {
                let h = self.layers[l];
                4 * h * (self.layer_input(l) + h) + 4 * h
            })
            .sum();
        let head = if include_head { d * d + d + v } else { 0 };
        let decoder = if self.tied { 0 } else { v * d };
        ParamCounts {
            embedding: v * d,
            lstm,
            decoder_bias: v,
            decoder,
            head,
            total: v * d + lstm + v + decoder + head,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub embedding: usize,
    pub lstm: usize,
    pub decoder_bias: usize,
    /// Separate decoder matrix; zero when tied.
    pub decoder: usize,
    /// PDR head (`d² + d + |W|`), zero when excluded.
    pub head: usize,
    pub total: usize,
}

impl ParamCounts {
    /// Main-model parameters, i.e. everything kept at inference time.
    pub fn model(&self) -> usize {
        self.total - self.head
    }
}

/// One LSTM layer in row-vector form: `gates = x·w_ih + h·w_hh + bias`,
/// gate blocks ordered input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

impl LstmLayer {
    pub fn hidden(&self) -> usize {
        self.w_hh.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `|W|×d`; row `w` is the embedding of token `w`. Also the decoder
    /// weight when tied.
    pub embedding: Tensor,
    pub layers: Vec<LstmLayer>,
    /// `1×|W|`.
    pub decoder_bias: Tensor,
    /// `|W|×d`, present only for untied models.
    pub decoder: Option<Tensor>,
}

/// Train-only parameters of the past decoder: `tanh(v·w_f + b_f)` followed
/// by the tied output projection with its own bias `b_prime`.
#[derive(Clone, Debug, PartialEq)]
pub struct PdrHead {
    pub w_f: Tensor,
    pub b_f: Tensor,
    pub b_prime: Tensor,
}

impl PdrHead {
    pub fn init<R: Rng + ?Sized>(d: usize, vocab: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        PdrHead {
            w_f: uniform(d, d, bound, rng),
            b_f: Tensor::zeros(1, d),
            b_prime: Tensor::zeros(1, vocab),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w_f.numel() + self.b_f.numel() + self.b_prime.numel()
    }
}

fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::from_matrix(rows, cols, data).expect("positive extents")
}

impl ModelParams {
    /// Embeddings (and an untied decoder) uniform in ±0.1, LSTM weights and
    /// biases uniform in ±1/√hidden, decoder bias zero.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (v, d) = (config.vocab_size, config.emb_dim);
        let embedding = uniform(v, d, 0.1, rng);
        let layers = (0..config.layers.len())
            .map(|l| {
                let h = config.layers[l];
                let bound = 1.0 / (h as f64).sqrt();
                LstmLayer {
                    w_ih: uniform(config.layer_input(l), 4 * h, bound, rng),
                    w_hh: uniform(h, 4 * h, bound, rng),
                    bias: uniform(1, 4 * h, bound, rng),
                }
            })
            .collect();
        let decoder = (!config.tied).then(|| uniform(v, d, 0.1, rng));
        Ok(ModelParams {
            embedding,
            layers,
            decoder_bias: Tensor::zeros(1, v),
            decoder,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn emb_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab_size(),
            emb_dim: self.emb_dim(),
            layers: self.layers.iter().map(LstmLayer::hidden).collect(),
            tied: self.decoder.is_none(),
        }
    }

    /// Weight used by the output projection.
    pub fn decoder_weight(&self) -> &Tensor {
        self.decoder.as_ref().unwrap_or(&self.embedding)
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["embedding".to_string(), "decoder_bias".to_string()];
        for l in 0..self.layers.len() {
            names.push(format!("lstm.{l}.w_ih"));
            names.push(format!("lstm.{l}.w_hh"));
            names.push(format!("lstm.{l}.bias"));
        }
        if self.decoder.is_some() {
            names.push("decoder".to_string());
        }
        names
    }
}

impl Parameterized for ModelParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding, &self.decoder_bias];
        for layer in &self.layers {
            out.extend([&layer.w_ih, &layer.w_hh, &layer.bias]);
        }
        out.extend(self.decoder.as_ref());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding, &mut self.decoder_bias];
        for layer in &mut self.layers {
            out.extend([&mut layer.w_ih, &mut layer.w_hh, &mut layer.bias]);
        }
        out.extend(self.decoder.as_mut());
        out
    }
}

impl Parameterized for PdrHead {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w_f, &self.b_f, &self.b_prime]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_f, &mut self.b_f, &mut self.b_prime]
    }
}

pub const HEAD_NAMES: [&str; 3] = ["pdr.w_f", "pdr.b_f", "pdr.b_prime"];

/// The language model plus its optional PDR head. Parameter ids are the
/// model tensors in [`ModelParams::names`] order followed by the head.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub model: ModelParams,
    pub head: Option<PdrHead>,
}

impl Parameters {
    /// Initializes the model from the model-init stream of `seed` and the
    /// head from its own stream, so adding the head leaves the model
    /// weights unchanged.
    pub fn init(config: &ModelConfig, with_head: bool, seed: u64) -> Result<Self> {
        let model = ModelParams::init(config, &mut rng::stream(seed, Stream::ModelInit))?;
        let head = with_head.then(|| {
            PdrHead::init(
                config.emb_dim,
                config.vocab_size,
                &mut rng::stream(seed, Stream::HeadInit),
            )
        });
        Ok(Parameters { model, head })
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = self.model.names();
        if self.head.is_some() {
            names.extend(HEAD_NAMES.iter().map(|s| s.to_string()));
        }
        names
    }

    /// Biases are excluded from weight decay.
    pub fn is_bias(&self) -> Vec<bool> {
        self.names()
            .iter()
            .map(|n| n.ends_with("bias") || n == "pdr.b_f" || n == "pdr.b_prime")
            .collect()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| (t.rows(), t.cols())).collect()
    }

    pub fn model_param_len(&self) -> usize {
        self.model.tensors().len()
    }

    pub fn parameter_counts(&self, include_head: bool) -> ParamCounts {
        let model: usize = self.model.tensors().iter().map(|t| t.numel()).sum();
        let head = match (&self.head, include_head) {
            (Some(h), true) => h.param_count(),
            _ => 0,
        };
        let lstm = self
            .model
            .layers
            .iter()
            .map(|l| l.w_ih.numel() + l.w_hh.numel() + l.bias.numel())
            .sum();
        ParamCounts {
            embedding: self.model.embedding.numel(),
            lstm,
            decoder_bias: self.model.decoder_bias.numel(),
            decoder: self.model.decoder.as_ref().map_or(0, Tensor::numel),
            head,
            total: model + head,
        }
    }

    /// Drops the head; a no-op when already absent.
    pub fn strip_head(&mut self) {
        self.head = None;
    }
}

impl Parameterized for Parameters {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.model.tensors();
        if let Some(h) = &self.head {
            out.extend(h.tensors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.model.tensors_mut();
        if let Some(h) = &mut self.head {
            out.extend(h.tensors_mut());
        }
        out
    }
}
