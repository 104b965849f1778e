use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ModelConfig;
use crate::autodiff::Tensor;
use crate::corpus::TokenWindow;
use crate::error::{Error, Result};

/// Dropout rates. Every rate lies in `[0, 1)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    /// Zeroes whole input positions.
    pub p_word: f64,
    /// Zeroes whole rows of the embedding matrix for a window.
    pub p_embed: f64,
    /// Variational mask between LSTM layers.
    pub p_layer: f64,
    /// Variational mask on the final LSTM output.
    pub p_out: f64,
    /// DropConnect on the recurrent weights.
    pub p_wdrop: f64,
}

impl DropoutSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_word", self.p_word),
            ("p_embed", self.p_embed),
            ("p_layer", self.p_layer),
            ("p_out", self.p_out),
            ("p_wdrop", self.p_wdrop),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }

    pub fn is_off(&self) -> bool {
        *self == DropoutSpec::default()
    }
}

/// Frozen dropout masks for one window. Entries are `0` or `1/(1-p)`.
///
/// Rows of per-position masks are time-major (`t·batch + b`), matching the
/// model's activations.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    /// `(steps·batch)×d`, combining word and embedding-row dropout.
    pub input: Option<Tensor>,
    /// One `batch×hidden` mask per layer boundary (all layers but the last).
    pub layer: Vec<Option<Tensor>>,
    /// `batch×d` on the final output.
    pub out: Option<Tensor>,
    /// `hidden×4·hidden` per layer, applied to `w_hh`.
    pub weight: Vec<Option<Tensor>>,
}

// Each dropout kind draws from its own stream so changing one rate never
// moves another kind's mask.
#[repr(u64)]
enum Kind {
    Word = 1,
    Embed = 2,
    Layer = 3,
    Out = 4,
    Weight = 5,
}

fn kind_rng(seed: u64, kind: Kind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(kind as u64);
    rng
}

fn keep_scale<R: Rng>(p: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < p {
        0.0
    } else {
        1.0 / (1.0 - p)
    }
}

fn bernoulli<R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| keep_scale(p, rng)).collect();
    Tensor::from_matrix(rows, cols, data).expect("positive extents")
}

/// Repeats a `batch×n` mask for every time step, giving `(steps·batch)×n`.
pub fn tile_over_time(mask: &Tensor, steps: usize) -> Tensor {
    let mut data = Vec::with_capacity(mask.numel() * steps);
    for _ in 0..steps {
        data.extend_from_slice(mask.data());
    }
    Tensor::from_matrix(mask.rows() * steps, mask.cols(), data).expect("positive extents")
}

impl DropoutMasks {
    /// All masks absent (identity).
    pub fn none(layers: usize) -> Self {
        DropoutMasks {
            input: None,
            layer: vec![None; layers.saturating_sub(1)],
            out: None,
            weight: vec![None; layers],
        }
    }

    /// Samples masks for `window` from a per-window seed.
    pub fn sample(spec: &DropoutSpec, config: &ModelConfig, window: &TokenWindow, seed: u64) -> Self {
        let (batch, steps, d) = (window.batch, window.steps, config.emb_dim);
        let n_layers = config.layers.len();
        let mut masks = DropoutMasks::none(n_layers);

        if spec.p_word > 0.0 || spec.p_embed > 0.0 {
            let mut word_rng = kind_rng(seed, Kind::Word);
            let word: Vec<f64> = (0..steps * batch)
                .map(|_| {
                    if spec.p_word > 0.0 {
                        keep_scale(spec.p_word, &mut word_rng)
                    } else {
                        1.0
                    }
                })
                .collect();
            let mut embed_rng = kind_rng(seed, Kind::Embed);
            let rows: Vec<f64> = (0..config.vocab_size)
                .map(|_| {
                    if spec.p_embed > 0.0 {
                        keep_scale(spec.p_embed, &mut embed_rng)
                    } else {
                        1.0
                    }
                })
                .collect();
            let ids = window.inputs_time_major();
            let mut data = Vec::with_capacity(steps * batch * d);
            for (pos, &id) in ids.iter().enumerate() {
                let s = word[pos] * rows[id];
                data.extend(std::iter::repeat_n(s, d));
            }
            masks.input = Some(Tensor::from_matrix(steps * batch, d, data).expect("positive extents"));
        }
        if spec.p_layer > 0.0 {
            let mut rng = kind_rng(seed, Kind::Layer);
            for l in 0..n_layers - 1 {
                masks.layer[l] = Some(bernoulli(batch, config.layers[l], spec.p_layer, &mut rng));
            }
        }
        if spec.p_out > 0.0 {
            let mut rng = kind_rng(seed, Kind::Out);
            masks.out = Some(bernoulli(batch, d, spec.p_out, &mut rng));
        }
        if spec.p_wdrop > 0.0 {
            let mut rng = kind_rng(seed, Kind::Weight);
            for (l, &h) in config.layers.iter().enumerate() {
                masks.weight[l] = Some(bernoulli(h, 4 * h, spec.p_wdrop, &mut rng));
            }
        }
        masks
    }
}
