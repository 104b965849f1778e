//! Single-file binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PDRLM1" | u32 version
//! str config | str level | str vocabulary
//! u32 n | n × blob                          model parameters
//! u8 has_head | [u32 n | n × blob]          PDR head
//! u8 has_optimizer | [optimizer section]
//! [u8; 32] SHA-256 of everything above
//! ```
//!
//! `str` is a u64 byte length followed by UTF-8. A blob is a `str` name,
//! u32 rank, rank × u64 dims, u64 byte length and the f64 data.

use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::{Parameterized, Tensor};
use crate::corpus::{Level, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{LstmLayer, ModelParams, Parameters, PdrHead, HEAD_NAMES};
use crate::optim::{Mode, OptimizerConfig, OptimizerState};

pub const MAGIC: &[u8; 6] = b"PDRLM1";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// A saved run: config echo, vocabulary, weights and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Config text exactly as rendered by the run that wrote it.
    pub config: String,
    pub vocab: Vocabulary,
    pub params: Parameters,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.str(&self.config);
        w.str(self.vocab.level().as_str());
        w.str(&self.vocab.export());

        let names = self.params.names();
        let tensors = self.params.tensors();
        let n_model = self.params.model_param_len();
        w.blobs(&names[..n_model], &tensors[..n_model]);
        w.u8(self.params.head.is_some() as u8);
        if self.params.head.is_some() {
            w.blobs(&names[n_model..], &tensors[n_model..]);
        }

        w.u8(self.optimizer.is_some() as u8);
        if let Some(opt) = &self.optimizer {
            w.f64(opt.config.lr);
            w.f64(opt.config.weight_decay);
            w.f64(opt.config.clip);
            w.u64(opt.config.nonmono as u64);
            w.u8(matches!(opt.mode, Mode::Asgd) as u8);
            w.u64(opt.step);
            w.u8(opt.avg_start.is_some() as u8);
            w.u64(opt.avg_start.unwrap_or(0));
            w.u64(opt.avg_count);
            w.u64(opt.history.len() as u64);
            opt.history.iter().for_each(|&v| w.f64(v));
            w.u8(opt.averages.is_some() as u8);
            if let Some(avgs) = &opt.averages {
                let avg_names: Vec<String> = names.iter().take(avgs.len()).map(|n| format!("avg.{n}")).collect();
                let refs: Vec<&Tensor> = avgs.iter().collect();
                w.blobs(&avg_names, &refs);
            }
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic or truncated)".into()));
        }
        let mut r = Reader {
            buf: bytes,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }
        r.buf = body;

        let config = r.str()?;
        let level: Level = r.str()?.parse()?;
        let vocab = Vocabulary::import(level, &r.str()?)?;
        let model = model_from_blobs(r.blobs()?)?;
        let head = match r.u8()? {
            0 => None,
            _ => Some(head_from_blobs(r.blobs()?, &model)?),
        };
        let params = Parameters { model, head };

        let optimizer = match r.u8()? {
            0 => None,
            _ => {
                let config = OptimizerConfig {
                    lr: r.f64()?,
                    weight_decay: r.f64()?,
                    clip: r.f64()?,
                    nonmono: r.u64()? as usize,
                };
                let mode = if r.u8()? == 1 { Mode::Asgd } else { Mode::Sgd };
                let step = r.u64()?;
                let has_start = r.u8()? == 1;
                let start = r.u64()?;
                let avg_count = r.u64()?;
                let n = r.u64()? as usize;
                let history = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
                let averages = match r.u8()? {
                    0 => None,
                    _ => {
                        let avgs: Vec<Tensor> = r.blobs()?.into_iter().map(|(_, t)| t).collect();
                        check_averages(&params, &avgs)?;
                        Some(avgs)
                    }
                };
                Some(OptimizerState {
                    config,
                    mode,
                    step,
                    avg_start: has_start.then_some(start),
                    avg_count,
                    averages,
                    history,
                })
            }
        };
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        if params.model.vocab_size() != vocab.len() {
            return Err(Error::VocabMismatch {
                model: params.model.vocab_size(),
                data: vocab.len(),
            });
        }
        Ok(Checkpoint {
            config,
            vocab,
            params,
            optimizer,
        })
    }

    /// Writes to a temporary sibling and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint")
        ));
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            std::fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Loads a checkpoint that must still carry its PDR head.
    pub fn load_with_head(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.params.head.is_none() {
            return Err(Error::HeadAbsent);
        }
        Ok(ckpt)
    }

    /// Inference copy: drops the head and its running averages.
    pub fn stripped(&self) -> Checkpoint {
        let mut out = self.clone();
        out.params.strip_head();
        let n = out.params.model_param_len();
        if let Some(avgs) = out.optimizer.as_mut().and_then(|o| o.averages.as_mut()) {
            avgs.truncate(n);
        }
        out
    }
}

fn check_averages(params: &Parameters, avgs: &[Tensor]) -> Result<()> {
    let shapes = params.shapes();
    let n_model = params.model_param_len();
    if avgs.len() != shapes.len() && avgs.len() != n_model {
        return Err(Error::Checkpoint(format!(
            "{} averaged tensors for {} parameters",
            avgs.len(),
            shapes.len()
        )));
    }
    for (a, s) in avgs.iter().zip(&shapes) {
        if (a.rows(), a.cols()) != *s {
            return Err(Error::Checkpoint(
                "averaged tensor shape differs from its parameter".into(),
            ));
        }
    }
    Ok(())
}

fn take(blobs: &mut Vec<(String, Tensor)>, name: &str) -> Result<Tensor> {
    let i = blobs
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
    Ok(blobs.remove(i).1)
}

fn model_from_blobs(mut blobs: Vec<(String, Tensor)>) -> Result<ModelParams> {
    let embedding = take(&mut blobs, "embedding")?;
    let decoder_bias = take(&mut blobs, "decoder_bias")?;
    let mut layers = Vec::new();
    while blobs.iter().any(|(n, _)| n == &format!("lstm.{}.w_ih", layers.len())) {
        let l = layers.len();
        layers.push(LstmLayer {
            w_ih: take(&mut blobs, &format!("lstm.{l}.w_ih"))?,
            w_hh: take(&mut blobs, &format!("lstm.{l}.w_hh"))?,
            bias: take(&mut blobs, &format!("lstm.{l}.bias"))?,
        });
    }
    let decoder = take(&mut blobs, "decoder").ok();
    if let Some((name, _)) = blobs.first() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name:?}")));
    }
    let model = ModelParams {
        embedding,
        layers,
        decoder_bias,
        decoder,
    };
    let config = model.config();
    config.validate()?;
    let (v, d) = (config.vocab_size, config.emb_dim);
    let mut expected = vec![(v, d), (1, v)];
    for (l, &h) in config.layers.iter().enumerate() {
        expected.extend([(config.layer_input(l), 4 * h), (h, 4 * h), (1, 4 * h)]);
    }
    if !config.tied {
        expected.push((v, d));
    }
    if shapes_of(&model.tensors()) != expected {
        return Err(Error::Checkpoint("parameter shapes are inconsistent".into()));
    }
    Ok(model)
}

fn shapes_of(tensors: &[&Tensor]) -> Vec<(usize, usize)> {
    tensors.iter().map(|t| (t.rows(), t.cols())).collect()
}

fn head_from_blobs(mut blobs: Vec<(String, Tensor)>, model: &ModelParams) -> Result<PdrHead> {
    let [w_f, b_f, b_prime] = HEAD_NAMES;
    let head = PdrHead {
        w_f: take(&mut blobs, w_f)?,
        b_f: take(&mut blobs, b_f)?,
        b_prime: take(&mut blobs, b_prime)?,
    };
    let (v, d) = (model.vocab_size(), model.emb_dim());
    if shapes_of(&head.tensors()) != [(d, d), (1, d), (1, v)] {
        return Err(Error::Checkpoint("PDR head shapes do not match the model".into()));
    }
    Ok(head)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn blobs<S: AsRef<str>>(&mut self, names: &[S], tensors: &[&Tensor]) {
        self.u32(tensors.len() as u32);
        for (name, t) in names.iter().zip(tensors) {
            self.str(name.as_ref());
            self.u32(t.shape().len() as u32);
            t.shape().iter().for_each(|&d| self.u64(d as u64));
            self.u64((t.numel() * 8) as u64);
            t.data().iter().for_each(|&v| self.f64(v));
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.bytes(n)?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
    fn blobs(&mut self) -> Result<Vec<(String, Tensor)>> {
        let n = self.u32()?;
        let mut out = Vec::new();
        for _ in 0..n {
            let name = self.str()?;
            let rank = self.u32()? as usize;
            let dims = (0..rank)
                .map(|_| Ok(self.u64()? as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = self.u64()? as usize;
            let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            if count.and_then(|c| c.checked_mul(8)) != Some(len) {
                return Err(Error::Checkpoint(format!(
                    "{name}: byte length {len} does not match shape {dims:?}"
                )));
            }
            let data = self
                .bytes(len)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            out.push((name, Tensor::new(dims, data)?));
        }
        Ok(out)
    }
}
