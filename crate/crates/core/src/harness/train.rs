use std::path::Path;
use std::time::Instant;

use rand::RngCore;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::metrics::{MetricsRecord, Phase, RecordKind, RunSink};
use crate::corpus::{BatchStreams, Level, Vocabulary, WindowPolicy};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::{train_window, DropoutMasks, LstmState, Parameters};
use crate::optim::{clip_and_step, restore_weights, swap_in_averages, OptimizerState, StepOutcome};
use crate::rng::{self, Stream};

/// Encoded splits sharing one vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<u32>,
    pub valid: Vec<u32>,
    pub test: Option<Vec<u32>>,
}

impl Dataset {
    /// Builds the vocabulary over every split, in train, valid, test order,
    /// then encodes each split.
    pub fn from_texts(level: Level, min_freq: usize, train: &[u8], valid: &[u8], test: Option<&[u8]>) -> Result<Self> {
        let mut all = Vec::with_capacity(train.len() + valid.len() + test.map_or(0, <[u8]>::len) + 2);
        for part in [Some(train), Some(valid), test].into_iter().flatten() {
            if !all.is_empty() && level == Level::Word && all.last() != Some(&b'\n') {
                all.push(b'\n');
            }
            all.extend_from_slice(part);
        }
        let vocab = Vocabulary::build(&all, level, min_freq)?;
        Ok(Dataset {
            train: vocab.encode(train)?,
            valid: vocab.encode(valid)?,
            test: test.map(|t| vocab.encode(t)).transpose()?,
            vocab,
        })
    }

    pub fn load(config: &RunConfig) -> Result<Self> {
        let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
        let test = config.test.as_deref().map(read).transpose()?;
        Dataset::from_texts(
            config.level,
            config.min_freq,
            &read(&config.train)?,
            &read(&config.valid)?,
            test.as_deref(),
        )
    }
}

/// Summary of a finished run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-on-validation checkpoint (averaged weights once ASGD started).
    pub best: Checkpoint,
    pub best_valid: EvalReport,
    /// Test metrics of the best checkpoint, when a test split was given.
    pub test: Option<EvalReport>,
    /// Weights at the end of training, before any averaging swap.
    pub final_params: Parameters,
    pub epochs: usize,
    pub steps: u64,
}

struct Run<'a> {
    config: &'a RunConfig,
    config_text: String,
    data: &'a Dataset,
    sink: &'a mut dyn RunSink,
    params: Parameters,
    opt: OptimizerState,
    is_bias: Vec<bool>,
    shapes: Vec<(usize, usize)>,
    window_rng: rng::Rng,
    dropout_rng: rng::Rng,
    epoch: usize,
    step: u64,
    best: Option<(Checkpoint, EvalReport)>,
}

/// Trains per `config`: SGD until the non-monotone trigger fires, then
/// ASGD, with validation after every epoch and an optional finetune phase
/// restarted from the best checkpoint.
pub fn train(config: &RunConfig, data: &Dataset, sink: &mut dyn RunSink) -> Result<TrainOutcome> {
    config.validate()?;
    let model_config = config.model_config(data.vocab.len());
    let params = Parameters::init(&model_config, config.pdr, config.seed)?;
    let mut run = Run {
        config,
        config_text: config.to_text(),
        data,
        sink,
        is_bias: params.is_bias(),
        shapes: params.shapes(),
        opt: OptimizerState::new(config.optimizer_config()),
        params,
        window_rng: rng::stream(config.seed, Stream::Window),
        dropout_rng: rng::stream(config.seed, Stream::Dropout),
        epoch: 0,
        step: 0,
        best: None,
    };

    run.phase(Phase::Main, config.epochs)?;
    if config.finetune && config.finetune_epochs > 0 {
        if let Some((best, _)) = &run.best {
            run.params = best.params.clone();
            run.opt.restart_asgd(&run.params);
            run.phase(Phase::Finetune, config.finetune_epochs)?;
        }
    }

    let (best, best_valid) = run
        .best
        .take()
        .ok_or_else(|| Error::Config("no epoch completed; raise epochs".into()))?;
    let test = match &data.test {
        Some(ids) => {
            let report = evaluate(&best.params, ids, &config.eval_options())?;
            run.sink
                .record(&run.eval_record(RecordKind::Test, Phase::Main, &report))?;
            Some(report)
        }
        None => None,
    };
    Ok(TrainOutcome {
        best,
        best_valid,
        test,
        final_params: run.params,
        epochs: run.epoch,
        steps: run.step,
    })
}

impl Run<'_> {
    fn phase(&mut self, phase: Phase, epochs: usize) -> Result<()> {
        let mut since_best = 0;
        for _ in 0..epochs {
            self.epoch += 1;
            self.train_epoch(phase)?;
            if self.validate(phase)? {
                since_best = 0;
            } else {
                since_best += 1;
                if self.config.patience > 0 && since_best >= self.config.patience {
                    log::info!("no improvement for {since_best} epochs; stopping {phase:?} phase");
                    break;
                }
            }
        }
        Ok(())
    }

    fn train_epoch(&mut self, phase: Phase) -> Result<()> {
        let config = self.config;
        let policy = if config.randomize_bptt {
            WindowPolicy::Randomized { base: config.bptt }
        } else {
            WindowPolicy::Fixed(config.bptt)
        };
        let model_config = self.params.model.config();
        let mut streams = BatchStreams::batchify(&self.data.train, config.batch)?;
        let mut state = LstmState::zeros(&self.params.model, config.batch);
        let mut taken = 0;
        while let Some(window) = streams.next_window(policy, &mut self.window_rng) {
            if config.max_steps_per_epoch > 0 && taken == config.max_steps_per_epoch {
                break;
            }
            taken += 1;
            let masks = (!config.dropout.is_off())
                .then(|| DropoutMasks::sample(&config.dropout, &model_config, &window, self.dropout_rng.next_u64()));

            let start = Instant::now();
            let out = train_window(&self.params, &window, masks.as_ref(), &state, &config.reg)?;
            if !out.loss.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    step: self.step as usize,
                });
            }
            let grads = out.grads.into_dense(&self.shapes);
            let outcome = clip_and_step(&mut self.params, grads, &self.is_bias, window.lr_scale, &mut self.opt);
            let seconds = start.elapsed().as_secs_f64();
            state = out.state;
            self.step += 1;

            self.sink.record(&MetricsRecord {
                kind: RecordKind::Train,
                phase,
                epoch: self.epoch,
                step: self.step,
                mode: self.opt.mode,
                loss: Some(out.loss),
                grad_norm: match outcome {
                    StepOutcome::Applied { grad_norm, .. } => Some(grad_norm),
                    StepOutcome::Skipped => None,
                },
                nll: None,
                ppl: None,
                bpc: None,
                step_seconds: Some(seconds),
            })?;
        }
        Ok(())
    }

    /// Scores the validation split with averaged weights when averaging,
    /// keeps a new best, and feeds the trigger. Returns true on a new best.
    fn validate(&mut self, phase: Phase) -> Result<bool> {
        let saved = swap_in_averages(&mut self.params, &self.opt);
        let report = evaluate(&self.params, &self.data.valid, &self.config.eval_options());
        let improved = match &report {
            Ok(r) if self.best.as_ref().is_none_or(|(_, b)| r.nll < b.nll) => {
                let ckpt = Checkpoint {
                    config: self.config_text.clone(),
                    vocab: self.data.vocab.clone(),
                    params: self.params.clone(),
                    optimizer: Some(self.opt.clone()),
                };
                self.sink.best(&ckpt)?;
                self.best = Some((ckpt, r.clone()));
                true
            }
            _ => false,
        };
        if let Some(saved) = saved {
            restore_weights(&mut self.params, saved);
        }
        let report = report?;
        self.sink.record(&self.eval_record(RecordKind::Valid, phase, &report))?;
        if self.opt.record_validation(report.nll, &self.params) {
            log::info!("epoch {}: switching to averaged SGD", self.epoch);
        }
        Ok(improved)
    }

    fn eval_record(&self, kind: RecordKind, phase: Phase, report: &EvalReport) -> MetricsRecord {
        MetricsRecord {
            kind,
            phase,
            epoch: self.epoch,
            step: self.step,
            mode: self.opt.mode,
            loss: None,
            grad_norm: None,
            nll: Some(report.nll),
            ppl: Some(report.ppl),
            bpc: Some(report.bpc),
            step_seconds: None,
        }
    }
}
