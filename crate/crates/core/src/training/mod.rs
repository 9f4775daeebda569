//! End-to-end pretraining: the encoder produces Graph Words, the decoder
//! reconstructs the sequence from them under teacher forcing, and both are
//! updated jointly with AdamW.

pub mod config;
pub mod corpus;
pub mod model;
pub mod probe;

use std::io;

use thiserror::Error;

pub use config::ConfigError;
pub use corpus::{desk_corpus, make_batches, Batch, Corpus, Example};
pub use model::{ConditionStats, Model, ModelConfig};
pub use probe::{linear_probe, ProbeReport, ProbeTask};

use crate::chem::ChemError;
use crate::encoder::EncoderInput;
use crate::ftseq::{FtSeq, FtSeqError, SlotPermutation};
use crate::nn::ModelError;
use crate::tensor::checkpoint::CheckpointError;
use crate::tensor::{cosine_warmup_lr, AdamW, AdamWConfig, ParamStore, Scalar, Tape, Var};
use crate::vocab::VocabError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Seq(#[from] FtSeqError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}: {1}")]
    Io(String, io::Error),
    #[error("non-finite loss at step {step} (L_token={l_token}, L_attach={l_attach}, lr={lr})")]
    NonFinite {
        step: usize,
        l_token: f64,
        l_attach: f64,
        lr: f64,
    },
    #[error("no trainable examples in the corpus")]
    EmptyCorpus,
    #[error("probe: {0}")]
    Probe(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub warmup: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// Fresh encoder codebook permutation per example per epoch.
    pub shuffle_codebook: bool,
    /// Also give the decoder an independent fresh permutation (only when
    /// `shuffle_codebook` is on). Generation always reads the decoder
    /// codebook in order; without this, rows that always co-occur in
    /// training (0 and 1 on every first edge) drift together and decoding
    /// starts closing self-loops. Tiny overfit runs converge faster
    /// without it.
    pub shuffle_decoder: bool,
    /// Encode scaffold + condition tokens instead of the whole molecule.
    pub conditional: bool,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 2000,
            warmup: 50,
            lr_max: 1e-3,
            lr_min: 5e-5,
            seed: 0,
            shuffle_codebook: true,
            shuffle_decoder: true,
            conditional: false,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        use config::{parse_bool, parse_value as p};
        match key {
            "batch_size" => self.batch_size = p(key, value)?,
            "steps" => self.steps = p(key, value)?,
            "warmup" => self.warmup = p(key, value)?,
            "lr_max" => self.lr_max = p(key, value)?,
            "lr_min" => self.lr_min = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "shuffle_codebook" => self.shuffle_codebook = parse_bool(key, value)?,
            "shuffle_decoder" => self.shuffle_decoder = parse_bool(key, value)?,
            "conditional" => self.conditional = parse_bool(key, value)?,
            "log_every" => self.log_every = p(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |k: &str, v: String| Err(ConfigError::Invalid(k.into(), v));
        if self.batch_size == 0 {
            return bad("batch_size", "0".into());
        }
        if self.steps == 0 || self.warmup >= self.steps {
            return bad("warmup", format!("{} (steps {})", self.warmup, self.steps));
        }
        if !(self.lr_max > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return bad("lr_max", format!("{} (lr_min {})", self.lr_max, self.lr_min));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "batch_size={}\nsteps={}\nwarmup={}\nlr_max={}\nlr_min={}\nseed={}\nshuffle_codebook={}\nshuffle_decoder={}\nconditional={}\nlog_every={}\n",
            self.batch_size,
            self.steps,
            self.warmup,
            self.lr_max,
            self.lr_min,
            self.seed,
            self.shuffle_codebook,
            self.shuffle_decoder,
            self.conditional,
            self.log_every
        )
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        cosine_warmup_lr(step as u64, self.warmup as u64, self.steps as u64, self.lr_max, self.lr_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub lr: f64,
    pub l_token: f64,
    pub l_attach: f64,
    pub total: f64,
}

impl StepReport {
    pub const TSV_HEADER: &'static str = "step\tlr\tl_token\tl_attach";

    pub fn tsv(&self) -> String {
        format!("{}\t{:.6e}\t{:.6}\t{:.6}", self.step, self.lr, self.l_token, self.l_attach)
    }
}

/// `(L_token, L_attach)` of a batch, each summed over its examples.
pub fn batch_losses<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    tape: &mut Tape<T>,
    batch: &Batch<'_>,
) -> Result<(Var, Var), TrainError> {
    let inputs: Vec<EncoderInput<'_>> = batch
        .examples
        .iter()
        .zip(&batch.perms)
        .map(|(ex, perm)| EncoderInput {
            seq: &ex.source,
            perm,
            conditions: &ex.conditions,
        })
        .collect();
    let words = model.encoder.forward(tape, store, &inputs)?;
    let seqs: Vec<&FtSeq> = batch.examples.iter().map(|ex| &ex.seq).collect();
    let perms: Vec<&SlotPermutation> = batch.dec_perms.iter().collect();
    Ok(model.decoder.losses_permuted(tape, store, words, &seqs, &perms)?)
}

/// Loss values of a batch without recording gradients.
pub fn evaluate(model: &Model, batch: &Batch<'_>) -> Result<(f64, f64), TrainError> {
    let mut tape = Tape::new();
    let (a, b) = batch_losses(model, &model.store, &mut tape, batch)?;
    Ok((tape.value(a).item() as f64, tape.value(b).item() as f64))
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    opt: AdamW<f32>,
    step: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        Ok(Self {
            model,
            config,
            opt: AdamW::new(AdamWConfig::default()),
            step: 0,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// One optimizer update on `batch`.
    pub fn train_step(&mut self, batch: &Batch<'_>) -> Result<StepReport, TrainError> {
        let lr = self.config.lr_at(self.step);
        let mut tape = Tape::new();
        let (lt, la) = batch_losses(&self.model, &self.model.store, &mut tape, batch)?;
        let total = tape.add(lt, la).map_err(ModelError::from)?;
        let (l_token, l_attach) = (tape.value(lt).item() as f64, tape.value(la).item() as f64);
        if !(l_token.is_finite() && l_attach.is_finite()) {
            return Err(TrainError::NonFinite {
                step: self.step,
                l_token,
                l_attach,
                lr,
            });
        }
        let store = &mut self.model.store;
        store.zero_grad();
        tape.backward(total, store).map_err(ModelError::from)?;
        if !store.grads_finite() {
            return Err(TrainError::NonFinite {
                step: self.step,
                l_token,
                l_attach,
                lr,
            });
        }
        self.model.encoder.embedding.project_codebook_grad(store);
        self.model.decoder.embedding.project_codebook_grad(store);
        self.opt.step(store, lr);
        self.model.encoder.embedding.renormalize(store);
        self.model.decoder.embedding.renormalize(store);
        let report = StepReport {
            step: self.step,
            lr,
            l_token,
            l_attach,
            total: l_token + l_attach,
        };
        self.step += 1;
        Ok(report)
    }

    /// Trains until `config.steps` updates have been made, cycling through
    /// epochs of `corpus`. `on_step` sees every report.
    pub fn run(&mut self, corpus: &Corpus, mut on_step: impl FnMut(&StepReport)) -> Result<(), TrainError> {
        if corpus.examples.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let mut epoch = 0;
        while self.step < self.config.steps {
            for batch in make_batches(corpus, &self.config, self.model.config.slots, epoch) {
                if self.step >= self.config.steps {
                    break;
                }
                let r = self.train_step(&batch)?;
                on_step(&r);
            }
            epoch += 1;
        }
        Ok(())
    }
}
