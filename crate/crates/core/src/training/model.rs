use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{parse_kv, ConfigError};
use super::TrainError;
use crate::chem::MolecularGraph;
use crate::decoder::{Decoder, DecoderConfig, Generation, Sampling};
use crate::encoder::{Encoder, EncoderConfig, GraphWords};
use crate::ftseq::{flatten, FtSeq, SlotPermutation};
use crate::tensor::checkpoint::{read_checkpoint, write_checkpoint};
use crate::tensor::ParamStore;
use crate::vocab::{BondDict, Condition, Vocabulary};

/// Architecture shared by the encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub words: usize,
    pub slot_dim: usize,
    pub slots: usize,
    pub epsilon: f64,
    pub max_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = DecoderConfig::default();
        Self {
            layers: d.layers,
            heads: d.heads,
            hidden: d.hidden,
            words: d.words,
            slot_dim: d.slot_dim,
            slots: d.slots,
            epsilon: d.epsilon,
            max_blocks: d.max_blocks,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 8] = [
        "layers",
        "heads",
        "hidden",
        "words",
        "slot_dim",
        "slots",
        "epsilon",
        "max_blocks",
    ];

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            heads: self.heads,
            hidden: self.hidden,
            words: self.words,
            slot_dim: self.slot_dim,
            slots: self.slots,
        }
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            layers: self.layers,
            heads: self.heads,
            hidden: self.hidden,
            words: self.words,
            slot_dim: self.slot_dim,
            slots: self.slots,
            epsilon: self.epsilon,
            max_blocks: self.max_blocks,
        }
    }

    /// Sets one field from its textual form. Returns `Ok(false)` for keys
    /// this config does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        use super::config::parse_value as p;
        match key {
            "layers" => self.layers = p(key, value)?,
            "heads" => self.heads = p(key, value)?,
            "hidden" => self.hidden = p(key, value)?,
            "words" => self.words = p(key, value)?,
            "slot_dim" => self.slot_dim = p(key, value)?,
            "slots" => self.slots = p(key, value)?,
            "epsilon" => self.epsilon = p(key, value)?,
            "max_blocks" => self.max_blocks = p(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "layers={}\nheads={}\nhidden={}\nwords={}\nslot_dim={}\nslots={}\nepsilon={}\nmax_blocks={}\n",
            self.layers, self.heads, self.hidden, self.words, self.slot_dim, self.slots, self.epsilon, self.max_blocks
        )
    }
}

/// Corpus mean and standard deviation of each condition, used to
/// normalize condition values to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ConditionStats {
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a MolecularGraph>) -> Self {
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut n = 0.0;
        for g in graphs {
            for c in Condition::ALL {
                let v = c.measure(g);
                sums[c.index()] += v;
                sq[c.index()] += v * v;
            }
            n += 1.0;
        }
        let n: f64 = if n > 0.0 { n } else { 1.0 };
        let mean = sums.map(|s| s / n);
        let mut std = [1.0; 3];
        for i in 0..3 {
            let var = sq[i] / n - mean[i] * mean[i];
            std[i] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn normalize(&self, c: Condition, raw: f64) -> f64 {
        (raw - self.mean[c.index()]) / self.std[c.index()]
    }

    /// All three conditions of `g`, normalized.
    pub fn of_graph(&self, g: &MolecularGraph) -> Vec<(Condition, f64)> {
        Condition::ALL.iter().map(|&c| (c, self.normalize(c, c.measure(g)))).collect()
    }
}

/// Encoder, decoder, vocabulary and their parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub store: ParamStore<f32>,
    /// Present for models trained with condition tokens.
    pub conditions: Option<ConditionStats>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &vocab, config.encoder(), &mut rng)?;
        let decoder = Decoder::new(&mut store, &vocab, config.decoder(), &mut rng)?;
        Ok(Self {
            config,
            vocab,
            encoder,
            decoder,
            store,
            conditions: None,
        })
    }

    pub fn with_conditions(mut self, stats: ConditionStats) -> Self {
        self.conditions = Some(stats);
        self
    }

    pub fn flatten(&self, g: &MolecularGraph) -> Result<FtSeq, TrainError> {
        Ok(flatten(g, g.origin_first_atom().unwrap_or(0), &self.vocab.bonds)?)
    }

    pub fn encode_seq(&self, seq: &FtSeq, perm: &SlotPermutation) -> Result<GraphWords, TrainError> {
        Ok(self.encoder.encode(&self.store, seq, perm)?)
    }

    pub fn encode_graph(&self, g: &MolecularGraph, perm: &SlotPermutation) -> Result<GraphWords, TrainError> {
        self.encode_seq(&self.flatten(g)?, perm)
    }

    /// Conditional encoding: the scaffold sequence (empty when `scaffold`
    /// is `None`) plus normalized condition values.
    pub fn encode_conditioned(
        &self,
        scaffold: Option<&MolecularGraph>,
        conditions: &[(Condition, f64)],
        perm: &SlotPermutation,
    ) -> Result<GraphWords, TrainError> {
        let seq = match scaffold {
            Some(s) => self.flatten(s)?,
            None => FtSeq::default(),
        };
        Ok(self.encoder.encode_conditioned(&self.store, &seq, perm, conditions)?)
    }

    pub fn generate(&self, words: &GraphWords, sampling: Sampling) -> Result<Generation, TrainError> {
        Ok(self.decoder.generate(&self.store, words, sampling)?)
    }

    /// Encode then greedily decode.
    pub fn reconstruct(&self, g: &MolecularGraph, perm: &SlotPermutation) -> Result<Generation, TrainError> {
        let w = self.encode_graph(g, perm)?;
        self.generate(&w, Sampling::Greedy)
    }

    pub fn identity_perm(&self) -> SlotPermutation {
        SlotPermutation::identity(self.config.slots)
    }

    /// Checkpoint header text: config, condition statistics, bond types.
    pub fn metadata(&self) -> String {
        let mut out = String::from("format=graphwords\n");
        out.push_str(&self.config.to_kv());
        if let Some(s) = &self.conditions {
            for c in Condition::ALL {
                let _ = writeln!(out, "cond.{}={} {}", c.index(), s.mean[c.index()], s.std[c.index()]);
            }
        }
        for line in self.vocab.bonds.to_text().lines() {
            let _ = writeln!(out, "bond={line}");
        }
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), TrainError> {
        Ok(write_checkpoint(w, &self.metadata(), &self.store)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let f = File::create(path).map_err(|e| TrainError::Io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| TrainError::Io(path.display().to_string(), e))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, TrainError> {
        let ck = read_checkpoint(r)?;
        let mut config = ModelConfig::default();
        let mut bonds = String::new();
        let mut stats = ConditionStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        let mut has_stats = false;
        for (key, value) in parse_kv(&ck.metadata)? {
            if config.apply(&key, &value)? {
                continue;
            }
            if key == "bond" {
                bonds.push_str(&value);
                bonds.push('\n');
            } else if let Some(i) = key.strip_prefix("cond.") {
                let i: usize = super::config::parse_value(&key, i)?;
                let parts: Vec<&str> = value.split_whitespace().collect();
                if i >= 3 || parts.len() != 2 {
                    return Err(ConfigError::Invalid(key, value).into());
                }
                stats.mean[i] = super::config::parse_value(&key, parts[0])?;
                stats.std[i] = super::config::parse_value(&key, parts[1])?;
                has_stats = true;
            }
        }
        let vocab = Vocabulary::new(BondDict::from_text(&bonds)?);
        let mut model = Model::new(config, vocab, 0)?;
        ck.load_into(&mut model.store)?;
        if has_stats {
            model.conditions = Some(stats);
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let f = File::open(path).map_err(|e| TrainError::Io(path.display().to_string(), e))?;
        Self::read_from(&mut BufReader::new(f))
    }
}
