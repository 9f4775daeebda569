use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{ConditionStats, Model};
use super::TrainConfig;
use crate::chem::random::{random_molecule, RandomMoleculeConfig};
use crate::chem::{canonical_form, MolecularGraph};
use crate::ftseq::{shuffle_codebook, FtSeq, SlotPermutation};
use crate::vocab::Condition;

/// One training molecule: the decoder target `seq` and the encoder input
/// (`source` plus `conditions`). Unconditional examples encode `seq` itself.
#[derive(Debug, Clone)]
pub struct Example {
    pub graph: MolecularGraph,
    pub canonical: String,
    pub seq: FtSeq,
    pub source: FtSeq,
    pub conditions: Vec<(Condition, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub examples: Vec<Example>,
    /// Molecules left out: unknown bond types, too many nodes for the
    /// codebook, or longer than the context limit.
    pub skipped: usize,
}

impl Corpus {
    /// Tokenizes `graphs` for `model`. With `conditional`, the encoder sees
    /// the scaffold (empty for acyclic molecules) and the normalized
    /// atom/bond/ring counts.
    pub fn build(graphs: &[MolecularGraph], model: &Model, conditional: bool) -> Self {
        let stats = model.conditions.unwrap_or_else(|| ConditionStats::from_graphs(graphs));
        let cfg = model.config;
        let enc_limit = cfg.encoder().context_limit();
        let dec_limit = cfg.decoder().context_limit();
        let mut out = Corpus::default();
        for g in graphs {
            let Some(ex) = Self::example(g, model, conditional, &stats) else {
                out.skipped += 1;
                continue;
            };
            let fits = ex.seq.max_slot().is_some_and(|s| s < cfg.slots)
                && ex.source.max_slot().is_none_or(|s| s < cfg.slots)
                && cfg.words + 1 + ex.seq.len() <= dec_limit
                && cfg.words + ex.conditions.len() + ex.source.len() <= enc_limit;
            if fits {
                out.examples.push(ex);
            } else {
                out.skipped += 1;
            }
        }
        out
    }

    fn example(g: &MolecularGraph, model: &Model, conditional: bool, stats: &ConditionStats) -> Option<Example> {
        let seq = model.flatten(g).ok()?;
        let canonical = canonical_form(g).ok()?;
        let (source, conditions) = if conditional {
            let scaffold = match g.scaffold() {
                Some(s) => model.flatten(&s).ok()?,
                None => FtSeq::default(),
            };
            (scaffold, stats.of_graph(g))
        } else {
            (seq.clone(), Vec::new())
        };
        Some(Example {
            graph: g.clone(),
            canonical,
            seq,
            source,
            conditions,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn graphs(&self) -> Vec<MolecularGraph> {
        self.examples.iter().map(|e| e.graph.clone()).collect()
    }
}

/// Random valid molecules with at most `max_atoms` heavy atoms, distinct up
/// to isomorphism.
pub fn desk_corpus(seed: u64, count: usize, max_atoms: usize) -> Vec<MolecularGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = RandomMoleculeConfig {
        max_atoms,
        ..RandomMoleculeConfig::default()
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count.saturating_mul(50).max(100) {
        if out.len() == count {
            break;
        }
        let g = random_molecule(&mut rng, &cfg);
        if let Ok(c) = canonical_form(&g) {
            if seen.insert(c) {
                out.push(g);
            }
        }
    }
    out
}

/// A group of examples with the encoder and decoder codebook permutations
/// of each. Padding and attention masks are built by the model's forward
/// pass; padded positions are hidden from attention and carry no loss.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub examples: Vec<&'a Example>,
    pub perms: Vec<SlotPermutation>,
    pub dec_perms: Vec<SlotPermutation>,
}

impl<'a> Batch<'a> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Decoder sequence lengths.
    pub fn lengths(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.seq.len()).collect()
    }

    /// Number of `[PAD]` positions in the decoder input.
    pub fn pad_count(&self) -> usize {
        let l = self.lengths();
        let max = l.iter().copied().max().unwrap_or(0);
        l.iter().map(|&x| max - x).sum()
    }

    /// The `i`-th example as a batch of one.
    pub fn single(&self, i: usize) -> Batch<'a> {
        Batch {
            examples: vec![self.examples[i]],
            perms: vec![self.perms[i].clone()],
            dec_perms: vec![self.dec_perms[i].clone()],
        }
    }
}

/// One epoch of batches in a seeded order. Each example gets a fresh
/// encoder codebook permutation when shuffling is on, and an independent
/// decoder one when decoder shuffling is on too; otherwise the identity.
pub fn make_batches<'a>(corpus: &'a Corpus, cfg: &TrainConfig, slots: usize, epoch: usize) -> Vec<Batch<'a>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    order
        .chunks(cfg.batch_size.max(1))
        .map(|chunk| {
            let examples: Vec<&Example> = chunk.iter().map(|&i| &corpus.examples[i]).collect();
            let mut draw = |on: bool| {
                if on {
                    shuffle_codebook(slots, rng.random())
                } else {
                    SlotPermutation::identity(slots)
                }
            };
            let (perms, dec_perms) = chunk
                .iter()
                .map(|_| {
                    let e = draw(cfg.shuffle_codebook);
                    (e, draw(cfg.shuffle_codebook && cfg.shuffle_decoder))
                })
                .unzip();
            Batch {
                examples,
                perms,
                dec_perms,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use crate::training::ModelConfig;
    use crate::vocab::{build_bond_dict, Vocabulary};

    fn model_for(graphs: &[MolecularGraph], slots: usize) -> Model {
        let vocab = Vocabulary::new(build_bond_dict(graphs, 1000).unwrap());
        let cfg = ModelConfig {
            hidden: 16,
            slot_dim: 16,
            slots,
            ..ModelConfig::default()
        };
        Model::new(cfg, vocab, 1).unwrap()
    }

    #[test]
    fn equal_lengths_need_no_padding() {
        let graphs: Vec<_> = ["CCO", "CCN", "OCO"].iter().map(|s| parse_smiles(s).unwrap()).collect();
        let model = model_for(&graphs, 8);
        let corpus = Corpus::build(&graphs, &model, false);
        let cfg = TrainConfig {
            batch_size: 3,
            ..TrainConfig::default()
        };
        let b = make_batches(&corpus, &cfg, 8, 0);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].pad_count(), 0);
    }

    #[test]
    fn batches_are_seeded() {
        let graphs = desk_corpus(5, 20, 8);
        assert_eq!(graphs.len(), 20);
        let model = model_for(&graphs, 16);
        let corpus = Corpus::build(&graphs, &model, false);
        let cfg = TrainConfig {
            batch_size: 6,
            ..TrainConfig::default()
        };
        let key = |e: usize| {
            make_batches(&corpus, &cfg, 16, e)
                .iter()
                .map(|b| (b.examples.iter().map(|x| x.canonical.clone()).collect::<Vec<_>>(), b.perms.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(key(0), key(0));
        assert_ne!(key(0), key(1));
        let off = TrainConfig {
            shuffle_codebook: false,
            ..cfg
        };
        for b in make_batches(&corpus, &off, 16, 0) {
            assert!(b.perms.iter().all(|p| *p == SlotPermutation::identity(16)));
            assert!(b.dec_perms.iter().all(|p| *p == SlotPermutation::identity(16)));
        }
        let enc_only = TrainConfig {
            shuffle_decoder: false,
            ..cfg
        };
        for b in make_batches(&corpus, &enc_only, 16, 0) {
            assert!(b.dec_perms.iter().all(|p| *p == SlotPermutation::identity(16)));
        }
        let both = make_batches(&corpus, &cfg, 16, 0);
        assert!(both.iter().any(|b| b.perms != b.dec_perms));
    }

    #[test]
    fn oversized_molecules_are_skipped() {
        let graphs: Vec<_> = ["CCO", "CCCCCCCCCC"].iter().map(|s| parse_smiles(s).unwrap()).collect();
        let model = model_for(&graphs, 4);
        let corpus = Corpus::build(&graphs, &model, false);
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.skipped, 1);
    }

    #[test]
    fn conditional_examples_encode_the_scaffold() {
        let graphs: Vec<_> = ["CCO", "Cc1ccccc1"].iter().map(|s| parse_smiles(s).unwrap()).collect();
        let model = model_for(&graphs, 16);
        let corpus = Corpus::build(&graphs, &model, true);
        assert!(corpus.examples[0].source.is_empty());
        assert_eq!(corpus.examples[1].source.node_count(), 6);
        assert_eq!(corpus.examples[1].conditions.len(), 3);
    }
}
