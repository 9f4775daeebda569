//! Graph2Seq: a plain transformer encoder that reads
//! `[GP_1..GP_k, conditions.., FTSeq]` and keeps the final hidden states at
//! the k prompt positions as the graph's words.

use std::rc::Rc;

use rand::Rng;

use crate::ftseq::{FtSeq, SlotPermutation};
use crate::nn::{assemble, normal_tensor, GraphTokenEmbedding, ModelError, Transformer, TransformerConfig};
use crate::tensor::{AttentionMask, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::vocab::{Condition, Vocabulary};

/// `k x d` matrix of graph words.
pub type GraphWords = Tensor<f32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    /// Number of graph words k.
    pub words: usize,
    /// Width d_p of a position-codebook slot vector.
    pub slot_dim: usize,
    /// Codebook rows m; bounds the atom count of any input.
    pub slots: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 64,
            words: 1,
            slot_dim: 64,
            slots: 32,
        }
    }
}

impl EncoderConfig {
    /// Longest accepted input, prompts and conditions included.
    pub fn context_limit(&self) -> usize {
        2 * self.slots + self.words + 4 + Condition::ALL.len()
    }

    pub fn transformer(&self) -> TransformerConfig {
        TransformerConfig {
            layers: self.layers,
            heads: self.heads,
            hidden: self.hidden,
            ffn_mult: 4,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.transformer().validate()?;
        if self.words == 0 || self.slots == 0 || self.slot_dim == 0 {
            return Err(ModelError::Config("words, slots and slot_dim must be positive".into()));
        }
        Ok(())
    }
}

/// The learnable `[GP]` base plus one position vector per word.
#[derive(Debug, Clone)]
pub struct GraphWordPrompts {
    pub base: ParamId,
    pub positions: ParamId,
}

/// One encoder input: a sequence, the codebook permutation used to embed
/// it, and optional (normalized) condition values placed before it.
#[derive(Debug, Clone, Copy)]
pub struct EncoderInput<'a> {
    pub seq: &'a FtSeq,
    pub perm: &'a SlotPermutation,
    pub conditions: &'a [(Condition, f64)],
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    pub embedding: GraphTokenEmbedding,
    pub prompts: GraphWordPrompts,
    condition_dir: ParamId,
    transformer: Transformer,
    pad: usize,
    condition_rows: [usize; 3],
}

/// Full attention within each sequence; padding keys are hidden.
pub fn full_mask(lengths: &[usize], len: usize) -> AttentionMask {
    AttentionMask::from_fn(lengths.len(), len, |b, _, j| j < lengths[b])
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        vocab: &Vocabulary,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.hidden;
        let embedding = GraphTokenEmbedding::new(store, "enc", vocab, d, config.slots, config.slot_dim, rng);
        let prompts = GraphWordPrompts {
            base: store.add("enc.gp", normal_tensor(rng, &[d], 1.0), true),
            positions: store.add("enc.gp_pos", normal_tensor(rng, &[config.words, d], 1.0), true),
        };
        let condition_dir = store.add("enc.cond_dir", normal_tensor(rng, &[Condition::ALL.len(), d], 1.0), true);
        let transformer = Transformer::new(store, "enc", config.transformer(), rng)?;
        Ok(Self {
            config,
            embedding,
            prompts,
            condition_dir,
            transformer,
            pad: vocab.special.pad,
            condition_rows: Condition::ALL.map(|c| vocab.special.condition(c)),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Encodes a batch; returns the words stacked as `[batch * k, d]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        inputs: &[EncoderInput<'_>],
    ) -> Result<Var, ModelError> {
        let k = self.config.words;
        let d = self.config.hidden;
        let mut parts = Vec::new();

        let base = tape.param(store, self.prompts.base);
        let pos = tape.param(store, self.prompts.positions);
        parts.push(tape.add_row(pos, base)?);
        let mut next = k;

        let conds: Vec<(usize, (Condition, f64))> = inputs
            .iter()
            .enumerate()
            .flat_map(|(b, x)| x.conditions.iter().map(move |&c| (b, c)))
            .collect();
        let cond_start = next;
        if !conds.is_empty() {
            let table = tape.param(store, self.embedding.table);
            let dir = tape.param(store, self.condition_dir);
            let rows: Vec<usize> = conds.iter().map(|(_, (c, _))| self.condition_rows[c.index()]).collect();
            let idx: Vec<usize> = conds.iter().map(|(_, (c, _))| c.index()).collect();
            let scale: Vec<T> = conds.iter().flat_map(|(_, (_, v))| std::iter::repeat_n(T::of(*v), d)).collect();
            let e = tape.embedding(table, &rows)?;
            let dirs = tape.embedding(dir, &idx)?;
            let scaled = tape.mul_const(dirs, &Tensor::from_vec(&[conds.len(), d], scale)?)?;
            parts.push(tape.add(e, scaled)?);
            next += conds.len();
        }

        let toks: Vec<_> = inputs
            .iter()
            .enumerate()
            .flat_map(|(b, x)| x.seq.tokens().iter().map(move |&t| (t, b)))
            .collect();
        let tok_start = next;
        if !toks.is_empty() {
            let perms: Vec<&SlotPermutation> = inputs.iter().map(|x| x.perm).collect();
            parts.push(self.embedding.embed(tape, store, &toks, &perms)?);
            next += toks.len();
        }
        let table = tape.param(store, self.embedding.table);
        parts.push(tape.embedding(table, &[self.pad])?);
        let pad_row = next;
        let pool = tape.concat_rows(&parts)?;

        let mut layout = Vec::with_capacity(inputs.len());
        let (mut c, mut t) = (cond_start, tok_start);
        for x in inputs {
            let mut rows: Vec<usize> = (0..k).collect();
            rows.extend(c..c + x.conditions.len());
            c += x.conditions.len();
            rows.extend(t..t + x.seq.len());
            t += x.seq.len();
            layout.push(rows);
        }
        let len = layout.iter().map(Vec::len).max().unwrap_or(k);
        if len > self.config.context_limit() {
            return Err(ModelError::ContextOverflow {
                len,
                limit: self.config.context_limit(),
            });
        }
        let x = assemble(tape, pool, &layout, len, pad_row)?;
        let lengths: Vec<usize> = layout.iter().map(Vec::len).collect();
        let mask = Rc::new(full_mask(&lengths, len));
        let h = self.transformer.forward(tape, store, x, &mask)?;
        let idx: Vec<Option<usize>> = (0..inputs.len())
            .flat_map(|b| (0..k).map(move |i| Some(b * len + i)))
            .collect();
        Ok(tape.gather_rows(h, &idx)?)
    }

    /// Words for one sequence embedded through `perm`.
    pub fn encode<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        seq: &FtSeq,
        perm: &SlotPermutation,
    ) -> Result<Tensor<T>, ModelError> {
        self.encode_conditioned(store, seq, perm, &[])
    }

    /// As [`Encoder::encode`], with condition tokens between the prompts
    /// and the sequence.
    pub fn encode_conditioned<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        seq: &FtSeq,
        perm: &SlotPermutation,
        conditions: &[(Condition, f64)],
    ) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let w = self.forward(
            &mut tape,
            store,
            &[EncoderInput {
                seq,
                perm,
                conditions,
            }],
        )?;
        Ok(tape.value(w).clone())
    }
}
