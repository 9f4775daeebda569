//! Building blocks shared by the encoder and decoder: a pre-norm
//! transformer stack and the graph-token embedding.
//!
//! Layers own only [`ParamId`]s; values live in a [`ParamStore`], so one
//! architecture runs in `f32` for training and in `f64` for audits.

use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::chem::MAX_ATOMIC_NUMBER;
use crate::ftseq::{FtSeqError, SlotPermutation, Token};
use crate::tensor::{AttentionMask, ParamId, ParamStore, Scalar, Tape, Tensor, TensorError, Var};
use crate::vocab::{VocabError, Vocabulary};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Seq(#[from] FtSeqError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("slot {slot} exceeds the {slots}-row position codebook")]
    SlotOverflow { slot: usize, slots: usize },
    #[error("input of {len} positions exceeds the context limit {limit}")]
    ContextOverflow { len: usize, limit: usize },
    #[error("blocks do not partition the sequence: {0}")]
    Blocks(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Embedding-table row of a sequence token: atoms first, then bond types.
pub fn token_row(tok: &Token) -> usize {
    match *tok {
        Token::Node { atom, .. } => atom,
        Token::Edge { bond, .. } => MAX_ATOMIC_NUMBER as usize + bond,
    }
}

pub(crate) fn normal_tensor<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

pub(crate) fn ones<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::from_vec(&[n], vec![T::one(); n]).expect("shape matches")
}

/// A codebook initialized with random unit rows.
/// Random unit rows, mutually orthogonal when `rows <= dim` (Gram-Schmidt
/// on Gaussian draws).
pub(crate) fn unit_rows<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> Tensor<T> {
    let mut t: Tensor<f64> = normal_tensor(rng, &[rows, dim], 1.0);
    if rows <= dim {
        let d = t.data_mut();
        for i in 0..rows {
            for j in 0..i {
                let (done, rest) = d.split_at_mut(i * dim);
                let (prev, cur) = (&done[j * dim..(j + 1) * dim], &mut rest[..dim]);
                let c: f64 = prev.iter().zip(cur.iter()).map(|(a, b)| a * b).sum();
                cur.iter_mut().zip(prev).for_each(|(x, p)| *x -= c * p);
            }
            crate::ftseq::normalize_rows(&mut d[i * dim..(i + 1) * dim], dim);
        }
    } else {
        crate::ftseq::normalize_rows(t.data_mut(), dim);
    }
    t.cast()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn_mult: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.hidden == 0 || self.ffn_mult == 0 {
            return Err(ModelError::Config("hidden size and ffn multiplier must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Layer {
    attn_norm: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ffn_norm: ParamId,
    w1: ParamId,
    w2: ParamId,
}

/// Pre-norm blocks: `x + Attn(norm(x))`, then `x + W2 swish(W1 norm(x))`,
/// with a final RMS norm.
#[derive(Debug, Clone)]
pub struct Transformer {
    config: TransformerConfig,
    layers: Vec<Layer>,
    final_norm: ParamId,
}

impl Transformer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: TransformerConfig,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.hidden;
        let f = d * config.ffn_mult;
        let std_in = 1.0 / (d as f64).sqrt();
        let std_out = std_in / (2.0 * config.layers.max(1) as f64).sqrt();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |n: &str| format!("{prefix}.layer{l}.{n}");
            layers.push(Layer {
                attn_norm: store.add(p("attn_norm"), ones(d), false),
                wq: store.add(p("wq"), normal_tensor(rng, &[d, d], std_in), true),
                wk: store.add(p("wk"), normal_tensor(rng, &[d, d], std_in), true),
                wv: store.add(p("wv"), normal_tensor(rng, &[d, d], std_in), true),
                wo: store.add(p("wo"), normal_tensor(rng, &[d, d], std_out), true),
                ffn_norm: store.add(p("ffn_norm"), ones(d), false),
                w1: store.add(p("w1"), normal_tensor(rng, &[d, f], std_in), true),
                w2: store.add(p("w2"), normal_tensor(rng, &[f, d], std_out / (config.ffn_mult as f64).sqrt()), true),
            });
        }
        let final_norm = store.add(format!("{prefix}.final_norm"), ones(d), false);
        Ok(Self {
            config,
            layers,
            final_norm,
        })
    }

    pub fn config(&self) -> TransformerConfig {
        self.config
    }

    /// Runs the stack over stacked sequences `x: [batch * len, d]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mut x: Var,
        mask: &Rc<AttentionMask>,
    ) -> Result<Var, ModelError> {
        for layer in &self.layers {
            let g = tape.param(store, layer.attn_norm);
            let h = tape.rmsnorm(x, g)?;
            let (wq, wk, wv, wo) = (
                tape.param(store, layer.wq),
                tape.param(store, layer.wk),
                tape.param(store, layer.wv),
                tape.param(store, layer.wo),
            );
            let q = tape.linear(h, wq, None)?;
            let k = tape.linear(h, wk, None)?;
            let v = tape.linear(h, wv, None)?;
            let a = tape.attention(q, k, v, self.config.heads, mask)?;
            let a = tape.linear(a, wo, None)?;
            x = tape.add(x, a)?;

            let g = tape.param(store, layer.ffn_norm);
            let h = tape.rmsnorm(x, g)?;
            let (w1, w2) = (tape.param(store, layer.w1), tape.param(store, layer.w2));
            let h = tape.linear(h, w1, None)?;
            let h = tape.swish(h);
            let h = tape.linear(h, w2, None)?;
            x = tape.add(x, h)?;
        }
        let g = tape.param(store, self.final_norm);
        Ok(tape.rmsnorm(x, g)?)
    }
}

/// Token embedding = table row + projected slot-vector pair + segment row.
#[derive(Debug, Clone)]
pub struct GraphTokenEmbedding {
    pub table: ParamId,
    pub codebook: ParamId,
    pub gpe_proj: ParamId,
    pub segment: ParamId,
    pub slots: usize,
}

impl GraphTokenEmbedding {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        vocab: &Vocabulary,
        hidden: usize,
        slots: usize,
        slot_dim: usize,
        rng: &mut R,
    ) -> Self {
        let rows = vocab.special.end();
        Self {
            table: store.add(format!("{prefix}.tokens"), normal_tensor(rng, &[rows, hidden], 1.0), true),
            codebook: store.add(format!("{prefix}.codebook"), unit_rows(rng, slots, slot_dim), false),
            gpe_proj: store.add(
                format!("{prefix}.gpe_proj"),
                normal_tensor(rng, &[2 * slot_dim, hidden], 1.0 / (2.0 * slot_dim as f64).sqrt()),
                true,
            ),
            segment: store.add(format!("{prefix}.segment"), normal_tensor(rng, &[2, hidden], 1.0), true),
            slots,
        }
    }

    /// Embeds `tokens` (one row each), mapping each symbolic slot through its
    /// sequence's permutation. `tokens` pairs a token with the index of the
    /// permutation to use.
    pub fn embed<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        tokens: &[(Token, usize)],
        perms: &[&SlotPermutation],
    ) -> Result<Var, ModelError> {
        let mut ids = Vec::with_capacity(tokens.len());
        let mut left = Vec::with_capacity(tokens.len());
        let mut right = Vec::with_capacity(tokens.len());
        let mut seg = Vec::with_capacity(tokens.len());
        for (tok, p) in tokens {
            let perm = perms[*p];
            let (l, r) = tok.slots();
            let row = |s: usize| {
                perm.row(s)
                    .filter(|&r| r < self.slots)
                    .ok_or(ModelError::SlotOverflow {
                        slot: s,
                        slots: self.slots.min(perm.len()),
                    })
            };
            ids.push(token_row(tok));
            left.push(Some(row(l)?));
            right.push(Some(row(r)?));
            seg.push(tok.segment().index());
        }
        let table = tape.param(store, self.table);
        let cb = tape.param(store, self.codebook);
        let proj = tape.param(store, self.gpe_proj);
        let segment = tape.param(store, self.segment);
        let e = tape.embedding(table, &ids)?;
        let ol = tape.gather_rows(cb, &left)?;
        let or = tape.gather_rows(cb, &right)?;
        let pair = tape.concat_cols(&[ol, or])?;
        let gpe = tape.linear(pair, proj, None)?;
        let s = tape.embedding(segment, &seg)?;
        let e = tape.add(e, gpe)?;
        Ok(tape.add(e, s)?)
    }

    /// Removes the radial component of each codebook row's gradient, so an
    /// update moves rows along the unit sphere they are projected back onto.
    pub fn project_codebook_grad<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let p = store.get_mut(self.codebook);
        let dim = p.value.cols();
        for (g, o) in p.grad.data_mut().chunks_mut(dim).zip(p.value.data().chunks(dim)) {
            let c = crate::tensor::dot(g, o);
            for (gi, &oi) in g.iter_mut().zip(o) {
                *gi = *gi - c * oi;
            }
        }
    }

    /// Re-normalizes codebook rows to unit length.
    pub fn renormalize<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let p = store.get_mut(self.codebook);
        let dim = p.value.cols();
        crate::ftseq::normalize_rows(p.value.data_mut(), dim);
    }
}

/// Assembles per-sequence rows drawn from a pool into a padded `[batch * len, d]`
/// matrix: `layout[b][t]` is a pool row index.
pub(crate) fn assemble<T: Scalar>(
    tape: &mut Tape<T>,
    pool: Var,
    layout: &[Vec<usize>],
    len: usize,
    pad_row: usize,
) -> Result<Var, ModelError> {
    let mut idx = Vec::with_capacity(layout.len() * len);
    for rows in layout {
        idx.extend(rows.iter().map(|&r| Some(r)));
        idx.extend(std::iter::repeat_n(Some(pad_row), len - rows.len()));
    }
    Ok(tape.gather_rows(pool, &idx)?)
}

/// Greedy choice: the first maximal entry.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}
