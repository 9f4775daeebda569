//! GraphGPT: an edge-centric autoregressive decoder.
//!
//! The input is `[w_1..w_k, BOS, FTSeq]`. Attention is causal across
//! blocks (the first node, then each edge with the node it introduces) and
//! full within a block; the words and `[BOS]` form a prefix seen by all.
//! The hidden state at `[BOS]` predicts the first atom, and the hidden state
//! at the last token of each block predicts the next edge type (or
//! `[EOS]`) together with the slot vectors of its two endpoints.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chem::{check_valence, MolecularGraph, MAX_ATOMIC_NUMBER};
use crate::ftseq::{blocks_of, unflatten, FtSeq, SlotPermutation, Token};
use crate::nn::{argmax, assemble, normal_tensor, GraphTokenEmbedding, ModelError, Transformer, TransformerConfig};
use crate::tensor::{AttentionMask, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::vocab::Vocabulary;

const ATOM_CLASSES: usize = MAX_ATOMIC_NUMBER as usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub words: usize,
    pub slot_dim: usize,
    pub slots: usize,
    /// Right-placement threshold: attach to an existing node only if its
    /// cosine similarity is strictly greater.
    pub epsilon: f64,
    /// Generation stops (flagged truncated) after this many blocks.
    pub max_blocks: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 64,
            words: 1,
            slot_dim: 64,
            slots: 32,
            epsilon: 0.5,
            max_blocks: 33,
        }
    }
}

impl DecoderConfig {
    pub fn context_limit(&self) -> usize {
        2 * self.slots + self.words + 4
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
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(ModelError::Config(format!("epsilon {} outside (0, 1)", self.epsilon)));
        }
        if self.words == 0 || self.slots == 0 || self.slot_dim == 0 || self.max_blocks == 0 {
            return Err(ModelError::Config("words, slots, slot_dim and max_blocks must be positive".into()));
        }
        Ok(())
    }
}

/// Output heads: first-atom type, next-edge type (with `[EOS]`), and the
/// predicted left/right slot vectors.
#[derive(Debug, Clone)]
pub struct DecoderHeads {
    pub pred_v: (ParamId, ParamId),
    pub pred_e: (ParamId, ParamId),
    pub pos_l: ParamId,
    pub pos_r: ParamId,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    config: DecoderConfig,
    vocab: Vocabulary,
    pub embedding: GraphTokenEmbedding,
    pub word_pos: ParamId,
    pub heads: DecoderHeads,
    transformer: Transformer,
}

/// Visibility matrix for one sequence: a prefix of `prefix_len` positions
/// (block 0) followed by `blocks`, given in sequence coordinates. Position
/// `i` sees `j` iff `block(j) <= block(i)`.
pub fn build_block_mask(blocks: &[Range<usize>], prefix_len: usize) -> Result<Vec<Vec<bool>>, ModelError> {
    let mut id = vec![0usize; prefix_len];
    let mut expect = 0;
    for (b, r) in blocks.iter().enumerate() {
        if r.start != expect || r.end <= r.start {
            return Err(ModelError::Blocks(format!("block {b} is {r:?}, expected start {expect}")));
        }
        id.extend(std::iter::repeat_n(b + 1, r.len()));
        expect = r.end;
    }
    Ok((0..id.len())
        .map(|i| (0..id.len()).map(|j| id[j] <= id[i]).collect())
        .collect())
}

fn seq_blocks(seq: &FtSeq) -> Result<Vec<Range<usize>>, ModelError> {
    if seq.is_empty() {
        Ok(Vec::new())
    } else {
        Ok(blocks_of(seq)?)
    }
}

/// Cosine similarities between `g` and the first `j` codebook rows, both
/// explicitly normalized.
pub fn cosine_scores<T: Scalar>(g: &[T], codebook: &Tensor<T>, j: usize) -> Vec<f64> {
    let unit = |v: &[T]| -> Vec<f64> {
        let v: Vec<f64> = v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter().map(|x| x / n).collect()
        } else {
            v
        }
    };
    let g = unit(g);
    (0..j)
        .map(|i| unit(codebook.row(i)).iter().zip(&g).map(|(a, b)| a * b).sum())
        .collect()
}

/// Step 2: the existing node whose slot vector best matches `g_l`.
/// Returns the node index and its similarity.
pub fn step2_left_attach<T: Scalar>(g_l: &[T], codebook: &Tensor<T>, j: usize) -> (usize, f64) {
    assert!(j >= 1, "left attachment needs at least one node");
    let c = cosine_scores(g_l, codebook, j);
    let u = argmax(&c);
    (u, c[u])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    /// Case 1: the right end is existing node `node`.
    Existing { node: usize, similarity: f64 },
    /// Case 2: the right end is a new node taking slot `slot` (= j).
    New { slot: usize, similarity: f64 },
}

/// Step 3: attach to the best existing node if its similarity exceeds
/// `epsilon`, else open slot `j`.
pub fn step3_right_place<T: Scalar>(g_r: &[T], codebook: &Tensor<T>, j: usize, epsilon: f64) -> Placement {
    let c = cosine_scores(g_r, codebook, j);
    let u = argmax(&c);
    let similarity = c.get(u).copied().unwrap_or(f64::NEG_INFINITY);
    if j > 0 && similarity > epsilon {
        Placement::Existing { node: u, similarity }
    } else {
        Placement::New { slot: j, similarity }
    }
}

/// How the next discrete choice is made.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Greedy,
    Temperature { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepRecord {
    FirstNode {
        atom: usize,
        width: usize,
    },
    Edge {
        bond: usize,
        width: usize,
        left: usize,
        left_similarity: f64,
        placement: Placement,
    },
    Eos {
        width: usize,
    },
}

impl StepRecord {
    /// Number of classes the step chose among.
    pub fn width(&self) -> usize {
        match *self {
            StepRecord::FirstNode { width, .. } | StepRecord::Edge { width, .. } | StepRecord::Eos { width } => width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Invalid {
    ElementMismatch,
    SelfLoop,
    DuplicateEdge,
    SlotExhausted,
    Valence,
    Malformed(String),
}

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Invalid::ElementMismatch => f.write_str("element mismatch"),
            Invalid::SelfLoop => f.write_str("self-loop"),
            Invalid::DuplicateEdge => f.write_str("duplicate edge"),
            Invalid::SlotExhausted => f.write_str("position codebook exhausted"),
            Invalid::Valence => f.write_str("valence violation"),
            Invalid::Malformed(m) => write!(f, "malformed sequence: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Complete,
    Truncated,
    Invalid(Invalid),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub seq: FtSeq,
    /// The decoded graph, present unless the sequence itself is unusable.
    pub graph: Option<MolecularGraph>,
    pub status: Status,
    pub trace: Vec<StepRecord>,
}

impl Generation {
    pub fn is_valid(&self) -> bool {
        self.status == Status::Complete && self.graph.is_some()
    }

    /// Tab-separated trace: step kind, chosen id, case, similarity.
    pub fn trace_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.trace {
            let line = match s {
                StepRecord::FirstNode { atom, .. } => format!("node\t{atom}\t-\t-"),
                StepRecord::Eos { width } => format!("eos\t{}\t-\t-", width - 1),
                StepRecord::Edge { bond, placement, .. } => match placement {
                    Placement::Existing { similarity, .. } => format!("edge\t{bond}\t1\t{similarity:.6}"),
                    Placement::New { similarity, .. } => format!("edge\t{bond}\t2\t{similarity:.6}"),
                },
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Per-example loss targets, gathered positions and slot rows.
struct LossPlan<T> {
    bos_pos: Vec<Option<usize>>,
    atom_targets: Vec<usize>,
    edge_pos: Vec<Option<usize>>,
    edge_targets: Vec<usize>,
    attach_pos: Vec<Option<usize>>,
    left_rows: Vec<Option<usize>>,
    right_rows: Vec<Option<usize>>,
    _marker: std::marker::PhantomData<T>,
}

impl Decoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        vocab: &Vocabulary,
        config: DecoderConfig,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.hidden;
        let embedding = GraphTokenEmbedding::new(store, "dec", vocab, d, config.slots, config.slot_dim, rng);
        let word_pos = store.add("dec.word_pos", normal_tensor(rng, &[config.words, d], 1.0), true);
        let transformer = Transformer::new(store, "dec", config.transformer(), rng)?;
        let std = 1.0 / (d as f64).sqrt();
        let e = vocab.edge_classes();
        let heads = DecoderHeads {
            pred_v: (
                store.add("dec.pred_v.w", normal_tensor(rng, &[d, ATOM_CLASSES], std), true),
                store.add("dec.pred_v.b", Tensor::zeros(&[ATOM_CLASSES]), false),
            ),
            pred_e: (
                store.add("dec.pred_e.w", normal_tensor(rng, &[d, e], std), true),
                store.add("dec.pred_e.b", Tensor::zeros(&[e]), false),
            ),
            pos_l: store.add("dec.pos_l", normal_tensor(rng, &[d, config.slot_dim], std), true),
            pos_r: store.add("dec.pos_r", normal_tensor(rng, &[d, config.slot_dim], std), true),
        };
        Ok(Self {
            config,
            vocab: vocab.clone(),
            embedding,
            word_pos,
            heads,
            transformer,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Hidden states for a batch; `words` is `[batch * k, d]`. Returns the
    /// stacked `[batch * len, d]` states and the padded length.
    pub fn hidden<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        words: Var,
        seqs: &[&FtSeq],
        perms: &[&SlotPermutation],
    ) -> Result<(Var, usize), ModelError> {
        let k = self.config.words;
        let b = seqs.len();
        if perms.len() != b {
            return Err(ModelError::Config(format!("{} permutations for {b} sequences", perms.len())));
        }
        if tape.value(words).rows() != b * k {
            return Err(ModelError::Config(format!(
                "{} word rows for {b} sequences of {k} words",
                tape.value(words).rows()
            )));
        }
        let wp = tape.param(store, self.word_pos);
        let tiled: Vec<usize> = (0..b).flat_map(|_| 0..k).collect();
        let wp = tape.embedding(wp, &tiled)?;
        let words = tape.add(words, wp)?;
        let table = tape.param(store, self.embedding.table);
        let special = tape.embedding(table, &[self.vocab.special.bos, self.vocab.special.pad])?;
        let mut parts = vec![words, special];
        let (bos_row, pad_row) = (b * k, b * k + 1);
        let toks: Vec<(Token, usize)> = seqs
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.tokens().iter().map(move |&t| (t, i)))
            .collect();
        if !toks.is_empty() {
            parts.push(self.embedding.embed(tape, store, &toks, perms)?);
        }
        let pool = tape.concat_rows(&parts)?;

        let mut layout = Vec::with_capacity(b);
        let mut masks = Vec::with_capacity(b);
        let mut next = b * k + 2;
        for (i, s) in seqs.iter().enumerate() {
            let mut rows: Vec<usize> = (i * k..(i + 1) * k).collect();
            rows.push(bos_row);
            rows.extend(next..next + s.len());
            next += s.len();
            masks.push(build_block_mask(&seq_blocks(s)?, k + 1)?);
            layout.push(rows);
        }
        let len = layout.iter().map(Vec::len).max().unwrap_or(k + 1);
        if len > self.config.context_limit() {
            return Err(ModelError::ContextOverflow {
                len,
                limit: self.config.context_limit(),
            });
        }
        let x = assemble(tape, pool, &layout, len, pad_row)?;
        let mask = AttentionMask::from_fn(b, len, |bb, i, j| {
            let n = masks[bb].len();
            j < n && (i >= n || masks[bb][i][j])
        });
        let h = self.transformer.forward(tape, store, x, &Rc::new(mask))?;
        Ok((h, len))
    }

    fn plan<T: Scalar>(&self, seqs: &[&FtSeq], perms: &[&SlotPermutation], len: usize) -> Result<LossPlan<T>, ModelError> {
        let k = self.config.words;
        let mut p = LossPlan {
            bos_pos: Vec::new(),
            atom_targets: Vec::new(),
            edge_pos: Vec::new(),
            edge_targets: Vec::new(),
            attach_pos: Vec::new(),
            left_rows: Vec::new(),
            right_rows: Vec::new(),
            _marker: std::marker::PhantomData,
        };
        let slots = self.config.slots;
        for (b, s) in seqs.iter().enumerate() {
            let slot = |s: usize| match perms[b].row(s) {
                Some(r) if r < slots => Ok(Some(r)),
                _ => Err(ModelError::SlotOverflow { slot: s, slots }),
            };
            let base = b * len + k + 1;
            let blocks = blocks_of(s)?;
            let toks = s.tokens();
            p.bos_pos.push(Some(b * len + k));
            p.atom_targets.push(toks[0].dict_id());
            for (i, r) in blocks.iter().enumerate() {
                let pos = Some(base + r.end - 1);
                p.edge_pos.push(pos);
                match blocks.get(i + 1).map(|n| toks[n.start]) {
                    Some(Token::Edge { bond, left, right }) => {
                        p.edge_targets.push(bond);
                        p.attach_pos.push(pos);
                        p.left_rows.push(slot(left)?);
                        p.right_rows.push(slot(right)?);
                    }
                    Some(Token::Node { .. }) => {
                        return Err(ModelError::Blocks(format!("block {} starts with a node", i + 1)));
                    }
                    None => p.edge_targets.push(self.vocab.eos_class()),
                }
            }
        }
        Ok(p)
    }

    /// Teacher-forced `(L_token, L_attach)`, each summed over the batch,
    /// with slots mapped to codebook rows in order.
    pub fn losses<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        words: Var,
        seqs: &[&FtSeq],
    ) -> Result<(Var, Var), ModelError> {
        let ident = SlotPermutation::identity(self.config.slots);
        self.losses_permuted(tape, store, words, seqs, &vec![&ident; seqs.len()])
    }

    /// As [`Decoder::losses`], with slot `s` of sequence `b` read from
    /// codebook row `perms[b].row(s)`, both in the input embedding and in
    /// the attachment targets.
    pub fn losses_permuted<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        words: Var,
        seqs: &[&FtSeq],
        perms: &[&SlotPermutation],
    ) -> Result<(Var, Var), ModelError> {
        let (h, len) = self.hidden(tape, store, words, seqs, perms)?;
        let plan: LossPlan<T> = self.plan(seqs, perms, len)?;

        let (wv, bv) = (tape.param(store, self.heads.pred_v.0), tape.param(store, self.heads.pred_v.1));
        let hb = tape.gather_rows(h, &plan.bos_pos)?;
        let lv = tape.linear(hb, wv, Some(bv))?;
        let ce_v = tape.cross_entropy(lv, &plan.atom_targets)?;

        let (we, be) = (tape.param(store, self.heads.pred_e.0), tape.param(store, self.heads.pred_e.1));
        let he = tape.gather_rows(h, &plan.edge_pos)?;
        let le = tape.linear(he, we, Some(be))?;
        let ce_e = tape.cross_entropy(le, &plan.edge_targets)?;
        let l_token = tape.add(ce_v, ce_e)?;

        let terms = 2 * plan.attach_pos.len();
        if terms == 0 {
            let zero = tape.leaf(Tensor::scalar(T::zero()));
            return Ok((l_token, zero));
        }
        let o = tape.param(store, self.embedding.codebook);
        let ha = tape.gather_rows(h, &plan.attach_pos)?;
        let (pl, pr) = (tape.param(store, self.heads.pos_l), tape.param(store, self.heads.pos_r));
        let gl = tape.linear(ha, pl, None)?;
        let gr = tape.linear(ha, pr, None)?;
        let gl = tape.l2_normalize_rows(gl);
        let gr = tape.l2_normalize_rows(gr);
        let tl = tape.gather_rows(o, &plan.left_rows)?;
        let tr = tape.gather_rows(o, &plan.right_rows)?;
        let sl = tape.row_dot(gl, tl)?;
        let sr = tape.row_dot(gr, tr)?;
        let s = tape.concat_rows(&[sl, sr])?;
        let s = tape.sum(s);

        let m = self.config.slots;
        let ot = tape.transpose(o)?;
        let gram = tape.matmul(o, ot)?;
        let mut off = Tensor::<T>::zeros(&[m, m]);
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    off.data_mut()[i * m + j] = T::one();
                }
            }
        }
        let gram = tape.mul_const(gram, &off)?;
        let gram = tape.abs(gram);
        let neg = tape.sum(gram);
        let neg_mean = if m > 1 {
            tape.scale(neg, T::of(1.0 / (m * (m - 1)) as f64))
        } else {
            tape.scale(neg, T::zero())
        };
        let n = T::of(terms as f64);
        let pos_part = tape.scale(s, -T::one());
        let pos_part = tape.add_scalar(pos_part, n);
        let neg_part = tape.scale(neg_mean, n);
        let l_attach = tape.add(pos_part, neg_part)?;
        Ok((l_token, l_attach))
    }

    /// Loss values for a single example given its words (`[k, d]`).
    pub fn teacher_forced_losses<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        words: &Tensor<T>,
        seq: &FtSeq,
    ) -> Result<(T, T), ModelError> {
        let mut tape = Tape::new();
        let w = tape.leaf(words.clone());
        let (a, b) = self.losses(&mut tape, store, w, &[seq])?;
        Ok((tape.value(a).item(), tape.value(b).item()))
    }

    /// Hidden states `[k + 1 + len, d]` of one sequence.
    pub fn hidden_states<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        words: &Tensor<T>,
        seq: &FtSeq,
    ) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let w = tape.leaf(words.clone());
        let ident = SlotPermutation::identity(self.config.slots);
        let (h, _) = self.hidden(&mut tape, store, w, &[seq], &[&ident])?;
        Ok(tape.value(h).clone())
    }

    fn head<T: Scalar>(store: &ParamStore<T>, h: &[T], w: ParamId, b: Option<ParamId>) -> Vec<T> {
        let w = store.value(w);
        let n = w.cols();
        let mut out = match b {
            Some(b) => store.value(b).data().to_vec(),
            None => vec![T::zero(); n],
        };
        for (p, &hp) in h.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(w.row(p)) {
                *o = *o + hp * wv;
            }
        }
        out
    }

    /// Step 0: first atom id from the hidden state at `[BOS]`.
    pub fn step0_first_node<T: Scalar>(&self, store: &ParamStore<T>, words: &Tensor<T>) -> Result<usize, ModelError> {
        let h = self.hidden_states(store, words, &FtSeq::default())?;
        let logits = Self::head(store, h.row(self.config.words), self.heads.pred_v.0, Some(self.heads.pred_v.1));
        Ok(argmax(&logits))
    }

    fn choose<T: Scalar>(logits: &[T], sampling: Sampling, rng: &mut ChaCha8Rng) -> usize {
        match sampling {
            Sampling::Greedy => argmax(logits),
            Sampling::Temperature { temperature, .. } if temperature <= 0.0 => argmax(logits),
            Sampling::Temperature { temperature, .. } => {
                let l: Vec<f64> = logits.iter().map(|x| x.to_f64().unwrap_or(f64::NEG_INFINITY) / temperature).collect();
                let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let p: Vec<f64> = l.iter().map(|x| (x - max).exp()).collect();
                let mut u = rng.random::<f64>() * p.iter().sum::<f64>();
                for (i, &pi) in p.iter().enumerate() {
                    if u < pi {
                        return i;
                    }
                    u -= pi;
                }
                argmax(logits)
            }
        }
    }

    /// Autoregressive decoding of one set of words (`[k, d]`).
    pub fn generate<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        words: &Tensor<T>,
        sampling: Sampling,
    ) -> Result<Generation, ModelError> {
        let seed = match sampling {
            Sampling::Temperature { seed, .. } => seed,
            Sampling::Greedy => 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.config.words;
        let m = self.config.slots;
        let edge_width = self.vocab.edge_classes();
        let codebook = store.value(self.embedding.codebook);
        let mut seq = FtSeq::default();
        let mut trace = Vec::new();

        let h = self.hidden_states(store, words, &seq)?;
        let logits = Self::head(store, h.row(k), self.heads.pred_v.0, Some(self.heads.pred_v.1));
        let atom = Self::choose(&logits, sampling, &mut rng);
        trace.push(StepRecord::FirstNode {
            atom,
            width: ATOM_CLASSES,
        });
        seq.push(Token::Node { atom, pos: 0 });
        let mut elements = vec![atom as u8 + 1];
        let mut edges: HashSet<(usize, usize)> = HashSet::new();
        let mut blocks = 1;

        let status = loop {
            if blocks >= self.config.max_blocks {
                break Status::Truncated;
            }
            let h = self.hidden_states(store, words, &seq)?;
            let last = h.row(k + seq.len());
            let logits = Self::head(store, last, self.heads.pred_e.0, Some(self.heads.pred_e.1));
            let bond = Self::choose(&logits, sampling, &mut rng);
            if bond == self.vocab.eos_class() {
                trace.push(StepRecord::Eos { width: edge_width });
                break Status::Complete;
            }
            let j = elements.len();
            let gl = Self::head(store, last, self.heads.pos_l, None);
            let gr = Self::head(store, last, self.heads.pos_r, None);
            let (left, left_similarity) = step2_left_attach(&gl, codebook, j);
            let placement = step3_right_place(&gr, codebook, j, self.config.epsilon);
            trace.push(StepRecord::Edge {
                bond,
                width: edge_width,
                left,
                left_similarity,
                placement,
            });
            let t = self.vocab.bonds.decode(bond)?;
            let Some(far) = t.far_endpoint(elements[left]) else {
                break Status::Invalid(Invalid::ElementMismatch);
            };
            match placement {
                Placement::Existing { node, .. } => {
                    if node == left {
                        break Status::Invalid(Invalid::SelfLoop);
                    }
                    if !t.joins(elements[left], elements[node]) {
                        break Status::Invalid(Invalid::ElementMismatch);
                    }
                    if !edges.insert((left.min(node), left.max(node))) {
                        break Status::Invalid(Invalid::DuplicateEdge);
                    }
                    seq.push(Token::Edge {
                        bond,
                        left,
                        right: node,
                    });
                }
                Placement::New { slot, .. } => {
                    if slot >= m {
                        break Status::Invalid(Invalid::SlotExhausted);
                    }
                    edges.insert((left, slot));
                    seq.push(Token::Edge {
                        bond,
                        left,
                        right: slot,
                    });
                    seq.push(Token::Node {
                        atom: far as usize - 1,
                        pos: slot,
                    });
                    elements.push(far);
                }
            }
            blocks += 1;
        };

        let (graph, status) = match status {
            Status::Invalid(_) => (None, status),
            _ => match unflatten(&seq, &self.vocab.bonds) {
                Err(e) => (None, Status::Invalid(Invalid::Malformed(e.to_string()))),
                Ok(g) => match check_valence(&g) {
                    Ok(true) => (Some(g), status),
                    _ => (Some(g), Status::Invalid(Invalid::Valence)),
                },
            },
        };
        Ok(Generation {
            seq,
            graph,
            status,
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::chem::parse_smiles;
    use crate::ftseq::flatten;
    use crate::tensor::gradcheck::check_params;
    use crate::vocab::build_bond_dict;

    fn brute_mask(blocks: &[Range<usize>], prefix: usize, i: usize, j: usize) -> bool {
        let which = |p: usize| -> Option<usize> {
            if p < prefix {
                None
            } else {
                blocks.iter().position(|r| r.contains(&(p - prefix)))
            }
        };
        match (which(i), which(j)) {
            (_, None) => true,
            (None, Some(_)) => false,
            (Some(a), Some(b)) => b <= a,
        }
    }

    fn random_layout(rng: &mut ChaCha8Rng, total: usize) -> Vec<Range<usize>> {
        let mut blocks = Vec::new();
        let mut s = 0;
        while s < total {
            let w = rng.random_range(1..=2).min(total - s);
            blocks.push(s..s + w);
            s += w;
        }
        blocks
    }

    #[test]
    fn block_mask_matches_pairwise_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let prefix = rng.random_range(1..=9);
            let total = rng.random_range(0..=64 - prefix);
            let blocks = random_layout(&mut rng, total);
            let m = build_block_mask(&blocks, prefix).unwrap();
            for i in 0..prefix + total {
                for j in 0..prefix + total {
                    assert_eq!(m[i][j], brute_mask(&blocks, prefix, i, j));
                }
            }
        }
    }

    #[test]
    fn block_mask_special_layouts() {
        // a single block sees everything; the prefix sees only itself
        let m = build_block_mask(&[0..2], 2).unwrap();
        assert!(m[2..].iter().flatten().all(|&x| x));
        assert_eq!(m[0], vec![true, true, false, false]);
        // prefix + [v1] + [e, v]: the prefix cannot see ahead
        let m = build_block_mask(&[0..1, 1..3], 2).unwrap();
        assert_eq!(m[0], vec![true, true, false, false, false]);
        assert_eq!(m[2], vec![true, true, true, false, false]);
        assert_eq!(m[3], vec![true; 5]);
        assert!(build_block_mask(&[0..2, 1..3], 1).is_err());
        assert!(build_block_mask(&[0..1, 2..3], 1).is_err());
    }

    #[test]
    fn left_attach_cases() {
        let cb = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap();
        assert_eq!(step2_left_attach(&[0.0, 2.0], &cb, 3).0, 1);
        assert_eq!(step2_left_attach(&[-5.0, 1.0], &cb, 1).0, 0);
        // ties go to the lower index
        assert_eq!(step2_left_attach(&[1.0, 1.0], &cb, 2).0, 0);
    }

    #[test]
    fn right_place_threshold_is_strict() {
        let cb = Tensor::from_vec(&[2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        // cosine exactly 0.5 with row 0
        let g = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(cosine_scores(&g, &cb, 1), vec![0.5]);
        assert!(matches!(step3_right_place(&g, &cb, 1, 0.5), Placement::New { slot: 1, .. }));
        assert!(matches!(
            step3_right_place(&[0.0, 3.0, 0.0, 0.0], &cb, 2, 0.5),
            Placement::Existing { node: 1, .. }
        ));
    }

    fn toy(words: usize) -> (Vocabulary, ParamStore<f64>, Decoder, Vec<FtSeq>) {
        let mols: Vec<_> = ["CCO", "C1CC1", "C=CN", "c1ccccc1O", "C"]
            .iter()
            .map(|s| parse_smiles(s).unwrap())
            .collect();
        let vocab = Vocabulary::new(build_bond_dict(mols.iter(), 64).unwrap());
        let seqs = mols.iter().map(|g| flatten(g, 0, &vocab.bonds).unwrap()).collect();
        let cfg = DecoderConfig {
            layers: 1,
            heads: 2,
            hidden: 8,
            words,
            slot_dim: 4,
            slots: 8,
            ..DecoderConfig::default()
        };
        let mut store = ParamStore::new();
        let dec = Decoder::new(&mut store, &vocab, cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        (vocab, store, dec, seqs)
    }

    fn random_words(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Tensor<f64> {
        normal_tensor(rng, &[rows, d], 1.0)
    }

    #[test]
    fn later_blocks_do_not_change_earlier_states() {
        let (vocab, store, dec, _) = toy(2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_words(&mut rng, 2, 8);
        let a = flatten(&parse_smiles("CCO").unwrap(), 0, &vocab.bonds).unwrap();
        // same first two blocks, different third block
        let b = flatten(&parse_smiles("CCN").unwrap(), 0, &vocab.bonds).unwrap();
        let ha = dec.hidden_states(&store, &w, &a).unwrap();
        let hb = dec.hidden_states(&store, &w, &b).unwrap();
        // prefix (3) plus blocks [v1] and [e1, v2] are unchanged
        for r in 0..6 {
            assert_eq!(ha.row(r), hb.row(r));
        }
        assert_ne!(ha.row(6), hb.row(6));
    }

    #[test]
    fn batched_losses_equal_sum_of_single_losses() {
        let (_, store, dec, seqs) = toy(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_words(&mut rng, 2 * seqs.len(), 8);
        let mut tape = Tape::new();
        let wv = tape.leaf(w.clone());
        let refs: Vec<&FtSeq> = seqs.iter().collect();
        let (a, b) = dec.losses(&mut tape, &store, wv, &refs).unwrap();
        let (mut sa, mut sb) = (0.0, 0.0);
        for (i, s) in seqs.iter().enumerate() {
            let wi = Tensor::from_vec(&[2, 8], w.data()[i * 16..(i + 1) * 16].to_vec()).unwrap();
            let (x, y) = dec.teacher_forced_losses(&store, &wi, s).unwrap();
            sa += x;
            sb += y;
        }
        assert!((tape.value(a).item() - sa).abs() < 1e-9);
        assert!((tape.value(b).item() - sb).abs() < 1e-9);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let (_, mut store, dec, seqs) = toy(1);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w = random_words(&mut rng, seqs.len(), 8);
        let refs: Vec<&FtSeq> = seqs.iter().collect();
        let r = check_params(&mut store, 1e-4, 6, |tape, s| -> Result<Var, ModelError> {
            let wv = tape.leaf(w.clone());
            let (a, b) = dec.losses(tape, s, wv, &refs)?;
            Ok(tape.add(a, b)?)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn generation_trace_is_consistent() {
        let (vocab, store, dec, _) = toy(1);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let w = random_words(&mut rng, 1, 8);
            let g = dec.generate(&store, &w, Sampling::Greedy).unwrap();
            assert_eq!(g, dec.generate(&store, &w, Sampling::Greedy).unwrap());
            assert!(matches!(g.trace[0], StepRecord::FirstNode { width: 118, .. }));
            for s in &g.trace[1..] {
                assert_eq!(s.width(), vocab.edge_classes());
            }
            if let (Status::Complete, Some(graph)) = (&g.status, &g.graph) {
                assert_eq!(g.seq.len(), graph.atom_count() + graph.bond_count());
            }
        }
    }
}
