//! Lossless graph <-> token-sequence codec.
//!
//! A graph is flattened by depth-first search from a start atom: the start
//! node first, then every edge in DFS order, each followed by its far node
//! when that node is new. Nodes carry a symbolic position slot (the order in
//! which they were introduced); edges carry the slots of their two ends.

mod codebook;

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::ops::Range;

use thiserror::Error;

use crate::chem::{Atom, Bond, ChemError, MolecularGraph};
use crate::vocab::{AtomDict, BondDict, VocabError};

pub use codebook::{normalize_rows, shuffle_codebook, SlotPermutation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FtSeqError {
    #[error("graph is disconnected")]
    Disconnected,
    #[error("start atom {0} out of range")]
    StartOutOfRange(usize),
    #[error("graph has no atoms")]
    Empty,
    #[error("sequence must start with a node token")]
    NoLeadingNode,
    #[error("token {0}: edge refers to slot {1} before it is introduced")]
    DanglingLeft(usize, usize),
    #[error("token {0}: new slot {1} is not followed by its node token")]
    MissingNode(usize, usize),
    #[error("token {0}: node token without an introducing edge")]
    OrphanNode(usize),
    #[error("token {0}: element disagrees with the bond type")]
    ElementMismatch(usize),
    #[error("token {0}: duplicate edge or self-loop")]
    DuplicateEdge(usize),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Chem(#[from] ChemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Node,
    Edge,
}

impl Segment {
    pub fn index(self) -> usize {
        match self {
            Segment::Node => 0,
            Segment::Edge => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Node { atom: usize, pos: usize },
    Edge { bond: usize, left: usize, right: usize },
}

impl Token {
    pub fn segment(&self) -> Segment {
        match self {
            Token::Node { .. } => Segment::Node,
            Token::Edge { .. } => Segment::Edge,
        }
    }

    /// The (left, right) slot pair; a node uses its own slot twice.
    pub fn slots(&self) -> (usize, usize) {
        match *self {
            Token::Node { pos, .. } => (pos, pos),
            Token::Edge { left, right, .. } => (left, right),
        }
    }

    pub fn dict_id(&self) -> usize {
        match *self {
            Token::Node { atom, .. } => atom,
            Token::Edge { bond, .. } => bond,
        }
    }
}

/// A flexible token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FtSeq {
    tokens: Vec<Token>,
}

impl FtSeq {
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        Self { tokens }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn push(&mut self, t: Token) {
        self.tokens.push(t);
    }

    pub fn node_count(&self) -> usize {
        self.tokens
            .iter()
            .filter(|t| t.segment() == Segment::Node)
            .count()
    }

    pub fn edge_count(&self) -> usize {
        self.tokens.len() - self.node_count()
    }

    /// Largest slot referenced, if any.
    pub fn max_slot(&self) -> Option<usize> {
        self.tokens.iter().map(|t| t.slots().0.max(t.slots().1)).max()
    }

    /// Tab-separated dump, one token per line: kind, dictionary id, slots.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            let _ = match *t {
                Token::Node { atom, pos } => writeln!(out, "node\t{atom}\t{pos}\t{pos}"),
                Token::Edge { bond, left, right } => writeln!(out, "edge\t{bond}\t{left}\t{right}"),
            };
        }
        out
    }
}

/// Atom indices in the order the flattening introduced them; slot `i` is
/// atom `order[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flattened {
    pub seq: FtSeq,
    pub order: Vec<usize>,
}

/// DFS flattening from `start`, visiting neighbours in ascending atom index.
pub fn flatten(g: &MolecularGraph, start: usize, bonds: &BondDict) -> Result<FtSeq, FtSeqError> {
    flatten_with_order(g, start, bonds).map(|f| f.seq)
}

pub fn flatten_with_order(
    g: &MolecularGraph,
    start: usize,
    bonds: &BondDict,
) -> Result<Flattened, FtSeqError> {
    let n = g.atom_count();
    if n == 0 {
        return Err(FtSeqError::Empty);
    }
    if start >= n {
        return Err(FtSeqError::StartOutOfRange(start));
    }
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, b) in g.bonds().iter().enumerate() {
        adj[b.left].push((b.right, i));
        adj[b.right].push((b.left, i));
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    let bond_ids = g
        .bonds()
        .iter()
        .map(|b| bonds.encode(b, g))
        .collect::<Result<Vec<_>, _>>()?;

    let mut slot = vec![usize::MAX; n];
    let mut emitted = vec![false; g.bond_count()];
    let mut order = vec![start];
    let mut tokens = Vec::with_capacity(n + g.bond_count());
    slot[start] = 0;
    tokens.push(Token::Node {
        atom: AtomDict.encode(g.atoms()[start]),
        pos: 0,
    });
    let mut stack = vec![(start, 0usize)];
    while let Some(top) = stack.last_mut() {
        let (u, cursor) = *top;
        if cursor == adj[u].len() {
            stack.pop();
            continue;
        }
        top.1 += 1;
        let (w, b) = adj[u][cursor];
        if emitted[b] {
            continue;
        }
        emitted[b] = true;
        let fresh = slot[w] == usize::MAX;
        if fresh {
            slot[w] = order.len();
            order.push(w);
        }
        tokens.push(Token::Edge {
            bond: bond_ids[b],
            left: slot[u],
            right: slot[w],
        });
        if fresh {
            tokens.push(Token::Node {
                atom: AtomDict.encode(g.atoms()[w]),
                pos: slot[w],
            });
            stack.push((w, 0));
        }
    }
    if order.len() != n {
        return Err(FtSeqError::Disconnected);
    }
    Ok(Flattened {
        seq: FtSeq { tokens },
        order,
    })
}

/// Rebuilds the graph; atom `i` is the `i`-th node token. Node elements are
/// cross-checked against the bond types that introduce them.
pub fn unflatten(seq: &FtSeq, bonds: &BondDict) -> Result<MolecularGraph, FtSeqError> {
    let tokens = seq.tokens();
    let Some(&Token::Node { atom, pos }) = tokens.first() else {
        return Err(FtSeqError::NoLeadingNode);
    };
    let mut atoms: Vec<Atom> = vec![AtomDict.decode(atom)?];
    let mut index: HashMap<usize, usize> = HashMap::from([(pos, 0)]);
    let mut edges: Vec<Bond> = Vec::new();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut i = 1;
    while i < tokens.len() {
        let (bond, left, right) = match tokens[i] {
            Token::Edge { bond, left, right } => (bond, left, right),
            Token::Node { .. } => return Err(FtSeqError::OrphanNode(i)),
        };
        let t = bonds.decode(bond)?;
        let &l = index.get(&left).ok_or(FtSeqError::DanglingLeft(i, left))?;
        let zl = atoms[l].atomic_number();
        let Some(far) = t.far_endpoint(zl) else {
            return Err(FtSeqError::ElementMismatch(i));
        };
        let r = match index.get(&right) {
            Some(&r) => {
                if !t.joins(zl, atoms[r].atomic_number()) {
                    return Err(FtSeqError::ElementMismatch(i));
                }
                r
            }
            None => {
                let Some(&Token::Node { atom, pos }) = tokens.get(i + 1) else {
                    return Err(FtSeqError::MissingNode(i, right));
                };
                if pos != right {
                    return Err(FtSeqError::MissingNode(i, right));
                }
                let a = AtomDict.decode(atom)?;
                if a.atomic_number() != far {
                    return Err(FtSeqError::ElementMismatch(i + 1));
                }
                atoms.push(a);
                index.insert(pos, atoms.len() - 1);
                i += 1;
                atoms.len() - 1
            }
        };
        if l == r || !seen.insert((l.min(r), l.max(r))) {
            return Err(FtSeqError::DuplicateEdge(i));
        }
        edges.push(Bond::new(l, r, t.order));
        i += 1;
    }
    Ok(MolecularGraph::new(atoms, edges)?.with_origin(Some(0)))
}

/// Splits a sequence into generation blocks: the leading node, then each
/// edge together with the node it introduces (if any).
pub fn blocks_of(seq: &FtSeq) -> Result<Vec<Range<usize>>, FtSeqError> {
    let tokens = seq.tokens();
    match tokens.first() {
        Some(Token::Node { .. }) => {}
        _ => return Err(FtSeqError::NoLeadingNode),
    }
    let mut blocks = vec![0..1];
    let mut i = 1;
    while i < tokens.len() {
        if tokens[i].segment() != Segment::Edge {
            return Err(FtSeqError::OrphanNode(i));
        }
        let end = if matches!(tokens.get(i + 1), Some(Token::Node { .. })) {
            i + 2
        } else {
            i + 1
        };
        blocks.push(i..end);
        i = end;
    }
    Ok(blocks)
}
