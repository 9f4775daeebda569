//! Self-consistency of decoding under random input orders.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::valid_canonical;
use super::GenError;
use crate::chem::MolecularGraph;
use crate::ftseq::{flatten, shuffle_codebook, unflatten};
use crate::training::Model;
use crate::vocab::BondDict;

#[derive(Debug, Clone, Copy)]
pub enum ConsistencyMode<'a> {
    /// Shuffle the atom order and round-trip through the codec alone.
    Codec(&'a BondDict),
    /// Encode under a fresh codebook shuffle and decode greedily.
    Model(&'a Model),
}

/// Decoded outcomes of one molecule under `n` random orders (`None` when
/// a decoding is not a valid molecule).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcomes {
    pub source: String,
    pub decoded: Vec<Option<String>>,
}

impl Outcomes {
    /// Size of the largest group of identical valid decodings.
    pub fn max_agreement(&self) -> usize {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for c in self.decoded.iter().flatten() {
            *counts.entry(c).or_default() += 1;
        }
        counts.values().copied().max().unwrap_or(0)
    }

    pub fn consistency(&self) -> f64 {
        if self.decoded.is_empty() {
            return 0.0;
        }
        self.max_agreement() as f64 / self.decoded.len() as f64
    }
}

pub fn permutation_consistency(
    g: &MolecularGraph,
    n: usize,
    mode: ConsistencyMode<'_>,
    seed: u64,
) -> Result<Outcomes, GenError> {
    let source = valid_canonical(g).ok_or_else(|| GenError::Input("source molecule is not valid".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut decoded = Vec::with_capacity(n);
    for _ in 0..n {
        let out = match mode {
            ConsistencyMode::Codec(bonds) => {
                let mut order: Vec<usize> = (0..g.atom_count()).collect();
                order.shuffle(&mut rng);
                let h = g.permuted(&order)?.with_origin(None);
                let seq = flatten(&h, 0, bonds)?;
                valid_canonical(&unflatten(&seq, bonds)?)
            }
            ConsistencyMode::Model(model) => {
                let perm = shuffle_codebook(model.config.slots, rng.random());
                let gen = model.reconstruct(g, &perm)?;
                match (&gen.graph, gen.is_valid()) {
                    (Some(h), true) => valid_canonical(h),
                    _ => None,
                }
            }
        };
        decoded.push(out);
    }
    Ok(Outcomes { source, decoded })
}

/// Consistency over a molecule set.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub n: usize,
    pub molecules: Vec<Outcomes>,
}

impl ConsistencyReport {
    pub fn run(graphs: &[MolecularGraph], n: usize, mode: ConsistencyMode<'_>, seed: u64) -> Result<Self, GenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let molecules = graphs
            .iter()
            .map(|g| permutation_consistency(g, n, mode, rng.random()))
            .collect::<Result<_, _>>()?;
        Ok(Self { n, molecules })
    }

    /// Mean per-molecule consistency.
    pub fn average(&self) -> f64 {
        if self.molecules.is_empty() {
            return 0.0;
        }
        self.molecules.iter().map(Outcomes::consistency).sum::<f64>() / self.molecules.len() as f64
    }

    /// Fraction of molecules with at least `q` agreeing decodings.
    pub fn c_at(&self, q: usize) -> f64 {
        if self.molecules.is_empty() {
            return 0.0;
        }
        let hit = self.molecules.iter().filter(|m| m.max_agreement() >= q).count();
        hit as f64 / self.molecules.len() as f64
    }

    /// Agreement thresholds N/4, N/2, 3N/4 and N (at least 1).
    pub fn thresholds(&self) -> [usize; 4] {
        let n = self.n;
        [(n / 4).max(1), (n / 2).max(1), (3 * n / 4).max(1), n.max(1)]
    }

    /// `C@q` per threshold, then the average, as `name<TAB>value` lines.
    pub fn tsv(&self) -> String {
        let mut out = String::from("measure\tvalue\n");
        for q in self.thresholds() {
            let _ = writeln!(out, "C@{q}\t{:.6}", self.c_at(q));
        }
        let _ = writeln!(out, "avg\t{:.6}", self.average());
        out
    }
}
