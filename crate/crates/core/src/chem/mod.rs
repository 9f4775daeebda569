//! Heavy-atom molecular graphs: data model, SMILES subset I/O, valence
//! rules and canonical identity.

mod canon;
mod elements;
pub mod io;
mod iso;
pub mod random;
mod smiles;
mod valence;

use std::fmt;

use thiserror::Error;

pub use canon::{canonical_form, MAX_CANONICAL_ATOMS};
pub use elements::{element_symbol, lookup_symbol, MAX_ATOMIC_NUMBER};
pub use iso::is_isomorphic;
pub use smiles::{parse_smiles, write_smiles};
pub use valence::{check_valence, max_valence, ValenceTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChemError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unsupported SMILES feature at position {pos}: {feature}")]
    Unsupported { pos: usize, feature: &'static str },
    #[error("molecule is disconnected")]
    Disconnected,
    #[error("valence exceeded on atom {atom} ({element})")]
    Valence { atom: usize, element: &'static str },
    #[error("no valence rule for element {0}")]
    UnsupportedElement(&'static str),
    #[error("atomic number {0} outside 1..=118")]
    AtomicNumber(u8),
    #[error("bond ({0}, {1}) is invalid")]
    InvalidBond(usize, usize),
    #[error("graph has {0} atoms; canonical form supports at most {MAX_CANONICAL_ATOMS}")]
    TooLarge(usize),
    #[error("canonical search exceeded its leaf budget")]
    SearchBudget,
    #[error("molecule has no atoms")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    atomic_number: u8,
}

impl Atom {
    pub fn new(atomic_number: u8) -> Result<Self, ChemError> {
        if atomic_number == 0 || atomic_number > MAX_ATOMIC_NUMBER {
            return Err(ChemError::AtomicNumber(atomic_number));
        }
        Ok(Self { atomic_number })
    }

    pub fn atomic_number(self) -> u8 {
        self.atomic_number
    }

    pub fn symbol(self) -> &'static str {
        element_symbol(self.atomic_number)
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [
        BondOrder::Single,
        BondOrder::Double,
        BondOrder::Triple,
        BondOrder::Aromatic,
    ];

    /// Contribution to an atom's valence; aromatic bonds count 1.5.
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BondOrder::Single => "single",
            BondOrder::Double => "double",
            BondOrder::Triple => "triple",
            BondOrder::Aromatic => "aromatic",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == s)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub left: usize,
    pub right: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn new(left: usize, right: usize, order: BondOrder) -> Self {
        Self { left, right, order }
    }

    /// The endpoint opposite `atom`, if `atom` is an endpoint.
    pub fn other(&self, atom: usize) -> Option<usize> {
        if self.left == atom {
            Some(self.right)
        } else if self.right == atom {
            Some(self.left)
        } else {
            None
        }
    }

    fn key(&self) -> (usize, usize) {
        (self.left.min(self.right), self.left.max(self.right))
    }
}

/// A simple undirected graph of heavy atoms joined by typed bonds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    origin_first_atom: Option<usize>,
}

impl MolecularGraph {
    /// Builds a graph, rejecting self-loops, duplicate bonds and dangling
    /// indices. Connectivity and valence are not checked here.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, ChemError> {
        let mut seen = std::collections::HashSet::with_capacity(bonds.len());
        for b in &bonds {
            if b.left == b.right || b.left >= atoms.len() || b.right >= atoms.len() {
                return Err(ChemError::InvalidBond(b.left, b.right));
            }
            if !seen.insert(b.key()) {
                return Err(ChemError::InvalidBond(b.left, b.right));
            }
        }
        Ok(Self {
            atoms,
            bonds,
            origin_first_atom: None,
        })
    }

    pub fn with_origin(mut self, origin: Option<usize>) -> Self {
        self.origin_first_atom = origin.filter(|&o| o < self.atoms.len());
        self
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn origin_first_atom(&self) -> Option<usize> {
        self.origin_first_atom
    }

    /// Adjacency lists of (neighbor, order), neighbors in ascending index.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.left].push((b.right, b.order));
            adj[b.right].push((b.left, b.order));
        }
        for list in &mut adj {
            list.sort_unstable_by_key(|&(n, _)| n);
        }
        adj
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        let key = (a.min(b), a.max(b));
        self.bonds.iter().find(|bond| bond.key() == key)
    }

    pub fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return false;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(w, _) in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.atoms.len()
    }

    /// Number of independent cycles (bonds - atoms + components).
    pub fn ring_count(&self) -> usize {
        if self.atoms.is_empty() {
            return 0;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.atoms.len()];
        let mut components = 0;
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for &(w, _) in &adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        self.bonds.len() + components - self.atoms.len()
    }

    /// Relabels atoms so that new index `i` holds old atom `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self, ChemError> {
        let n = self.atoms.len();
        let mut inverse = vec![usize::MAX; n];
        if order.len() != n {
            return Err(ChemError::InvalidBond(order.len(), n));
        }
        for (new, &old) in order.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(ChemError::InvalidBond(new, old));
            }
            inverse[old] = new;
        }
        let atoms = order.iter().map(|&old| self.atoms[old]).collect();
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond::new(inverse[b.left], inverse[b.right], b.order))
            .collect();
        let origin = self.origin_first_atom.map(|o| inverse[o]);
        Ok(Self::new(atoms, bonds)?.with_origin(origin))
    }

    /// Ring systems plus the chains linking them, found by repeatedly
    /// stripping terminal atoms. `None` for acyclic molecules.
    pub fn scaffold(&self) -> Option<MolecularGraph> {
        let n = self.atoms.len();
        let adj = self.adjacency();
        let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
        let mut removed = vec![false; n];
        let mut queue: Vec<usize> = (0..n).filter(|&i| degree[i] <= 1).collect();
        while let Some(u) = queue.pop() {
            if removed[u] {
                continue;
            }
            removed[u] = true;
            for &(w, _) in &adj[u] {
                if !removed[w] {
                    degree[w] -= 1;
                    if degree[w] == 1 {
                        queue.push(w);
                    }
                }
            }
        }
        let kept: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
        if kept.is_empty() {
            return None;
        }
        let mut index = vec![usize::MAX; n];
        for (new, &old) in kept.iter().enumerate() {
            index[old] = new;
        }
        let atoms = kept.iter().map(|&i| self.atoms[i]).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|b| !removed[b.left] && !removed[b.right])
            .map(|b| Bond::new(index[b.left], index[b.right], b.order))
            .collect();
        MolecularGraph::new(atoms, bonds).ok()
    }
}
