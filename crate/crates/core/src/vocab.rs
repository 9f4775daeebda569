//! Token dictionaries: 118 atom types ordered by atomic number, an
//! endpoint-typed bond dictionary scanned from a corpus, and special tokens.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::chem::{lookup_symbol, Atom, Bond, BondOrder, ChemError, MolecularGraph, MAX_ATOMIC_NUMBER};

pub const ATOM_VOCAB_SIZE: usize = MAX_ATOMIC_NUMBER as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus has more than {0} distinct bond types")]
    CapExceeded(usize),
    #[error("bond type {0} is not in the dictionary")]
    UnknownBond(BondType),
    #[error("token id {0} out of range")]
    UnknownId(usize),
    #[error("bond dictionary line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Chem(#[from] ChemError),
}

/// Atom token ids are `atomic_number - 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AtomDict;

impl AtomDict {
    pub fn len(&self) -> usize {
        ATOM_VOCAB_SIZE
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, atom: Atom) -> usize {
        atom.atomic_number() as usize - 1
    }

    pub fn decode(&self, id: usize) -> Result<Atom, VocabError> {
        if id >= ATOM_VOCAB_SIZE {
            return Err(VocabError::UnknownId(id));
        }
        Ok(Atom::new(id as u8 + 1)?)
    }
}

/// An undirected bond type: endpoint elements with `low <= high`, plus order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BondType {
    pub low: u8,
    pub high: u8,
    pub order: BondOrder,
}

impl BondType {
    pub fn new(a: u8, b: u8, order: BondOrder) -> Self {
        Self {
            low: a.min(b),
            high: a.max(b),
            order,
        }
    }

    pub fn of(bond: &Bond, g: &MolecularGraph) -> Self {
        let za = g.atoms()[bond.left].atomic_number();
        let zb = g.atoms()[bond.right].atomic_number();
        Self::new(za, zb, bond.order)
    }

    pub fn touches(&self, z: u8) -> bool {
        self.low == z || self.high == z
    }

    /// The endpoint element opposite `z`; the shared element for homonuclear
    /// bonds. `None` if `z` is not an endpoint.
    pub fn far_endpoint(&self, z: u8) -> Option<u8> {
        if self.low == z {
            Some(self.high)
        } else if self.high == z {
            Some(self.low)
        } else {
            None
        }
    }

    /// Whether this type can join atoms of elements `a` and `b`.
    pub fn joins(&self, a: u8, b: u8) -> bool {
        (self.low, self.high) == (a.min(b), a.max(b))
    }
}

impl std::fmt::Display for BondType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        use crate::chem::element_symbol;
        write!(
            f,
            "{}-{}:{}",
            element_symbol(self.low),
            element_symbol(self.high),
            self.order.name()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BondDict {
    entries: Vec<BondType>,
    index: HashMap<BondType, usize>,
}

impl BondDict {
    /// Ids follow first-occurrence order over the corpus bonds.
    pub fn from_entries(entries: Vec<BondType>) -> Self {
        let index = entries.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        Self { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BondType] {
        &self.entries
    }

    pub fn id_of(&self, t: BondType) -> Result<usize, VocabError> {
        self.index.get(&t).copied().ok_or(VocabError::UnknownBond(t))
    }

    pub fn encode(&self, bond: &Bond, g: &MolecularGraph) -> Result<usize, VocabError> {
        self.id_of(BondType::of(bond, g))
    }

    pub fn decode(&self, id: usize) -> Result<BondType, VocabError> {
        self.entries.get(id).copied().ok_or(VocabError::UnknownId(id))
    }

    /// One line per entry: `elemA elemB order id`.
    pub fn to_text(&self) -> String {
        use crate::chem::element_symbol;
        let mut out = String::new();
        for (id, t) in self.entries.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} {} {} {}",
                element_symbol(t.low),
                element_symbol(t.high),
                t.order.name(),
                id
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| VocabError::Format {
                line: i + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [a, b, order, id] = fields[..] else {
                return Err(err("expected 4 fields"));
            };
            let a = lookup_symbol(a).ok_or_else(|| err("unknown element"))?;
            let b = lookup_symbol(b).ok_or_else(|| err("unknown element"))?;
            let order = BondOrder::from_name(order).ok_or_else(|| err("unknown bond order"))?;
            let id: usize = id.parse().map_err(|_| err("bad id"))?;
            if id != entries.len() {
                return Err(err("ids must be dense and ascending"));
            }
            entries.push(BondType::new(a, b, order));
        }
        let dict = Self::from_entries(entries);
        if dict.index.len() != dict.entries.len() {
            return Err(VocabError::Format {
                line: 0,
                msg: "duplicate bond type".into(),
            });
        }
        Ok(dict)
    }
}

/// Collects the distinct bond types of a corpus in first-occurrence order.
pub fn build_bond_dict<'a, I>(corpus: I, cap: usize) -> Result<BondDict, VocabError>
where
    I: IntoIterator<Item = &'a MolecularGraph>,
{
    let mut entries = Vec::new();
    let mut seen = HashMap::new();
    let mut any = false;
    for g in corpus {
        any = true;
        for bond in g.bonds() {
            let t = BondType::of(bond, g);
            if seen.insert(t, entries.len()).is_none() {
                entries.push(t);
                if entries.len() > cap {
                    return Err(VocabError::CapExceeded(cap));
                }
            }
        }
    }
    if !any {
        return Err(VocabError::EmptyCorpus);
    }
    Ok(BondDict::from_entries(entries))
}

/// Scalar properties usable as generation conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    AtomCount,
    BondCount,
    RingCount,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::AtomCount, Condition::BondCount, Condition::RingCount];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn token(self) -> &'static str {
        match self {
            Condition::AtomCount => "[ATOMS]",
            Condition::BondCount => "[BONDS]",
            Condition::RingCount => "[RINGS]",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.token() == s || c.token().trim_matches(['[', ']']).eq_ignore_ascii_case(s))
    }

    pub fn measure(self, g: &MolecularGraph) -> f64 {
        match self {
            Condition::AtomCount => g.atom_count() as f64,
            Condition::BondCount => g.bond_count() as f64,
            Condition::RingCount => g.ring_count() as f64,
        }
    }
}

/// Special token ids, allocated after the atom and bond ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub bos: usize,
    pub eos: usize,
    pub pad: usize,
    pub gp: usize,
    first_condition: usize,
}

impl SpecialTokens {
    pub fn after(atoms: &AtomDict, bonds: &BondDict) -> Self {
        let base = atoms.len() + bonds.len();
        Self {
            bos: base,
            eos: base + 1,
            pad: base + 2,
            gp: base + 3,
            first_condition: base + 4,
        }
    }

    pub fn condition(&self, c: Condition) -> usize {
        self.first_condition + c.index()
    }

    pub fn end(&self) -> usize {
        self.first_condition + Condition::ALL.len()
    }
}

/// The complete graph vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub atoms: AtomDict,
    pub bonds: BondDict,
    pub special: SpecialTokens,
}

impl Vocabulary {
    pub fn new(bonds: BondDict) -> Self {
        let special = SpecialTokens::after(&AtomDict, &bonds);
        Self {
            atoms: AtomDict,
            bonds,
            special,
        }
    }

    /// Size of the Pred_e output: every bond type plus [EOS].
    pub fn edge_classes(&self) -> usize {
        self.bonds.len() + 1
    }

    /// Class index of [EOS] among edge predictions.
    pub fn eos_class(&self) -> usize {
        self.bonds.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    #[test]
    fn atom_ids_follow_atomic_number() {
        let c = Atom::new(6).unwrap();
        assert_eq!(AtomDict.encode(c), 5);
        let n = Atom::new(7).unwrap();
        assert_eq!(AtomDict.decode(AtomDict.encode(n)).unwrap(), n);
        for id in 0..ATOM_VOCAB_SIZE {
            assert_eq!(AtomDict.encode(AtomDict.decode(id).unwrap()), id);
        }
        assert!(AtomDict.decode(118).is_err());
    }

    #[test]
    fn ethanol_bond_dict() {
        let g = parse_smiles("CCO").unwrap();
        let dict = build_bond_dict([&g], 92).unwrap();
        assert_eq!(
            dict.entries(),
            &[
                BondType::new(6, 6, BondOrder::Single),
                BondType::new(6, 8, BondOrder::Single)
            ]
        );
        assert_ne!(dict.encode(&g.bonds()[0], &g), dict.encode(&g.bonds()[1], &g));
    }

    #[test]
    fn benzene_bond_dict() {
        let g = parse_smiles("c1ccccc1").unwrap();
        let dict = build_bond_dict([&g], 92).unwrap();
        assert_eq!(dict.entries(), &[BondType::new(6, 6, BondOrder::Aromatic)]);
    }

    #[test]
    fn endpoint_order_is_canonical() {
        assert_eq!(
            BondType::new(8, 6, BondOrder::Single),
            BondType::new(6, 8, BondOrder::Single)
        );
    }

    #[test]
    fn cap_and_empty_errors() {
        let g = parse_smiles("CC=CC#N").unwrap();
        assert_eq!(build_bond_dict([&g], 2), Err(VocabError::CapExceeded(2)));
        let none: Vec<MolecularGraph> = Vec::new();
        assert_eq!(build_bond_dict(&none, 2), Err(VocabError::EmptyCorpus));
    }

    #[test]
    fn text_round_trip_and_deterministic_ids() {
        let corpus: Vec<_> = ["CCO", "c1ccncc1", "C=O", "CCl"]
            .iter()
            .map(|s| parse_smiles(s).unwrap())
            .collect();
        let a = build_bond_dict(&corpus, 92).unwrap();
        let b = build_bond_dict(&corpus, 92).unwrap();
        assert_eq!(a, b);
        let text = a.to_text();
        assert!(text.starts_with("C C single 0\nC O single 1\n"));
        assert_eq!(BondDict::from_text(&text).unwrap(), a);
        for id in 0..a.len() {
            assert_eq!(a.id_of(a.decode(id).unwrap()).unwrap(), id);
        }
    }

    #[test]
    fn specials_are_disjoint() {
        let g = parse_smiles("CCO").unwrap();
        let v = Vocabulary::new(build_bond_dict([&g], 92).unwrap());
        let s = v.special;
        let ids = [s.bos, s.eos, s.pad, s.gp, s.condition(Condition::AtomCount)];
        assert!(ids.iter().all(|&i| i >= ATOM_VOCAB_SIZE + v.bonds.len()));
        assert_eq!(v.edge_classes(), 3);
    }

    #[test]
    fn far_endpoint() {
        let t = BondType::new(6, 8, BondOrder::Single);
        assert_eq!(t.far_endpoint(6), Some(8));
        assert_eq!(t.far_endpoint(8), Some(6));
        assert_eq!(t.far_endpoint(7), None);
        assert_eq!(BondType::new(6, 6, BondOrder::Single).far_endpoint(6), Some(6));
    }
}
