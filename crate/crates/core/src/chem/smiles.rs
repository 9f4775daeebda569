//! A SMILES subset: organic-subset and bracket atoms (no charge, isotope or
//! chirality), aromatic lowercase atoms, `- = # :` bonds, ring closures and
//! branches. Implicit hydrogens are never materialized.

use std::collections::BTreeMap;

use super::valence::first_violation;
use super::{lookup_symbol, Atom, Bond, BondOrder, ChemError, MolecularGraph};

const ORGANIC: [&str; 10] = ["Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I"];
const AROMATIC: [(&str, u8); 8] = [
    ("se", 34),
    ("as", 33),
    ("b", 5),
    ("c", 6),
    ("n", 7),
    ("o", 8),
    ("p", 15),
    ("s", 16),
];

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    aromatic: Vec<bool>,
    bonds: Vec<Bond>,
    rings: BTreeMap<u32, (usize, Option<BondOrder>, usize)>,
}

fn syntax(pos: usize, msg: impl Into<String>) -> ChemError {
    ChemError::Syntax {
        pos,
        msg: msg.into(),
    }
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn starts_with(&self, s: &str) -> bool {
        self.src[self.pos..].starts_with(s.as_bytes())
    }

    fn add_atom(&mut self, z: u8, aromatic: bool) -> Result<usize, ChemError> {
        self.atoms.push(Atom::new(z)?);
        self.aromatic.push(aromatic);
        Ok(self.atoms.len() - 1)
    }

    fn add_bond(&mut self, a: usize, b: usize, order: Option<BondOrder>, at: usize) -> Result<(), ChemError> {
        if a == b {
            return Err(syntax(at, "ring closure bonds an atom to itself"));
        }
        let key = (a.min(b), a.max(b));
        if self
            .bonds
            .iter()
            .any(|x| (x.left.min(x.right), x.left.max(x.right)) == key)
        {
            return Err(syntax(at, "duplicate bond"));
        }
        let order = order.unwrap_or(if self.aromatic[a] && self.aromatic[b] {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        });
        self.bonds.push(Bond::new(a, b, order));
        Ok(())
    }

    fn bond_symbol(&mut self) -> Result<Option<BondOrder>, ChemError> {
        let order = match self.peek() {
            Some(b'-') => BondOrder::Single,
            Some(b'=') => BondOrder::Double,
            Some(b'#') => BondOrder::Triple,
            Some(b':') => BondOrder::Aromatic,
            Some(b'/') | Some(b'\\') => {
                return Err(ChemError::Unsupported {
                    pos: self.pos,
                    feature: "directional bond",
                })
            }
            Some(b'$') => {
                return Err(ChemError::Unsupported {
                    pos: self.pos,
                    feature: "quadruple bond",
                })
            }
            _ => return Ok(None),
        };
        self.pos += 1;
        Ok(Some(order))
    }

    fn atom(&mut self) -> Result<Option<usize>, ChemError> {
        let Some(c) = self.peek() else {
            return Ok(None);
        };
        if c == b'[' {
            return self.bracket_atom().map(Some);
        }
        for sym in ORGANIC {
            if self.starts_with(sym) {
                self.pos += sym.len();
                let z = lookup_symbol(sym).expect("organic subset symbol");
                return self.add_atom(z, false).map(Some);
            }
        }
        for (sym, z) in AROMATIC {
            // two-letter aromatic symbols are only legal inside brackets
            if sym.len() == 1 && self.starts_with(sym) {
                self.pos += 1;
                return self.add_atom(z, true).map(Some);
            }
        }
        Ok(None)
    }

    fn bracket_atom(&mut self) -> Result<usize, ChemError> {
        let open = self.pos;
        self.pos += 1;
        if matches!(self.peek(), Some(b'0'..=b'9')) {
            return Err(ChemError::Unsupported {
                pos: self.pos,
                feature: "isotope",
            });
        }
        let (z, aromatic) = self.bracket_symbol()?;
        if self.peek() == Some(b'@') {
            return Err(ChemError::Unsupported {
                pos: self.pos,
                feature: "chirality",
            });
        }
        // hydrogen counts are accepted and discarded: graphs are heavy-atom only
        if self.peek() == Some(b'H') {
            self.pos += 1;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
        }
        match self.peek() {
            Some(b']') => {
                self.pos += 1;
                self.add_atom(z, aromatic)
            }
            Some(b'+') | Some(b'-') => Err(ChemError::Unsupported {
                pos: self.pos,
                feature: "charge",
            }),
            Some(b':') => Err(ChemError::Unsupported {
                pos: self.pos,
                feature: "atom class",
            }),
            Some(b'@') => Err(ChemError::Unsupported {
                pos: self.pos,
                feature: "chirality",
            }),
            _ => Err(syntax(open, "unterminated bracket atom")),
        }
    }

    fn bracket_symbol(&mut self) -> Result<(u8, bool), ChemError> {
        let start = self.pos;
        for (sym, z) in AROMATIC {
            if self.starts_with(sym) {
                self.pos += sym.len();
                return Ok((z, true));
            }
        }
        let rest = &self.src[self.pos..];
        let first = rest.first().copied().filter(u8::is_ascii_uppercase);
        let Some(first) = first else {
            return Err(syntax(start, "expected element symbol"));
        };
        if let Some(&second) = rest.get(1) {
            if second.is_ascii_lowercase() {
                let two = [first, second];
                let two = std::str::from_utf8(&two).expect("ascii");
                if let Some(z) = lookup_symbol(two) {
                    self.pos += 2;
                    return Ok((z, false));
                }
            }
        }
        let one = [first];
        let one = std::str::from_utf8(&one).expect("ascii");
        match lookup_symbol(one) {
            Some(z) => {
                self.pos += 1;
                Ok((z, false))
            }
            None => Err(syntax(start, "unknown element")),
        }
    }

    fn ring_number(&mut self) -> Result<Option<u32>, ChemError> {
        match self.peek() {
            Some(d @ b'0'..=b'9') => {
                self.pos += 1;
                Ok(Some((d - b'0') as u32))
            }
            Some(b'%') => {
                let at = self.pos;
                let digits = self.src.get(self.pos + 1..self.pos + 3);
                match digits {
                    Some([a @ b'0'..=b'9', b @ b'0'..=b'9']) => {
                        self.pos += 3;
                        Ok(Some(((a - b'0') * 10 + (b - b'0')) as u32))
                    }
                    _ => Err(syntax(at, "expected two digits after '%'")),
                }
            }
            _ => Ok(None),
        }
    }

    /// Parses a chain starting after atom `prev`, stopping at ')' or end.
    fn chain(&mut self, mut prev: usize) -> Result<(), ChemError> {
        loop {
            match self.peek() {
                None | Some(b')') => return Ok(()),
                Some(b'(') => {
                    let open = self.pos;
                    self.pos += 1;
                    let order = self.bond_symbol()?;
                    let at = self.pos;
                    let Some(next) = self.atom()? else {
                        return Err(syntax(at, "expected atom at start of branch"));
                    };
                    self.add_bond(prev, next, order, at)?;
                    self.chain(next)?;
                    if self.peek() != Some(b')') {
                        return Err(syntax(open, "unclosed branch"));
                    }
                    self.pos += 1;
                }
                Some(b'.') => return Err(ChemError::Disconnected),
                Some(_) => {
                    let at = self.pos;
                    let order = self.bond_symbol()?;
                    if let Some(num) = self.ring_number()? {
                        self.ring_closure(prev, num, order, at)?;
                        continue;
                    }
                    let at = self.pos;
                    match self.atom()? {
                        Some(next) => {
                            self.add_bond(prev, next, order, at)?;
                            prev = next;
                        }
                        None => {
                            return Err(match self.peek() {
                                Some(b'.') => ChemError::Disconnected,
                                Some(_) => syntax(at, "unexpected character"),
                                None => syntax(at, "bond at end of input"),
                            })
                        }
                    }
                }
            }
        }
    }

    fn ring_closure(&mut self, atom: usize, num: u32, order: Option<BondOrder>, at: usize) -> Result<(), ChemError> {
        match self.rings.remove(&num) {
            None => {
                self.rings.insert(num, (atom, order, at));
            }
            Some((other, first_order, _)) => {
                let order = match (first_order, order) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(syntax(at, "ring closure bond orders disagree"))
                    }
                    (a, b) => a.or(b),
                };
                self.add_bond(other, atom, order, at)?;
            }
        }
        Ok(())
    }
}

/// Parses the supported SMILES subset into a connected, valence-checked graph.
/// The first atom written in `text` is recorded as the graph's origin atom.
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, ChemError> {
    let text = text.trim();
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        aromatic: Vec::new(),
        bonds: Vec::new(),
        rings: BTreeMap::new(),
    };
    let Some(first) = p.atom()? else {
        return Err(match p.peek() {
            None => ChemError::Empty,
            Some(b'.') => ChemError::Disconnected,
            Some(_) => syntax(0, "expected atom"),
        });
    };
    p.chain(first)?;
    if let Some(&c) = p.src.get(p.pos) {
        return Err(syntax(p.pos, format!("unexpected '{}'", c as char)));
    }
    if let Some((num, &(_, _, at))) = p.rings.iter().next() {
        return Err(syntax(at, format!("ring closure {num} never closed")));
    }
    let g = MolecularGraph::new(p.atoms, p.bonds)?.with_origin(Some(0));
    if !g.is_connected() {
        return Err(ChemError::Disconnected);
    }
    if let Some(atom) = first_violation(&g)? {
        return Err(ChemError::Valence {
            atom,
            element: g.atoms()[atom].symbol(),
        });
    }
    Ok(g)
}

fn lowercase_symbol(z: u8) -> Option<&'static str> {
    AROMATIC
        .iter()
        .find(|&&(s, n)| n == z && s.len() == 1)
        .map(|&(s, _)| s)
}

/// Writes a SMILES string that parses back to a graph isomorphic to `g`.
/// Traversal starts at the graph's origin atom (or atom 0).
pub fn write_smiles(g: &MolecularGraph) -> String {
    let n = g.atom_count();
    if n == 0 {
        return String::new();
    }
    let adj = g.adjacency();
    let lower: Vec<bool> = (0..n)
        .map(|i| {
            lowercase_symbol(g.atoms()[i].atomic_number()).is_some()
                && adj[i].iter().any(|&(_, o)| o == BondOrder::Aromatic)
        })
        .collect();

    let start = g.origin_first_atom().unwrap_or(0);
    let mut out = String::new();
    let mut visited = vec![false; n];
    let mut digits: Vec<bool> = vec![false; 100];
    let mut open: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut roots = vec![start];
    roots.extend((0..n).filter(|&i| i != start));
    for root in roots {
        if visited[root] {
            continue;
        }
        if !out.is_empty() {
            out.push('.');
        }
        // tree edges are fixed by a DFS identical to the writing order
        let mut parent = vec![usize::MAX; n];
        let mut order = Vec::new();
        let mut seen = visited.clone();
        mark_tree(root, &adj, &mut seen, &mut parent, &mut order);
        write_atom(
            root,
            usize::MAX,
            g,
            &adj,
            &lower,
            &parent,
            &mut visited,
            &mut digits,
            &mut open,
            &mut out,
        );
    }
    out
}

fn mark_tree(
    u: usize,
    adj: &[Vec<(usize, BondOrder)>],
    seen: &mut [bool],
    parent: &mut [usize],
    order: &mut Vec<usize>,
) {
    seen[u] = true;
    order.push(u);
    for &(w, _) in &adj[u] {
        if !seen[w] {
            parent[w] = u;
            mark_tree(w, adj, seen, parent, order);
        }
    }
}

fn bond_text(order: BondOrder, a_lower: bool, b_lower: bool) -> &'static str {
    let default = if a_lower && b_lower {
        BondOrder::Aromatic
    } else {
        BondOrder::Single
    };
    if order == default {
        return "";
    }
    match order {
        BondOrder::Single => "-",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => ":",
    }
}

fn atom_text(z: u8, lower: bool) -> String {
    if lower {
        return lowercase_symbol(z).expect("lowercase form").to_string();
    }
    let sym = super::element_symbol(z);
    if ORGANIC.contains(&sym) {
        sym.to_string()
    } else {
        format!("[{sym}]")
    }
}

#[allow(clippy::too_many_arguments)]
fn write_atom(
    u: usize,
    from: usize,
    g: &MolecularGraph,
    adj: &[Vec<(usize, BondOrder)>],
    lower: &[bool],
    parent: &[usize],
    visited: &mut [bool],
    digits: &mut [bool],
    open: &mut BTreeMap<(usize, usize), usize>,
    out: &mut String,
) {
    visited[u] = true;
    out.push_str(&atom_text(g.atoms()[u].atomic_number(), lower[u]));

    let ring_edges: Vec<(usize, BondOrder)> = adj[u]
        .iter()
        .copied()
        .filter(|&(w, _)| w != from && parent[w] != u && parent[u] != w)
        .collect();
    let mut freed = Vec::new();
    for &(w, _) in &ring_edges {
        if visited[w] {
            let key = (w.min(u), w.max(u));
            if let Some(d) = open.remove(&key) {
                push_ring_digit(out, d);
                freed.push(d);
            }
        }
    }
    for &(w, order) in &ring_edges {
        if !visited[w] {
            let d = (1..100).find(|&d| !digits[d]).expect("fewer than 100 open rings");
            digits[d] = true;
            open.insert((w.min(u), w.max(u)), d);
            out.push_str(bond_text(order, lower[u], lower[w]));
            push_ring_digit(out, d);
        }
    }
    for d in freed {
        digits[d] = false;
    }

    let children: Vec<(usize, BondOrder)> = adj[u]
        .iter()
        .copied()
        .filter(|&(w, _)| parent[w] == u && !visited[w])
        .collect();
    for (i, &(w, order)) in children.iter().enumerate() {
        let last = i + 1 == children.len();
        if !last {
            out.push('(');
        }
        out.push_str(bond_text(order, lower[u], lower[w]));
        write_atom(w, u, g, adj, lower, parent, visited, digits, open, out);
        if !last {
            out.push(')');
        }
    }
}

fn push_ring_digit(out: &mut String, d: usize) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push('%');
        out.push_str(&format!("{d:02}"));
    }
}
