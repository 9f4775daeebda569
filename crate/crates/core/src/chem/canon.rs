//! Canonical identity strings via colour refinement with exhaustive
//! individualization of tied atoms.

use super::{ChemError, MolecularGraph};

pub const MAX_CANONICAL_ATOMS: usize = 64;
const LEAF_BUDGET: usize = 200_000;

type Certificate = (Vec<u8>, Vec<(usize, usize, u8)>);

struct Search<'g> {
    g: &'g MolecularGraph,
    adj: Vec<Vec<(usize, u8)>>,
    best: Option<Certificate>,
    leaves: usize,
}

/// Permutation-invariant identity string: equal for isomorphic graphs and
/// distinct for non-isomorphic ones.
pub fn canonical_form(g: &MolecularGraph) -> Result<String, ChemError> {
    let n = g.atom_count();
    if n > MAX_CANONICAL_ATOMS {
        return Err(ChemError::TooLarge(n));
    }
    if n == 0 {
        return Ok(String::from("|"));
    }
    let adj = g
        .adjacency()
        .into_iter()
        .map(|l| l.into_iter().map(|(w, o)| (w, o.code())).collect())
        .collect();
    let mut search = Search {
        g,
        adj,
        best: None,
        leaves: 0,
    };
    let initial: Vec<(u8, usize, Vec<u8>)> = (0..n)
        .map(|i| {
            let mut orders: Vec<u8> = search.adj[i].iter().map(|&(_, o)| o).collect();
            orders.sort_unstable();
            (g.atoms()[i].atomic_number(), search.adj[i].len(), orders)
        })
        .collect();
    let colors = search.refine(rank(&initial));
    search.explore(colors)?;
    let (atoms, bonds) = search.best.expect("at least one leaf");
    let atoms: Vec<&str> = atoms.iter().map(|&z| super::element_symbol(z)).collect();
    let bonds: Vec<String> = bonds
        .iter()
        .map(|(a, b, o)| format!("{a}-{b}:{o}"))
        .collect();
    Ok(format!("{}|{}", atoms.join("."), bonds.join(";")))
}

/// Dense ranks of `keys`, ordered by key value.
fn rank<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("key present"))
        .collect()
}

fn class_count(colors: &[usize]) -> usize {
    colors.iter().max().map_or(0, |&m| m + 1)
}

impl Search<'_> {
    fn refine(&self, mut colors: Vec<usize>) -> Vec<usize> {
        loop {
            let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..colors.len())
                .map(|i| {
                    let mut nb: Vec<(usize, u8)> =
                        self.adj[i].iter().map(|&(w, o)| (colors[w], o)).collect();
                    nb.sort_unstable();
                    (colors[i], nb)
                })
                .collect();
            let next = rank(&keys);
            if class_count(&next) == class_count(&colors) {
                return next;
            }
            colors = next;
        }
    }

    fn explore(&mut self, colors: Vec<usize>) -> Result<(), ChemError> {
        let n = colors.len();
        let classes = class_count(&colors);
        if classes == n {
            self.leaves += 1;
            if self.leaves > LEAF_BUDGET {
                return Err(ChemError::SearchBudget);
            }
            self.consider_leaf(&colors);
            return Ok(());
        }
        let mut sizes = vec![0usize; classes];
        for &c in &colors {
            sizes[c] += 1;
        }
        // smallest non-singleton cell, lowest colour among equals
        let target = (0..classes)
            .filter(|&c| sizes[c] > 1)
            .min_by_key(|&c| (sizes[c], c))
            .expect("non-discrete colouring has a tied cell");
        for v in (0..n).filter(|&i| colors[i] == target) {
            let keys: Vec<(usize, bool)> = (0..n)
                .map(|i| (colors[i], !(i == v)))
                .collect();
            let split = self.refine(rank(&keys));
            self.explore(split)?;
        }
        Ok(())
    }

    fn consider_leaf(&mut self, labels: &[usize]) {
        let n = labels.len();
        let mut atoms = vec![0u8; n];
        for (i, &l) in labels.iter().enumerate() {
            atoms[l] = self.g.atoms()[i].atomic_number();
        }
        let mut bonds: Vec<(usize, usize, u8)> = self
            .g
            .bonds()
            .iter()
            .map(|b| {
                let (x, y) = (labels[b.left], labels[b.right]);
                (x.min(y), x.max(y), b.order.code())
            })
            .collect();
        bonds.sort_unstable();
        let cert = (atoms, bonds);
        if self.best.as_ref().is_none_or(|best| cert < *best) {
            self.best = Some(cert);
        }
    }
}
