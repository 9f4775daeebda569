//! Random valid heavy-atom molecules for desk-scale corpora and property tests.

use rand::Rng;

use super::valence::valence_sums;
use super::{max_valence, Atom, Bond, BondOrder, MolecularGraph};

/// (atomic number, relative weight) of the element mix.
const ELEMENT_WEIGHTS: [(u8, u32); 10] = [
    (6, 60),
    (7, 12),
    (8, 12),
    (16, 4),
    (9, 4),
    (17, 3),
    (35, 2),
    (15, 1),
    (5, 1),
    (53, 1),
];

#[derive(Debug, Clone, Copy)]
pub struct RandomMoleculeConfig {
    pub max_atoms: usize,
    /// Chance that each candidate ring-closing bond is added.
    pub ring_bond_prob: f64,
    /// Chance that each bond is upgraded to a higher order.
    pub upgrade_prob: f64,
    /// Chance that an upgraded bond becomes aromatic rather than double/triple.
    pub aromatic_prob: f64,
}

impl Default for RandomMoleculeConfig {
    fn default() -> Self {
        Self {
            max_atoms: 12,
            ring_bond_prob: 0.15,
            upgrade_prob: 0.2,
            aromatic_prob: 0.3,
        }
    }
}

fn pick_element<R: Rng + ?Sized>(rng: &mut R) -> u8 {
    let total: u32 = ELEMENT_WEIGHTS.iter().map(|&(_, w)| w).sum();
    let mut x = rng.random_range(0..total);
    for (z, w) in ELEMENT_WEIGHTS {
        if x < w {
            return z;
        }
        x -= w;
    }
    6
}

fn has_lowercase(z: u8) -> bool {
    matches!(z, 5 | 6 | 7 | 8 | 15 | 16)
}

/// A connected molecule that satisfies the valence table.
pub fn random_molecule<R: Rng + ?Sized>(rng: &mut R, cfg: &RandomMoleculeConfig) -> MolecularGraph {
    let target = rng.random_range(1..=cfg.max_atoms.max(1));
    let mut atoms: Vec<Atom> = Vec::with_capacity(target);
    let mut used: Vec<f64> = Vec::with_capacity(target);
    let mut bonds: Vec<Bond> = Vec::new();
    let cap = |z: u8| max_valence(z).expect("generator elements have valence rules");

    atoms.push(Atom::new(pick_element(rng)).expect("valid element"));
    used.push(0.0);
    while atoms.len() < target {
        let z = pick_element(rng);
        let open: Vec<usize> = (0..atoms.len())
            .filter(|&i| cap(atoms[i].atomic_number()) - used[i] >= 1.0)
            .collect();
        if open.is_empty() {
            break;
        }
        let parent = open[rng.random_range(0..open.len())];
        let child = atoms.len();
        atoms.push(Atom::new(z).expect("valid element"));
        used.push(1.0);
        used[parent] += 1.0;
        bonds.push(Bond::new(parent, child, BondOrder::Single));
    }

    let n = atoms.len();
    for a in 0..n {
        for b in a + 2..n {
            if bonds.iter().any(|x| (x.left, x.right) == (a, b) || (x.left, x.right) == (b, a)) {
                continue;
            }
            let free = |i: usize| cap(atoms[i].atomic_number()) - used[i];
            if free(a) >= 1.0 && free(b) >= 1.0 && rng.random_bool(cfg.ring_bond_prob / n as f64 * 2.0) {
                used[a] += 1.0;
                used[b] += 1.0;
                bonds.push(Bond::new(a, b, BondOrder::Single));
            }
        }
    }

    for k in 0..bonds.len() {
        if !rng.random_bool(cfg.upgrade_prob) {
            continue;
        }
        let Bond { left, right, .. } = bonds[k];
        let free = |i: usize| cap(atoms[i].atomic_number()) - used[i];
        let (zl, zr) = (atoms[left].atomic_number(), atoms[right].atomic_number());
        if rng.random_bool(cfg.aromatic_prob) {
            if has_lowercase(zl) && has_lowercase(zr) && free(left) >= 0.5 && free(right) >= 0.5 {
                used[left] += 0.5;
                used[right] += 0.5;
                bonds[k].order = BondOrder::Aromatic;
            }
        } else {
            let extra = if free(left) >= 2.0 && free(right) >= 2.0 && rng.random_bool(0.25) {
                2.0
            } else {
                1.0
            };
            if free(left) >= extra && free(right) >= extra {
                used[left] += extra;
                used[right] += extra;
                bonds[k].order = if extra == 2.0 {
                    BondOrder::Triple
                } else {
                    BondOrder::Double
                };
            }
        }
    }

    let g = MolecularGraph::new(atoms, bonds)
        .expect("generator emits a simple graph")
        .with_origin(Some(0));
    debug_assert!(g.is_connected());
    debug_assert!(valence_sums(&g)
        .iter()
        .zip(g.atoms())
        .all(|(s, a)| *s <= cap(a.atomic_number())));
    g
}
