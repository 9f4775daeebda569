//! Hashed linear-path fingerprints.

use super::GenError;
use crate::chem::MolecularGraph;

pub const FINGERPRINT_BITS: usize = 2048;
/// Longest path hashed, in bonds.
pub const MAX_PATH_BONDS: usize = 7;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    bits: usize,
}

impl Fingerprint {
    pub fn empty(bits: usize) -> Self {
        Self {
            words: vec![0; bits.div_ceil(64)],
            bits,
        }
    }

    pub fn from_bits(bits: usize, on: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Self::empty(bits);
        for b in on {
            fp.set(b % bits);
        }
        fp
    }

    /// Every simple path of 0..=7 bonds, written as alternating element and
    /// bond-order codes and read in its smaller direction, hashed to one bit.
    pub fn of(g: &MolecularGraph) -> Self {
        let mut fp = Self::empty(FINGERPRINT_BITS);
        let adj = g.adjacency();
        let z: Vec<u8> = g.atoms().iter().map(|a| a.atomic_number()).collect();
        let mut path = Vec::new();
        let mut on_path = vec![false; z.len()];
        for s in 0..z.len() {
            path.clear();
            path.push(z[s]);
            on_path[s] = true;
            walk(&adj, &z, s, &mut path, &mut on_path, &mut fp);
            on_path[s] = false;
        }
        fp
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    fn add_path(&mut self, path: &[u8]) {
        let rev: Vec<u8> = path.iter().rev().copied().collect();
        let key = if rev.as_slice() < path { rev.as_slice() } else { path };
        let mut bytes = Vec::with_capacity(key.len() + 1);
        bytes.push(key.len() as u8);
        bytes.extend_from_slice(key);
        let bit = (fnv1a(&bytes) % self.bits as u64) as usize;
        self.set(bit);
    }
}

fn walk(
    adj: &[Vec<(usize, crate::chem::BondOrder)>],
    z: &[u8],
    u: usize,
    path: &mut Vec<u8>,
    on_path: &mut [bool],
    fp: &mut Fingerprint,
) {
    fp.add_path(path);
    if path.len() / 2 == MAX_PATH_BONDS {
        return;
    }
    for &(w, order) in &adj[u] {
        if on_path[w] {
            continue;
        }
        // bond codes sit above every element code
        path.push(200 + order as u8);
        path.push(z[w]);
        on_path[w] = true;
        walk(adj, z, w, path, on_path, fp);
        on_path[w] = false;
        path.truncate(path.len() - 2);
    }
}

/// `|a AND b| / |a OR b|`; 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, GenError> {
    if a.bits != b.bits {
        return Err(GenError::Shape(format!("fingerprints of {} and {} bits", a.bits, b.bits)));
    }
    let (mut both, mut any) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        any += (x | y).count_ones();
    }
    Ok(if any == 0 { 1.0 } else { both as f64 / any as f64 })
}
