use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Maps symbolic node slots onto codebook rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotPermutation(Vec<usize>);

impl SlotPermutation {
    pub fn identity(slots: usize) -> Self {
        Self((0..slots).collect())
    }

    pub fn from_vec(rows: Vec<usize>) -> Option<Self> {
        let mut seen = vec![false; rows.len()];
        for &r in &rows {
            if r >= rows.len() || std::mem::replace(&mut seen[r], true) {
                return None;
            }
        }
        Some(Self(rows))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Codebook row for a symbolic slot.
    pub fn row(&self, slot: usize) -> Option<usize> {
        self.0.get(slot).copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// A uniformly random, seed-deterministic permutation of `slots` rows.
pub fn shuffle_codebook(slots: usize, seed: u64) -> SlotPermutation {
    let mut rows: Vec<usize> = (0..slots).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    SlotPermutation(rows)
}

/// Rescales each `dim`-wide row of `data` to unit Euclidean norm.
pub fn normalize_rows<T: Float>(data: &mut [T], dim: usize) {
    for row in data.chunks_mut(dim) {
        let norm = row.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if norm > T::zero() {
            for x in row.iter_mut() {
                *x = *x / norm;
            }
        }
    }
}
