use super::{element_symbol, ChemError, MolecularGraph};

/// Maximum total bond order per supported element.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValenceTable;

impl ValenceTable {
    pub const ENTRIES: [(u8, f64); 10] = [
        (5, 3.0),  // B
        (6, 4.0),  // C
        (7, 3.0),  // N
        (8, 2.0),  // O
        (9, 1.0),  // F
        (15, 5.0), // P
        (16, 6.0), // S
        (17, 1.0), // Cl
        (35, 1.0), // Br
        (53, 1.0), // I
    ];

    pub fn max(&self, atomic_number: u8) -> Result<f64, ChemError> {
        Self::ENTRIES
            .iter()
            .find(|(z, _)| *z == atomic_number)
            .map(|&(_, v)| v)
            .ok_or(ChemError::UnsupportedElement(element_symbol(atomic_number)))
    }

    pub fn supports(&self, atomic_number: u8) -> bool {
        self.max(atomic_number).is_ok()
    }
}

pub fn max_valence(atomic_number: u8) -> Result<f64, ChemError> {
    ValenceTable.max(atomic_number)
}

/// Summed bond order per atom, aromatic bonds counted as 1.5.
pub(crate) fn valence_sums(g: &MolecularGraph) -> Vec<f64> {
    let mut sums = vec![0.0; g.atom_count()];
    for b in g.bonds() {
        sums[b.left] += b.order.valence();
        sums[b.right] += b.order.valence();
    }
    sums
}

/// First atom whose bond-order sum exceeds its table maximum.
pub(crate) fn first_violation(g: &MolecularGraph) -> Result<Option<usize>, ChemError> {
    let sums = valence_sums(g);
    for (i, atom) in g.atoms().iter().enumerate() {
        if sums[i] > max_valence(atom.atomic_number())? {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// True iff every atom's summed bond order is within the valence table.
pub fn check_valence(g: &MolecularGraph) -> Result<bool, ChemError> {
    Ok(first_violation(g)?.is_none())
}
