//! SMILES line files: UTF-8, one molecule per line, `#` comments skipped.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{parse_smiles, ChemError, MolecularGraph};

#[derive(Debug, Error)]
pub enum SmilesFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ChemError },
}

/// Non-comment, non-blank lines with their 1-based line numbers.
pub fn smiles_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        // tolerate "SMILES<whitespace>name" lines
        .map(|(i, l)| (i, l.split_whitespace().next().unwrap_or(l)))
}

/// Parses every molecule, failing on the first bad line.
pub fn parse_smiles_text(text: &str) -> Result<Vec<MolecularGraph>, SmilesFileError> {
    smiles_lines(text)
        .map(|(line, s)| parse_smiles(s).map_err(|source| SmilesFileError::Parse { line, source }))
        .collect()
}

pub fn read_smiles_file(path: &Path) -> Result<Vec<MolecularGraph>, SmilesFileError> {
    let text = fs::read_to_string(path).map_err(|source| SmilesFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_smiles_text(&text)
}
