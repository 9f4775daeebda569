//! Generation experiments on trained models: sampling around stored Graph
//! Words, latent arithmetic, permutation consistency and set metrics.

pub mod consistency;
pub mod fingerprint;
pub mod latent;
pub mod metrics;

use std::fmt::Write as _;

use thiserror::Error;

pub use consistency::{permutation_consistency, ConsistencyMode, ConsistencyReport, Outcomes};
pub use fingerprint::{tanimoto, Fingerprint, FINGERPRINT_BITS};
pub use latent::{fewshot_sample, hybridize, interpolate, mixup, Sample};
pub use metrics::{internal_diversity, metrics, spearman, valid_canonical, Metrics};

use crate::chem::{canonical_form, ChemError, MolecularGraph};
use crate::encoder::GraphWords;
use crate::ftseq::{FtSeqError, SlotPermutation};
use crate::tensor::TensorError;
use crate::training::{Model, TrainError};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("word bank is empty")]
    EmptyBank,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("word bank line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Seq(#[from] FtSeqError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl From<crate::nn::ModelError> for GenError {
    fn from(e: crate::nn::ModelError) -> Self {
        GenError::Train(e.into())
    }
}

/// Graph Words of `M` molecules with each source's canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct WordBank {
    pub words: Vec<GraphWords>,
    pub canonical: Vec<String>,
}

impl WordBank {
    /// Encodes every molecule under `perm`.
    pub fn build(model: &Model, graphs: &[MolecularGraph], perm: &SlotPermutation) -> Result<Self, GenError> {
        let mut bank = WordBank {
            words: Vec::with_capacity(graphs.len()),
            canonical: Vec::with_capacity(graphs.len()),
        };
        for g in graphs {
            let w = model.encode_graph(g, perm)?;
            if !w.is_finite() {
                return Err(GenError::Input("non-finite Graph Words".into()));
            }
            bank.words.push(w);
            bank.canonical.push(canonical_form(g)?);
        }
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// One line per molecule: `canonical<TAB>k<TAB>d<TAB>v_1 ... v_kd`.
    /// Values use the shortest exact decimal form, so parsing restores
    /// every bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, c) in self.words.iter().zip(&self.canonical) {
            let _ = write!(out, "{c}\t{}\t{}\t", w.rows(), w.cols());
            let vals: Vec<String> = w.data().iter().map(|v| v.to_string()).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GenError> {
        let mut bank = WordBank {
            words: Vec::new(),
            canonical: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |detail: String| GenError::Parse { line: i + 1, detail };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(format!("expected 4 tab-separated fields, got {}", f.len())));
            }
            let k: usize = f[1].parse().map_err(|_| err(format!("bad k {:?}", f[1])))?;
            let d: usize = f[2].parse().map_err(|_| err(format!("bad d {:?}", f[2])))?;
            let vals = f[3]
                .split_whitespace()
                .map(|v| v.parse::<f32>().map_err(|_| err(format!("bad value {v:?}"))))
                .collect::<Result<Vec<f32>, _>>()?;
            let w = GraphWords::from_vec(&[k, d], vals).map_err(|e| err(e.to_string()))?;
            if !w.is_finite() {
                return Err(err("non-finite value".into()));
            }
            bank.canonical.push(f[0].to_string());
            bank.words.push(w);
        }
        Ok(bank)
    }
}
