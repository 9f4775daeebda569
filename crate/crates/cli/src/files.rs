use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use graphwords::chem::io::read_smiles_file;
use graphwords::chem::{write_smiles, MolecularGraph};
use graphwords::decoder::{Generation, Status};
use graphwords::genlab::WordBank;
use graphwords::tensor::checkpoint::{read_checkpoint, write_checkpoint, MAGIC};
use graphwords::tensor::ParamStore;
use graphwords::training::Model;

use crate::args::BankFormat;
use crate::{invalid, runtime, Outcome};

pub fn read_graphs(path: &Path) -> Outcome<Vec<MolecularGraph>> {
    read_smiles_file(path)
        .with_context(|| format!("reading molecules from {}", path.display()))
        .map_err(invalid)
}

pub fn load_model(path: &Path) -> Outcome<Model> {
    Model::load(path)
        .with_context(|| format!("loading weights from {}", path.display()))
        .map_err(invalid)
}

/// Writes `text` to `path`, or stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())).map_err(runtime),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(runtime)
        }
    }
}

pub fn write_bank(bank: &WordBank, path: &Path, format: BankFormat) -> Outcome {
    match format {
        BankFormat::Text => emit(Some(path), &bank.to_text()),
        BankFormat::Binary => {
            let mut store = ParamStore::new();
            let mut meta = String::from("format=wordbank\n");
            for (i, (w, c)) in bank.words.iter().zip(&bank.canonical).enumerate() {
                store.add(format!("word.{i}"), w.clone(), false);
                meta.push_str(&format!("canonical={c}\n"));
            }
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &meta, &store).map_err(runtime)?;
            fs::write(path, buf).with_context(|| format!("writing {}", path.display())).map_err(runtime)
        }
    }
}

/// Reads a bank in either format (binary files start with the weight-file
/// magic).
pub fn read_bank(path: &Path) -> Outcome<WordBank> {
    let ctx = || format!("reading word bank {}", path.display());
    let bytes = fs::read(path).with_context(ctx).map_err(invalid)?;
    if bytes.starts_with(MAGIC) {
        let ck = read_checkpoint(&mut bytes.as_slice()).with_context(ctx).map_err(invalid)?;
        let canonical: Vec<String> = ck
            .metadata
            .lines()
            .filter_map(|l| l.strip_prefix("canonical="))
            .map(str::to_string)
            .collect();
        if canonical.len() != ck.tensors.len() {
            return Err(invalid(anyhow!("{}: {} names for {} word records", path.display(), canonical.len(), ck.tensors.len())));
        }
        let words = ck.tensors.into_iter().map(|(_, t)| t).collect();
        Ok(WordBank { words, canonical })
    } else {
        let text = String::from_utf8(bytes).with_context(ctx).map_err(invalid)?;
        WordBank::from_text(&text).with_context(ctx).map_err(invalid)
    }
}

pub fn status_text(g: &Generation) -> String {
    match &g.status {
        Status::Complete => "ok".into(),
        Status::Truncated => "truncated".into(),
        Status::Invalid(why) => format!("invalid: {why}"),
    }
}

/// `SMILES<TAB>status`; the SMILES is `*` unless the decoding is valid.
pub fn generation_line(g: &Generation) -> String {
    let smiles = match (&g.graph, g.is_valid()) {
        (Some(m), true) => write_smiles(m),
        _ => "*".into(),
    };
    format!("{smiles}\t{}\n", status_text(g))
}
