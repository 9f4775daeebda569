use std::collections::HashSet;

use super::fingerprint::{tanimoto, Fingerprint};
use crate::chem::{canonical_form, check_valence, MolecularGraph};

/// Generation quality of a set of decoded molecules (`None` = decoding
/// failed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub count: usize,
    pub valid: usize,
    pub unique: usize,
    pub novel: usize,
    /// valid / count
    pub validity: f64,
    /// unique valid / valid
    pub uniqueness: f64,
    /// unique valid not in the training set / unique valid
    pub novelty: f64,
    pub intdiv1: f64,
    pub intdiv2: f64,
}

impl Metrics {
    pub const TSV_HEADER: &'static str = "count\tvalidity\tuniqueness\tnovelty\tintdiv1\tintdiv2";

    pub fn tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.count, self.validity, self.uniqueness, self.novelty, self.intdiv1, self.intdiv2
        )
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Canonical form of `g` if it is a connected molecule that satisfies the
/// valence table.
pub fn valid_canonical(g: &MolecularGraph) -> Option<String> {
    if !g.is_connected() || !matches!(check_valence(g), Ok(true)) {
        return None;
    }
    canonical_form(g).ok()
}

/// `1 - (mean over all ordered pairs, self-pairs included, of T^p)^(1/p)`.
pub fn internal_diversity(fps: &[Fingerprint], p: u32) -> f64 {
    if fps.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for a in fps {
        for b in fps {
            sum += tanimoto(a, b).unwrap_or(0.0).powi(p as i32);
        }
    }
    let mean = sum / (fps.len() * fps.len()) as f64;
    1.0 - mean.powf(1.0 / p as f64)
}

pub fn metrics(generated: &[Option<MolecularGraph>], training: &HashSet<String>) -> Metrics {
    let mut fps = Vec::new();
    let mut seen = HashSet::new();
    let mut novel = 0;
    for g in generated.iter().flatten() {
        let Some(c) = valid_canonical(g) else {
            continue;
        };
        fps.push(Fingerprint::of(g));
        if seen.insert(c.clone()) && !training.contains(&c) {
            novel += 1;
        }
    }
    let (count, valid, unique) = (generated.len(), fps.len(), seen.len());
    Metrics {
        count,
        valid,
        unique,
        novel,
        validity: ratio(valid, count),
        uniqueness: ratio(unique, valid),
        novelty: ratio(novel, unique),
        intdiv1: internal_diversity(&fps, 1),
        intdiv2: internal_diversity(&fps, 2),
    }
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (ties get their average rank). `None` when
/// the lengths differ, fewer than two points are given, or either side is
/// constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
