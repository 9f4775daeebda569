//! Operations on Graph Words: mixture sampling, mixup, interpolation and
//! hybridization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{GenError, WordBank};
use crate::decoder::{Generation, Sampling};
use crate::encoder::GraphWords;
use crate::training::Model;

fn same_shape(a: &GraphWords, b: &GraphWords) -> Result<(), GenError> {
    if a.shape() != b.shape() {
        return Err(GenError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn unit_interval(name: &str, x: f64) -> Result<(), GenError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(GenError::Range(format!("{name} = {x} outside [0, 1]")))
    }
}

/// `lambda * a + (1 - lambda) * b`; the endpoints return an input unchanged.
pub fn mixup(a: &GraphWords, b: &GraphWords, lambda: f64) -> Result<GraphWords, GenError> {
    same_shape(a, b)?;
    unit_interval("lambda", lambda)?;
    if lambda == 1.0 {
        return Ok(a.clone());
    }
    if lambda == 0.0 {
        return Ok(b.clone());
    }
    let (l, r) = (lambda as f32, (1.0 - lambda) as f32);
    let data = a.data().iter().zip(b.data()).map(|(x, y)| l * x + r * y).collect();
    Ok(GraphWords::from_vec(a.shape(), data)?)
}

/// `(1 - alpha) * source + alpha * target` for each `alpha`.
pub fn interpolate(source: &GraphWords, target: &GraphWords, alphas: &[f64]) -> Result<Vec<GraphWords>, GenError> {
    alphas.iter().map(|&a| mixup(target, source, a)).collect()
}

/// Source words with the rows listed in `rows` (0-based) taken from the
/// target.
pub fn hybridize(source: &GraphWords, target: &GraphWords, rows: &[usize]) -> Result<GraphWords, GenError> {
    same_shape(source, target)?;
    let k = source.rows();
    let mut out = source.clone();
    let d = source.cols();
    for &i in rows {
        if i >= k {
            return Err(GenError::Range(format!("word index {i} outside 0..{k}")));
        }
        out.data_mut()[i * d..(i + 1) * d].copy_from_slice(target.row(i));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub component: usize,
    pub words: GraphWords,
    pub generation: Generation,
}

/// Draws `count` words from the equal-weight mixture of `N(h_i, s I)` over
/// the bank and decodes each greedily.
pub fn fewshot_sample(model: &Model, bank: &WordBank, s: f64, count: usize, seed: u64) -> Result<Vec<Sample>, GenError> {
    if bank.is_empty() {
        return Err(GenError::EmptyBank);
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(GenError::Range(format!("variance {s} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = s.sqrt();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let component = rng.random_range(0..bank.len());
        let mut words = bank.words[component].clone();
        if s > 0.0 {
            for x in words.data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += (sd * z) as f32;
            }
        }
        let generation = model.generate(&words, Sampling::Greedy)?;
        out.push(Sample {
            component,
            words,
            generation,
        });
    }
    Ok(out)
}
