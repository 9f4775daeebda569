//! Linear heads trained on frozen Graph Words.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::nn::argmax;
use crate::tensor::{AdamW, AdamWConfig, ParamStore, Tape, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeTask {
    Classification(Vec<usize>),
    Regression(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReport {
    /// Held-out accuracy (classification) or mean absolute error (regression).
    pub metric: f64,
    pub train: usize,
    pub test: usize,
}

const LR: f64 = 0.05;

/// Held-out indices: 20% of each class (at least one of every class with
/// two or more members); the rest train.
fn stratified_split(labels: &[usize], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_class {
        idx.shuffle(rng);
        let n_test = if idx.len() >= 2 { (idx.len() as f64 * 0.2).round().max(1.0) as usize } else { 0 };
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn random_split(n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_test = ((n as f64) * 0.2).round().max(1.0) as usize;
    let (mut test, mut train) = (idx[..n_test].to_vec(), idx[n_test..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Standardizes columns with statistics of the `train` rows.
fn standardize(x: &[Vec<f64>], train: &[usize]) -> Vec<Vec<f64>> {
    let d = x[0].len();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for &i in train {
        for (m, v) in mean.iter_mut().zip(&x[i]) {
            *m += v / n;
        }
    }
    for &i in train {
        for ((s, m), v) in sd.iter_mut().zip(&mean).zip(&x[i]) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let sd: Vec<f64> = sd.iter().map(|s| if *s > 1e-12 { s.sqrt() } else { 1.0 }).collect();
    x.iter()
        .map(|r| r.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s).collect())
        .collect()
}

fn rows(x: &[Vec<f64>], idx: &[usize]) -> Result<Tensor<f64>, TensorError> {
    let d = x[0].len();
    Tensor::from_vec(&[idx.len(), d], idx.iter().flat_map(|&i| x[i].iter().copied()).collect())
}

/// Fits a linear layer on `features` (one row per molecule) for `epochs`
/// full-batch AdamW steps and scores it on a held-out 20% split
/// (stratified for classification).
pub fn linear_probe(features: &[Vec<f64>], task: &ProbeTask, epochs: usize, seed: u64) -> Result<ProbeReport, TrainError> {
    let n = features.len();
    let labels_len = match task {
        ProbeTask::Classification(y) => y.len(),
        ProbeTask::Regression(y) => y.len(),
    };
    if labels_len != n {
        return Err(TrainError::Probe(format!("{labels_len} labels for {n} feature rows")));
    }
    if n < 5 || features[0].is_empty() || features.iter().any(|r| r.len() != features[0].len()) {
        return Err(TrainError::Probe("need at least 5 equally sized feature rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = features[0].len();
    let mut store = ParamStore::<f64>::new();
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: 0.01,
        ..AdamWConfig::default()
    });
    let te = |e: TensorError| TrainError::Probe(e.to_string());

    match task {
        ProbeTask::Classification(y) => {
            let classes = y.iter().copied().max().unwrap_or(0) + 1;
            if y.iter().all(|&c| c == y[0]) {
                return Err(TrainError::Probe("labels have a single class".into()));
            }
            let (train, test) = stratified_split(y, &mut rng);
            let x = standardize(features, &train);
            let xt = rows(&x, &train).map_err(te)?;
            let yt: Vec<usize> = train.iter().map(|&i| y[i]).collect();
            let w = store.add("probe.w", Tensor::zeros(&[d, classes]), true);
            let b = store.add("probe.b", Tensor::zeros(&[classes]), false);
            for _ in 0..epochs {
                let mut tape = Tape::new();
                let xv = tape.leaf(xt.clone());
                let (wv, bv) = (tape.param(&store, w), tape.param(&store, b));
                let logits = tape.linear(xv, wv, Some(bv)).map_err(te)?;
                let ce = tape.cross_entropy(logits, &yt).map_err(te)?;
                let loss = tape.scale(ce, 1.0 / train.len() as f64);
                store.zero_grad();
                tape.backward(loss, &mut store).map_err(te)?;
                opt.step(&mut store, LR);
            }
            let scores = rows(&x, &test).map_err(te)?.matmul(store.value(w)).map_err(te)?;
            let bias = store.value(b).data();
            let correct = test
                .iter()
                .enumerate()
                .filter(|&(r, &i)| {
                    let l: Vec<f64> = scores.row(r).iter().zip(bias).map(|(s, b)| s + b).collect();
                    argmax(&l) == y[i]
                })
                .count();
            Ok(ProbeReport {
                metric: correct as f64 / test.len() as f64,
                train: train.len(),
                test: test.len(),
            })
        }
        ProbeTask::Regression(y) => {
            let (train, test) = random_split(n, &mut rng);
            let x = standardize(features, &train);
            let mu = train.iter().map(|&i| y[i]).sum::<f64>() / train.len() as f64;
            let xt = rows(&x, &train).map_err(te)?;
            let yt = Tensor::from_vec(&[train.len(), 1], train.iter().map(|&i| y[i] - mu).collect()).map_err(te)?;
            let w = store.add("probe.w", Tensor::zeros(&[d, 1]), true);
            let b = store.add("probe.b", Tensor::zeros(&[1]), false);
            for _ in 0..epochs {
                let mut tape = Tape::new();
                let xv = tape.leaf(xt.clone());
                let target = tape.leaf(yt.clone());
                let (wv, bv) = (tape.param(&store, w), tape.param(&store, b));
                let pred = tape.linear(xv, wv, Some(bv)).map_err(te)?;
                let err = tape.sub(pred, target).map_err(te)?;
                let sq = tape.mul(err, err).map_err(te)?;
                let s = tape.sum(sq);
                let loss = tape.scale(s, 1.0 / train.len() as f64);
                store.zero_grad();
                tape.backward(loss, &mut store).map_err(te)?;
                opt.step(&mut store, LR);
            }
            let pred = rows(&x, &test).map_err(te)?.matmul(store.value(w)).map_err(te)?;
            let bias = store.value(b).data()[0];
            let mae = test
                .iter()
                .enumerate()
                .map(|(r, &i)| (pred.at(r, 0) + bias + mu - y[i]).abs())
                .sum::<f64>()
                / test.len() as f64;
            Ok(ProbeReport {
                metric: mae,
                train: train.len(),
                test: test.len(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let shift = if c == 0 { -2.0 } else { 2.0 };
            x.push((0..4).map(|_| shift + rng.random_range(-1.0..1.0)).collect());
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_classes_are_learned() {
        let (x, y) = blobs(60, 1);
        let r = linear_probe(&x, &ProbeTask::Classification(y), 100, 0).unwrap();
        assert_eq!(r.metric, 1.0);
        assert_eq!(r.test, 12);
    }

    #[test]
    fn random_labels_are_near_chance() {
        let (x, _) = blobs(400, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<usize> = (0..400).map(|_| rng.random_range(0..2)).collect();
        let r = linear_probe(&x, &ProbeTask::Classification(y), 100, 0).unwrap();
        assert!((r.metric - 0.5).abs() <= 0.1, "{}", r.metric);
    }

    #[test]
    fn constant_labels_are_rejected() {
        let (x, _) = blobs(20, 3);
        assert!(matches!(
            linear_probe(&x, &ProbeTask::Classification(vec![1; 20]), 10, 0),
            Err(TrainError::Probe(_))
        ));
    }

    #[test]
    fn regression_recovers_a_linear_target() {
        let (x, _) = blobs(100, 4);
        let y: Vec<f64> = x.iter().map(|r| 3.0 * r[0] - r[1] + 0.5).collect();
        let r = linear_probe(&x, &ProbeTask::Regression(y), 400, 0).unwrap();
        assert!(r.metric < 0.1, "{}", r.metric);
    }
}
