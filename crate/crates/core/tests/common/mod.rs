//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use fededge::nn::{Activation, LayerSpec, Network};
use fededge::rng;
use fededge::xai::Predictor;
use rand::Rng;

/// Shapley values by the textbook formula: for every feature, a direct loop
/// over all subsets of the other features, weights from factorials, and the
/// coalition value computed by building the imputed row from scratch. Shares
/// no code with the library's bitmask implementation.
pub fn brute_force_shapley(
    model: &impl Predictor,
    x: &[f64],
    reference: &[f64],
    output: usize,
) -> Vec<f64> {
    let p = x.len();
    let fact = |n: usize| (1..=n).map(|i| i as f64).product::<f64>();
    let value = |subset: &[usize]| {
        let row: Vec<f64> = (0..p)
            .map(|j| {
                if subset.contains(&j) {
                    x[j]
                } else {
                    reference[j]
                }
            })
            .collect();
        model.predict_row(&row).unwrap()[output]
    };
    let mut phi = vec![0.0; p];
    for (j, phi_j) in phi.iter_mut().enumerate() {
        let others: Vec<usize> = (0..p).filter(|&i| i != j).collect();
        for bits in 0..(1usize << others.len()) {
            let subset: Vec<usize> = others
                .iter()
                .enumerate()
                .filter(|(b, _)| bits >> b & 1 == 1)
                .map(|(_, &i)| i)
                .collect();
            let s = subset.len();
            let weight = fact(s) * fact(p - s - 1) / fact(p);
            let mut with_j = subset.clone();
            with_j.push(j);
            *phi_j += weight * (value(&with_j) - value(&subset));
        }
    }
    phi
}

/// Random `p → hidden → k` softmax MLP.
pub fn random_mlp(p: usize, hidden: usize, k: usize, seed: u64) -> Network {
    let specs = [
        LayerSpec::dense(p, hidden),
        LayerSpec::act(Activation::Relu),
        LayerSpec::dense(hidden, k),
        LayerSpec::act(Activation::Softmax),
    ];
    Network::from_specs(p, &specs, &mut rng::stream(seed, "test-mlp", 0)).unwrap()
}

pub fn random_rows(n: usize, p: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, "test-rows", 0);
    (0..n)
        .map(|_| (0..p).map(|_| r.random::<f64>() * scale).collect())
        .collect()
}
