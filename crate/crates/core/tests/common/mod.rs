//! Shared seeded instance generators for the integration suites.

// Each test binary uses a different subset of these helpers.
#![allow(dead_code)]

use innbound::{
    wellposedness_certificate, Activation, FeedforwardNetwork, ImplicitNetwork, IntervalVector,
    Layer, Matrix, WeightTiedNetwork, WellposednessCertificate,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Implicit network with `W` scaled to the given infinity norm (which bounds
/// every achievable weighted measure, so a certificate always exists).
pub fn random_certified_inn(
    rng: &mut ChaCha8Rng,
    n: usize,
    r: usize,
    q: usize,
    row_norm: f64,
    act: Activation,
) -> (ImplicitNetwork, WellposednessCertificate) {
    let mut w = random_matrix(rng, n, n);
    let norm = w.inf_norm();
    if norm > 0.0 {
        w = w.map(|v| v * row_norm / norm);
    }
    let net = ImplicitNetwork::new(
        w,
        random_matrix(rng, n, r),
        random_vec(rng, n, 0.5),
        random_matrix(rng, q, n),
        random_vec(rng, q, 0.5),
        act,
    )
    .unwrap();
    let cert = wellposedness_certificate(&net, 1e-12).unwrap();
    (net, cert)
}

pub fn random_ffnn(
    rng: &mut ChaCha8Rng,
    widths: &[usize],
    q: usize,
    act: Activation,
) -> FeedforwardNetwork {
    let mut layers = Vec::new();
    for w in widths.windows(2) {
        layers.push(Layer {
            weight: random_matrix(rng, w[1], w[0]),
            bias: random_vec(rng, w[1], 0.5),
        });
    }
    let last = *widths.last().unwrap();
    FeedforwardNetwork::new(
        layers,
        random_matrix(rng, q, last),
        random_vec(rng, q, 0.5),
        act,
    )
    .unwrap()
}

/// Weight-tied network with `|W|` scaled to the requested spectral radius.
pub fn random_weight_tied(
    rng: &mut ChaCha8Rng,
    n: usize,
    r: usize,
    q: usize,
    rho: f64,
) -> WeightTiedNetwork {
    let mut w = random_matrix(rng, n, n);
    let actual = innbound::spectral_radius_abs(&w, 1e-12, 200_000).unwrap();
    if actual > 0.0 {
        w = w.map(|v| v * rho / actual);
    }
    WeightTiedNetwork::new(
        w,
        random_matrix(rng, n, r),
        random_vec(rng, n, 0.5),
        random_matrix(rng, q, n),
        random_vec(rng, q, 0.5),
        None,
        Activation::Relu,
    )
    .unwrap()
}

pub fn sample_in_box(rng: &mut ChaCha8Rng, input: &IntervalVector) -> Vec<f64> {
    input
        .lo()
        .iter()
        .zip(input.hi())
        .map(|(lo, hi)| {
            if lo == hi {
                *lo
            } else {
                rng.gen_range(*lo..=*hi)
            }
        })
        .collect()
}
