#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ksos_core::assembly::ConstraintSystem;
use ksos_core::kernels::KernelSpec;
use ksos_core::sampling::{Sample, SampleSet};
use ksos_core::solver::{kernel_features, DualParams, FeatureMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn random_size(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| uniform(rng, -1.0, 1.0))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| uniform(rng, -1.0, 1.0))
}

pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ConstraintSystem {
    ConstraintSystem {
        a: random_matrix(rng, n, m),
        b: random_vector(rng, n),
        c: random_vector(rng, m),
        offset: uniform(rng, -1.0, 1.0),
        eta: 0.0,
    }
}

pub fn random_params(rng: &mut ChaCha8Rng) -> DualParams {
    DualParams {
        lambda: uniform(rng, 0.5, 2.0),
        lambda_theta: uniform(rng, 0.5, 2.0),
        gamma: uniform(rng, 1.0, 10.0),
        epsilon: uniform(rng, 0.1, 1.0),
    }
}

pub fn random_samples(rng: &mut ChaCha8Rng, n: usize) -> SampleSet {
    let times = [0.0, 0.25, 0.5, 0.75];
    SampleSet::from_samples(
        (0..n)
            .map(|_| Sample {
                t: times[rng.random_range(0..times.len())],
                x: vec![uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)],
                u: vec![uniform(rng, -10.0, 10.0)],
            })
            .collect(),
    )
}

/// Explicit features for even seeds, control-affine kernel features for odd.
pub fn random_features(rng: &mut ChaCha8Rng, n: usize, seed: u64) -> FeatureMatrix {
    if seed % 2 == 0 {
        let q = rng.random_range(2..=5);
        FeatureMatrix::Explicit(random_matrix(rng, n, q))
    } else {
        kernel_features(&KernelSpec::control_affine_default(2, 1), &random_samples(rng, n)).unwrap()
    }
}

/// A point in the barrier domain: mostly positive with a few small
/// negative entries.
pub fn random_alpha(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| uniform(rng, -0.02, 0.5))
}

/// `max |x − y| / max(max |y|, floor)`.
pub fn rel_err(x: &[f64], y: &[f64], floor: f64) -> f64 {
    let scale = y.iter().fold(floor, |m, v| m.max(v.abs()));
    x.iter().zip(y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}
