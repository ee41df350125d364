//! Central finite-difference checks of the two training objectives.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sieve_core::auto_screen::hash_linear::{self, HashLinearParams};
use sieve_core::auto_screen::logreg;
use sieve_core::auto_screen::tfidf::SparseVec;

pub const EPS: f64 = 1e-5;

/// ‖a − b‖₂ / (‖a‖₂ + ‖b‖₂), zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn central<F: Fn(&[f64]) -> f64>(f: F, at: &[f64]) -> Vec<f64> {
    let mut p = at.to_vec();
    (0..at.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + EPS;
            let up = f(&p);
            p[i] = orig - EPS;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

/// One random logistic-regression instance: returns the relative error of
/// the analytic gradient (weights then bias) against finite differences.
pub fn logreg_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=20usize);
    let n = rng.random_range(1..=30usize);
    let xs: Vec<SparseVec> = (0..n)
        .map(|_| {
            let mut entries = Vec::new();
            for i in 0..dim {
                if rng.random_bool(0.5) {
                    entries.push((i, rng.random_range(-1.0..1.0)));
                }
            }
            SparseVec(entries)
        })
        .collect();
    let ys: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let l2 = rng.random_range(0.0..0.1);
    let mut theta: Vec<f64> = (0..=dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b = theta.pop().unwrap();
    let (gw, gb) = logreg::gradient(&theta, b, &xs, &ys, l2);
    let mut analytic = gw;
    analytic.push(gb);
    theta.push(b);
    let numeric = central(|p| logreg::objective(&p[..dim], p[dim], &xs, &ys, l2), &theta);
    relative_error(&analytic, &numeric)
}

/// Same for the hashed embedding model, over every embedding coordinate, the
/// output layer and the bias.
pub fn hash_linear_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buckets = rng.random_range(1..=20u32);
    let dim = rng.random_range(1..=4usize);
    let n = rng.random_range(1..=30usize);
    let docs: Vec<Vec<u32>> = (0..n)
        .map(|_| {
            let len = rng.random_range(0..=6usize);
            (0..len).map(|_| rng.random_range(0..buckets)).collect()
        })
        .collect();
    let ys: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let size = buckets as usize * dim + dim;
    let theta: Vec<f64> = (0..=size).map(|_| rng.random_range(-1.0..1.0)).collect();
    let params = HashLinearParams { weights: theta[..size].to_vec(), bias: theta[size] };
    let (gw, gb) = hash_linear::gradient(&params, &docs, &ys, dim);
    let mut analytic = gw;
    analytic.push(gb);
    let numeric = central(
        |p| {
            let params = HashLinearParams { weights: p[..size].to_vec(), bias: p[size] };
            hash_linear::objective(&params, &docs, &ys, dim)
        },
        &theta,
    );
    relative_error(&analytic, &numeric)
}
