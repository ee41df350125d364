//! fastText-style classifier: hashed word unigrams and bigrams, averaged
//! bucket embeddings, logistic output layer, trained by plain SGD.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logreg::{sigmoid, softplus};
use super::tfidf::tokenize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashLinearConfig {
    /// Number of hash buckets shared by unigrams and bigrams.
    pub buckets: u32,
    pub dim: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to zero.
    pub learning_rate: f64,
    pub seed: u64,
    /// Embeddings start uniform in `(-init_range, init_range)`; the output
    /// layer starts at zero.
    pub init_range: f64,
}

impl Default for HashLinearConfig {
    fn default() -> Self {
        HashLinearConfig { buckets: 1 << 18, dim: 16, epochs: 25, learning_rate: 0.1, seed: 42, init_range: 1.0 }
    }
}

impl HashLinearConfig {
    /// Total parameter count (embeddings plus output layer, bias excluded).
    pub fn dimensionality(&self) -> usize {
        self.buckets as usize * self.dim + self.dim
    }
}

/// 32-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 2_166_136_261;
    for &b in bytes {
        h ^= u32::from(b);
        h = h.wrapping_mul(16_777_619);
    }
    h
}

/// Bucket ids of a text: unigrams first, then adjacent-word bigrams.
pub fn hash_features(text: &str, buckets: u32) -> Vec<u32> {
    let words: Vec<u64> = tokenize(text, 1)
        .iter()
        .map(|w| u64::from(fnv1a(w.as_bytes())))
        .collect();
    let mut ids: Vec<u32> = words.iter().map(|&h| (h % u64::from(buckets)) as u32).collect();
    for pair in words.windows(2) {
        let h = pair[0].wrapping_mul(116_049_371).wrapping_add(pair[1]);
        ids.push((h % u64::from(buckets)) as u32);
    }
    ids
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initial value of one embedding coordinate, uniform in `(-range, range)`.
/// Depends only on `(seed, index)` so untouched rows never need storing.
pub fn initial_weight(seed: u64, index: usize, range: f64) -> f64 {
    let bits = splitmix64(seed ^ splitmix64(index as u64));
    let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
    (2.0 * unit - 1.0) * range
}

/// Parameters laid out as `[embeddings (buckets × dim) | output (dim)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HashLinearParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl HashLinearParams {
    pub fn initial(config: &HashLinearConfig) -> Self {
        let n_emb = config.buckets as usize * config.dim;
        let mut weights: Vec<f64> = (0..n_emb).map(|i| initial_weight(config.seed, i, config.init_range)).collect();
        weights.extend(std::iter::repeat_n(0.0, config.dim));
        HashLinearParams { weights, bias: 0.0 }
    }

    fn output_offset(&self, dim: usize) -> usize {
        self.weights.len() - dim
    }

    /// Mean embedding of the given buckets; zero for an empty list.
    pub fn hidden(&self, features: &[u32], dim: usize) -> Vec<f64> {
        let mut h = vec![0.0; dim];
        if features.is_empty() {
            return h;
        }
        for &f in features {
            let row = &self.weights[f as usize * dim..(f as usize + 1) * dim];
            for (acc, v) in h.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let n = features.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }

    pub fn logit(&self, features: &[u32], dim: usize) -> f64 {
        let h = self.hidden(features, dim);
        let out = &self.weights[self.output_offset(dim)..];
        h.iter().zip(out).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }

    pub fn probability(&self, features: &[u32], dim: usize) -> f64 {
        sigmoid(self.logit(features, dim))
    }
}

/// Mean logistic loss over documents given as bucket lists.
pub fn objective(params: &HashLinearParams, docs: &[Vec<u32>], ys: &[u8], dim: usize) -> f64 {
    docs.iter()
        .zip(ys)
        .map(|(d, &y)| {
            let z = params.logit(d, dim);
            softplus(z) - f64::from(y) * z
        })
        .sum::<f64>()
        / docs.len() as f64
}

/// Gradient of [`objective`] with respect to every weight and the bias.
pub fn gradient(params: &HashLinearParams, docs: &[Vec<u32>], ys: &[u8], dim: usize) -> (Vec<f64>, f64) {
    let n = docs.len() as f64;
    let off = params.output_offset(dim);
    let mut gw = vec![0.0; params.weights.len()];
    let mut gb = 0.0;
    for (doc, &y) in docs.iter().zip(ys) {
        let h = params.hidden(doc, dim);
        let out = &params.weights[off..];
        let z = h.iter().zip(out).map(|(a, b)| a * b).sum::<f64>() + params.bias;
        let g = (sigmoid(z) - f64::from(y)) / n;
        for k in 0..dim {
            gw[off + k] += g * h[k];
        }
        gb += g;
        if !doc.is_empty() {
            let share = g / doc.len() as f64;
            for &f in doc {
                for k in 0..dim {
                    gw[f as usize * dim + k] += share * out[k];
                }
            }
        }
    }
    (gw, gb)
}

/// Trains from the seeded initialization with per-example SGD. Example order
/// is reshuffled every epoch from a fixed-seed generator; the learning rate
/// decays linearly over all steps.
pub fn train(docs: &[Vec<u32>], ys: &[u8], config: &HashLinearConfig) -> Result<HashLinearParams> {
    let dim = config.dim;
    let mut params = HashLinearParams::initial(config);
    let off = params.output_offset(dim);
    let total_steps = (config.epochs * docs.len()).max(1) as f64;
    let lr0 = config.learning_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut step = 0usize;
    let mut grad_h = vec![0.0; dim];

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let lr = lr0 * (1.0 - step as f64 / total_steps);
            step += 1;
            let doc = &docs[i];
            let h = params.hidden(doc, dim);
            let z = h.iter().zip(&params.weights[off..]).map(|(a, b)| a * b).sum::<f64>() + params.bias;
            let g = sigmoid(z) - f64::from(ys[i]);
            for k in 0..dim {
                grad_h[k] = g * params.weights[off + k];
            }
            for k in 0..dim {
                params.weights[off + k] -= lr * g * h[k];
            }
            params.bias -= lr * g;
            if !doc.is_empty() {
                let scale = lr / doc.len() as f64;
                for &f in doc {
                    let row = &mut params.weights[f as usize * dim..(f as usize + 1) * dim];
                    for (w, gh) in row.iter_mut().zip(&grad_h) {
                        *w -= scale * gh;
                    }
                }
            }
        }
    }
    if params.weights.iter().any(|v| !v.is_finite()) || !params.bias.is_finite() {
        return Err(Error::Numeric { context: "hashed classifier weights".into() });
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0x811c_9dc5);
        assert_eq!(fnv1a(b"a"), 0xe40c_292c);
        assert_eq!(fnv1a(b"foobar"), 0xbf9c_f968);
    }

    #[test]
    fn hashing_is_deterministic() {
        let a = hash_features("Deep learning for screening", 1 << 18);
        let b = hash_features("Deep learning for screening", 1 << 18);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4 + 3);
        assert!(a.iter().all(|&f| f < 1 << 18));
    }

    #[test]
    fn empty_text_predicts_sigmoid_bias() {
        let config = HashLinearConfig { buckets: 8, dim: 4, ..Default::default() };
        let mut params = HashLinearParams::initial(&config);
        params.bias = 0.3;
        assert!(hash_features("", 8).is_empty());
        assert_eq!(params.hidden(&[], 4), vec![0.0; 4]);
        assert_eq!(params.probability(&[], 4), sigmoid(0.3));
    }

    #[test]
    fn initialization_bounds() {
        for i in 0..1000 {
            let v = initial_weight(7, i, 0.25);
            assert!(v.abs() < 0.25);
        }
        assert_eq!(initial_weight(7, 3, 1.0), initial_weight(7, 3, 1.0));
        assert_ne!(initial_weight(7, 3, 1.0), initial_weight(8, 3, 1.0));
    }
}
