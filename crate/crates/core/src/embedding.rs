//! Unit-norm embedding vectors, cosine scoring, and the embedder contract.
//!
//! Vectors are stored as `f32` and normalized at construction, so inner
//! product and cosine ranking coincide. Arithmetic is carried out in `f64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default dimension of the mock embedder.
pub const DEFAULT_MOCK_DIM: usize = 64;

/// Seed constant mixed into every mock token hash.
pub const MOCK_SEED: u64 = 0x6d6e_656d_6f5f_3031;

/// Accepted deviation of the L2 norm from one.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// A fixed-dimension real vector with unit L2 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Normalizes `components` to unit length.
    ///
    /// Vectors already within [`NORM_TOLERANCE`] of unit length are kept
    /// bit-for-bit, so re-normalizing a stored vector is a no-op.
    pub fn new(components: Vec<f32>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("embedding must have at least one component"));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("embedding has non-finite components"));
        }
        let norm = l2_norm(&components);
        if norm == 0.0 {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        if (norm - 1.0).abs() <= NORM_TOLERANCE {
            return Ok(Embedding(components));
        }
        Ok(Embedding(components.iter().map(|&c| (c as f64 / norm) as f32).collect()))
    }

    pub(crate) fn from_f64(components: &[f64]) -> Result<Self> {
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        Self::new(components.iter().map(|c| (c / norm) as f32).collect())
    }

    /// Wraps stored components without touching them. Used by snapshot loading.
    pub(crate) fn from_raw(components: Vec<f32>) -> Self {
        Embedding(components)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    /// Inner product, accumulated in `f64`.
    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(&a, &b)| a as f64 * b as f64).sum())
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = Error;

    fn try_from(value: Vec<f32>) -> Result<Self> {
        Embedding::new(value)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(value: Embedding) -> Self {
        value.0
    }
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
}

fn check_dims(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    let dot = a.dot(b)?;
    let denom = a.norm() * b.norm();
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Mean cosine between `query` and every snapshot.
pub fn average_similarity<'a, I>(query: &Embedding, snapshots: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Embedding>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for snap in snapshots {
        total += cosine(query, snap)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("average similarity over an empty snapshot list"));
    }
    Ok(total / count as f64)
}

/// Maps text to unit vectors of a fixed dimension.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding>;
}

/// Deterministic hashed bag-of-tokens embedder.
///
/// Every token is hashed (with the seed) into a ChaCha stream that draws a
/// Gaussian direction; a text's vector is the count-weighted sum of its token
/// directions, normalized. Shared tokens therefore raise similarity.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_seed(dim, MOCK_SEED)
    }

    pub fn with_seed(dim: usize, seed: u64) -> Result<Self> {
        if dim < 8 {
            return Err(Error::Config(format!("mock embedder dimension must be >= 8, got {dim}")));
        }
        Ok(MockEmbedder { dim, seed })
    }

    fn token_direction(&self, token: &str, acc: &mut [f64], weight: f64) {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        for slot in acc.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *slot += weight * z;
        }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder { dim: DEFAULT_MOCK_DIM, seed: MOCK_SEED }
    }
}

impl Embedder for MockEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
        for token in tokenize(text) {
            *counts.entry(token).or_default() += 1;
        }
        let mut acc = vec![0.0f64; self.dim];
        if counts.is_empty() {
            self.token_direction("", &mut acc, 1.0);
        }
        for (token, count) in &counts {
            self.token_direction(token, &mut acc, *count as f64);
        }
        Embedding::from_f64(&acc)
    }
}

/// Lower-cased runs of alphanumerics and underscores; `<face_3>` yields `face_3`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_')).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

/// `MockEmbedder::new(dim).embed(text)` with the default seed.
pub fn mock_embed(text: &str, dim: usize) -> Result<Embedding> {
    MockEmbedder::new(dim)?.embed(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn basis(dim: usize, i: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Embedding::new(v).unwrap()
    }

    fn random_unit(rng: &mut impl Rng, dim: usize) -> Embedding {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        Embedding::from_f64(&v).unwrap()
    }

    #[test]
    fn cosine_identity_and_orthogonality() {
        let v = mock_embed("red folder", 64).unwrap();
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(cosine(&basis(8, 0), &basis(8, 3)).unwrap(), 0.0);
    }

    #[test]
    fn cosine_rejects_dimension_mismatch() {
        let err = cosine(&basis(8, 0), &basis(9, 0)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn cosine_matches_compensated_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = random_unit(&mut rng, 48);
            let b = random_unit(&mut rng, 48);
            // Neumaier-compensated dot product over exact f64 products.
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                let term = *x as f64 * *y as f64;
                let t = sum + term;
                if sum.abs() >= term.abs() {
                    comp += (sum - t) + term;
                } else {
                    comp += (term - t) + sum;
                }
                sum = t;
            }
            let oracle = (sum + comp) / (a.norm() * b.norm());
            assert!((cosine(&a, &b).unwrap() - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn mock_embed_is_deterministic_and_unit_norm() {
        let a = mock_embed("the kettle is on the stove", 64).unwrap();
        let b = mock_embed("the kettle is on the stove", 64).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert!((mock_embed("", 16).unwrap().norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mock_embed_rejects_tiny_dimension() {
        assert!(matches!(mock_embed("x", 4), Err(Error::Config(_))));
    }

    #[test]
    fn shared_tokens_score_higher_across_seeds() {
        for seed in 0..1000u64 {
            let e = MockEmbedder::with_seed(64, seed).unwrap();
            let a = e.embed("red folder").unwrap();
            let same = cosine(&a, &e.embed("red folder").unwrap()).unwrap();
            let other = cosine(&a, &e.embed("blue pot").unwrap()).unwrap();
            assert!(same > other, "seed {seed}");
        }
    }

    #[test]
    fn overlap_raises_similarity_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut by_overlap = [0.0f64; 4];
        let trials = 300;
        for _ in 0..trials {
            let words: Vec<String> = (0..6).map(|_| format!("w{}", rng.random::<u32>())).collect();
            let base = words[..3].join(" ");
            for (k, slot) in by_overlap.iter_mut().enumerate() {
                let other: Vec<&str> = words[..k].iter().chain(&words[3..3 + (3 - k)]).map(String::as_str).collect();
                let s = cosine(&mock_embed(&base, 64).unwrap(), &mock_embed(&other.join(" "), 64).unwrap()).unwrap();
                *slot += s / trials as f64;
            }
        }
        assert!(by_overlap.windows(2).all(|w| w[0] < w[1]), "{by_overlap:?}");
    }

    #[test]
    fn average_similarity_cases() {
        let v = basis(8, 1);
        assert!((average_similarity(&v, [&v]).unwrap() - 1.0).abs() < 1e-12);
        let neg = Embedding::new(v.as_slice().iter().map(|c| -c).collect()).unwrap();
        let q = mock_embed("anything", 8).unwrap();
        assert!(average_similarity(&q, [&v, &neg]).unwrap().abs() < 1e-12);
        assert!(average_similarity(&q, std::iter::empty()).is_err());
    }

    #[test]
    fn average_similarity_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q = random_unit(&mut rng, 16);
            let snaps: Vec<Embedding> = (0..5).map(|_| random_unit(&mut rng, 16)).collect();
            let mut naive = 0.0;
            for s in &snaps {
                let mut d = 0.0f64;
                for i in 0..16 {
                    d += q.as_slice()[i] as f64 * s.as_slice()[i] as f64;
                }
                naive += d;
            }
            naive /= snaps.len() as f64;
            assert!((average_similarity(&q, &snaps).unwrap() - naive).abs() < 1e-6);
        }
    }

    #[test]
    fn renormalizing_is_bit_stable() {
        let a = mock_embed("stable bits", 32).unwrap();
        let b = Embedding::new(a.as_slice().to_vec()).unwrap();
        assert_eq!(a, b);
    }
}
