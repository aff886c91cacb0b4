use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Text encoder seam: tokenization for attention spans, sentence
/// embeddings for the condition map.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn tokenize(&self, text: &str) -> Vec<String>;
    fn embed(&self, text: &str) -> Vec<f32>;
}

/// Deterministic stand-in encoder. Tokens are the lowercase
/// whitespace-separated words; each token hashes (SHA-256) to a seed for a
/// unit-length random vector, and a sentence is the mean of its tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { dim }
    }

    fn token_vector(&self, token: &str) -> Vec<f32> {
        let digest = Sha256::digest(token.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.into_iter().map(|x| (x / norm) as f32).collect()
    }
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_lowercase).collect()
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        let tokens = self.tokenize(text);
        let mut acc = vec![0f64; self.dim];
        for t in &tokens {
            for (a, v) in acc.iter_mut().zip(self.token_vector(t)) {
                *a += f64::from(v);
            }
        }
        let n = tokens.len().max(1) as f64;
        acc.into_iter().map(|a| (a / n) as f32).collect()
    }
}
