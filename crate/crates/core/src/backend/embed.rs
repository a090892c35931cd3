use crate::error::{Error, Result};

/// Sentence embedding contract: deterministic, finite, unit L2 norm.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Character 3-gram feature hashing into `dimension` buckets, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

pub fn make_hash_embedder(dimension: usize, seed: u64) -> Result<HashEmbedder> {
    if dimension < 8 {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension {dimension} below minimum of 8"
        )));
    }
    Ok(HashEmbedder { dimension, seed })
}

fn fnv1a(seed: u64, chars: &[char]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x0000_0100_0000_01b3);
    for c in chars {
        let mut buf = [0u8; 4];
        for b in c.encode_utf8(&mut buf).bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl HashEmbedder {
    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        // Boundary markers make every string, including "", yield at least one gram.
        let chars: Vec<char> = std::iter::once('\u{2}')
            .chain(text.chars())
            .chain(std::iter::once('\u{3}'))
            .collect();
        let mut v = vec![0.0; self.dimension];
        if chars.len() < 3 {
            v[(fnv1a(self.seed, &chars) % self.dimension as u64) as usize] += 1.0;
        } else {
            for gram in chars.windows(3) {
                v[(fnv1a(self.seed, gram) % self.dimension as u64) as usize] += 1.0;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_unit_vectors() {
        let e = make_hash_embedder(32, 7).unwrap();
        for s in ["", "a", "PersonX bows in South Korea", "ñandú"] {
            let v = e.embed(s);
            assert_eq!(v, e.embed(s));
            assert_eq!(v.len(), 32);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            assert!((cosine(&v, &v) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn seed_changes_buckets_and_dimension_is_checked() {
        let a = make_hash_embedder(64, 1).unwrap().embed("henna wedding");
        let b = make_hash_embedder(64, 2).unwrap().embed("henna wedding");
        assert_ne!(a, b);
        assert!(make_hash_embedder(4, 0).is_err());
    }
}
