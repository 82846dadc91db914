//! Hashed bag-of-n-grams featurizer.
//!
//! Tokenization is whitespace splitting on the lowercased text with leading
//! and trailing ASCII punctuation stripped per token. N-grams (unigrams, and
//! bigrams when enabled) are hashed with 64-bit FNV-1a and masked to the
//! classifier's bucket count. The same tokenizer feeds the EDA augmenters so
//! augmented text round-trips through identical buckets.

use crate::error::{OddaError, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercase, split on whitespace, strip ASCII punctuation off token edges.
/// Tokens that strip to nothing are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Sparse count vector over `2^bits` hash buckets. Pairs are sorted by
/// bucket index; counts are at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureVector {
    pairs: Vec<(u32, u32)>,
}

impl FeatureVector {
    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of distinct active buckets.
    pub fn nnz(&self) -> usize {
        self.pairs.len()
    }

    pub fn from_counts(mut pairs: Vec<(u32, u32)>) -> Self {
        pairs.sort_by_key(|&(b, _)| b);
        debug_assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(pairs.iter().all(|&(_, c)| c >= 1));
        Self { pairs }
    }
}

/// Hash tokens (and bigrams if `ngram_max == 2`) into `2^bits` buckets,
/// accumulating counts. Empty text yields an empty vector.
pub fn featurize(text: &str, bits: u32, ngram_max: u32) -> Result<FeatureVector> {
    if !(12..=24).contains(&bits) {
        return Err(OddaError::Config(format!("hash bits must be in [12, 24], got {bits}")));
    }
    if !(1..=2).contains(&ngram_max) {
        return Err(OddaError::Config(format!("ngram_max must be 1 or 2, got {ngram_max}")));
    }
    let tokens = tokenize(text);
    Ok(featurize_tokens(&tokens, bits, ngram_max))
}

/// As [`featurize`] but over pre-tokenized input.
pub fn featurize_tokens(tokens: &[String], bits: u32, ngram_max: u32) -> FeatureVector {
    let mask = (1u64 << bits) - 1;
    let mut buckets: Vec<u32> = Vec::with_capacity(tokens.len() * ngram_max as usize);
    for t in tokens {
        buckets.push((fnv1a_64(t.as_bytes()) & mask) as u32);
    }
    if ngram_max == 2 {
        for pair in tokens.windows(2) {
            let joined = format!("{} {}", pair[0], pair[1]);
            buckets.push((fnv1a_64(joined.as_bytes()) & mask) as u32);
        }
    }
    buckets.sort_unstable();
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for b in buckets {
        match pairs.last_mut() {
            Some(last) if last.0 == b => last.1 += 1,
            _ => pairs.push((b, 1)),
        }
    }
    FeatureVector { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a test vectors
        assert_eq!(fnv1a_64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a_64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a_64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn empty_text_empty_vector() {
        let fv = featurize("", 12, 2).unwrap();
        assert!(fv.is_empty());
        // also when punctuation strips everything away
        let fv = featurize("!!! ...", 12, 2).unwrap();
        assert!(fv.is_empty());
    }

    #[test]
    fn repeated_token_accumulates() {
        let fv = featurize("a a", 12, 1).unwrap();
        assert_eq!(fv.nnz(), 1);
        assert_eq!(fv.pairs()[0].1, 2);
    }

    #[test]
    fn bigrams_add_buckets() {
        let uni = featurize("red fox", 14, 1).unwrap();
        let bi = featurize("red fox", 14, 2).unwrap();
        assert_eq!(uni.nnz(), 2);
        assert_eq!(bi.pairs().iter().map(|&(_, c)| c).sum::<u32>(), 3);
    }

    #[test]
    fn tokenizer_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("Hello, World!"), vec!["hello", "world"]);
        assert_eq!(tokenize("don't stop"), vec!["don't", "stop"]);
    }

    #[test]
    fn featurize_is_deterministic() {
        let texts = ["the quick brown fox", "a b c d e f", "x"];
        for t in texts {
            assert_eq!(featurize(t, 18, 2).unwrap(), featurize(t, 18, 2).unwrap());
        }
    }

    #[test]
    fn bits_out_of_range_rejected() {
        assert!(featurize("x", 11, 1).is_err());
        assert!(featurize("x", 25, 1).is_err());
    }
}
