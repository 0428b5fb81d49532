use super::{EmbeddingError, EmbeddingVector};
use crate::tokenizer::Tokenizer;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn sign_hash(token: &str) -> u64 {
    let mut buf = Vec::with_capacity(5 + token.len());
    buf.extend_from_slice(b"sign:");
    buf.extend_from_slice(token.as_bytes());
    fnv1a64(&buf)
}

/// Signed feature hashing over the lowercased token bag, L2-normalized.
///
/// Tokens come from the tokenizer with surrounding whitespace trimmed; whitespace-only
/// tokens are ignored. Text without any usable token maps to a unit vector on
/// coordinate 0 so that every output is a valid direction.
pub fn local_hash_embed(text: &str, dim: usize, tokenizer: &Tokenizer) -> Result<EmbeddingVector, EmbeddingError> {
    if dim == 0 {
        return Err(EmbeddingError::Config("dim must be positive".into()));
    }
    if text.trim().is_empty() {
        return Err(EmbeddingError::EmptyInput);
    }
    let lowered = text.to_lowercase();
    let mut acc = vec![0f64; dim];
    for token in tokenizer.token_strings(&lowered) {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let index = (fnv1a64(token.as_bytes()) % dim as u64) as usize;
        let sign = if sign_hash(token) & 1 == 0 { 1.0 } else { -1.0 };
        acc[index] += sign;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut values = vec![0f32; dim];
        values[0] = 1.0;
        return EmbeddingVector::new(values);
    }
    EmbeddingVector::new(acc.iter().map(|v| (v / norm) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| f64::from(*x) * f64::from(*y))
            .sum()
    }

    fn words() -> Tokenizer {
        Tokenizer::approximate_words()
    }

    #[test]
    fn fnv_matches_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn repeated_tokens_keep_direction() {
        let a = local_hash_embed("a a a", 64, &words()).unwrap();
        let b = local_hash_embed("a", 64, &words()).unwrap();
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn case_is_ignored() {
        let a = local_hash_embed("Stop Sign", 64, &words()).unwrap();
        let b = local_hash_embed("stop sign", 64, &words()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_texts_give_distinct_vectors() {
        let a = local_hash_embed("stop sign", 256, &words()).unwrap();
        let b = local_hash_embed("yield sign", 256, &words()).unwrap();
        assert_ne!(a.values(), b.values());
    }

    #[test]
    fn disjoint_tokens_are_near_orthogonal_at_high_dim() {
        let a = local_hash_embed("red light camera", 4096, &words()).unwrap();
        let b = local_hash_embed("bicycle lane width", 4096, &words()).unwrap();
        assert!(cosine(&a, &b).abs() < 1e-6);
    }

    #[test]
    fn punctuation_only_text_still_yields_unit_vector() {
        let v = local_hash_embed("   ", 8, &words());
        assert!(matches!(v, Err(EmbeddingError::EmptyInput)));
        let v = local_hash_embed("?!", 8, &words()).unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn shared_token_increases_similarity(
            left in prop::collection::hash_set("[a-m]{3,7}", 1..6),
            right in prop::collection::hash_set("[n-z]{3,7}", 1..6),
            shared in "[0-9]{4}",
        ) {
            let dim = 4096;
            let idx = |t: &str| fnv1a64(t.as_bytes()) % dim as u64;
            let mut all: Vec<&String> = left.iter().chain(&right).collect();
            all.push(&shared);
            let mut buckets: Vec<u64> = all.iter().map(|t| idx(t)).collect();
            buckets.sort_unstable();
            buckets.dedup();
            prop_assume!(buckets.len() == all.len());

            let join = |s: &std::collections::HashSet<String>| s.iter().cloned().collect::<Vec<_>>().join(" ");
            let (l, r) = (join(&left), join(&right));
            let before = cosine(
                &local_hash_embed(&l, dim, &words()).unwrap(),
                &local_hash_embed(&r, dim, &words()).unwrap(),
            );
            let after = cosine(
                &local_hash_embed(&format!("{l} {shared}"), dim, &words()).unwrap(),
                &local_hash_embed(&format!("{r} {shared}"), dim, &words()).unwrap(),
            );
            prop_assert!(after > before, "{} !> {}", after, before);
        }

        #[test]
        fn outputs_are_unit_norm(text in "[a-zA-Z ,.]{1,80}", dim in 1usize..300) {
            prop_assume!(!text.trim().is_empty());
            let v = local_hash_embed(&text, dim, &words()).unwrap();
            prop_assert_eq!(v.dim(), dim);
            prop_assert!((v.norm() - 1.0).abs() <= 1e-6);
        }
    }
}
