use crate::error::{Error, Result};

use super::Vector;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Signed feature hashing of lowercased character 3-grams into `dim` buckets,
/// L2-normalized. Inputs shorter than three characters hash as one gram.
pub fn stub_embed(text: &str, dim: usize) -> Result<Vector> {
    if dim < 8 {
        return Err(Error::param(format!(
            "stub dimension must be at least 8, got {dim}"
        )));
    }
    if text.is_empty() {
        return Err(Error::Data("cannot embed an empty string".into()));
    }
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut acc = vec![0f64; dim];
    let mut gram = String::with_capacity(12);
    let mut add = |g: &[char]| {
        gram.clear();
        gram.extend(g);
        let h = fnv1a(gram.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 40) & 1 == 1 { -1.0 } else { 1.0 };
        acc[bucket] += sign;
    };
    if chars.len() < 3 {
        add(&chars);
    } else {
        chars.windows(3).for_each(&mut add);
    }
    Vector::normalized(acc.into_iter().map(|v| v as f32).collect())
        .map_err(|_| Error::Data(format!("stub embedding of {text:?} cancels to zero")))
}

/// [`stub_embed`] widened to f64, as input features for the toy encoder.
pub fn stub_features(text: &str, dim: usize) -> Result<Vec<f64>> {
    Ok(stub_embed(text, dim)?
        .as_slice()
        .iter()
        .map(|&v| v as f64)
        .collect())
}
