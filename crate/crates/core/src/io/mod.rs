//! File formats, mock services, query mining, the synthetic corpus generator
//! and the end-to-end pipeline runner.

pub mod corpus;
pub mod mine;
pub mod ocr;
pub mod pipeline;
pub mod synth;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

/// Pretty JSON with a trailing newline. Output bytes depend only on `value`.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// One compact JSON record per line.
pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, values: impl IntoIterator<Item = &'a T>) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in values {
        serde_json::to_writer(&mut w, v)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Stand-in image tokens for a sample: `n` ids uniform in `[0, image_vocab)`
/// drawn from a stream seeded by `(seed, id)`.
pub fn placeholder_image_tokens(id: &str, n: usize, image_vocab: u32, seed: u64) -> Vec<u32> {
    use rand::{Rng, SeedableRng};
    assert!(image_vocab > 0, "image vocabulary is empty");
    let mut rng = rand_chacha::ChaCha8Rng::from_seed(stream_seed("image-tokens", seed, id));
    (0..n).map(|_| rng.random_range(0..image_vocab)).collect()
}

/// Seed for per-sample random streams: SHA-256 of a domain tag, the global
/// seed and the sample id.
pub(crate) fn stream_seed(tag: &str, seed: u64, id: &str) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update([0]);
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholder_tokens_depend_on_id_and_seed_only() {
        let a = placeholder_image_tokens("x", 32, 7, 1);
        assert_eq!(a, placeholder_image_tokens("x", 32, 7, 1));
        assert_ne!(a, placeholder_image_tokens("y", 32, 7, 1));
        assert_ne!(a, placeholder_image_tokens("x", 32, 7, 2));
        assert!(a.iter().all(|&t| t < 7));
    }
}
