//! Report writers and per-component random streams. Everything goes
//! through the library's atomic writer.

use std::path::Path;

use anyhow::Context;
use fqc_core::io::write_atomic;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Stream ids for [`component_rng`]. One run seed feeds all of them.
pub mod stream {
    pub const GRAD_CHECK: u64 = 1;
    pub const BENCH_INPUT: u64 = 2;
    pub const BENCH_LAYER: u64 = 3;
    pub const CLASSIFIER: u64 = 4;
    pub const SURROGATE: u64 = 5;
}

/// Independent ChaCha stream `stream` under the run seed.
pub fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A `u64` seed derived from a component stream, for APIs that take one.
pub fn component_seed(seed: u64, stream: u64) -> u64 {
    use rand::RngCore;
    component_rng(seed, stream).next_u64()
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    write_text(path, &s)
}
