//! Frozen embedding providers.
//!
//! The sentence encoder is never trained here. A provider is either a
//! precomputed [`EmbeddingStore`] loaded from JSONL, a bag-of-words hashing
//! encoder, or a hashing encoder followed by a stack of fixed random tanh
//! layers (`mlp`), which exists so cache benchmarks have an encoder whose
//! per-call cost dwarfs a projection.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Vector};

const SIGN_KEY: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed-keyed 64-bit hash: FNV-1a over the bytes, seeded offset basis,
/// splitmix finalizer. Stable across platforms and releases.
pub fn stable_hash(seed: u64, text: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325 ^ splitmix64(seed);
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Signed feature hashing of lowercase whitespace tokens, L2-normalized.
/// Text with no tokens (or whose counts cancel) maps to `e_0`.
pub fn hash_encode(text: &str, dim: usize, seed: u64) -> Result<Vector> {
    if dim < 2 {
        return Err(Error::invalid("hash_encode needs dim >= 2"));
    }
    let mut acc = vec![0.0; dim];
    for tok in tokens(text) {
        let idx = (stable_hash(seed, &tok) % dim as u64) as usize;
        let sign = if stable_hash(seed ^ SIGN_KEY, &tok) >> 63 == 0 {
            1.0
        } else {
            -1.0
        };
        acc[idx] += sign;
    }
    let n = linalg::norm(&acc);
    if n == 0.0 {
        return Ok(Vector::basis(dim, 0));
    }
    acc.iter_mut().for_each(|x| *x /= n);
    Ok(Vector::from_vec(acc))
}

/// Exact-string keyed embedding table with a fixed dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: HashMap<String, Vector>,
}

#[derive(Serialize, Deserialize)]
struct Record<'a> {
    #[serde(borrow)]
    text: std::borrow::Cow<'a, str>,
    embedding: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&Vector> {
        self.entries.get(text)
    }

    pub fn contains(&self, text: &str) -> bool {
        self.entries.contains_key(text)
    }

    /// Inserts a new entry; duplicates and wrong dimensions are rejected.
    pub fn insert(&mut self, text: impl Into<String>, v: Vector) -> Result<()> {
        if v.dim() != self.dim {
            return Err(Error::dims(self.dim, v.dim()));
        }
        let text = text.into();
        if self.entries.contains_key(&text) {
            return Err(Error::invalid(format!("duplicate text {text:?}")));
        }
        self.entries.insert(text, v);
        Ok(())
    }

    /// Texts in sorted order.
    pub fn texts(&self) -> Vec<&str> {
        let mut t: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        t.sort_unstable();
        t
    }

    /// Writes JSONL sorted by text, values narrowed to `f32`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for text in self.texts() {
            let rec = Record {
                text: text.into(),
                embedding: self.entries[text].as_slice().iter().map(|&x| x as f32).collect(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads `{"text": ..., "embedding": [...]}` lines. The first record fixes
/// the dimension. Blank lines are skipped.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut store: Option<EmbeddingStore> = None;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let data: Vec<f64> = rec.embedding.iter().map(|&x| f64::from(x)).collect();
        let v = Vector::new(data).map_err(|e| parse_err(lineno, e.to_string()))?;
        let store = store.get_or_insert_with(|| EmbeddingStore::new(v.dim()));
        if v.dim() != store.dim {
            return Err(parse_err(
                lineno,
                format!("inconsistent dimension: expected {}, got {}", store.dim, v.dim()),
            ));
        }
        if store.contains(&rec.text) {
            return Err(parse_err(lineno, format!("duplicate text {:?}", rec.text)));
        }
        store.entries.insert(rec.text.into_owned(), v);
    }
    store.ok_or_else(|| parse_err(0, "no embeddings in file".into()))
}

/// Fixed random tanh layers applied per token on top of token hashing.
#[derive(Clone, Debug)]
pub struct MlpEncoder {
    dim: usize,
    seed: u64,
    layers: Vec<Vec<f64>>,
}

impl MlpEncoder {
    pub fn new(dim: usize, layers: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("mlp encoder needs dim >= 2"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6c_7000);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let layers = (0..layers)
            .map(|_| (0..dim * dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        Ok(MlpEncoder { dim, seed, layers })
    }

    pub fn embed(&self, text: &str) -> Vector {
        let dim = self.dim;
        let mut pooled = vec![0.0; dim];
        let mut x = vec![0.0; dim];
        let mut y = vec![0.0; dim];
        let mut count = 0usize;
        for tok in tokens(text) {
            let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(self.seed, &tok));
            let normal = Normal::new(0.0, 1.0).expect("valid std");
            x.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            for w in &self.layers {
                linalg::matvec_into(w, dim, &x, &mut y);
                for (xi, yi) in x.iter_mut().zip(&y) {
                    *xi = yi.tanh();
                }
            }
            linalg::axpy(1.0, &x, &mut pooled);
            count += 1;
        }
        let n = linalg::norm(&pooled);
        if count == 0 || n == 0.0 {
            return Vector::basis(dim, 0);
        }
        pooled.iter_mut().for_each(|v| *v /= n);
        Vector::from_vec(pooled)
    }
}

/// A frozen sentence encoder.
#[derive(Clone, Debug)]
pub enum EncoderProvider {
    Store(EmbeddingStore),
    Hashing { dim: usize, seed: u64 },
    Mlp(MlpEncoder),
}

impl EncoderProvider {
    pub fn dim(&self) -> usize {
        match self {
            EncoderProvider::Store(s) => s.dim(),
            EncoderProvider::Hashing { dim, .. } => *dim,
            EncoderProvider::Mlp(m) => m.dim,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EncoderProvider::Store(_) => "store",
            EncoderProvider::Hashing { .. } => "hashing",
            EncoderProvider::Mlp(_) => "mlp",
        }
    }

    /// Embeds `text`. A store miss is an error, never a fallback.
    pub fn embed(&self, text: &str) -> Result<Vector> {
        match self {
            EncoderProvider::Store(s) => s
                .get(text)
                .cloned()
                .ok_or_else(|| Error::MissingEmbedding(text.to_owned())),
            EncoderProvider::Hashing { dim, seed } => hash_encode(text, *dim, *seed),
            EncoderProvider::Mlp(m) => Ok(m.embed(text)),
        }
    }
}

impl From<EmbeddingStore> for EncoderProvider {
    fn from(s: EmbeddingStore) -> Self {
        EncoderProvider::Store(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_text_is_e0() {
        let v = hash_encode("", 8, 0).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(hash_encode("   ", 8, 3).unwrap(), v);
    }

    #[test]
    fn hashing_is_deterministic_and_bag_of_words() {
        let a = hash_encode("The cat sat", 32, 7).unwrap();
        assert_eq!(a, hash_encode("The cat sat", 32, 7).unwrap());
        assert_eq!(
            hash_encode("a b", 16, 1).unwrap(),
            hash_encode("b a", 16, 1).unwrap()
        );
        // lowercasing
        assert_eq!(a, hash_encode("the CAT sat", 32, 7).unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_ne!(a, hash_encode("The cat sat", 32, 8).unwrap());
        assert!(hash_encode("x", 1, 0).is_err());
    }

    #[test]
    fn hashing_unit_norm_on_many_texts() {
        for i in 0..200 {
            let text = format!("token{} other{} third{}", i, i * 7, i % 5);
            let v = hash_encode(&text, 24, 11).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_hash_is_pinned() {
        // Guards against accidental changes to the hash, which would
        // silently change every hashing-provider embedding.
        assert_eq!(stable_hash(0, "a"), stable_hash(0, "a"));
        assert_ne!(stable_hash(0, "a"), stable_hash(1, "a"));
        assert_ne!(stable_hash(0, "a"), stable_hash(0, "b"));
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn load_well_formed() {
        let f = write_lines(&[
            r#"{"text": "a", "embedding": [1.0, 2.0]}"#,
            r#"{"text": "b", "embedding": [0.5, -1.5]}"#,
        ]);
        let s = load_embeddings(f.path()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.dim(), 2);
        assert_eq!(s.get("b").unwrap().as_slice(), &[0.5, -1.5]);
    }

    #[test]
    fn load_errors() {
        let f = write_lines(&[
            r#"{"text": "a", "embedding": [1, 2, 3, 4]}"#,
            r#"{"text": "b", "embedding": [1, 2, 3, 4, 5]}"#,
        ]);
        let err = load_embeddings(f.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("inconsistent dimension"));

        let f = write_lines(&[r#"{"text": "a", "embedding": [1, 2]}"#, "not json"]);
        assert!(matches!(load_embeddings(f.path()), Err(Error::Parse { line: 2, .. })));

        let f = write_lines(&[
            r#"{"text": "a", "embedding": [1, 2]}"#,
            r#"{"text": "a", "embedding": [3, 4]}"#,
        ]);
        let err = load_embeddings(f.path()).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn save_load_round_trip_is_exact_at_f32() {
        let mut s = EmbeddingStore::new(5);
        for i in 0..20 {
            let v = hash_encode(&format!("sentence number {i}"), 5, 3).unwrap();
            let narrowed: Vec<f64> = v.as_slice().iter().map(|&x| f64::from(x as f32)).collect();
            s.insert(format!("s{i}"), Vector::new(narrowed).unwrap()).unwrap();
        }
        let f = tempfile::NamedTempFile::new().unwrap();
        s.save(f.path()).unwrap();
        let back = load_embeddings(f.path()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn provider_embed() {
        let mut s = EmbeddingStore::new(2);
        s.insert("x", Vector::new(vec![3.0, 4.0]).unwrap()).unwrap();
        let p = EncoderProvider::from(s);
        assert_eq!(p.embed("x").unwrap().as_slice(), &[3.0, 4.0]);
        assert!(matches!(p.embed("y"), Err(Error::MissingEmbedding(_))));
        assert!(matches!(p.embed("X"), Err(Error::MissingEmbedding(_))));

        let h = EncoderProvider::Hashing { dim: 12, seed: 5 };
        assert_eq!(h.embed("hello world").unwrap(), hash_encode("hello world", 12, 5).unwrap());
    }

    #[test]
    fn mlp_provider_is_deterministic() {
        let m = MlpEncoder::new(16, 3, 9).unwrap();
        let a = m.embed("some text here");
        assert_eq!(a, m.embed("some text here"));
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(m.embed(""), Vector::basis(16, 0));
        assert_ne!(a, m.embed("other text"));
    }
}
