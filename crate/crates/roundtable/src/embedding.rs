//! Response embeddings and the cosine geometry used by every downstream stage.
//!
//! Embeddings are plain `f64` vectors. All agent responses are L2-normalized
//! at ingestion so that every embedding has unit norm; the contribution
//! bounds in [`crate::valuation`] assume equal norms and normalization makes
//! that hold regardless of which encoder produced the vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net;

/// A fixed-dimension semantic vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyEmbeddingList);
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.norm() < 1e-12
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Returns a unit-norm copy, or a zero-vector error when no direction exists.
    pub fn normalized(&self) -> Result<Embedding> {
        let n = self.norm();
        if n < 1e-12 {
            return Err(Error::ZeroVector);
        }
        Ok(Embedding {
            values: self.values.iter().map(|v| v / n).collect(),
        })
    }
}

/// Cosine similarity between two nonzero vectors of equal dimension.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    let dot = a.dot(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na < 1e-12 || nb < 1e-12 {
        return Err(Error::ZeroVector);
    }
    Ok(dot / (na * nb))
}

/// Componentwise arithmetic mean of a non-empty list. Deliberately not
/// renormalized: the mean of unit vectors has norm at most one, and the
/// valuation bounds lean on that.
pub fn mean_embedding(rs: &[Embedding]) -> Result<Embedding> {
    let first = rs.first().ok_or(Error::EmptyEmbeddingList)?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for r in rs {
        if r.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.dim(),
            });
        }
        for (a, v) in acc.iter_mut().zip(r.values()) {
            *a += v;
        }
    }
    let n = rs.len() as f64;
    Ok(Embedding {
        values: acc.into_iter().map(|a| a / n).collect(),
    })
}

/// Which encoder backs [`embed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    /// Seeded feature-hashing encoder; a pure function of (text, seed).
    DeterministicTest,
    /// Remote embedding service speaking a JSON POST protocol.
    HttpService,
}

/// Encoder selection plus the knobs each kind needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    /// Seed for the deterministic-test encoder.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_max_retries() -> u32 {
    3
}

pub const DEFAULT_EMBEDDING_DIM: usize = 384;

impl EmbedderSpec {
    pub fn deterministic_test(dim: usize, seed: u64) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::DeterministicTest,
            dim,
            endpoint: None,
            model_name: None,
            seed,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
        }
    }

    pub fn http_service(endpoint: impl Into<String>, model: impl Into<String>, dim: usize) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::HttpService,
            dim,
            endpoint: Some(endpoint.into()),
            model_name: Some(model.into()),
            seed: 0,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidEmbedderSpec("dim must be positive".into()));
        }
        if self.kind == EmbedderKind::HttpService
            && self.endpoint.as_deref().unwrap_or("").is_empty()
        {
            return Err(Error::InvalidEmbedderSpec(
                "http-service embedder requires a non-empty endpoint".into(),
            ));
        }
        Ok(())
    }
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::deterministic_test(DEFAULT_EMBEDDING_DIM, 0)
    }
}

/// Embed `text` under `spec`, returning a unit-norm vector of `spec.dim`.
pub fn embed(text: &str, spec: &EmbedderSpec) -> Result<Embedding> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    spec.validate()?;
    match spec.kind {
        EmbedderKind::DeterministicTest => Ok(deterministic_embed(text, spec.seed, spec.dim)),
        EmbedderKind::HttpService => http_embed(text, spec),
    }
}

// --- deterministic-test encoder -------------------------------------------

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// 64-bit FNV-1a. DefaultHasher is not stable across releases; this is.
pub(crate) fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Feature-hashing encoder: word unigrams, word bigrams, and padded character
/// trigrams, each hashed to a signed coordinate, then L2-normalized.
fn deterministic_embed(text: &str, seed: u64, dim: usize) -> Embedding {
    let mut values = vec![0.0_f64; dim];
    let lowered = text.to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();

    let mut bump = |tag: u8, bytes: &[u8]| {
        let mut payload = Vec::with_capacity(bytes.len() + 1);
        payload.push(tag);
        payload.extend_from_slice(bytes);
        let h = fnv1a(seed, &payload);
        let idx = (h % dim as u64) as usize;
        let sign = if h & (1 << 63) == 0 { 1.0 } else { -1.0 };
        values[idx] += sign;
    };

    for w in &words {
        bump(b'u', w.as_bytes());
        let padded: Vec<char> = std::iter::once('^')
            .chain(w.chars())
            .chain(std::iter::once('$'))
            .collect();
        for tri in padded.windows(3) {
            let s: String = tri.iter().collect();
            bump(b'c', s.as_bytes());
        }
    }
    for pair in words.windows(2) {
        let joined = format!("{} {}", pair[0], pair[1]);
        bump(b'b', joined.as_bytes());
    }

    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        // Signed collisions cancelled everything; fall back to a single
        // deterministic coordinate so the vector stays usable.
        let h = fnv1a(seed, lowered.as_bytes());
        values = vec![0.0; dim];
        values[(h % dim as u64) as usize] = 1.0;
        return Embedding { values };
    }
    for v in &mut values {
        *v /= norm;
    }
    Embedding { values }
}

// --- http-service encoder --------------------------------------------------

fn http_embed(text: &str, spec: &EmbedderSpec) -> Result<Embedding> {
    let endpoint = spec.endpoint.as_deref().expect("validated above");
    let body = serde_json::json!({
        "model": spec.model_name.clone().unwrap_or_default(),
        "input": [text],
    });
    let response = net::post_json(
        endpoint,
        &body,
        &net::RetryPolicy::new(spec.max_retries, spec.timeout_secs),
        &[],
    )?;
    let vector = extract_embedding_vector(&response)?;
    if vector.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            got: vector.len(),
        });
    }
    Embedding { values: vector }.normalized()
}

/// Pull the first embedding vector out of a service response. Accepts the
/// OpenAI-style `{"data": [{"embedding": [...]}]}` shape as well as a bare
/// `{"embeddings": [[...]]}` or `[[...]]`.
fn extract_embedding_vector(response: &serde_json::Value) -> Result<Vec<f64>> {
    let candidate = response
        .get("data")
        .and_then(|d| d.get(0))
        .and_then(|e| e.get("embedding"))
        .or_else(|| response.get("embeddings").and_then(|e| e.get(0)))
        .or_else(|| response.get(0));
    let arr = candidate
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::MalformedResponse("no embedding array in response".into()))?;
    arr.iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| Error::MalformedResponse("non-numeric embedding entry".into()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(values: &[f64]) -> Embedding {
        Embedding::new(values.to_vec()).unwrap()
    }

    #[test]
    fn deterministic_embedder_is_pure_in_text_and_seed() {
        let spec = EmbedderSpec::deterministic_test(64, 7);
        let a = embed("abc", &spec).unwrap();
        let b = embed("abc", &spec).unwrap();
        assert_eq!(a, b);

        let other_seed = EmbedderSpec::deterministic_test(64, 8);
        let c = embed("abc", &other_seed).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn identical_texts_have_unit_cosine() {
        let spec = EmbedderSpec::deterministic_test(96, 3);
        let a = embed("the cat sat", &spec).unwrap();
        let b = embed("the cat sat", &spec).unwrap();
        assert!((cosine(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corpus_is_unit_norm_with_bounded_cosines() {
        let spec = EmbedderSpec::deterministic_test(48, 11);
        let texts = [
            "alpha", "beta gamma", "delta", "epsilon zeta", "eta", "theta iota", "kappa",
            "lambda mu", "nu xi", "omicron pi rho",
        ];
        let embs: Vec<Embedding> = texts.iter().map(|t| embed(t, &spec).unwrap()).collect();
        for e in &embs {
            assert!((e.norm() - 1.0).abs() < 1e-9);
        }
        for i in 0..embs.len() {
            for j in 0..embs.len() {
                let c = cosine(&embs[i], &embs[j]).unwrap();
                assert!(c.abs() <= 1.0 + 1e-12, "cosine {c} out of range");
            }
        }
    }

    #[test]
    fn empty_text_is_rejected() {
        let spec = EmbedderSpec::deterministic_test(16, 0);
        assert!(matches!(embed("", &spec), Err(Error::EmptyText)));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn cosine_identity_orthogonal_and_diagonal() {
        let x = emb(&[1.0, 0.0]);
        let y = emb(&[0.0, 1.0]);
        assert_eq!(cosine(&x, &x).unwrap(), 1.0);
        assert_eq!(cosine(&x, &y).unwrap(), 0.0);
        let d = emb(&[1.0 / 2.0_f64.sqrt(), 1.0 / 2.0_f64.sqrt()]);
        assert!((cosine(&d, &x).unwrap() - 0.70710678).abs() < 1e-8);
    }

    #[test]
    fn cosine_error_paths() {
        let x = emb(&[1.0, 0.0]);
        let z = emb(&[0.0, 0.0]);
        let w = emb(&[1.0, 0.0, 0.0]);
        assert!(matches!(cosine(&x, &z), Err(Error::ZeroVector)));
        assert!(matches!(
            cosine(&x, &w),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn mean_embedding_examples() {
        let x = emb(&[1.0, 0.0]);
        let y = emb(&[0.0, 1.0]);
        assert_eq!(
            mean_embedding(&[x.clone(), x.clone()]).unwrap().values(),
            &[1.0, 0.0]
        );
        assert_eq!(
            mean_embedding(&[x.clone(), y.clone()]).unwrap().values(),
            &[0.5, 0.5]
        );
        let neg = emb(&[-1.0, 0.0]);
        let cancelled = mean_embedding(&[x.clone(), neg]).unwrap();
        assert!(cancelled.is_zero());
        assert!(matches!(cosine(&cancelled, &x), Err(Error::ZeroVector)));
        assert!(matches!(mean_embedding(&[]), Err(Error::EmptyEmbeddingList)));
    }

    #[test]
    fn mean_norm_never_exceeds_max_input_norm() {
        let spec = EmbedderSpec::deterministic_test(32, 5);
        let embs: Vec<Embedding> = ["a b c", "c d e", "e f g", "g h i"]
            .iter()
            .map(|t| embed(t, &spec).unwrap())
            .collect();
        let mean = mean_embedding(&embs).unwrap();
        let max_norm = embs.iter().map(|e| e.norm()).fold(0.0, f64::max);
        assert!(mean.norm() <= max_norm + 1e-12);
    }

    #[test]
    fn http_spec_requires_endpoint() {
        let mut spec = EmbedderSpec::http_service("", "m", 4);
        assert!(spec.validate().is_err());
        spec.endpoint = Some("http://localhost:1".into());
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn http_embedder_round_trip_with_retry() {
        use crate::testsupport::stub::StubServer;
        let server = StubServer::with_handler(|idx, body| {
            assert!(body.contains("\"input\""));
            if idx == 0 {
                (429, "{}".to_string())
            } else {
                (200, serde_json::json!({"data": [{"embedding": [3.0, 4.0]}]}).to_string())
            }
        });
        let mut spec = EmbedderSpec::http_service(server.url(), "embed-model", 2);
        spec.max_retries = 2;
        spec.timeout_secs = 5;
        let embedding = embed("hello", &spec).unwrap();
        // Normalized at ingestion.
        assert!((embedding.values()[0] - 0.6).abs() < 1e-12);
        assert!((embedding.values()[1] - 0.8).abs() < 1e-12);
        assert_eq!(server.calls(), 2);
        server.finish();
    }

    #[test]
    fn http_embedder_rejects_wrong_dimension() {
        use crate::testsupport::stub::StubServer;
        let server = StubServer::chat_completions(vec![serde_json::json!({
            "data": [{"embedding": [1.0, 2.0, 3.0]}]
        })]);
        let mut spec = EmbedderSpec::http_service(server.url(), "embed-model", 4);
        spec.max_retries = 0;
        spec.timeout_secs = 5;
        assert!(matches!(
            embed("hello", &spec),
            Err(Error::DimensionMismatch { expected: 4, got: 3 })
        ));
        server.finish();
    }

    #[test]
    fn extract_vector_accepts_common_shapes() {
        let openai: serde_json::Value =
            serde_json::json!({"data": [{"embedding": [1.0, 2.0]}]});
        assert_eq!(extract_embedding_vector(&openai).unwrap(), vec![1.0, 2.0]);
        let bare: serde_json::Value = serde_json::json!([[0.5, 0.25]]);
        assert_eq!(extract_embedding_vector(&bare).unwrap(), vec![0.5, 0.25]);
        let named: serde_json::Value = serde_json::json!({"embeddings": [[3.0]]});
        assert_eq!(extract_embedding_vector(&named).unwrap(), vec![3.0]);
        let junk: serde_json::Value = serde_json::json!({"oops": true});
        assert!(extract_embedding_vector(&junk).is_err());
    }
}
