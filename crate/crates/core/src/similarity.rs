//! Judgment functions for the reward stage.
//!
//! Two scores feed the step-wise reasoning reward: a semantic-consistency
//! score between the policy's audio reasoning and the reference reasoning,
//! and a coherence score between the audio and visual reasoning. Both go
//! through the [`Scorer`] trait. [`HashedBagScorer`] is a deterministic local
//! implementation (hashed bag-of-tokens cosine); [`RemoteScorer`] calls an
//! external embedding service over HTTP.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// FNV-1a 64-bit offset basis.
pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
/// FNV-1a 64-bit prime, the multiplier of the token hash.
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
/// Default number of hash buckets for the local embedding.
pub const DEFAULT_EMBED_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerTask {
    /// Is the query semantically consistent with the content?
    Consistency,
    /// Is the content coherent with the query?
    Coherence,
}

impl ScorerTask {
    pub fn instruction(self) -> &'static str {
        match self {
            ScorerTask::Consistency => {
                "Judge whether the given query is semantically consistent with the provided content"
            }
            ScorerTask::Coherence => "Given a query, retrieve semantically coherent content",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScorerTask::Consistency => "consistency",
            ScorerTask::Coherence => "coherence",
        }
    }
}

impl fmt::Display for ScorerTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            Self(0.0)
        } else {
            Self(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("scorer backend rejected the request with HTTP {status}")]
    Rejected { status: u16 },
    #[error("malformed scorer reply: {0}")]
    MalformedReply(String),
}

pub trait Scorer: Send + Sync {
    fn score(&self, task: ScorerTask, query: &str, content: &str) -> Result<SimilarityScore, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, task: ScorerTask, query: &str, content: &str) -> Result<SimilarityScore, ScorerError> {
        (**self).score(task, query, content)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score(&self, task: ScorerTask, query: &str, content: &str) -> Result<SimilarityScore, ScorerError> {
        (**self).score(task, query, content)
    }
}

/// Lowercases, drops every character that is neither alphanumeric nor
/// whitespace, and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Sparse count vector with entries sorted by bucket index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum()
    }

    /// Cosine similarity; 0 when either vector is zero.
    pub fn cosine(&self, other: &SparseVector) -> f64 {
        let denom = (self.norm_sq() * other.norm_sq()).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }
}

/// Hashed bag-of-tokens cosine scorer.
///
/// Tokens are hashed with FNV-1a 64 (offset basis `0xcbf29ce484222325`,
/// prime `0x100000001b3`) over their UTF-8 bytes and reduced modulo `dim`.
/// Both scorer tasks share this backend.
#[derive(Debug, Clone)]
pub struct HashedBagScorer {
    dim: usize,
}

impl Default for HashedBagScorer {
    fn default() -> Self {
        Self::new(DEFAULT_EMBED_DIM)
    }
}

impl HashedBagScorer {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0 && dim <= u32::MAX as usize, "embedding dimension must be in 1..=u32::MAX");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket(&self, token: &str) -> u32 {
        (fnv1a64(token.as_bytes()) % self.dim as u64) as u32
    }

    pub fn embed(&self, text: &str) -> SparseVector {
        let mut buckets: Vec<u32> = tokenize(text).iter().map(|t| self.bucket(t)).collect();
        buckets.sort_unstable();
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(buckets.len());
        for b in buckets {
            match entries.last_mut() {
                Some((last, count)) if *last == b => *count += 1.0,
                _ => entries.push((b, 1.0)),
            }
        }
        SparseVector { entries }
    }
}

impl Scorer for HashedBagScorer {
    fn score(&self, _task: ScorerTask, query: &str, content: &str) -> Result<SimilarityScore, ScorerError> {
        Ok(SimilarityScore::clamped(self.embed(query).cosine(&self.embed(content))))
    }
}

#[derive(Debug, Serialize)]
struct RemoteRequest<'a> {
    task: &'a str,
    instruction: &'a str,
    query: &'a str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct RemoteReply {
    score: f64,
}

/// HTTP client for an external embedding service.
///
/// POSTs `{"task", "instruction", "query", "content"}` as JSON and expects
/// `{"score": number}` back. Transport errors and 5xx replies are retried
/// with exponential backoff; after the last attempt the call fails with
/// [`ScorerError::BackendUnavailable`].
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    endpoint: String,
    agent: ureq::Agent,
    attempts: u32,
    backoff: Duration,
}

impl RemoteScorer {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
    pub const DEFAULT_ATTEMPTS: u32 = 3;
    pub const DEFAULT_BACKOFF: Duration = Duration::from_millis(200);

    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
            attempts: Self::DEFAULT_ATTEMPTS,
            backoff: Self::DEFAULT_BACKOFF,
        }
    }

    /// Initial backoff; doubles after each failed attempt.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_attempts(mut self, attempts: u32) -> Self {
        self.attempts = attempts.max(1);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, body: &RemoteRequest<'_>) -> Result<SimilarityScore, Attempt> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(ScorerError::Rejected { status }));
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let reply: RemoteReply = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(ScorerError::MalformedReply(format!("{e}: {text}"))))?;
        Ok(SimilarityScore::clamped(reply.score))
    }
}

enum Attempt {
    Retry(String),
    Fatal(ScorerError),
}

impl Scorer for RemoteScorer {
    fn score(&self, task: ScorerTask, query: &str, content: &str) -> Result<SimilarityScore, ScorerError> {
        let body = RemoteRequest {
            task: task.as_str(),
            instruction: task.instruction(),
            query,
            content,
        };
        let mut delay = self.backoff;
        let mut reason = String::new();
        for attempt in 1..=self.attempts {
            match self.attempt(&body) {
                Ok(score) => return Ok(score),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(r)) => reason = r,
            }
            if attempt < self.attempts {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(ScorerError::BackendUnavailable {
            attempts: self.attempts,
            reason,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    /// Token-multiset cosine without hashing.
    fn bag_cosine(a: &str, b: &str) -> f64 {
        let bag = |s: &str| {
            let mut m: HashMap<String, f64> = HashMap::new();
            for t in tokenize(s) {
                *m.entry(t).or_default() += 1.0;
            }
            m
        };
        let (ba, bb) = (bag(a), bag(b));
        let dot: f64 = ba.iter().map(|(k, v)| v * bb.get(k).copied().unwrap_or(0.0)).sum();
        let na: f64 = ba.values().map(|v| v * v).sum();
        let nb: f64 = bb.values().map(|v| v * v).sum();
        dot / (na * nb).sqrt()
    }

    #[test]
    fn identical_text_scores_one() {
        let s = HashedBagScorer::default();
        for text in ["drum", "I listen carefully and hear no drum sound in the recording", "a a b"] {
            for task in [ScorerTask::Consistency, ScorerTask::Coherence] {
                assert_eq!(s.score(task, text, text).unwrap().value(), 1.0);
            }
        }
    }

    #[test]
    fn disjoint_tokens_score_zero() {
        let s = HashedBagScorer::default();
        let (q, c) = ("violin cello", "drum piano");
        let qb: Vec<u32> = tokenize(q).iter().map(|t| s.bucket(t)).collect();
        let cb: Vec<u32> = tokenize(c).iter().map(|t| s.bucket(t)).collect();
        assert!(qb.iter().all(|b| !cb.contains(b)), "bucket collision in fixture");
        assert_eq!(s.score(ScorerTask::Consistency, q, c).unwrap().value(), 0.0);
    }

    #[test]
    fn hand_cosine_example() {
        // {loud, drum, beat, heard} vs {a, drum, beat, is, heard}: 3 shared.
        let expected = 3.0 / 20f64.sqrt();
        assert!((bag_cosine("loud drum beat heard", "a drum beat is heard") - expected).abs() < 1e-15);
        let got = HashedBagScorer::default()
            .score(ScorerTask::Consistency, "loud drum beat heard", "a drum beat is heard")
            .unwrap()
            .value();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn embed_normalizes_case_and_punctuation() {
        let s = HashedBagScorer::default();
        assert!(s.embed("").is_zero());
        let v = s.embed("Drum, drum!");
        assert_eq!(v.entries().len(), 1);
        assert_eq!(v.entries()[0].1, 2.0);
        assert_eq!(v, s.embed("drum drum"));
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let s = HashedBagScorer::default();
        let a = "the cello hums under the flute";
        let aa = format!("{a} {a}");
        assert!((s.embed(a).cosine(&s.embed(&aa)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), FNV_OFFSET_BASIS);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn adding_shared_token_never_lowers_numerator() {
        let s = HashedBagScorer::default();
        let q = s.embed("drum sound heard clearly");
        let c = "a quiet room";
        let before = q.dot(&s.embed(c));
        let after = q.dot(&s.embed(&format!("{c} drum")));
        assert!(after >= before);
    }

    #[test]
    fn clamp_bounds() {
        assert_eq!(SimilarityScore::clamped(1.7).value(), 1.0);
        assert_eq!(SimilarityScore::clamped(-0.2).value(), 0.0);
        assert_eq!(SimilarityScore::clamped(f64::NAN).value(), 0.0);
        assert_eq!(SimilarityScore::clamped(0.83).value(), 0.83);
    }

    proptest::proptest! {
        #[test]
        fn hashed_matches_bag_cosine(a in "[a-h ]{0,30}", b in "[a-h ]{0,30}") {
            // Two-letter-or-less vocabulary over 8 letters; check against the
            // unhashed oracle whenever no bucket collision occurs.
            let s = HashedBagScorer::default();
            let mut toks: Vec<String> = tokenize(&a);
            toks.extend(tokenize(&b));
            toks.sort();
            toks.dedup();
            let mut buckets: Vec<u32> = toks.iter().map(|t| s.bucket(t)).collect();
            buckets.sort();
            buckets.dedup();
            proptest::prop_assume!(buckets.len() == toks.len());
            let got = s.score(ScorerTask::Coherence, &a, &b).unwrap().value();
            let want = bag_cosine(&a, &b);
            let want = if want.is_nan() { 0.0 } else { want };
            proptest::prop_assert!((got - want).abs() < 1e-12);
            proptest::prop_assert!((0.0..=1.0).contains(&got));
        }
    }
}
