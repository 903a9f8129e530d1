//! Probabilistic agent simulator.
//!
//! Each simulated agent answers correctly with probability `p` (lifted to a
//! configured value when a correct peer answer is present in its prompt) and
//! otherwise picks one of `K` wrong answers. Response embeddings follow a
//! fixed cluster geometry: correct responses are jittered around a shared
//! center so pairwise cosines stay at or above `alpha`, each wrong answer
//! sits on its own fixed direction with cross-cosines at or below `beta`,
//! and two agents that pick the same wrong answer agree (near-unit cosine).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bundle_prompt_tokens, approx_tokens, PromptBundle, ResponseRecord};
use crate::embedding::Embedding;
use crate::error::{Error, Result};

/// Canonical text of a correct simulated answer.
pub const CORRECT_TEXT: &str = "C";

/// Text tag for wrong answer `k` (1-based).
pub fn wrong_text(k: usize) -> String {
    format!("W{}", k + 1)
}

/// Parameters of one simulated agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAgentModel {
    /// Probability of answering correctly with no peer signal.
    pub p_correct: f64,
    /// Probability of each wrong answer; sums to `1 - p_correct`.
    pub wrong_answer_probs: Vec<f64>,
    /// Within-correct-cluster cosine floor.
    pub alpha: f64,
    /// Cross-cluster cosine ceiling.
    pub beta: f64,
    /// Embedding dimension of the simulated geometry.
    pub dim: usize,
    pub seed: u64,
    /// Correct probability used instead of `p_correct` when a correct peer
    /// answer is present in the prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_uplift: Option<f64>,
}

impl SimAgentModel {
    /// Uniform wrong-answer mass over `k_wrong` alternatives.
    pub fn uniform(p_correct: f64, k_wrong: usize, alpha: f64, beta: f64, dim: usize, seed: u64) -> Self {
        let wrong_mass = 1.0 - p_correct;
        let wrong_answer_probs = if k_wrong == 0 {
            Vec::new()
        } else {
            vec![wrong_mass / k_wrong as f64; k_wrong]
        };
        SimAgentModel {
            p_correct,
            wrong_answer_probs,
            alpha,
            beta,
            dim,
            seed,
            p_uplift: None,
        }
    }

    pub fn with_uplift(mut self, p_uplift: f64) -> Self {
        self.p_uplift = Some(p_uplift);
        self
    }

    pub fn k_wrong(&self) -> usize {
        self.wrong_answer_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_correct) {
            return Err(Error::InvalidDistribution(format!(
                "p_correct {} outside [0, 1]",
                self.p_correct
            )));
        }
        if self.wrong_answer_probs.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidDistribution(
                "negative wrong-answer probability".into(),
            ));
        }
        let wrong_mass: f64 = self.wrong_answer_probs.iter().sum();
        if (wrong_mass - (1.0 - self.p_correct)).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!(
                "wrong-answer mass {} does not complement p_correct {}",
                wrong_mass, self.p_correct
            )));
        }
        if self.p_correct < 1.0 - 1e-12 && self.wrong_answer_probs.is_empty() {
            return Err(Error::InvalidDistribution(
                "p_correct < 1 requires at least one wrong answer".into(),
            ));
        }
        if let Some(u) = self.p_uplift {
            if !(0.0..=1.0).contains(&u) {
                return Err(Error::InvalidDistribution(format!(
                    "p_uplift {u} outside [0, 1]"
                )));
            }
        }
        ClusterGeometry::new(self.alpha, self.beta, self.k_wrong(), self.dim).map(|_| ())
    }

    pub(crate) fn geometry(&self) -> Result<ClusterGeometry> {
        ClusterGeometry::new(self.alpha, self.beta, self.k_wrong(), self.dim)
    }

    /// The correct probability in effect given the peer messages at hand.
    pub fn effective_p(&self, bundle: &PromptBundle) -> f64 {
        let heard_correct = bundle.collab.iter().any(|(_, text)| text == CORRECT_TEXT);
        if heard_correct {
            self.p_uplift.unwrap_or(self.p_correct)
        } else {
            self.p_correct
        }
    }
}

/// Fixed embedding geometry for a (alpha, beta, K, dim) configuration.
///
/// Axis layout: coordinate 0 is the correct-cluster center; coordinates
/// `1..=K` anchor the wrong-answer directions; the remaining coordinates
/// split into two orthogonal jitter subspaces, one for correct samples and
/// one for wrong samples. Wrong answer `k` sits on the unit axis
/// `beta * e0 + sqrt(1 - beta^2) * e_{k+1}`, so every cross-cluster cosine
/// stays at most `beta` exactly. Correct samples ride a cone around `e0`
/// whose half-angle keeps within-cluster cosines at least `alpha`; wrong
/// samples ride a cone around their axis tight enough that same-answer
/// pairs still agree (cosine at least `alpha`) while distinct wrong answers
/// stay under `beta`. Disjoint jitter subspaces keep the cross bounds exact
/// and break score ties between distinct wrong answers.
#[derive(Debug, Clone)]
pub(crate) struct ClusterGeometry {
    pub dim: usize,
    pub beta: f64,
    cos_correct: f64,
    sin_correct: f64,
    cos_wrong: f64,
    sin_wrong: f64,
    correct_jitter: std::ops::Range<usize>,
    wrong_jitter: std::ops::Range<usize>,
}

impl ClusterGeometry {
    pub fn new(alpha: f64, beta: f64, k_wrong: usize, dim: usize) -> Result<Self> {
        if alpha <= beta {
            return Err(Error::InfeasibleGeometry(format!(
                "alpha {alpha} must exceed beta {beta}"
            )));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InfeasibleGeometry(format!(
                "beta {beta} outside [0, 1]"
            )));
        }
        if alpha > 1.0 {
            return Err(Error::InfeasibleGeometry(format!("alpha {alpha} above 1")));
        }
        if dim < k_wrong + 2 {
            return Err(Error::InfeasibleGeometry(format!(
                "dim {dim} too small for {k_wrong} wrong directions plus jitter"
            )));
        }
        // Pairwise within-cone cosine is at least cos(2*theta); solving
        // cos(2*theta) = alpha gives sin^2(theta) = (1 - alpha) / 2.
        let correct_sin_sq = ((1.0 - alpha) / 2.0).max(0.0);
        // Wrong cones additionally may not push distinct-answer cosines
        // (beta^2 at the axes) past beta.
        let wrong_sin_sq = correct_sin_sq.min(beta * (1.0 - beta));

        let jitter_start = k_wrong + 1;
        let total_jitter = dim - jitter_start;
        let correct_dims = total_jitter - total_jitter / 2;
        let split = jitter_start + correct_dims;
        Ok(ClusterGeometry {
            dim,
            beta,
            cos_correct: (1.0 - correct_sin_sq).sqrt(),
            sin_correct: correct_sin_sq.sqrt(),
            cos_wrong: (1.0 - wrong_sin_sq).sqrt(),
            sin_wrong: wrong_sin_sq.sqrt(),
            correct_jitter: jitter_start..split,
            wrong_jitter: split..dim,
        })
    }

    /// A fresh correct-response embedding: a point on the cone around the
    /// cluster center with the jitter direction drawn from `rng`.
    pub fn correct_sample<R: Rng>(&self, rng: &mut R) -> Embedding {
        let mut values = vec![0.0; self.dim];
        values[0] = self.cos_correct;
        if self.correct_jitter.is_empty() {
            values[0] = 1.0;
        } else {
            let jitter = crate::rng::unit_vector(rng, self.correct_jitter.len());
            for (offset, j) in jitter.into_iter().enumerate() {
                values[self.correct_jitter.start + offset] = self.sin_correct * j;
            }
        }
        Embedding::new(values).expect("dim >= 2")
    }

    /// A fresh embedding of wrong answer `k`, jittered around its axis.
    pub fn wrong_sample<R: Rng>(&self, k: usize, rng: &mut R) -> Embedding {
        let mut values = self.wrong_axis(k);
        if !self.wrong_jitter.is_empty() {
            for v in &mut values {
                *v *= self.cos_wrong;
            }
            let jitter = crate::rng::unit_vector(rng, self.wrong_jitter.len());
            for (offset, j) in jitter.into_iter().enumerate() {
                values[self.wrong_jitter.start + offset] = self.sin_wrong * j;
            }
        }
        Embedding::new(values).expect("dim >= 2")
    }

    /// The fixed unit axis of wrong answer `k` (no jitter); the dominance
    /// sampler uses these directly so the scatter ceiling is exact.
    pub fn wrong_vector(&self, k: usize) -> Embedding {
        Embedding::new(self.wrong_axis(k)).expect("dim >= 2")
    }

    fn wrong_axis(&self, k: usize) -> Vec<f64> {
        let mut values = vec![0.0; self.dim];
        values[0] = self.beta;
        values[k + 1] = (1.0 - self.beta * self.beta).sqrt();
        values
    }
}

/// Sample one simulated response.
///
/// Draw order is fixed (outcome first, then jitter), so identical streams
/// produce identical records.
pub fn sim_respond<R: Rng>(
    model: &SimAgentModel,
    bundle: &PromptBundle,
    rng: &mut R,
    agent_id: usize,
    round: usize,
) -> Result<ResponseRecord> {
    let geometry = model.geometry()?;
    let p_eff = model.effective_p(bundle);
    let outcome: f64 = rng.gen();
    let (text, embedding) = if outcome < p_eff || model.wrong_answer_probs.is_empty() {
        (CORRECT_TEXT.to_string(), geometry.correct_sample(rng))
    } else {
        // Wrong answer drawn proportionally to the configured masses.
        let total: f64 = model.wrong_answer_probs.iter().sum();
        let mut draw: f64 = rng.gen::<f64>() * total;
        let mut chosen = model.wrong_answer_probs.len() - 1;
        for (k, &mass) in model.wrong_answer_probs.iter().enumerate() {
            if draw < mass {
                chosen = k;
                break;
            }
            draw -= mass;
        }
        (wrong_text(chosen), geometry.wrong_sample(chosen, rng))
    };
    let completion_tokens = approx_tokens(&text).max(1);
    Ok(ResponseRecord {
        agent_id,
        round,
        prompt_tokens: bundle_prompt_tokens(bundle),
        completion_tokens,
        text,
        embedding,
        truncated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{assemble_prompt, default_roles};
    use crate::embedding::cosine;
    use crate::rng;

    fn empty_bundle() -> PromptBundle {
        assemble_prompt(&default_roles()[0], "q", &[], 0).unwrap()
    }

    fn sample_batch(model: &SimAgentModel, count: usize, seed: u64) -> Vec<ResponseRecord> {
        let bundle = empty_bundle();
        let mut stream = rng::stream(seed, &[]);
        (0..count)
            .map(|i| sim_respond(model, &bundle, &mut stream, i, 0).unwrap())
            .collect()
    }

    #[test]
    fn geometry_respects_cluster_bounds() {
        let model = SimAgentModel::uniform(0.5, 4, 0.8, 0.2, 16, 3);
        model.validate().unwrap();
        let batch = sample_batch(&model, 200, 17);
        for a in &batch {
            assert!((a.embedding.norm() - 1.0).abs() < 1e-9);
            for b in &batch {
                if std::ptr::eq(a, b) {
                    continue;
                }
                let c = cosine(&a.embedding, &b.embedding).unwrap();
                match (a.text.as_str(), b.text.as_str()) {
                    (CORRECT_TEXT, CORRECT_TEXT) => {
                        assert!(c >= model.alpha - 1e-9, "correct pair cosine {c}")
                    }
                    (x, y) if x == y => assert!(c >= model.alpha - 1e-9),
                    _ => assert!(c <= model.beta + 1e-9, "cross pair cosine {c}"),
                }
            }
        }
    }

    #[test]
    fn degenerate_probability_always_correct() {
        let model = SimAgentModel::uniform(1.0, 0, 0.9, 0.1, 8, 5);
        let batch = sample_batch(&model, 64, 2);
        for r in &batch {
            assert_eq!(r.text, CORRECT_TEXT);
        }
        for a in &batch {
            for b in &batch {
                assert!(cosine(&a.embedding, &b.embedding).unwrap() >= model.alpha - 1e-9);
            }
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let model = SimAgentModel::uniform(0.4, 3, 0.9, 0.1, 12, 11);
        let a = sample_batch(&model, 32, 123);
        let b = sample_batch(&model, 32, 123);
        assert_eq!(a, b);
    }

    #[test]
    fn correctness_frequency_converges_to_p() {
        let model = SimAgentModel::uniform(0.3, 5, 0.9, 0.1, 12, 0);
        let trials = 10_000;
        let batch = sample_batch(&model, trials, 99);
        let hits = batch.iter().filter(|r| r.text == CORRECT_TEXT).count();
        let freq = hits as f64 / trials as f64;
        let sigma = (0.3 * 0.7 / trials as f64).sqrt();
        assert!(
            (freq - 0.3).abs() <= 3.0 * sigma,
            "frequency {freq} drifted from 0.3"
        );
    }

    #[test]
    fn at_least_two_correct_matches_closed_form() {
        let model = SimAgentModel::uniform(0.5, 4, 0.9, 0.1, 12, 0);
        let bundle = empty_bundle();
        let mut stream = rng::stream(4242, &[]);
        let trials = 10_000;
        let mut hits = 0;
        for _ in 0..trials {
            let correct = (0..4)
                .filter(|&i| {
                    sim_respond(&model, &bundle, &mut stream, i, 0).unwrap().text == CORRECT_TEXT
                })
                .count();
            if correct >= 2 {
                hits += 1;
            }
        }
        let freq = hits as f64 / trials as f64;
        assert!((freq - 0.6875).abs() <= 0.015, "got {freq}");
    }

    #[test]
    fn uplift_applies_with_correct_peer_present() {
        let model = SimAgentModel::uniform(0.49, 4, 0.9, 0.1, 12, 0).with_uplift(0.69);
        let role = &default_roles()[0];
        let incoming = vec![("Peer".to_string(), CORRECT_TEXT.to_string())];
        let bundle = assemble_prompt(role, "q", &incoming, 1).unwrap();
        let mut stream = rng::stream(7, &[]);
        let trials = 10_000;
        let hits = (0..trials)
            .filter(|_| sim_respond(&model, &bundle, &mut stream, 0, 1).unwrap().text == CORRECT_TEXT)
            .count();
        let freq = hits as f64 / trials as f64;
        assert!((freq - 0.69).abs() <= 0.02, "got {freq}");

        // Without the peer signal the base rate applies.
        let plain = empty_bundle();
        let hits = (0..trials)
            .filter(|_| sim_respond(&model, &plain, &mut stream, 0, 0).unwrap().text == CORRECT_TEXT)
            .count();
        let freq = hits as f64 / trials as f64;
        assert!((freq - 0.49).abs() <= 0.02, "got {freq}");
    }

    #[test]
    fn dispersed_errors_make_correct_agreement_dominate() {
        // max_k p_k = 0.2 <= p^2 / (1 - p) = 0.9.
        let model = SimAgentModel {
            p_correct: 0.6,
            wrong_answer_probs: vec![0.2, 0.2],
            alpha: 0.9,
            beta: 0.1,
            dim: 8,
            seed: 0,
            p_uplift: None,
        };
        let bundle = empty_bundle();
        let mut stream = rng::stream(31, &[]);
        let trials = 20_000;
        let (mut both_correct, mut both_wrong_match) = (0, 0);
        for _ in 0..trials {
            let a = sim_respond(&model, &bundle, &mut stream, 0, 0).unwrap();
            let b = sim_respond(&model, &bundle, &mut stream, 1, 0).unwrap();
            if a.text == CORRECT_TEXT && b.text == CORRECT_TEXT {
                both_correct += 1;
            } else if a.text == b.text {
                both_wrong_match += 1;
            }
        }
        assert!(
            both_correct > both_wrong_match,
            "correct consensus {both_correct} vs wrong consensus {both_wrong_match}"
        );
    }

    #[test]
    fn invalid_models_are_rejected() {
        let mut equal_bounds = SimAgentModel::uniform(0.5, 3, 0.5, 0.5, 12, 0);
        assert!(matches!(
            equal_bounds.validate(),
            Err(Error::InfeasibleGeometry(_))
        ));
        equal_bounds.alpha = 0.9;
        equal_bounds.dim = 4; // needs 3 + 2
        assert!(matches!(
            equal_bounds.validate(),
            Err(Error::InfeasibleGeometry(_))
        ));

        let bad_mass = SimAgentModel {
            p_correct: 0.5,
            wrong_answer_probs: vec![0.1, 0.1],
            alpha: 0.9,
            beta: 0.1,
            dim: 8,
            seed: 0,
            p_uplift: None,
        };
        assert!(matches!(
            bad_mass.validate(),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn token_accounting_counts_prompt_and_completion() {
        let model = SimAgentModel::uniform(1.0, 0, 0.9, 0.1, 8, 1);
        let role = &default_roles()[0];
        let incoming = vec![("Peer".to_string(), "W1".to_string())];
        let bundle = assemble_prompt(role, "what is two plus two", &incoming, 1).unwrap();
        let mut stream = rng::stream(0, &[]);
        let record = sim_respond(&model, &bundle, &mut stream, 0, 1).unwrap();
        assert_eq!(record.completion_tokens, 1);
        assert_eq!(record.prompt_tokens, bundle_prompt_tokens(&bundle));
        assert!(record.prompt_tokens > 5);
    }
}
