//! Contribution valuation: exact Shapley scores over the coalition-sum
//! cosine utility, the linear-time cosine approximation, and the numeric
//! certificate tying the two together.
//!
//! The utility of a coalition is the cosine between the sum of its members'
//! embeddings and the mean embedding of all agents. The exact Shapley value
//! weighs marginal utilities over every coalition; the approximation scores
//! each agent by the cosine of its own embedding against the mean. The
//! certificate machinery computes, per agent, the multiplicative factor
//! `L_n` and the residual `phi_n - L_n * psi_n`, and checks the residual
//! against `I * Gamma^2` where `I` is one over the smallest absolute
//! inner product with the mean and `Gamma` is the common embedding norm.

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, mean_embedding, Embedding};
use crate::error::{Error, Result};

/// Hard ceiling for the `2^N` coalition enumeration.
pub const MAX_EXACT_AGENTS: usize = 16;

/// Per-agent cosine-alignment contribution scores for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionScores {
    pub psi: Vec<f64>,
    pub round: usize,
}

impl ContributionScores {
    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }
}

/// Exact Shapley values from full coalition enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyResult {
    pub phi: Vec<f64>,
    pub utility_id: String,
}

/// Numeric certificate for the approximation bound: factors `L_n`, the
/// alignment constant `I`, the common norm `Gamma`, and the residuals
/// `phi_n - L_n * psi_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub l: Vec<f64>,
    pub i_const: f64,
    pub gamma_norm: f64,
    pub residuals: Vec<f64>,
}

impl BoundCertificate {
    /// The certified ceiling `I * Gamma^2`.
    pub fn bound(&self) -> f64 {
        self.i_const * self.gamma_norm * self.gamma_norm
    }

    /// Whether every residual sits below the ceiling (with float slack).
    pub fn holds(&self) -> bool {
        self.violations().is_empty()
    }

    /// Indices of agents whose residual exceeds the ceiling.
    pub fn violations(&self) -> Vec<usize> {
        let bound = self.bound() + 1e-9;
        self.residuals
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > bound)
            .map(|(n, _)| n)
            .collect()
    }

    pub fn min_l(&self) -> f64 {
        self.l.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Utility of a coalition: cosine between the coalition's summed embedding
/// and the mean embedding of all agents. The empty coalition and coalitions
/// whose sum cancels to zero carry no directional signal and score 0.
pub fn coalition_utility(coalition: &[usize], rs: &[Embedding]) -> Result<f64> {
    if rs.is_empty() {
        return Err(Error::EmptyEmbeddingList);
    }
    for &m in coalition {
        if m >= rs.len() {
            return Err(Error::DimensionMismatch {
                expected: rs.len(),
                got: m,
            });
        }
    }
    let avg = mean_embedding(rs)?;
    if coalition.is_empty() || avg.is_zero() {
        return Ok(0.0);
    }
    let dim = rs[0].dim();
    let mut sum = vec![0.0; dim];
    for &m in coalition {
        for (s, v) in sum.iter_mut().zip(rs[m].values()) {
            *s += v;
        }
    }
    let sum = Embedding::new(sum)?;
    if sum.is_zero() {
        return Ok(0.0);
    }
    cosine(&sum, &avg)
}

/// Precomputed per-coalition quantities shared by the exact Shapley value
/// and the certificate: for every bitmask, the inner product of the
/// coalition sum with the mean and the squared norm of the coalition sum.
struct CoalitionTable {
    n: usize,
    sum_dot: Vec<f64>,
    norm_sq: Vec<f64>,
    avg_norm: f64,
    dots: Vec<f64>,
    norms: Vec<f64>,
    weights: Vec<f64>,
}

impl CoalitionTable {
    fn build(rs: &[Embedding]) -> Result<Self> {
        let n = rs.len();
        if n == 0 {
            return Err(Error::EmptyEmbeddingList);
        }
        if n > MAX_EXACT_AGENTS {
            return Err(Error::TooManyAgents {
                n,
                max: MAX_EXACT_AGENTS,
            });
        }
        let avg = mean_embedding(rs)?;
        let avg_norm = avg.norm();
        let dots: Vec<f64> = rs
            .iter()
            .map(|r| r.dot(&avg))
            .collect::<Result<Vec<f64>>>()?;
        let mut gram = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let d = rs[i].dot(&rs[j])?;
                gram[i][j] = d;
                gram[j][i] = d;
            }
        }

        let size = 1usize << n;
        let mut sum_dot = vec![0.0; size];
        let mut norm_sq = vec![0.0; size];
        for mask in 1..size {
            let low = mask.trailing_zeros() as usize;
            let rest = mask & (mask - 1);
            sum_dot[mask] = sum_dot[rest] + dots[low];
            let mut cross = 0.0;
            let mut bits = rest;
            while bits != 0 {
                let j = bits.trailing_zeros() as usize;
                cross += gram[low][j];
                bits &= bits - 1;
            }
            norm_sq[mask] = norm_sq[rest] + 2.0 * cross + gram[low][low];
        }

        // w_s = s! (N - 1 - s)! / N!, exact in f64 for N <= 16.
        let fact: Vec<f64> = (0..=n).scan(1.0, |acc, i| {
            if i > 0 {
                *acc *= i as f64;
            }
            Some(*acc)
        })
        .collect();
        let weights: Vec<f64> = (0..n)
            .map(|s| fact[s] * fact[n - 1 - s] / fact[n])
            .collect();

        Ok(CoalitionTable {
            n,
            sum_dot,
            norm_sq,
            avg_norm,
            dots,
            norms: rs.iter().map(|r| r.norm()).collect(),
            weights,
        })
    }

    fn utility(&self, mask: usize) -> f64 {
        if mask == 0 || self.avg_norm < 1e-12 {
            return 0.0;
        }
        let nsq = self.norm_sq[mask];
        if nsq <= 1e-24 {
            return 0.0;
        }
        self.sum_dot[mask] / (nsq.sqrt() * self.avg_norm)
    }

    fn shapley(&self) -> Vec<f64> {
        let size = 1usize << self.n;
        let mut phi = vec![0.0; self.n];
        for (agent, value) in phi.iter_mut().enumerate() {
            let bit = 1usize << agent;
            for mask in 0..size {
                if mask & bit != 0 {
                    continue;
                }
                let w = self.weights[mask.count_ones() as usize];
                *value += w * (self.utility(mask | bit) - self.utility(mask));
            }
        }
        phi
    }

    /// `L_n = sum_S w_S * ||r_n|| / ||x_S + r_n||`. Errors when some
    /// coalition sum including `r_n` cancels exactly to zero.
    fn factors(&self) -> Result<Vec<f64>> {
        let size = 1usize << self.n;
        let mut l = vec![0.0; self.n];
        for (agent, value) in l.iter_mut().enumerate() {
            let bit = 1usize << agent;
            for mask in 0..size {
                if mask & bit != 0 {
                    continue;
                }
                let nsq = self.norm_sq[mask | bit];
                if nsq <= 1e-24 {
                    return Err(Error::ZeroVector);
                }
                *value += self.weights[mask.count_ones() as usize] * self.norms[agent] / nsq.sqrt();
            }
        }
        Ok(l)
    }
}

/// Exact Shapley values by full enumeration of all `2^N` coalitions.
pub fn exact_shapley(rs: &[Embedding]) -> Result<ShapleyResult> {
    let table = CoalitionTable::build(rs)?;
    Ok(ShapleyResult {
        phi: table.shapley(),
        utility_id: "coalition-sum-cosine-vs-mean".to_string(),
    })
}

/// Linear-time contribution estimate: cosine of each embedding against the
/// mean. When the mean cancels to zero there is no alignment signal and
/// every agent receives the uniform score `1/N`.
pub fn approx_contribution(rs: &[Embedding], round: usize) -> Result<ContributionScores> {
    if rs.is_empty() {
        return Err(Error::EmptyEmbeddingList);
    }
    let avg = mean_embedding(rs)?;
    let n = rs.len();
    let psi = if avg.is_zero() {
        vec![1.0 / n as f64; n]
    } else {
        rs.iter()
            .map(|r| if r.is_zero() { 0.0 } else { cosine(r, &avg).unwrap_or(0.0) })
            .collect()
    };
    Ok(ContributionScores { psi, round })
}

/// Build the approximation-bound certificate for one embedding set.
///
/// Fails when any `<r_n, r_avg>` vanishes (the alignment constant `I` is
/// undefined there). The certificate itself records the residuals; callers
/// check [`BoundCertificate::holds`] rather than this function panicking,
/// since adversarial cancellation instances can exceed the ceiling.
pub fn bound_certificate(rs: &[Embedding]) -> Result<BoundCertificate> {
    let table = CoalitionTable::build(rs)?;
    let mut min_abs_dot = f64::INFINITY;
    for (agent, &d) in table.dots.iter().enumerate() {
        if d.abs() < 1e-12 {
            return Err(Error::AlignmentViolation { agent });
        }
        min_abs_dot = min_abs_dot.min(d.abs());
    }
    let i_const = 1.0 / min_abs_dot;
    let gamma_norm = table.norms.iter().copied().fold(0.0, f64::max);
    let phi = table.shapley();
    let l = table.factors()?;
    // The singleton coalition's utility is exactly psi_n.
    let psi: Vec<f64> = (0..table.n).map(|agent| table.utility(1 << agent)).collect();
    let residuals: Vec<f64> = (0..table.n)
        .map(|agent| phi[agent] - l[agent] * psi[agent])
        .collect();
    Ok(BoundCertificate {
        l,
        i_const,
        gamma_norm,
        residuals,
    })
}

/// Whether the score gap between agents `n` and `k` clears the certified
/// separation threshold `2 I Gamma^2 / min_m L_m`. When it does, the
/// normalized exact scores `phi/L` are guaranteed to order the same way;
/// that implication is checked here as a debug assertion.
pub fn ranking_stable(
    scores: &ContributionScores,
    cert: &BoundCertificate,
    n: usize,
    k: usize,
) -> bool {
    assert_eq!(
        scores.len(),
        cert.l.len(),
        "scores and certificate must come from the same embeddings"
    );
    assert!(n < scores.len() && k < scores.len(), "agent index out of range");
    let threshold = 2.0 * cert.bound() / cert.min_l();
    let flagged = scores.psi[n] - scores.psi[k] > threshold;
    if flagged {
        let normalized = |idx: usize| scores.psi[idx] + cert.residuals[idx] / cert.l[idx];
        debug_assert!(
            normalized(n) > normalized(k),
            "separation flagged but normalized order disagrees: agents {n}, {k}"
        );
    }
    flagged
}
