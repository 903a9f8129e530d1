//! The multi-round collaboration loop.
//!
//! Round 0 collects independent responses from every agent, embeds them,
//! scores contributions, and builds the first communication graph. Each
//! later round walks the previous graph in topological order: every root
//! receives the previous round's selected output (the highest-scoring root
//! is the round's leader, and reading its own prior answer back amounts to
//! self-reflection), every other agent receives the responses of its in-edge
//! sources. After all agents have answered, scores and similarities are
//! recomputed, the graph is rebuilt (or carried, when reform is off), and
//! the round output is the existing response nearest the contribution-
//! weighted centroid. An optional consensus threshold halts the loop when
//! the weakest pairwise agreement clears it.

use serde::{Deserialize, Serialize};

use crate::agents::{assemble_prompt, Agent, ResponseRecord};
use crate::embedding::{cosine, Embedding, EmbedderSpec};
use crate::error::{Error, Result};
use crate::topology::{carry_graph, form_graph, roots, similarity_matrix, CommGraph, EdgeRule, SimilarityMatrix};
use crate::valuation::{approx_contribution, ContributionScores};

/// Which backend family a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    #[default]
    Sim,
    Http,
}

impl std::str::FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sim" => Ok(BackendChoice::Sim),
            "http" => Ok(BackendChoice::Http),
            other => Err(format!("unknown backend `{other}` (expected sim|http)")),
        }
    }
}

/// Run-level knobs for the collaboration loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub n_agents: usize,
    /// Similarity threshold for candidate edges.
    pub tau: f64,
    /// Optional neighbor budget: each agent listens to at most `k` peers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Total rounds including the independent initialization round.
    pub rounds: usize,
    /// Consensus threshold for early stopping; disabled when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Rebuild the graph every round (true) or freeze the round-0 graph.
    pub reform: bool,
    #[serde(default)]
    pub edge_rule: EdgeRule,
    pub seed: u64,
    #[serde(default)]
    pub backend: BackendChoice,
    /// Propagate only previous-round responses within a round instead of
    /// responses already refreshed earlier in the same schedule.
    #[serde(default)]
    pub stale_reads: bool,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            n_agents: 4,
            tau: 0.5,
            k: Some(2),
            rounds: 3,
            gamma: None,
            reform: true,
            edge_rule: EdgeRule::Alg2,
            seed: 0,
            backend: BackendChoice::Sim,
            stale_reads: false,
        }
    }
}

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, message: String| {
            Err(Error::ConfigField {
                field: name.to_string(),
                message,
            })
        };
        if self.n_agents == 0 {
            return field("n_agents", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return field("tau", format!("{} outside [0, 1]", self.tau));
        }
        if let Some(k) = self.k {
            if k == 0 || k >= self.n_agents {
                return field("k", format!("{k} must be in 1..n_agents ({})", self.n_agents));
            }
        }
        if self.rounds == 0 {
            return field("rounds", "must be at least 1".into());
        }
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return field("gamma", format!("{g} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Immutable snapshot of one collaboration round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: usize,
    pub responses: Vec<ResponseRecord>,
    pub sim: SimilarityMatrix,
    pub scores: ContributionScores,
    pub graph: CommGraph,
    /// Selected output: (agent index, response text).
    pub round_output: (usize, String),
    pub halted_early: bool,
    /// Highest-scoring root that seeded this round; absent for round 0.
    pub leader: Option<usize>,
}

/// Outcome of a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub final_text: String,
    pub rounds_executed: usize,
    pub states: Vec<RoundState>,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
}

impl RunResult {
    /// The agent whose response was selected in the final round.
    pub fn final_agent(&self) -> usize {
        self.states.last().map(|s| s.round_output.0).unwrap_or(0)
    }
}

/// Independent initialization: every agent answers with no peer input.
pub fn init_round(
    query: &str,
    cfg: &OrchestratorConfig,
    embedder: &EmbedderSpec,
    agents: &mut [Agent],
) -> Result<RoundState> {
    cfg.validate()?;
    assert_eq!(agents.len(), cfg.n_agents, "agent pool size must match config");
    let mut responses = Vec::with_capacity(agents.len());
    for agent in agents.iter_mut() {
        let bundle = assemble_prompt(&agent.role, query, &[], 0)?;
        responses.push(agent.respond(&bundle, 0, embedder)?);
    }
    finish_round(0, responses, None, cfg, None)
}

/// One propagation round over the previous round's graph.
pub fn run_round(
    prev: &RoundState,
    query: &str,
    cfg: &OrchestratorConfig,
    embedder: &EmbedderSpec,
    agents: &mut [Agent],
) -> Result<RoundState> {
    let round = prev.round + 1;
    let n = agents.len();
    let graph = &prev.graph;
    let root_set = roots(graph);
    let leader = root_set.first().copied();

    // Position of each agent in the schedule, for arrival-ordered collab.
    let mut position = vec![0usize; n];
    for (pos, &v) in graph.topo_order.iter().enumerate() {
        position[v] = pos;
    }

    let mut current: Vec<Option<ResponseRecord>> = vec![None; n];
    for &node in &graph.topo_order {
        let mut incoming: Vec<(String, String)> = Vec::new();
        if root_set.contains(&node) {
            let (source_idx, text) = &prev.round_output;
            incoming.push((agents[*source_idx].role.name.clone(), text.clone()));
        }
        let mut sources = graph.sources_of(node);
        sources.sort_by_key(|&m| position[m]);
        for m in sources {
            let text = match (&current[m], cfg.stale_reads) {
                (Some(record), false) => record.text.clone(),
                _ => prev.responses[m].text.clone(),
            };
            incoming.push((agents[m].role.name.clone(), text));
        }
        let bundle = assemble_prompt(&agents[node].role, query, &incoming, round)?;
        current[node] = Some(agents[node].respond(&bundle, round, embedder)?);
    }

    let responses: Vec<ResponseRecord> = current
        .into_iter()
        .map(|r| r.expect("every agent visited by the schedule"))
        .collect();
    finish_round(round, responses, Some(prev), cfg, leader)
}

/// Shared round epilogue: normalize embeddings, score, build or carry the
/// graph, select the round output, and check the consensus threshold.
fn finish_round(
    round: usize,
    mut responses: Vec<ResponseRecord>,
    prev: Option<&RoundState>,
    cfg: &OrchestratorConfig,
    leader: Option<usize>,
) -> Result<RoundState> {
    for record in &mut responses {
        record.embedding = record
            .embedding
            .normalized()
            .map_err(|e| e.in_agent_call(record.agent_id, round))?;
    }
    let embeddings: Vec<Embedding> = responses.iter().map(|r| r.embedding.clone()).collect();
    let sim = similarity_matrix(&embeddings, round)?;
    let scores = approx_contribution(&embeddings, round)?;
    let graph = match prev {
        Some(prev_state) if !cfg.reform => carry_graph(&prev_state.graph, &scores, round),
        _ => form_graph(&sim, &scores, cfg.tau, cfg.k, cfg.edge_rule),
    };
    let round_output = aggregate(&responses, &scores);
    let halted_early = cfg
        .gamma
        .map(|g| sim.min_consensus() >= g)
        .unwrap_or(false);
    Ok(RoundState {
        round,
        responses,
        sim,
        scores,
        graph,
        round_output,
        halted_early,
        leader,
    })
}

/// Select the round output: the existing response whose embedding lies
/// nearest the contribution-weighted centroid.
///
/// When the score mass nearly cancels the weights fall back to uniform;
/// when the centroid itself cancels to zero the highest-scoring response is
/// selected directly. Ties always resolve to the lower agent index.
pub fn aggregate(responses: &[ResponseRecord], scores: &ContributionScores) -> (usize, String) {
    assert!(!responses.is_empty(), "aggregate needs at least one response");
    assert_eq!(responses.len(), scores.len());
    let n = responses.len();
    let psi_sum: f64 = scores.psi.iter().sum();
    let weights: Vec<f64> = if psi_sum <= 1e-12 {
        vec![1.0 / n as f64; n]
    } else {
        scores.psi.iter().map(|p| p / psi_sum).collect()
    };

    let dim = responses[0].embedding.dim();
    let mut centroid = vec![0.0; dim];
    for (record, w) in responses.iter().zip(&weights) {
        for (c, v) in centroid.iter_mut().zip(record.embedding.values()) {
            *c += w * v;
        }
    }
    let centroid = Embedding::new(centroid).expect("dim > 0");

    let selected = if centroid.is_zero() {
        argmax(&scores.psi)
    } else {
        let alignments: Vec<f64> = responses
            .iter()
            .map(|r| cosine(&r.embedding, &centroid).unwrap_or(f64::NEG_INFINITY))
            .collect();
        argmax(&alignments)
    };
    (selected, responses[selected].text.clone())
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Run the full loop: initialization plus up to `rounds - 1` propagation
/// rounds, stopping early once consensus clears the threshold.
pub fn run(
    query: &str,
    cfg: &OrchestratorConfig,
    embedder: &EmbedderSpec,
    agents: &mut [Agent],
) -> Result<RunResult> {
    run_with_observer(query, cfg, embedder, agents, |_| Ok(()))
}

/// Like [`run`], invoking `observer` after every completed round so callers
/// can persist a transcript incrementally; an aborted run leaves the rounds
/// observed so far intact.
pub fn run_with_observer(
    query: &str,
    cfg: &OrchestratorConfig,
    embedder: &EmbedderSpec,
    agents: &mut [Agent],
    mut observer: impl FnMut(&RoundState) -> Result<()>,
) -> Result<RunResult> {
    let mut states = Vec::with_capacity(cfg.rounds);
    let state = init_round(query, cfg, embedder, agents)?;
    observer(&state)?;
    states.push(state);

    while states.len() < cfg.rounds && !states.last().unwrap().halted_early {
        let state = run_round(states.last().unwrap(), query, cfg, embedder, agents)?;
        observer(&state)?;
        states.push(state);
    }

    let (mut prompt, mut completion) = (0u64, 0u64);
    for state in &states {
        for record in &state.responses {
            prompt += record.prompt_tokens;
            completion += record.completion_tokens;
        }
    }
    let last = states.last().expect("at least one round");
    Ok(RunResult {
        final_text: last.round_output.1.clone(),
        rounds_executed: states.len(),
        states,
        total_prompt_tokens: prompt,
        total_completion_tokens: completion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{build_sim_pool, SimAgentModel, CORRECT_TEXT};
    use crate::rng;

    fn sim_pool(models: &[SimAgentModel]) -> Vec<Agent> {
        build_sim_pool(models).unwrap()
    }

    fn uniform_pool(n: usize, p: f64, seed: u64) -> Vec<Agent> {
        let models: Vec<SimAgentModel> = (0..n)
            .map(|i| SimAgentModel::uniform(p, 4, 0.9, 0.1, 16, rng::child_seed(seed, &[i as u64])))
            .collect();
        sim_pool(&models)
    }

    fn test_cfg(n: usize) -> OrchestratorConfig {
        OrchestratorConfig {
            n_agents: n,
            k: if n > 2 { Some(2) } else { None },
            ..OrchestratorConfig::default()
        }
    }

    fn embedder() -> EmbedderSpec {
        EmbedderSpec::deterministic_test(16, 0)
    }

    #[test]
    fn singleton_pool_returns_its_own_answer() {
        let mut agents = uniform_pool(1, 1.0, 3);
        let cfg = OrchestratorConfig {
            n_agents: 1,
            k: None,
            ..OrchestratorConfig::default()
        };
        let state = init_round("q", &cfg, &embedder(), &mut agents).unwrap();
        assert!(state.graph.edges.is_empty());
        assert_eq!(state.round_output.0, 0);
        assert_eq!(state.round_output.1, state.responses[0].text);
    }

    #[test]
    fn degenerate_sim_population_is_fully_aligned() {
        // alpha = 1 collapses the correct cluster to a single point.
        let models: Vec<SimAgentModel> = (0..4)
            .map(|i| SimAgentModel::uniform(1.0, 0, 1.0, 0.5, 8, i as u64))
            .collect();
        let mut agents = sim_pool(&models);
        let state = init_round("q", &test_cfg(4), &embedder(), &mut agents).unwrap();
        for r in &state.responses {
            assert_eq!(r.text, CORRECT_TEXT);
        }
        for row in &state.sim.s {
            for &v in row {
                assert!(v >= 1.0 - 1e-9);
            }
        }
        for &p in &state.scores.psi {
            assert!((p - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_seed_runs_are_identical() {
        let cfg = test_cfg(4);
        let mut a = uniform_pool(4, 0.5, 42);
        let mut b = uniform_pool(4, 0.5, 42);
        let ra = run("q", &cfg, &embedder(), &mut a).unwrap();
        let rb = run("q", &cfg, &embedder(), &mut b).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn full_consensus_halts_immediately() {
        let models: Vec<SimAgentModel> = (0..4)
            .map(|i| SimAgentModel::uniform(1.0, 0, 1.0, 0.5, 8, i as u64))
            .collect();
        let mut agents = sim_pool(&models);
        let cfg = OrchestratorConfig {
            gamma: Some(0.95),
            ..test_cfg(4)
        };
        let result = run("q", &cfg, &embedder(), &mut agents).unwrap();
        assert!(result.states[0].halted_early);
        assert_eq!(result.rounds_executed, 1);
    }

    #[test]
    fn unset_gamma_never_halts() {
        let cfg = test_cfg(4);
        let mut agents = uniform_pool(4, 0.5, 7);
        let result = run("q", &cfg, &embedder(), &mut agents).unwrap();
        assert_eq!(result.rounds_executed, cfg.rounds);
        assert!(result.states.iter().all(|s| !s.halted_early));
    }

    #[test]
    fn single_round_run_equals_init() {
        let cfg = OrchestratorConfig {
            rounds: 1,
            ..test_cfg(4)
        };
        let mut a = uniform_pool(4, 0.5, 11);
        let mut b = uniform_pool(4, 0.5, 11);
        let result = run("q", &cfg, &embedder(), &mut a).unwrap();
        let init = init_round("q", &cfg, &embedder(), &mut b).unwrap();
        assert_eq!(result.rounds_executed, 1);
        assert_eq!(result.final_text, init.round_output.1);
    }

    #[test]
    fn token_totals_equal_per_record_sums() {
        let cfg = test_cfg(4);
        let mut agents = uniform_pool(4, 0.5, 13);
        let result = run("q", &cfg, &embedder(), &mut agents).unwrap();
        let prompt: u64 = result
            .states
            .iter()
            .flat_map(|s| &s.responses)
            .map(|r| r.prompt_tokens)
            .sum();
        let completion: u64 = result
            .states
            .iter()
            .flat_map(|s| &s.responses)
            .map(|r| r.completion_tokens)
            .sum();
        assert_eq!(result.total_prompt_tokens, prompt);
        assert_eq!(result.total_completion_tokens, completion);
    }

    #[test]
    fn static_graph_keeps_edges_after_round_one() {
        let cfg = OrchestratorConfig {
            reform: false,
            ..test_cfg(4)
        };
        let mut agents = uniform_pool(4, 0.6, 19);
        let result = run("q", &cfg, &embedder(), &mut agents).unwrap();
        for state in &result.states[1..] {
            assert_eq!(state.graph.edges, result.states[0].graph.edges);
            assert!(state.graph.removed_edges.is_empty());
        }
    }

    #[test]
    fn final_text_is_an_existing_final_round_response() {
        let cfg = test_cfg(5);
        let mut agents = uniform_pool(5, 0.5, 23);
        let result = run("q", &cfg, &embedder(), &mut agents).unwrap();
        let last = result.states.last().unwrap();
        assert!(last.responses.iter().any(|r| r.text == result.final_text));
    }

    #[test]
    fn schedule_respects_graph_edges() {
        let cfg = test_cfg(5);
        let mut agents = uniform_pool(5, 0.5, 29);
        let result = run("q", &cfg, &embedder(), &mut agents).unwrap();
        for state in &result.states {
            assert!(crate::topology::is_valid_topo_order(
                &state.graph,
                &state.graph.topo_order
            ));
        }
    }

    #[test]
    fn round_output_maximizes_centroid_alignment() {
        let cfg = test_cfg(4);
        let mut agents = uniform_pool(4, 0.5, 31);
        let state = init_round("q", &cfg, &embedder(), &mut agents).unwrap();
        let (selected, _) = state.round_output;
        // Recompute the centroid independently.
        let psi_sum: f64 = state.scores.psi.iter().sum();
        let dim = state.responses[0].embedding.dim();
        let mut centroid = vec![0.0; dim];
        for (r, &p) in state.responses.iter().zip(&state.scores.psi) {
            for (c, v) in centroid.iter_mut().zip(r.embedding.values()) {
                *c += p / psi_sum * v;
            }
        }
        let centroid = Embedding::new(centroid).unwrap();
        let best = state
            .responses
            .iter()
            .map(|r| cosine(&r.embedding, &centroid).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        let selected_alignment =
            cosine(&state.responses[selected].embedding, &centroid).unwrap();
        assert!((selected_alignment - best).abs() < 1e-12);
    }

    #[test]
    fn aggregate_majority_cluster_wins() {
        let make = |values: &[f64], id: usize| ResponseRecord {
            agent_id: id,
            round: 0,
            text: format!("t{id}"),
            embedding: Embedding::new(values.to_vec()).unwrap(),
            prompt_tokens: 0,
            completion_tokens: 1,
            truncated: false,
        };
        let responses = vec![
            make(&[1.0, 0.0], 0),
            make(&[1.0, 0.0], 1),
            make(&[0.0, 1.0], 2),
        ];
        let embeddings: Vec<Embedding> =
            responses.iter().map(|r| r.embedding.clone()).collect();
        let scores = approx_contribution(&embeddings, 0).unwrap();
        let (idx, text) = aggregate(&responses, &scores);
        assert_eq!(idx, 0);
        assert_eq!(text, "t0");
    }

    #[test]
    fn aggregate_cancelled_mass_falls_back() {
        let make = |values: &[f64], id: usize| ResponseRecord {
            agent_id: id,
            round: 0,
            text: format!("t{id}"),
            embedding: Embedding::new(values.to_vec()).unwrap(),
            prompt_tokens: 0,
            completion_tokens: 1,
            truncated: false,
        };
        // Opposite embeddings: psi falls back to uniform, the uniform
        // centroid cancels, and selection falls back to argmax psi (tie at
        // 0.5 each, so the lower index wins).
        let responses = vec![make(&[1.0, 0.0], 0), make(&[-1.0, 0.0], 1)];
        let embeddings: Vec<Embedding> =
            responses.iter().map(|r| r.embedding.clone()).collect();
        let scores = approx_contribution(&embeddings, 0).unwrap();
        let (idx, _) = aggregate(&responses, &scores);
        assert_eq!(idx, 0);
    }

    #[test]
    fn leader_is_highest_scoring_root() {
        let cfg = test_cfg(4);
        let mut agents = uniform_pool(4, 0.5, 37);
        let result = run("q", &cfg, &embedder(), &mut agents).unwrap();
        assert_eq!(result.states[0].leader, None);
        for (prev, state) in result.states.iter().zip(result.states.iter().skip(1)) {
            let expected = crate::topology::roots(&prev.graph)[0];
            assert_eq!(state.leader, Some(expected));
        }
    }

    #[test]
    fn uplift_keeps_correct_counts_from_decaying() {
        // Directional check: with peer uplift on, each round should match
        // or beat the previous round's correct count on the overwhelming
        // majority of seeds. The agents are memoryless samplers, so some
        // backsliding is expected; the bar is 80% of seeds per transition.
        let mut first_holds = 0;
        let mut second_holds = 0;
        let trials = 1000;
        for seed in 0..trials {
            let models: Vec<SimAgentModel> = (0..4)
                .map(|i| {
                    SimAgentModel::uniform(0.4, 4, 0.9, 0.1, 16, rng::child_seed(seed, &[i]))
                        .with_uplift(0.9)
                })
                .collect();
            let mut agents = sim_pool(&models);
            let result = run("q", &test_cfg(4), &embedder(), &mut agents).unwrap();
            let count = |s: &RoundState| {
                s.responses.iter().filter(|r| r.text == CORRECT_TEXT).count()
            };
            if count(&result.states[1]) >= count(&result.states[0]) {
                first_holds += 1;
            }
            if count(&result.states[2]) >= count(&result.states[1]) {
                second_holds += 1;
            }
        }
        assert!(
            first_holds as f64 >= 0.8 * trials as f64,
            "first propagation beat initialization in only {first_holds}/{trials} seeds"
        );
        assert!(
            second_holds as f64 >= 0.8 * trials as f64,
            "second propagation matched the first in only {second_holds}/{trials} seeds"
        );
    }

    #[test]
    fn stale_reads_damp_within_round_amplification() {
        // With fresh reads an agent hears peers' refreshed answers from the
        // same round; with stale reads it only sees the previous round.
        // Under a certain uplift the fresh schedule therefore converts more
        // agents per round.
        let run_mode = |stale: bool| -> usize {
            let mut correct_total = 0;
            for seed in 0..200u64 {
                let models: Vec<SimAgentModel> = (0..4)
                    .map(|i| {
                        SimAgentModel::uniform(0.3, 4, 0.9, 0.1, 16, rng::child_seed(seed, &[i]))
                            .with_uplift(1.0)
                    })
                    .collect();
                let mut agents = sim_pool(&models);
                let cfg = OrchestratorConfig {
                    stale_reads: stale,
                    ..test_cfg(4)
                };
                let result = run("q", &cfg, &embedder(), &mut agents).unwrap();
                correct_total += result.states[1]
                    .responses
                    .iter()
                    .filter(|r| r.text == CORRECT_TEXT)
                    .count();
            }
            correct_total
        };
        let fresh = run_mode(false);
        let stale = run_mode(true);
        assert!(
            fresh > stale,
            "fresh reads should amplify more: fresh {fresh} vs stale {stale}"
        );
    }

    #[test]
    fn stale_mode_runs_are_still_deterministic() {
        let cfg = OrchestratorConfig {
            stale_reads: true,
            ..test_cfg(4)
        };
        let mut a = uniform_pool(4, 0.5, 77);
        let mut b = uniform_pool(4, 0.5, 77);
        assert_eq!(
            run("q", &cfg, &embedder(), &mut a).unwrap(),
            run("q", &cfg, &embedder(), &mut b).unwrap()
        );
    }

    #[test]
    fn config_validation_names_fields() {
        let cfg = OrchestratorConfig {
            tau: 1.5,
            ..OrchestratorConfig::default()
        };
        match cfg.validate() {
            Err(Error::ConfigField { field, .. }) => assert_eq!(field, "tau"),
            other => panic!("expected field error, got {other:?}"),
        }
        let cfg = OrchestratorConfig {
            k: Some(4),
            ..OrchestratorConfig::default()
        };
        match cfg.validate() {
            Err(Error::ConfigField { field, .. }) => assert_eq!(field, "k"),
            other => panic!("expected field error, got {other:?}"),
        }
    }
}
