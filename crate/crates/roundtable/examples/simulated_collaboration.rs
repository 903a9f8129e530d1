//! A full multi-round collaboration with simulated agents: weak answerers
//! whose correct responses cluster, refined over three rounds.
//!
//! Run with: cargo run --example simulated_collaboration

use roundtable::agents::{build_sim_pool, SimAgentModel};
use roundtable::embedding::EmbedderSpec;
use roundtable::orchestrator::{run, OrchestratorConfig};
use roundtable::rng;

fn main() {
    let seed = 2026;
    let models: Vec<SimAgentModel> = (0..4)
        .map(|i| {
            SimAgentModel::uniform(0.45, 4, 0.9, 0.1, 32, rng::child_seed(seed, &[i]))
                .with_uplift(0.8)
        })
        .collect();
    let mut agents = build_sim_pool(&models).unwrap();

    let cfg = OrchestratorConfig {
        n_agents: 4,
        rounds: 3,
        ..Default::default()
    };
    let embedder = EmbedderSpec::deterministic_test(32, 0);
    let result = run("which fraction is larger, 3/7 or 5/12?", &cfg, &embedder, &mut agents)
        .expect("sim run");

    for state in &result.states {
        let texts: Vec<&str> = state.responses.iter().map(|r| r.text.as_str()).collect();
        println!("round {}", state.round);
        println!("  responses: {texts:?}");
        println!(
            "  psi: {:?}",
            state
                .scores
                .psi
                .iter()
                .map(|p| (p * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        );
        println!("  edges: {:?}  (removed {:?})", state.graph.edges, state.graph.removed_edges);
        println!("  schedule: {:?}", state.graph.topo_order);
        if let Some(leader) = state.leader {
            println!("  leader this round: agent {leader}");
        }
        println!(
            "  selected output: agent {} -> {:?}",
            state.round_output.0, state.round_output.1
        );
    }
    println!();
    println!(
        "final answer after {} rounds: {:?} ({} prompt + {} completion tokens)",
        result.rounds_executed,
        result.final_text,
        result.total_prompt_tokens,
        result.total_completion_tokens
    );
}
