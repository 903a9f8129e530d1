//! Consensus-based early stopping: paired-seed runs with and without the
//! threshold, and the token savings it buys.
//!
//! Run with: cargo run --example early_stopping

use roundtable::agents::{build_sim_pool, SimAgentModel, CORRECT_TEXT};
use roundtable::embedding::EmbedderSpec;
use roundtable::orchestrator::{run, OrchestratorConfig};
use roundtable::rng;

fn main() {
    let base_cfg = OrchestratorConfig {
        n_agents: 4,
        rounds: 3,
        ..Default::default()
    };
    let gamma_cfg = OrchestratorConfig {
        gamma: Some(0.9),
        ..base_cfg.clone()
    };
    let embedder = EmbedderSpec::deterministic_test(16, 0);

    let trials = 500;
    let (mut base_tokens, mut gamma_tokens) = (0u64, 0u64);
    let (mut base_hits, mut gamma_hits) = (0usize, 0usize);
    let mut halted = 0usize;
    for trial in 0..trials {
        let models: Vec<SimAgentModel> = (0..4)
            .map(|i| {
                SimAgentModel::uniform(0.5, 5, 0.95, 0.1, 16, rng::child_seed(1, &[trial, i]))
                    .with_uplift(0.9)
            })
            .collect();

        let mut agents = build_sim_pool(&models).unwrap();
        let base = run("q", &base_cfg, &embedder, &mut agents).unwrap();
        let mut agents = build_sim_pool(&models).unwrap();
        let stopped = run("q", &gamma_cfg, &embedder, &mut agents).unwrap();

        base_tokens += base.total_prompt_tokens + base.total_completion_tokens;
        gamma_tokens += stopped.total_prompt_tokens + stopped.total_completion_tokens;
        base_hits += (base.final_text == CORRECT_TEXT) as usize;
        gamma_hits += (stopped.final_text == CORRECT_TEXT) as usize;
        halted += (stopped.rounds_executed < base.rounds_executed) as usize;
    }

    println!("{trials} paired seeds, consensus threshold 0.9:");
    println!("  halted early on {halted} seeds");
    println!(
        "  tokens: {gamma_tokens} vs {base_tokens} ({:.1}% saved)",
        100.0 * (1.0 - gamma_tokens as f64 / base_tokens as f64)
    );
    println!(
        "  accuracy: {:.3} (early stop) vs {:.3} (full length)",
        gamma_hits as f64 / trials as f64,
        base_hits as f64 / trials as f64
    );
}
