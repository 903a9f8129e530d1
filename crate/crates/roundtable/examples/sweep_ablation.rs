//! Paired-seed ablation sweeps: pool size, graph reform on/off, and the
//! early-stopping threshold, written as one CSV-style table.
//!
//! Run with: cargo run --example sweep_ablation

use roundtable::agents::SimAgentModel;
use roundtable::analysis::{sweep, PopulationSpec};
use roundtable::orchestrator::OrchestratorConfig;

fn main() {
    let mut configs = Vec::new();
    for &n_agents in &[3usize, 5, 7] {
        for &reform in &[true, false] {
            configs.push(OrchestratorConfig {
                n_agents,
                reform,
                ..Default::default()
            });
        }
    }
    for &gamma in &[0.95, 0.9] {
        configs.push(OrchestratorConfig {
            gamma: Some(gamma),
            ..Default::default()
        });
    }

    let pop = PopulationSpec {
        agents: vec![SimAgentModel::uniform(0.5, 5, 0.92, 0.1, 16, 0).with_uplift(0.85)],
        n_trials: 200,
        seed: 7,
    };
    let queries = vec!["probe".to_string()];
    let rows = sweep(&configs, &pop, &queries).expect("sweep runs");

    println!("config_id,n_agents,reform,gamma,accuracy,mean_rounds,prompt_tokens,completion_tokens,wall_ms");
    for r in &rows {
        println!(
            "{},{},{},{},{:.4},{:.2},{},{},{}",
            r.config_id,
            r.n_agents,
            r.reform,
            r.gamma.map(|g| g.to_string()).unwrap_or_else(|| "off".into()),
            r.accuracy,
            r.mean_rounds,
            r.prompt_tokens,
            r.completion_tokens,
            r.wall_ms
        );
    }
    println!();
    println!("rows share per-trial seeds, so each column compares like for like.");
}
