//! Run the collaboration loop against a real chat-completions endpoint.
//!
//! Needs a service speaking the standard chat JSON shape. Configure with
//! environment variables and run:
//!
//!   CHAT_ENDPOINT=http://localhost:8000/v1/chat/completions \
//!   CHAT_MODEL=my-model \
//!   CHAT_API_KEY=...          # optional
//!   cargo run --example http_backend
//!
//! Responses are embedded with the built-in deterministic encoder here so
//! the example has no second service dependency; point `embedder` at an
//! embeddings endpoint for real semantic similarity.

use roundtable::agents::{Agent, AgentBackend, HttpAgentConfig};
use roundtable::agents::roster;
use roundtable::embedding::EmbedderSpec;
use roundtable::orchestrator::{run, BackendChoice, OrchestratorConfig};

fn main() {
    let Ok(endpoint) = std::env::var("CHAT_ENDPOINT") else {
        eprintln!("set CHAT_ENDPOINT (and CHAT_MODEL) to run this example");
        return;
    };
    let model = std::env::var("CHAT_MODEL").unwrap_or_else(|_| "default".to_string());

    let mut http = HttpAgentConfig::new(endpoint, model);
    if std::env::var("CHAT_API_KEY").is_ok() {
        http.api_key_env = Some("CHAT_API_KEY".to_string());
    }

    let cfg = OrchestratorConfig {
        n_agents: 4,
        rounds: 2,
        backend: BackendChoice::Http,
        ..Default::default()
    };
    let roles = roster(cfg.n_agents);
    let mut agents: Vec<Agent> = roles
        .into_iter()
        .enumerate()
        .map(|(id, role)| Agent::new(id, role, AgentBackend::Http(http.clone())))
        .collect();
    let embedder = EmbedderSpec::deterministic_test(384, 0);

    let query = "A train travels 120 km in 90 minutes. What is its average speed in km/h?";
    match run(query, &cfg, &embedder, &mut agents) {
        Ok(result) => {
            for state in &result.states {
                println!("round {}:", state.round);
                for r in &state.responses {
                    let preview: String = r.text.chars().take(72).collect();
                    println!("  agent {} ({} tok): {preview}", r.agent_id, r.completion_tokens);
                }
                println!("  selected: agent {}", state.round_output.0);
            }
            println!();
            println!("final answer: {}", result.final_text);
            println!(
                "tokens: {} prompt + {} completion",
                result.total_prompt_tokens, result.total_completion_tokens
            );
        }
        Err(e) => eprintln!("run failed: {e}"),
    }
}
