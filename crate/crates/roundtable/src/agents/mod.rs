//! Agent backends and prompt plumbing.
//!
//! An [`Agent`] pairs a role profile with either the probabilistic simulator
//! ([`sim`]) or an HTTP chat-completion service ([`http`]). Within a round,
//! each agent receives a [`PromptBundle`]: its system prompt, the user query,
//! and the peer responses routed to it by the communication graph.

pub mod http;
pub mod sim;

use serde::{Deserialize, Serialize};

pub use http::{http_respond, HttpAgentConfig};
pub use sim::{sim_respond, SimAgentModel, CORRECT_TEXT};

use crate::embedding::{Embedding, EmbedderSpec};
use crate::error::{Error, Result};
use crate::rng;

/// A named agent persona with its system prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleProfile {
    pub name: String,
    pub system_prompt: String,
}

impl RoleProfile {
    pub fn new(name: impl Into<String>, system_prompt: impl Into<String>) -> Self {
        RoleProfile {
            name: name.into(),
            system_prompt: system_prompt.into(),
        }
    }
}

/// The stock eight-role roster. Math-style runs take the first four roles;
/// knowledge-style runs take the first five.
pub fn default_roles() -> Vec<RoleProfile> {
    vec![
        RoleProfile::new(
            "Assistant",
            "You are a super-intelligent AI assistant capable of performing tasks more \
             effectively than humans.",
        ),
        RoleProfile::new(
            "Programmer",
            "You are a programmer.\nYou are good at computer science, engineering, and \
             physics. You have experience in designing and developing computer software \
             and hardware.",
        ),
        RoleProfile::new(
            "Mathematician",
            "You are a mathematician.\nYou are good at math games, arithmetic calculation, \
             and long-term planning.",
        ),
        RoleProfile::new(
            "Economist",
            "You are an economist.\nYou are good at economics, finance, and business. You \
             have experience on understanding charts while interpreting the macroeconomic \
             environment prevailing across world economies.",
        ),
        RoleProfile::new(
            "Psychologist",
            "You are a psychologist.\nYou are good at psychology, sociology, and philosophy. \
             You give people scientific suggestions that will make them feel better.",
        ),
        RoleProfile::new(
            "Historian",
            "You are a historian.\nYou research and analyze cultural, economic, political, \
             and social events in the past, collect data from primary sources and use it to \
             develop theories about what happened during various periods of history.",
        ),
        RoleProfile::new(
            "Lawyer",
            "You are a lawyer.\nYou are good at law, politics, and history.",
        ),
        RoleProfile::new(
            "Doctor",
            "You are a doctor and come up with creative treatments for illnesses or \
             diseases. You are able to recommend conventional medicines, herbal remedies \
             and other natural alternatives. You also consider the patient's age, lifestyle \
             and medical history when providing your recommendations.",
        ),
    ]
}

/// Pick `n` roles from the default roster, cycling with a numeric suffix
/// when the pool is exhausted.
pub fn roster(n: usize) -> Vec<RoleProfile> {
    let base = default_roles();
    (0..n)
        .map(|i| {
            let template = &base[i % base.len()];
            if i < base.len() {
                template.clone()
            } else {
                RoleProfile::new(
                    format!("{}-{}", template.name, i / base.len() + 1),
                    template.system_prompt.clone(),
                )
            }
        })
        .collect()
}

/// Everything one agent sees for one call: system prompt, user query, and
/// labeled peer responses in arrival order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub collab: Vec<(String, String)>,
}

impl PromptBundle {
    /// Peer responses rendered with the fixed labeling format.
    pub fn collab_lines(&self) -> Vec<String> {
        self.collab
            .iter()
            .map(|(source, text)| format!("Peer {source} responded: {text}"))
            .collect()
    }

    /// The user message with any peer responses appended.
    pub fn user_with_collab(&self) -> String {
        if self.collab.is_empty() {
            return self.user.clone();
        }
        let mut out = self.user.clone();
        out.push_str("\n\n");
        out.push_str(&self.collab_lines().join("\n"));
        out
    }
}

/// Compose the prompt for one agent call. Round 0 is the independent
/// initialization round and must not carry peer responses.
pub fn assemble_prompt(
    role: &RoleProfile,
    query: &str,
    incoming: &[(String, String)],
    round: usize,
) -> Result<PromptBundle> {
    if query.is_empty() {
        return Err(Error::EmptyText);
    }
    if round == 0 && !incoming.is_empty() {
        return Err(Error::CollabInRoundZero);
    }
    Ok(PromptBundle {
        system: role.system_prompt.clone(),
        user: query.to_string(),
        collab: incoming.to_vec(),
    })
}

/// One agent's output for one round: the text, its unit-norm embedding, and
/// token accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub agent_id: usize,
    pub round: usize,
    pub text: String,
    pub embedding: Embedding,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Set when the backend reported hitting its completion-token limit.
    #[serde(default)]
    pub truncated: bool,
}

impl ResponseRecord {
    pub fn token_counts(&self) -> (u64, u64) {
        (self.prompt_tokens, self.completion_tokens)
    }
}

/// Whitespace token estimate used by the simulator's token accounting.
pub(crate) fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub(crate) fn bundle_prompt_tokens(bundle: &PromptBundle) -> u64 {
    approx_tokens(&bundle.system)
        + approx_tokens(&bundle.user)
        + bundle
            .collab_lines()
            .iter()
            .map(|line| approx_tokens(line))
            .sum::<u64>()
}

/// Which machinery produces an agent's responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AgentBackend {
    Sim(SimAgentModel),
    Http(HttpAgentConfig),
}

/// A role-profiled agent bound to a backend. Simulator agents own a seeded
/// random stream so concurrent or reordered trials cannot perturb them.
#[derive(Debug, Clone)]
pub struct Agent {
    pub id: usize,
    pub role: RoleProfile,
    pub backend: AgentBackend,
    rng: rand_chacha::ChaCha8Rng,
}

impl Agent {
    pub fn new(id: usize, role: RoleProfile, backend: AgentBackend) -> Agent {
        let seed = match &backend {
            AgentBackend::Sim(model) => model.seed,
            AgentBackend::Http(_) => 0,
        };
        Agent {
            id,
            role,
            backend,
            rng: rng::stream(seed, &[id as u64]),
        }
    }

    /// Produce this agent's response for the round. Errors carry the agent
    /// id and round.
    pub fn respond(
        &mut self,
        bundle: &PromptBundle,
        round: usize,
        embedder: &EmbedderSpec,
    ) -> Result<ResponseRecord> {
        match &self.backend {
            AgentBackend::Sim(model) => sim_respond(model, bundle, &mut self.rng, self.id, round)
                .map_err(|e| e.in_agent_call(self.id, round)),
            AgentBackend::Http(cfg) => http_respond(cfg, bundle, embedder, self.id, round),
        }
    }
}

/// Build a simulator pool: one agent per model, roles drawn from the
/// default roster in order.
pub fn build_sim_pool(models: &[SimAgentModel]) -> Result<Vec<Agent>> {
    let roles = roster(models.len());
    models
        .iter()
        .enumerate()
        .map(|(id, model)| {
            model.validate()?;
            Ok(Agent::new(
                id,
                roles[id].clone(),
                AgentBackend::Sim(model.clone()),
            ))
        })
        .collect()
}
