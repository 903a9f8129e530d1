//! Run manifests, query files, and result emission.
//!
//! A manifest is the single source of truth for a run: orchestrator knobs,
//! embedder spec, role roster, and the fully resolved agent backends. Sim
//! manifests re-run bit-exactly because every agent seed is resolved and
//! written out. Outputs are a `transcript.jsonl` (one object per round per
//! query), a `summary.csv` (one row per query), and the manifest itself.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{roster, Agent, AgentBackend, HttpAgentConfig, RoleProfile, SimAgentModel, CORRECT_TEXT};
use crate::embedding::EmbedderSpec;
use crate::error::{Error, Result};
use crate::orchestrator::{BackendChoice, OrchestratorConfig, RoundState, RunResult};
use crate::rng;

pub const MANIFEST_VERSION: &str = "1";

/// Fully resolved description of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub created_at: String,
    #[serde(default)]
    pub query_source: String,
    pub config: OrchestratorConfig,
    pub embedder: EmbedderSpec,
    pub roles: Vec<RoleProfile>,
    /// Resolved simulator models; present when the backend is `sim`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_agents: Option<Vec<SimAgentModel>>,
    /// Chat service configuration; present when the backend is `http`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpAgentConfig>,
}

impl RunManifest {
    /// Defaults: four sim agents, similarity threshold 0.5, two neighbors,
    /// three rounds.
    pub fn default_sim() -> RunManifest {
        let config = OrchestratorConfig::default();
        let sim_agents = resolve_uniform_models(&SimUniform::default(), &config);
        RunManifest {
            version: MANIFEST_VERSION.to_string(),
            created_at: String::new(),
            query_source: String::new(),
            roles: roster(config.n_agents),
            embedder: EmbedderSpec::default(),
            sim_agents: Some(sim_agents),
            http: None,
            config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.embedder.validate()?;
        if self.roles.len() != self.config.n_agents {
            return Err(Error::ConfigField {
                field: "roles".into(),
                message: format!(
                    "{} roles for {} agents",
                    self.roles.len(),
                    self.config.n_agents
                ),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for role in &self.roles {
            if role.system_prompt.is_empty() {
                return Err(Error::ConfigField {
                    field: "roles".into(),
                    message: format!("role `{}` has an empty system prompt", role.name),
                });
            }
            if !seen.insert(&role.name) {
                return Err(Error::ConfigField {
                    field: "roles".into(),
                    message: format!("duplicate role name `{}`", role.name),
                });
            }
        }
        match self.config.backend {
            BackendChoice::Sim => {
                let models = self.sim_agents.as_ref().ok_or_else(|| Error::ConfigField {
                    field: "sim_agents".into(),
                    message: "sim backend requires simulator models".into(),
                })?;
                if models.len() != self.config.n_agents {
                    return Err(Error::ConfigField {
                        field: "sim_agents".into(),
                        message: format!(
                            "{} models for {} agents",
                            models.len(),
                            self.config.n_agents
                        ),
                    });
                }
                for model in models {
                    model.validate()?;
                }
            }
            BackendChoice::Http => {
                if self.http.is_none() {
                    return Err(Error::ConfigField {
                        field: "http".into(),
                        message: "http backend requires an endpoint configuration".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Instantiate the agent pool this manifest describes.
    pub fn build_agents(&self) -> Result<Vec<Agent>> {
        self.validate()?;
        let agents = match self.config.backend {
            BackendChoice::Sim => {
                let models = self.sim_agents.as_ref().expect("validated");
                models
                    .iter()
                    .enumerate()
                    .map(|(id, model)| {
                        Agent::new(id, self.roles[id].clone(), AgentBackend::Sim(model.clone()))
                    })
                    .collect()
            }
            BackendChoice::Http => {
                let http = self.http.as_ref().expect("validated");
                (0..self.config.n_agents)
                    .map(|id| {
                        Agent::new(id, self.roles[id].clone(), AgentBackend::Http(http.clone()))
                    })
                    .collect()
            }
        };
        Ok(agents)
    }

    pub fn stamp_created_at(&mut self) {
        if self.created_at.is_empty() {
            self.created_at = chrono::Utc::now().to_rfc3339();
        }
    }
}

// --- config files -----------------------------------------------------------

/// Uniform simulator population shorthand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimUniform {
    pub p_correct: f64,
    pub k_wrong: usize,
    pub alpha: f64,
    pub beta: f64,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_uplift: Option<f64>,
}

impl Default for SimUniform {
    fn default() -> Self {
        SimUniform {
            p_correct: 0.6,
            k_wrong: 4,
            alpha: 0.9,
            beta: 0.1,
            dim: 64,
            p_uplift: None,
        }
    }
}

fn resolve_uniform_models(uniform: &SimUniform, config: &OrchestratorConfig) -> Vec<SimAgentModel> {
    (0..config.n_agents)
        .map(|i| {
            let mut model = SimAgentModel::uniform(
                uniform.p_correct,
                uniform.k_wrong,
                uniform.alpha,
                uniform.beta,
                uniform.dim,
                rng::child_seed(config.seed, &[i as u64]),
            );
            model.p_uplift = uniform.p_uplift;
            model
        })
        .collect()
}

/// Keyed-text config with every field optional; unset fields take the
/// defaults. In the `[config]` table, `k = 0` disables the neighbor budget
/// and omitting `gamma` disables early stopping.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    version: Option<String>,
    created_at: Option<String>,
    query_source: Option<String>,
    #[serde(default)]
    config: ConfigPatch,
    embedder: Option<EmbedderSpec>,
    sim: Option<SimUniform>,
    sim_agents: Option<Vec<SimAgentModel>>,
    http: Option<HttpAgentConfig>,
    roles: Option<Vec<RoleProfile>>,
}

/// A partial configuration: every field optional, applied over a base.
/// `k = 0` disables the neighbor budget; a negative `gamma` disables early
/// stopping.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    pub n_agents: Option<usize>,
    pub tau: Option<f64>,
    pub k: Option<usize>,
    pub rounds: Option<usize>,
    pub gamma: Option<f64>,
    pub reform: Option<bool>,
    pub edge_rule: Option<crate::topology::EdgeRule>,
    pub seed: Option<u64>,
    pub backend: Option<BackendChoice>,
    pub stale_reads: Option<bool>,
}

impl ConfigPatch {
    pub fn apply(&self, base: &OrchestratorConfig) -> OrchestratorConfig {
        OrchestratorConfig {
            n_agents: self.n_agents.unwrap_or(base.n_agents),
            tau: self.tau.unwrap_or(base.tau),
            k: match self.k {
                None => base.k,
                Some(0) => None,
                Some(k) => Some(k),
            },
            rounds: self.rounds.unwrap_or(base.rounds),
            gamma: match self.gamma {
                None => base.gamma,
                Some(g) if g < 0.0 => None,
                Some(g) => Some(g),
            },
            reform: self.reform.unwrap_or(base.reform),
            edge_rule: self.edge_rule.unwrap_or(base.edge_rule),
            seed: self.seed.unwrap_or(base.seed),
            backend: self.backend.unwrap_or(base.backend),
            stale_reads: self.stale_reads.unwrap_or(base.stale_reads),
        }
    }

    pub fn resolve(&self) -> OrchestratorConfig {
        self.apply(&OrchestratorConfig::default())
    }

    /// Overlay `other` on top of this patch.
    fn merge(&mut self, other: &ConfigPatch) {
        macro_rules! take {
            ($field:ident) => {
                if other.$field.is_some() {
                    self.$field = other.$field.clone();
                }
            };
        }
        take!(n_agents);
        take!(tau);
        take!(k);
        take!(rounds);
        take!(gamma);
        take!(reform);
        take!(edge_rule);
        take!(seed);
        take!(backend);
        take!(stale_reads);
    }
}

/// Parse a manifest file, apply defaults, and validate. An empty file
/// yields the full default manifest.
pub fn load_config(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunManifest> {
    parse_config_with_overrides(text, &ConfigPatch::default(), None, None)
}

/// Parse a manifest with command-line overrides folded in before the
/// simulator models are resolved, so pool-size or seed overrides re-derive
/// the uniform population.
pub fn parse_config_with_overrides(
    text: &str,
    patch: &ConfigPatch,
    endpoint: Option<&str>,
    model: Option<&str>,
) -> Result<RunManifest> {
    let mut raw: RawManifest =
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    raw.config.merge(patch);
    if endpoint.is_some() || model.is_some() {
        let mut http = raw
            .http
            .take()
            .unwrap_or_else(|| HttpAgentConfig::new("", ""));
        if let Some(ep) = endpoint {
            http.endpoint = ep.to_string();
        }
        if let Some(m) = model {
            http.model = m.to_string();
        }
        raw.http = Some(http);
    }
    let config = raw.config.resolve();

    let roles = match raw.roles {
        Some(roles) => roles,
        None => roster(config.n_agents),
    };
    let sim_agents = match (config.backend, raw.sim_agents, raw.sim) {
        (BackendChoice::Sim, Some(models), _) => Some(models),
        (BackendChoice::Sim, None, Some(uniform)) => {
            Some(resolve_uniform_models(&uniform, &config))
        }
        (BackendChoice::Sim, None, None) => {
            Some(resolve_uniform_models(&SimUniform::default(), &config))
        }
        (BackendChoice::Http, models, _) => models,
    };

    let manifest = RunManifest {
        version: raw.version.unwrap_or_else(|| MANIFEST_VERSION.to_string()),
        created_at: raw.created_at.unwrap_or_default(),
        query_source: raw.query_source.unwrap_or_default(),
        embedder: raw.embedder.unwrap_or_default(),
        roles,
        sim_agents,
        http: raw.http,
        config,
    };
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    let mut value =
        toml::Value::try_from(manifest).map_err(|e| Error::ConfigParse(e.to_string()))?;
    // TOML has no null: a disabled neighbor budget is written as the
    // `k = 0` sentinel so the manifest round-trips exactly.
    if manifest.config.k.is_none() {
        if let Some(config) = value.get_mut("config").and_then(|c| c.as_table_mut()) {
            config.insert("k".to_string(), toml::Value::Integer(0));
        }
    }
    let text = toml::to_string_pretty(&value).map_err(|e| Error::ConfigParse(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// --- query files ------------------------------------------------------------

/// One query: an id, the text, and an optional gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

/// Load newline-delimited JSON query records, rejecting duplicate ids.
pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut queries = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::QueryRecord {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        let record = parse_query_record(&value).map_err(|message| Error::QueryRecord {
            path: path.to_path_buf(),
            line: line_no,
            message,
        })?;
        if let Some(&first_line) = seen.get(&record.id) {
            return Err(Error::DuplicateQueryId {
                id: record.id,
                first_line,
                line: line_no,
            });
        }
        seen.insert(record.id.clone(), line_no);
        queries.push(record);
    }
    Ok(queries)
}

fn parse_query_record(value: &serde_json::Value) -> std::result::Result<Query, String> {
    let id = match value.get("id") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(other) => return Err(format!("id must be a string or number, got {other}")),
        None => return Err("missing `id` field".into()),
    };
    let query = value
        .get("query")
        .and_then(|q| q.as_str())
        .ok_or("missing or non-string `query` field")?
        .to_string();
    if query.is_empty() {
        return Err("empty `query` field".into());
    }
    let answer = match value.get("answer") {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(other) => Some(other.to_string()),
    };
    Ok(Query { id, query, answer })
}

// --- transcripts and summaries -----------------------------------------------

/// One transcript line: everything observable about one round of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRound {
    pub query_id: String,
    pub round: usize,
    pub responses: Vec<TranscriptResponse>,
    pub psi: Vec<f64>,
    pub s_min: f64,
    pub s_mean: f64,
    pub graph: serde_json::Value,
    pub round_output: SelectedOutput,
    pub leader: Option<usize>,
    pub halted_early: bool,
    pub tokens: TokenTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptResponse {
    pub agent: usize,
    pub role: String,
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectedOutput {
    pub agent: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenTotals {
    pub prompt: u64,
    pub completion: u64,
}

impl TranscriptRound {
    pub fn from_state(query_id: &str, state: &RoundState, roles: &[RoleProfile]) -> Self {
        let n = state.sim.len();
        let mut s_min = 1.0_f64;
        let mut s_sum = 0.0_f64;
        let mut pairs = 0usize;
        for i in 0..n {
            for j in 0..i {
                s_min = s_min.min(state.sim.s[i][j]);
                s_sum += state.sim.s[i][j];
                pairs += 1;
            }
        }
        let tokens = TokenTotals {
            prompt: state.responses.iter().map(|r| r.prompt_tokens).sum(),
            completion: state.responses.iter().map(|r| r.completion_tokens).sum(),
        };
        TranscriptRound {
            query_id: query_id.to_string(),
            round: state.round,
            responses: state
                .responses
                .iter()
                .map(|r| TranscriptResponse {
                    agent: r.agent_id,
                    role: roles
                        .get(r.agent_id)
                        .map(|role| role.name.clone())
                        .unwrap_or_default(),
                    text: r.text.clone(),
                    prompt_tokens: r.prompt_tokens,
                    completion_tokens: r.completion_tokens,
                    truncated: r.truncated,
                })
                .collect(),
            psi: state.scores.psi.clone(),
            s_min,
            s_mean: if pairs > 0 { s_sum / pairs as f64 } else { 1.0 },
            graph: state.graph.to_json(),
            round_output: SelectedOutput {
                agent: state.round_output.0,
                text: state.round_output.1.clone(),
            },
            leader: state.leader,
            halted_early: state.halted_early,
            tokens,
        }
    }
}

/// One summary line per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub query_id: String,
    pub correct: String,
    pub rounds: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Paths produced by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutputs {
    pub transcript: PathBuf,
    pub summary: PathBuf,
    pub manifest: PathBuf,
}

/// Streaming writer for one run's outputs. Rounds append to the transcript
/// as they complete, so an aborted run keeps everything up to the failure.
pub struct OutputWriter {
    transcript: BufWriter<fs::File>,
    summary_rows: Vec<SummaryRow>,
    roles: Vec<RoleProfile>,
    backend: BackendChoice,
    paths: RunOutputs,
}

impl OutputWriter {
    pub fn create(out_dir: &Path, manifest: &RunManifest, overwrite: bool) -> Result<OutputWriter> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let paths = RunOutputs {
            transcript: out_dir.join("transcript.jsonl"),
            summary: out_dir.join("summary.csv"),
            manifest: out_dir.join("manifest.toml"),
        };
        if !overwrite && paths.transcript.exists() {
            return Err(Error::OutputExists(paths.transcript.clone()));
        }
        write_manifest(manifest, &paths.manifest)?;
        let file = fs::File::create(&paths.transcript)
            .map_err(|e| Error::io(&paths.transcript, e))?;
        Ok(OutputWriter {
            transcript: BufWriter::new(file),
            summary_rows: Vec::new(),
            roles: manifest.roles.clone(),
            backend: manifest.config.backend,
            paths,
        })
    }

    pub fn append_round(&mut self, query_id: &str, state: &RoundState) -> Result<()> {
        let round = TranscriptRound::from_state(query_id, state, &self.roles);
        let line = serde_json::to_string(&round).expect("transcript serializes");
        writeln!(self.transcript, "{line}")
            .and_then(|_| self.transcript.flush())
            .map_err(|e| Error::io(&self.paths.transcript, e))
    }

    pub fn finish_query(&mut self, query: &Query, result: &RunResult) {
        let correct = match self.backend {
            BackendChoice::Sim => (result.final_text == CORRECT_TEXT).to_string(),
            BackendChoice::Http => query
                .answer
                .as_ref()
                .map(|gold| (result.final_text.trim() == gold.trim()).to_string())
                .unwrap_or_default(),
        };
        self.summary_rows.push(SummaryRow {
            query_id: query.id.clone(),
            correct,
            rounds: result.rounds_executed,
            prompt_tokens: result.total_prompt_tokens,
            completion_tokens: result.total_completion_tokens,
        });
    }

    pub fn finalize(mut self) -> Result<RunOutputs> {
        self.transcript
            .flush()
            .map_err(|e| Error::io(&self.paths.transcript, e))?;
        let mut writer = csv::Writer::from_path(&self.paths.summary)
            .map_err(|e| Error::ConfigParse(e.to_string()))?;
        for row in &self.summary_rows {
            writer
                .serialize(row)
                .map_err(|e| Error::ConfigParse(e.to_string()))?;
        }
        writer
            .flush()
            .map_err(|e| Error::io(&self.paths.summary, e))?;
        Ok(self.paths)
    }
}

/// Batch emission of finished runs: manifest, transcript, and summary.
pub fn emit_results(
    manifest: &RunManifest,
    runs: &[(Query, RunResult)],
    out_dir: &Path,
    overwrite: bool,
) -> Result<RunOutputs> {
    let mut writer = OutputWriter::create(out_dir, manifest, overwrite)?;
    for (query, result) in runs {
        for state in &result.states {
            writer.append_round(&query.id, state)?;
        }
        writer.finish_query(query, result);
    }
    writer.finalize()
}

/// Parse and schema-check every transcript line of a file.
pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRound>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str::<TranscriptRound>(line)
                .map_err(|e| Error::MalformedResponse(format!("transcript line: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_yields_full_defaults() {
        let manifest = parse_config("").unwrap();
        assert_eq!(manifest.config.n_agents, 4);
        assert_eq!(manifest.config.tau, 0.5);
        assert_eq!(manifest.config.k, Some(2));
        assert_eq!(manifest.config.rounds, 3);
        assert_eq!(manifest.config.gamma, None);
        assert!(manifest.config.reform);
        assert_eq!(manifest.roles.len(), 4);
        assert_eq!(manifest.sim_agents.as_ref().unwrap().len(), 4);
        assert_eq!(manifest.embedder.dim, 384);
    }

    #[test]
    fn out_of_range_tau_names_the_field() {
        match parse_config("[config]\ntau = 1.5\n") {
            Err(Error::ConfigField { field, .. }) => assert_eq!(field, "tau"),
            other => panic!("expected tau field error, got {other:?}"),
        }
    }

    #[test]
    fn neighbor_budget_must_stay_below_pool_size() {
        match parse_config("[config]\nn_agents = 4\nk = 4\n") {
            Err(Error::ConfigField { field, .. }) => assert_eq!(field, "k"),
            other => panic!("expected k field error, got {other:?}"),
        }
        // k = 0 disables the budget.
        let manifest = parse_config("[config]\nk = 0\n").unwrap();
        assert_eq!(manifest.config.k, None);
    }

    #[test]
    fn manifest_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = RunManifest::default_sim();
        manifest.stamp_created_at();
        manifest.query_source = "queries.jsonl".into();
        let path = dir.path().join("manifest.toml");
        write_manifest(&manifest, &path).unwrap();
        let reloaded = load_config(&path).unwrap();
        assert_eq!(manifest, reloaded);
    }

    #[test]
    fn queries_load_in_order_with_optional_answers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queries.jsonl");
        let mut file = fs::File::create(&path).unwrap();
        writeln!(file, r#"{{"id": "a", "query": "one", "answer": "1"}}"#).unwrap();
        writeln!(file, r#"{{"id": 2, "query": "two"}}"#).unwrap();
        drop(file);
        let queries = load_queries(&path).unwrap();
        assert_eq!(queries.len(), 2);
        assert_eq!(queries[0].id, "a");
        assert_eq!(queries[0].answer.as_deref(), Some("1"));
        assert_eq!(queries[1].id, "2");
        assert_eq!(queries[1].answer, None);
    }

    #[test]
    fn duplicate_query_ids_report_both_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queries.jsonl");
        let mut file = fs::File::create(&path).unwrap();
        writeln!(file, r#"{{"id": "a", "query": "one"}}"#).unwrap();
        writeln!(file, r#"{{"id": "b", "query": "two"}}"#).unwrap();
        writeln!(file, r#"{{"id": "a", "query": "three"}}"#).unwrap();
        drop(file);
        match load_queries(&path) {
            Err(Error::DuplicateQueryId { id, first_line, line }) => {
                assert_eq!(id, "a");
                assert_eq!(first_line, 1);
                assert_eq!(line, 3);
            }
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queries.jsonl");
        let mut file = fs::File::create(&path).unwrap();
        writeln!(file, r#"{{"id": "a", "query": "one"}}"#).unwrap();
        writeln!(file, "not json").unwrap();
        drop(file);
        match load_queries(&path) {
            Err(Error::QueryRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn rerun_refuses_without_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = RunManifest::default_sim();
        let writer = OutputWriter::create(dir.path(), &manifest, false).unwrap();
        writer.finalize().unwrap();
        match OutputWriter::create(dir.path(), &manifest, false) {
            Err(Error::OutputExists(_)) => {}
            Err(other) => panic!("expected output-exists error, got {other:?}"),
            Ok(_) => panic!("expected output-exists error, got a writer"),
        }
        assert!(OutputWriter::create(dir.path(), &manifest, true).is_ok());
    }

    #[test]
    fn emitted_outputs_exist_and_parse() {
        use crate::embedding::EmbedderSpec;
        use crate::orchestrator::run;

        let dir = tempfile::tempdir().unwrap();
        let mut manifest = RunManifest::default_sim();
        manifest.stamp_created_at();
        let mut agents = manifest.build_agents().unwrap();
        let query = Query {
            id: "q1".into(),
            query: "what".into(),
            answer: None,
        };
        let embedder = EmbedderSpec::deterministic_test(16, 0);
        let result = run(&query.query, &manifest.config, &embedder, &mut agents).unwrap();
        let outputs =
            emit_results(&manifest, &[(query, result.clone())], dir.path(), false).unwrap();
        assert!(outputs.transcript.exists());
        assert!(outputs.summary.exists());
        assert!(outputs.manifest.exists());

        let rounds = read_transcript(&outputs.transcript).unwrap();
        assert_eq!(rounds.len(), result.rounds_executed);
        let total_prompt: u64 = rounds.iter().map(|r| r.tokens.prompt).sum();
        assert_eq!(total_prompt, result.total_prompt_tokens);

        // Summary token columns equal the transcript sums for the query.
        let summary = fs::read_to_string(&outputs.summary).unwrap();
        assert!(summary.starts_with("query_id,correct,rounds,prompt_tokens,completion_tokens"));
        let row = summary.lines().nth(1).unwrap();
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], "q1");
        let q1_prompt: u64 = rounds
            .iter()
            .filter(|r| r.query_id == "q1")
            .map(|r| r.tokens.prompt)
            .sum();
        let q1_completion: u64 = rounds
            .iter()
            .filter(|r| r.query_id == "q1")
            .map(|r| r.tokens.completion)
            .sum();
        assert_eq!(cols[3].parse::<u64>().unwrap(), q1_prompt);
        assert_eq!(cols[4].parse::<u64>().unwrap(), q1_completion);
    }
}
