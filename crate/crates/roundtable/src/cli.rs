//! Command-line entrypoints: `run`, `verify <target>`, and `sweep`.
//!
//! `run` executes the collaboration loop over a query file and writes a
//! transcript, summary, and manifest. `verify` drives the audit engines in
//! [`crate::analysis`], writes each target's CSV, and prints one pass/fail
//! summary line; the process exits nonzero unless every invoked assertion
//! passes. `sweep` expands a config grid and writes one CSV keyed by
//! config hash.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, PopulationSpec, RankHistogram, SweepRow,
};
use crate::error::{Error, Result};
use crate::manifest::{
    load_queries, parse_config_with_overrides, ConfigPatch, OutputWriter, SimUniform,
};
use crate::orchestrator::{run_with_observer, BackendChoice};
use crate::rng;
use crate::topology::EdgeRule;

#[derive(Parser)]
#[command(
    name = "roundtable",
    version,
    about = "Multi-agent response refinement over a self-organizing communication graph"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the collaboration loop over a query file.
    Run(RunArgs),
    /// Run one verification target and emit its CSV.
    Verify(VerifyArgs),
    /// Run a configuration sweep from a spec file.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Newline-delimited JSON query records: {"id", "query", "answer"?}.
    #[arg(long)]
    query_file: PathBuf,
    /// Manifest file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = clap::builder::ValueParser::new(parse_backend))]
    backend: Option<BackendChoice>,
    /// Number of agents.
    #[arg(long)]
    agents: Option<usize>,
    /// Similarity threshold for candidate edges.
    #[arg(long)]
    tau: Option<f64>,
    /// Neighbor budget per agent; 0 disables the budget.
    #[arg(long)]
    topk: Option<usize>,
    /// Total rounds including initialization.
    #[arg(long)]
    rounds: Option<usize>,
    /// Consensus threshold for early stopping; negative disables.
    #[arg(long)]
    gamma: Option<f64>,
    /// Rebuild the graph each round (true) or freeze the round-0 graph.
    #[arg(long)]
    reform: Option<bool>,
    #[arg(long, value_parser = clap::builder::ValueParser::new(parse_edge_rule))]
    edge_rule: Option<EdgeRule>,
    #[arg(long)]
    seed: Option<u64>,
    /// Read only previous-round peer responses within a round.
    #[arg(long)]
    stale_reads: Option<bool>,
    /// Chat endpoint override for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name override for the http backend.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_enum)]
    target: VerifyTarget,
    #[arg(long, default_value = "verify-out")]
    out: PathBuf,
    /// Scale knob: instances or trials, per target.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VerifyTarget {
    /// Exact-score efficiency and per-agent audit table.
    Shapley,
    /// Residual ceiling on random instances.
    Bound,
    /// Ranking-stability implication and rank agreement.
    Ranking,
    /// Agreement concentration (analytic and Monte Carlo).
    Lemma1,
    /// Score dominance under enforced cluster assumptions.
    Lemma2,
    /// At-least-two-correct closed form versus Monte Carlo.
    Prob2,
    /// Weak-agent rank identification.
    Ranks,
    /// Small default configuration sweep.
    Sweep,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec file (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "sweep-out")]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

fn parse_backend(s: &str) -> std::result::Result<BackendChoice, String> {
    s.parse()
}

fn parse_edge_rule(s: &str) -> std::result::Result<EdgeRule, String> {
    s.parse()
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => run_command(args).map(|_| true),
        Command::Verify(args) => verify_command(args),
        Command::Sweep(args) => sweep_command(args).map(|_| true),
    }
}

// --- run ---------------------------------------------------------------------

fn run_command(args: RunArgs) -> Result<()> {
    let patch = ConfigPatch {
        n_agents: args.agents,
        tau: args.tau,
        k: args.topk,
        rounds: args.rounds,
        gamma: args.gamma,
        reform: args.reform,
        edge_rule: args.edge_rule,
        seed: args.seed,
        backend: args.backend,
        stale_reads: args.stale_reads,
    };
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        None => String::new(),
    };
    let mut manifest = parse_config_with_overrides(
        &text,
        &patch,
        args.endpoint.as_deref(),
        args.model.as_deref(),
    )?;
    manifest.query_source = args.query_file.display().to_string();
    manifest.stamp_created_at();

    let queries = load_queries(&args.query_file)?;
    let mut agents = manifest.build_agents()?;
    let embedder = manifest.embedder.clone();
    let mut writer = OutputWriter::create(&args.out, &manifest, args.overwrite)?;

    let mut failure: Option<Error> = None;
    for query in &queries {
        let outcome = run_with_observer(
            &query.query,
            &manifest.config,
            &embedder,
            &mut agents,
            |state| writer.append_round(&query.id, state),
        );
        match outcome {
            Ok(result) => {
                println!(
                    "query {}: {} rounds, selected agent {}, {}+{} tokens",
                    query.id,
                    result.rounds_executed,
                    result.final_agent(),
                    result.total_prompt_tokens,
                    result.total_completion_tokens
                );
                writer.finish_query(query, &result);
            }
            Err(e) => {
                eprintln!("query {}: aborted: {e}", query.id);
                failure = Some(e);
                break;
            }
        }
    }
    let outputs = writer.finalize()?;
    println!(
        "wrote {} / {} / {}",
        outputs.transcript.display(),
        outputs.summary.display(),
        outputs.manifest.display()
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

// --- verify -------------------------------------------------------------------

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::ConfigParse(e.to_string()))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::ConfigParse(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RankCsvRow {
    pool: &'static str,
    agent: usize,
    rank: usize,
    count: u64,
    fraction: f64,
}

fn rank_rows(pool: &'static str, hist: &RankHistogram) -> Vec<RankCsvRow> {
    let mut rows = Vec::new();
    for agent in 0..hist.counts.len() {
        for rank in 0..hist.counts[agent].len() {
            rows.push(RankCsvRow {
                pool,
                agent,
                rank: rank + 1,
                count: hist.counts[agent][rank],
                fraction: hist.fraction(agent, rank),
            });
        }
    }
    rows
}

fn verify_command(args: VerifyArgs) -> Result<bool> {
    let out = &args.out;
    let seed = args.seed;
    let pass = match args.target {
        VerifyTarget::Shapley => {
            let audit = analysis::audit_shapley_bound(args.trials.unwrap_or(500), 12, seed);
            write_csv(&out.join("shapley.csv"), &audit.rows)?;
            let pass = audit.efficiency_failures == 0 && audit.residual_violations == 0;
            println!(
                "verify shapley: {} instances={} efficiency_failures={} residual_violations={}",
                pass_str(pass),
                audit.instances,
                audit.efficiency_failures,
                audit.residual_violations
            );
            pass
        }
        VerifyTarget::Bound => {
            let audit = analysis::audit_shapley_bound(args.trials.unwrap_or(500), 12, seed);
            write_csv(&out.join("bound.csv"), &audit.rows)?;
            let pass = audit.residual_violations == 0;
            println!(
                "verify bound: {} instances={} residual_violations={} rejected_draws={}",
                pass_str(pass),
                audit.instances,
                audit.residual_violations,
                audit.rejected_draws
            );
            pass
        }
        VerifyTarget::Ranking => {
            let audit = analysis::audit_ranking_stability(args.trials.unwrap_or(500), 12, seed);
            write_csv(&out.join("ranking.csv"), &audit.rows)?;
            let pass = audit.order_violations == 0 && audit.flagged_pairs > 0;
            println!(
                "verify ranking: {} instances={} flagged_pairs={} order_violations={} mean_kendall_tau={:.4}",
                pass_str(pass),
                audit.instances,
                audit.flagged_pairs,
                audit.order_violations,
                audit.mean_kendall_tau
            );
            pass
        }
        VerifyTarget::Lemma1 => {
            let audit = analysis::audit_lemma1(args.trials.unwrap_or(100_000), seed);
            write_csv(&out.join("lemma1.csv"), &audit.rows)?;
            let pass = audit.failures == 0;
            println!(
                "verify lemma1: {} cells={} failures={}",
                pass_str(pass),
                audit.rows.len(),
                audit.failures
            );
            pass
        }
        VerifyTarget::Lemma2 => {
            let audit = analysis::audit_lemma2(args.trials.unwrap_or(1000), 16, seed);
            write_csv(&out.join("lemma2.csv"), &audit.rows)?;
            let pass = audit.failures == 0;
            println!(
                "verify lemma2: {} cells={} failures={}",
                pass_str(pass),
                audit.rows.len(),
                audit.failures
            );
            pass
        }
        VerifyTarget::Prob2 => {
            let audit = analysis::audit_probability_formula(args.trials.unwrap_or(100_000), seed);
            write_csv(&out.join("prob2.csv"), &audit.rows)?;
            let pass = audit.failures == 0;
            println!(
                "verify prob2: {} cells={} trials_per_cell={} failures={}",
                pass_str(pass),
                audit.rows.len(),
                audit.trials_per_cell,
                audit.failures
            );
            pass
        }
        VerifyTarget::Ranks => {
            let trials = args.trials.unwrap_or(2000);
            let audit = analysis::audit_weak_agent_ranks(trials, seed);
            let mut rows = rank_rows("3strong-1weak", &audit.hist_3v1);
            rows.extend(rank_rows("2strong-2weak", &audit.hist_2v2));
            write_csv(&out.join("ranks.csv"), &rows)?;
            let pass = audit.weak_bottom_fraction > 0.5
                && audit.weak_entropy_2v2 > audit.weak_entropy_3v1;
            println!(
                "verify ranks: {} trials={} weak_bottom_fraction={:.3} entropy_3v1={:.3} entropy_2v2={:.3}",
                pass_str(pass),
                trials,
                audit.weak_bottom_fraction,
                audit.weak_entropy_3v1,
                audit.weak_entropy_2v2
            );
            pass
        }
        VerifyTarget::Sweep => {
            let rows = default_verify_sweep(args.trials.unwrap_or(20), seed)?;
            write_csv(&out.join("sweep.csv"), &rows)?;
            let pass = rows.iter().all(|r| r.error.is_none());
            println!(
                "verify sweep: {} configs={} failures={}",
                pass_str(pass),
                rows.len(),
                rows.iter().filter(|r| r.error.is_some()).count()
            );
            pass
        }
    };
    Ok(pass)
}

fn pass_str(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn default_verify_sweep(trials: usize, seed: u64) -> Result<Vec<SweepRow>> {
    let mut configs = Vec::new();
    for &n_agents in &[3usize, 4, 5] {
        for &reform in &[true, false] {
            configs.push(crate::orchestrator::OrchestratorConfig {
                n_agents,
                reform,
                ..Default::default()
            });
        }
    }
    let pop = PopulationSpec {
        agents: vec![crate::agents::SimAgentModel::uniform(0.6, 4, 0.9, 0.1, 16, 0)
            .with_uplift(0.8)],
        n_trials: trials,
        seed: rng::child_seed(seed, &[0x5eeb]),
    };
    analysis::sweep(&configs, &pop, &["probe".to_string()])
}

// --- sweep --------------------------------------------------------------------

/// Sweep spec: a shared population and trial budget plus one `[[configs]]`
/// entry per arm. Seeds pair across arms by construction.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSpec {
    seed: Option<u64>,
    trials: Option<usize>,
    queries: Option<Vec<String>>,
    query_file: Option<PathBuf>,
    population: Option<SimUniform>,
    configs: Vec<ConfigPatch>,
}

fn sweep_command(args: SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let spec: SweepSpec = toml::from_str(&text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    if spec.configs.is_empty() {
        return Err(Error::ConfigParse("sweep spec needs at least one [[configs]] entry".into()));
    }

    let queries: Vec<String> = match (&spec.queries, &spec.query_file) {
        (Some(qs), _) => qs.clone(),
        (None, Some(path)) => load_queries(path)?.into_iter().map(|q| q.query).collect(),
        (None, None) => vec!["probe".to_string()],
    };
    let uniform = spec.population.unwrap_or_default();
    let configs: Vec<_> = spec.configs.iter().map(|p| p.resolve()).collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    let template = crate::agents::SimAgentModel {
        p_correct: uniform.p_correct,
        wrong_answer_probs: if uniform.k_wrong == 0 {
            Vec::new()
        } else {
            vec![(1.0 - uniform.p_correct) / uniform.k_wrong as f64; uniform.k_wrong]
        },
        alpha: uniform.alpha,
        beta: uniform.beta,
        dim: uniform.dim,
        seed: 0,
        p_uplift: uniform.p_uplift,
    };
    let pop = PopulationSpec {
        agents: vec![template],
        n_trials: spec.trials.unwrap_or(10),
        seed: spec.seed.unwrap_or(0),
    };

    let rows = analysis::sweep(&configs, &pop, &queries)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let csv_path = args.out.join("sweep.csv");
    if csv_path.exists() && !args.overwrite {
        return Err(Error::OutputExists(csv_path));
    }
    write_csv(&csv_path, &rows)?;
    for row in &rows {
        println!(
            "config {}: n={} reform={} gamma={:?} accuracy={:.3} mean_rounds={:.2} tokens={}+{}{}",
            row.config_id,
            row.n_agents,
            row.reform,
            row.gamma,
            row.accuracy,
            row.mean_rounds,
            row.prompt_tokens,
            row.completion_tokens,
            row.error
                .as_ref()
                .map(|e| format!(" error={e}"))
                .unwrap_or_default()
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}
