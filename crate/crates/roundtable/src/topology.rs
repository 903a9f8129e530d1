//! Per-round communication graph: similarity-gated edge candidates, cycle
//! removal that keeps stronger contributors upstream, and a topological
//! schedule with ties broken toward higher-scoring agents.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, Embedding};
use crate::error::{Error, Result};
use crate::valuation::ContributionScores;

/// Pairwise cosine similarities for one round. Symmetric, unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub s: Vec<Vec<f64>>,
    pub round: usize,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Minimum off-diagonal entry: the weakest pairwise agreement.
    /// A single agent trivially agrees with itself.
    pub fn min_consensus(&self) -> f64 {
        let n = self.len();
        let mut min = 1.0_f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    min = min.min(self.s[i][j]);
                }
            }
        }
        min
    }
}

/// How candidate edges are gated during graph formation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeRule {
    /// Similarity gate only; cycles are possible and removed afterwards.
    #[default]
    Alg2,
    /// Similarity gate plus a strict score gate (an edge from `m` into `n`
    /// additionally requires `psi_m > psi_n`), which admits no cycles.
    ProsePsiGate,
}

impl std::str::FromStr for EdgeRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "alg2" => Ok(EdgeRule::Alg2),
            "prose" | "prose-psi-gate" => Ok(EdgeRule::ProsePsiGate),
            other => Err(format!("unknown edge rule `{other}` (expected alg2|prose)")),
        }
    }
}

/// A directed acyclic communication graph over `n` agents. An edge
/// `(m, n)` means agent `n` reads agent `m`'s response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommGraph {
    pub n: usize,
    pub edges: BTreeSet<(usize, usize)>,
    pub topo_order: Vec<usize>,
    pub removed_edges: Vec<(usize, usize)>,
    pub psi: Vec<f64>,
    pub round: usize,
}

impl CommGraph {
    /// Adjacency view: `adj[n][m]` is true iff the edge `m -> n` exists.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let mut adj = vec![vec![false; self.n]; self.n];
        for &(from, to) in &self.edges {
            adj[to][from] = true;
        }
        adj
    }

    /// Sources feeding agent `n`, ascending by index.
    pub fn sources_of(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, to)| to == node)
            .map(|&(from, _)| from)
            .collect()
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|&&(_, to)| to == node).count()
    }

    /// JSON object for the run transcript.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "round": self.round,
            "edges": self.edges.iter().collect::<Vec<_>>(),
            "removed": self.removed_edges,
            "order": self.topo_order,
            "psi": self.psi,
        })
    }
}

/// Pairwise cosine similarity matrix of a set of nonzero embeddings.
pub fn similarity_matrix(rs: &[Embedding], round: usize) -> Result<SimilarityMatrix> {
    if rs.is_empty() {
        return Err(Error::EmptyEmbeddingList);
    }
    let n = rs.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        s[i][i] = 1.0;
        for j in 0..i {
            let c = cosine(&rs[i], &rs[j])?;
            s[i][j] = c;
            s[j][i] = c;
        }
    }
    Ok(SimilarityMatrix { s, round })
}

/// Build the round's communication graph.
///
/// For each receiving agent `n`, peers `m` with `S[n][m] >= tau` become
/// candidate sources (under [`EdgeRule::ProsePsiGate`] additionally requiring
/// `psi_m > psi_n`); with a neighbor budget `k`, only the `k` most similar
/// candidates are kept (ties to the lower index). Remaining cycles are then
/// cut one edge at a time: within a detected cycle, the edge whose head
/// out-scores its tail by the most is removed, so cuts always point from a
/// weaker agent toward a stronger one. Finally a topological order is
/// computed, preferring higher-scoring agents among the simultaneously
/// available.
pub fn form_graph(
    sim: &SimilarityMatrix,
    scores: &ContributionScores,
    tau: f64,
    k: Option<usize>,
    rule: EdgeRule,
) -> CommGraph {
    let n = sim.len();
    assert_eq!(n, scores.len(), "similarity and scores disagree on N");
    let psi = &scores.psi;

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for receiver in 0..n {
        let mut candidates: Vec<usize> = (0..n)
            .filter(|&m| m != receiver && sim.s[receiver][m] >= tau)
            .filter(|&m| rule != EdgeRule::ProsePsiGate || psi[m] > psi[receiver])
            .collect();
        if let Some(k) = k {
            // Most similar first; equal similarity resolved by lower index.
            candidates.sort_by(|&a, &b| {
                sim.s[receiver][b]
                    .partial_cmp(&sim.s[receiver][a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            candidates.truncate(k);
        }
        for m in candidates {
            edges.insert((m, receiver));
        }
    }

    let mut removed_edges = Vec::new();
    while let Some(cycle) = find_cycle(n, &edges) {
        let cut = choose_cycle_cut(&cycle, psi);
        edges.remove(&cut);
        removed_edges.push(cut);
    }

    let topo_order = topo_sort(n, &edges, psi);
    CommGraph {
        n,
        edges,
        topo_order,
        removed_edges,
        psi: psi.clone(),
        round: sim.round,
    }
}

/// Carry an existing edge set into a new round with fresh scores: edges are
/// kept as-is, nothing is removed, and the schedule is recomputed so ties
/// follow the new scores.
pub fn carry_graph(prev: &CommGraph, scores: &ContributionScores, round: usize) -> CommGraph {
    assert_eq!(prev.n, scores.len());
    CommGraph {
        n: prev.n,
        edges: prev.edges.clone(),
        topo_order: topo_sort(prev.n, &prev.edges, &scores.psi),
        removed_edges: Vec::new(),
        psi: scores.psi.clone(),
        round,
    }
}

/// Zero in-degree nodes, ordered by descending score (ties to lower index).
pub fn roots(graph: &CommGraph) -> Vec<usize> {
    let mut has_incoming = vec![false; graph.n];
    for &(_, to) in &graph.edges {
        has_incoming[to] = true;
    }
    let mut out: Vec<usize> = (0..graph.n).filter(|&v| !has_incoming[v]).collect();
    out.sort_by(|&a, &b| {
        graph.psi[b]
            .partial_cmp(&graph.psi[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    out
}

/// Find one directed cycle via DFS, returned as a node path `v0 -> v1 ->
/// ... -> v0` encoded by its edge list. Deterministic: nodes and neighbors
/// are visited in index order.
fn find_cycle(n: usize, edges: &BTreeSet<(usize, usize)>) -> Option<Vec<(usize, usize)>> {
    let mut out_edges = vec![Vec::new(); n];
    for &(from, to) in edges {
        out_edges[from].push(to);
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        OnStack,
        Done,
    }
    let mut mark = vec![Mark::White; n];
    let mut stack: Vec<(usize, usize)> = Vec::new(); // (node, next child index)
    let mut path: Vec<usize> = Vec::new();

    for start in 0..n {
        if mark[start] != Mark::White {
            continue;
        }
        stack.push((start, 0));
        path.push(start);
        mark[start] = Mark::OnStack;
        while let Some(&mut (node, ref mut child)) = stack.last_mut() {
            if *child < out_edges[node].len() {
                let next = out_edges[node][*child];
                *child += 1;
                match mark[next] {
                    Mark::OnStack => {
                        // Recover the cycle from the path suffix.
                        let pos = path.iter().position(|&v| v == next).expect("on stack");
                        let cycle_nodes = &path[pos..];
                        let mut cycle = Vec::with_capacity(cycle_nodes.len());
                        for w in cycle_nodes.windows(2) {
                            cycle.push((w[0], w[1]));
                        }
                        cycle.push((*path.last().unwrap(), next));
                        return Some(cycle);
                    }
                    Mark::White => {
                        mark[next] = Mark::OnStack;
                        stack.push((next, 0));
                        path.push(next);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                stack.pop();
                path.pop();
            }
        }
    }
    None
}

/// Within a cycle, pick the edge maximizing `psi[to] - psi[from]` (ties to
/// the lexicographically smallest edge). Cycle differences sum to zero, so
/// the maximum is nonnegative: the cut always goes weaker-to-stronger.
fn choose_cycle_cut(cycle: &[(usize, usize)], psi: &[f64]) -> (usize, usize) {
    let mut best = cycle[0];
    let mut best_gain = psi[best.1] - psi[best.0];
    for &(from, to) in &cycle[1..] {
        let gain = psi[to] - psi[from];
        if gain > best_gain + 1e-15 || ((gain - best_gain).abs() <= 1e-15 && (from, to) < best) {
            best = (from, to);
            best_gain = gain;
        }
    }
    best
}

/// Kahn's algorithm where the next node is always the available one with
/// the highest score (ties to the lower index).
fn topo_sort(n: usize, edges: &BTreeSet<(usize, usize)>, psi: &[f64]) -> Vec<usize> {
    let mut in_degree = vec![0usize; n];
    let mut out_edges = vec![Vec::new(); n];
    for &(from, to) in edges {
        in_degree[to] += 1;
        out_edges[from].push(to);
    }
    let mut available: Vec<usize> = (0..n).filter(|&v| in_degree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while !available.is_empty() {
        let (pos, _) = available
            .iter()
            .enumerate()
            .max_by(|(_, &a), (_, &b)| {
                psi[a]
                    .partial_cmp(&psi[b])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.cmp(&a))
            })
            .expect("non-empty");
        let node = available.swap_remove(pos);
        order.push(node);
        for &next in &out_edges[node] {
            in_degree[next] -= 1;
            if in_degree[next] == 0 {
                available.push(next);
            }
        }
    }
    debug_assert_eq!(order.len(), n, "graph contained a cycle");
    order
}

/// Check that `order` visits every node once and respects every edge.
pub fn is_valid_topo_order(graph: &CommGraph, order: &[usize]) -> bool {
    if order.len() != graph.n {
        return false;
    }
    let mut position = vec![usize::MAX; graph.n];
    for (pos, &v) in order.iter().enumerate() {
        if v >= graph.n || position[v] != usize::MAX {
            return false;
        }
        position[v] = pos;
    }
    graph
        .edges
        .iter()
        .all(|&(from, to)| position[from] < position[to])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Embedding;

    fn emb(values: &[f64]) -> Embedding {
        Embedding::new(values.to_vec()).unwrap()
    }

    fn scores(psi: &[f64]) -> ContributionScores {
        ContributionScores {
            psi: psi.to_vec(),
            round: 0,
        }
    }

    fn sim_from(s: Vec<Vec<f64>>) -> SimilarityMatrix {
        SimilarityMatrix { s, round: 0 }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn similarity_matrix_examples() {
        let identical = vec![emb(&[1.0, 0.0]); 3];
        let m = similarity_matrix(&identical, 0).unwrap();
        for row in &m.s {
            for &v in row {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }

        let orth = vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
        let m = similarity_matrix(&orth, 0).unwrap();
        assert_eq!(m.s, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);

        let inv = 1.0 / 2.0_f64.sqrt();
        let triple = vec![emb(&[1.0, 0.0]), emb(&[inv, inv]), emb(&[0.0, 1.0])];
        let m = similarity_matrix(&triple, 0).unwrap();
        assert!((m.s[0][1] - 0.7071).abs() < 1e-4);
        assert!((m.s[1][2] - 0.7071).abs() < 1e-4);
        assert!(m.s[0][2].abs() < 1e-12);
    }

    #[test]
    fn impossible_threshold_yields_edgeless_graph() {
        let s = sim_from(vec![vec![1.0, 0.9], vec![0.9, 1.0]]);
        let g = form_graph(&s, &scores(&[0.3, 0.8]), 1.01, None, EdgeRule::Alg2);
        assert!(g.edges.is_empty());
        // Order falls back to descending psi.
        assert_eq!(g.topo_order, vec![1, 0]);
    }

    #[test]
    fn complete_candidates_keep_only_downhill_edges() {
        let s = sim_from(vec![
            vec![1.0, 0.9, 0.9],
            vec![0.9, 1.0, 0.9],
            vec![0.9, 0.9, 1.0],
        ]);
        let g = form_graph(&s, &scores(&[0.9, 0.8, 0.7]), 0.5, None, EdgeRule::Alg2);
        let expected: BTreeSet<(usize, usize)> = [(0, 1), (0, 2), (1, 2)].into_iter().collect();
        assert_eq!(g.edges, expected);
        assert_eq!(g.topo_order, vec![0, 1, 2]);
        for &(from, to) in &g.removed_edges {
            assert!(g.psi[from] <= g.psi[to]);
        }
    }

    #[test]
    fn chain_trace_matches_hand_removal() {
        let s = sim_from(vec![
            vec![1.0, 0.9, 0.2],
            vec![0.9, 1.0, 0.9],
            vec![0.2, 0.9, 1.0],
        ]);
        let g = form_graph(&s, &scores(&[0.9, 0.8, 0.7]), 0.5, None, EdgeRule::Alg2);
        let expected: BTreeSet<(usize, usize)> = [(0, 1), (1, 2)].into_iter().collect();
        assert_eq!(g.edges, expected);
        assert_eq!(g.topo_order, vec![0, 1, 2]);
        assert_eq!(g.removed_edges, vec![(1, 0), (2, 1)]);
    }

    #[test]
    fn neighbor_budget_keeps_most_similar() {
        let s = sim_from(vec![
            vec![1.0, 0.6, 0.8, 0.9],
            vec![0.6, 1.0, 0.5, 0.5],
            vec![0.8, 0.5, 1.0, 0.5],
            vec![0.9, 0.5, 0.5, 1.0],
        ]);
        let g = form_graph(&s, &scores(&[0.9, 0.5, 0.4, 0.3]), 0.55, Some(2), EdgeRule::Alg2);
        // Receiver 0 has candidates {1: .6, 2: .8, 3: .9}; top-2 are 3 then
        // 2, so the budget drops 1 -> 0 before any cycle removal runs.
        let mut candidates: BTreeSet<(usize, usize)> = g.edges.clone();
        candidates.extend(g.removed_edges.iter().copied());
        assert!(candidates.contains(&(3, 0)));
        assert!(candidates.contains(&(2, 0)));
        assert!(!candidates.contains(&(1, 0)));
    }

    #[test]
    fn prose_gate_admits_no_cycles_before_removal() {
        let s = sim_from(vec![
            vec![1.0, 0.9, 0.9],
            vec![0.9, 1.0, 0.9],
            vec![0.9, 0.9, 1.0],
        ]);
        let g = form_graph(&s, &scores(&[0.7, 0.9, 0.8]), 0.5, None, EdgeRule::ProsePsiGate);
        assert!(g.removed_edges.is_empty());
        // Edges only flow from strictly higher psi to lower.
        for &(from, to) in &g.edges {
            assert!(g.psi[from] > g.psi[to]);
        }
        assert_eq!(g.topo_order, vec![1, 2, 0]);
    }

    #[test]
    fn roots_examples() {
        let edgeless = CommGraph {
            n: 4,
            edges: BTreeSet::new(),
            topo_order: vec![2, 0, 1, 3],
            removed_edges: vec![],
            psi: vec![0.4, 0.2, 0.9, 0.1],
            round: 0,
        };
        assert_eq!(roots(&edgeless), vec![2, 0, 1, 3]);

        let chain = CommGraph {
            n: 3,
            edges: [(0, 1), (1, 2)].into_iter().collect(),
            topo_order: vec![0, 1, 2],
            removed_edges: vec![],
            psi: vec![0.9, 0.8, 0.7],
            round: 0,
        };
        assert_eq!(roots(&chain), vec![0]);

        let two_components = CommGraph {
            n: 4,
            edges: [(0, 1), (2, 3)].into_iter().collect(),
            topo_order: vec![0, 2, 1, 3],
            removed_edges: vec![],
            psi: vec![0.5, 0.4, 0.8, 0.3],
            round: 0,
        };
        assert_eq!(roots(&two_components), vec![2, 0]);
    }

    #[test]
    fn identical_predecessor_sets_order_by_psi() {
        // 0 feeds both 1 and 2; 2 out-scores 1 so it is visited first.
        let s = sim_from(vec![
            vec![1.0, 0.9, 0.9],
            vec![0.9, 1.0, 0.0],
            vec![0.9, 0.0, 1.0],
        ]);
        let g = form_graph(&s, &scores(&[0.9, 0.5, 0.7]), 0.5, None, EdgeRule::Alg2);
        assert_eq!(g.topo_order, vec![0, 2, 1]);
    }

    #[test]
    fn carried_graph_keeps_edges_and_refreshes_order() {
        let s = sim_from(vec![
            vec![1.0, 0.9, 0.9],
            vec![0.9, 1.0, 0.0],
            vec![0.9, 0.0, 1.0],
        ]);
        let g = form_graph(&s, &scores(&[0.9, 0.5, 0.7]), 0.5, None, EdgeRule::Alg2);
        let carried = carry_graph(&g, &scores(&[0.9, 0.8, 0.1]), 1);
        assert_eq!(carried.edges, g.edges);
        assert!(carried.removed_edges.is_empty());
        assert_eq!(carried.round, 1);
        assert_eq!(carried.topo_order, vec![0, 1, 2]);
    }

    #[test]
    fn graph_json_shape() {
        let s = sim_from(vec![vec![1.0, 0.9], vec![0.9, 1.0]]);
        let g = form_graph(&s, &scores(&[0.2, 0.8]), 0.5, None, EdgeRule::Alg2);
        let json = g.to_json();
        assert!(json.get("edges").is_some());
        assert!(json.get("removed").is_some());
        assert!(json.get("order").is_some());
        assert!(json.get("psi").is_some());
        assert_eq!(json["round"], 0);
    }
}
