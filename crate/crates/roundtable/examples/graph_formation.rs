//! Build the per-round communication graph from a similarity matrix and
//! contribution scores, under both edge rules.
//!
//! Run with: cargo run --example graph_formation

use roundtable::topology::{form_graph, roots, EdgeRule, SimilarityMatrix};
use roundtable::valuation::ContributionScores;

fn main() {
    // Four agents: 0 and 1 agree strongly, 2 is close to 1, 3 is off on
    // its own. Scores favor agent 0.
    let sim = SimilarityMatrix {
        s: vec![
            vec![1.00, 0.92, 0.55, 0.10],
            vec![0.92, 1.00, 0.81, 0.05],
            vec![0.55, 0.81, 1.00, 0.20],
            vec![0.10, 0.05, 0.20, 1.00],
        ],
        round: 0,
    };
    let scores = ContributionScores {
        psi: vec![0.93, 0.88, 0.74, 0.31],
        round: 0,
    };

    for rule in [EdgeRule::Alg2, EdgeRule::ProsePsiGate] {
        let graph = form_graph(&sim, &scores, 0.5, Some(2), rule);
        println!("edge rule {rule:?}");
        println!("  edges (source -> reader): {:?}", graph.edges);
        println!("  removed during cycle cuts: {:?}", graph.removed_edges);
        println!("  schedule: {:?}", graph.topo_order);
        println!("  roots (leader first): {:?}", roots(&graph));
        println!("  transcript json: {}", graph.to_json());
        println!();
    }
}
