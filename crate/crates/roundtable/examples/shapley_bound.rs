//! Stress the approximation guarantees: residual ceilings over random
//! embedding pools and the ranking-stability implication, including the
//! near-cancellation family where the separation flag actually fires.
//!
//! Run with: cargo run --example shapley_bound

use roundtable::analysis::{
    audit_ranking_stability, audit_shapley_bound, near_cancellation_instance,
};
use roundtable::valuation::{approx_contribution, bound_certificate, ranking_stable};

fn main() {
    let bound = audit_shapley_bound(300, 12, 99);
    println!(
        "residual bound: {} random instances, {} violations, {} efficiency failures",
        bound.instances, bound.residual_violations, bound.efficiency_failures
    );

    let ranking = audit_ranking_stability(300, 12, 99);
    println!(
        "ranking stability: {} flagged pairs, {} order violations, mean kendall tau {:.4}",
        ranking.flagged_pairs, ranking.order_violations, ranking.mean_kendall_tau
    );

    // On typical pools the separation threshold exceeds any possible score
    // gap, so the flag stays quiet. Near-cancelling pools inflate the
    // normalization factors enough for real gaps to clear it.
    println!();
    let rs = near_cancellation_instance(0.002);
    let scores = approx_contribution(&rs, 0).unwrap();
    let cert = bound_certificate(&rs).unwrap();
    let threshold = 2.0 * cert.bound() / cert.min_l();
    println!("near-cancellation pool: psi = {:?}", scores.psi);
    println!(
        "  separation threshold {:.4}; agents 0 vs 1 gap {:.4}",
        threshold,
        scores.psi[0] - scores.psi[1]
    );
    println!(
        "  stably separated (0 over 1): {}",
        ranking_stable(&scores, &cert, 0, 1)
    );
}
