//! The probabilistic side of multi-agent correctness: the at-least-two-
//! correct closed form against Monte Carlo, and agreement concentration
//! (two agents agreeing on the truth versus agreeing on the same mistake).
//!
//! Run with: cargo run --example probability_model

use roundtable::analysis::{audit_probability_formula, lemma1_check, prob_at_least_two_correct};

fn main() {
    println!("closed form: probability at least two of N agents are correct");
    println!("p      N=2      N=4      N=8");
    for &p in &[0.2, 0.4, 0.6, 0.8] {
        println!(
            "{p:.1}  {:.4}   {:.4}   {:.4}",
            prob_at_least_two_correct(p, 2),
            prob_at_least_two_correct(p, 4),
            prob_at_least_two_correct(p, 8)
        );
    }

    println!();
    println!("monte carlo agreement with the closed form (20k trials per cell):");
    let audit = audit_probability_formula(20_000, 5);
    for row in &audit.rows {
        println!(
            "  p={:.1} N={}: closed {:.4}, empirical {:.4} (within 3 sigma: {})",
            row.p, row.n, row.closed_form, row.empirical, row.ok
        );
    }

    println!();
    println!("agreement concentration for two independent agents:");
    for (p, wrong) in [
        (0.6, vec![0.2, 0.2]),
        (0.5, vec![0.125; 4]),
        (0.5, vec![0.5]), // single error mode at the dispersion boundary
    ] {
        let report = lemma1_check(p, &wrong).unwrap();
        println!(
            "  p={p:.2}, {} error modes: Pr[match on correct] = {:.4}, Pr[match on wrong] = {:.4}, dispersed = {}",
            wrong.len(),
            report.pr_correct_match,
            report.pr_incorrect_match,
            report.dispersed
        );
    }
}
