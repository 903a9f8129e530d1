//! Score a pool of free-text responses: exact Shapley values from full
//! coalition enumeration next to the linear-time cosine approximation, plus
//! the certificate that bounds the gap between them.
//!
//! Run with: cargo run --example contribution_scores

use roundtable::embedding::{embed, EmbedderSpec};
use roundtable::valuation::{approx_contribution, bound_certificate, exact_shapley};

fn main() {
    let responses = [
        "the answer is 42 because 6 times 7 equals 42",
        "six multiplied by seven gives 42, so the answer is 42",
        "i think the answer is 42: 6 x 7 = 42",
        "the result should be 48 since 6 times 8 is 48",
    ];

    let spec = EmbedderSpec::deterministic_test(128, 7);
    let embeddings: Vec<_> = responses
        .iter()
        .map(|text| embed(text, &spec).expect("non-empty text"))
        .collect();

    let scores = approx_contribution(&embeddings, 0).unwrap();
    let shapley = exact_shapley(&embeddings).unwrap();
    let cert = bound_certificate(&embeddings).unwrap();

    println!("agent  psi      phi      L        residual");
    for i in 0..responses.len() {
        println!(
            "{i}      {:+.4}  {:+.4}  {:.4}   {:+.5}",
            scores.psi[i], shapley.phi[i], cert.l[i], cert.residuals[i]
        );
    }
    println!();
    println!(
        "ceiling I*Gamma^2 = {:.4} (I = {:.4}, Gamma = {:.4})",
        cert.bound(),
        cert.i_const,
        cert.gamma_norm
    );
    println!("bound holds for every agent: {}", cert.holds());
    let total: f64 = shapley.phi.iter().sum();
    println!("efficiency: sum(phi) = {total:.6} (the full pool's utility is 1)");
}
