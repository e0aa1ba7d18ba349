//! Solve for the noise multiplier that meets a privacy budget, then inspect
//! how the achieved guarantee decomposes across Renyi orders.

use dplab::accountant::{
    achieved_epsilon, calibrate_noise, default_orders, rdp_of_step, split_budget, PrivacyBudget,
};

fn main() -> dplab::Result<()> {
    let delta = 1e-5;
    let sampling_rate = 0.02;
    let steps = 900; // e.g. 18 epochs of 50 expected steps each

    println!("calibrating for q={sampling_rate}, {steps} steps, delta={delta}");
    for epsilon in [2.0, 4.0, 6.0] {
        let budget = PrivacyBudget::new(epsilon, delta)?;
        let sigma = calibrate_noise(&budget, sampling_rate, steps)?;
        let (achieved, order) = achieved_epsilon(sampling_rate, sigma, steps, delta)?;
        println!(
            "  epsilon {epsilon}: noise multiplier {sigma:.6} -> achieved {achieved:.6} (best order {order})"
        );
    }

    // the per-step curve behind one of those guarantees
    let sigma = calibrate_noise(&PrivacyBudget::new(4.0, delta)?, sampling_rate, steps)?;
    let curve = rdp_of_step(sampling_rate, sigma, &default_orders())?;
    println!("\nper-step Renyi curve at sigma={sigma:.4} (first orders):");
    for (order, eps) in curve.orders.iter().zip(&curve.eps).take(6) {
        println!("  order {order:>2}: {eps:.8}");
    }

    // halving a budget for a two-stage pipeline
    let full = PrivacyBudget::new(6.0, delta)?;
    let half = split_budget(&full, 2)?;
    println!(
        "\nsplitting ({}, {}) across two stages gives each ({}, {})",
        full.epsilon, full.delta, half.epsilon, half.delta
    );
    Ok(())
}
