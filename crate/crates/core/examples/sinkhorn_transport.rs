//! Entropic transport between a few reward vectors, and how the plan sharpens
//! as epsilon shrinks.

use pgot::ot::{
    cost_matrix, ot_loss, ot_loss_gradient, sinkhorn, transport_cost, uniform, SinkhornParams,
};
use pgot::pareto::RewardVector;

fn rv(v: &[f64]) -> RewardVector {
    RewardVector::new(v.to_vec()).expect("finite")
}

fn main() -> pgot::Result<()> {
    let source = vec![rv(&[0.2, 0.3]), rv(&[0.5, 0.1])];
    let target = vec![rv(&[0.9, 0.4]), rv(&[0.6, 0.8]), rv(&[0.3, 0.9])];
    let cost = cost_matrix(&source, &target)?;

    for eps in [1.0, 0.1, 0.01] {
        let plan = sinkhorn(
            &cost,
            &uniform(2),
            &uniform(3),
            SinkhornParams::with_epsilon(eps),
        )?;
        println!(
            "eps {eps:<5} cost {:.5}  converged {} after {} sweeps (marginal error {:.1e})",
            transport_cost(&cost, &plan)?,
            plan.converged,
            plan.iterations_used,
            plan.marginal_error
        );
        for j in 0..plan.rows {
            let row: Vec<String> = (0..plan.cols)
                .map(|m| format!("{:.4}", plan.get(j, m)))
                .collect();
            println!("    [{}]", row.join(", "));
        }
    }

    let (loss, plan) = ot_loss(&source, &target, SinkhornParams::default())?;
    let grad = ot_loss_gradient(&source, &target, &plan)?;
    println!("loss {loss:.5}; gradient on the sources (descent moves them toward the targets):");
    for (s, g) in source.iter().zip(&grad) {
        println!("  {:?} -> {:?}", s.values(), g);
    }
    Ok(())
}
