//! Staged PG-OT at several entropic regularization strengths.

use pgot::testbed::build_suite;
use pgot::trainer::{run, TrainingConfig};

fn main() -> pgot::Result<()> {
    let suite = build_suite(20, 8, 0)?;
    println!(
        "{:>5} {:>7} {:>7} {:>7} {:>14}",
        "eps", "JDR2", "JDR4", "JCR4", "nonconverged"
    );
    for epsilon in [0.1, 0.5, 0.9] {
        let config = TrainingConfig {
            epsilon,
            steps: 1000,
            ..Default::default()
        };
        let out = run(&config, &suite, None)?;
        let last = out.records.last().expect("at least one step");
        let nonconverged: usize = out.records.iter().map(|r| r.nonconverged).sum();
        println!(
            "{epsilon:>5} {:>7.2} {:>7.2} {:>7.2} {nonconverged:>14}",
            last.metrics.jdr2, last.metrics.jdr4, last.metrics.jcr4
        );
    }
    Ok(())
}
