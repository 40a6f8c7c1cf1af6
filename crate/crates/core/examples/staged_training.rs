//! A full staged PG-OT run on the default suite: offline transport, oracle
//! detection of the weak reward, revert, then the online phase.

use pgot::testbed::build_suite;
use pgot::trainer::{run, TrainingConfig};

fn main() -> pgot::Result<()> {
    let suite = build_suite(20, 8, 0)?;
    let config = TrainingConfig::default();
    let out = run(&config, &suite, None)?;

    for e in &out.events {
        println!(
            "step {:>5}: {} {:?} ({})",
            e.step,
            e.decision.action.as_str(),
            e.decision.flagged_reward,
            e.decision.rationale
        );
    }
    println!(
        "\n{:>5} {:>8} {:>7} {:>7} {:>7} {:>7}",
        "step", "mode", "JDR2", "JDR4", "JCR4", "hacked"
    );
    for r in out.records.iter().step_by(200).chain(out.records.last()) {
        println!(
            "{:>5} {:>8} {:>7.2} {:>7.2} {:>7.2} {:>7}",
            r.step(),
            r.mode.as_str(),
            r.metrics.jdr2,
            r.metrics.jdr4,
            r.metrics.jcr4,
            r.hacked
        );
    }
    println!(
        "\nactive rewards at the end: {:?}, mode {}",
        out.final_active,
        out.final_mode.as_str()
    );
    Ok(())
}
