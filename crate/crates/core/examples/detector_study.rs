//! Both detectors watching the same hacking run: the oracle names the weak
//! reward while the KL statistics move together.

use pgot::testbed::build_suite;
use pgot::trainer::{run, Method, TrainingConfig};

fn main() -> pgot::Result<()> {
    let suite = build_suite(20, 8, 2)?;
    let config = TrainingConfig {
        method: Method::GlobalBound,
        steps: 800,
        ..Default::default()
    };
    let out = run(&config, &suite, None)?;
    println!("weak reward index: {:?}\n", suite.weak_indices());
    println!(
        "{:>5} {:>7}  {:<30} {:<20} {:<20}",
        "step", "hacked", "KL per reward", "oracle", "statistical"
    );
    for o in &out.observations {
        let kl: Vec<String> = o.kl.iter().map(|k| format!("{k:.2}")).collect();
        let name = |d: &pgot::detector::DetectorDecision| match d.flagged_reward {
            Some(k) => format!("{} {k}", d.action.as_str()),
            None => d.action.as_str().to_string(),
        };
        println!(
            "{:>5} {:>6.0}%  {:<30} {:<20} {:<20}",
            o.step,
            100.0 * o.hacked_fraction,
            kl.join(" "),
            name(&o.oracle),
            name(&o.statistical)
        );
    }
    Ok(())
}
