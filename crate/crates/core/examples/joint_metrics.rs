//! JDR, JCR and win rates on a hand-built pairing.

use pgot::metrics::{distribution_stats, jcr, jdr, win_rate, PairedEvaluation, DEFAULT_BINS};
use pgot::pareto::RewardVector;

fn rv(v: &[f64]) -> RewardVector {
    RewardVector::new(v.to_vec()).expect("finite")
}

fn main() -> pgot::Result<()> {
    let trained = vec![
        rv(&[0.8, 0.7, 0.5]),
        rv(&[0.4, 0.9, 0.6]),
        rv(&[0.3, 0.2, 0.1]),
        rv(&[0.5, 0.5, 0.5]),
    ];
    let base = vec![
        rv(&[0.6, 0.6, 0.4]),
        rv(&[0.5, 0.5, 0.5]),
        rv(&[0.4, 0.3, 0.2]),
        rv(&[0.5, 0.5, 0.5]),
    ];
    let full = PairedEvaluation::full(trained.clone(), base.clone())?;
    println!(
        "all rewards: JDR {:.1}%  JCR {:.1}%",
        jdr(&full),
        jcr(&full)
    );
    for k in 0..3 {
        println!("  win rate on reward {k}: {:.1}%", win_rate(&full, k)?);
    }
    let pair = full.with_subset(vec![0, 1])?;
    println!("rewards 0 and 1 only: JDR {:.1}%", jdr(&pair));

    let stats = distribution_stats(&trained, &base, DEFAULT_BINS)?;
    println!("means {:?}", stats.mean);
    println!("stds  {:?}", stats.std);
    println!("KL to the base distribution {:?}", stats.kl_to_reference);
    Ok(())
}
