//! PG-OT against the scalarized baselines and a reward soup, each compared
//! with the untrained generator on the same evaluation noise.

use pgot::metrics::{jcr, jdr, PairedEvaluation};
use pgot::testbed::{build_suite, PolicyState, Suite};
use pgot::trainer::{
    evaluate_policy, evaluation_noise, precompute_frontiers, reward_soup, run, Method,
    TrainingConfig,
};

fn versus_base(
    suite: &Suite,
    policy: &PolicyState,
    config: &TrainingConfig,
) -> pgot::Result<(f64, f64, f64)> {
    let noise = evaluation_noise(suite, config.seed, config.eval_samples);
    let cand = evaluate_policy(suite, policy, &noise);
    let base = evaluate_policy(suite, &PolicyState::base(suite), &noise);
    let full = PairedEvaluation::full(cand, base)?;
    let pair = full.with_subset(config.jdr2_subset.clone())?;
    Ok((jdr(&pair), jdr(&full), jcr(&full)))
}

fn main() -> pgot::Result<()> {
    let suite = build_suite(20, 8, 1)?;
    let base = TrainingConfig {
        steps: 1000,
        ..Default::default()
    };
    let store = precompute_frontiers(
        &PolicyState::base(&suite),
        &suite,
        base.frontier_candidates,
        base.seed,
    )?;

    println!(
        "{:<22} {:>7} {:>7} {:>7} {:>8}",
        "method", "JDR2", "JDR4", "JCR4", "hacked"
    );
    for method in [
        Method::Pgot,
        Method::GlobalBound,
        Method::WeightedSumBounds,
        Method::SeparateConstraints,
    ] {
        let config = TrainingConfig {
            method,
            ..base.clone()
        };
        let out = run(&config, &suite, Some(&store))?;
        let (j2, j4, c4) = versus_base(&suite, &out.final_policy, &config)?;
        let hacked = out.records.last().map_or(0, |r| r.hacked);
        println!(
            "{:<22} {j2:>7.2} {j4:>7.2} {c4:>7.2} {hacked:>8}",
            method.as_str()
        );
    }

    // one global-bound policy per reward, fused with the 2:3:2:3 weights
    let mut singles = Vec::new();
    for k in 0..suite.reward_count() {
        let config = TrainingConfig {
            method: Method::GlobalBound,
            active_rewards: Some(vec![k]),
            ..base.clone()
        };
        singles.push(run(&config, &suite, None)?.final_policy);
    }
    let soup = reward_soup(&singles, &base.weights)?;
    let (j2, j4, c4) = versus_base(&suite, &soup, &base)?;
    println!(
        "{:<22} {j2:>7.2} {j4:>7.2} {c4:>7.2} {:>8}",
        "reward-soup", "-"
    );
    Ok(())
}
