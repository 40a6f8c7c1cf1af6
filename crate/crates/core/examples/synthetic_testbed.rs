//! The synthetic testbed: per-prompt bounds, and what happens when a policy
//! climbs the weak reward alone.

use pgot::testbed::{build_suite, PolicyState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pgot::Result<()> {
    let suite = build_suite(5, 8, 7)?;
    println!("kinds {:?}", suite.kinds);
    println!("{:<6} {:>7} bounds", "prompt", "radius");
    for p in &suite.prompts {
        let b: Vec<String> = p.bounds.iter().map(|b| format!("{b:8.3}")).collect();
        println!("{:<6} {:>7.3} {}", p.prompt_id, p.radius, b.join(" "));
    }

    let policy = PolicyState::base(&suite);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples = suite.sample(&policy.prompts[0], 0, 1000, &mut rng)?;
    let feasible = samples
        .iter()
        .filter(|s| suite.prompts[0].is_feasible(&s.z))
        .count();
    println!("\nbase policy on p0000: {feasible}/1000 samples feasible");

    let w = suite.weak_indices()[0];
    let p = &suite.prompts[0];
    let mut z = p.base_mean.clone();
    println!("\nascending reward {w} (weak) alone:");
    for step in 0..=300 {
        if step % 50 == 0 {
            let r = suite.rewards(0, &z);
            println!(
                "  step {step:>3}: weak {:7.3} (bound {:.3})  strong mean {:.3}  Q {:.3} (q_min {:.3})  hacked {}",
                r[w],
                p.bounds[w],
                suite.strong_indices().iter().map(|&k| r[k]).sum::<f64>() / 3.0,
                p.quality(&z),
                p.q_min,
                suite.is_hacked(0, &z, &[w])
            );
        }
        let g = &suite.reward_gradient(0, &z)[w];
        z.iter_mut().zip(g).for_each(|(a, b)| *a += 0.05 * b);
    }
    Ok(())
}
