//! Frontier extraction on a small hand-made candidate set.

use pgot::pareto::{
    dominance_matrix, dominated_by_frontier, dominating_set, extract_frontier, FrontierMode,
    RewardVector,
};

fn main() -> pgot::Result<()> {
    let raw = [
        [0.9, 0.2],
        [0.6, 0.6],
        [0.2, 0.9],
        [0.5, 0.5],
        [0.6, 0.6],
        [0.1, 0.1],
    ];
    let set: Vec<RewardVector> = raw
        .iter()
        .map(|v| RewardVector::new(v.to_vec()))
        .collect::<Result<_, _>>()?;

    let a = dominance_matrix(&set)?;
    println!("dominance matrix (row dominates column):");
    for row in a.to_rows() {
        println!("  {row:?}");
    }
    println!("times dominated: {:?}", a.domination_counts());

    let frontier = extract_frontier("demo", &set)?;
    println!("frontier ({} points, duplicates kept):", frontier.len());
    for p in &frontier.points {
        println!("  {:?}", p.values());
    }

    let probe = RewardVector::new(vec![0.4, 0.4])?;
    println!(
        "candidates dominating {:?}: {}",
        probe.values(),
        dominating_set(&probe, &set)?.len()
    );

    let samples = vec![probe, RewardVector::new(vec![0.95, 0.0])?];
    println!(
        "samples below the frontier: any = {:?}, all = {:?}",
        dominated_by_frontier(&samples, &frontier, FrontierMode::Any)?,
        dominated_by_frontier(&samples, &frontier, FrontierMode::All)?
    );
    Ok(())
}
