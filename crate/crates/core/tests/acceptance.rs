//! Acceptance suite. Prints one PASS/FAIL line per criterion, then fails if
//! any criterion failed.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture`.

use std::time::{Duration, Instant};

use pgot::detector::Action;
use pgot::metrics::{jcr, jdr, win_rate, PairedEvaluation};
use pgot::ot::{
    cost_matrix, entropic_objective, ot_loss, ot_loss_gradient, sinkhorn, transport_cost, uniform,
    CostMatrix, SinkhornParams,
};
use pgot::pareto::{dominance_matrix, extract_frontier, frontier_indices, RewardVector};
use pgot::testbed::{build_suite, RewardKind, Suite};
use pgot::trainer::{
    resume, run, run_with, Checkpoint, Method, RunOptions, RunOutput, TrainingConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const PROMPTS: usize = 20;
const DIM: usize = 8;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn rv(v: Vec<f64>) -> RewardVector {
    RewardVector::new(v).unwrap()
}

fn brute_dominates(a: &[f64], b: &[f64]) -> bool {
    let mut ge = true;
    let mut gt = false;
    for i in 0..a.len() {
        ge &= a[i] >= b[i];
        gt |= a[i] > b[i];
    }
    ge && gt
}

fn random_set(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<Vec<f64>> {
    // Coarse grid so ties and duplicates show up.
    let coarse = rng.random_bool(0.5);
    (0..m)
        .map(|_| {
            (0..k)
                .map(|_| {
                    if coarse {
                        rng.random_range(0..4) as f64
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect()
        })
        .collect()
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=64);
        let k = rng.random_range(2..=5);
        let raw = random_set(&mut rng, m, k);
        let set: Vec<RewardVector> = raw.iter().cloned().map(rv).collect();
        let a = dominance_matrix(&set).unwrap();
        let mut expected = Vec::new();
        for n in 0..m {
            let mut dominated = false;
            for mm in 0..m {
                let d = brute_dominates(&raw[mm], &raw[n]);
                if a.get(mm, n) != d {
                    mismatches += 1;
                }
                dominated |= d;
            }
            if !dominated {
                expected.push(n);
            }
        }
        if frontier_indices(&set).unwrap() != expected {
            mismatches += 1;
        }
        let f = extract_frontier("p", &set).unwrap();
        let points: Vec<&[f64]> = f.points.iter().map(|p| p.values()).collect();
        let want: Vec<&[f64]> = expected.iter().map(|&i| raw[i].as_slice()).collect();
        if points != want {
            mismatches += 1;
        }
    }
    let el = t.elapsed();
    verdict(
        mismatches == 0 && el < Duration::from_secs(10),
        format!("1000 instances, {mismatches} mismatches, {el:.2?}"),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // Near-tied assignments need a few hundred thousand sweeps at this epsilon.
    let params = SinkhornParams {
        epsilon: 0.01,
        max_iter: 1_000_000,
        tol: 1e-6,
    };
    let (mut worst_gap, mut worst_err, mut unconverged, mut over) = (0.0_f64, 0.0_f64, 0, 0);
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let mut entries: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let (lo, hi) = entries
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        if hi > lo {
            entries.iter_mut().for_each(|x| *x = (*x - lo) / (hi - lo));
        }
        let c = CostMatrix::from_entries(n, n, entries).unwrap();
        let plan = sinkhorn(&c, &uniform(n), &uniform(n), params).unwrap();
        let cost = transport_cost(&c, &plan).unwrap();
        let lp = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(j, &m)| c.get(j, m)).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min);
        worst_gap = worst_gap.max((cost - lp).abs());
        over += ((cost - lp).abs() > 1e-3) as usize;
        worst_err = worst_err.max(plan.marginal_error);
        if !plan.converged {
            unconverged += 1;
        }
    }
    let el = t.elapsed();
    verdict(
        worst_gap <= 1e-3 && worst_err <= 1e-6 && unconverged == 0 && el < Duration::from_secs(30),
        format!("max |cost - LP| {worst_gap:.2e} ({over}/200 above 1e-3), max marginal error {worst_err:.1e}, {unconverged} unconverged, {el:.2?}"),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

fn criterion_3() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = SinkhornParams {
        epsilon: 0.1,
        max_iter: 1_000_000,
        tol: 1e-14,
    };
    // The fixed-plan gradient is the envelope gradient of the objective
    // Sinkhorn minimizes. The bare linear cost is tracked for the report.
    let regularized = |src: &[RewardVector], tgt: &[RewardVector]| {
        let c = cost_matrix(src, tgt).unwrap();
        let plan = sinkhorn(&c, &uniform(src.len()), &uniform(tgt.len()), params).unwrap();
        entropic_objective(&c, &plan).unwrap()
    };
    let linear = |src: &[RewardVector], tgt: &[RewardVector]| ot_loss(src, tgt, params).unwrap().0;
    let mut worst_ot = 0.0_f64;
    let mut worst_linear = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=5);
        let q = rng.random_range(1..=5);
        let k = rng.random_range(2..=4);
        let src: Vec<RewardVector> = (0..n)
            .map(|_| rv((0..k).map(|_| rng.random()).collect()))
            .collect();
        let tgt: Vec<RewardVector> = (0..q)
            .map(|_| rv((0..k).map(|_| rng.random()).collect()))
            .collect();
        let (_, plan) = ot_loss(&src, &tgt, params).unwrap();
        let analytic: Vec<f64> = ot_loss_gradient(&src, &tgt, &plan).unwrap().concat();
        let h = 1e-5;
        let mut fd = Vec::with_capacity(n * k);
        let mut fd_linear = Vec::with_capacity(n * k);
        for j in 0..n {
            for i in 0..k {
                let shifted = |d: f64| {
                    let mut s = src.clone();
                    let mut v = s[j].values().to_vec();
                    v[i] += d;
                    s[j] = rv(v);
                    s
                };
                fd.push(
                    (regularized(&shifted(h), &tgt) - regularized(&shifted(-h), &tgt)) / (2.0 * h),
                );
                fd_linear
                    .push((linear(&shifted(h), &tgt) - linear(&shifted(-h), &tgt)) / (2.0 * h));
            }
        }
        worst_ot = worst_ot.max(rel_err(&analytic, &fd));
        worst_linear = worst_linear.max(rel_err(&analytic, &fd_linear));
    }

    let suite = build_suite(PROMPTS, DIM, 3).unwrap();
    let mut worst_tb = 0.0_f64;
    for i in 0..PROMPTS {
        for _ in 0..5 {
            let p = &suite.prompts[i];
            let z: Vec<f64> = p
                .center
                .iter()
                .map(|c| c + p.radius * rng.random_range(-1.5..1.5))
                .collect();
            let grads = suite.reward_gradient(i, &z);
            for (kk, g) in grads.iter().enumerate() {
                let h = 1e-5;
                let fd: Vec<f64> = (0..DIM)
                    .map(|d| {
                        let mut a = z.clone();
                        let mut b = z.clone();
                        a[d] += h;
                        b[d] -= h;
                        (suite.rewards(i, &a)[kk] - suite.rewards(i, &b)[kk]) / (2.0 * h)
                    })
                    .collect();
                worst_tb = worst_tb.max(rel_err(g, &fd));
            }
        }
    }
    let el = t.elapsed();
    verdict(
        worst_ot <= 1e-3 && worst_tb <= 1e-5 && el < Duration::from_secs(30),
        format!("OT gradient max rel err {worst_ot:.2e} vs regularized objective ({worst_linear:.2e} vs linear cost alone), testbed gradient max rel err {worst_tb:.2e}, {el:.2?}"),
    )
}

fn continuous_set(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..k).map(|_| rng.random::<f64>()).collect())
        .collect()
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    for _ in 0..500 {
        let n = rng.random_range(1..=40);
        let k = rng.random_range(2..=5);
        // Continuous draws: subset monotonicity needs tie-free pairs.
        let s = continuous_set(&mut rng, n, k);
        let b = continuous_set(&mut rng, n, k);
        let eval = PairedEvaluation::full(
            s.iter().cloned().map(rv).collect(),
            b.iter().cloned().map(rv).collect(),
        )
        .unwrap();
        let pct = |c: usize| 100.0 * c as f64 / n as f64;
        let count_on = |subset: &[usize], x: &[Vec<f64>], y: &[Vec<f64>]| {
            (0..n)
                .filter(|&j| {
                    let a: Vec<f64> = subset.iter().map(|&i| x[j][i]).collect();
                    let c: Vec<f64> = subset.iter().map(|&i| y[j][i]).collect();
                    brute_dominates(&a, &c)
                })
                .count()
        };
        let all: Vec<usize> = (0..k).collect();
        let (got_jdr, got_jcr) = (jdr(&eval), jcr(&eval));
        if got_jdr != pct(count_on(&all, &s, &b))
            || got_jcr != pct(count_on(&all, &b, &s))
            || got_jdr + got_jcr > 100.0
        {
            bad += 1;
        }
        for r in 0..k {
            if win_rate(&eval, r).unwrap() != pct((0..n).filter(|&j| s[j][r] > b[j][r]).count()) {
                bad += 1;
            }
        }
        for mask in 1..(1u32 << k) {
            let subset: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
            let restricted = eval.with_subset(subset.clone()).unwrap();
            let got = jdr(&restricted);
            if got != pct(count_on(&subset, &s, &b))
                || got < got_jdr
                || jcr(&restricted) != pct(count_on(&subset, &b, &s))
            {
                bad += 1;
            }
        }
    }
    verdict(
        bad == 0,
        format!("500 paired sets, every reward subset, {bad} discrepancies"),
    )
}

struct SeedRuns {
    seed: u64,
    suite: Suite,
    gb: RunOutput,
    gb_time: Duration,
    pg: RunOutput,
    pg_time: Duration,
}

fn weak_index(suite: &Suite) -> usize {
    suite
        .kinds
        .iter()
        .position(|k| *k == RewardKind::Weak)
        .unwrap()
}

fn seed_runs(seed: u64) -> SeedRuns {
    let suite = build_suite(PROMPTS, DIM, seed).unwrap();
    let pg_cfg = TrainingConfig {
        seed,
        ..TrainingConfig::default()
    };
    let gb_cfg = TrainingConfig {
        method: Method::GlobalBound,
        ..pg_cfg.clone()
    };
    let t = Instant::now();
    let gb = run(&gb_cfg, &suite, None).unwrap();
    let gb_time = t.elapsed();
    let t = Instant::now();
    let pg = run(&pg_cfg, &suite, None).unwrap();
    let pg_time = t.elapsed();
    SeedRuns {
        seed,
        suite,
        gb,
        gb_time,
        pg,
        pg_time,
    }
}

fn criterion_5(runs: &[SeedRuns]) -> Verdict {
    let mut ok = 0;
    let mut notes = Vec::new();
    for r in runs {
        let w = weak_index(&r.suite);
        let affected: Vec<_> = r.gb.final_batch.iter().filter(|b| b.hacked > 0).collect();
        let pattern = affected.iter().all(|b| {
            let p = &r.suite.prompts[b.prompt];
            b.mean_rewards[w] > p.bounds[w] && b.mean_quality < p.q_min
        });
        let pass = !affected.is_empty() && pattern && r.gb_time < Duration::from_secs(180);
        ok += pass as usize;
        notes.push(format!("s{}:{}/{}", r.seed, affected.len(), PROMPTS));
    }
    verdict(
        ok == runs.len(),
        format!(
            "{ok}/{} seeds show the conflict pattern; hacked prompts {}",
            runs.len(),
            notes.join(" ")
        ),
    )
}

fn final_jdr2(o: &RunOutput) -> f64 {
    o.records.last().unwrap().metrics.jdr2
}

fn criterion_6(runs: &[SeedRuns]) -> Verdict {
    let mut clean = 0;
    let mut single = 0;
    let mut gap = 0.0;
    for r in runs {
        let w = weak_index(&r.suite);
        let late_hacked: usize =
            r.pg.records
                .iter()
                .filter(|x| x.step() >= 1500)
                .map(|x| x.hacked)
                .sum();
        clean += (late_hacked == 0 && r.pg_time < Duration::from_secs(300)) as usize;
        let removals = r.pg.removals();
        single += (removals.len() == 1 && removals[0].decision.flagged_reward == Some(w)) as usize;
        gap += final_jdr2(&r.pg) - final_jdr2(&r.gb);
    }
    let n = runs.len();
    gap /= n as f64;
    let agreement = single as f64 / n as f64;
    verdict(
        clean == n && agreement >= 0.9 && gap >= 10.0,
        format!("{clean}/{n} seeds clean in final 500 steps, single weak removal in {single}/{n}, mean JDR2 gap {gap:.1}pp"),
    )
}

/// Mean JDR4 over `[start, start + 200)`.
fn window_mean(o: &RunOutput, start: u64) -> f64 {
    let v: Vec<f64> = o
        .records
        .iter()
        .filter(|r| r.step() >= start && r.step() < start + 200)
        .map(|r| r.metrics.jdr4)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_7(runs: &[SeedRuns], cfg: &TrainingConfig) -> Verdict {
    let r = runs.iter().find(|r| r.seed == cfg.seed).unwrap();
    let batch = (cfg.batch_size() * PROMPTS) as f64;
    let event = r.pg.removals().first().map(|e| e.step);
    let pg_windows: Vec<f64> = match event {
        Some(e) => (0..)
            .map(|i| e + 200 * i)
            .take_while(|s| s + 200 <= cfg.steps)
            .map(|s| window_mean(&r.pg, s))
            .collect(),
        None => Vec::new(),
    };
    let monotone = pg_windows.len() >= 2 && pg_windows.windows(2).all(|w| w[1] >= w[0]);
    let onset =
        r.gb.records
            .iter()
            .find(|x| x.hacked as f64 / batch >= cfg.detector.hack_fraction)
            .map(|x| x.step());
    let (at_onset, at_end) = match onset {
        Some(s) => (window_mean(&r.gb, s), window_mean(&r.gb, cfg.steps - 200)),
        None => (f64::NAN, f64::NAN),
    };
    let decreasing = at_end < at_onset;
    let shown: Vec<String> = pg_windows.iter().map(|w| format!("{w:.2}")).collect();
    verdict(
        monotone && decreasing,
        format!(
            "PG-OT JDR4 windows after step {:?}: [{}]; GLOBAL_BOUND onset {onset:?}, JDR4 {at_onset:.1} -> {at_end:.1}",
            event,
            shown.join(", ")
        ),
    )
}

/// Windows where a reward's KL is at least half its series maximum.
fn spike_region(series: &[f64]) -> Vec<usize> {
    let peak = series.iter().cloned().fold(0.0, f64::max);
    (0..series.len())
        .filter(|&i| peak > 0.0 && series[i] >= 0.5 * peak)
        .collect()
}

fn criterion_8(runs: &[SeedRuns]) -> Verdict {
    let (mut joint, mut joint_argmax) = (0, 0);
    let (mut oracle_hits, mut stat_hits) = (0, 0);
    for r in runs {
        let obs = &r.gb.observations;
        let k = r.suite.reward_count();
        let series: Vec<Vec<f64>> = (0..k)
            .map(|j| obs.iter().map(|o| o.kl[j]).collect())
            .collect();
        let regions: Vec<Vec<usize>> = series.iter().map(|s| spike_region(s)).collect();
        let shared = (0..obs.len()).any(|w| regions.iter().all(|reg| reg.contains(&w)));
        joint += shared as usize;
        let peaks: Vec<usize> = series
            .iter()
            .map(|s| (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap())
            .collect();
        joint_argmax += peaks.iter().all(|&p| p == peaks[0]) as usize;
        // Isolation is judged where hacking is first caught.
        let w = weak_index(&r.suite);
        if let Some(o) = obs
            .iter()
            .find(|o| o.oracle.action == Action::RemoveAndRevert)
        {
            oracle_hits += (o.oracle.flagged_reward == Some(w)) as usize;
            stat_hits += (o.statistical.flagged_reward == Some(w)) as usize;
        }
    }
    let n = runs.len();
    let pct = |h: usize| 100.0 * h as f64 / n as f64;
    let (oracle_acc, stat_acc) = (pct(oracle_hits), pct(stat_hits));
    verdict(
        joint as f64 / n as f64 >= 0.6 && stat_acc <= oracle_acc - 30.0,
        format!(
            "joint KL spike in {joint}/{n} seeds (shared argmax in {joint_argmax}/{n}); \
             isolation accuracy oracle {oracle_acc:.0}% vs statistical {stat_acc:.0}%"
        ),
    )
}

fn criterion_9() -> Verdict {
    let mut identical = 0;
    let seeds = [0u64, 1, 2];
    let mut notes = Vec::new();
    for seed in seeds {
        let suite = build_suite(PROMPTS, DIM, seed).unwrap();
        let cfg = TrainingConfig {
            seed,
            steps: 1200,
            ..TrainingConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        };
        let full = run_with(&cfg, &suite, None, opts).unwrap();
        let on_disk = Checkpoint::load_dir(dir.path()).unwrap();
        let from = 600;
        let replay = resume(&cfg, &suite, None, &on_disk, from, RunOptions::default()).unwrap();
        let tail: Vec<Vec<String>> = full.records[from as usize..]
            .iter()
            .map(|r| r.fields())
            .collect();
        let replayed: Vec<Vec<String>> = replay.records.iter().map(|r| r.fields()).collect();
        let same = tail == replayed && full.records[from as usize..] == replay.records[..];
        identical += same as usize;
        notes.push(format!(
            "s{seed}:{}",
            if same { "identical" } else { "diverged" }
        ));
    }
    verdict(
        identical == seeds.len(),
        format!("resume from step 600 of 1200: {}", notes.join(" ")),
    )
}

fn criterion_10() -> Verdict {
    let suite = build_suite(PROMPTS, DIM, 0).unwrap();
    let mut finals = Vec::new();
    let mut failures = Vec::new();
    for eps in [0.1, 0.5, 0.9] {
        let cfg = TrainingConfig {
            epsilon: eps,
            ..TrainingConfig::default()
        };
        match run(&cfg, &suite, None) {
            Ok(o) => finals.push(final_jdr2(&o)),
            Err(e) => failures.push(format!("eps {eps}: {e}")),
        }
    }
    let spread = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - finals.iter().cloned().fold(f64::INFINITY, f64::min);
    let shown: Vec<String> = finals.iter().map(|v| format!("{v:.1}")).collect();
    verdict(
        failures.is_empty() && spread <= 10.0,
        format!(
            "final JDR2 [{}], spread {spread:.1}pp {}",
            shown.join(", "),
            failures.join("; ")
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let cfg = TrainingConfig::default();
    let mut results: Vec<(&str, Verdict, Duration)> = Vec::new();
    let mut timed = |name: &'static str, f: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        results.push((name, v, t.elapsed()));
    };
    timed("1 pareto oracle equivalence", &criterion_1);
    timed("2 sinkhorn LP-oracle equivalence", &criterion_2);
    timed("3 gradient correctness", &criterion_3);
    timed("4 metric correctness", &criterion_4);

    let t = Instant::now();
    let runs: Vec<SeedRuns> = SEEDS.iter().map(|&s| seed_runs(s)).collect();
    let shared = t.elapsed();
    timed("5 reward hacking reproduction", &|| criterion_5(&runs));
    timed("6 PG-OT mitigation", &|| criterion_6(&runs));
    timed("7 training-curve shape", &|| criterion_7(&runs, &cfg));
    timed("8 statistical-detector negative result", &|| {
        criterion_8(&runs)
    });
    timed("9 checkpoint determinism", &criterion_9);
    timed("10 epsilon sweep", &criterion_10);

    println!(
        "shared training runs: {shared:.2?} for {} seeds",
        SEEDS.len()
    );
    let mut failed = Vec::new();
    for (name, v, el) in &results {
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("{tag} criterion {name} ({el:.2?}): {}", v.detail);
        if !v.passed {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
