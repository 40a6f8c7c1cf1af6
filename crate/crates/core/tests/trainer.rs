use approx::assert_relative_eq;
use pgot::ot::SinkhornParams;
use pgot::pareto::{extract_frontier, FrontierMode, RewardVector};
use pgot::store::FrontierStore;
use pgot::testbed::{
    build_suite, build_suite_with, PolicyState, RewardKind, Sample, Suite, TestbedParams,
};
use pgot::trainer::steps::{baseline_update, generate, offline_update, online_update};
use pgot::trainer::{
    precompute_frontiers, resume, reward_soup, run, run_with, Checkpoint, Method, ModeSchedule,
    RunOptions, TrainingConfig,
};

fn small_suite(seed: u64) -> Suite {
    build_suite(6, 8, seed).unwrap()
}

fn short_config(steps: u64) -> TrainingConfig {
    TrainingConfig {
        steps,
        eval_samples: 20,
        ..Default::default()
    }
}

fn base_samples(suite: &Suite, prompt: usize, n: usize, step: u64) -> Vec<Sample> {
    let policy = PolicyState::base(suite);
    generate(suite, &policy.prompts[prompt], prompt, 5, step, 1, n, 0).unwrap()
}

#[test]
fn runs_are_deterministic() {
    let suite = small_suite(1);
    let cfg = short_config(300);
    let a = run(&cfg, &suite, None).unwrap();
    let b = run(&cfg, &suite, None).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.final_policy, b.final_policy);
    assert_eq!(a.events, b.events);
}

#[test]
fn resuming_from_a_checkpoint_replays_exactly() {
    let suite = small_suite(2);
    let cfg = short_config(500);
    let dir = tempfile::tempdir().unwrap();
    let options = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let full = run_with(&cfg, &suite, None, options).unwrap();
    let ckpts = Checkpoint::load_dir(dir.path()).unwrap();
    for from in [200, 300] {
        let tail = resume(&cfg, &suite, None, &ckpts, from, RunOptions::default()).unwrap();
        assert_eq!(tail.records[..], full.records[from as usize..]);
        assert_eq!(tail.final_policy, full.final_policy);
    }
    assert!(resume(&cfg, &suite, None, &ckpts, 150, RunOptions::default()).is_err());
}

#[test]
fn strong_only_runs_never_remove() {
    let suite =
        build_suite_with(6, 8, 3, &[RewardKind::Strong; 4], TestbedParams::default()).unwrap();
    let out = run(&short_config(600), &suite, None).unwrap();
    assert!(out.removals().is_empty());
    assert_eq!(out.final_active, vec![0, 1, 2, 3]);
    assert!(out.records.iter().all(|r| r.hacked == 0));
}

#[test]
fn injected_weak_reward_is_removed_once_then_switches() {
    let suite = small_suite(4);
    let out = run(&short_config(1000), &suite, None).unwrap();
    let removals = out.removals();
    assert_eq!(removals.len(), 1);
    assert_eq!(
        removals[0].decision.flagged_reward,
        Some(suite.weak_indices()[0])
    );
    let switch = out.switch_step().expect("mode switch");
    assert!(switch > removals[0].step);
}

#[test]
fn offline_loss_falls_window_over_window() {
    let suite = small_suite(5);
    let cfg = TrainingConfig {
        mode_schedule: ModeSchedule::Offline,
        active_rewards: Some(suite.strong_indices()),
        ..short_config(500)
    };
    let out = run(&cfg, &suite, None).unwrap();
    let means: Vec<f64> = out
        .records
        .chunks(100)
        .map(|w| w.iter().map(|r| r.loss).sum::<f64>() / w.len() as f64)
        .collect();
    assert!(means.windows(2).all(|p| p[1] < p[0]), "{means:?}");
}

#[test]
fn single_pair_gradient_is_the_chain_rule() {
    let suite = small_suite(6);
    let policy = PolicyState::base(&suite).prompts[0].clone();
    let sample = base_samples(&suite, 0, 1, 0).remove(0);
    let active = [0usize, 1];
    let r = sample.rewards.select(&active).unwrap();
    let target = RewardVector::new(r.values().iter().map(|x| x + 0.5).collect()).unwrap();
    let frontier = extract_frontier("p0000", std::slice::from_ref(&target)).unwrap();
    let update = offline_update(
        &suite,
        0,
        &policy,
        std::slice::from_ref(&sample),
        &frontier,
        &active,
        FrontierMode::Any,
        SinkhornParams::default(),
        false,
    )
    .unwrap();
    assert!(!update.skipped);
    assert_relative_eq!(update.loss, 0.5, max_relative = 1e-12);
    // ∂‖R(z) − f‖²/∂μ = Σ_k 2(R_k − f_k)∇R_k, and ∂z/∂ℓ = η·σ
    let grads = suite.reward_gradient(0, &sample.z);
    let std = policy.std();
    for d in 0..suite.dim {
        let want: f64 = active
            .iter()
            .enumerate()
            .map(|(a, &k)| 2.0 * (r[a] - target[a]) * grads[k][d])
            .sum();
        assert_relative_eq!(
            update.grad_mean[d],
            want,
            max_relative = 1e-9,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            update.grad_log_std[d],
            want * sample.eta[d] * std[d],
            max_relative = 1e-9,
            epsilon = 1e-14
        );
    }
}

#[test]
fn candidates_on_the_frontier_give_no_signal() {
    let suite = small_suite(7);
    let policy = PolicyState::base(&suite).prompts[1].clone();
    let samples = base_samples(&suite, 1, 16, 3);
    let all: Vec<usize> = (0..4).collect();
    let rewards: Vec<RewardVector> = samples.iter().map(|s| s.rewards.clone()).collect();
    let frontier = extract_frontier("p0001", &rewards).unwrap();
    let on: Vec<Sample> = frontier
        .points
        .iter()
        .map(|p| samples.iter().find(|s| &s.rewards == p).unwrap().clone())
        .collect();
    let update = offline_update(
        &suite,
        1,
        &policy,
        &on,
        &frontier,
        &all,
        FrontierMode::Any,
        SinkhornParams::default(),
        false,
    )
    .unwrap();
    assert!(update.skipped);
    assert_eq!(update.loss, 0.0);
    assert!(update
        .grad_mean
        .iter()
        .chain(&update.grad_log_std)
        .all(|g| *g == 0.0));
}

#[test]
fn online_pair_loss_is_the_squared_distance() {
    let suite = small_suite(8);
    let policy = PolicyState::base(&suite).prompts[2].clone();
    let active = [0usize, 1];
    // find a pool of two where one dominates the other
    let pool = base_samples(&suite, 2, 64, 1);
    let (a, b) = (0..pool.len())
        .flat_map(|i| (0..pool.len()).map(move |j| (i, j)))
        .find(|&(i, j)| {
            let (x, y) = (
                pool[i].rewards.select(&active).unwrap(),
                pool[j].rewards.select(&active).unwrap(),
            );
            pgot::pareto::dominates(&x, &y).unwrap()
        })
        .unwrap();
    let pair = vec![pool[a].clone(), pool[b].clone()];
    let update = online_update(
        &suite,
        2,
        &policy,
        &pair,
        &active,
        SinkhornParams::default(),
        true,
    )
    .unwrap();
    let dist: f64 = active
        .iter()
        .map(|&k| (pair[0].rewards[k] - pair[1].rewards[k]).powi(2))
        .sum();
    assert_relative_eq!(update.loss, dist, max_relative = 1e-12);
    assert_eq!(update.plans.len(), 1);
}

#[test]
fn online_aggregate_ignores_worker_partition() {
    let suite = small_suite(9);
    let policy = PolicyState::base(&suite).prompts[3].clone();
    let active: Vec<usize> = suite.strong_indices();
    let four = generate(&suite, &policy, 3, 11, 7, 4, 4, 0).unwrap();
    // the same candidates regrouped: workers in reverse order
    let mut regrouped = Vec::new();
    for chunk in four.chunks(4).rev() {
        regrouped.extend_from_slice(chunk);
    }
    let a = online_update(
        &suite,
        3,
        &policy,
        &four,
        &active,
        SinkhornParams::default(),
        false,
    )
    .unwrap();
    let b = online_update(
        &suite,
        3,
        &policy,
        &regrouped,
        &active,
        SinkhornParams::default(),
        false,
    )
    .unwrap();
    assert_relative_eq!(a.loss, b.loss, max_relative = 1e-12);
    for (x, y) in a
        .grad_mean
        .iter()
        .zip(&b.grad_mean)
        .chain(a.grad_log_std.iter().zip(&b.grad_log_std))
    {
        assert_relative_eq!(*x, *y, max_relative = 1e-10, epsilon = 1e-14);
    }
}

#[test]
fn global_bound_gradient_ignores_the_constant() {
    let suite = small_suite(10);
    let policy = PolicyState::base(&suite).prompts[0].clone();
    let samples = base_samples(&suite, 0, 16, 2);
    let all: Vec<usize> = (0..4).collect();
    let w = [2.0, 3.0, 2.0, 3.0];
    let at = |c| {
        baseline_update(
            &suite,
            0,
            &policy,
            &samples,
            &all,
            Method::GlobalBound,
            &w,
            c,
            None,
        )
        .unwrap()
    };
    let (a, b) = (at(10.0), at(1010.0));
    assert_eq!(a.grad_mean, b.grad_mean);
    assert_eq!(a.grad_log_std, b.grad_log_std);
    assert_relative_eq!(b.loss - a.loss, 1000.0, max_relative = 1e-12);
    // below every achievable sum the loss is negative
    assert!(at(-1e6).loss < 0.0);
}

#[test]
fn separate_constraints_fixed_point() {
    let suite = small_suite(11);
    let policy = PolicyState::base(&suite).prompts[0].clone();
    let samples = base_samples(&suite, 0, 1, 0);
    let all: Vec<usize> = (0..4).collect();
    let bounds = samples[0].rewards.values().to_vec();
    let u = baseline_update(
        &suite,
        0,
        &policy,
        &samples,
        &all,
        Method::SeparateConstraints,
        &[1.0; 4],
        0.0,
        Some(&bounds),
    )
    .unwrap();
    assert_eq!(u.loss, 0.0);
    assert!(u.grad_mean.iter().chain(&u.grad_log_std).all(|g| *g == 0.0));
    let missing = baseline_update(
        &suite,
        0,
        &policy,
        &samples,
        &all,
        Method::SeparateConstraints,
        &[1.0; 4],
        0.0,
        None,
    );
    assert!(missing.is_err());
    let soup = baseline_update(
        &suite,
        0,
        &policy,
        &samples,
        &all,
        Method::RewardSoup,
        &[1.0; 4],
        0.0,
        None,
    );
    assert!(soup.is_err());
}

#[test]
fn precomputed_store_is_valid_and_reproducible() {
    let suite = small_suite(12);
    let policy = PolicyState::base(&suite);
    assert!(precompute_frontiers(&policy, &suite, 1, 0).is_err());
    let store = precompute_frontiers(&policy, &suite, 50, 3).unwrap();
    assert_eq!(store.len(), suite.prompts.len());
    assert!(store.sizes().iter().all(|&q| (1..=50).contains(&q)));
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.json"), dir.path().join("b.json"));
    store.save(&p1).unwrap();
    precompute_frontiers(&policy, &suite, 50, 3)
        .unwrap()
        .save(&p2)
        .unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let loaded = FrontierStore::load(&p1).unwrap();
    for f in loaded.iter() {
        f.validate().unwrap();
    }
    let minimal = precompute_frontiers(&policy, &suite, 2, 3).unwrap();
    assert!(minimal.sizes().iter().all(|&q| (1..=2).contains(&q)));
}

#[test]
fn reward_soup_averages_parameters() {
    let suite = small_suite(13);
    let base = PolicyState::base(&suite);
    let mut shifted = base.clone();
    for p in &mut shifted.prompts {
        p.mean.iter_mut().for_each(|m| *m += 1.0);
    }
    let soup = reward_soup(&[base.clone(), shifted], &[3.0, 1.0]).unwrap();
    for (s, b) in soup.prompts.iter().zip(&base.prompts) {
        for (x, y) in s.mean.iter().zip(&b.mean) {
            assert_relative_eq!(*x, y + 0.25, max_relative = 1e-12);
        }
    }
    assert!(reward_soup(&[base], &[1.0, 1.0]).is_err());
}

#[test]
fn config_rejects_bad_input() {
    assert!(TrainingConfig::from_json(r#"{"learning_rate": 0.1, "bogus": 1}"#).is_err());
    let bad = |c: TrainingConfig| c.validate(4).is_err();
    assert!(bad(TrainingConfig {
        learning_rate: 0.0,
        ..Default::default()
    }));
    assert!(bad(TrainingConfig {
        detect_interval: 0,
        ..Default::default()
    }));
    assert!(bad(TrainingConfig {
        weights: vec![1.0; 3],
        ..Default::default()
    }));
    let cfg = TrainingConfig {
        epsilon: 0.5,
        ..Default::default()
    };
    assert_eq!(TrainingConfig::from_json(&cfg.to_json()).unwrap(), cfg);
}
