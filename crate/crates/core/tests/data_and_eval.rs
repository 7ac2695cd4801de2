use glmdp::envs::{behavior_policy, generate_dataset, EnvSpec, Environment, RewardFamily, TabularEnvSpec};
use glmdp::eval::{cross_validate_c, evaluate_rule, mc_policy_value, step_importance_sampling, CvOptions};
use glmdp::policy::{EpsilonGreedy, Greedy, UniformPolicy};
use glmdp::solver::{solve_gpevi, GpeviConfig};
use glmdp::TrajectoryDataset;
use proptest::prelude::*;

#[test]
fn generated_data_round_trips_through_csv() {
    for family in [RewardFamily::Binomial, RewardFamily::Beta, RewardFamily::Gaussian] {
        let env = EnvSpec::new(5, 3, 4, family, 3).unwrap();
        let data = generate_dataset(&env, &UniformPolicy { n_actions: 3 }, 30, 12, 9).unwrap();
        let text = data.to_csv_string().unwrap();
        let back = TrajectoryDataset::read_csv(text.as_bytes(), 4, 3).unwrap();
        assert_eq!(back, data);
        assert_eq!(back.n_unlabeled(), 12);
    }
}

#[test]
fn generated_episodes_respect_the_environment() {
    let env = EnvSpec::new(4, 2, 5, RewardFamily::Beta, 8).unwrap();
    let data = generate_dataset(&env, &UniformPolicy { n_actions: 2 }, 50, 0, 1).unwrap();
    for ep in data.episodes() {
        assert_eq!(ep.len(), 5);
        for w in ep.windows(2) {
            assert_eq!(w[0].next_state, w[1].state);
        }
        for s in ep {
            assert!(s.action < 2);
            assert!(s.state.iter().all(|v| (-0.5..=0.5).contains(v)));
            let r = s.reward.unwrap();
            assert!(r > 0.0 && r < 1.0);
        }
    }
}

#[test]
fn episodes_do_not_depend_on_dataset_size() {
    let env = EnvSpec::new(3, 2, 3, RewardFamily::Gaussian, 4).unwrap();
    let policy = UniformPolicy { n_actions: 2 };
    let small = generate_dataset(&env, &policy, 10, 0, 77).unwrap();
    let large = generate_dataset(&env, &policy, 25, 5, 77).unwrap();
    assert_eq!(small.episodes(), &large.episodes()[..10]);
    let other = generate_dataset(&env, &policy, 10, 0, 78).unwrap();
    assert_ne!(small.episodes(), other.episodes());
}

#[test]
fn unlabeled_episodes_share_trajectories_with_labeled_ones() {
    let env = EnvSpec::new(3, 2, 3, RewardFamily::Binomial, 4).unwrap();
    let policy = UniformPolicy { n_actions: 2 };
    let labeled = generate_dataset(&env, &policy, 10, 0, 5).unwrap();
    let mixed = generate_dataset(&env, &policy, 4, 6, 5).unwrap();
    for (a, b) in labeled.episodes().iter().zip(mixed.episodes()).skip(4) {
        for (x, y) in a.iter().zip(b) {
            assert_eq!((&x.state, x.action, &x.next_state), (&y.state, y.action, &y.next_state));
            assert!(y.reward.is_none());
        }
    }
}

#[test]
fn step_is_recovers_exact_tabular_value() {
    let spec = TabularEnvSpec::random(4, 2, 3, 5).unwrap();
    let dp = spec.exact_dp();
    let behavior = behavior_policy(&dp.policy).unwrap();
    let target = EpsilonGreedy::new(&dp.policy, 0.5).unwrap();
    let exact = spec.initial_value(&spec.evaluate_policy(&target).unwrap()[0]);
    let data = generate_dataset(&spec, &behavior, 20_000, 0, 6).unwrap();
    let est = step_importance_sampling(&data, &target, &behavior).unwrap();
    assert!((est.value - exact).abs() < 4.0 * est.std_error, "{} ± {} vs {exact}", est.value, est.std_error);
}

#[test]
fn greedy_step_is_recovers_exact_tabular_value() {
    let spec = TabularEnvSpec::random(3, 3, 2, 7).unwrap();
    let dp = spec.exact_dp();
    let behavior = EpsilonGreedy::new(&dp.policy, 0.6).unwrap();
    let exact = spec.initial_value(&dp.v[0]);
    let data = generate_dataset(&spec, &behavior, 20_000, 0, 8).unwrap();
    let est = evaluate_rule(&data, &dp.policy, &behavior, None).unwrap();
    assert!((est.value - exact).abs() < 4.0 * est.std_error, "{} ± {} vs {exact}", est.value, est.std_error);
}

#[test]
fn monte_carlo_value_matches_exact_value() {
    let spec = TabularEnvSpec::random(5, 2, 4, 9).unwrap();
    let dp = spec.exact_dp();
    let exact = spec.initial_value(&dp.v[0]);
    let est = mc_policy_value(&spec, &Greedy(&dp.policy), 20_000, 10).unwrap();
    assert!((est.value - exact).abs() < 4.0 * est.std_error.max(1e-12));
}

#[test]
fn cross_validation_is_reproducible_and_picks_from_grid() {
    let env = EnvSpec::new(3, 2, 3, RewardFamily::Binomial, 12).unwrap();
    let behavior = UniformPolicy { n_actions: 2 };
    let data = generate_dataset(&env, &behavior, 120, 0, 13).unwrap();
    let grid = [0.01, 0.001, 0.0];
    let fit = |train: &TrajectoryDataset, c: f64| {
        solve_gpevi(train, &GpeviConfig::new(env.link(), env.features(), c)).map(|r| r.policy)
    };
    let a = cross_validate_c(&data, &grid, &behavior, &CvOptions::new(14), fit).unwrap();
    let b = cross_validate_c(&data, &grid, &behavior, &CvOptions::new(14), fit).unwrap();
    assert_eq!(a.chosen_c, b.chosen_c);
    assert_eq!(a.scores.len(), 3);
    assert!(grid.contains(&a.chosen_c));
    let best = a.scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.scores.iter().find(|s| s.0 == a.chosen_c).unwrap().1, best);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn target_equal_to_behavior_gives_mean_return(seed in 0u64..10_000, eps in 0.05f64..1.0) {
        let spec = TabularEnvSpec::random(3, 2, 3, seed).unwrap();
        let dp = spec.exact_dp();
        let behavior = EpsilonGreedy::new(&dp.policy, eps).unwrap();
        let data = generate_dataset(&spec, &behavior, 40, 0, seed).unwrap();
        let est = step_importance_sampling(&data, &behavior, &behavior).unwrap();
        let mean: f64 = data
            .episodes()
            .iter()
            .map(|ep| ep.iter().map(|s| s.reward.unwrap()).sum::<f64>())
            .sum::<f64>()
            / 40.0;
        prop_assert!((est.value - mean).abs() < 1e-12);
    }

    #[test]
    fn continuous_states_stay_in_proposal_cube(seed in 0u64..10_000, d in 2usize..6, a in 2usize..4) {
        let env = EnvSpec::new(d, a, 3, RewardFamily::Gaussian, seed).unwrap();
        prop_assert_eq!(env.state_dim(), d);
        let data = generate_dataset(&env, &UniformPolicy { n_actions: a }, 5, 0, seed).unwrap();
        for ep in data.episodes() {
            for s in ep {
                prop_assert!(s.next_state.iter().all(|v| (-0.5..=0.5).contains(v)));
            }
        }
    }
}
