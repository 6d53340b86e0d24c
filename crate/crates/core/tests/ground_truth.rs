use proptest::prelude::*;
use vlbm_core::env::{
    behavior_policy, collect_dataset, divergent_policy, oracle_return, target_policies, EnvKind,
    EnvSpec, TARGET_GAINS,
};

#[test]
fn gain_sweep_rises_then_degrades() {
    let env = EnvSpec::line_mass();
    let truths: Vec<_> = target_policies(&env)
        .iter()
        .map(|p| oracle_return(&env, p, 1000, 0.995, 12345).unwrap())
        .collect();
    let peak = (0..truths.len())
        .max_by(|&a, &b| truths[a].mean.total_cmp(&truths[b].mean))
        .unwrap();
    assert!(
        peak > 0 && peak < truths.len() - 1,
        "peak at the sweep's edge: {peak}"
    );
    for i in 1..truths.len() {
        let (a, b) = (&truths[i - 1], &truths[i]);
        let gap = if i <= peak {
            b.mean - a.mean
        } else {
            a.mean - b.mean
        };
        // Neighbouring policies are separated by more than their noise.
        let noise = 2.0 * (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
        assert!(
            gap > noise,
            "gains {} -> {}: gap {gap} vs noise {noise}",
            TARGET_GAINS[i - 1],
            TARGET_GAINS[i]
        );
    }
}

#[test]
fn divergent_policy_terminates_early_on_the_cliff() {
    let env = EnvSpec::cliff_mass();
    let o = oracle_return(&env, &divergent_policy(&env, 0.3, 0.1), 200, 0.995, 1).unwrap();
    assert!(o.mean_length < env.horizon as f64);
    let line = EnvSpec::line_mass();
    let o = oracle_return(&line, &divergent_policy(&line, 0.3, 0.1), 20, 0.995, 1).unwrap();
    assert_eq!(o.mean_length, line.horizon as f64);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_data_respects_bounds(seed in 0u64..1_000_000, kind in 0usize..3) {
        let kind = [EnvKind::LineMass, EnvKind::Swirl2D, EnvKind::CliffMass][kind];
        let env = EnvSpec::from_kind(kind);
        let data = collect_dataset(&env, &behavior_policy(&env), 4, seed).unwrap();
        for t in &data.trajectories {
            t.validate().unwrap();
            prop_assert!(t.len() <= env.horizon);
            prop_assert!(t.rewards.iter().all(|r| *r <= 0.0));
            prop_assert!(t.actions.iter().flatten().all(|a| (-1.0..=1.0).contains(a)));
            prop_assert_eq!(t.terminated, env.violates(t.states.last().unwrap()));
            if kind != EnvKind::CliffMass {
                prop_assert_eq!(t.len(), env.horizon);
            }
        }
        prop_assert_eq!(data, collect_dataset(&env, &behavior_policy(&env), 4, seed).unwrap());
    }
}
