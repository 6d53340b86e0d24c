use vlbm_core::autodiff::{Tape, Tensor};
use vlbm_core::env::{behavior_policy, collect_dataset, target_policies, EnvSpec};
use vlbm_core::model::{
    mix_gaussian, rollout, rollout_ensemble, train, LatentModel, ModelConfig, ModelKind,
    Normalizer, RolloutConfig, TrainConfig,
};
use vlbm_core::nn::{DiagGaussian, RngStream};

#[test]
fn identical_members_shrink_variance_by_member_count() {
    let b = 4;
    let mut tape = Tape::new();
    let head = DiagGaussian {
        mean: tape.leaf(Tensor::row(&[0.3, -1.2])),
        var: tape.leaf(Tensor::row(&[2.0, 0.5])),
    };
    let w = tape.leaf(Tensor::full(1, b, 1.0 / b as f64));
    let mixed = mix_gaussian(&mut tape, &vec![head; b], w).unwrap();
    let (m, v) = (
        tape.value(mixed.mean).clone(),
        tape.value(mixed.var).clone(),
    );
    for j in 0..2 {
        assert!((m.data[j] - tape.value(head.mean).data[j]).abs() < 1e-15);
        assert!((v.data[j] - tape.value(head.var).data[j] / b as f64).abs() < 1e-15);
    }
}

#[test]
fn trained_model_rollouts_are_reproducible() {
    let env = EnvSpec::line_mass();
    let data = collect_dataset(&env, &behavior_policy(&env), 8, 2).unwrap();
    let mut cfg = ModelConfig::new(ModelKind::VlmRsa, 2, 1);
    cfg.latent_dim = 3;
    cfg.recurrent_dim = 6;
    cfg.dense_dim = 6;
    cfg.mlp_hidden = vec![8];
    let tc = TrainConfig {
        max_iter: 10,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let models: Vec<LatentModel> = (0..2)
        .map(|s| {
            let mut m = LatentModel::new(cfg.clone(), Normalizer::fit(&data), s).unwrap();
            train(&mut m, &data, &tc, &mut RngStream::new(10 + s)).unwrap();
            m
        })
        .collect();
    let rc = RolloutConfig {
        episodes: 5,
        ..RolloutConfig::default()
    };
    let policy = &target_policies(&env)[4];
    let a = rollout_ensemble(&models, policy, &rc, &mut RngStream::new(3)).unwrap();
    let b = rollout_ensemble(&models, policy, &rc, &mut RngStream::new(3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.returns.len(), 5);
    assert!((a.estimate - a.returns.iter().sum::<f64>() / 5.0).abs() < 1e-12);
    // A one-model ensemble weighs its model by exactly 1; the model's own
    // gate gives 1 / (1 + eps), hence the tolerance.
    let single = rollout(&models[0], policy, &rc, &mut RngStream::new(3)).unwrap();
    let one = rollout_ensemble(&models[..1], policy, &rc, &mut RngStream::new(3)).unwrap();
    assert_eq!(single.lengths, one.lengths);
    for (x, y) in single.returns.iter().zip(&one.returns) {
        assert!((x - y).abs() < 1e-6 * x.abs(), "{x} vs {y}");
    }
}
