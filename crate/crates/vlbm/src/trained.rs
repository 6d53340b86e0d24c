//! Training every variant, rolling it out, and the checkpoint format.

use std::collections::BTreeMap;
use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};
use vlbm_core::ar::{ar_rollout, ar_train, ArConfig, ArEnsemble};
use vlbm_core::autodiff::Tensor;
use vlbm_core::env::{Dataset, LinearGaussianPolicy};
use vlbm_core::model::{
    rollout, rollout_ensemble, train, LatentModel, ModelConfig, Normalizer, RolloutConfig,
    RolloutResult, TrainLog, Variant,
};
use vlbm_core::nn::{ParamStore, RngStream};

use crate::config::ExperimentConfig;
use crate::dataset::write_text;
use crate::error::{Error, Result};

/// A trained estimator of any variant.
#[derive(Debug, Clone)]
pub enum Trained {
    Single(LatentModel),
    /// Independently trained models averaged end to end.
    Ensemble(Vec<LatentModel>),
    Ar(ArEnsemble),
}

/// Stream ids forked off a run seed.
const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

impl Trained {
    /// Untrained parameters for `variant`, initialized from `seed`.
    pub fn init(
        variant: Variant,
        cfg: &ExperimentConfig,
        data: &Dataset,
        seed: u64,
    ) -> Result<Self> {
        if data.trajectories.is_empty() {
            return Err(vlbm_core::Error::EmptyDataset.into());
        }
        let (ds, da) = (data.state_dim(), data.action_dim());
        let norm = Normalizer::fit(data);
        Ok(match variant {
            Variant::ArEnsemble => {
                Trained::Ar(ArEnsemble::for_dataset(cfg.ar_config(ds, da)?, data, seed)?)
            }
            Variant::VlmRsaEnsemble => {
                let mc = cfg.model_config(variant, ds, da)?;
                let root = RngStream::new(seed);
                let models = (0..cfg.branches)
                    .map(|k| {
                        LatentModel::new(mc.clone(), norm.clone(), root.fork(k as u64).next_u64())
                    })
                    .collect::<vlbm_core::Result<Vec<_>>>()?;
                Trained::Ensemble(models)
            }
            _ => Trained::Single(LatentModel::new(
                cfg.model_config(variant, ds, da)?,
                norm,
                seed,
            )?),
        })
    }

    /// Initializes and trains `variant`. Returns one log per trained model.
    pub fn fit(
        variant: Variant,
        cfg: &ExperimentConfig,
        data: &Dataset,
        seed: u64,
    ) -> Result<(Self, Vec<Vec<TrainLog>>)> {
        let mut model = Trained::init(variant, cfg, data, seed)?;
        let tc = cfg.train_config();
        let rng = RngStream::new(seed).fork(TRAIN_STREAM);
        let logs = match &mut model {
            Trained::Single(m) => vec![train(m, data, &tc, &mut rng.clone())?],
            Trained::Ar(m) => vec![ar_train(m, data, &tc, &mut rng.clone())?],
            Trained::Ensemble(ms) => ms
                .iter_mut()
                .enumerate()
                .map(|(k, m)| {
                    debug!("training ensemble member {k}");
                    train(m, data, &tc, &mut rng.fork(k as u64))
                })
                .collect::<vlbm_core::Result<Vec<_>>>()?,
        };
        if let Some(last) = logs.last().and_then(|l| l.last()) {
            info!(
                "{variant} seed {seed}: final objective {:.4}",
                last.objective
            );
        }
        Ok((model, logs))
    }

    /// Estimated return of `policy`; policy `index` gets its own stream of
    /// the run seed, so estimates do not depend on evaluation order.
    pub fn estimate(
        &self,
        policy: &LinearGaussianPolicy,
        index: usize,
        rc: &RolloutConfig,
        seed: u64,
    ) -> Result<RolloutResult> {
        let mut rng = RngStream::new(seed).fork(EVAL_STREAM).fork(index as u64);
        Ok(match self {
            Trained::Single(m) => rollout(m, policy, rc, &mut rng)?,
            Trained::Ensemble(ms) => rollout_ensemble(ms, policy, rc, &mut rng)?,
            Trained::Ar(m) => ar_rollout(m, policy, rc, &mut rng)?,
        })
    }

    /// Learned mixture weights: decoder branches, AR members, or the
    /// uniform weights of the classic ensemble.
    pub fn branch_weights(&self) -> Vec<f64> {
        match self {
            Trained::Single(m) => m.branch_weights(),
            Trained::Ensemble(ms) => vec![1.0 / ms.len() as f64; ms.len()],
            Trained::Ar(m) => m.branch_weights(),
        }
    }
}

/// Checkpoint metadata; everything except the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub variant: Variant,
    pub seed: u64,
    /// Number of branches, ensemble models or AR members.
    pub branches: usize,
    pub branch_weights: Vec<f64>,
    pub normalizer: Normalizer,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ar: Option<ArConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub initial_states: Option<Vec<Vec<f64>>>,
    /// The experiment configuration the model was trained with.
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    meta: CheckpointMeta,
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Trained,
}

fn insert_store(out: &mut BTreeMap<String, Tensor>, prefix: &str, store: &ParamStore) {
    for (name, t) in store.names().iter().zip(store.tensors()) {
        out.insert(format!("{prefix}{name}"), t.clone());
    }
}

/// Copies named tensors into a store laid out like `template`.
fn fill_store(
    template: &ParamStore,
    prefix: &str,
    tensors: &BTreeMap<String, Tensor>,
    path: &Path,
) -> Result<ParamStore> {
    let mut store = template.clone();
    for (i, name) in template.names().iter().enumerate() {
        let key = format!("{prefix}{name}");
        let t = tensors
            .get(&key)
            .ok_or_else(|| Error::format(path, format!("missing tensor `{key}`")))?;
        if t.shape != template.tensors()[i].shape || t.data.len() != t.numel() {
            return Err(Error::format(
                path,
                format!("tensor `{key}` has shape {:?}", t.shape),
            ));
        }
        store.tensors_mut()[i] = t.clone();
    }
    Ok(store)
}

fn member_prefix(k: usize) -> String {
    format!("model{k}/")
}

impl Checkpoint {
    pub fn new(variant: Variant, seed: u64, config: &ExperimentConfig, model: Trained) -> Self {
        let (normalizer, mc, ar, init, branches) = match &model {
            Trained::Single(m) => (
                m.normalizer.clone(),
                Some(m.config.clone()),
                None,
                None,
                m.num_branches(),
            ),
            Trained::Ensemble(ms) => (
                ms[0].normalizer.clone(),
                Some(ms[0].config.clone()),
                None,
                None,
                ms.len(),
            ),
            Trained::Ar(m) => (
                m.normalizer.clone(),
                None,
                Some(m.config.clone()),
                Some(m.initial_states.clone()),
                m.config.members,
            ),
        };
        Checkpoint {
            meta: CheckpointMeta {
                variant,
                seed,
                branches,
                branch_weights: model.branch_weights(),
                normalizer,
                model: mc,
                ar,
                initial_states: init,
                config: config.clone(),
            },
            model,
        }
    }

    pub fn to_json(&self) -> String {
        let mut tensors = BTreeMap::new();
        match &self.model {
            Trained::Single(m) => insert_store(&mut tensors, "", &m.store),
            Trained::Ensemble(ms) => {
                for (k, m) in ms.iter().enumerate() {
                    insert_store(&mut tensors, &member_prefix(k), &m.store);
                }
            }
            Trained::Ar(m) => insert_store(&mut tensors, "", &m.store),
        }
        let file = CheckpointFile {
            meta: self.meta.clone(),
            tensors,
        };
        let mut s = serde_json::to_string(&file).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::format(path, e))?;
        let meta = file.meta;
        let missing = |what: &str| Error::format(path, format!("checkpoint meta lacks `{what}`"));
        let model = match meta.variant {
            Variant::ArEnsemble => {
                let cfg = meta.ar.clone().ok_or_else(|| missing("ar"))?;
                let init = meta
                    .initial_states
                    .clone()
                    .ok_or_else(|| missing("initial_states"))?;
                let template =
                    ArEnsemble::new(cfg.clone(), meta.normalizer.clone(), init.clone(), 0)?;
                let store = fill_store(&template.store, "", &file.tensors, path)?;
                Trained::Ar(ArEnsemble::from_store(
                    cfg,
                    meta.normalizer.clone(),
                    init,
                    store,
                )?)
            }
            v => {
                let mc = meta.model.clone().ok_or_else(|| missing("model"))?;
                let template = LatentModel::new(mc.clone(), meta.normalizer.clone(), 0)?;
                let load = |prefix: &str| -> Result<LatentModel> {
                    let store = fill_store(&template.store, prefix, &file.tensors, path)?;
                    Ok(LatentModel::from_store(
                        mc.clone(),
                        meta.normalizer.clone(),
                        store,
                    )?)
                };
                if v == Variant::VlmRsaEnsemble {
                    Trained::Ensemble(
                        (0..meta.branches)
                            .map(|k| load(&member_prefix(k)))
                            .collect::<Result<_>>()?,
                    )
                } else {
                    Trained::Single(load("")?)
                }
            }
        };
        Ok(Checkpoint { meta, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text, path)
    }
}
