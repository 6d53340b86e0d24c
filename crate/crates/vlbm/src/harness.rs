//! Experiment driver: train each variant per seed, estimate every target
//! policy, and score the estimates against cached Monte-Carlo truths.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use vlbm_core::env::{
    behavior_policy, collect_dataset, oracle_return, Dataset, EnvSpec, LinearGaussianPolicy,
    OracleEstimate,
};
use vlbm_core::metrics::{mae, regret_at_1, spearman};
use vlbm_core::model::{RolloutResult, TrainLog, Variant};

use crate::config::ExperimentConfig;
use crate::dataset::{read_dataset, write_text};
use crate::error::{Error, Result};
use crate::trained::{Checkpoint, Trained};

/// Ground-truth returns persisted across runs, keyed by
/// `env|policy|gamma|episodes|seed`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleCache {
    pub entries: BTreeMap<String, OracleEstimate>,
    path: Option<PathBuf>,
    dirty: bool,
}

impl OracleCache {
    /// In-memory cache that is never written.
    pub fn in_memory() -> Self {
        OracleCache::default()
    }

    /// Cache backed by `path`; a missing file starts empty.
    pub fn open(path: &Path) -> Result<Self> {
        let entries = match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::format(path, e))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(Error::io(path, e)),
        };
        Ok(OracleCache {
            entries,
            path: Some(path.to_path_buf()),
            dirty: false,
        })
    }

    pub fn key(
        env: &EnvSpec,
        policy: &LinearGaussianPolicy,
        gamma: f64,
        episodes: usize,
        seed: u64,
    ) -> String {
        format!("{}|{}|{gamma}|{episodes}|{seed}", env.id(), policy.name)
    }

    /// Cached truth, computed on demand.
    pub fn get(
        &mut self,
        env: &EnvSpec,
        policy: &LinearGaussianPolicy,
        gamma: f64,
        episodes: usize,
        seed: u64,
    ) -> Result<OracleEstimate> {
        let key = Self::key(env, policy, gamma, episodes, seed);
        if let Some(v) = self.entries.get(&key) {
            return Ok(*v);
        }
        info!("computing oracle return for {}", policy.name);
        let v = oracle_return(env, policy, episodes, gamma, seed)?;
        self.entries.insert(key, v);
        self.dirty = true;
        Ok(v)
    }

    /// Writes the cache back if anything was added.
    pub fn persist(&mut self) -> Result<()> {
        if let (Some(path), true) = (&self.path, self.dirty) {
            let mut s = serde_json::to_string_pretty(&self.entries).expect("cache serializes");
            s.push('\n');
            write_text(path, &s)?;
            self.dirty = false;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTruth {
    pub name: String,
    pub gain: f64,
    pub true_return: f64,
    pub true_std_err: f64,
    pub true_mean_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEstimate {
    pub estimate: f64,
    pub std_err: f64,
    pub mean_length: f64,
}

impl PolicyEstimate {
    pub fn from_rollout(r: &RolloutResult) -> Self {
        let n = r.returns.len() as f64;
        let std_err = if r.returns.len() > 1 {
            let var = r
                .returns
                .iter()
                .map(|x| (x - r.estimate).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        PolicyEstimate {
            estimate: r.estimate,
            std_err,
            mean_length: r.lengths.iter().sum::<usize>() as f64 / n,
        }
    }
}

/// Scores of one estimate vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// `None` when either vector is constant.
    pub rank_corr: Option<f64>,
    pub regret_raw: f64,
    pub regret_norm: f64,
    pub mae: f64,
}

impl Scores {
    pub fn compute(est: &[f64], truth: &[f64]) -> Result<Self> {
        let rank_corr = if est.len() >= 2 {
            spearman(est, truth)?
        } else {
            None
        };
        let (regret_raw, regret_norm) = regret_at_1(est, truth)?;
        Ok(Scores {
            rank_corr,
            regret_raw,
            regret_norm,
            mae: mae(est, truth)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub estimates: Vec<PolicyEstimate>,
    pub scores: Scores,
    pub branch_weights: Vec<f64>,
    pub final_objective: Option<f64>,
}

/// Median over seeds; `rank_corr` ignores seeds where it is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rank_corr: Option<f64>,
    pub regret_raw: f64,
    pub regret_norm: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub seeds: Vec<SeedReport>,
    pub mean: Aggregate,
    pub median: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub env: String,
    pub gamma: f64,
    pub eval_episodes: usize,
    pub oracle_episodes: usize,
    pub policies: Vec<PolicyTruth>,
    pub variants: Vec<VariantReport>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

fn mean(v: Vec<f64>) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate(seeds: &[SeedReport], f: fn(Vec<f64>) -> Option<f64>) -> Aggregate {
    let pick =
        |g: &dyn Fn(&Scores) -> Option<f64>| f(seeds.iter().filter_map(|s| g(&s.scores)).collect());
    Aggregate {
        rank_corr: pick(&|s| s.rank_corr),
        regret_raw: pick(&|s| Some(s.regret_raw)).unwrap_or(0.0),
        regret_norm: pick(&|s| Some(s.regret_norm)).unwrap_or(0.0),
        mae: pick(&|s| Some(s.mae)).unwrap_or(0.0),
    }
}

/// Dataset named by the config, or a freshly generated behavioral one.
pub fn load_or_generate_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let env = cfg.env_spec()?;
    let data = match &cfg.data {
        Some(path) => read_dataset(path)?,
        None => collect_dataset(&env, &behavior_policy(&env), cfg.n_traj, cfg.data_seed)?,
    };
    if data.env != env.id() {
        return Err(Error::Usage(format!(
            "dataset is from `{}` but the config names `{}`",
            data.env,
            env.id()
        )));
    }
    if data.trajectories.is_empty() {
        return Err(vlbm_core::Error::EmptyDataset.into());
    }
    Ok(data)
}

/// Ground truth for the configured target policies.
pub fn truths(cfg: &ExperimentConfig, cache: &mut OracleCache) -> Result<Vec<PolicyTruth>> {
    let env = cfg.env_spec()?;
    let out = cfg
        .target_policies(&env)
        .iter()
        .zip(&cfg.policies)
        .map(|(p, &gain)| {
            let o = cache.get(&env, p, cfg.gamma, cfg.oracle_episodes, cfg.oracle_seed)?;
            Ok(PolicyTruth {
                name: p.name.clone(),
                gain,
                true_return: o.mean,
                true_std_err: o.std_err,
                true_mean_length: o.mean_length,
            })
        })
        .collect::<Result<Vec<_>>>();
    cache.persist()?;
    out
}

/// Estimates of every configured target policy under one trained model.
pub fn evaluate(model: &Trained, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<PolicyEstimate>> {
    let env = cfg.env_spec()?;
    let rc = cfg.rollout_config(&env);
    cfg.target_policies(&env)
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(PolicyEstimate::from_rollout(
                &model.estimate(p, i, &rc, seed)?,
            ))
        })
        .collect()
}

/// Everything one (variant, seed) run produces.
pub struct SeedRun {
    pub report: SeedReport,
    pub checkpoint: Checkpoint,
    pub logs: Vec<Vec<TrainLog>>,
}

pub fn run_seed(
    variant: Variant,
    cfg: &ExperimentConfig,
    data: &Dataset,
    truth: &[f64],
    seed: u64,
) -> Result<SeedRun> {
    let wrap = |e: Error| Error::Seed {
        seed,
        variant: variant.name().into(),
        source: Box::new(e),
    };
    info!("training {variant} with seed {seed}");
    let (model, logs) = Trained::fit(variant, cfg, data, seed).map_err(wrap)?;
    let estimates = evaluate(&model, cfg, seed).map_err(wrap)?;
    let est: Vec<f64> = estimates.iter().map(|e| e.estimate).collect();
    let scores = Scores::compute(&est, truth).map_err(wrap)?;
    let report = SeedReport {
        seed,
        estimates,
        scores,
        branch_weights: model.branch_weights(),
        final_objective: logs.last().and_then(|l| l.last()).map(|l| l.objective),
    };
    Ok(SeedRun {
        report,
        checkpoint: Checkpoint::new(variant, seed, cfg, model),
        logs,
    })
}

/// Trains and scores every configured variant and seed.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &Dataset,
    cache: &mut OracleCache,
) -> Result<MetricsReport> {
    run_experiment_with(cfg, data, cache, |_, _| Ok(()))
}

/// [`run_experiment`], handing every finished run to `on_run` (for example
/// to save checkpoints and training logs).
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    data: &Dataset,
    cache: &mut OracleCache,
    mut on_run: impl FnMut(Variant, &SeedRun) -> Result<()>,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let policies = truths(cfg, cache)?;
    let truth: Vec<f64> = policies.iter().map(|p| p.true_return).collect();
    let mut variants = Vec::new();
    for &variant in &cfg.variants {
        let seeds = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let run = run_seed(variant, cfg, data, &truth, seed)?;
                on_run(variant, &run)?;
                Ok(run.report)
            })
            .collect::<Result<Vec<_>>>()?;
        variants.push(VariantReport {
            variant,
            mean: aggregate(&seeds, mean),
            median: aggregate(&seeds, median),
            seeds,
        });
    }
    Ok(MetricsReport {
        env: cfg.env.clone(),
        gamma: cfg.gamma,
        eval_episodes: cfg.eval_episodes,
        oracle_episodes: cfg.oracle_episodes,
        policies,
        variants,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `summary.csv`: one row per variant and seed.
pub fn summary_csv(r: &MetricsReport) -> String {
    let mut s = String::from("variant,seed,rank_corr,regret_raw,regret_norm,mae\n");
    for v in &r.variants {
        for sr in &v.seeds {
            let c = &sr.scores;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                v.variant,
                sr.seed,
                opt(c.rank_corr),
                c.regret_raw,
                c.regret_norm,
                c.mae
            );
        }
    }
    s
}

/// `branch_weights.csv`: learned weights of every branched or gated run.
pub fn branch_weights_csv(r: &MetricsReport) -> String {
    let mut s = String::from("variant,seed,branch,weight\n");
    for v in r
        .variants
        .iter()
        .filter(|v| matches!(v.variant, Variant::Vlbm | Variant::ArEnsemble))
    {
        for sr in &v.seeds {
            for (b, w) in sr.branch_weights.iter().enumerate() {
                let _ = writeln!(s, "{},{},{b},{w}", v.variant, sr.seed);
            }
        }
    }
    s
}

/// `estimates.csv`: true and estimated return of every policy per run.
pub fn estimates_csv(r: &MetricsReport) -> String {
    let mut s = String::from("variant,seed,policy,gain,true_return,estimate,std_err\n");
    for v in &r.variants {
        for sr in &v.seeds {
            for (p, e) in r.policies.iter().zip(&sr.estimates) {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    v.variant, sr.seed, p.name, p.gain, p.true_return, e.estimate, e.std_err
                );
            }
        }
    }
    s
}

/// Human-readable median table of a report.
pub fn report_table(r: &MetricsReport) -> String {
    let mut s = format!(
        "{} ({} policies, gamma {})\n",
        r.env,
        r.policies.len(),
        r.gamma
    );
    let _ = writeln!(
        s,
        "{:<18} {:>9} {:>11} {:>12} {:>9}",
        "variant", "rank_corr", "regret_norm", "regret_raw", "mae"
    );
    for v in &r.variants {
        let m = &v.median;
        let rc = m
            .rank_corr
            .map_or_else(|| "-".into(), |x| format!("{x:.3}"));
        let _ = writeln!(
            s,
            "{:<18} {rc:>9} {:>11.3} {:>12.3} {:>9.3}",
            v.variant.name(),
            m.regret_norm,
            m.regret_raw,
            m.mae
        );
    }
    s
}

pub fn write_report(dir: &Path, r: &MetricsReport) -> Result<()> {
    let mut json = serde_json::to_string_pretty(r).expect("report serializes");
    json.push('\n');
    write_text(&dir.join("report.json"), &json)?;
    write_text(&dir.join("summary.csv"), &summary_csv(r))?;
    write_text(&dir.join("branch_weights.csv"), &branch_weights_csv(r))?;
    write_text(&dir.join("estimates.csv"), &estimates_csv(r))
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// `training_log.csv` rows; a `model` column appears when several models
/// were trained independently.
pub fn training_log_csv(logs: &[Vec<TrainLog>]) -> String {
    let multi = logs.len() > 1;
    let mut s = String::from(if multi {
        "model,iter,objective,lr\n"
    } else {
        "iter,objective,lr\n"
    });
    for (k, log) in logs.iter().enumerate() {
        for l in log {
            if multi {
                let _ = write!(s, "{k},");
            }
            let _ = writeln!(s, "{},{},{}", l.iter, l.objective, l.lr);
        }
    }
    s
}
