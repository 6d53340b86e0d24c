use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn, LevelFilter};
use vlbm::config::{parse_variants, ExperimentConfig};
use vlbm::dataset::{read_dataset, write_dataset, write_text};
use vlbm::harness::{
    evaluate, load_or_generate_data, read_report, report_table, run_experiment_with,
    training_log_csv, write_report, OracleCache,
};
use vlbm::trained::{Checkpoint, Trained};
use vlbm::{Error, Result};
use vlbm_core::env::{behavior_policy_with, collect_dataset};
use vlbm_core::model::{export_latents, Variant};

/// Latent branching models for off-policy evaluation on synthetic control
/// tasks.
#[derive(Parser)]
#[command(name = "vlbm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Training flags shared by `train` and `ope`.
#[derive(Args, Clone)]
struct TrainFlags {
    /// Offline dataset (.traj.jsonl).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect an offline dataset with a noisy behavioral controller.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        env: Option<String>,
        /// Position gain of the behavioral controller.
        #[arg(long, default_value_t = 1.0)]
        policy_gain: f64,
        /// Std of the exploration noise added to each action.
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long)]
        n_traj: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one variant and write its checkpoint and training log.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        out_checkpoint: PathBuf,
    },
    /// Estimate the target policies' returns with a trained checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episodes per policy.
        #[arg(long)]
        episodes: Option<usize>,
        /// CSV output; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full study: train, estimate and score every variant and seed.
    Ope {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
        /// Comma-separated variant names, or `all`.
        #[arg(long)]
        variant: Option<String>,
        /// Comma-separated position gains of the target policies.
        #[arg(long)]
        policies: Option<String>,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write every trained checkpoint.
        #[arg(long)]
        save_checkpoints: bool,
    },
    /// Print the median metrics of a finished study.
    Report {
        #[command(flatten)]
        common: Common,
        /// `report.json` or the directory containing it.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write encoder means of every visited state as CSV.
    ExportLatents {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// One or more datasets; rows are tagged with each dataset's policy.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_logging() {
    let level = match std::env::var("VLBM_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("debug") => LevelFilter::Debug,
        Ok("info") | Err(_) => LevelFilter::Info,
        Ok(other) => {
            eprintln!("VLBM_LOG={other} not recognized; using info");
            LevelFilter::Info
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Usage(format!("bad {what} `{x}`")))
        })
        .collect()
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    ExperimentConfig::load_or_default(common.config.as_deref())
}

fn apply_train_flags(cfg: &mut ExperimentConfig, f: &TrainFlags) {
    if let Some(d) = &f.data {
        cfg.data = Some(d.clone());
    }
    if let Some(v) = f.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = f.lr {
        cfg.lr = v;
    }
    if let Some(v) = f.batch_size {
        cfg.batch_size = v;
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn gen_data(
    common: Common,
    env: Option<String>,
    gain: f64,
    noise: f64,
    n_traj: Option<usize>,
    out: PathBuf,
) -> Result<()> {
    let mut cfg = load_config(&common)?;
    if let Some(e) = env {
        cfg.env = e;
    }
    if let Some(n) = n_traj {
        cfg.n_traj = n;
    }
    let seed = common.seed.unwrap_or(cfg.data_seed);
    let env = cfg.env_spec()?;
    if !(noise >= 0.0) || !gain.is_finite() {
        return Err(Error::Usage(
            "noise must be nonnegative and the gain finite".into(),
        ));
    }
    if cfg.n_traj == 0 {
        return Err(Error::Usage("--n-traj must be at least 1".into()));
    }
    let data = collect_dataset(
        &env,
        &behavior_policy_with(&env, gain, noise),
        cfg.n_traj,
        seed,
    )?;
    write_dataset(&out, &data)?;
    println!(
        "{} trajectories, mean length {}, mean return {}",
        data.trajectories.len(),
        data.mean_length(),
        data.mean_return(cfg.gamma)
    );
    Ok(())
}

fn single_variant(cfg: &ExperimentConfig, flag: Option<&str>) -> Result<Variant> {
    let vs = match flag {
        Some(s) => parse_variants(s)?,
        None => cfg.variants.clone(),
    };
    match vs.as_slice() {
        [v] => Ok(*v),
        _ => Err(Error::Usage("train takes exactly one variant".into())),
    }
}

fn train_cmd(
    common: Common,
    flags: TrainFlags,
    variant: Option<String>,
    out: PathBuf,
) -> Result<()> {
    let mut cfg = load_config(&common)?;
    apply_train_flags(&mut cfg, &flags);
    let variant = single_variant(&cfg, variant.as_deref())?;
    cfg.variants = vec![variant];
    let seed = common.seed.or(cfg.seeds.first().copied()).unwrap_or(0);
    cfg.seeds = vec![seed];
    cfg.validate()?;
    let data = load_or_generate_data(&cfg)?;
    let (model, logs) = Trained::fit(variant, &cfg, &data, seed)?;
    let ck = Checkpoint::new(variant, seed, &cfg, model);
    ck.save(&out)?;
    write_text(&sibling(&out, "training_log.csv"), &training_log_csv(&logs))?;
    write_text(&sibling(&out, "config.json"), &cfg.to_json())?;
    info!("wrote {}", out.display());
    Ok(())
}

fn eval_cmd(
    common: Common,
    checkpoint: PathBuf,
    episodes: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let ck = Checkpoint::load(&checkpoint)?;
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ck.meta.config.clone(),
    };
    if let Some(e) = episodes {
        cfg.eval_episodes = e;
    }
    cfg.validate()?;
    let env = cfg.env_spec()?;
    if env.state_dim != ck.meta.normalizer.state_mean.len() {
        return Err(Error::Usage(format!(
            "checkpoint does not fit environment {}",
            env.id()
        )));
    }
    let seed = common.seed.unwrap_or(ck.meta.seed);
    let est = evaluate(&ck.model, &cfg, seed)?;
    let mut csv = String::from("policy,gain,estimate,std_err,mean_length\n");
    for ((p, g), e) in cfg
        .target_policies(&env)
        .iter()
        .zip(&cfg.policies)
        .zip(&est)
    {
        csv.push_str(&format!(
            "{},{g},{},{},{}\n",
            p.name, e.estimate, e.std_err, e.mean_length
        ));
    }
    match out {
        Some(path) => {
            write_text(&path, &csv)?;
            write_text(&sibling(&path, "config.json"), &cfg.to_json())
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn ope_cmd(
    common: Common,
    flags: TrainFlags,
    variant: Option<String>,
    policies: Option<String>,
    seeds: Option<String>,
    out: PathBuf,
    save_checkpoints: bool,
) -> Result<()> {
    let mut cfg = load_config(&common)?;
    apply_train_flags(&mut cfg, &flags);
    if let Some(v) = variant {
        cfg.variants = parse_variants(&v)?;
    }
    if let Some(p) = policies {
        cfg.policies = parse_list(&p, "policy gain")?;
    }
    match (seeds, common.seed) {
        (Some(s), _) => cfg.seeds = parse_list(&s, "seed")?,
        (None, Some(s)) => cfg.seeds = vec![s],
        (None, None) => {}
    }
    cfg.validate()?;
    let data = load_or_generate_data(&cfg)?;
    write_text(&out.join("config.json"), &cfg.to_json())?;
    let cache_path = cfg
        .oracle_cache
        .clone()
        .unwrap_or_else(|| out.join("oracle_cache.json"));
    let mut cache = OracleCache::open(&cache_path)?;
    let report = run_experiment_with(&cfg, &data, &mut cache, |variant, run| {
        let dir = out
            .join("runs")
            .join(format!("{}-seed{}", variant.name(), run.report.seed));
        write_text(&dir.join("training_log.csv"), &training_log_csv(&run.logs))?;
        if save_checkpoints {
            run.checkpoint.save(&dir.join("checkpoint.json"))?;
        }
        Ok(())
    })?;
    write_report(&out, &report)?;
    print!("{}", report_table(&report));
    Ok(())
}

fn report_cmd(path: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let path = if path.is_dir() {
        path.join("report.json")
    } else {
        path
    };
    let table = report_table(&read_report(&path)?);
    match out {
        Some(o) => write_text(&o, &table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn export_cmd(checkpoint: PathBuf, data: Vec<PathBuf>, out: PathBuf) -> Result<()> {
    let ck = Checkpoint::load(&checkpoint)?;
    let model = match &ck.model {
        Trained::Single(m) => m,
        Trained::Ensemble(ms) => {
            warn!("classic ensemble: exporting the latent space of its first model");
            &ms[0]
        }
        Trained::Ar(_) => {
            return Err(Error::Usage(format!(
                "{} checkpoints have no latent space",
                Variant::ArEnsemble
            )));
        }
    };
    let sets = data
        .iter()
        .map(|p| read_dataset(p))
        .collect::<Result<Vec<_>>>()?;
    let items: Vec<(&str, _)> = sets
        .iter()
        .flat_map(|d| d.trajectories.iter().map(move |t| (d.policy.as_str(), t)))
        .collect();
    let table = export_latents(model, &items)?;
    write_text(&out, &table.to_csv())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            env,
            policy_gain,
            noise,
            n_traj,
            out,
        } => gen_data(common, env, policy_gain, noise, n_traj, out),
        Command::Train {
            common,
            flags,
            variant,
            out_checkpoint,
        } => train_cmd(common, flags, variant, out_checkpoint),
        Command::Eval {
            common,
            checkpoint,
            episodes,
            out,
        } => eval_cmd(common, checkpoint, episodes, out),
        Command::Ope {
            common,
            flags,
            variant,
            policies,
            seeds,
            out,
            save_checkpoints,
        } => ope_cmd(
            common,
            flags,
            variant,
            policies,
            seeds,
            out,
            save_checkpoints,
        ),
        Command::Report {
            common,
            report,
            out,
        } => {
            load_config(&common)?;
            report_cmd(report, out)
        }
        Command::ExportLatents {
            common,
            checkpoint,
            data,
            out,
        } => {
            load_config(&common)?;
            export_cmd(checkpoint, data, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
