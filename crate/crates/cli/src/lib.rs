//! The `vlaforge` command surface. Every subcommand is a plain function so
//! tests can drive the same code the binary runs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vlaforge_core::config::RootConfig;
use vlaforge_core::data::{caption_dataset, generate_store, open_store, store_statistics, Mixture};
use vlaforge_core::eval::{evaluate, ActionSource, EvalReport, PolicySource, StatsTable};
use vlaforge_core::policy::registry_compose;
use vlaforge_core::profiler::{profile_events, profile_records, read_csv, ProfileReport};
use vlaforge_core::trainer::{
    heldout_aux_loss, latest_checkpoint, load_checkpoint, read_events, train_cotrain, train_sft,
    CheckpointTarget, JsonlSink, STATS_FILE,
};
use vlaforge_core::DatasetStatistics;
use vlaforge_server::{resolve_port, serve, ClientOptions, PolicyClient, ServeOptions};

#[derive(Debug, Parser)]
#[command(name = "vlaforge", version, about = "Toy vision-language-action policies: data, training, serving, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Run configuration (YAML).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// `key.path=value`, applied in order after parsing.
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Parent of the per-run directories.
    #[arg(long, default_value = "runs")]
    pub runs_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write oracle-controlled episode stores for `datasets.generate`.
    GenData(ConfigArgs),
    /// Write dataset_statistics.json next to every store in the mixture.
    Stats(ConfigArgs),
    /// Behavior cloning on the configured mixture.
    Train(ConfigArgs),
    /// Behavior cloning plus the auxiliary captioning pass.
    Cotrain(ConfigArgs),
    /// Host a checkpoint over WebSocket until interrupted.
    Serve {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint package, or a directory of `step_*` packages.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        host: Option<String>,
        /// Takes precedence over VLAFORGE_PORT and `serve.port`.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Run the evaluation suite and write an EvalReport.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate the policy in this process.
        #[arg(long, conflicts_with = "addr")]
        in_process: bool,
        /// Address of a running server.
        #[arg(long, required_unless_present = "in_process")]
        addr: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Throughput and scaling tables from a CSV of runs or a trainer event log.
    Profile {
        #[arg(long, conflicts_with = "events", required_unless_present = "events")]
        csv: Option<PathBuf>,
        #[arg(long)]
        events: Option<PathBuf>,
        /// GPU count to attribute to an event log.
        #[arg(long, default_value_t = 1)]
        gpus: u32,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

impl ConfigArgs {
    pub fn new(config: &Path, runs_dir: &Path) -> Self {
        ConfigArgs {
            config: Some(config.to_path_buf()),
            overrides: Vec::new(),
            runs_dir: runs_dir.to_path_buf(),
        }
    }

    pub fn load(&self) -> Result<RootConfig> {
        let path = self.config.as_ref().ok_or_else(|| anyhow!("--config is required"))?;
        RootConfig::load(path, &self.overrides).with_context(|| format!("loading {}", path.display()))
    }

    /// `--config` when given, otherwise the config saved in the checkpoint;
    /// overrides apply either way.
    fn load_or(&self, checkpoint: &Path) -> Result<RootConfig> {
        match &self.config {
            Some(_) => self.load(),
            None => {
                let p = checkpoint.join(vlaforge_core::trainer::CONFIG_FILE);
                RootConfig::load(&p, &self.overrides).with_context(|| format!("loading {}", p.display()))
            }
        }
    }

    pub fn run_dir(&self, cfg: &RootConfig) -> PathBuf {
        self.runs_dir.join(&cfg.name)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            for (name, n) in gen_data(&a.load()?)? {
                println!("wrote {n} episodes to {}", name.display());
            }
        }
        Command::Stats(a) => {
            for p in stats(&a.load()?)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train(a) => {
            let s = train(&a, false)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Cotrain(a) => {
            let s = train(&a, true)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Serve { cfg, checkpoint, host, port } => serve_cmd(&cfg, &checkpoint, host, port)?,
        Command::Eval { cfg, checkpoint, in_process, addr, out } => {
            let target = if in_process { None } else { addr.as_deref() };
            let (report, path) = eval(&cfg, &checkpoint, target, out.as_deref())?;
            println!(
                "{} trials, {:.1}% success, report at {}",
                report.total_trials(),
                report.mean_success_pct,
                path.display()
            );
        }
        Command::Profile { csv, events, gpus, json } => {
            let r = profile(csv.as_deref(), events.as_deref(), gpus)?;
            print!("{}", r.to_text());
            if let Some(p) = json {
                std::fs::write(&p, r.to_json()).with_context(|| format!("writing {}", p.display()))?;
            }
        }
    }
    Ok(())
}

/// Writes every `datasets.generate` store under `data_root`.
pub fn gen_data(cfg: &RootConfig) -> Result<Vec<(PathBuf, usize)>> {
    if cfg.datasets.generate.is_empty() {
        bail!("datasets.generate is empty; nothing to write");
    }
    let root = &cfg.datasets.vla_data.data_root;
    let mut out = Vec::new();
    for (i, g) in cfg.datasets.generate.iter().enumerate() {
        let dir = root.join(&g.name);
        let seed = vlaforge_core::rng::mix(&[cfg.seed_for("gen-data"), i as u64]);
        generate_store(&dir, &g.name, &g.env, g.episodes, seed)
            .with_context(|| format!("generating {}", g.name))?;
        out.push((dir, g.episodes));
    }
    Ok(out)
}

fn mixture_names(cfg: &RootConfig) -> Vec<String> {
    if cfg.datasets.vla_data.data_mix.is_empty() {
        cfg.datasets.generate.iter().map(|g| g.name.clone()).collect()
    } else {
        cfg.datasets.vla_data.data_mix.iter().map(|e| e.name.clone()).collect()
    }
}

/// Computes and writes each store's statistics file.
pub fn stats(cfg: &RootConfig) -> Result<Vec<PathBuf>> {
    let root = &cfg.datasets.vla_data.data_root;
    let mut out = Vec::new();
    for name in mixture_names(cfg) {
        let store = open_store(&root.join(&name)).with_context(|| format!("opening store {name}"))?;
        let s = store_statistics(&store)?;
        let p = store.root().join(STATS_FILE);
        std::fs::write(&p, serde_json::to_string_pretty(&s)?).with_context(|| format!("writing {}", p.display()))?;
        out.push(p);
    }
    Ok(out)
}

pub fn load_mixture(cfg: &RootConfig) -> Result<Mixture> {
    if cfg.datasets.vla_data.data_mix.is_empty() {
        bail!("datasets.vla_data.data_mix is empty");
    }
    let root = &cfg.datasets.vla_data.data_root;
    let mut pool = Vec::new();
    for e in &cfg.datasets.vla_data.data_mix {
        let store = open_store(&root.join(&e.name)).with_context(|| format!("opening store {}", e.name))?;
        pool.push(store.load()?);
    }
    Ok(Mixture::new(cfg.mixture_spec(), pool)?)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub action_loss: f64,
    pub aux_loss: Option<f64>,
    pub heldout_aux_loss: Option<f64>,
}

/// Trains from scratch into `runs/<name>/`: checkpoints under
/// `checkpoints/`, one JSON line per step in `events.jsonl`.
pub fn train(args: &ConfigArgs, cotrain: bool) -> Result<TrainSummary> {
    let cfg = args.load()?;
    let mixture = load_mixture(&cfg)?;
    let run_dir = args.run_dir(&cfg);
    std::fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    let log = run_dir.join("events.jsonl");
    if log.exists() {
        std::fs::remove_file(&log)?;
    }
    let mut sink = JsonlSink::append(&log)?;
    let target = CheckpointTarget {
        dir: run_dir.join("checkpoints"),
        config: cfg.clone(),
    };
    let mut policy = registry_compose(&cfg.model, cfg.seed)?;
    let (outcome, heldout) = if cotrain {
        let a = cfg
            .datasets
            .aux_data
            .as_ref()
            .ok_or_else(|| anyhow!("cotrain needs datasets.aux_data"))?;
        let aux = caption_dataset(&a.env, a.examples, cfg.seed_for("aux_data"))?;
        let held = caption_dataset(&a.env, a.heldout, cfg.seed_for("aux_heldout"))?;
        let o = train_cotrain(&mut policy, &mixture, &aux, &cfg.trainer, cfg.seed, Some(&target), &mut sink)?;
        (o, Some(heldout_aux_loss(&policy, &held)?))
    } else {
        (train_sft(&mut policy, &mixture, &cfg.trainer, cfg.seed, Some(&target), &mut sink)?, None)
    };
    let last = outcome
        .checkpoints
        .last()
        .ok_or_else(|| anyhow!("training wrote no checkpoint"))?;
    let summary = TrainSummary {
        run_dir: run_dir.clone(),
        checkpoint: last.path.clone(),
        steps: outcome.steps,
        action_loss: outcome.last_report.as_ref().map_or(f64::NAN, |r| r.action_loss()),
        aux_loss: outcome.last_aux,
        heldout_aux_loss: heldout,
    };
    std::fs::write(run_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// A package directory, or the newest package inside a checkpoints folder.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join(vlaforge_core::trainer::CONFIG_FILE).exists() {
        Ok(path.to_path_buf())
    } else {
        Ok(latest_checkpoint(path)?)
    }
}

fn serve_cmd(args: &ConfigArgs, checkpoint: &Path, host: Option<String>, port: Option<u16>) -> Result<()> {
    let dir = resolve_checkpoint(checkpoint)?;
    let cfg = args.load_or(&dir)?;
    let ck = load_checkpoint(&dir)?;
    let port = resolve_port(port, cfg.serve.port)?;
    let host = host.unwrap_or(cfg.serve.host.clone());
    let handle = serve(
        ck.policy,
        &format!("{host}:{port}"),
        ServeOptions {
            queue_depth: cfg.serve.queue_depth,
        },
    )?;
    println!(
        "serving {}+{} from {} on {}",
        cfg.model.backbone_id,
        cfg.model.head_id,
        dir.display(),
        handle.url()
    );
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(tokio::signal::ctrl_c())?;
    println!("draining");
    handle.shutdown();
    Ok(())
}

fn eval_stats(cfg: &RootConfig, ck_stats: StatsTable, primary: DatasetStatistics) -> Result<StatsTable> {
    if let Some(p) = &cfg.eval.adapter.statistics_path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let s: DatasetStatistics = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        return Ok(cfg
            .eval
            .suite
            .iter()
            .map(|e| (e.env.embodiment.name().to_string(), s.clone()))
            .collect());
    }
    if !ck_stats.is_empty() {
        return Ok(ck_stats);
    }
    let robot = cfg
        .datasets
        .vla_data
        .data_mix
        .first()
        .map(|e| e.robot_type.clone())
        .ok_or_else(|| anyhow!("checkpoint has no per-embodiment statistics and no data_mix names one"))?;
    Ok([(robot, primary)].into_iter().collect())
}

/// Evaluates a checkpoint in-process (`addr = None`) or through a server,
/// writing the report to `out` or `runs/<name>/eval_report.json`.
pub fn eval(args: &ConfigArgs, checkpoint: &Path, addr: Option<&str>, out: Option<&Path>) -> Result<(EvalReport, PathBuf)> {
    let dir = resolve_checkpoint(checkpoint)?;
    let cfg = args.load_or(&dir)?;
    if cfg.eval.suite.is_empty() {
        bail!("eval.suite is empty");
    }
    let ck = load_checkpoint(&dir)?;
    let stats = eval_stats(&cfg, ck.embodiment_stats, ck.stats)?;
    let seed = cfg.seed_for("eval");
    let report = match addr {
        None => evaluate(&mut PolicySource(&ck.policy), &cfg.eval.suite, &cfg.eval.adapter, &stats, seed)?,
        Some(a) => {
            let mut client = PolicyClient::connect(a, ClientOptions::default())?;
            let info = client.info()?;
            if info.k < cfg.eval.adapter.open_loop_horizon {
                bail!("server predicts {} steps, fewer than open_loop_horizon", info.k);
            }
            let src: &mut dyn ActionSource = &mut client;
            evaluate(src, &cfg.eval.suite, &cfg.eval.adapter, &stats, seed)?
        }
    };
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => args.run_dir(&cfg).join("eval_report.json"),
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
    Ok((report, path))
}

pub fn profile(csv: Option<&Path>, events: Option<&Path>, gpus: u32) -> Result<ProfileReport> {
    match (csv, events) {
        (Some(p), None) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(profile_records(&read_csv(&text)?)?)
        }
        (None, Some(p)) => Ok(profile_events(&read_events(p)?, gpus)?),
        _ => bail!("pass exactly one of --csv or --events"),
    }
}
