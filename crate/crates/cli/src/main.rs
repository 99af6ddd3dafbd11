use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use trackadapt_core::config::{parse_config, RunConfig};
use trackadapt_core::eval::ScenarioName;
use trackadapt_core::pipeline::{per_cluster_sr, Bundle, Pipeline};

#[derive(Parser)]
#[command(name = "trackadapt", version, about = "Motion tracking and dynamics adaptation for a planar biped")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Environment-step budget for the stage being run.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and cluster the reference motion dataset.
    GenMotions(Common),
    /// Train one specialist per motion cluster.
    TrainSpecialists(Common),
    /// Distill the specialists into a generalist with DAgger.
    Distill(Common),
    /// Fine-tune the generalist under randomized dynamics.
    TrainAdapter {
        #[command(flatten)]
        common: Common,
        /// Base checkpoint; the distilled generalist by default.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Train the plain PPO baseline with the same budget instead of the adapter.
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate one checkpoint on one scenario or all of them.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Evaluate every checkpoint in the output directory and build comparison tables.
    Report(Common),
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn pipeline(common: &Common, apply_budget: impl FnOnce(&mut RunConfig, usize), name: &str) -> Result<Pipeline> {
    let mut cfg = load_config(common)?;
    if let Some(b) = common.budget {
        apply_budget(&mut cfg, b);
    }
    let p = Pipeline::new(cfg)?;
    let snap = p.write_snapshot(name)?;
    log::info!("resolved configuration written to {}", snap.display());
    Ok(p)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenMotions(c) => {
            let p = pipeline(&c, |_, _| {}, "gen-motions")?;
            let ds = p.gen_motions()?;
            log::info!(
                "{} clips in {} clusters (purity {:.2}) written to {}",
                ds.clips.len(),
                ds.k,
                ds.purity(),
                p.dataset_dir().display()
            );
        }
        Command::TrainSpecialists(c) => {
            let p = pipeline(&c, |cfg, b| cfg.specialist.budget_steps = b, "train-specialists")?;
            let ds = p.load_dataset().context("run gen-motions first")?;
            let (_, summary) = p.train_specialists(&ds)?;
            for s in summary {
                log::info!("cluster {} ({:?}): SR {:.1} in {} steps", s.cluster, s.majority_kind, s.best_sr, s.env_steps);
            }
        }
        Command::Distill(c) => {
            let p = pipeline(
                &c,
                |cfg, b| cfg.distill.states_per_iteration = b / cfg.distill.iterations.max(1),
                "distill",
            )?;
            let ds = p.load_dataset().context("run gen-motions first")?;
            let bank = p.load_bank(&ds).context("run train-specialists first")?;
            let out = p.distill(&ds, &bank)?;
            let srs = per_cluster_sr(&p.task, &out.policy, &ds)?;
            log::info!("generalist validation SR {:.1}; per cluster {srs:?}", out.best_sr);
        }
        Command::TrainAdapter { common, bundle, baseline } => {
            let p = pipeline(
                &common,
                |cfg, b| cfg.adapt.budget_steps = b,
                if baseline { "train-baseline" } else { "train-adapter" },
            )?;
            let ds = p.load_dataset().context("run gen-motions first")?;
            let base = match bundle {
                Some(path) => match Bundle::load(&path)? {
                    Bundle::Base(policy) => policy,
                    Bundle::Adapted(_) => bail!("{} already carries an adapter", path.display()),
                },
                None => p.load_generalist().context("run distill first")?,
            };
            if baseline {
                let out = p.train_baseline(&ds, base)?;
                log::info!("baseline: best disturbed validation SR {:.1}", out.best_sr);
            } else {
                let out = p.train_adapter(&ds, base)?;
                log::info!(
                    "adapter: best disturbed validation SR {:.1}; held-out world-model loss {:.4} vs persistence {:.4}",
                    out.best_sr,
                    out.heldout.loss,
                    out.heldout.persistence
                );
            }
        }
        Command::Eval { common, bundle, scenario } => {
            let p = pipeline(&common, |_, _| {}, "eval")?;
            let ds = p.load_dataset().context("run gen-motions first")?;
            let b = Bundle::load(&bundle)?;
            let scenarios = match scenario {
                Some(s) => vec![ScenarioName::parse(&s)?],
                None => p.config.eval.scenarios.clone(),
            };
            let stem = bundle
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "bundle".into());
            for s in scenarios {
                let r = p.evaluate_and_write(&b, &stem, s, &ds)?;
                println!("{s}: SR {:.1}% over {} episodes", r.sr, r.episodes);
            }
        }
        Command::Report(c) => {
            let p = pipeline(&c, |_, _| {}, "report")?;
            let ds = p.load_dataset().context("run gen-motions first")?;
            let cmp = p.report(&ds)?;
            print!("{}", cmp.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
