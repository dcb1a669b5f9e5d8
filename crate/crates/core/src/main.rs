use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use msur::grid::{parse_shape, InputBox, NodePlacement, RegularGrid};
use msur::harness::{compare_strategies, prepare_model, run_experiment, write_run, Experiment, ExperimentConfig, Strategy};
use msur::simulator::ReferenceMap;

#[derive(Parser)]
#[command(name = "msur", version, about = "Multi-fidelity SUR benchmark on the stochastic oscillator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Quadrature / reference grid, e.g. 50x50.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reference map (defaults to <out>/reference.csv).
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// `sl:<dt>` or `msur`; required for run and audit unless set by --config.
    #[arg(long)]
    strategy: Option<String>,
    /// Required unless set by --config.
    #[arg(long)]
    budget: Option<f64>,
    /// Number of repetitions.
    #[arg(long)]
    reps: Option<usize>,
    /// Candidates per level and iteration.
    #[arg(long)]
    candidates: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo reference probability map.
    Reference {
        #[command(flatten)]
        common: Common,
        /// Replications per node.
        #[arg(long)]
        reps: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Pilot noise table and frozen hyper-parameters.
    Pilot {
        #[command(flatten)]
        common: Common,
    },
    /// Run one strategy.
    Run(RunArgs),
    /// Run every listed strategy and write mean error curves.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated strategies (default: the configured one).
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        /// Points on the common cost axis.
        #[arg(long, default_value_t = 101)]
        axis: usize,
    },
    /// Run one strategy and dump per-candidate criterion tables.
    Audit(RunArgs),
}

fn base_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(g) = &common.grid {
        cfg.grid = parse_shape(g)?;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(r) = &common.reference {
        cfg.reference = Some(r.clone());
    }
    Ok(cfg)
}

fn run_config(args: &RunArgs, need_strategy: bool) -> Result<ExperimentConfig> {
    if args.common.config.is_none() {
        if need_strategy && args.strategy.is_none() {
            bail!("--strategy is required without --config");
        }
        if args.budget.is_none() {
            bail!("--budget is required without --config");
        }
    }
    let mut cfg = base_config(&args.common)?;
    if let Some(s) = &args.strategy {
        cfg.strategy = s.parse()?;
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    if let Some(r) = args.reps {
        cfg.repetitions = r;
    }
    if let Some(c) = args.candidates {
        cfg.candidates_per_level = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Reference { common, reps, dt } => {
            let mut cfg = base_config(&common)?;
            if let Some(r) = reps {
                cfg.reference_run.reps = r;
            }
            if let Some(d) = dt {
                cfg.reference_run.dt = d;
            }
            cfg.validate()?;
            let grid = RegularGrid::new(InputBox::oscillator(), cfg.grid, NodePlacement::Midpoint)?;
            let map = ReferenceMap::compute(&cfg.oscillator, &grid, cfg.reference_run.dt, cfg.threshold.z_crit, cfg.reference_run.reps, cfg.seed)?;
            let path = cfg.reference_path();
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            map.write_csv(&path)?;
            println!("global probability {:.4} ± {:.4} -> {}", map.global_probability(), map.global_stderr(), path.display());
        }
        Command::Pilot { common } => {
            let cfg = base_config(&common)?;
            cfg.validate()?;
            let model = prepare_model(&cfg)?;
            std::fs::create_dir_all(&cfg.out)?;
            model.noise_table()?.write_csv(&cfg.out.join("noise.csv"))?;
            let path = cfg.model_path();
            model.save(&path)?;
            println!("kernel {:?} -> {}", model.kernel, path.display());
        }
        Command::Run(args) => run_one(run_config(&args, true)?, false)?,
        Command::Audit(args) => run_one(run_config(&args, true)?, true)?,
        Command::Compare { run, strategies, axis } => {
            let cfg = run_config(&run, strategies.is_empty())?;
            let list: Vec<Strategy> = if strategies.is_empty() {
                vec![cfg.strategy]
            } else {
                strategies.iter().map(|s| s.parse()).collect::<msur::Result<_>>()?
            };
            if list.is_empty() {
                bail!("no strategies to compare");
            }
            let exp = Experiment::from_config(cfg)?;
            let mut runs = Vec::new();
            for s in list {
                let r = exp.run(s, false)?;
                write_run(&exp.config().out, &exp.config().fidelities, &r)?;
                runs.push(r);
            }
            let cmp = compare_strategies(&runs, axis)?;
            cmp.write(&exp.config().out)?;
            for s in &cmp.summary {
                println!("{:>8}  final RMSE P {:.4e}  p {:.4e}  points {:.1}", s.strategy, s.final_rmse_global, s.final_rmse_p, s.mean_sequential_points);
            }
            if let Some(t) = cmp.best_single_level {
                println!("best single level: dt = {t}");
            }
        }
    }
    Ok(())
}

fn run_one(mut cfg: ExperimentConfig, audit: bool) -> Result<()> {
    cfg.audit |= audit;
    let out = run_experiment(cfg)?;
    let d = &out.diagnostics;
    println!("{}: {} selections, {} saturated, {} gain violations", out.strategy, d.selections, d.saturated, d.gain_violations);
    Ok(())
}
