use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ccdtwin::config::ExperimentConfig;
use ccdtwin::lifecycle::{self, deploy_name, gen_name, Comparison, Registry, Scenario, CONFIG_FILE, REGISTRY_DIR};
use ccdtwin::report::write_report;
use ccdtwin::{CcdError, Result};

#[derive(Parser)]
#[command(name = "ccdtwin", version, about = "Multi-generation control co-design with a digital twin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlantKind {
    Illustrative,
    Suspension,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML). Without it, the configuration stored
    /// in the run's registry is used, or the --plant defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in defaults to start from when no configuration is given.
    #[arg(long, value_enum)]
    plant: Option<PlantKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, env = "CCDTWIN_OUT", default_value = "runs")]
    out: PathBuf,
    /// Rollout worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Validate and print the effective configuration; write nothing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Label feasible states with the constrained controller and pretrain the networks.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Co-design a generation: 1 on the nominal model, later ones on the corrected model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        generation: usize,
    },
    /// Deploy a generation on the truth plant and record residuals.
    Deploy {
        #[command(flatten)]
        common: Common,
        /// Defaults to the latest generation.
        #[arg(long)]
        generation: Option<usize>,
    },
    /// Fit the quantile discrepancy model to a deployment's residuals.
    FitUq {
        #[command(flatten)]
        common: Common,
        /// Defaults to the latest deployment.
        #[arg(long)]
        generation: Option<usize>,
    },
    /// Run (or resume) the full multi-generation loop and write the report.
    Lifecycle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generations: Option<usize>,
        /// Run step 0 as well when the registry has no pretrained entry.
        #[arg(long)]
        from_scratch: bool,
    },
    /// Compare generations on the truth plant.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Last generation to include; defaults to the latest.
        #[arg(long)]
        upto: Option<usize>,
    },
    /// Write tables, histories, trajectories and charts from the registry.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Pretrain { common }
            | Command::Train { common, .. }
            | Command::Deploy { common, .. }
            | Command::FitUq { common, .. }
            | Command::Lifecycle { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Report { common } => common,
        }
    }
}

fn registry_root(out: &Path) -> PathBuf {
    out.join(REGISTRY_DIR)
}

fn effective_config(c: &Common) -> Result<ExperimentConfig> {
    let stored = registry_root(&c.out).join(gen_name(0)).join(CONFIG_FILE);
    let mut cfg = if let Some(path) = &c.config {
        ExperimentConfig::load(path)?
    } else if stored.exists() {
        ExperimentConfig::load(&stored)?
    } else {
        match c.plant {
            Some(PlantKind::Illustrative) => ExperimentConfig::illustrative(),
            Some(PlantKind::Suspension) => ExperimentConfig::suspension(),
            None => {
                return Err(CcdError::Config(format!(
                    "no configuration: pass --config or --plant, or point --out at an existing run ({} not found)",
                    stored.display()
                )))
            }
        }
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn latest(reg: &Registry, name: fn(usize) -> String) -> Option<usize> {
    (0..).take_while(|g| reg.contains(&name(*g))).last()
}

fn print_comparison(cmp: &Comparison) {
    for g in &cmp.generations {
        println!(
            "{:<8} truth return {:>12.4} ± {:<10.4} design {:?}",
            g.name, g.mean, g.std, g.design
        );
    }
}

fn run(cli: Cli) -> Result<i32> {
    let common = cli.command.common().clone();
    if let Command::Report { .. } = cli.command {
        if common.dry_run {
            Registry::open(&registry_root(&common.out))?;
            return Ok(0);
        }
        let reg = Registry::open(&registry_root(&common.out))?;
        let summary = write_report(&reg, &common.out)?;
        println!("report written to {}", summary.dir.display());
        for (file, reason) in &summary.missing {
            println!("MISSING {file}: {reason}");
        }
        return Ok(if summary.is_complete() { 0 } else { 3 });
    }

    let cfg = effective_config(&common)?;
    if common.dry_run {
        print!("{}", cfg.to_toml()?);
        return Ok(0);
    }
    let root = registry_root(&common.out);
    if let Command::Lifecycle { from_scratch: false, .. } = cli.command {
        let pretrained = Registry::open(&root).map(|r| r.contains(&gen_name(0))).unwrap_or(false);
        if !pretrained {
            return Err(CcdError::Incomplete(format!(
                "{} has no pretrained entry; run `ccdtwin pretrain` or pass --from-scratch",
                root.display()
            )));
        }
    }
    let sc = Scenario::build(&cfg)?;
    let mut reg = Registry::open_or_create(&root)?;
    let effective = common.out.join(CONFIG_FILE);
    std::fs::write(&effective, cfg.to_toml()?).map_err(|e| CcdError::io(&effective, e))?;

    match cli.command {
        Command::Pretrain { .. } => {
            let e = lifecycle::run_step0(&sc, &mut reg)?;
            println!("{} committed ({})", e.name, e.manifest_sha256);
        }
        Command::Train { generation, .. } => {
            let e = match generation {
                0 => return Err(CcdError::Config("generation 0 is produced by `pretrain`".into())),
                1 => lifecycle::run_step1(&sc, &mut reg)?,
                g => lifecycle::run_step3(&sc, &mut reg, g - 1)?,
            };
            println!("{} committed ({})", e.name, e.manifest_sha256);
        }
        Command::Deploy { generation, .. } => {
            let g = generation
                .or_else(|| latest(&reg, gen_name).filter(|g| *g >= 1))
                .ok_or_else(|| CcdError::Incomplete("no trained generation to deploy".into()))?;
            let e = lifecycle::run_deploy(&sc, &mut reg, g)?;
            println!("{} committed ({})", e.name, e.manifest_sha256);
        }
        Command::FitUq { generation, .. } => {
            let g = generation
                .or_else(|| latest(&reg, deploy_name))
                .ok_or_else(|| CcdError::Incomplete("no deployment to fit".into()))?;
            let e = lifecycle::run_fit(&sc, &mut reg, g)?;
            println!("{} committed ({})", e.name, e.manifest_sha256);
        }
        Command::Lifecycle { generations, .. } => {
            let n = generations.unwrap_or(cfg.lifecycle.generations);
            let cmp = lifecycle::run_lifecycle(&sc, &mut reg, n)?;
            print_comparison(&cmp);
            let summary = write_report(&reg, &common.out)?;
            println!("report written to {}", summary.dir.display());
        }
        Command::Evaluate { upto, .. } => {
            let g = upto
                .or_else(|| latest(&reg, gen_name).filter(|g| *g >= 1))
                .ok_or_else(|| CcdError::Incomplete("no trained generation to evaluate".into()))?;
            let (_, cmp) = lifecycle::run_evaluation(&sc, &mut reg, g)?;
            print_comparison(&cmp);
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
