//! Command-line front end for the unlearning pipeline.
//!
//! Every subcommand reads one TOML experiment config; the main knobs are
//! overridable with flags. Exit codes: 0 success, 1 config error, 2
//! runtime/numeric error.

use clap::{Args, Parser, Subcommand};
use dampen::dampening::{unlearn, Method};
use dampen::error::Error;
use dampen::harness::{run_experiment, sweep_alpha, ExperimentConfig, ExperimentContext};
use dampen::importance::{
    file_hash, load_importance, save_importance, ImportanceOver, OutputSpace,
};
use dampen::model::{load_checkpoint, save_checkpoint};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dampen", version, about = "Selective synaptic dampening experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,

    /// Override the master seed.
    #[arg(long)]
    master_seed: Option<u64>,

    /// Override unlearn.method (ssd | lfssd).
    #[arg(long)]
    method: Option<String>,

    /// Override unlearn.alpha.
    #[arg(long)]
    alpha: Option<f64>,

    /// Override unlearn.lambda.
    #[arg(long)]
    lambda: Option<f64>,

    /// Override unlearn.output_space (logits | softmax).
    #[arg(long)]
    output_space: Option<String>,

    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::from_toml_path(&self.config)?;
        if let Some(seed) = self.master_seed {
            cfg.master_seed = seed;
        }
        if let Some(method) = &self.method {
            cfg.unlearn.method = parse_method(method)?;
        }
        if let Some(alpha) = self.alpha {
            cfg.unlearn.alpha = alpha;
        }
        if let Some(lambda) = self.lambda {
            cfg.unlearn.lambda = lambda;
        }
        if let Some(space) = &self.output_space {
            cfg.unlearn.output_space = match space.as_str() {
                "logits" => OutputSpace::Logits,
                "softmax" => OutputSpace::Softmax,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown output space '{other}' (expected logits|softmax)"
                    )))
                }
            };
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn parse_method(raw: &str) -> Result<Method, Error> {
    match raw {
        "ssd" => Ok(Method::Ssd),
        "lfssd" => Ok(Method::Lfssd),
        other => Err(Error::InvalidConfig(format!(
            "unknown method '{other}' (expected ssd|lfssd)"
        ))),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline model and write its checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compute an importance vector for a checkpoint and write it.
    Importance {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint to compute importance for.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which rows to cover: full | forget.
        #[arg(long, default_value = "full")]
        over: String,
        /// Output importance file.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Apply selective dampening to a checkpoint and write the result.
    Unlearn {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Persisted full-set importance to reuse (skips the full-set pass).
        #[arg(long)]
        imp_full: Option<PathBuf>,
        /// Output checkpoint.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Report retain/forget/test accuracy for a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the membership inference attack against a checkpoint.
    Mia {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Full pipeline: train, persist, unlearn, baselines, evaluate, report.
    Run {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// One unlearn + evaluation per alpha on a shared checkpoint.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated ascending alpha grid, e.g. 0.5,1,2,5,10.
        #[arg(long)]
        alpha_grid: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests exit 0; usage problems are config errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Train { common } => {
            let cfg = common.load()?;
            let ctx = ExperimentContext::prepare(&cfg)?;
            let theta_init = dampen::model::init_model(&ctx.spec)?;
            let (theta, curve) = dampen::training::train(
                &ctx.spec,
                &theta_init,
                &ctx.train_set,
                &ctx.all_indices(),
                &ctx.config.train_config(),
            )?;
            let dir = output_dir(&ctx)?;
            let path = dir.join("baseline.ckpt");
            save_checkpoint(&ctx.spec, &theta, &path)?;
            println!(
                "trained {} epochs, final loss {:.6}, wrote {}",
                curve.len(),
                curve.last().copied().unwrap_or(f64::NAN),
                path.display()
            );
            Ok(())
        }
        Command::Importance {
            common,
            checkpoint,
            over,
            output,
        } => {
            let cfg = common.load()?;
            let ctx = ExperimentContext::prepare(&cfg)?;
            let (_, theta) = load_checkpoint(&checkpoint)?;
            let (indices, over) = match over.as_str() {
                "full" => (ctx.all_indices(), ImportanceOver::FullSet),
                "forget" => (ctx.split.forget_indices.clone(), ImportanceOver::ForgetSet),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown coverage '{other}' (expected full|forget)"
                    )))
                }
            };
            let imp = ctx.importance(&theta, &indices, over)?;
            save_importance(&imp, &file_hash(&checkpoint)?, &output)?;
            println!(
                "importance over {} samples ({:?}, {:?}) written to {}",
                imp.sample_count,
                imp.source,
                imp.over,
                output.display()
            );
            Ok(())
        }
        Command::Unlearn {
            common,
            checkpoint,
            imp_full,
            output,
        } => {
            let cfg = common.load()?;
            let ctx = ExperimentContext::prepare(&cfg)?;
            let (_, theta) = load_checkpoint(&checkpoint)?;
            let persisted = imp_full.map(|p| load_importance(&p)).transpose()?;
            let (unlearned, report) = unlearn(
                &ctx.spec,
                &theta,
                &ctx.train_set,
                &ctx.split,
                ctx.config.unlearn.method,
                &ctx.config.dampening_config(),
                ctx.label_source,
                ctx.config.unlearn.output_space,
                persisted.as_ref().map(|(imp, _)| imp),
            )?;
            save_checkpoint(&ctx.spec, &unlearned, &output)?;
            println!(
                "dampened {} of {} parameters (mean beta {:.4}), wrote {}",
                report.n_selected(),
                ctx.spec.n_params(),
                report.mean_beta(),
                output.display()
            );
            Ok(())
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = common.load()?;
            let ctx = ExperimentContext::prepare(&cfg)?;
            let (_, theta) = load_checkpoint(&checkpoint)?;
            let eval = ctx.evaluate(&theta)?;
            println!("retain_acc,{}", eval.retain_acc);
            println!("forget_acc,{}", eval.forget_acc);
            println!("test_acc,{}", eval.test_acc);
            println!("mia_score,{}", eval.mia.mia_score);
            Ok(())
        }
        Command::Mia { common, checkpoint } => {
            let cfg = common.load()?;
            let ctx = ExperimentContext::prepare(&cfg)?;
            let (_, theta) = load_checkpoint(&checkpoint)?;
            let eval = ctx.evaluate(&theta)?;
            println!("mia_score,{}", eval.mia.mia_score);
            println!("attack_train_accuracy,{}", eval.mia.attack_train_accuracy);
            println!("threshold_entropy,{}", eval.mia.threshold_entropy);
            println!("degenerate,{}", eval.mia.degenerate);
            Ok(())
        }
        Command::Run { common } => {
            let cfg = common.load()?;
            let report = run_experiment(&cfg)?;
            print!("{}", report.metrics_csv());
            println!("canonical_sha256,{}", report.info.canonical_sha256);
            Ok(())
        }
        Command::Sweep { common, alpha_grid } => {
            let cfg = common.load()?;
            let grid: Vec<f64> = alpha_grid
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad alpha '{s}'")))
                })
                .collect::<Result<_, _>>()?;
            let result = sweep_alpha(&cfg, &grid)?;
            print!("{}", result.to_csv());
            Ok(())
        }
    }
}

fn output_dir(ctx: &ExperimentContext) -> Result<PathBuf, Error> {
    let dir = ctx
        .config
        .output_dir
        .clone()
        .ok_or_else(|| Error::InvalidConfig("no output directory configured (use --out)".into()))?;
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}
