use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hypertax::config::{Override, RunConfig};
use hypertax::error::Error;
use hypertax::pipeline::{run_eval, run_predict, run_train, CHECKPOINT_FILE};
use hypertax::synthetic::{generate, SyntheticSpec};
use hypertax::taxonomy::SplitKind;

const SEED_ENV: &str = "HYPERTAX_SEED";

#[derive(Parser, Debug)]
#[command(name = "hypertax", version, about = "Taxonomy expansion with hyperbolic graph neural networks")]
struct Cli {
    /// Log verbosity: -v for debug, -vv for trace.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a random feature-correlated tree taxonomy.
    GenSynthetic(GenArgs),
    /// Train on a taxonomy and write a checkpoint plus run artifacts.
    Train(Box<TrainArgs>),
    /// Rank seed-taxonomy parents for new concepts.
    Predict(PredictArgs),
    /// Score held-out queries from a split manifest.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_nodes: usize,
    #[arg(long, default_value_t = 3)]
    branching: usize,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generic override, `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,

    #[arg(long, help_heading = "Data")]
    taxonomy: Option<String>,
    #[arg(long, help_heading = "Data")]
    concepts: Option<String>,
    #[arg(long, help_heading = "Data")]
    embeddings: Option<String>,
    /// euclidean | poincare-product
    #[arg(long, help_heading = "Data")]
    geometry: Option<String>,
    #[arg(long, help_heading = "Data")]
    factor_dim: Option<i64>,
    #[arg(long, help_heading = "Data")]
    out_dir: Option<String>,
    #[arg(long, help_heading = "Data")]
    n_val: Option<i64>,
    #[arg(long, help_heading = "Data")]
    n_test: Option<i64>,

    /// lorentz | poincare | euclidean
    #[arg(long, help_heading = "Model")]
    manifold: Option<String>,
    #[arg(long, help_heading = "Model")]
    n_layers: Option<i64>,
    #[arg(long, help_heading = "Model")]
    hidden_dim: Option<i64>,
    #[arg(long, help_heading = "Model")]
    rel_pos_dim: Option<i64>,
    #[arg(long, help_heading = "Model")]
    abs_pos_dim: Option<i64>,
    #[arg(long, help_heading = "Model")]
    curvature: Option<f64>,
    #[arg(long, help_heading = "Model")]
    trainable_curvature: Option<bool>,
    #[arg(long, help_heading = "Model")]
    ancestors: Option<bool>,
    #[arg(long, help_heading = "Model")]
    descendants: Option<bool>,
    #[arg(long, help_heading = "Model")]
    siblings: Option<bool>,
    #[arg(long, help_heading = "Model")]
    max_hops: Option<i64>,
    #[arg(long, help_heading = "Model")]
    max_depth: Option<i64>,
    #[arg(long, help_heading = "Model")]
    use_rel_pos: Option<bool>,
    #[arg(long, help_heading = "Model")]
    use_abs_pos: Option<bool>,
    /// tangent | coordinate
    #[arg(long, help_heading = "Model")]
    readout: Option<String>,
    #[arg(long, help_heading = "Model")]
    match_layers: Option<i64>,

    #[arg(long, help_heading = "Training")]
    epochs: Option<i64>,
    #[arg(long, help_heading = "Training")]
    batch_size: Option<i64>,
    #[arg(long, help_heading = "Training")]
    n_neg: Option<i64>,
    #[arg(long, help_heading = "Training")]
    lr_burnin: Option<f64>,
    #[arg(long, help_heading = "Training")]
    lr_main: Option<f64>,
    #[arg(long, help_heading = "Training")]
    burn_in: Option<i64>,
    #[arg(long, help_heading = "Training")]
    plateau_patience: Option<i64>,
    #[arg(long, help_heading = "Training")]
    early_stop_patience: Option<i64>,
    /// Gradient norm clip; 0 disables.
    #[arg(long, help_heading = "Training")]
    clip_norm: Option<f64>,
    /// Falls back to HYPERTAX_SEED, then 0.
    #[arg(long, help_heading = "Training")]
    seed: Option<i64>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Concepts TSV of new concepts (`id<TAB>name<TAB>definition`).
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Val,
    Test,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Restrict to one split; all manifest queries otherwise.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
}

impl TrainArgs {
    fn overrides(&self) -> Result<Vec<Override>, Error> {
        let mut out = Vec::new();
        macro_rules! push {
            ($section:literal: $($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    out.push(Override::new($section, stringify!($field), v.clone()));
                })*
            };
        }
        push!("data": taxonomy, concepts, embeddings, geometry, factor_dim, out_dir, n_val, n_test);
        push!(
            "model": manifold, n_layers, hidden_dim, rel_pos_dim, abs_pos_dim, curvature, trainable_curvature,
            ancestors, descendants, siblings, max_hops, max_depth, use_rel_pos, use_abs_pos, readout, match_layers
        );
        push!(
            "train": epochs, batch_size, n_neg, lr_burnin, lr_main, burn_in, plateau_patience,
            early_stop_patience, clip_norm, seed
        );
        for s in &self.set {
            out.push(Override::parse(s)?);
        }
        Ok(out)
    }

    fn resolve(&self) -> Result<RunConfig, Error> {
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?),
            None => None,
        };
        let mut cfg = RunConfig::layered(text.as_deref(), &self.overrides()?)?;
        if cfg.train.seed.is_none() {
            if let Ok(s) = std::env::var(SEED_ENV) {
                let seed = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?;
                cfg.train.seed = Some(seed);
            }
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::NumericDomain(_) | Error::NonFiniteGradient { .. } => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenSynthetic(a) => {
            let data = generate(&SyntheticSpec {
                n_nodes: a.n_nodes,
                branching: a.branching,
                depth: a.depth,
                feature_dim: a.feature_dim,
                noise: a.noise,
                seed: a.seed,
            })?;
            data.write(&a.out)?;
            println!(
                "wrote {} concepts, {} edges to {}",
                data.taxonomy.len(),
                data.taxonomy.n_edges(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let cfg = a.resolve()?;
            let summary = run_train(&cfg, |r| {
                println!("epoch {} loss {:.6} val_mrr_x10 {:.4} lr {:.3e}", r.epoch, r.loss, r.val_mrr_x10, r.lr);
            })?;
            println!(
                "best val_mrr_x10 {:.4} at epoch {}; checkpoint {}",
                summary.best_val_mrr_x10,
                summary.best_epoch,
                summary.out_dir.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Predict(a) => {
            let n = run_predict(&a.checkpoint, &a.queries, &a.out, a.top_k)?;
            println!("ranked {n} queries into {}", a.out.display());
        }
        Command::Eval(a) => {
            let kind = a.split.map(|s| match s {
                SplitArg::Val => SplitKind::Val,
                SplitArg::Test => SplitKind::Test,
            });
            let report = run_eval(&a.checkpoint, &a.manifest, &a.out_dir, kind)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
