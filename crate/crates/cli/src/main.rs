//! `dyndecomp`: generate data, discover action groups, train and compare
//! decomposed world models, and run model-based control.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{load_section, resolve, CliResult, Flags};

#[derive(Parser)]
#[command(name = "dyndecomp", version, about = "Action-space dynamics decomposition experiments")]
struct Cli {
    /// JSON settings file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed. For `bench` and `mbrl` this runs that single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect random-policy episodes into a JSONL dataset.
    GenData(GenDataFlags),
    /// Partition the action dimensions of a dataset.
    Cluster(ClusterFlags),
    /// Train one world model on a dataset.
    Train(TrainFlags),
    /// Compare models under the expanding-dataset protocol.
    Bench(BenchFlags),
    /// Model-based control with MPC over a learned model.
    Mbrl(MbrlFlags),
    /// Summarize a bench or mbrl output directory.
    Report(ReportFlags),
}

#[derive(Args)]
struct GenDataFlags {
    /// Preset name.
    #[arg(long)]
    env: Option<String>,
    /// Environment spec JSON, instead of a preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct ClusterFlags {
    #[arg(long)]
    data: Option<PathBuf>,
    /// cl, cd, prior:PATH or random:K
    #[arg(long)]
    method: Option<String>,
    /// Merge threshold.
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<f64>,
}

#[derive(Args)]
struct ShapeFlags {
    /// nonrecurrent or recurrent
    #[arg(long)]
    kernel_kind: Option<String>,
    #[arg(long)]
    latent_width: Option<usize>,
    #[arg(long)]
    kernel_hidden: Option<usize>,
    #[arg(long)]
    decoder_hidden: Option<usize>,
    /// tanh, relu or identity
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    reward_weight: Option<f64>,
}

impl ShapeFlags {
    fn put(&self, f: &mut Flags, prefix: &'static str) {
        let k = |s: &str| format!("{prefix}{s}");
        f.put(k("model.kernel_kind"), &self.kernel_kind)
            .put(k("model.latent_width"), &self.latent_width)
            .put(k("model.kernel_hidden"), &self.kernel_hidden)
            .put(k("model.decoder_hidden"), &self.decoder_hidden)
            .put(k("model.activation"), &self.activation)
            .put(k("train.batch"), &self.batch)
            .put(k("train.lr"), &self.lr)
            .put(k("train.seq_len"), &self.seq_len)
            .put(k("train.reward_weight"), &self.reward_weight);
    }
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Partition JSON for the d2p layout.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// d2p, monolithic or ensemble:K
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    /// Resize the kernels to about this many parameters.
    #[arg(long)]
    param_target: Option<usize>,
    #[command(flatten)]
    shape: ShapeFlags,
}

#[derive(Args)]
struct BenchFlags {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated model list, e.g. clustered,monolithic,ensemble:2
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    steps_per_stage: Option<usize>,
    #[arg(long)]
    eval_split: Option<f64>,
    #[arg(long)]
    rollout_horizon: Option<usize>,
    /// Match parameter counts to the first model.
    #[arg(long)]
    match_params: Option<bool>,
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    shape: ShapeFlags,
}

#[derive(Args)]
struct MbrlFlags {
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Also run MPC on the true dynamics.
    #[arg(long)]
    oracle: Option<bool>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    initial_episodes: Option<usize>,
    #[arg(long)]
    episodes_per_iteration: Option<usize>,
    #[arg(long)]
    train_steps: Option<usize>,
    /// clustered, complete, prior:PATH, random:K or monolithic
    #[arg(long)]
    partition: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<f64>,
    #[arg(long)]
    param_target: Option<usize>,
    /// cem or random_shooting
    #[arg(long)]
    planner: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    population: Option<usize>,
    /// Defaults to a tenth of --population when that flag is given.
    #[arg(long)]
    elites: Option<usize>,
    #[arg(long)]
    cem_iterations: Option<usize>,
    #[command(flatten)]
    shape: ShapeFlags,
}

#[derive(Args)]
struct ReportFlags {
    /// Output directory of a previous bench or mbrl run.
    run: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = cli.config.as_deref();
    let mut f = Flags::default();
    f.put("out", &cli.out);
    match cli.command {
        Command::GenData(a) => {
            f.put("seed", &cli.seed).put("env", &a.env).put("spec", &a.spec).put("episodes", &a.episodes);
            commands::gen_data(&resolve(load_section(cfg, "gen-data")?, f)?)
        }
        Command::Cluster(a) => {
            f.put("seed", &cli.seed).put("data", &a.data).put("method", &a.method).put("eta", &a.eta);
            commands::cluster(&resolve(load_section(cfg, "cluster")?, f)?)
        }
        Command::Train(a) => {
            f.put("seed", &cli.seed)
                .put("data", &a.data)
                .put("partition", &a.partition)
                .put("layout", &a.layout)
                .put("train.steps", &a.steps)
                .put("param_target", &a.param_target);
            a.shape.put(&mut f, "");
            commands::train(&resolve(load_section(cfg, "train")?, f)?)
        }
        Command::Bench(a) => {
            f.put("seeds", &cli.seed.map(|s| vec![s]))
                .put("data", &a.data)
                .put("models", &a.models)
                .put("stages", &a.stages)
                .put("steps_per_stage", &a.steps_per_stage)
                .put("eval_split", &a.eval_split)
                .put("rollout_horizon", &a.rollout_horizon)
                .put("match_params", &a.match_params)
                .put("eta", &a.eta)
                .put("seeds", &a.seeds);
            a.shape.put(&mut f, "");
            commands::bench(&resolve(load_section(cfg, "bench")?, f)?)
        }
        Command::Mbrl(a) => {
            f.put("seeds", &cli.seed.map(|s| vec![s]))
                .put("env", &a.env)
                .put("spec", &a.spec)
                .put("seeds", &a.seeds)
                .put("oracle", &a.oracle)
                .put("loop.outer_iterations", &a.iterations)
                .put("loop.initial_episodes", &a.initial_episodes)
                .put("loop.episodes_per_iteration", &a.episodes_per_iteration)
                .put("loop.train_steps_per_iteration", &a.train_steps)
                .put("loop.partition", &a.partition)
                .put("loop.eta", &a.eta)
                .put("loop.param_target", &a.param_target)
                .put("loop.planner.mode", &a.planner)
                .put("loop.planner.horizon", &a.horizon)
                .put("loop.planner.population", &a.population)
                .put("loop.planner.elites", &a.elites.or(a.population.map(|p| (p / 10).max(1))))
                .put("loop.planner.iterations", &a.cem_iterations);
            a.shape.put(&mut f, "loop.");
            commands::mbrl(&resolve(load_section(cfg, "mbrl")?, f)?)
        }
        Command::Report(a) => {
            f.put("run", &a.run);
            commands::report(&resolve(load_section(cfg, "report")?, f)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
