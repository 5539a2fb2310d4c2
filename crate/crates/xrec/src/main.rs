use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use xrec::config::{Overrides, RunConfig};
use xrec::model::ModelKind;
use xrec::run;
use xrec::train::DistanceKind;

fn parse_model(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

fn parse_distance(s: &str) -> Result<DistanceKind, String> {
    match s {
        "l2" => Ok(DistanceKind::L2),
        "elastic" | "elastic_net" => Ok(DistanceKind::ElasticNet),
        other => Err(format!("unknown distance '{other}' (expected l2 or elastic_net)")),
    }
}

#[derive(Parser)]
#[command(
    name = "xrec",
    version,
    about = "Train, evaluate, and explain contextualized recommenders (NAR, CAR, CNR)"
)]
struct Cli {
    /// JSON run-configuration file; flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed for synthesis, initialization, sampling, and pools.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory artifacts are written into.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct TrainFlags {
    /// Model kind: baseline, nar, car, or cnr.
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    /// Prepared dataset directory (defaults to the output directory).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Negatives sampled per positive when forming ranking triples.
    #[arg(long)]
    negatives: Option<usize>,
    /// L2 budget of adversarial perturbations.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Weight of the perturbed loss next to the clean loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// Weight of the perturbation-distance penalty in counterfactual search.
    #[arg(long)]
    xi: Option<f64>,
    /// Alternation rounds of counterfactual training.
    #[arg(long)]
    outer: Option<usize>,
    /// Distance penalty: l2 or elastic_net.
    #[arg(long, value_parser = parse_distance)]
    distance: Option<DistanceKind>,
    #[arg(long)]
    search_steps: Option<usize>,
    #[arg(long)]
    search_lr: Option<f64>,
    /// Triples searched per alternation round.
    #[arg(long)]
    search_triples: Option<usize>,
    /// Clean-plus-flipped epochs per alternation round.
    #[arg(long)]
    retrain_epochs: Option<usize>,
    /// Identity-embedding dimension.
    #[arg(long)]
    id_dim: Option<usize>,
    /// Word-embedding dimension.
    #[arg(long)]
    word_dim: Option<usize>,
    /// Comma-separated MLP hidden sizes, e.g. 128,64.
    #[arg(long, value_delimiter = ',')]
    mlp_hidden: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic review corpus and prepare it for training.
    Synth {
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
        /// Vocabulary size.
        #[arg(long)]
        features: Option<usize>,
        /// Probability that any (user, item) pair interacts.
        #[arg(long)]
        density: Option<f64>,
        /// Planted preferred words per user.
        #[arg(long)]
        planted: Option<usize>,
        /// Feature-profile words per item.
        #[arg(long)]
        profile: Option<usize>,
        /// Probability an interaction is corrupted.
        #[arg(long)]
        noise: Option<f64>,
        /// Rating ceiling.
        #[arg(long)]
        t_max: Option<u32>,
    },
    /// Parse and split an external interaction file.
    Prepare {
        /// Interaction file: user<TAB>item<TAB>rating<TAB>word:freq:sentiment,...
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Rating ceiling.
        #[arg(long)]
        t_max: Option<u32>,
    },
    /// Train a model on a prepared dataset.
    Train {
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Rank held-out positives against sampled candidate pools.
    Evaluate {
        /// Checkpoint to evaluate (defaults to <out>/<model>.ckpt).
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_model)]
        model: Option<ModelKind>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Candidate pool size per held-out positive.
        #[arg(long)]
        pool_size: Option<usize>,
        /// Ranking cutoff.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Build per-user explanations from trained checkpoints.
    Explain {
        /// Checkpoint(s) to explain; repeatable. Defaults to every
        /// nar/car/cnr checkpoint found in the output directory.
        #[arg(long = "checkpoint", value_name = "FILE")]
        checkpoints: Vec<PathBuf>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Words per explanation.
        #[arg(long)]
        top_words: Option<usize>,
    },
    /// Aggregate evaluation artifacts into one report.
    Report {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> xrec::Result<Vec<PathBuf>> {
    let mut ov = Overrides { seed: cli.seed, out: cli.out, ..Overrides::default() };
    match cli.command {
        Command::Synth { users, items, features, density, planted, profile, noise, t_max } => {
            ov.users = users;
            ov.items = items;
            ov.features = features;
            ov.density = density;
            ov.planted_per_user = planted;
            ov.item_profile_size = profile;
            ov.noise = noise;
            ov.t_max = t_max;
            let cfg = RunConfig::resolve(cli.config.as_deref(), &ov)?;
            run::cmd_synth(&cfg)
        }
        Command::Prepare { input, t_max } => {
            ov.t_max = t_max;
            let cfg = RunConfig::resolve(cli.config.as_deref(), &ov)?;
            run::cmd_prepare(&cfg, &input)
        }
        Command::Train { flags } => {
            ov.model = flags.model;
            ov.data = flags.data;
            ov.epochs = flags.epochs;
            ov.lr = flags.lr;
            ov.batch_size = flags.batch_size;
            ov.negatives_per_positive = flags.negatives;
            ov.epsilon = flags.epsilon;
            ov.lambda = flags.lambda;
            ov.xi = flags.xi;
            ov.outer = flags.outer;
            ov.distance = flags.distance;
            ov.search_steps = flags.search_steps;
            ov.search_lr = flags.search_lr;
            ov.search_triples = flags.search_triples;
            ov.retrain_epochs = flags.retrain_epochs;
            ov.id_dim = flags.id_dim;
            ov.word_dim = flags.word_dim;
            ov.mlp_hidden = flags.mlp_hidden;
            let cfg = RunConfig::resolve(cli.config.as_deref(), &ov)?;
            run::cmd_train(&cfg)
        }
        Command::Evaluate { checkpoint, model, data, pool_size, k } => {
            ov.model = model;
            ov.data = data;
            ov.pool_size = pool_size;
            ov.k = k;
            let cfg = RunConfig::resolve(cli.config.as_deref(), &ov)?;
            run::cmd_evaluate(&cfg, checkpoint.as_deref())
        }
        Command::Explain { checkpoints, data, top_words } => {
            ov.data = data;
            ov.top_words = top_words;
            let cfg = RunConfig::resolve(cli.config.as_deref(), &ov)?;
            run::cmd_explain(&cfg, &checkpoints)
        }
        Command::Report { data } => {
            ov.data = data;
            let cfg = RunConfig::resolve(cli.config.as_deref(), &ov)?;
            run::cmd_report(&cfg)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
