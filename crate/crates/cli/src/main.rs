use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use medsynth::data::DataKind;

mod commands;
mod run;

#[derive(Parser)]
#[command(
    name = "medsynth",
    version,
    about = "Synthetic EHR records with medGAN, baselines, fidelity and privacy audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a ground-truth corpus (records, vocabulary and generating model).
    SynthData(SynthDataArgs),
    /// Shuffle a dataset and split it into train and test files.
    Split(SplitArgs),
    /// Train medGAN or the VAE baseline.
    Train(TrainArgs),
    /// Generate synthetic records from a trained model or a baseline.
    Generate(GenerateArgs),
    /// Compare real and synthetic data.
    Eval(EvalArgs),
    /// Run a disclosure attack against a synthetic dataset.
    Privacy(PrivacyArgs),
}

/// Options shared by every command; never part of the echoed config.
#[derive(Args)]
pub struct Common {
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Serialize)]
pub struct SynthDataArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    pub codes: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub kind: Option<DataKind>,
    /// Latent factors; 0 gives mutually independent codes.
    #[arg(long)]
    pub factors: Option<usize>,
    #[arg(long)]
    pub count_cap: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize)]
pub struct SplitArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub kind: Option<DataKind>,
    /// Fraction of records that go to the training file.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainModel {
    Medgan,
    Vae,
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub kind: Option<DataKind>,
    #[arg(long, value_enum)]
    pub model: Option<TrainModel>,
    /// Adversarial epochs (medgan).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Autoencoder pretraining epochs (medgan).
    #[arg(long)]
    pub ae_epochs: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    pub minibatch: Option<usize>,
    /// Optimisation steps (vae).
    #[arg(long)]
    pub vae_iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub no_minibatch_averaging: bool,
    /// Skip autoencoder pretraining.
    #[arg(long)]
    #[serde(skip)]
    pub no_pretrain: bool,
    /// Round decoded samples before they reach the discriminator.
    #[arg(long)]
    #[serde(skip)]
    pub rounding_for_d: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerateModel {
    Medgan,
    Vae,
    /// Independent sampling (binary data).
    Is,
    /// Random noise on the real records (binary data).
    Rn,
    /// Per-code kernel density sampling (count data).
    Kde,
}

#[derive(Args, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub model: Option<GenerateModel>,
    /// Trained model file (medgan, vae).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Real records (is, rn, kde).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub kind: Option<DataKind>,
    /// Number of records to generate (ignored by rn).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub flip_probability: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMetric {
    /// Dimension-wise probability (binary).
    Dimprob,
    /// Dimension-wise prediction F1 (needs --test).
    Dimpred,
    /// Dimension-wise average count and top-code histograms (count).
    Counts,
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    #[arg(value_enum)]
    #[serde(skip)]
    pub metric: EvalMetric,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long)]
    pub synth: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub kind: Option<DataKind>,
    /// L2 strength of the dimension-wise logistic regressions.
    #[arg(long)]
    pub l2: Option<f64>,
    /// Number of most frequent codes to histogram.
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Largest count with its own histogram bin.
    #[arg(long)]
    pub max_count: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Attack {
    Presence,
    Attribute,
}

#[derive(Args, Serialize)]
pub struct PrivacyArgs {
    #[arg(value_enum)]
    #[serde(skip)]
    pub attack: Attack,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Training records R.
    #[arg(long)]
    pub real: Option<PathBuf>,
    /// Held-out records T (presence).
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub synth: Option<PathBuf>,
    /// Records sampled from each of R and T (presence).
    #[arg(long, value_delimiter = ',')]
    pub sample_sizes: Option<Vec<usize>>,
    /// Hamming thresholds, ascending (presence).
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<usize>>,
    /// Prefix sizes of the shuffled synthetic set.
    #[arg(long, value_delimiter = ',')]
    pub synthetic_sizes: Option<Vec<usize>>,
    /// Numbers of attributes known to the attacker (attribute).
    #[arg(long, value_delimiter = ',')]
    pub known_attributes: Option<Vec<usize>>,
    /// Neighbour counts (attribute).
    #[arg(long, value_delimiter = ',')]
    pub neighbors: Option<Vec<usize>>,
    /// Fraction of R the attacker has compromised (attribute).
    #[arg(long)]
    pub compromised_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthData(a) => commands::synth_data(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Generate(a) => commands::generate(a),
        Command::Eval(a) => commands::eval(a),
        Command::Privacy(a) => commands::privacy(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
