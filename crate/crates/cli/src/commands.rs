use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use medsynth::baselines::{
    independent_sampling_binary, independent_sampling_count, random_noise, vae_train, VaeConfig,
    VaeParams, DEFAULT_FLIP_PROBABILITY,
};
use medsynth::data::{self, synth_corpus, DataKind, GroundTruthModel, DEFAULT_COUNT_CAP};
use medsynth::eval::{
    count_histograms, dimension_wise_average_count, dimension_wise_prediction,
    dimension_wise_probability, histograms_for, write_histogram_csv, DimStatReport, DEFAULT_L2,
};
use medsynth::medgan::{self, write_loss_trace, MedganConfig, MedganModel};
use medsynth::numerics::Rng;
use medsynth::privacy::{
    attribute_disclosure, presence_disclosure, AttributeAttackConfig, PresenceAttackConfig,
    DEFAULT_COMPROMISED_FRACTION,
};

use crate::run::{load_dataset, prepare_output, required, resolve, save_dataset};
use crate::{
    Attack, EvalArgs, EvalMetric, GenerateArgs, GenerateModel, PrivacyArgs, SplitArgs,
    SynthDataArgs, TrainArgs, TrainModel,
};

pub const MODEL_FILE: &str = "model.ckpt";
pub const SYNTHETIC_FILE: &str = "synthetic.jsonl";

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthDataConfig {
    pub codes: usize,
    pub n: usize,
    pub kind: DataKind,
    pub factors: usize,
    pub count_cap: u64,
    pub seed: u64,
}

impl Default for SynthDataConfig {
    fn default() -> Self {
        SynthDataConfig {
            codes: 50,
            n: 10_000,
            kind: DataKind::Binary,
            factors: 5,
            count_cap: DEFAULT_COUNT_CAP,
            seed: 0,
        }
    }
}

pub fn synth_data(args: SynthDataArgs) -> Result<()> {
    let cfg: SynthDataConfig = resolve(&args.common, &args, &[])?;
    if cfg.codes == 0 || cfg.n == 0 {
        bail!("--codes and --n must be positive");
    }
    let out = prepare_output(&args.common, &cfg)?;
    let mut rng = Rng::new(cfg.seed);
    let mut gt = GroundTruthModel::random(cfg.codes, cfg.factors, cfg.kind, &mut rng);
    gt.count_cap = cfg.count_cap;
    let corpus = synth_corpus(&gt, cfg.n, &mut rng)?;
    save_dataset(&out, "records.jsonl", &corpus)?;
    fs::write(
        out.join("ground_truth.json"),
        serde_json::to_string_pretty(&gt)? + "\n",
    )
    .context("writing ground_truth.json")?;
    info!(
        "wrote {} records over {} codes to {}",
        cfg.n,
        cfg.codes,
        out.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub data: Option<PathBuf>,
    pub kind: DataKind,
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            data: None,
            kind: DataKind::Binary,
            ratio: 0.8,
            seed: 0,
        }
    }
}

pub fn split(args: SplitArgs) -> Result<()> {
    let cfg: SplitConfig = resolve(&args.common, &args, &[])?;
    let d = load_dataset(required(&cfg.data, "data")?, cfg.kind)?;
    let (train, test) = data::split(&d, cfg.ratio, &mut Rng::new(cfg.seed))?;
    let out = prepare_output(&args.common, &cfg)?;
    save_dataset(&out, "train.jsonl", &train)?;
    save_dataset(&out, "test.jsonl", &test)?;
    info!(
        "split {} records into {} train and {} test",
        d.len(),
        train.len(),
        test.len()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub data: Option<PathBuf>,
    pub kind: DataKind,
    pub model: TrainModel,
    pub epochs: usize,
    pub ae_epochs: usize,
    pub minibatch: usize,
    pub vae_iterations: usize,
    pub learning_rate: f64,
    pub minibatch_averaging: bool,
    pub pretrain: bool,
    pub rounding_for_d: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = MedganConfig::default();
        TrainConfig {
            data: None,
            kind: DataKind::Binary,
            model: TrainModel::Medgan,
            epochs: m.gan_epochs,
            ae_epochs: m.ae_epochs,
            minibatch: m.batch_size,
            vae_iterations: VaeConfig::default().iterations,
            learning_rate: m.learning_rate,
            minibatch_averaging: m.minibatch_averaging,
            pretrain: m.pretrain_autoencoder,
            rounding_for_d: m.rounding_for_d,
            seed: 0,
        }
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut switches = Vec::new();
    if args.no_minibatch_averaging {
        switches.push(("minibatch_averaging", json!(false)));
    }
    if args.no_pretrain {
        switches.push(("pretrain", json!(false)));
    }
    if args.rounding_for_d {
        switches.push(("rounding_for_d", json!(true)));
    }
    let cfg: TrainConfig = resolve(&args.common, &args, &switches)?;
    let d = load_dataset(required(&cfg.data, "data")?, cfg.kind)?;
    let mut rng = Rng::new(cfg.seed);
    match cfg.model {
        TrainModel::Medgan => {
            let mc = MedganConfig {
                kind: cfg.kind,
                batch_size: cfg.minibatch,
                learning_rate: cfg.learning_rate,
                ae_epochs: cfg.ae_epochs,
                gan_epochs: cfg.epochs,
                minibatch_averaging: cfg.minibatch_averaging,
                pretrain_autoencoder: cfg.pretrain,
                rounding_for_d: cfg.rounding_for_d,
                seed: cfg.seed,
                ..MedganConfig::default()
            };
            mc.validate()?;
            let out = prepare_output(&args.common, &cfg)?;
            let model = medgan::train(&mc, &d, &mut rng)?;
            model.save(out.join(MODEL_FILE))?;
            write_loss_trace(&model.trace, out.join("loss.csv"))?;
        }
        TrainModel::Vae => {
            let vc = VaeConfig {
                kind: cfg.kind,
                batch_size: cfg.minibatch,
                iterations: cfg.vae_iterations,
                learning_rate: cfg.learning_rate,
                seed: cfg.seed,
                ..VaeConfig::default()
            };
            vc.validate()?;
            let out = prepare_output(&args.common, &cfg)?;
            let (params, losses) = vae_train(&vc, &d, &mut rng)?;
            params.save(out.join(MODEL_FILE))?;
            let mut csv = String::from("iteration,loss\n");
            for (i, l) in losses.iter().enumerate() {
                writeln!(csv, "{},{l}", i + 1)?;
            }
            fs::write(out.join("loss.csv"), csv).context("writing loss.csv")?;
        }
    }
    info!(
        "trained {} on {} records",
        format!("{:?}", cfg.model).to_lowercase(),
        d.len()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub model: GenerateModel,
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub kind: DataKind,
    pub n: usize,
    pub flip_probability: f64,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            model: GenerateModel::Medgan,
            checkpoint: None,
            data: None,
            kind: DataKind::Binary,
            n: 10_000,
            flip_probability: DEFAULT_FLIP_PROBABILITY,
            seed: 0,
        }
    }
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let cfg: GenerateConfig = resolve(&args.common, &args, &[])?;
    let checkpoint = || required(&cfg.checkpoint, "checkpoint");
    let real = || load_dataset(required(&cfg.data, "data")?, cfg.kind);
    let mut rng = Rng::new(cfg.seed);
    let synth = match cfg.model {
        GenerateModel::Medgan => {
            let path = checkpoint()?;
            let model =
                MedganModel::load(path).with_context(|| format!("loading {}", path.display()))?;
            model.generate(cfg.n, &mut rng)?
        }
        GenerateModel::Vae => {
            let path = checkpoint()?;
            let params =
                VaeParams::load(path).with_context(|| format!("loading {}", path.display()))?;
            params.generate(cfg.n, &mut rng)?
        }
        GenerateModel::Is => independent_sampling_binary(&real()?, cfg.n, &mut rng)?,
        GenerateModel::Rn => random_noise(&real()?, cfg.flip_probability, &mut rng)?,
        GenerateModel::Kde => independent_sampling_count(&real()?, cfg.n, &mut rng)?,
    };
    let out = prepare_output(&args.common, &cfg)?;
    save_dataset(&out, SYNTHETIC_FILE, &synth)?;
    info!(
        "generated {} records with {}",
        synth.len(),
        format!("{:?}", cfg.model).to_lowercase()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub real: Option<PathBuf>,
    pub synth: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub kind: DataKind,
    pub l2: f64,
    pub top_n: usize,
    pub max_count: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            real: None,
            synth: None,
            test: None,
            kind: DataKind::Binary,
            l2: DEFAULT_L2,
            top_n: 5,
            max_count: 10,
        }
    }
}

fn write_report(out: &Path, name: &str, report: &DimStatReport) -> Result<()> {
    report.write_csv(out.join(format!("{name}.csv")))?;
    report.write_summary_json(out.join("summary.json"))?;
    info!(
        "{name}: pearson {:.4}, max deviation {:.4}",
        report.summary.pearson, report.summary.max_dev
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let cfg: EvalConfig = resolve(&args.common, &args, &[])?;
    let real = load_dataset(required(&cfg.real, "real")?, cfg.kind)?;
    let synth = load_dataset(required(&cfg.synth, "synth")?, cfg.kind)?;
    match args.metric {
        EvalMetric::Dimprob => {
            let report = dimension_wise_probability(&real, &synth)?;
            write_report(&prepare_output(&args.common, &cfg)?, "dimprob", &report)
        }
        EvalMetric::Dimpred => {
            let test = load_dataset(required(&cfg.test, "test")?, cfg.kind)?;
            let report = dimension_wise_prediction(&real, &synth, &test, None, cfg.l2)?;
            write_report(&prepare_output(&args.common, &cfg)?, "dimpred", &report)
        }
        EvalMetric::Counts => {
            let report = dimension_wise_average_count(&real, &synth)?;
            let real_h = count_histograms(&real, cfg.top_n, cfg.max_count)?;
            let dims: Vec<usize> = real_h.iter().map(|h| h.dim_index).collect();
            let synth_h = histograms_for(&synth, &dims, cfg.max_count)?;
            let out = prepare_output(&args.common, &cfg)?;
            write_report(&out, "dimcount", &report)?;
            write_histogram_csv(&real_h, &synth_h, out.join("histograms.csv"))?;
            let mut tv = String::from("dim_index,code,tv_distance\n");
            for (r, s) in real_h.iter().zip(&synth_h) {
                writeln!(tv, "{},{},{}", r.dim_index, r.code, r.tv_distance(s))?;
            }
            fs::write(out.join("histogram_tv.csv"), tv).context("writing histogram_tv.csv")
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacyConfig {
    pub real: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synth: Option<PathBuf>,
    /// Empty means `min(|R|, |T|)`.
    pub sample_sizes: Vec<usize>,
    pub thresholds: Vec<usize>,
    /// Empty means all of S.
    pub synthetic_sizes: Vec<usize>,
    pub known_attributes: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub compromised_fraction: f64,
    pub seed: u64,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        PrivacyConfig {
            real: None,
            test: None,
            synth: None,
            sample_sizes: Vec::new(),
            thresholds: (0..=10).collect(),
            synthetic_sizes: Vec::new(),
            known_attributes: vec![8, 16],
            neighbors: vec![1, 5, 10],
            compromised_fraction: DEFAULT_COMPROMISED_FRACTION,
            seed: 0,
        }
    }
}

pub fn privacy(args: PrivacyArgs) -> Result<()> {
    let cfg: PrivacyConfig = resolve(&args.common, &args, &[])?;
    let real = load_dataset(required(&cfg.real, "real")?, DataKind::Binary)?;
    let synth = load_dataset(required(&cfg.synth, "synth")?, DataKind::Binary)?;
    let (report, name) = match args.attack {
        Attack::Presence => {
            let test = load_dataset(required(&cfg.test, "test")?, DataKind::Binary)?;
            let sample_sizes = if cfg.sample_sizes.is_empty() {
                vec![real.len().min(test.len())]
            } else {
                cfg.sample_sizes.clone()
            };
            let attack = PresenceAttackConfig {
                sample_sizes,
                thresholds: cfg.thresholds.clone(),
                synthetic_sizes: cfg.synthetic_sizes.clone(),
                seed: cfg.seed,
            };
            (
                presence_disclosure(&real, &test, &synth, &attack)?,
                "presence",
            )
        }
        Attack::Attribute => {
            let attack = AttributeAttackConfig {
                compromised_fraction: cfg.compromised_fraction,
                known_attributes: cfg.known_attributes.clone(),
                neighbors: cfg.neighbors.clone(),
                synthetic_sizes: cfg.synthetic_sizes.clone(),
                seed: cfg.seed,
            };
            (attribute_disclosure(&real, &synth, &attack)?, "attribute")
        }
    };
    let out = prepare_output(&args.common, &cfg)?;
    report.write_csv(out.join(format!("{name}.csv")))?;
    info!("{name} attack: {} parameter settings", report.rows.len());
    Ok(())
}
