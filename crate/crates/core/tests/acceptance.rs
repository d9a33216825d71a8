//! End-to-end acceptance checks, one line per criterion.
//!
//! `cargo test -p medsynth --test acceptance -- <name>...` runs a subset; the
//! names are the ones printed in brackets. The process exits non-zero if any
//! selected criterion fails.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use medsynth::baselines::{
    independent_sampling_binary, random_noise, vae_train, KdeModel, VaeConfig, VaeGrads, VaeParams,
    KDE_BANDWIDTH,
};
use medsynth::data::{synth_corpus, CodeVocabulary, DataKind, GroundTruthModel, RecordDataset};
use medsynth::eval::{
    count_histograms, dimension_wise_average_count, dimension_wise_prediction,
    dimension_wise_probability, histograms_for, DimStatReport,
};
use medsynth::medgan::{
    discriminator_objective_and_grads, generator_step_grads, train, Autoencoder, Discriminator,
    Generator, MedganConfig, MedganModel,
};
use medsynth::numerics::{grad_check, Activation, Dense, DenseGrads, Matrix, Rng};
use medsynth::privacy::{
    attribute_counts, attribute_disclosure, hamming, presence_disclosure, AttackRow,
    AttributeAttackConfig, PackedBits, PresenceAttackConfig,
};
use statrs::distribution::{ContinuousCDF, Normal};

const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;
const SEEDS: u64 = 5;
const REQUIRED: usize = 4;
const CORPUS_N: usize = 10_000;
const TEST_N: usize = 2_000;
const SYNTH_N: usize = 10_000;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------- gradients

fn dense_params(layers: &[&Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

fn set_dense(layers: &mut [&mut Dense], p: &[f64]) {
    let mut off = 0;
    for l in layers.iter_mut() {
        for dst in [l.weight.as_mut_slice(), l.bias.as_mut_slice()] {
            let len = dst.len();
            dst.copy_from_slice(&p[off..off + len]);
            off += len;
        }
    }
}

fn dense_grads(grads: &[&DenseGrads]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        out.extend_from_slice(g.weight.as_slice());
        out.extend_from_slice(&g.bias);
    }
    out
}

fn randomize_biases<'a>(layers: impl IntoIterator<Item = &'a mut Dense>, rng: &mut Rng) {
    for l in layers {
        l.bias
            .iter_mut()
            .for_each(|b| *b = rng.uniform_range(-0.5, 0.5));
    }
}

fn toy_records(kind: DataKind, rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    match kind {
        DataKind::Binary => rng.bernoulli(&vec![0.35; cols], rows).unwrap(),
        DataKind::Count => rng
            .standard_normal(rows, cols)
            .map(|v| (v * 1.5).abs().round()),
    }
}

/// Worst relative error over the seeds, and the failing seeds.
struct GradTally {
    worst: f64,
    failed: Vec<String>,
    checked: usize,
    skipped: usize,
}

impl GradTally {
    fn new() -> Self {
        GradTally {
            worst: 0.0,
            failed: Vec::new(),
            checked: 0,
            skipped: 0,
        }
    }

    fn record(&mut self, label: String, rel: f64, passed: bool) {
        self.checked += 1;
        self.worst = self.worst.max(rel);
        if !passed {
            self.failed.push(label);
        }
    }
}

fn grad_autoencoder(kind: DataKind, tally: &mut GradTally) {
    for seed in 0..GRAD_SEEDS {
        let mut rng = Rng::new(10_000 + seed);
        let mut ae = Autoencoder::new(12, 8, kind, &mut rng);
        randomize_biases([&mut ae.encoder, &mut ae.decoder], &mut rng);
        let x = toy_records(kind, 16, 12, &mut rng);
        let p0 = dense_params(&[&ae.encoder, &ae.decoder]);
        let r = grad_check(
            |p| {
                set_dense(&mut [&mut ae.encoder, &mut ae.decoder], p);
                let (l, g) = ae.loss_and_grads(&x);
                (l, dense_grads(&[&g.encoder, &g.decoder]))
            },
            &p0,
            GRAD_TOL,
        );
        tally.record(format!("ae/{kind}/{seed}"), r.max_rel_error, r.passed);
    }
}

fn generator_params(g: &Generator, dec: &Dense) -> Vec<f64> {
    let mut out = Vec::new();
    for l in &g.layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(&l.bn.gamma);
        out.extend_from_slice(&l.bn.beta);
    }
    out.extend(dense_params(&[dec]));
    out
}

fn set_generator_params(g: &mut Generator, dec: &mut Dense, p: &[f64]) {
    let mut off = 0;
    for l in &mut g.layers {
        for dst in [
            l.weight.as_mut_slice(),
            l.bn.gamma.as_mut_slice(),
            l.bn.beta.as_mut_slice(),
        ] {
            let len = dst.len();
            dst.copy_from_slice(&p[off..off + len]);
            off += len;
        }
    }
    set_dense(&mut [dec], &p[off..]);
}

fn grad_generator_path(kind: DataKind, tally: &mut GradTally) {
    for seed in 0..GRAD_SEEDS {
        let mut rng = Rng::new(20_000 + seed);
        let mut g = Generator::new(8, 2, kind, &mut rng);
        let mut ae = Autoencoder::new(12, 8, kind, &mut rng);
        let mut disc = Discriminator::new(12, &[8, 6], true, &mut rng);
        randomize_biases([&mut ae.decoder], &mut rng);
        randomize_biases(disc.layers.iter_mut(), &mut rng);
        for l in &mut g.layers {
            l.bn.beta
                .iter_mut()
                .for_each(|b| *b = rng.uniform_range(-0.3, 0.3));
        }
        let z = rng.standard_normal(16, 8);
        let p0 = generator_params(&g, &ae.decoder);
        let r = grad_check(
            |p| {
                set_generator_params(&mut g, &mut ae.decoder, p);
                let mut gc = g.clone();
                let (obj, gg, dg) = generator_step_grads(&mut gc, &ae, &disc, &z).unwrap();
                let mut flat = Vec::new();
                for i in 0..gg.weights.len() {
                    flat.extend_from_slice(gg.weights[i].as_slice());
                    flat.extend_from_slice(&gg.gammas[i]);
                    flat.extend_from_slice(&gg.betas[i]);
                }
                flat.extend(dense_grads(&[&dg]));
                (obj, flat)
            },
            &p0,
            GRAD_TOL,
        );
        tally.record(format!("gen/{kind}/{seed}"), r.max_rel_error, r.passed);
    }
}

fn grad_discriminator(tally: &mut GradTally) {
    for seed in 0..GRAD_SEEDS {
        let mut rng = Rng::new(30_000 + seed);
        let mut d = Discriminator::new(12, &[8, 6], true, &mut rng);
        randomize_biases(d.layers.iter_mut(), &mut rng);
        let real = toy_records(DataKind::Binary, 16, 12, &mut rng);
        let fake = rng
            .standard_normal(16, 12)
            .map(|v| Activation::Sigmoid.apply(v));
        let p0 = dense_params(&d.layers.iter().collect::<Vec<_>>());
        let r = grad_check(
            |p| {
                set_dense(&mut d.layers.iter_mut().collect::<Vec<_>>(), p);
                let (v, g) = discriminator_objective_and_grads(&d, &real, &fake).unwrap();
                (v, dense_grads(&g.iter().collect::<Vec<_>>()))
            },
            &p0,
            GRAD_TOL,
        );
        tally.record(format!("disc/{seed}"), r.max_rel_error, r.passed);
    }
}

fn vae_layers(p: &mut VaeParams) -> Vec<&mut Dense> {
    p.encoder
        .iter_mut()
        .chain([&mut p.mu, &mut p.log_var])
        .chain(p.decoder.iter_mut())
        .collect()
}

fn vae_grads(g: &VaeGrads) -> Vec<f64> {
    let all: Vec<&DenseGrads> = g
        .encoder
        .iter()
        .chain([&g.mu, &g.log_var])
        .chain(g.decoder.iter())
        .collect();
    dense_grads(&all)
}

/// Smallest |pre-activation| over the ReLU units of a count-mode VAE pass.
/// Central differences are meaningless within a step of a kink.
fn vae_kink_margin(p: &VaeParams, x: &Matrix, eps: &Matrix) -> f64 {
    let mut margin = f64::INFINITY;
    let mut relu = |layer: &Dense, input: &Matrix| {
        let pre = layer.forward(input);
        margin = pre.as_slice().iter().fold(margin, |m, v| m.min(v.abs()));
        pre.map(|v| v.max(0.0))
    };
    let mut a = x.clone();
    for l in &p.encoder {
        a = relu(l, &a);
    }
    let (mu, log_var) = (p.mu.forward(&a), p.log_var.forward(&a));
    let sd = log_var.map(|v| (0.5 * v).exp());
    let mut z = mu.add(&sd.hadamard(eps).unwrap()).unwrap();
    for l in &p.decoder {
        z = relu(l, &z);
    }
    margin
}

const KINK_MARGIN: f64 = 1e-3;

fn grad_vae(kind: DataKind, tally: &mut GradTally) {
    let config = VaeConfig {
        kind,
        hidden_dims: vec![8, 7, 6],
        latent_dim: 4,
        ..Default::default()
    };
    let mut seed = 0;
    while tally.checked < GRAD_SEEDS as usize && seed < 5 * GRAD_SEEDS {
        let mut rng = Rng::new(40_000 + seed);
        seed += 1;
        let mut p = VaeParams::new(&config, CodeVocabulary::numbered(12), &mut rng);
        randomize_biases(vae_layers(&mut p), &mut rng);
        let x = toy_records(kind, 16, 12, &mut rng);
        let eps = rng.standard_normal(16, 4);
        if kind == DataKind::Count && vae_kink_margin(&p, &x, &eps) < KINK_MARGIN {
            tally.skipped += 1;
            continue;
        }
        let p0 = {
            let layers = vae_layers(&mut p);
            dense_params(&layers.iter().map(|l| &**l).collect::<Vec<_>>())
        };
        let r = grad_check(
            |v| {
                set_dense(&mut vae_layers(&mut p), v);
                let (l, g) = p.loss_and_grads(&x, &eps);
                (l, vae_grads(&g))
            },
            &p0,
            GRAD_TOL,
        );
        tally.record(format!("vae/{kind}/{seed}"), r.max_rel_error, r.passed);
    }
}

fn gradient_integrity() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    let families: Vec<(&str, Box<dyn Fn(&mut GradTally)>)> = vec![
        (
            "ae-binary",
            Box::new(|t| grad_autoencoder(DataKind::Binary, t)),
        ),
        (
            "ae-count",
            Box::new(|t| grad_autoencoder(DataKind::Count, t)),
        ),
        (
            "gen-binary",
            Box::new(|t| grad_generator_path(DataKind::Binary, t)),
        ),
        (
            "gen-count",
            Box::new(|t| grad_generator_path(DataKind::Count, t)),
        ),
        ("disc-mba", Box::new(grad_discriminator)),
        ("vae-binary", Box::new(|t| grad_vae(DataKind::Binary, t))),
        ("vae-count", Box::new(|t| grad_vae(DataKind::Count, t))),
    ];
    for (name, run) in families {
        let mut t = GradTally::new();
        run(&mut t);
        let ok = t.failed.is_empty() && t.checked >= GRAD_SEEDS as usize;
        pass &= ok;
        let mut part = format!(
            "{name} {}/{} max {:.1e}",
            t.checked - t.failed.len(),
            t.checked,
            t.worst
        );
        if t.skipped > 0 {
            part.push_str(&format!(" ({} near-kink seeds skipped)", t.skipped));
        }
        if !t.failed.is_empty() {
            part.push_str(&format!(" failing {:?}", t.failed));
        }
        parts.push(part);
    }
    Outcome::new(pass, parts.join("; "))
}

// --------------------------------------------------------------- corpora

fn medgan_config(kind: DataKind, epochs: usize, mba: bool, seed: u64) -> MedganConfig {
    MedganConfig {
        kind,
        batch_size: 500,
        gan_epochs: epochs,
        minibatch_averaging: mba,
        seed,
        ..Default::default()
    }
}

fn fit_and_sample(config: &MedganConfig, data: &RecordDataset) -> RecordDataset {
    let model = train(config, data, &mut Rng::new(config.seed)).unwrap();
    model
        .generate(SYNTH_N, &mut Rng::new(config.seed + 77))
        .unwrap()
}

fn independence_corpus(seed: u64) -> RecordDataset {
    let mut rng = Rng::new(1000 + seed);
    let probs: Vec<f64> = (0..50).map(|_| rng.uniform_range(0.05, 0.6)).collect();
    let gt = GroundTruthModel::independent_binary(&probs).unwrap();
    synth_corpus(&gt, CORPUS_N, &mut rng).unwrap()
}

/// Training corpus and an independent held-out draw from the same model.
fn correlated_corpus(seed: u64) -> (RecordDataset, RecordDataset) {
    let mut rng = Rng::new(1000 + seed);
    let gt = GroundTruthModel::random(50, 5, DataKind::Binary, &mut rng);
    let train = synth_corpus(&gt, CORPUS_N, &mut rng).unwrap();
    let test = synth_corpus(&gt, TEST_N, &mut rng).unwrap();
    (train, test)
}

fn count_corpus(seed: u64) -> RecordDataset {
    let mut rng = Rng::new(1000 + seed);
    let gt = GroundTruthModel::random(40, 5, DataKind::Count, &mut rng);
    synth_corpus(&gt, CORPUS_N, &mut rng).unwrap()
}

fn dichotomized(synth: &RecordDataset) -> usize {
    synth
        .column_means()
        .iter()
        .filter(|&&p| p == 0.0 || p == 1.0)
        .count()
}

fn mean_f1_gap(report: &DimStatReport) -> f64 {
    report
        .pairs
        .iter()
        .map(|p| (p.real_stat - p.synth_stat).abs())
        .sum::<f64>()
        / report.pairs.len() as f64
}

// ------------------------------------------------------- fidelity criteria

const MARGINAL_EPOCHS: usize = 300;
const ABLATION_EPOCHS: usize = 300;
const COUNT_EPOCHS: usize = 300;

fn marginal_recovery() -> Outcome {
    let mut rs = Vec::new();
    for seed in 0..SEEDS {
        let data = independence_corpus(seed);
        let synth = fit_and_sample(
            &medgan_config(DataKind::Binary, MARGINAL_EPOCHS, true, seed),
            &data,
        );
        rs.push(
            dimension_wise_probability(&data, &synth)
                .unwrap()
                .summary
                .pearson,
        );
    }
    let hits = rs.iter().filter(|&&r| r >= 0.9).count();
    Outcome::new(
        hits >= REQUIRED,
        format!("r {} ({hits}/{SEEDS} >= 0.9)", fmt_list(&rs)),
    )
}

struct CorrelatedRun {
    train: RecordDataset,
    test: RecordDataset,
    with_mba: RecordDataset,
    without_mba: Option<RecordDataset>,
}

fn correlated_runs(need_ablation: bool) -> Vec<CorrelatedRun> {
    (0..SEEDS)
        .map(|seed| {
            let (train, test) = correlated_corpus(seed);
            let run = |mba| {
                fit_and_sample(
                    &medgan_config(DataKind::Binary, ABLATION_EPOCHS, mba, seed),
                    &train,
                )
            };
            let with_mba = run(true);
            let without_mba = need_ablation.then(|| run(false));
            CorrelatedRun {
                train,
                test,
                with_mba,
                without_mba,
            }
        })
        .collect()
}

fn minibatch_averaging(runs: &[CorrelatedRun]) -> Outcome {
    let (mut r_on, mut r_off, mut d_on, mut d_off) = (vec![], vec![], vec![], vec![]);
    for run in runs {
        let off = run.without_mba.as_ref().expect("ablation runs");
        r_on.push(
            dimension_wise_probability(&run.train, &run.with_mba)
                .unwrap()
                .summary
                .pearson,
        );
        r_off.push(
            dimension_wise_probability(&run.train, off)
                .unwrap()
                .summary
                .pearson,
        );
        d_on.push(dichotomized(&run.with_mba));
        d_off.push(dichotomized(off));
    }
    let r_hits = r_on.iter().zip(&r_off).filter(|(a, b)| a >= b).count();
    let d_hits = d_on.iter().zip(&d_off).filter(|(a, b)| a <= b).count();
    Outcome::new(
        r_hits >= REQUIRED && d_hits >= REQUIRED,
        format!(
            "r on {} off {} ({r_hits}/{SEEDS}); dichotomized on {d_on:?} off {d_off:?} ({d_hits}/{SEEDS})",
            fmt_list(&r_on),
            fmt_list(&r_off)
        ),
    )
}

fn structure_capture(runs: &[CorrelatedRun]) -> Outcome {
    let (mut gan, mut is) = (vec![], vec![]);
    for (seed, run) in runs.iter().enumerate() {
        let baseline =
            independent_sampling_binary(&run.train, SYNTH_N, &mut Rng::new(seed as u64 + 77))
                .unwrap();
        let l2 = medsynth::eval::DEFAULT_L2;
        gan.push(mean_f1_gap(
            &dimension_wise_prediction(&run.train, &run.with_mba, &run.test, None, l2).unwrap(),
        ));
        is.push(mean_f1_gap(
            &dimension_wise_prediction(&run.train, &baseline, &run.test, None, l2).unwrap(),
        ));
    }
    let hits = gan.iter().zip(&is).filter(|(g, i)| g < i).count();
    Outcome::new(
        hits >= REQUIRED,
        format!(
            "mean |F1 gap| medgan {} is {} ({hits}/{SEEDS})",
            fmt_list(&gan),
            fmt_list(&is)
        ),
    )
}

fn count_pipeline() -> Outcome {
    let (mut rs, mut worst_tv) = (vec![], vec![]);
    for seed in 0..SEEDS {
        let data = count_corpus(seed);
        let synth = fit_and_sample(
            &medgan_config(DataKind::Count, COUNT_EPOCHS, true, seed),
            &data,
        );
        rs.push(
            dimension_wise_average_count(&data, &synth)
                .unwrap()
                .summary
                .pearson,
        );
        let real_h = count_histograms(&data, 5, 10).unwrap();
        let dims: Vec<usize> = real_h.iter().map(|h| h.dim_index).collect();
        let synth_h = histograms_for(&synth, &dims, 10).unwrap();
        worst_tv.push(
            real_h
                .iter()
                .zip(&synth_h)
                .map(|(a, b)| a.tv_distance(b))
                .fold(0.0, f64::max),
        );
    }
    let hits = rs.iter().filter(|&&r| r >= 0.85).count();
    let tv_ok = worst_tv.iter().all(|&t| t <= 0.25);
    Outcome::new(
        hits >= REQUIRED && tv_ok,
        format!(
            "r {} ({hits}/{SEEDS} >= 0.85); worst top-5 TV {}",
            fmt_list(&rs),
            fmt_list(&worst_tv)
        ),
    )
}

// ------------------------------------------------------- baseline oracles

/// Mean and variance of `max(round(c + h·Z), 0)` for `Z ~ N(0, 1)`.
fn rounded_clamped_moments(c: f64, h: f64) -> (f64, f64) {
    let n = Normal::new(0.0, 1.0).unwrap();
    let top = (c + 12.0 * h).ceil() as i64 + 1;
    let (mut m1, mut m2) = (0.0, 0.0);
    for v in 1..=top {
        let v = v as f64;
        let p = n.cdf((v + 0.5 - c) / h) - n.cdf((v - 0.5 - c) / h);
        m1 += v * p;
        m2 += v * v * p;
    }
    (m1, m2 - m1 * m1)
}

fn baseline_oracles() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // independent sampling: every marginal within 3 binomial sigmas
    let mut rng = Rng::new(7);
    let probs: Vec<f64> = (0..50).map(|_| rng.uniform_range(0.02, 0.6)).collect();
    let real = RecordDataset::new(
        rng.bernoulli(&probs, 5000).unwrap(),
        DataKind::Binary,
        CodeVocabulary::numbered(50),
    )
    .unwrap();
    let n = 20_000;
    let synth = independent_sampling_binary(&real, n, &mut Rng::new(8)).unwrap();
    let worst_z = real
        .column_means()
        .iter()
        .zip(synth.column_means())
        .map(|(&p, q)| {
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            (q - p).abs() / sd
        })
        .fold(0.0, f64::max);
    pass &= worst_z <= 3.0;
    notes.push(format!("is worst z {worst_z:.2}"));

    // random noise: flipped fraction at 10^5 entries
    let data = RecordDataset::new(
        rng.bernoulli(&[0.3; 100], 1000).unwrap(),
        DataKind::Binary,
        CodeVocabulary::numbered(100),
    )
    .unwrap();
    let noisy = random_noise(&data, 0.1, &mut Rng::new(9)).unwrap();
    let flipped = data
        .matrix()
        .as_slice()
        .iter()
        .zip(noisy.matrix().as_slice())
        .filter(|(a, b)| a != b)
        .count() as f64
        / 1e5;
    pass &= (flipped - 0.1).abs() <= 0.003;
    notes.push(format!("rn flipped {flipped:.4}"));

    // KDE: sample mean against the analytic mixture mean, 4 Monte-Carlo sigmas
    let counts = rng
        .standard_normal(300, 10)
        .map(|v| (v * 2.0 + 1.0).abs().round());
    let data = RecordDataset::new(counts, DataKind::Count, CodeVocabulary::numbered(10)).unwrap();
    let kde = KdeModel::fit(&data, KDE_BANDWIDTH).unwrap();
    let draws = 40_000;
    let sample = kde.sample(draws, &mut Rng::new(10));
    let sample_means = sample.column_means();
    let mut worst_kde = 0.0f64;
    for k in 0..10 {
        let obs = data.matrix().column(k);
        let (mut m1, mut m2) = (0.0, 0.0);
        for &c in &obs {
            let (mean, var) = rounded_clamped_moments(c, KDE_BANDWIDTH);
            m1 += mean;
            m2 += var + mean * mean;
        }
        m1 /= obs.len() as f64;
        m2 /= obs.len() as f64;
        let sd = ((m2 - m1 * m1) / draws as f64).sqrt();
        worst_kde = worst_kde.max((sample_means[k] - m1).abs() / sd);
    }
    pass &= worst_kde <= 4.0;
    notes.push(format!("kde worst z {worst_kde:.2}"));
    Outcome::new(pass, notes.join("; "))
}

// -------------------------------------------------------- privacy harness

fn random_records(rng: &mut Rng, n: usize, dims: usize, p: f64) -> RecordDataset {
    RecordDataset::new(
        rng.bernoulli(&vec![p; dims], n).unwrap(),
        DataKind::Binary,
        CodeVocabulary::numbered(dims),
    )
    .unwrap()
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn brute_presence(real: &Matrix, test: &Matrix, synth: &Matrix, threshold: usize) -> [usize; 4] {
    let near =
        |x: &[f64]| (0..synth.rows()).any(|j| hamming(x, synth.row(j)).unwrap() <= threshold);
    let tp = (0..real.rows()).filter(|&i| near(real.row(i))).count();
    let fp = (0..test.rows()).filter(|&i| near(test.row(i))).count();
    [tp, fp, test.rows() - fp, real.rows() - tp]
}

/// Neighbour `j` is among the `k` nearest iff fewer than `k` synthetic rows
/// precede it under (distance, index).
fn brute_attribute(
    real: &Matrix,
    known: &[usize],
    synth: &Matrix,
    k: usize,
) -> (usize, usize, usize, usize, Option<f64>, Option<f64>) {
    let dist = |a: &[f64], b: &[f64]| known.iter().filter(|&&j| a[j] != b[j]).count();
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    let (mut sens, mut sens_n, mut prec, mut prec_n) = (0.0, 0, 0.0, 0);
    for i in 0..real.rows() {
        let d: Vec<usize> = (0..synth.rows())
            .map(|j| dist(real.row(i), synth.row(j)))
            .collect();
        let nearest: Vec<usize> = (0..synth.rows())
            .filter(|&j| {
                (0..synth.rows())
                    .filter(|&o| d[o] < d[j] || (d[o] == d[j] && o < j))
                    .count()
                    < k
            })
            .collect();
        let (mut rtp, mut rfp, mut rfn) = (0, 0, 0);
        for a in (0..real.cols()).filter(|a| !known.contains(a)) {
            let votes = nearest.iter().filter(|&&j| synth[(j, a)] == 1.0).count();
            let claim = votes * 2 > k;
            match (claim, real[(i, a)] == 1.0) {
                (true, true) => rtp += 1,
                (true, false) => rfp += 1,
                (false, false) => tn += 1,
                (false, true) => rfn += 1,
            }
        }
        tp += rtp;
        fp += rfp;
        fn_ += rfn;
        if let Some(s) = rate(rtp, rtp + rfn) {
            sens += s;
            sens_n += 1;
        }
        if let Some(p) = rate(rtp, rtp + rfp) {
            prec += p;
            prec_n += 1;
        }
    }
    (
        tp,
        fp,
        tn,
        fn_,
        (sens_n > 0).then(|| sens / sens_n as f64),
        (prec_n > 0).then(|| prec / prec_n as f64),
    )
}

fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == size)
        .map(|m| (0..n).filter(|&j| m >> j & 1 == 1).collect())
        .collect()
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() < 1e-12,
        _ => false,
    }
}

fn privacy_harness() -> Outcome {
    let mut problems: Vec<String> = Vec::new();
    let mut rng = Rng::new(99);
    let dims = 6;

    // presence on toys against enumeration
    let mut presence_cases = 0;
    for case in 0..200 {
        let n = 1 + rng.below(8);
        let n_s = 1 + rng.below(8);
        let real = random_records(&mut rng, n, dims, 0.4);
        let test = random_records(&mut rng, n, dims, 0.4);
        let synth = random_records(&mut rng, n_s, dims, 0.4);
        let cfg = PresenceAttackConfig {
            sample_sizes: vec![n],
            thresholds: (0..=dims).collect(),
            synthetic_sizes: vec![],
            seed: case,
        };
        let report = presence_disclosure(&real, &test, &synth, &cfg).unwrap();
        for row in &report.rows {
            let t = row.params[2];
            let [tp, fp, tn, fn_] = brute_presence(real.matrix(), test.matrix(), synth.matrix(), t);
            let ok = [row.tp, row.fp, row.tn, row.fn_] == [tp, fp, tn, fn_]
                && close(row.sensitivity, rate(tp, tp + fn_))
                && close(row.precision, rate(tp, tp + fp));
            if !ok {
                problems.push(format!("presence case {case} threshold {t}"));
            }
            presence_cases += 1;
        }
    }

    // attribute on toys: every known-attribute subset, every k
    let mut attribute_cases = 0;
    for case in 0..40 {
        let n = 1 + rng.below(8);
        let n_s = 1 + rng.below(8);
        let real = random_records(&mut rng, n, dims, 0.4);
        let synth = random_records(&mut rng, n_s, dims, 0.4);
        let r_bits = PackedBits::from_matrix(real.matrix());
        let s_bits = PackedBits::from_matrix(synth.matrix());
        let ks: Vec<usize> = (1..=n_s).collect();
        for s in 1..dims {
            for known in subsets(dims, s) {
                let sets = vec![known.clone(); n];
                let rows = attribute_counts(&r_bits, &sets, &s_bits, n_s, &ks).unwrap();
                for (row, &k) in rows.iter().zip(&ks) {
                    let (tp, fp, tn, fn_, sens, prec) =
                        brute_attribute(real.matrix(), &known, synth.matrix(), k);
                    let ok = [row.tp, row.fp, row.tn, row.fn_] == [tp, fp, tn, fn_]
                        && close(row.sensitivity, sens)
                        && close(row.precision, prec);
                    if !ok {
                        problems.push(format!("attribute case {case} known {known:?} k {k}"));
                    }
                    attribute_cases += 1;
                }
            }
        }
    }

    // S = R: every member is its own nearest synthetic record
    let real = random_records(&mut rng, 60, 20, 0.3);
    let test = random_records(&mut rng, 60, 20, 0.3);
    let cfg = PresenceAttackConfig {
        sample_sizes: vec![60],
        thresholds: vec![0],
        synthetic_sizes: vec![],
        seed: 1,
    };
    let presence_self = presence_disclosure(&real, &test, &real, &cfg).unwrap().rows[0].sensitivity;
    if presence_self != Some(1.0) {
        problems.push(format!("presence S=R sensitivity {presence_self:?}"));
    }

    // S = R with unique fingerprints on the known attributes, k = 1
    let fingerprinted = Matrix::from_vec(
        32,
        10,
        (0..32usize)
            .flat_map(|i| {
                let mut row: Vec<f64> = (0..5).map(|b| (i >> b & 1) as f64).collect();
                row.extend((0..5).map(|j| if j == i % 5 { 1.0 } else { rng.below(2) as f64 }));
                row
            })
            .collect(),
    )
    .unwrap();
    let bits = PackedBits::from_matrix(&fingerprinted);
    let known = vec![(0..5).collect::<Vec<usize>>(); 32];
    let attr_self: AttackRow = attribute_counts(&bits, &known, &bits, 32, &[1])
        .unwrap()
        .remove(0);
    if attr_self.sensitivity != Some(1.0) || attr_self.sensitivity_excluded != 0 {
        problems.push(format!(
            "attribute S=R sensitivity {:?}",
            attr_self.sensitivity
        ));
    }
    // monotonicity in the threshold
    let mut monotone_cases = 0;
    for case in 0..100 {
        let n = 5 + rng.below(25);
        let real = random_records(&mut rng, n, 12, 0.3);
        let test = random_records(&mut rng, n, 12, 0.3);
        let n_s = 1 + rng.below(40);
        let synth = random_records(&mut rng, n_s, 12, 0.3);
        let cfg = PresenceAttackConfig {
            sample_sizes: vec![n],
            thresholds: (0..=12).collect(),
            synthetic_sizes: vec![],
            seed: case,
        };
        let rows = presence_disclosure(&real, &test, &synth, &cfg)
            .unwrap()
            .rows;
        let sens: Vec<f64> = rows.iter().map(|r| r.sensitivity.unwrap()).collect();
        if sens.windows(2).any(|w| w[1] < w[0]) || sens.last() != Some(&1.0) {
            problems.push(format!("monotonicity case {case}: {sens:?}"));
        }
        monotone_cases += 1;
    }

    let detail = format!(
        "presence toys {presence_cases}, attribute toys {attribute_cases}, monotone instances {monotone_cases}, S=R presence {presence_self:?}, S=R attribute {:?}",
        attr_self.sensitivity
    );
    if problems.is_empty() {
        Outcome::new(true, detail)
    } else {
        Outcome::new(
            false,
            format!(
                "{detail}; mismatches {:?}",
                &problems[..problems.len().min(5)]
            ),
        )
    }
}

// ------------------------------------------------- determinism and storage

fn tiny_medgan(kind: DataKind) -> (MedganConfig, RecordDataset) {
    let mut rng = Rng::new(5);
    let gt = GroundTruthModel::random(12, 3, kind, &mut rng);
    let data = synth_corpus(&gt, 400, &mut rng).unwrap();
    let config = MedganConfig {
        kind,
        embed_dim: 8,
        prior_dim: 8,
        discriminator_dims: vec![8, 4],
        batch_size: 64,
        ae_epochs: 3,
        gan_epochs: 3,
        seed: 11,
        ..Default::default()
    };
    (config, data)
}

fn determinism_and_persistence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();
    let bytes = |p: &std::path::Path| fs::read(p).unwrap();

    for kind in [DataKind::Binary, DataKind::Count] {
        let (config, data) = tiny_medgan(kind);
        let run = |tag: &str| {
            let model = train(&config, &data, &mut Rng::new(config.seed)).unwrap();
            let ckpt = dir.path().join(format!("{kind}-{tag}.ckpt"));
            model.save(&ckpt).unwrap();
            let synth = model.generate(500, &mut Rng::new(3)).unwrap();
            let report = match kind {
                DataKind::Binary => dimension_wise_probability(&data, &synth),
                DataKind::Count => dimension_wise_average_count(&data, &synth),
            }
            .unwrap();
            let csv = dir.path().join(format!("{kind}-{tag}.csv"));
            let json = dir.path().join(format!("{kind}-{tag}.json"));
            report.write_csv(&csv).unwrap();
            report.write_summary_json(&json).unwrap();
            (model, bytes(&ckpt), bytes(&csv), bytes(&json), synth)
        };
        let (_, ckpt_a, csv_a, json_a, synth_a) = run("a");
        let (_, ckpt_b, csv_b, json_b, _) = run("b");
        if ckpt_a != ckpt_b {
            problems.push(format!("medgan {kind} checkpoint bytes differ"));
        }
        if csv_a != csv_b || json_a != json_b {
            problems.push(format!("medgan {kind} report bytes differ"));
        }
        let reloaded = MedganModel::load(dir.path().join(format!("{kind}-a.ckpt"))).unwrap();
        if reloaded.to_checkpoint().unwrap().to_bytes().unwrap() != ckpt_a {
            problems.push(format!("medgan {kind} parameters change on reload"));
        }
        let again = reloaded.generate(500, &mut Rng::new(3)).unwrap();
        if again.matrix() != synth_a.matrix() {
            problems.push(format!("medgan {kind} reloaded generation differs"));
        }
        let other = train(
            &MedganConfig {
                seed: config.seed + 1,
                ..config.clone()
            },
            &data,
            &mut Rng::new(config.seed + 1),
        )
        .unwrap();
        if other.to_checkpoint().unwrap().to_bytes().unwrap() == ckpt_a {
            problems.push(format!("medgan {kind} ignores the seed"));
        }
    }

    for kind in [DataKind::Binary, DataKind::Count] {
        let (_, data) = tiny_medgan(kind);
        let config = VaeConfig {
            kind,
            hidden_dims: vec![8, 8, 8],
            latent_dim: 4,
            batch_size: 64,
            iterations: 30,
            seed: 4,
            ..Default::default()
        };
        let run = |tag: &str| {
            let (params, _) = vae_train(&config, &data, &mut Rng::new(config.seed)).unwrap();
            let path = dir.path().join(format!("vae-{kind}-{tag}.ckpt"));
            params.save(&path).unwrap();
            (params, bytes(&path))
        };
        let (params, a) = run("a");
        let (_, b) = run("b");
        if a != b {
            problems.push(format!("vae {kind} checkpoint bytes differ"));
        }
        let reloaded = VaeParams::load(dir.path().join(format!("vae-{kind}-a.ckpt"))).unwrap();
        let x = params.generate(300, &mut Rng::new(6)).unwrap();
        let y = reloaded.generate(300, &mut Rng::new(6)).unwrap();
        if x.matrix() != y.matrix() {
            problems.push(format!("vae {kind} reloaded generation differs"));
        }
    }

    // privacy reports
    let mut rng = Rng::new(21);
    let real = random_records(&mut rng, 40, 16, 0.3);
    let test = random_records(&mut rng, 40, 16, 0.3);
    let synth = random_records(&mut rng, 80, 16, 0.3);
    let presence = PresenceAttackConfig {
        sample_sizes: vec![10, 40],
        thresholds: vec![0, 2, 4],
        synthetic_sizes: vec![40, 80],
        seed: 2,
    };
    let attribute = AttributeAttackConfig {
        compromised_fraction: 0.5,
        known_attributes: vec![4, 8],
        neighbors: vec![1, 3],
        synthetic_sizes: vec![],
        seed: 2,
    };
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let p = dir.path().join(format!("presence-{tag}.csv"));
        let q = dir.path().join(format!("attribute-{tag}.csv"));
        presence_disclosure(&real, &test, &synth, &presence)
            .unwrap()
            .write_csv(&p)
            .unwrap();
        attribute_disclosure(&real, &synth, &attribute)
            .unwrap()
            .write_csv(&q)
            .unwrap();
        outputs.push((bytes(&p), bytes(&q)));
    }
    if outputs[0] != outputs[1] {
        problems.push("privacy report bytes differ".into());
    }

    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            "medgan and vae checkpoints, eval and privacy reports bit-identical; reloads reproduce generation".to_string()
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected =
        |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));

    let needs_ablation = selected("minibatch-averaging");
    let needs_runs = needs_ablation || selected("structure-capture");
    let mut runs: Option<Vec<CorrelatedRun>> = None;
    let ensure_runs = |runs: &mut Option<Vec<CorrelatedRun>>| {
        if runs.is_none() {
            *runs = Some(correlated_runs(needs_ablation));
        }
    };

    let names = [
        "gradient-integrity",
        "marginal-recovery",
        "minibatch-averaging",
        "structure-capture",
        "baseline-oracles",
        "count-pipeline",
        "privacy-harness",
        "determinism",
    ];
    let mut failed = 0;
    for (i, name) in names.iter().enumerate() {
        if !selected(name) {
            continue;
        }
        let start = Instant::now();
        let outcome = match *name {
            "gradient-integrity" => gradient_integrity(),
            "marginal-recovery" => marginal_recovery(),
            "minibatch-averaging" | "structure-capture" if needs_runs => {
                ensure_runs(&mut runs);
                let runs = runs.as_deref().unwrap();
                if *name == "minibatch-averaging" {
                    minibatch_averaging(runs)
                } else {
                    structure_capture(runs)
                }
            }
            "baseline-oracles" => baseline_oracles(),
            "count-pipeline" => count_pipeline(),
            "privacy-harness" => privacy_harness(),
            "determinism" => determinism_and_persistence(),
            _ => unreachable!(),
        };
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "[{}] {}. {name} ({:.1}s): {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
