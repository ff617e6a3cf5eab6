//! Subcommands. A run is one directory: `train` fills it, `eval` and
//! `generate` read it back, `report` merges several.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anomaly_core::dataset::{self, netpbm, Dataset, NoisePlan, NoiseScope, Split, SyntheticSpec};
use anomaly_core::gan::{self, GanConfig, GanPair, GENERATOR_TAG};
use anomaly_core::metrics::{fmt6, score_histogram, EvalReport, ScoredSample};
use anomaly_core::nn::{self, LossKind, ModelGraph};
use anomaly_core::pipelines::{
    self, arch, build_cnn, build_kd_cae, build_ni_cae, calibrate_thresholds, classify_supervised, decide_anomaly, fit_kde,
    score_csv, AnomalyScore, Bandwidth, CaeScorer, CnnConfig, CombineRule, KdCaeConfig, NiCaeConfig, ScoreRow, ThresholdSet,
    TrainConfig, TrainData,
};
use anomaly_core::rng::SeedStream;
use anomaly_core::Tensor;
use log::{info, warn};

use crate::config::{DataSource, EvalSplit, ModelKind, RawConfig, RunConfig, ThresholdSpec, RESOLVED_CONFIG_FILE};
use crate::error::{CliError, CliResult};

pub const MODEL_FILE: &str = "model.anomf";
pub const GENERATOR_FILE: &str = "generator.anomf";
pub const DISCRIMINATOR_FILE: &str = "discriminator.anomf";
pub const HISTORY_FILE: &str = "history.csv";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.csv";
pub const NOISE_PLAN_FILE: &str = "noise_plan.csv";
pub const EVAL_DIR: &str = "eval";
pub const SCORES_FILE: &str = "scores.csv";
pub const DIAGNOSTICS_DIR: &str = "diagnostics";
pub const GENERATED_DIR: &str = "generated";
pub const REPORT_FILE: &str = "report.csv";

/// Steps averaged for the final discriminator output in the GAN summary.
const GAN_SUMMARY_WINDOW: usize = 50;

pub fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    match &cfg.data {
        DataSource::Synthetic => {
            let spec = SyntheticSpec {
                shape: cfg.synthetic_shape,
                n_train: cfg.synthetic_train,
                n_test: cfg.synthetic_test,
                defect_rate: cfg.synthetic_defect_rate,
                image_size: cfg.image_size,
                channels: cfg.channels(),
                seed: cfg.seed,
            };
            let mut ds = dataset::generate_synthetic_set(&spec)?;
            ds.class_name = cfg.class_name.clone();
            Ok(ds)
        }
        DataSource::Dir(root) => {
            let loaded = dataset::load_image_dir_report(root, &cfg.class_name)?;
            for (path, why) in &loaded.skipped {
                warn!("skipped {}: {why}", path.display());
            }
            Ok(dataset::preprocess(&loaded.dataset, cfg.image_size, cfg.grayscale)?)
        }
    }
}

/// Which samples of a split received noise.
#[derive(Debug, Clone)]
pub struct NoiseRecord {
    pub plan: NoisePlan,
    pub fraction: f64,
    pub eligible: usize,
    pub paths: Vec<String>,
}

impl NoiseRecord {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,path\n");
        for (i, p) in self.plan.selected_indices.iter().zip(&self.paths) {
            let _ = writeln!(out, "{i},{}", csv_field(p));
        }
        let _ = writeln!(
            out,
            "# {} of {} samples, fraction {}, mean {}, variance {}",
            self.paths.len(),
            self.eligible,
            self.fraction,
            self.plan.mean,
            self.plan.variance
        );
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn with_noise(enabled: bool, part: Dataset, cfg: &RunConfig, seed: u64) -> CliResult<(Dataset, Option<NoiseRecord>)> {
    if !enabled {
        return Ok((part, None));
    }
    let (noisy, plan) = dataset::inject_gaussian_noise(&part, cfg.noise_fraction, dataset::NOISE_MEAN, cfg.noise_variance, seed, NoiseScope::All)?;
    let paths = plan.selected_indices.iter().map(|&i| part.samples[i].source_path.clone()).collect();
    let record = NoiseRecord {
        plan,
        fraction: cfg.noise_fraction,
        eligible: part.len(),
        paths,
    };
    Ok((noisy, Some(record)))
}

/// Deterministic split of a dataset into fitting, validation and evaluation sets.
#[derive(Debug, Clone)]
pub struct Partition {
    pub fit: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub train_noise: Option<NoiseRecord>,
    pub test_noise: Option<NoiseRecord>,
}

impl Partition {
    pub fn eval_set(&self, split: EvalSplit) -> &Dataset {
        match split {
            EvalSplit::Test => &self.test,
            EvalSplit::Train => &self.fit,
            EvalSplit::Validation => &self.val,
        }
    }
}

/// Autoencoders fit on the train split and are evaluated on the test split.
/// The supervised CNN needs defects at training time, so it pools every
/// labelled image and holds out `holdout_fraction` of them for evaluation.
pub fn partition(cfg: &RunConfig, ds: &Dataset) -> CliResult<Partition> {
    let seeds = SeedStream::new(cfg.seed);
    let (train, test) = match cfg.model {
        ModelKind::Cnn => dataset::split_validation(ds, cfg.holdout_fraction, seeds.derive_seed("holdout"))?,
        _ => (ds.subset(Split::Train), ds.subset(Split::Test)),
    };
    if train.len() < 2 {
        return Err(CliError::Data(format!("{} training images; need at least 2", train.len())));
    }
    let (train, train_noise) = with_noise(cfg.noise_train, train, cfg, seeds.derive_seed("noise/train"))?;
    let (test, test_noise) = with_noise(cfg.noise_test, test, cfg, seeds.derive_seed("noise/test"))?;
    let (fit, val) = dataset::split_validation(&train, cfg.validation_fraction, seeds.derive_seed("validation"))?;
    Ok(Partition {
        fit,
        val,
        test,
        train_noise,
        test_noise,
    })
}

pub fn build_model(cfg: &RunConfig) -> CliResult<ModelGraph> {
    let seed = SeedStream::new(cfg.seed).derive_seed("init");
    let (c, s) = (cfg.channels(), cfg.image_size);
    let model = match cfg.model {
        ModelKind::Cnn => build_cnn(
            &CnnConfig {
                input: [c, s, s],
                filters: cfg.cnn_filters,
                hidden_units: cfg.cnn_hidden,
            },
            seed,
        )?,
        ModelKind::KdCae => build_kd_cae(
            &KdCaeConfig {
                channels: c,
                size: s,
                filters: cfg.kd_filters,
            },
            seed,
        )?,
        ModelKind::NiCae => build_ni_cae(
            &NiCaeConfig {
                channels: c,
                size: s,
                filters: cfg.ni_filters,
                bottleneck: cfg.ni_bottleneck,
            },
            seed,
        )?,
        ModelKind::Dcgan => return Err(CliError::config("dcgan runs build a generator/discriminator pair")),
    };
    Ok(model)
}

fn model_tag(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Cnn => arch::CNN_TAG,
        ModelKind::KdCae => arch::KD_CAE_TAG,
        ModelKind::NiCae => arch::NI_CAE_TAG,
        ModelKind::Dcgan => GENERATOR_TAG,
    }
}

/// Loads a checkpoint and insists it holds a `expected` model.
pub fn load_checkpoint(path: &Path, expected: &str) -> CliResult<ModelGraph> {
    if !path.exists() {
        return Err(CliError::Data(format!("checkpoint {} does not exist", path.display())));
    }
    let model = nn::load_model(path)?;
    if model.tag() != expected {
        return Err(CliError::config(format!(
            "checkpoint {} holds a `{}` model, but the config asks for `{expected}`",
            path.display(),
            model.tag()
        )));
    }
    Ok(model)
}

fn labels_tensor(ds: &Dataset) -> CliResult<Tensor<f32>> {
    let v = ds.labels().iter().map(|l| if l.is_defect() { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec([ds.len(), 1, 1, 1], v)?)
}

fn summary_rows(rows: &[(&str, String)]) -> Vec<(String, String)> {
    rows.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn write_summary(path: &Path, rows: &[(String, String)]) -> CliResult<()> {
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{}", csv_field(v));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Fits the latent density on the fitting set unless the density threshold is off.
pub fn build_scorer(cfg: &RunConfig, model: ModelGraph, fit: &Dataset) -> CliResult<CaeScorer> {
    let mut scorer = CaeScorer {
        model,
        kde: None,
        latent_pool: (cfg.latent_pool > 0).then_some(cfg.latent_pool),
    };
    if cfg.kde_threshold != ThresholdSpec::Off {
        let latents = scorer.latents_for_kde(&fit.batch()?)?;
        let bandwidth = cfg.bandwidth.map_or(Bandwidth::Auto, Bandwidth::Fixed);
        scorer.kde = Some(fit_kde(&latents, bandwidth)?);
    }
    Ok(scorer)
}

/// Fixed thresholds pass through; `calibrate:p` ones come from the validation scores.
pub fn resolve_thresholds(cfg: &RunConfig, scorer: &CaeScorer, val: &Dataset) -> CliResult<ThresholdSet> {
    let calibrating = [cfg.recon_threshold, cfg.kde_threshold]
        .iter()
        .any(|t| matches!(t, ThresholdSpec::Calibrate(_)));
    let val_scores = if calibrating { scorer.score(&val.batch()?)? } else { Vec::new() };
    let pick = |spec: ThresholdSpec, take: fn(&ThresholdSet) -> Option<f64>| -> CliResult<Option<f64>> {
        Ok(match spec {
            ThresholdSpec::Fixed(v) => Some(v),
            ThresholdSpec::Off => None,
            ThresholdSpec::Calibrate(p) => take(&calibrate_thresholds(&val_scores, p, CombineRule::ReconOnly)?),
        })
    };
    let recon = pick(cfg.recon_threshold, |t| t.recon)?;
    let kde = pick(cfg.kde_threshold, |t| t.kde)?;
    Ok(ThresholdSet::new(recon, kde, cfg.rule)?)
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let dir = &cfg.out;
    cfg.write_to(dir)?;
    let ds = load_dataset(cfg)?;
    info!("{}: {} images loaded", ds.class_name, ds.len());
    if cfg.model == ModelKind::Dcgan {
        return train_gan_run(cfg, &ds);
    }
    let part = partition(cfg, &ds)?;
    if let Some(noise) = &part.train_noise {
        fs::write(dir.join(NOISE_PLAN_FILE), noise.to_csv())?;
        info!("noise added to {} of {} training images", noise.paths.len(), noise.eligible);
    }
    let model = build_model(cfg)?;
    let (fit, val, loss) = if cfg.model == ModelKind::Cnn {
        (
            TrainData::supervised(part.fit.batch()?, labels_tensor(&part.fit)?)?,
            TrainData::supervised(part.val.batch()?, labels_tensor(&part.val)?)?,
            LossKind::Bce,
        )
    } else {
        (TrainData::autoencoder(part.fit.batch()?), TrainData::autoencoder(part.val.batch()?), LossKind::Mse)
    };
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        loss,
        patience: (cfg.patience > 0).then_some(cfg.patience),
        seed: SeedStream::new(cfg.seed).derive_seed("train"),
    };
    info!("training {} on {} images ({} validation)", cfg.model.name(), part.fit.len(), part.val.len());
    let outcome = pipelines::train(model, &fit, Some(&val), &tc)?;
    nn::save_model(&outcome.model, &dir.join(MODEL_FILE))?;
    fs::write(dir.join(HISTORY_FILE), outcome.history_csv())?;

    let mut rows = summary_rows(&[
        ("model", cfg.model.name().to_string()),
        ("epochs_run", outcome.history.len().to_string()),
        ("best_epoch", outcome.best_epoch.to_string()),
        ("stopped_after", outcome.stopped_after.map_or("none".into(), |e| e.to_string())),
        ("train_images", part.fit.len().to_string()),
        ("validation_images", part.val.len().to_string()),
        ("noise_selected", part.train_noise.as_ref().map_or(0, |n| n.paths.len()).to_string()),
    ]);
    if cfg.model.is_autoencoder() {
        let scorer = build_scorer(cfg, outcome.model, &part.fit)?;
        let ths = resolve_thresholds(cfg, &scorer, &part.val)?;
        for (name, v) in ths.named() {
            info!("{name} = {v}");
            rows.push((name, v.to_string()));
        }
        if let Some(kde) = &scorer.kde {
            rows.push(("kde_bandwidth".into(), kde.bandwidth().to_string()));
        }
    }
    write_summary(&dir.join(TRAIN_SUMMARY_FILE), &rows)?;
    match outcome.stopped_after {
        Some(e) => info!("early stop after epoch {e}; best epoch {}", outcome.best_epoch),
        None => info!("trained {} epochs; best epoch {}", outcome.history.len(), outcome.best_epoch),
    }
    Ok(())
}

fn gan_config(cfg: &RunConfig) -> GanConfig {
    GanConfig {
        z_dim: cfg.z_dim,
        image_size: cfg.image_size,
        channels: cfg.channels(),
        base_channels: cfg.base_channels,
        k: cfg.gan_k,
        lr_generator: cfg.lr_generator,
        lr_discriminator: cfg.lr_discriminator,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    }
}

fn train_gan_run(cfg: &RunConfig, ds: &Dataset) -> CliResult<()> {
    let dir = &cfg.out;
    let gc = gan_config(cfg);
    let mut pair = GanPair::new(&gc)?;
    let (train, noise) = with_noise(cfg.noise_train, ds.subset(Split::Train), cfg, SeedStream::new(cfg.seed).derive_seed("noise/train"))?;
    if train.len() < 2 {
        return Err(CliError::Data(format!("{} training images; need at least 2", train.len())));
    }
    if let Some(noise) = &noise {
        fs::write(dir.join(NOISE_PLAN_FILE), noise.to_csv())?;
    }
    info!("training dcgan for {} steps on {} images", cfg.steps, train.len());
    let result = gan::train_gan(&mut pair, &gan::to_signed(&train.batch()?), cfg.steps, &gc);
    // on a numeric failure the pair holds the last good state; keep it for inspection
    nn::save_model(&pair.generator, &dir.join(GENERATOR_FILE))?;
    nn::save_model(&pair.discriminator, &dir.join(DISCRIMINATOR_FILE))?;
    fs::write(dir.join(HISTORY_FILE), pair.history_csv())?;
    result?;
    let mean_d = pair.recent_mean_d(GAN_SUMMARY_WINDOW);
    write_summary(
        &dir.join(TRAIN_SUMMARY_FILE),
        &summary_rows(&[
            ("model", cfg.model.name().to_string()),
            ("steps", pair.history.len().to_string()),
            ("train_images", train.len().to_string()),
            ("mean_d_recent", mean_d.map_or("none".into(), |d| d.to_string())),
        ]),
    )?;
    if let Some(d) = mean_d {
        info!("mean discriminator output over the last {GAN_SUMMARY_WINDOW} steps: {d:.4}");
    }
    Ok(())
}

/// Scores the configured split and writes `eval/` inside the run directory.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<EvalReport> {
    if cfg.model == ModelKind::Dcgan {
        return Err(CliError::config("dcgan runs have no detector to evaluate; use `generate`"));
    }
    let ckpt = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join(MODEL_FILE));
    let model = load_checkpoint(&ckpt, model_tag(cfg.model))?;
    let expected = [cfg.channels(), cfg.image_size, cfg.image_size];
    if model.input_shape() != expected {
        return Err(CliError::config(format!(
            "checkpoint expects {:?} inputs, the config produces {expected:?}",
            model.input_shape()
        )));
    }
    let ds = load_dataset(cfg)?;
    let part = partition(cfg, &ds)?;
    let dir = cfg.out.join(EVAL_DIR);
    cfg.write_to(&dir)?;
    if let Some(noise) = &part.test_noise {
        fs::write(dir.join(NOISE_PLAN_FILE), noise.to_csv())?;
    }
    let set = part.eval_set(cfg.eval_split);
    if set.is_empty() {
        return Err(CliError::Data(format!("the {} split is empty", cfg.eval_split.name())));
    }
    let report = if cfg.model == ModelKind::Cnn {
        eval_cnn(cfg, &model, set, &dir)?
    } else {
        let scorer = build_scorer(cfg, model, &part.fit)?;
        let ths = resolve_thresholds(cfg, &scorer, &part.val)?;
        eval_cae(cfg, &scorer, &ths, set, &dir)?
    };
    report.write(&dir)?;
    let auc = report.roc_auc.map_or("undefined".to_string(), fmt6);
    info!("{} on {} {} images: f1 {} roc_auc {auc}", cfg.model.name(), set.len(), cfg.eval_split.name(), fmt6(report.f1));
    Ok(report)
}

fn eval_cnn(cfg: &RunConfig, model: &ModelGraph, set: &Dataset, dir: &Path) -> CliResult<EvalReport> {
    let probs = classify_supervised(model, &set.batch()?, cfg.cutoff)?;
    let samples: Vec<ScoredSample> = set
        .samples
        .iter()
        .zip(&probs)
        .map(|(s, &(decision, p))| ScoredSample {
            path: s.source_path.clone(),
            label: s.label,
            score: p,
            decision,
        })
        .collect();
    write_histogram(cfg, &samples, |s| s.score, "probability", Some(cfg.cutoff), dir)?;
    Ok(EvalReport::from_samples(&cfg.class_name, cfg.seed, vec![("cutoff".into(), cfg.cutoff)], samples)?)
}

fn eval_cae(cfg: &RunConfig, scorer: &CaeScorer, ths: &ThresholdSet, set: &Dataset, dir: &Path) -> CliResult<EvalReport> {
    let images = set.batch()?;
    let scores = scorer.score(&images)?;
    let rows: Vec<ScoreRow> = set
        .samples
        .iter()
        .zip(&scores)
        .map(|(s, sc)| ScoreRow {
            path: s.source_path.clone(),
            label: s.label,
            score: *sc,
            decision: decide_anomaly(sc, ths),
        })
        .collect();
    fs::write(dir.join(SCORES_FILE), score_csv(&rows))?;

    // the ranking score follows the rule: reconstruction error when it is used,
    // negated density otherwise, so larger always means more anomalous
    let rank = |s: &AnomalyScore| match (ths.rule.uses_recon(), s.kde_log_density) {
        (false, Some(d)) => -d,
        _ => s.recon_error,
    };
    let samples: Vec<ScoredSample> = rows
        .iter()
        .map(|r| ScoredSample {
            path: r.path.clone(),
            label: r.label,
            score: rank(&r.score),
            decision: r.decision,
        })
        .collect();
    let recon: Vec<(bool, f64)> = rows.iter().map(|r| (r.label.is_defect(), r.score.recon_error)).collect();
    write_histogram(cfg, &recon, |&(_, v)| v, "recon", ths.recon, dir)?;
    let dens: Vec<(bool, f64)> = rows
        .iter()
        .filter_map(|r| r.score.kde_log_density.map(|d| (r.label.is_defect(), d)))
        .collect();
    if !dens.is_empty() {
        write_histogram(cfg, &dens, |&(_, v)| v, "kde", ths.kde, dir)?;
    }

    let k = cfg.diagnostics.min(set.len());
    if k > 0 {
        let idx: Vec<usize> = (0..k).collect();
        let originals = pipelines::train::gather(&images, &idx);
        let recon = scorer.model.predict(&originals)?;
        let sources: Vec<String> = set.samples[..k].iter().map(|s| s.source_path.clone()).collect();
        pipelines::write_diagnostics(&dir.join(DIAGNOSTICS_DIR), &sources, &originals, &recon)?;
    }
    Ok(EvalReport::from_samples(&cfg.class_name, cfg.seed, ths.named(), samples)?)
}

trait Labelled {
    fn is_defect(&self) -> bool;
}

impl Labelled for ScoredSample {
    fn is_defect(&self) -> bool {
        self.label.is_defect()
    }
}

impl Labelled for (bool, f64) {
    fn is_defect(&self) -> bool {
        self.0
    }
}

/// `histogram_<name>.csv` plus a rendered `.pgm` with good and defect counts.
fn write_histogram<T: Labelled>(cfg: &RunConfig, items: &[T], value: impl Fn(&T) -> f64, name: &str, marker: Option<f64>, dir: &Path) -> CliResult<()> {
    let good: Vec<f64> = items.iter().filter(|s| !s.is_defect()).map(&value).collect();
    let defect: Vec<f64> = items.iter().filter(|s| s.is_defect()).map(&value).collect();
    let hist = score_histogram(&[("good", &good), ("defect", &defect)], cfg.bins)?;
    hist.write(&dir.join(format!("histogram_{name}.csv")), &dir.join(format!("histogram_{name}.pgm")), marker)?;
    Ok(())
}

/// Writes `n` images and a contact sheet under `generated/`; returns the image count.
pub fn cmd_generate(cfg: &RunConfig) -> CliResult<usize> {
    let ckpt = match (&cfg.checkpoint, cfg.model) {
        (Some(p), _) => p.clone(),
        (None, ModelKind::Dcgan) => cfg.out.join(GENERATOR_FILE),
        (None, other) => return Err(CliError::config(format!("`generate` needs a dcgan run; this one is `{}`", other.name()))),
    };
    let generator = load_checkpoint(&ckpt, GENERATOR_TAG)?;
    let images = gan::generate_samples(&generator, cfg.generate_n, cfg.seed)?;
    let dir = cfg.out.join(GENERATED_DIR);
    fs::create_dir_all(&dir)?;
    let ext = if images.shape()[1] == 3 { "ppm" } else { "pgm" };
    for i in 0..images.batch() {
        netpbm::write(&dir.join(format!("{i:05}.{ext}")), &images, i)?;
    }
    let sheet_path = dir.join(format!("sheet.{ext}"));
    let cols = match cfg.generate_columns {
        0 => (cfg.generate_n as f64).sqrt().ceil() as usize,
        c => c,
    };
    match gan::contact_sheet(&images, cols) {
        Some(sheet) => netpbm::write(&sheet_path, &sheet, 0)?,
        None if sheet_path.exists() => fs::remove_file(&sheet_path)?,
        None => {}
    }
    info!("wrote {} images to {}", images.batch(), dir.display());
    Ok(images.batch())
}

/// Renders the synthetic dataset to `<out>/<class>/` in the MVTec layout
/// (`train/good`, `test/<defect>`) plus a manifest, loadable as a data root.
pub fn cmd_synth(cfg: &RunConfig) -> CliResult<PathBuf> {
    if cfg.data != DataSource::Synthetic {
        return Err(CliError::config("`synth` renders the synthetic dataset; set `data.root = synthetic`"));
    }
    let ds = load_dataset(cfg)?;
    let dir = cfg.out.join(&cfg.class_name);
    dataset::write_cache(&ds, &dir)?;
    cfg.write_to(&cfg.out)?;
    info!("wrote {} images to {}", ds.len(), dir.display());
    Ok(dir)
}

/// One evaluated run as it appears in the comparison table.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub run: PathBuf,
    pub config: RunConfig,
    pub report: EvalReport,
}

fn read_run(dir: &Path) -> CliResult<ReportRow> {
    let eval = dir.join(EVAL_DIR);
    let raw = RawConfig::from_file(&eval.join(RESOLVED_CONFIG_FILE))?;
    let config = RunConfig::resolve(&raw, None)?;
    let report = EvalReport::read(&eval)?;
    Ok(ReportRow {
        run: dir.to_path_buf(),
        config,
        report,
    })
}

pub const REPORT_HEADER: &str = "run,model,class,noise_train,noise_test,n,tp,fp,tn,fn,f1,roc_auc,tau_re,tau_kd,cutoff";

/// Comparison table over evaluated runs, one row per run, sorted by model,
/// class and noise flags. Directories without an evaluation are skipped.
pub fn cmd_report(runs: &[PathBuf], out: Option<&Path>) -> CliResult<String> {
    let mut rows = Vec::new();
    for dir in runs {
        match read_run(dir) {
            Ok(r) => rows.push(r),
            Err(e) => warn!("skipping {}: not a completed run ({e})", dir.display()),
        }
    }
    if rows.is_empty() {
        return Err(CliError::Data("no completed run directories to report on".into()));
    }
    rows.sort_by(|a, b| {
        let key = |r: &ReportRow| (r.config.model.name(), r.config.class_name.clone(), r.config.noise_train, r.config.noise_test);
        key(a).cmp(&key(b)).then_with(|| a.run.cmp(&b.run))
    });
    let onoff = |b: bool| if b { "on" } else { "off" };
    let mut table = format!("{REPORT_HEADER}\n");
    for r in &rows {
        let (cfg, rep) = (&r.config, &r.report);
        let th = |name: &str| rep.thresholds.iter().find(|(k, _)| k == name).map(|(_, v)| fmt6(*v)).unwrap_or_default();
        let c = &rep.confusion;
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&r.run.display().to_string()),
            cfg.model.name(),
            csv_field(&cfg.class_name),
            onoff(cfg.noise_train),
            onoff(cfg.noise_test),
            c.total(),
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            fmt6(rep.f1),
            rep.roc_auc.map_or("undefined".to_string(), fmt6),
            th("tau_re"),
            th("tau_kd"),
            th("cutoff"),
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(REPORT_FILE), &table)?;
        info!("wrote {}", dir.join(REPORT_FILE).display());
    }
    Ok(table)
}
