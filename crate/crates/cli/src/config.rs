//! Run configuration: `key = value` files with `[section]` headers, CLI
//! overrides, defaults for every key, and a resolved echo for provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anomaly_core::dataset::ShapeKind;
use anomaly_core::pipelines::CombineRule;
use log::warn;

use crate::error::{CliError, CliResult};

pub const DATA_ROOT_ENV: &str = "ANOMALY_DATA_ROOT";
pub const RESOLVED_CONFIG_FILE: &str = "config.cfg";

/// One recognised key: canonical `section.name`, its CLI flag, and the default.
/// `None` marks a required key.
struct Key {
    name: &'static str,
    flag: &'static str,
    default: Option<&'static str>,
}

const fn key(name: &'static str, flag: &'static str, default: &'static str) -> Key {
    Key {
        name,
        flag,
        default: Some(default),
    }
}

const KEYS: &[Key] = &[
    Key {
        name: "model",
        flag: "model",
        default: None,
    },
    key("class", "class", ""),
    key("seed", "seed", "0"),
    key("out", "out", "run"),
    key("data.root", "data-root", ""),
    key("data.image_size", "image-size", "128"),
    key("data.grayscale", "grayscale", "on"),
    key("data.synthetic_shape", "synthetic-shape", "disk"),
    key("data.synthetic_train", "synthetic-train", "100"),
    key("data.synthetic_test", "synthetic-test", "40"),
    key("data.synthetic_defect_rate", "synthetic-defect-rate", "0.5"),
    key("train.epochs", "epochs", "50"),
    key("train.steps", "steps", "2000"),
    key("train.batch_size", "batch-size", "16"),
    key("train.learning_rate", "learning-rate", "0.001"),
    key("train.patience", "patience", "5"),
    key("train.validation_fraction", "validation-fraction", "0.2"),
    key("train.holdout_fraction", "holdout-fraction", "0.3"),
    key("thresholds.recon", "recon-threshold", "calibrate:95"),
    key("thresholds.kde", "kde-threshold", "calibrate:95"),
    key("thresholds.rule", "rule", "or"),
    key("thresholds.cutoff", "cutoff", "0.5"),
    key("thresholds.bandwidth", "bandwidth", "auto"),
    key("thresholds.latent_pool", "latent-pool", "0"),
    key("noise.train", "noise-train", "auto"),
    key("noise.test", "noise-test", "off"),
    key("noise.fraction", "noise-fraction", "0.1"),
    key("noise.variance", "noise-variance", "0.001"),
    key("arch.kd_filters", "kd-filters", "32,64,128"),
    key("arch.ni_filters", "ni-filters", "128,64,16,8,4"),
    key("arch.ni_bottleneck", "ni-bottleneck", "512"),
    key("arch.cnn_filters", "cnn-filters", "16"),
    key("arch.cnn_hidden", "cnn-hidden", "64"),
    key("gan.z_dim", "z-dim", "100"),
    key("gan.base_channels", "base-channels", "16"),
    key("gan.k", "gan-k", "1"),
    key("gan.lr_generator", "lr-generator", "0.0002"),
    key("gan.lr_discriminator", "lr-discriminator", "0.0002"),
    key("eval.split", "eval-split", "test"),
    key("eval.checkpoint", "checkpoint", ""),
    key("eval.bins", "bins", "20"),
    key("eval.diagnostics", "diagnostics", "8"),
    key("generate.n", "n", "16"),
    key("generate.columns", "columns", "0"),
];

const SECTIONS: &[&str] = &["data", "train", "thresholds", "noise", "arch", "gan", "eval", "generate"];

fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

fn lookup_flag(flag: &str) -> Option<&'static Key> {
    KEYS.iter()
        .find(|k| k.flag == flag)
        .or_else(|| lookup(flag))
        .or_else(|| lookup(&flag.replacen('-', ".", 1).replace('-', "_")))
}

/// Unresolved `key -> value` pairs as written by the user.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<&'static str, String>,
}

impl RawConfig {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    pub fn set(&mut self, name: &str, value: impl Into<String>) -> CliResult<()> {
        let k = lookup(name).ok_or_else(|| CliError::config(format!("unknown key `{name}`")))?;
        self.values.insert(k.name, value.into());
        Ok(())
    }

    /// Parses config text. `origin` only labels diagnostics.
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let mut raw = RawConfig::default();
        let mut section = String::new();
        for (lineno, line) in text.lines().enumerate() {
            let at = format!("{origin}:{}", lineno + 1);
            let line = strip_comment(line).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::config(format!("{at}: malformed section header")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(CliError::config(format!("{at}: unknown section `[{name}]`")));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("{at}: expected `key = value`")))?;
            let k = k.trim();
            let name = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            let spec = lookup(&name).ok_or_else(|| CliError::config(format!("{at}: unknown key `{name}`")))?;
            if raw.values.contains_key(spec.name) {
                warn!("{at}: duplicate key `{name}`, the last value wins");
            }
            raw.values.insert(spec.name, unquote(v.trim()).to_string());
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        if let Some(name) = path.to_str().and_then(|p| p.strip_prefix("builtin:")) {
            let text = bundled_config(name).ok_or_else(|| CliError::config(format!("no bundled config named `{name}`")))?;
            return Self::parse(text, &format!("builtin:{name}"));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies `--flag value` / `--flag=value` pairs on top of the file values.
    pub fn apply_overrides(&mut self, args: &[String]) -> CliResult<()> {
        let mut seen = Vec::new();
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let flag = arg
                .strip_prefix("--")
                .ok_or_else(|| CliError::config(format!("unexpected argument `{arg}`; overrides look like `--key value`")))?;
            let (flag, value) = match flag.split_once('=') {
                Some((f, v)) => (f, v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| CliError::config(format!("`--{flag}` needs a value")))?;
                    (flag, v.clone())
                }
            };
            let spec = lookup_flag(flag).ok_or_else(|| CliError::config(format!("unknown key `--{flag}`")))?;
            if seen.contains(&spec.name) {
                warn!("`--{flag}` given twice, the last value wins");
            }
            seen.push(spec.name);
            self.values.insert(spec.name, value);
        }
        Ok(())
    }
}

fn strip_comment(line: &str) -> &str {
    let t = line.trim_start();
    if t.starts_with('#') || t.starts_with(';') {
        return "";
    }
    // an inline `#` only starts a comment after whitespace, so paths may contain it
    match line.find(" #").or_else(|| line.find("\t#")) {
        Some(i) => &line[..i],
        None => line,
    }
}

fn unquote(v: &str) -> &str {
    if v.len() >= 2 && ((v.starts_with('"') && v.ends_with('"')) || (v.starts_with('\'') && v.ends_with('\''))) {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

/// Reference configurations for the five MVTec classes. They need the
/// dataset on disk (`data.root` or the environment fallback).
pub const BUNDLED: &[(&str, &str)] = &[
    ("toothbrush", include_str!("../configs/toothbrush.cfg")),
    ("bottle", include_str!("../configs/bottle.cfg")),
    ("screw", include_str!("../configs/screw.cfg")),
    ("leather", include_str!("../configs/leather.cfg")),
    ("transistor", include_str!("../configs/transistor.cfg")),
];

pub fn bundled_config(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".cfg").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Cnn,
    KdCae,
    NiCae,
    Dcgan,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::KdCae => "kd-cae",
            ModelKind::NiCae => "ni-cae",
            ModelKind::Dcgan => "dcgan",
        }
    }

    pub fn is_autoencoder(self) -> bool {
        matches!(self, ModelKind::KdCae | ModelKind::NiCae)
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cnn" => Ok(ModelKind::Cnn),
            "kd-cae" | "kdcae" => Ok(ModelKind::KdCae),
            "ni-cae" | "nicae" => Ok(ModelKind::NiCae),
            "dcgan" | "gan" => Ok(ModelKind::Dcgan),
            _ => Err("expected cnn, kd-cae, ni-cae or dcgan".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Dir(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    Fixed(f64),
    /// Percentile of the good-only validation scores.
    Calibrate(f64),
    Off,
}

impl FromStr for ThresholdSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" | "none" => Ok(ThresholdSpec::Off),
            "calibrate" => Ok(ThresholdSpec::Calibrate(anomaly_core::pipelines::scoring::DEFAULT_PERCENTILE)),
            _ => {
                if let Some(p) = s.strip_prefix("calibrate:") {
                    let p: f64 = p.trim().parse().map_err(|_| format!("bad percentile `{p}`"))?;
                    if !(0.0..=100.0).contains(&p) {
                        return Err(format!("percentile {p} outside [0, 100]"));
                    }
                    Ok(ThresholdSpec::Calibrate(p))
                } else {
                    let v: f64 = s.parse().map_err(|_| "expected a number, `calibrate:p` or `off`".to_string())?;
                    if !v.is_finite() {
                        return Err("threshold must be finite".into());
                    }
                    Ok(ThresholdSpec::Fixed(v))
                }
            }
        }
    }
}

impl std::fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ThresholdSpec::Fixed(v) => write!(f, "{v}"),
            ThresholdSpec::Calibrate(p) => write!(f, "calibrate:{p}"),
            ThresholdSpec::Off => f.write_str("off"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Test,
    Train,
    Validation,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Test => "test",
            EvalSplit::Train => "train",
            EvalSplit::Validation => "validation",
        }
    }
}

impl FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "test" => Ok(EvalSplit::Test),
            "train" => Ok(EvalSplit::Train),
            "validation" | "val" => Ok(EvalSplit::Validation),
            _ => Err("expected test, train or validation".into()),
        }
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub class_name: String,
    pub seed: u64,
    pub out: PathBuf,

    pub data: DataSource,
    pub image_size: usize,
    pub grayscale: bool,
    pub synthetic_shape: ShapeKind,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub synthetic_defect_rate: f64,

    pub epochs: usize,
    /// GAN iterations.
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// 0 disables early stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    /// CNN only: share of the labelled pool held out for evaluation.
    pub holdout_fraction: f64,

    pub recon_threshold: ThresholdSpec,
    pub kde_threshold: ThresholdSpec,
    pub rule: CombineRule,
    pub cutoff: f64,
    /// `None` picks the bandwidth automatically.
    pub bandwidth: Option<f64>,
    /// 0 keeps latents unpooled.
    pub latent_pool: usize,

    pub noise_train: bool,
    pub noise_test: bool,
    pub noise_fraction: f64,
    pub noise_variance: f64,

    pub kd_filters: [usize; 3],
    pub ni_filters: [usize; 5],
    pub ni_bottleneck: usize,
    pub cnn_filters: usize,
    pub cnn_hidden: usize,

    pub z_dim: usize,
    pub base_channels: usize,
    pub gan_k: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,

    pub eval_split: EvalSplit,
    /// Empty means the checkpoint inside the run directory.
    pub checkpoint: Option<PathBuf>,
    pub bins: usize,
    pub diagnostics: usize,

    pub generate_n: usize,
    /// 0 picks a near-square grid.
    pub generate_columns: usize,
}

struct Resolver<'a> {
    raw: &'a RawConfig,
}

impl Resolver<'_> {
    fn text(&self, name: &str) -> &str {
        let spec = lookup(name).expect("key table covers every resolved field");
        self.raw.get(name).or(spec.default).unwrap_or_default()
    }

    fn parse<T: FromStr>(&self, name: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.text(name);
        v.parse()
            .map_err(|e| CliError::config(format!("unparsable value for `{name}`: `{v}` ({e})")))
    }

    fn fraction(&self, name: &str, open: bool) -> CliResult<f64> {
        let v: f64 = self.parse(name)?;
        let ok = if open { v > 0.0 && v < 1.0 } else { (0.0..=1.0).contains(&v) };
        if !ok {
            return Err(CliError::config(format!("`{name}` = {v} is outside the allowed range")));
        }
        Ok(v)
    }

    fn positive<T: FromStr + PartialOrd + Default + Copy + std::fmt::Display>(&self, name: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        let v: T = self.parse(name)?;
        if v <= T::default() {
            return Err(CliError::config(format!("`{name}` must be positive, got {v}")));
        }
        Ok(v)
    }

    fn flag(&self, name: &str) -> CliResult<bool> {
        parse_bool(self.text(name)).ok_or_else(|| {
            CliError::config(format!("unparsable value for `{name}`: `{}` (expected on or off)", self.text(name)))
        })
    }

    fn list(&self, name: &str) -> CliResult<Vec<usize>> {
        let v = self.text(name);
        let items: Result<Vec<usize>, _> = v.split(',').map(|s| s.trim().parse::<usize>()).collect();
        match items {
            Ok(xs) if !xs.is_empty() && xs.iter().all(|&x| x > 0) => Ok(xs),
            _ => Err(CliError::config(format!("unparsable value for `{name}`: `{v}` (expected positive integers separated by commas)"))),
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Some(true),
        "off" | "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

impl RunConfig {
    /// Resolves raw values against the defaults. An empty `data.root` falls
    /// back to `data_root_env` (normally `$ANOMALY_DATA_ROOT`).
    pub fn resolve(raw: &RawConfig, data_root_env: Option<&str>) -> CliResult<Self> {
        let r = Resolver { raw };
        let model: ModelKind = match raw.get("model") {
            Some(m) if !m.is_empty() => r.parse("model")?,
            _ => return Err(CliError::config("missing required key `model`")),
        };
        let synthetic_shape: ShapeKind = r.parse("data.synthetic_shape")?;
        let root = match r.text("data.root") {
            "" => data_root_env.unwrap_or_default(),
            v => v,
        };
        let data = match root {
            "" => {
                return Err(CliError::config(format!("no dataset: set `data.root` (a directory or `synthetic`) or ${DATA_ROOT_ENV}")))
            }
            "synthetic" => DataSource::Synthetic,
            dir => DataSource::Dir(PathBuf::from(dir)),
        };
        let class_name = match (r.text("class"), &data) {
            ("", DataSource::Synthetic) => match synthetic_shape {
                ShapeKind::Disk => "synthetic-disks".to_string(),
                ShapeKind::Rectangle => "synthetic-rectangles".to_string(),
            },
            ("", DataSource::Dir(_)) => return Err(CliError::config("`class` is required with a dataset directory")),
            (c, _) => c.to_string(),
        };
        let kd = r.list("arch.kd_filters")?;
        let kd_filters: [usize; 3] = kd
            .as_slice()
            .try_into()
            .map_err(|_| CliError::config("`arch.kd_filters` needs exactly three values"))?;
        let ni_filters: [usize; 5] = r
            .list("arch.ni_filters")?
            .as_slice()
            .try_into()
            .map_err(|_| CliError::config("`arch.ni_filters` needs exactly five values"))?;
        let bandwidth = match r.text("thresholds.bandwidth") {
            "auto" => None,
            _ => Some(r.positive::<f64>("thresholds.bandwidth")?),
        };
        let noise_train = match r.text("noise.train") {
            "auto" => model == ModelKind::NiCae,
            _ => r.flag("noise.train")?,
        };
        let checkpoint = match r.text("eval.checkpoint") {
            "" => None,
            p => Some(PathBuf::from(p)),
        };
        let noise_variance: f64 = r.parse("noise.variance")?;
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(CliError::config("`noise.variance` must be >= 0"));
        }
        let cfg = RunConfig {
            model,
            class_name,
            seed: r.parse("seed")?,
            out: PathBuf::from(r.text("out")),
            data,
            image_size: r.positive("data.image_size")?,
            grayscale: r.flag("data.grayscale")?,
            synthetic_shape,
            synthetic_train: r.parse("data.synthetic_train")?,
            synthetic_test: r.parse("data.synthetic_test")?,
            synthetic_defect_rate: r.fraction("data.synthetic_defect_rate", false)?,
            epochs: r.parse("train.epochs")?,
            steps: r.parse("train.steps")?,
            batch_size: r.positive("train.batch_size")?,
            learning_rate: r.positive("train.learning_rate")?,
            patience: r.parse("train.patience")?,
            validation_fraction: r.fraction("train.validation_fraction", true)?,
            holdout_fraction: r.fraction("train.holdout_fraction", true)?,
            recon_threshold: r.parse("thresholds.recon")?,
            kde_threshold: r.parse("thresholds.kde")?,
            rule: r.parse("thresholds.rule")?,
            cutoff: r.fraction("thresholds.cutoff", false)?,
            bandwidth,
            latent_pool: r.parse("thresholds.latent_pool")?,
            noise_train,
            noise_test: r.flag("noise.test")?,
            noise_fraction: r.fraction("noise.fraction", false)?,
            noise_variance,
            kd_filters,
            ni_filters,
            ni_bottleneck: r.positive("arch.ni_bottleneck")?,
            cnn_filters: r.positive("arch.cnn_filters")?,
            cnn_hidden: r.positive("arch.cnn_hidden")?,
            z_dim: r.positive("gan.z_dim")?,
            base_channels: r.positive("gan.base_channels")?,
            gan_k: r.positive("gan.k")?,
            lr_generator: r.positive("gan.lr_generator")?,
            lr_discriminator: r.positive("gan.lr_discriminator")?,
            eval_split: r.parse("eval.split")?,
            checkpoint,
            bins: r.parse("eval.bins")?,
            diagnostics: r.parse("eval.diagnostics")?,
            generate_n: r.parse("generate.n")?,
            generate_columns: r.parse("generate.columns")?,
        };
        if cfg.bins < 2 {
            return Err(CliError::config("`eval.bins` must be at least 2"));
        }
        Ok(cfg)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let onoff = |b: bool| if b { "on" } else { "off" }.to_string();
        let list = |xs: &[usize]| xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let root = match &self.data {
            DataSource::Synthetic => "synthetic".to_string(),
            DataSource::Dir(p) => p.display().to_string(),
        };
        let shape = match self.synthetic_shape {
            ShapeKind::Disk => "disk",
            ShapeKind::Rectangle => "rect",
        };
        vec![
            ("model", self.model.name().to_string()),
            ("class", self.class_name.clone()),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("data.root", root),
            ("data.image_size", self.image_size.to_string()),
            ("data.grayscale", onoff(self.grayscale)),
            ("data.synthetic_shape", shape.to_string()),
            ("data.synthetic_train", self.synthetic_train.to_string()),
            ("data.synthetic_test", self.synthetic_test.to_string()),
            ("data.synthetic_defect_rate", self.synthetic_defect_rate.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.steps", self.steps.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.learning_rate", self.learning_rate.to_string()),
            ("train.patience", self.patience.to_string()),
            ("train.validation_fraction", self.validation_fraction.to_string()),
            ("train.holdout_fraction", self.holdout_fraction.to_string()),
            ("thresholds.recon", self.recon_threshold.to_string()),
            ("thresholds.kde", self.kde_threshold.to_string()),
            ("thresholds.rule", self.rule.name().to_string()),
            ("thresholds.cutoff", self.cutoff.to_string()),
            ("thresholds.bandwidth", self.bandwidth.map_or("auto".to_string(), |h| h.to_string())),
            ("thresholds.latent_pool", self.latent_pool.to_string()),
            ("noise.train", onoff(self.noise_train)),
            ("noise.test", onoff(self.noise_test)),
            ("noise.fraction", self.noise_fraction.to_string()),
            ("noise.variance", self.noise_variance.to_string()),
            ("arch.kd_filters", list(&self.kd_filters)),
            ("arch.ni_filters", list(&self.ni_filters)),
            ("arch.ni_bottleneck", self.ni_bottleneck.to_string()),
            ("arch.cnn_filters", self.cnn_filters.to_string()),
            ("arch.cnn_hidden", self.cnn_hidden.to_string()),
            ("gan.z_dim", self.z_dim.to_string()),
            ("gan.base_channels", self.base_channels.to_string()),
            ("gan.k", self.gan_k.to_string()),
            ("gan.lr_generator", self.lr_generator.to_string()),
            ("gan.lr_discriminator", self.lr_discriminator.to_string()),
            ("eval.split", self.eval_split.name().to_string()),
            ("eval.checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("eval.bins", self.bins.to_string()),
            ("eval.diagnostics", self.diagnostics.to_string()),
            ("generate.n", self.generate_n.to_string()),
            ("generate.columns", self.generate_columns.to_string()),
        ]
    }

    /// Every key with its resolved value, grouped by section. Parsing the
    /// result gives back an identical config.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        let mut section = "";
        for (name, value) in self.entries() {
            let (sec, key) = name.split_once('.').unwrap_or(("", name));
            if sec != section {
                let _ = writeln!(out, "\n[{sec}]");
                section = sec;
            }
            let value = if value.is_empty() || value.contains(" #") || value.trim() != value {
                format!("\"{value}\"")
            } else {
                value
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn write_to(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RESOLVED_CONFIG_FILE), self.to_text())?;
        Ok(())
    }

    pub fn channels(&self) -> usize {
        if self.grayscale {
            1
        } else {
            3
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str, overrides: &[&str]) -> CliResult<RunConfig> {
        let mut raw = RawConfig::parse(text, "test")?;
        raw.apply_overrides(&overrides.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
        RunConfig::resolve(&raw, Some("synthetic"))
    }

    #[test]
    fn empty_file_plus_model_gives_defaults() {
        let c = resolve("", &["--model", "kd-cae"]).unwrap();
        assert_eq!(c.model, ModelKind::KdCae);
        assert_eq!(c.image_size, 128);
        assert_eq!(c.rule, CombineRule::Or);
        assert_eq!(c.recon_threshold, ThresholdSpec::Calibrate(95.0));
        assert_eq!(c.patience, 5);
        assert!(!c.noise_train);
        assert_eq!(c.data, DataSource::Synthetic);
        assert_eq!(c.class_name, "synthetic-disks");
    }

    #[test]
    fn missing_model_is_an_error() {
        let e = resolve("seed = 3\n", &[]).unwrap_err();
        assert!(e.to_string().contains("model"), "{e}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        assert!(resolve("model = cnn\nlearning = 3\n", &[]).is_err());
        assert!(resolve("model = cnn\n[bogus]\n", &[]).is_err());
        assert!(resolve("model = cnn\n[train]\nimage_size = 3\n", &[]).is_err());
        assert!(resolve("model = cnn\n", &["--no-such-key", "1"]).is_err());
    }

    #[test]
    fn unparsable_values_are_rejected() {
        for bad in ["[train]\nepochs = many", "[noise]\ntest = maybe", "[thresholds]\nrecon = calibrate:101", "[arch]\nkd_filters = 1,2"] {
            let e = resolve(&format!("model = kd-cae\n{bad}\n"), &[]).unwrap_err();
            assert!(e.to_string().contains("config error"), "{e}");
        }
        assert!(resolve("model = resnet\n", &[]).is_err());
    }

    #[test]
    fn duplicate_key_last_wins() {
        let c = resolve("model = cnn\n[train]\nepochs = 3\nepochs = 9\n", &[]).unwrap();
        assert_eq!(c.epochs, 9);
    }

    #[test]
    fn overrides_beat_the_file() {
        let text = "model = cnn\nseed = 1\n[noise]\ntrain = off\n";
        let c = resolve(text, &["--seed", "8", "--noise-train", "on", "--model=ni-cae", "--train.epochs", "4"]).unwrap();
        assert_eq!((c.seed, c.noise_train, c.model, c.epochs), (8, true, ModelKind::NiCae, 4));
        assert!(resolve(text, &["--seed"]).is_err());
        assert!(resolve(text, &["seed", "3"]).is_err());
    }

    #[test]
    fn noise_train_auto_follows_model() {
        assert!(resolve("model = ni-cae", &[]).unwrap().noise_train);
        assert!(!resolve("model = kd-cae", &[]).unwrap().noise_train);
    }

    #[test]
    fn comments_and_quotes() {
        let c = resolve("# header\nmodel = dcgan # trailing\nclass = 'x'\n[data]\nroot = \"/tmp/a#b\"\n", &[]).unwrap();
        assert_eq!(c.data, DataSource::Dir("/tmp/a#b".into()));
        assert_eq!(c.class_name, "x");
    }

    #[test]
    fn data_root_falls_back_to_environment_value() {
        let raw = RawConfig::parse("model = cnn\nclass = bottle\n", "t").unwrap();
        let c = RunConfig::resolve(&raw, Some("/data/mvtec")).unwrap();
        assert_eq!(c.data, DataSource::Dir("/data/mvtec".into()));
        assert!(RunConfig::resolve(&raw, None).is_err());
        let raw = RawConfig::parse("model = cnn\n[data]\nroot = /data\n", "t").unwrap();
        assert!(RunConfig::resolve(&raw, None).is_err(), "class is required for a directory");
    }

    #[test]
    fn echo_round_trips() {
        let c = resolve("model = ni-cae\n[thresholds]\nrecon = 0.0041\nbandwidth = 0.3\n", &["--out", "runs/a b", "--checkpoint", "m.anomf"]).unwrap();
        let back = RunConfig::resolve(&RawConfig::parse(&c.to_text(), "echo").unwrap(), None).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bundled_bottle_config() {
        let raw = RawConfig::from_file(Path::new("builtin:bottle")).unwrap();
        let c = RunConfig::resolve(&raw, Some("/data/mvtec")).unwrap();
        assert_eq!(c.model, ModelKind::KdCae);
        assert_eq!(c.class_name, "bottle");
        assert_eq!(c.recon_threshold, ThresholdSpec::Fixed(0.004));
        assert_eq!(c.kde_threshold, ThresholdSpec::Fixed(5600.0));
        assert_eq!(c.image_size, 128);
    }

    #[test]
    fn every_bundled_config_resolves() {
        let expected = [
            ("toothbrush", 0.005, 5630.0),
            ("bottle", 0.004, 5600.0),
            ("screw", 0.004, 5625.0),
            ("leather", 0.003, 5651.0),
            ("transistor", 0.0055, 5350.0),
        ];
        for (name, re, kd) in expected {
            let c = RunConfig::resolve(&RawConfig::parse(bundled_config(name).unwrap(), name).unwrap(), Some("/d")).unwrap();
            assert_eq!(c.class_name, name);
            assert_eq!(c.recon_threshold, ThresholdSpec::Fixed(re), "{name}");
            assert_eq!(c.kde_threshold, ThresholdSpec::Fixed(kd), "{name}");
        }
    }
}
