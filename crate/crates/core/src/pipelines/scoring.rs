//! Anomaly scores, thresholds and decisions.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::metrics::fmt6;
use crate::nn::ModelGraph;
use crate::pipelines::kde::{kde_log_density, pool_latent, KdeModel};
use crate::tensor::Tensor;

pub const DEFAULT_PERCENTILE: f64 = 95.0;
pub const DEFAULT_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CombineRule {
    ReconOnly,
    KdeOnly,
    #[default]
    Or,
    And,
}

impl CombineRule {
    pub fn name(self) -> &'static str {
        match self {
            CombineRule::ReconOnly => "recon_only",
            CombineRule::KdeOnly => "kde_only",
            CombineRule::Or => "or",
            CombineRule::And => "and",
        }
    }

    pub fn uses_recon(self) -> bool {
        self != CombineRule::KdeOnly
    }

    pub fn uses_kde(self) -> bool {
        self != CombineRule::ReconOnly
    }
}

impl fmt::Display for CombineRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CombineRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recon_only" => Ok(CombineRule::ReconOnly),
            "kde_only" => Ok(CombineRule::KdeOnly),
            "or" => Ok(CombineRule::Or),
            "and" => Ok(CombineRule::And),
            other => Err(Error::invalid("combine_rule", format!("unknown rule `{other}` (recon_only, kde_only, or, and)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSet {
    pub recon: Option<f64>,
    /// On the log-density scale.
    pub kde: Option<f64>,
    pub rule: CombineRule,
}

impl ThresholdSet {
    /// Checks that every threshold the rule reads is present.
    pub fn new(recon: Option<f64>, kde: Option<f64>, rule: CombineRule) -> Result<Self> {
        let t = Self { recon, kde, rule };
        t.validate()?;
        Ok(t)
    }

    pub fn recon_only(tau_re: f64) -> Self {
        Self {
            recon: Some(tau_re),
            kde: None,
            rule: CombineRule::ReconOnly,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rule.uses_recon() && self.recon.is_none() {
            return Err(Error::invalid("thresholds", format!("rule `{}` needs a reconstruction threshold", self.rule)));
        }
        if self.rule.uses_kde() && self.kde.is_none() {
            return Err(Error::invalid("thresholds", format!("rule `{}` needs a density threshold", self.rule)));
        }
        if self.recon.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::invalid("thresholds", "reconstruction threshold must be positive"));
        }
        Ok(())
    }

    pub fn named(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        if let Some(t) = self.recon {
            out.push(("tau_re".to_string(), t));
        }
        if let Some(t) = self.kde {
            out.push(("tau_kd".to_string(), t));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyScore {
    pub recon_error: f64,
    pub kde_log_density: Option<f64>,
}

/// `recon_error > tau_re` and `kde_log_density < tau_kd` (both strict),
/// combined by the rule. A flag whose score or threshold is missing is off.
pub fn decide_anomaly(score: &AnomalyScore, thresholds: &ThresholdSet) -> Label {
    let recon = thresholds.recon.is_some_and(|t| score.recon_error > t);
    let kde = match (score.kde_log_density, thresholds.kde) {
        (Some(v), Some(t)) => v < t,
        _ => false,
    };
    let defect = match thresholds.rule {
        CombineRule::ReconOnly => recon,
        CombineRule::KdeOnly => kde,
        CombineRule::Or => recon || kde,
        CombineRule::And => recon && kde,
    };
    if defect {
        Label::Defect
    } else {
        Label::Good
    }
}

/// Linear-interpolation percentile (`p` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::invalid("percentile", format!("p = {p} outside [0,100]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

/// Thresholds from good-only validation scores: `tau_re` is the `p`-th
/// percentile of reconstruction errors, `tau_kd` the `(100 - p)`-th
/// percentile of log densities (when densities are present).
pub fn calibrate_thresholds(scores: &[AnomalyScore], p: f64, rule: CombineRule) -> Result<ThresholdSet> {
    if scores.is_empty() {
        return Err(Error::Data("calibration needs at least one validation image".into()));
    }
    let recon: Vec<f64> = scores.iter().map(|s| s.recon_error).collect();
    let kde: Vec<f64> = scores.iter().filter_map(|s| s.kde_log_density).collect();
    let tau_re = percentile(&recon, p)?;
    let tau_kd = if kde.len() == scores.len() { Some(percentile(&kde, 100.0 - p)?) } else { None };
    ThresholdSet::new(Some(tau_re.max(f64::MIN_POSITIVE)), tau_kd, rule)
}

const CHUNK: usize = 16;

fn chunked<F: FnMut(&Tensor<f32>) -> Result<()>>(images: &Tensor<f32>, mut f: F) -> Result<()> {
    let n = images.batch();
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        f(&crate::pipelines::train::gather(images, &idx))?;
        start = end;
    }
    Ok(())
}

/// Per-image mean squared error between each input and its reconstruction.
pub fn reconstruction_errors(model: &ModelGraph, images: &Tensor<f32>) -> Result<Vec<f64>> {
    let [_, c, h, w] = images.shape();
    if model.output_shape() != [c, h, w] {
        return Err(Error::invalid(
            "reconstruction_error",
            format!("model output {:?} does not match image {:?}", model.output_shape(), [c, h, w]),
        ));
    }
    let mut out = Vec::with_capacity(images.batch());
    chunked(images, |x| {
        let y = model.predict(x)?;
        for i in 0..x.batch() {
            let d: f64 = x
                .sample(i)
                .iter()
                .zip(y.sample(i))
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum();
            out.push(d / x.sample_len() as f64);
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn reconstruction_error(model: &ModelGraph, image: &Tensor<f32>) -> Result<f64> {
    if image.batch() != 1 {
        return Err(Error::shape("reconstruction_error", "batch", 1, image.batch()));
    }
    Ok(reconstruction_errors(model, image)?[0])
}

/// Flattened bottleneck activations, one vector per image.
pub fn encode_latents(model: &ModelGraph, images: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
    let latent = model
        .latent_layer()
        .ok_or_else(|| Error::invalid("encode_latent", format!("model `{}` has no designated bottleneck layer", model.tag())))?;
    let mut out = Vec::with_capacity(images.batch());
    chunked(images, |x| {
        let z = model.predict_prefix(x, latent + 1)?;
        out.extend((0..z.batch()).map(|i| z.sample(i).iter().map(|&v| f64::from(v)).collect()));
        Ok(())
    })?;
    Ok(out)
}

pub fn encode_latent(model: &ModelGraph, image: &Tensor<f32>) -> Result<Vec<f64>> {
    if image.batch() != 1 {
        return Err(Error::shape("encode_latent", "batch", 1, image.batch()));
    }
    Ok(encode_latents(model, image)?.remove(0))
}

/// A trained autoencoder plus the optional latent density model.
#[derive(Debug, Clone)]
pub struct CaeScorer {
    pub model: ModelGraph,
    pub kde: Option<KdeModel>,
    /// Average-pool latents to this many values before the KDE.
    pub latent_pool: Option<usize>,
}

impl CaeScorer {
    pub fn latents_for_kde(&self, images: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
        let z = encode_latents(&self.model, images)?;
        match self.latent_pool {
            Some(dim) => z.iter().map(|v| pool_latent(v, dim)).collect(),
            None => Ok(z),
        }
    }

    pub fn score(&self, images: &Tensor<f32>) -> Result<Vec<AnomalyScore>> {
        let recon = reconstruction_errors(&self.model, images)?;
        let dens = match &self.kde {
            Some(kde) => self
                .latents_for_kde(images)?
                .iter()
                .map(|z| kde_log_density(kde, z).map(Some))
                .collect::<Result<Vec<_>>>()?,
            None => vec![None; recon.len()],
        };
        Ok(recon
            .into_iter()
            .zip(dens)
            .map(|(recon_error, kde_log_density)| AnomalyScore {
                recon_error,
                kde_log_density,
            })
            .collect())
    }
}

/// Sigmoid probabilities of the defect class, and `defect` iff `p >= cutoff`.
pub fn classify_supervised(model: &ModelGraph, images: &Tensor<f32>, cutoff: f64) -> Result<Vec<(Label, f64)>> {
    if model.output_shape() != [1, 1, 1] {
        return Err(Error::invalid("classify_supervised", "model must output a single probability"));
    }
    let mut out = Vec::with_capacity(images.batch());
    chunked(images, |x| {
        let y = model.predict(x)?;
        out.extend(y.data().iter().map(|&p| {
            let p = f64::from(p);
            (if p >= cutoff { Label::Defect } else { Label::Good }, p)
        }));
        Ok(())
    })?;
    Ok(out)
}

/// Rows for the per-image score dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub path: String,
    pub label: Label,
    pub score: AnomalyScore,
    pub decision: Label,
}

pub fn score_csv(rows: &[ScoreRow]) -> String {
    let mut out = String::from("path,label,recon_error,kde_log_density,decision\n");
    for r in rows {
        let kde = r.score.kde_log_density.map(fmt6).unwrap_or_default();
        let path = if r.path.contains([',', '"', '\n']) {
            format!("\"{}\"", r.path.replace('"', "\"\""))
        } else {
            r.path.clone()
        };
        let _ = writeln!(out, "{path},{},{},{kde},{}", r.label, fmt6(r.score.recon_error), r.decision);
    }
    out
}
