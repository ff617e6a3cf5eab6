//! DCGAN generator/discriminator pair trained with the non-saturating
//! generator objective.

pub mod toy;

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::metrics::fmt6;
use crate::nn::loss::BCE_EPSILON;
use crate::nn::{loss_eval, Activation, GraphBuilder, LossKind, Mode, ModelGraph, Optimizer};
use crate::pipelines::train::gather;
use crate::rng::SeedStream;
use crate::tensor::Tensor;

pub use toy::{optimal_discriminator_oracle, trapezoid, GaussianMixture, ToyDensityPair};

pub const GENERATOR_TAG: &str = "dcgan-generator";
pub const DISCRIMINATOR_TAG: &str = "dcgan-discriminator";
pub const GAN_DEFAULT_LR: f64 = 2e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub z_dim: usize,
    /// Power of two, at least 32.
    pub image_size: usize,
    pub channels: usize,
    /// Channel count of the widest generator map is `base_channels * size / 8`.
    pub base_channels: usize,
    /// Discriminator updates per generator update.
    pub k: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            z_dim: 100,
            image_size: 32,
            channels: 1,
            base_channels: 16,
            k: 1,
            lr_generator: GAN_DEFAULT_LR,
            lr_discriminator: GAN_DEFAULT_LR,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "gan config";
        if self.z_dim == 0 || self.k == 0 || self.base_channels == 0 || self.batch_size < 2 {
            return Err(Error::invalid(OP, "z_dim, k and base_channels must be >= 1 and batch_size >= 2"));
        }
        if self.image_size < 32 || !self.image_size.is_power_of_two() {
            return Err(Error::invalid(OP, format!("image size {} is not a power of two >= 32", self.image_size)));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::invalid(OP, "channels must be 1 or 3"));
        }
        Ok(())
    }

    /// Number of stride-2 stages between the 4x4 seed map and the image.
    fn doublings(&self) -> usize {
        (self.image_size / 4).trailing_zeros() as usize
    }
}

/// `z -> dense -> 4x4 map -> (transpose conv x2 + batchnorm + relu)* -> tanh`.
pub fn build_generator(config: &GanConfig) -> Result<ModelGraph> {
    config.validate()?;
    let stages = config.doublings();
    let top = config.base_channels << (stages - 1);
    let mut b = GraphBuilder::new([config.z_dim, 1, 1])
        .dense(top * 16)?
        .reshape([top, 4, 4])?
        .batchnorm()?
        .act(Activation::Relu)?;
    for s in 0..stages {
        if s + 1 == stages {
            b = b.conv_transpose(config.channels, 4, 2, 1)?.act(Activation::Tanh)?;
        } else {
            let ch = top >> (s + 1);
            b = b.conv_transpose(ch, 4, 2, 1)?.batchnorm()?.act(Activation::Relu)?;
        }
    }
    ModelGraph::from_builder(GENERATOR_TAG, b, SeedStream::new(config.seed).derive_seed("generator"))
}

/// `image -> (strided conv + batchnorm + leaky relu)* -> 4x4 -> dense 1 -> sigmoid`.
/// The first stage has no batchnorm.
pub fn build_discriminator(config: &GanConfig) -> Result<ModelGraph> {
    config.validate()?;
    let mut b = GraphBuilder::new([config.channels, config.image_size, config.image_size]);
    for s in 0..config.doublings() {
        b = b.conv(config.base_channels << s, 4, 2, 1)?;
        if s > 0 {
            b = b.batchnorm()?;
        }
        b = b.act(Activation::LeakyRelu)?;
    }
    let b = b.flatten()?.dense(1)?.act(Activation::Sigmoid)?;
    ModelGraph::from_builder(DISCRIMINATOR_TAG, b, SeedStream::new(config.seed).derive_seed("discriminator"))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON)
}

fn mean_ln(v: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    v.iter().map(|&p| f(clamp_prob(p)).ln()).sum::<f64>() / v.len().max(1) as f64
}

/// `(J_D, J_G)` with `J_D = -1/2 mean ln d_real - 1/2 mean ln(1 - d_fake)` and
/// the non-saturating `J_G = -1/2 mean ln d_fake`. Probabilities are clamped
/// to `[eps, 1 - eps]`.
pub fn gan_losses(d_real: &[f64], d_fake: &[f64]) -> (f64, f64) {
    let j_d = -0.5 * mean_ln(d_real, |p| p) - 0.5 * mean_ln(d_fake, |p| 1.0 - p);
    let j_g = -0.5 * mean_ln(d_fake, |p| p);
    (j_d, j_g)
}

/// Minimax generator cost `J_G = -J_D`; reported for comparison, never trained on.
pub fn minimax_generator_loss(d_real: &[f64], d_fake: &[f64]) -> f64 {
    -gan_losses(d_real, d_fake).0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanStep {
    pub step: usize,
    pub j_d: f64,
    pub j_g: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanPair {
    pub generator: ModelGraph,
    pub discriminator: ModelGraph,
    pub history: Vec<GanStep>,
}

impl GanPair {
    pub fn new(config: &GanConfig) -> Result<Self> {
        Ok(Self {
            generator: build_generator(config)?,
            discriminator: build_discriminator(config)?,
            history: Vec::new(),
        })
    }

    pub fn z_dim(&self) -> usize {
        self.generator.input_shape()[0]
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("step,j_d,j_g,mean_d_real,mean_d_fake\n");
        for h in &self.history {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                h.step,
                fmt6(h.j_d),
                fmt6(h.j_g),
                fmt6(h.mean_d_real),
                fmt6(h.mean_d_fake)
            );
        }
        out
    }

    /// Mean of `(mean D(x) + mean D(G(z))) / 2` over the last `window` steps.
    pub fn recent_mean_d(&self, window: usize) -> Option<f64> {
        let tail = &self.history[self.history.len().saturating_sub(window)..];
        if tail.is_empty() {
            return None;
        }
        Some(tail.iter().map(|h| 0.5 * (h.mean_d_real + h.mean_d_fake)).sum::<f64>() / tail.len() as f64)
    }
}

/// `N(0, 1)` latent batch `(n, z_dim, 1, 1)`.
pub fn sample_z(n: usize, z_dim: usize, rng: &mut crate::rng::StreamRng) -> Tensor<f32> {
    Tensor::randn([n, z_dim, 1, 1], rng)
}

/// Maps `[0, 1]` pixels to the `[-1, 1]` range the GAN trains in.
pub fn to_signed(images: &Tensor<f32>) -> Tensor<f32> {
    images.map(|v| 2.0 * v - 1.0)
}

pub fn to_unit(images: &Tensor<f32>) -> Tensor<f32> {
    images.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
}

fn probs(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

fn bce_grad(pred: &Tensor<f32>, target: f32, scale: f32) -> Result<Tensor<f32>> {
    let (_, mut g) = loss_eval(pred, &Tensor::full(pred.shape(), target), LossKind::Bce)?;
    g.scale(scale);
    Ok(g)
}

fn sum_grads(a: &mut crate::nn::Gradients, b: &crate::nn::Gradients) {
    for (ga, gb) in a.layers.iter_mut().zip(&b.layers) {
        for (x, y) in [(&mut ga.weight, &gb.weight), (&mut ga.bias, &gb.bias)] {
            if let (Some(x), Some(y)) = (x.as_mut(), y.as_ref()) {
                x.add_assign(y);
            }
        }
    }
}

/// One discriminator update on a real and a fake batch; returns `(d_real, d_fake)`.
pub fn discriminator_step(
    disc: &mut ModelGraph,
    opt: &mut Optimizer,
    real: &Tensor<f32>,
    fake: &Tensor<f32>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cr = disc.forward(real, Mode::Train)?;
    let cf = disc.forward(fake, Mode::Train)?;
    let (dr, df) = (probs(cr.output()), probs(cf.output()));
    // J_D = 1/2 bce(D(x), 1) + 1/2 bce(D(G(z)), 0)
    let mut g = disc.backward(&cr, &bce_grad(cr.output(), 1.0, 0.5)?)?;
    let gf = disc.backward(&cf, &bce_grad(cf.output(), 0.0, 0.5)?)?;
    sum_grads(&mut g, &gf);
    opt.step_model(disc, &g)?;
    disc.update_running_stats(&cr);
    disc.update_running_stats(&cf);
    Ok((dr, df))
}

/// Runs `steps` rounds of `k` discriminator updates followed by one
/// non-saturating generator update. `real_images` must already be in `[-1, 1]`.
///
/// Optimizer state starts fresh on every call. On a non-finite loss or
/// parameter the pair is restored to the last completed step and an error
/// is returned.
pub fn train_gan(pair: &mut GanPair, real_images: &Tensor<f32>, steps: usize, config: &GanConfig) -> Result<()> {
    config.validate()?;
    let n = real_images.batch();
    if steps == 0 {
        return Ok(());
    }
    if n < config.batch_size {
        return Err(Error::Data(format!("need at least {} training images, got {n}", config.batch_size)));
    }
    let [c, h, w] = pair.discriminator.input_shape();
    if real_images.shape()[1..] != [c, h, w] {
        return Err(Error::invalid("train_gan", "training images do not match the discriminator input"));
    }
    let mut opt_d = Optimizer::rmsprop(config.lr_discriminator)?;
    let mut opt_g = Optimizer::rmsprop(config.lr_generator)?;
    let stream = SeedStream::new(config.seed).child("gan");
    let mut z_rng = stream.rng("z");
    let mut data_rng = stream.rng("batches");
    let mut order: Vec<usize> = Vec::new();
    let z_dim = pair.z_dim();
    let bs = config.batch_size;
    let start = pair.history.last().map_or(0, |h| h.step);
    for step in start + 1..=start + steps {
        let good = (pair.generator.clone(), pair.discriminator.clone());
        let outcome = (|| -> Result<GanStep> {
            let mut last = (Vec::new(), Vec::new());
            for _ in 0..config.k {
                if order.len() < bs {
                    order = (0..n).collect();
                    order.shuffle(&mut data_rng);
                }
                let idx: Vec<usize> = order.split_off(order.len() - bs);
                let real = gather(real_images, &idx);
                let fake = pair.generator.forward(&sample_z(bs, z_dim, &mut z_rng), Mode::Train)?.into_output();
                last = discriminator_step(&mut pair.discriminator, &mut opt_d, &real, &fake)?;
            }
            let (d_real, d_fake) = last;
            let (j_d, _) = gan_losses(&d_real, &d_fake);
            // generator: minimize -1/2 mean ln D(G(z)) with D held fixed
            let cg = pair.generator.forward(&sample_z(bs, z_dim, &mut z_rng), Mode::Train)?;
            let cd = pair.discriminator.forward(cg.output(), Mode::Train)?;
            let (_, j_g) = gan_losses(&[], &probs(cd.output()));
            let gd = pair.discriminator.backward(&cd, &bce_grad(cd.output(), 1.0, 0.5)?)?;
            let gg = pair.generator.backward(&cg, &gd.input)?;
            opt_g.step_model(&mut pair.generator, &gg)?;
            pair.generator.update_running_stats(&cg);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            Ok(GanStep {
                step,
                j_d,
                j_g,
                mean_d_real: mean(&d_real),
                mean_d_fake: mean(&d_fake),
            })
        })();
        let rec = match outcome {
            Ok(r) if r.j_d.is_finite() && r.j_g.is_finite() && pair.generator.all_finite() && pair.discriminator.all_finite() => r,
            Ok(r) => {
                (pair.generator, pair.discriminator) = good;
                return Err(Error::Numeric(format!(
                    "gan training diverged at step {step} (J_D {}, J_G {}); restored step {}",
                    r.j_d,
                    r.j_g,
                    step - 1
                )));
            }
            Err(e) => {
                (pair.generator, pair.discriminator) = good;
                return Err(e);
            }
        };
        pair.history.push(rec);
    }
    Ok(())
}

/// `n` generated images mapped to `[0, 1]`, deterministic in `seed`.
pub fn generate_samples(generator: &ModelGraph, n: usize, seed: u64) -> Result<Tensor<f32>> {
    let [c, h, w] = generator.output_shape();
    if n == 0 {
        return Ok(Tensor::zeros([0, c, h, w]));
    }
    let mut rng = SeedStream::new(seed).rng("generate");
    let z = sample_z(n, generator.input_shape()[0], &mut rng);
    Ok(to_unit(&generator.predict(&z)?))
}

/// Tiles a batch into one `(1, C, rows * (H + 1) + 1, cols * (W + 1) + 1)` sheet.
pub fn contact_sheet(images: &Tensor<f32>, cols: usize) -> Option<Tensor<f32>> {
    let [n, c, h, w] = images.shape();
    if n == 0 || cols == 0 {
        return None;
    }
    let cols = cols.min(n);
    let rows = n.div_ceil(cols);
    let (sh, sw) = (rows * (h + 1) + 1, cols * (w + 1) + 1);
    Some(Tensor::from_fn([1, c, sh, sw], |[_, ch, y, x]| {
        let (r, yy) = (y / (h + 1), y % (h + 1));
        let (q, xx) = (x / (w + 1), x % (w + 1));
        let i = r * cols + q;
        if yy == 0 || xx == 0 || i >= n {
            1.0
        } else {
            images.at([i, ch, yy - 1, xx - 1])
        }
    }))
}
