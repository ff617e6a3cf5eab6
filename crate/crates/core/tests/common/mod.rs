//! Shared oracles for the integration suites.

#![allow(dead_code)]

use anomaly_core::dataset::Label;
use anomaly_core::metrics::ConfusionCounts;
use anomaly_core::nn::{loss_eval, Activation, GraphBuilder, LossKind, Mode, ModelGraph, OddExtent, SampleShape};
use anomaly_core::rng::{SeedStream, StreamRng};
use anomaly_core::Tensor;
use rand::Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-3;
pub const INSTANCES_PER_KIND: usize = 20;

/// Worst relative gradient error over the instances of one layer or loss kind.
#[derive(Debug, Clone)]
pub struct KindResult {
    pub kind: String,
    pub instances: usize,
    pub worst: f64,
}

impl KindResult {
    pub fn passed(&self) -> bool {
        self.instances >= INSTANCES_PER_KIND && self.worst < FD_TOLERANCE
    }
}

/// `||a - n|| / max(||a||, ||n||)`, with a floor so exact zeros compare as equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-10)
}

fn random_tensor(shape: [usize; 4], lo: f64, hi: f64, rng: &mut StreamRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Inputs bounded away from activation kinks at zero.
fn away_from_zero(t: &mut Tensor<f64>) {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = if *v < 0.0 { -0.05 - v.abs() } else { 0.05 + *v };
        }
    }
}

/// Central differences of `L = sum(r * f(x))` for a one-layer graph against
/// backprop, over the input and every parameter.
fn check_graph(builder: GraphBuilder, batch: usize, mode: Mode, kinked: bool, rng: &mut StreamRng) -> f64 {
    let (input_shape, layers, _) = builder.finish();
    let mut model = ModelGraph::new("gradcheck", input_shape, layers, rng.random()).unwrap().cast::<f64>();
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let [c, h, w] = input_shape;
    let mut x = random_tensor([batch, c, h, w], -1.0, 1.0, rng);
    if kinked {
        away_from_zero(&mut x);
    }
    let cache = model.forward(&x, mode).unwrap();
    let r = random_tensor(cache.output().shape(), -1.0, 1.0, rng);
    let grads = model.backward(&cache, &r).unwrap();
    let objective = |m: &ModelGraph<f64>, x: &Tensor<f64>| -> f64 {
        let y = m.forward(x, mode).unwrap();
        y.output().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };

    let mut analytic: Vec<f64> = grads.input.data().to_vec();
    let mut numeric = Vec::new();
    for i in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[i] += FD_STEP;
        xm.data_mut()[i] -= FD_STEP;
        numeric.push((objective(&model, &xp) - objective(&model, &xm)) / (2.0 * FD_STEP));
    }
    let tensors: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data().to_vec()).collect();
    for (ti, g) in tensors.iter().enumerate() {
        analytic.extend_from_slice(g);
        for j in 0..g.len() {
            let (mut mp, mut mm) = (model.clone(), model.clone());
            mp.params_mut()[ti].data_mut()[j] += FD_STEP;
            mm.params_mut()[ti].data_mut()[j] -= FD_STEP;
            numeric.push((objective(&mp, &x) - objective(&mm, &x)) / (2.0 * FD_STEP));
        }
    }
    relative_error(&analytic, &numeric)
}

fn check_loss(kind: LossKind, rng: &mut StreamRng) -> f64 {
    let shape = [rng.random_range(1..4), rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4)];
    let (pred, target) = match kind {
        LossKind::Mse => (random_tensor(shape, -2.0, 2.0, rng), random_tensor(shape, -2.0, 2.0, rng)),
        LossKind::Bce => {
            let p = random_tensor(shape, 0.05, 0.95, rng);
            let t = Tensor::from_fn(shape, |_| if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.0..1.0) });
            (p, t)
        }
    };
    let (_, grad) = loss_eval(&pred, &target, kind).unwrap();
    let numeric: Vec<f64> = (0..pred.len())
        .map(|i| {
            let (mut p, mut m) = (pred.clone(), pred.clone());
            p.data_mut()[i] += FD_STEP;
            m.data_mut()[i] -= FD_STEP;
            (loss_eval(&p, &target, kind).unwrap().0 - loss_eval(&m, &target, kind).unwrap().0) / (2.0 * FD_STEP)
        })
        .collect();
    relative_error(grad.data(), &numeric)
}

fn small_shape(rng: &mut StreamRng, lo: usize, hi: usize) -> SampleShape {
    [rng.random_range(1..4), rng.random_range(lo..=hi), rng.random_range(lo..=hi)]
}

/// Runs every layer kind and both losses on `INSTANCES_PER_KIND` random
/// small instances each.
pub fn gradient_suite(seed: u64) -> Vec<KindResult> {
    let stream = SeedStream::new(seed);
    let mut results = Vec::new();
    let mut run = |kind: &str, f: &mut dyn FnMut(&mut StreamRng) -> f64| {
        let mut rng = stream.rng(kind);
        let worst = (0..INSTANCES_PER_KIND).map(|_| f(&mut rng)).fold(0.0, f64::max);
        results.push(KindResult {
            kind: kind.to_string(),
            instances: INSTANCES_PER_KIND,
            worst,
        });
    };

    run("conv2d", &mut |rng| {
        let (k, s, p) = (rng.random_range(1..4), rng.random_range(1..3), rng.random_range(0..2));
        let shape = small_shape(rng, k.max(2), 6);
        let b = GraphBuilder::new(shape).conv(rng.random_range(1..4), k, s, p).unwrap();
        check_graph(b, rng.random_range(1..3), Mode::Train, false, rng)
    });
    run("conv2d_transpose", &mut |rng| {
        let k = rng.random_range(1..5);
        let s = rng.random_range(1..3);
        let p = rng.random_range(0..2).min(k - 1);
        let b = GraphBuilder::new(small_shape(rng, 2, 4)).conv_transpose(rng.random_range(1..4), k, s, p).unwrap();
        check_graph(b, rng.random_range(1..3), Mode::Train, false, rng)
    });
    run("maxpool2d", &mut |rng| {
        let odd = [OddExtent::Error, OddExtent::Pad, OddExtent::Truncate][rng.random_range(0..3)];
        let mut shape = small_shape(rng, 2, 7);
        if odd == OddExtent::Error {
            shape[1] &= !1;
            shape[2] &= !1;
        }
        let b = GraphBuilder::new(shape).maxpool(2, odd).unwrap();
        check_graph(b, rng.random_range(1..3), Mode::Train, false, rng)
    });
    run("dense", &mut |rng| {
        let b = GraphBuilder::new([rng.random_range(1..9), 1, 1]).dense(rng.random_range(1..6)).unwrap();
        check_graph(b, rng.random_range(1..4), Mode::Train, false, rng)
    });
    for (name, a) in [
        ("activation/relu", Activation::Relu),
        ("activation/leaky_relu", Activation::LeakyRelu),
        ("activation/sigmoid", Activation::Sigmoid),
        ("activation/tanh", Activation::Tanh),
    ] {
        run(name, &mut |rng| {
            let b = GraphBuilder::new(small_shape(rng, 1, 4)).act(a).unwrap();
            check_graph(b, rng.random_range(1..3), Mode::Train, true, rng)
        });
    }
    run("batchnorm", &mut |rng| {
        let b = GraphBuilder::new(small_shape(rng, 1, 3)).batchnorm().unwrap();
        // training mode normalizes with batch statistics, so the batch is part of the function
        let mode = if rng.random_bool(0.75) { Mode::Train } else { Mode::Eval };
        check_graph(b, rng.random_range(2..4), mode, false, rng)
    });
    run("flatten", &mut |rng| {
        let b = GraphBuilder::new(small_shape(rng, 1, 4)).flatten().unwrap();
        check_graph(b, rng.random_range(1..3), Mode::Train, false, rng)
    });
    run("reshape", &mut |rng| {
        let [c, h, w] = small_shape(rng, 1, 4);
        let b = GraphBuilder::new([c, h, w]).reshape([h, w, c]).unwrap();
        check_graph(b, rng.random_range(1..3), Mode::Train, false, rng)
    });
    run("loss/mse", &mut |rng| check_loss(LossKind::Mse, rng));
    run("loss/bce", &mut |rng| check_loss(LossKind::Bce, rng));
    results
}

/// F1 from counts with exact rational arithmetic: `2PR/(P+R)` with
/// `P = tp/(tp+fp)` and `R = tp/(tp+fn)` reduces to `2tp/(2tp+fp+fn)`,
/// formed as one division of integers.
pub fn f1_rational_oracle(c: &ConfusionCounts) -> f64 {
    if c.tp == 0 {
        return 0.0;
    }
    // P = tp/a, R = tp/b; 2PR/(P+R) = 2 tp^2/(ab) / (tp(a+b)/(ab)) = 2tp/(a+b)
    let (a, b) = (c.tp + c.fp, c.tp + c.fn_);
    (2 * c.tp) as f64 / (a + b) as f64
}

/// Pairwise AUC: the share of (defect, good) pairs ranked correctly, ties 1/2.
pub fn auc_pairwise_oracle(scores: &[f64], labels: &[Label]) -> f64 {
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i].is_defect() {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j].is_defect() {
                continue;
            }
            pairs += 1;
            twice += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Noise plan over a dataset of `k` train images (plus a few test images):
/// exactly `floor(k / 10)` train samples change, nothing else does.
pub fn noise_cardinality_check(k: usize, seed: u64) -> Result<(), String> {
    use anomaly_core::dataset::{inject_gaussian_noise, Dataset, ImageSample, NoiseScope, Split, NOISE_FRACTION, NOISE_MEAN, NOISE_VARIANCE};
    let sample = |i: usize, split: Split| ImageSample {
        pixels: Tensor::full([1, 1, 2, 2], 0.5),
        label: Label::Good,
        defect_kind: "good".into(),
        split,
        source_path: format!("{i}"),
    };
    let mut samples: Vec<ImageSample> = (0..3).map(|i| sample(i, Split::Test)).collect();
    samples.extend((0..k).map(|i| sample(i, Split::Train)));
    let ds = Dataset {
        class_name: "k".into(),
        samples,
        seed,
    };
    let (noisy, plan) = inject_gaussian_noise(&ds, NOISE_FRACTION, NOISE_MEAN, NOISE_VARIANCE, seed, NoiseScope::TrainOnly).map_err(|e| e.to_string())?;
    if plan.selected_indices.len() != k / 10 {
        return Err(format!("K = {k}: {} selected, expected {}", plan.selected_indices.len(), k / 10));
    }
    for (i, (a, b)) in ds.samples.iter().zip(&noisy.samples).enumerate() {
        let selected = plan.selected_indices.contains(&i);
        if selected && a.split != Split::Train {
            return Err(format!("K = {k}: test sample {i} selected"));
        }
        if !selected && a.pixels != b.pixels {
            return Err(format!("K = {k}: unselected sample {i} changed"));
        }
        if selected && a.pixels == b.pixels {
            return Err(format!("K = {k}: selected sample {i} unchanged"));
        }
    }
    Ok(())
}

pub fn random_image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = SeedStream::new(seed).rng("image");
    Tensor::from_fn([1, 1, h, w], |_| rng.random_range(0.0f32..1.0))
}

/// Trapezoid integral of the KDE density over a box covering all mass.
pub fn kde_mass(dim: usize, n: usize, bandwidth: Option<f64>, seed: u64) -> f64 {
    use anomaly_core::pipelines::{fit_kde, kde_log_density, Bandwidth};
    let mut rng = SeedStream::new(seed).rng("kde");
    let latents: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let kde = fit_kde(&latents, bandwidth.map_or(Bandwidth::Auto, Bandwidth::Fixed)).unwrap();
    let h = kde.bandwidth();
    let (lo, hi) = (-1.0 - 9.0 * h, 1.0 + 9.0 * h);
    let nodes = if dim == 1 { 4001 } else { 401 };
    let step = (hi - lo) / (nodes - 1) as f64;
    let weight = |i: usize| if i == 0 || i == nodes - 1 { 0.5 } else { 1.0 };
    let dens = |z: &[f64]| kde_log_density(&kde, z).unwrap().exp();
    match dim {
        1 => (0..nodes).map(|i| weight(i) * dens(&[lo + i as f64 * step])).sum::<f64>() * step,
        2 => {
            let mut total = 0.0;
            for i in 0..nodes {
                for j in 0..nodes {
                    total += weight(i) * weight(j) * dens(&[lo + i as f64 * step, lo + j as f64 * step]);
                }
            }
            total * step * step
        }
        _ => panic!("quadrature only in one or two dimensions"),
    }
}

/// `<conv(x), y>` against `<x, conv_transpose(y)>` with the same weights,
/// on a geometry where the transpose restores the input extent. Returns the
/// relative gap.
pub fn conv_adjoint_gap(cin: usize, cout: usize, k: usize, stride: usize, padding: usize, out: usize, seed: u64) -> f64 {
    use anomaly_core::nn::conv::{conv2d_forward, conv2d_transpose_forward};
    let size = (out - 1) * stride + k - 2 * padding;
    let mut rng = SeedStream::new(seed).rng("adjoint");
    let x = random_tensor([2, cin, size, size], -1.0, 1.0, &mut rng);
    let w = random_tensor([cout, cin, k, k], -1.0, 1.0, &mut rng);
    let y = random_tensor([2, cout, out, out], -1.0, 1.0, &mut rng);
    let cx = conv2d_forward(&x, &w, &vec![0.0; cout], stride, padding).unwrap();
    let ty = conv2d_transpose_forward(&y, &w, &vec![0.0; cin], stride, padding).unwrap();
    assert_eq!(cx.shape(), y.shape());
    assert_eq!(ty.shape(), x.shape());
    let lhs = cx.dot(&y);
    let rhs = x.dot(&ty);
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12)
}

/// Raising the reconstruction error or lowering the density never turns a
/// defect decision into a good one; raising `tau_re` or lowering `tau_kd`
/// never turns a good decision into a defect.
pub fn decision_monotone_check(recon: f64, kde: f64, tau_re: f64, tau_kd: f64, delta: f64, rule_index: usize) -> Result<(), String> {
    use anomaly_core::pipelines::{decide_anomaly, AnomalyScore, CombineRule, ThresholdSet};
    let rule = [CombineRule::ReconOnly, CombineRule::KdeOnly, CombineRule::Or, CombineRule::And][rule_index % 4];
    let th = ThresholdSet::new(Some(tau_re), Some(tau_kd), rule).map_err(|e| e.to_string())?;
    let base = AnomalyScore {
        recon_error: recon,
        kde_log_density: Some(kde),
    };
    let d0 = decide_anomaly(&base, &th);
    let worse = AnomalyScore {
        recon_error: recon + delta,
        kde_log_density: Some(kde - delta),
    };
    if d0.is_defect() && !decide_anomaly(&worse, &th).is_defect() {
        return Err(format!("{rule}: worse score lost the defect decision"));
    }
    let looser = ThresholdSet::new(Some(tau_re + delta), Some(tau_kd - delta), rule).map_err(|e| e.to_string())?;
    if !d0.is_defect() && decide_anomaly(&base, &looser).is_defect() {
        return Err(format!("{rule}: looser thresholds created a defect"));
    }
    Ok(())
}
