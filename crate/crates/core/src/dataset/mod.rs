//! Image datasets: MVTec-layout loading, preprocessing, noise injection,
//! synthetic generation, validation splits and on-disk caching.

pub mod netpbm;
pub mod synth;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

pub use synth::{generate_synthetic_samples, generate_synthetic_set, DefectKind, ShapeKind, SyntheticSpec};

pub const NOISE_FRACTION: f64 = 0.10;
pub const NOISE_MEAN: f64 = 0.0;
pub const NOISE_VARIANCE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Good,
    Defect,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Good => "good",
            Label::Defect => "defect",
        }
    }

    pub fn is_defect(self) -> bool {
        self == Label::Defect
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "good" => Ok(Label::Good),
            "defect" => Ok(Label::Defect),
            other => Err(Error::Data(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    /// `(1, C, H, W)`, values in `[0, 1]`, `C` is 1 or 3.
    pub pixels: Tensor<f32>,
    pub label: Label,
    pub defect_kind: String,
    pub split: Split,
    pub source_path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_name: String,
    pub samples: Vec<ImageSample>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn train(&self) -> impl Iterator<Item = &ImageSample> {
        self.samples.iter().filter(|s| s.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &ImageSample> {
        self.samples.iter().filter(|s| s.split == Split::Test)
    }

    /// A dataset holding only the samples of one split, in order.
    pub fn subset(&self, split: Split) -> Dataset {
        Dataset {
            class_name: self.class_name.clone(),
            samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(),
            seed: self.seed,
        }
    }

    /// Stacks the pixels of every sample into one `(N, C, H, W)` batch.
    pub fn batch(&self) -> Result<Tensor<f32>> {
        stack_samples(&self.samples)
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Fraction of test samples labelled defect.
    pub fn anomaly_proportion(&self) -> f64 {
        let (n, d) = self.test().fold((0usize, 0usize), |(n, d), s| (n + 1, d + usize::from(s.label.is_defect())));
        if n == 0 {
            0.0
        } else {
            d as f64 / n as f64
        }
    }
}

pub fn stack_samples(samples: &[ImageSample]) -> Result<Tensor<f32>> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to stack".into()));
    }
    let parts: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.pixels).collect();
    Tensor::stack(&parts)
}

/// A loaded dataset plus the files that could not be decoded.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub dataset: Dataset,
    pub skipped: Vec<(PathBuf, String)>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))? {
        let path = entry?.path();
        let hidden = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
        if !hidden {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Decodes one image file. P5/P6 are always supported; PNG with the `png` feature.
pub fn decode_image(path: &Path) -> Result<Tensor<f32>> {
    let buf = fs::read(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if buf.starts_with(b"P5") || buf.starts_with(b"P6") {
        return netpbm::decode(&buf, path);
    }
    decode_other(&buf, path)
}

#[cfg(feature = "png")]
fn decode_other(buf: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let img = image::load_from_memory(buf).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(img.color().channel_count(), 1 | 2);
    if gray {
        let data = img.to_luma32f().into_raw();
        return Tensor::from_vec([1, 1, h, w], data);
    }
    let rgb = img.to_rgb32f();
    let mut data = vec![0.0f32; 3 * h * w];
    for (p, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + p] = px.0[c].clamp(0.0, 1.0);
        }
    }
    Tensor::from_vec([1, 3, h, w], data)
}

#[cfg(not(feature = "png"))]
fn decode_other(_buf: &[u8], path: &Path) -> Result<Tensor<f32>> {
    Err(Error::Decode {
        path: path.to_path_buf(),
        msg: "unsupported format (only binary PGM/PPM; build with the `png` feature for PNG)".into(),
    })
}

fn load_folder(
    dir: &Path,
    label: Label,
    kind: &str,
    split: Split,
    samples: &mut Vec<ImageSample>,
    skipped: &mut Vec<(PathBuf, String)>,
) -> Result<()> {
    for path in sorted_entries(dir)? {
        if !path.is_file() {
            continue;
        }
        match decode_image(&path) {
            Ok(pixels) => samples.push(ImageSample {
                pixels,
                label,
                defect_kind: kind.to_string(),
                split,
                source_path: path.display().to_string(),
            }),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push((path, e.to_string()));
            }
        }
    }
    Ok(())
}

/// Loads `<root>/<class>/train/good/*` and `<root>/<class>/test/<kind>/*`.
pub fn load_image_dir_report(root: &Path, class_name: &str) -> Result<LoadReport> {
    let base = root.join(class_name);
    let train_dir = base.join("train").join("good");
    let test_dir = base.join("test");
    for d in [&base, &train_dir, &test_dir] {
        if !d.is_dir() {
            return Err(Error::Data(format!("missing directory {}", d.display())));
        }
    }
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    load_folder(&train_dir, Label::Good, "good", Split::Train, &mut samples, &mut skipped)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("no training images in {}", train_dir.display())));
    }
    for kind_dir in sorted_entries(&test_dir)? {
        if !kind_dir.is_dir() {
            continue;
        }
        let kind = kind_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let label = if kind == "good" { Label::Good } else { Label::Defect };
        load_folder(&kind_dir, label, &kind, Split::Test, &mut samples, &mut skipped)?;
    }
    if !skipped.is_empty() {
        log::warn!("{} undecodable file(s) skipped in {}", skipped.len(), base.display());
    }
    Ok(LoadReport {
        dataset: Dataset {
            class_name: class_name.to_string(),
            samples,
            seed: 0,
        },
        skipped,
    })
}

pub fn load_image_dir(root: &Path, class_name: &str) -> Result<Dataset> {
    load_image_dir_report(root, class_name).map(|r| r.dataset)
}

/// ITU-R BT.601 luminance of a `(1, 3, H, W)` image; single-channel input is returned as is.
pub fn to_grayscale(img: &Tensor<f32>) -> Tensor<f32> {
    let [n, c, h, w] = img.shape();
    if c == 1 {
        return img.clone();
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * plane);
    for i in 0..n {
        let s = img.sample(i);
        out.extend((0..plane).map(|p| {
            let v = 0.299 * f64::from(s[p]) + 0.587 * f64::from(s[plane + p]) + 0.114 * f64::from(s[2 * plane + p]);
            v.clamp(0.0, 1.0) as f32
        }));
    }
    Tensor::from_vec([n, 1, h, w], out).expect("luminance extents")
}

fn center_crop(img: &Tensor<f32>) -> Tensor<f32> {
    let [n, c, h, w] = img.shape();
    let s = h.min(w);
    if h == w {
        return img.clone();
    }
    let (oy, ox) = ((h - s) / 2, (w - s) / 2);
    Tensor::from_fn([n, c, s, s], |[i, ch, y, x]| img.at([i, ch, y + oy, x + ox]))
}

fn block_average(img: &Tensor<f32>, target: usize) -> Tensor<f32> {
    let [n, c, s, _] = img.shape();
    let f = s / target;
    let inv = 1.0 / (f * f) as f64;
    Tensor::from_fn([n, c, target, target], |[i, ch, y, x]| {
        let mut acc = 0.0f64;
        for dy in 0..f {
            for dx in 0..f {
                acc += f64::from(img.at([i, ch, y * f + dy, x * f + dx]));
            }
        }
        (acc * inv) as f32
    })
}

fn bilinear(img: &Tensor<f32>, target: usize) -> Tensor<f32> {
    let [n, c, s, _] = img.shape();
    let scale = s as f64 / target as f64;
    let coord = |d: usize| {
        let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (s - 1) as f64);
        let lo = src.floor() as usize;
        (lo, (lo + 1).min(s - 1), src - lo as f64)
    };
    Tensor::from_fn([n, c, target, target], |[i, ch, y, x]| {
        let (y0, y1, ty) = coord(y);
        let (x0, x1, tx) = coord(x);
        let p = |yy, xx| f64::from(img.at([i, ch, yy, xx]));
        let top = p(y0, x0) * (1.0 - tx) + p(y0, x1) * tx;
        let bottom = p(y1, x0) * (1.0 - tx) + p(y1, x1) * tx;
        (top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0) as f32
    })
}

/// Center-crops to a square and downsizes to `target x target`.
///
/// Integer factors use block averaging, other sizes bilinear sampling.
pub fn resize_image(img: &Tensor<f32>, target: usize) -> Result<Tensor<f32>> {
    let [_, _, h, w] = img.shape();
    if target == 0 {
        return Err(Error::invalid("preprocess", "target size must be positive"));
    }
    let s = h.min(w);
    if target > s {
        return Err(Error::Data(format!("cannot upscale a {h}x{w} image to {target}x{target}")));
    }
    let sq = center_crop(img);
    Ok(if s == target {
        sq
    } else if s % target == 0 {
        block_average(&sq, target)
    } else {
        bilinear(&sq, target)
    })
}

pub fn preprocess(dataset: &Dataset, target_size: usize, grayscale: bool) -> Result<Dataset> {
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let px = if grayscale { to_grayscale(&s.pixels) } else { s.pixels.clone() };
            let pixels = resize_image(&px, target_size).map_err(|e| match e {
                Error::Data(m) => Error::Data(format!("{}: {m}", s.source_path)),
                other => other,
            })?;
            Ok(ImageSample { pixels, ..s.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        ..dataset.clone()
    })
}

/// Which samples a noise plan may select from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseScope {
    #[default]
    TrainOnly,
    TestOnly,
    All,
}

impl NoiseScope {
    fn admits(self, split: Split) -> bool {
        match self {
            NoiseScope::TrainOnly => split == Split::Train,
            NoiseScope::TestOnly => split == Split::Test,
            NoiseScope::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePlan {
    /// Dataset sample indices that receive noise, ascending.
    pub selected_indices: BTreeSet<usize>,
    pub mean: f64,
    pub variance: f64,
}

/// `floor(fraction * k)`; the small slack absorbs products like `0.1 * 30`
/// landing a hair below an integer.
pub fn noise_count(k: usize, fraction: f64) -> usize {
    ((fraction * k as f64) + 1e-9).floor() as usize
}

/// Chooses `noise_count(k, fraction)` distinct positions in `0..k`.
pub fn plan_noise(k: usize, fraction: f64, seed: u64) -> Result<BTreeSet<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("inject_gaussian_noise", format!("fraction {fraction} outside [0,1]")));
    }
    let count = noise_count(k, fraction).min(k);
    let mut rng = SeedStream::new(seed).rng("noise/select");
    Ok(rand::seq::index::sample(&mut rng, k, count).into_iter().collect())
}

/// Adds i.i.d. `N(mean, variance)` noise to every element and clamps to `[0, 1]`.
pub fn add_gaussian_noise<R: Rng + ?Sized>(img: &mut Tensor<f32>, mean: f64, variance: f64, rng: &mut R) -> Result<()> {
    let normal = Normal::new(mean, variance.sqrt())
        .map_err(|e| Error::invalid("inject_gaussian_noise", format!("bad noise parameters: {e}")))?;
    for v in img.data_mut() {
        *v = (f64::from(*v) + normal.sample(rng)).clamp(0.0, 1.0) as f32;
    }
    Ok(())
}

/// Perturbs `floor(fraction * K)` randomly chosen samples, `K` counting the
/// samples admitted by `scope`. Unselected samples are left untouched.
pub fn inject_gaussian_noise(
    dataset: &Dataset,
    fraction: f64,
    mean: f64,
    variance: f64,
    seed: u64,
    scope: NoiseScope,
) -> Result<(Dataset, NoisePlan)> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::invalid("inject_gaussian_noise", format!("variance {variance} must be >= 0")));
    }
    let eligible: Vec<usize> = (0..dataset.len()).filter(|&i| scope.admits(dataset.samples[i].split)).collect();
    let picks = plan_noise(eligible.len(), fraction, seed)?;
    let selected: BTreeSet<usize> = picks.iter().map(|&p| eligible[p]).collect();
    let mut out = dataset.clone();
    let stream = SeedStream::new(seed);
    for &i in &selected {
        let mut rng = stream.indexed("noise/values", i as u64).rng("gaussian");
        add_gaussian_noise(&mut out.samples[i].pixels, mean, variance, &mut rng)?;
    }
    Ok((
        out,
        NoisePlan {
            selected_indices: selected,
            mean,
            variance,
        },
    ))
}

/// Deterministic shuffle-then-split into `(train, validation)`.
///
/// The validation part gets `round(fraction * n)` samples, kept within `1..n`.
pub fn split_validation(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("split_validation", format!("fraction {fraction} outside (0,1)")));
    }
    if n < 2 {
        return Err(Error::Data(format!("too few samples to split ({n}); need at least 2")));
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeedStream::new(seed).rng("validation-split"));
    let pick = |idx: &[usize]| Dataset {
        class_name: dataset.class_name.clone(),
        samples: idx.iter().map(|&i| dataset.samples[i].clone()).collect(),
        seed,
    };
    let (val, train) = order.split_at(n_val);
    Ok((pick(train), pick(val)))
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes every sample as PGM/PPM under `dir` plus `manifest.csv`
/// (`path,label,defect_kind,split`). Pixels are quantized to 8 bits.
pub fn write_cache(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(MANIFEST_FILE)).map_err(csv_err)?;
    w.write_record(["path", "label", "defect_kind", "split"]).map_err(csv_err)?;
    for (i, s) in dataset.samples.iter().enumerate() {
        let ext = if s.pixels.shape()[1] == 3 { "ppm" } else { "pgm" };
        let rel = format!("{}/{}/{i:05}.{ext}", s.split, sanitize(&s.defect_kind));
        let path = dir.join(&rel);
        fs::create_dir_all(path.parent().expect("relative path has a parent"))?;
        netpbm::write(&path, &s.pixels, 0)?;
        w.write_record([rel.as_str(), s.label.name(), s.defect_kind.as_str(), s.split.name()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cache written by [`write_cache`].
pub fn read_cache(dir: &Path, class_name: &str) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(dir.join(MANIFEST_FILE)).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != ["path", "label", "defect_kind", "split"] {
        return Err(Error::Data(format!("unexpected manifest header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let path = dir.join(&rec[0]);
        samples.push(ImageSample {
            pixels: netpbm::read(&path)?,
            label: rec[1].parse()?,
            defect_kind: rec[2].to_string(),
            split: rec[3].parse()?,
            source_path: path.display().to_string(),
        });
    }
    Ok(Dataset {
        class_name: class_name.to_string(),
        samples,
        seed: 0,
    })
}

fn sanitize(s: &str) -> String {
    let out: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    if out.is_empty() {
        "unnamed".into()
    } else {
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(v: f32, size: usize) -> Tensor<f32> {
        Tensor::full([1, 1, size, size], v)
    }

    fn sample(pixels: Tensor<f32>, split: Split) -> ImageSample {
        ImageSample {
            pixels,
            label: Label::Good,
            defect_kind: "good".into(),
            split,
            source_path: String::new(),
        }
    }

    fn dataset(n: usize, split: Split) -> Dataset {
        Dataset {
            class_name: "t".into(),
            samples: (0..n).map(|i| sample(gray(i as f32 / n as f32, 4), split)).collect(),
            seed: 0,
        }
    }

    #[test]
    fn constant_image_keeps_value_after_resize() {
        let out = resize_image(&gray(0.37, 1024), 128).unwrap();
        assert_eq!(out.shape(), [1, 1, 128, 128]);
        assert!(out.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn red_pixel_luminance() {
        let red = Tensor::from_vec([1, 3, 1, 1], vec![1.0, 0.0, 0.0]).unwrap();
        assert!((to_grayscale(&red).data()[0] - 0.299).abs() < 1e-7);
    }

    #[test]
    fn checkerboard_block_average() {
        let board = Tensor::from_fn([1, 1, 4, 4], |[_, _, y, x]| ((x + y) % 2) as f32);
        let out = resize_image(&board, 2).unwrap();
        assert_eq!(out.data(), &[0.5; 4]);
    }

    #[test]
    fn non_integer_factor_uses_bilinear() {
        let ramp = Tensor::from_fn([1, 1, 6, 6], |[_, _, _, x]| x as f32 / 5.0);
        let out = resize_image(&ramp, 4).unwrap();
        // a horizontal ramp stays monotone and inside the source range
        let row: Vec<f32> = (0..4).map(|x| out.at([0, 0, 1, x])).collect();
        assert!(row.windows(2).all(|w| w[0] < w[1]), "{row:?}");
        assert!(row[0] >= 0.0 && row[3] <= 1.0);
    }

    #[test]
    fn crops_to_center_square() {
        let img = Tensor::from_fn([1, 1, 2, 4], |[_, _, _, x]| x as f32 / 3.0);
        let out = resize_image(&img, 2).unwrap();
        assert_eq!(out.data(), &[1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn upscaling_refused() {
        assert!(resize_image(&gray(0.5, 64), 128).is_err());
    }

    #[test]
    fn preprocess_is_idempotent() {
        let rgb = Tensor::from_fn([1, 3, 90, 90], |[_, c, y, x]| ((x * 7 + y * 3 + c) % 11) as f32 / 10.0);
        let d = Dataset {
            class_name: "t".into(),
            samples: vec![sample(rgb, Split::Train)],
            seed: 0,
        };
        let once = preprocess(&d, 64, true).unwrap();
        let twice = preprocess(&once, 64, true).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn noise_count_for_sixty() {
        let (noised, plan) =
            inject_gaussian_noise(&dataset(60, Split::Train), 0.10, 0.0, NOISE_VARIANCE, 1, NoiseScope::TrainOnly)
                .unwrap();
        assert_eq!(plan.selected_indices.len(), 6);
        let d = dataset(60, Split::Train);
        for i in 0..60 {
            let same = noised.samples[i].pixels == d.samples[i].pixels;
            assert_eq!(same, !plan.selected_indices.contains(&i), "sample {i}");
        }
    }

    #[test]
    fn zero_fraction_leaves_dataset() {
        let d = dataset(20, Split::Train);
        let (out, plan) = inject_gaussian_noise(&d, 0.0, 0.0, NOISE_VARIANCE, 3, NoiseScope::All).unwrap();
        assert!(plan.selected_indices.is_empty());
        assert_eq!(out, d);
    }

    #[test]
    fn scope_restricts_selection() {
        let mut d = dataset(20, Split::Train);
        d.samples.extend(dataset(20, Split::Test).samples);
        let (_, plan) = inject_gaussian_noise(&d, 0.5, 0.0, NOISE_VARIANCE, 3, NoiseScope::TrainOnly).unwrap();
        assert_eq!(plan.selected_indices.len(), 10);
        assert!(plan.selected_indices.iter().all(|&i| i < 20));
        let (_, plan) = inject_gaussian_noise(&d, 0.5, 0.0, NOISE_VARIANCE, 3, NoiseScope::TestOnly).unwrap();
        assert!(plan.selected_indices.iter().all(|&i| i >= 20));
    }

    #[test]
    fn noise_keeps_unit_range() {
        let d = Dataset {
            class_name: "t".into(),
            samples: vec![sample(gray(0.0, 8), Split::Train), sample(gray(1.0, 8), Split::Train)],
            seed: 0,
        };
        let (out, _) = inject_gaussian_noise(&d, 1.0, 0.0, 0.5, 9, NoiseScope::TrainOnly).unwrap();
        assert!(out.samples.iter().all(|s| s.pixels.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn split_ten_by_fifth() {
        let d = dataset(10, Split::Train);
        let (tr, va) = split_validation(&d, 0.2, 4).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let mut all: Vec<f32> = tr.samples.iter().chain(&va.samples).map(|s| s.pixels.data()[0]).collect();
        all.sort_by(f32::total_cmp);
        let mut orig: Vec<f32> = d.samples.iter().map(|s| s.pixels.data()[0]).collect();
        orig.sort_by(f32::total_cmp);
        assert_eq!(all, orig);
        assert!(split_validation(&dataset(1, Split::Train), 0.5, 0).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::disks(2, 4, 0.5, 16, 11);
        let d = generate_synthetic_set(&spec).unwrap();
        write_cache(&d, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.starts_with("path,label,defect_kind,split\n"));
        let back = read_cache(dir.path(), "x").unwrap();
        assert_eq!(back.len(), d.len());
        for (a, b) in back.samples.iter().zip(&d.samples) {
            assert_eq!((a.label, a.split, &a.defect_kind), (b.label, b.split, &b.defect_kind));
            let requantized = b.pixels.map(|v| f32::from(netpbm::quantize(v)) / 255.0);
            assert_eq!(a.pixels, requantized);
        }
    }
}
