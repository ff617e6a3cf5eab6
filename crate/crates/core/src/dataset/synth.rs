//! Deterministic synthetic inspection images.
//!
//! Each image is a centered bright object (disk or rectangle) on a dark
//! background with a small per-image brightness jitter. Defective images add
//! either a dark scratch (thick line segment) or a hole (small dark disk)
//! over the object. Edges are anti-aliased by 4x4 supersampling.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{Dataset, ImageSample, Label, Split};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

pub const MIN_IMAGE_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Rectangle,
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" | "disks" => Ok(ShapeKind::Disk),
            "rect" | "rectangle" | "rectangles" => Ok(ShapeKind::Rectangle),
            other => Err(Error::invalid("synthetic", format!("unknown shape `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub shape: ShapeKind,
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction of test images that carry a defect.
    pub defect_rate: f64,
    pub image_size: usize,
    /// 1 (grayscale) or 3 (RGB, the object gets a fixed tint).
    pub channels: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn disks(n_train: usize, n_test: usize, defect_rate: f64, image_size: usize, seed: u64) -> Self {
        Self {
            shape: ShapeKind::Disk,
            n_train,
            n_test,
            defect_rate,
            image_size,
            channels: 1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        const OP: &str = "generate_synthetic_set";
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::invalid(OP, "n_train and n_test must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.defect_rate) {
            return Err(Error::invalid(OP, format!("defect rate {} outside [0,1]", self.defect_rate)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid(OP, "channels must be 1 or 3"));
        }
        if self.image_size < MIN_IMAGE_SIZE {
            return Err(Error::invalid(
                OP,
                format!("defect too large for a {0}x{0} image (minimum size {MIN_IMAGE_SIZE})", self.image_size),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DefectKind {
    Scratch { from: (f64, f64), to: (f64, f64), width: f64 },
    Hole { center: (f64, f64), radius: f64 },
}

impl DefectKind {
    pub fn name(&self) -> &'static str {
        match self {
            DefectKind::Scratch { .. } => "scratch",
            DefectKind::Hole { .. } => "hole",
        }
    }

    fn covers(&self, x: f64, y: f64) -> bool {
        match *self {
            DefectKind::Scratch { from, to, width } => {
                let (dx, dy) = (to.0 - from.0, to.1 - from.1);
                let len2 = dx * dx + dy * dy;
                let t = (((x - from.0) * dx + (y - from.1) * dy) / len2).clamp(0.0, 1.0);
                let (px, py) = (from.0 + t * dx, from.1 + t * dy);
                ((x - px).powi(2) + (y - py).powi(2)).sqrt() <= width / 2.0
            }
            DefectKind::Hole { center, radius } => (x - center.0).powi(2) + (y - center.1).powi(2) <= radius * radius,
        }
    }

    /// Inclusive pixel bounding box `[y0, x0, y1, x1]`, clipped to the image.
    pub fn bbox(&self, size: usize) -> [usize; 4] {
        let (lo_x, lo_y, hi_x, hi_y) = match *self {
            DefectKind::Scratch { from, to, width } => {
                let r = width / 2.0;
                (from.0.min(to.0) - r, from.1.min(to.1) - r, from.0.max(to.0) + r, from.1.max(to.1) + r)
            }
            DefectKind::Hole { center, radius } => {
                (center.0 - radius, center.1 - radius, center.0 + radius, center.1 + radius)
            }
        };
        let clip = |v: f64| (v.floor().max(0.0) as usize).min(size - 1);
        [clip(lo_y), clip(lo_x), clip(hi_y), clip(hi_x)]
    }
}

/// Parameters of one rendered image; rendering is a pure function of these.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub shape: ShapeKind,
    pub size: usize,
    pub channels: usize,
    pub background: f64,
    pub foreground: f64,
    pub defect: Option<DefectKind>,
}

const TINT: [f64; 3] = [1.0, 0.85, 0.6];
const SUPERSAMPLE: usize = 4;

fn object_covers(shape: ShapeKind, size: f64, x: f64, y: f64) -> bool {
    let c = size / 2.0;
    match shape {
        ShapeKind::Disk => {
            let r = 0.3 * size;
            (x - c).powi(2) + (y - c).powi(2) <= r * r
        }
        ShapeKind::Rectangle => (x - c).abs() <= 0.32 * size && (y - c).abs() <= 0.2 * size,
    }
}

pub fn render(scene: &SceneParams) -> Tensor<f32> {
    let n = scene.size;
    let s = n as f64;
    let mut gray = vec![0.0f64; n * n];
    let step = 1.0 / SUPERSAMPLE as f64;
    for py in 0..n {
        for px in 0..n {
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) * step;
                    let y = py as f64 + (sy as f64 + 0.5) * step;
                    let mut v = if object_covers(scene.shape, s, x, y) {
                        scene.foreground
                    } else {
                        scene.background
                    };
                    if let Some(d) = &scene.defect {
                        if d.covers(x, y) {
                            v = scene.background * 0.5;
                        }
                    }
                    acc += v;
                }
            }
            gray[py * n + px] = acc / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        }
    }
    let mut data = Vec::with_capacity(n * n * scene.channels);
    for c in 0..scene.channels {
        let tint = if scene.channels == 3 { TINT[c] } else { 1.0 };
        data.extend(gray.iter().map(|&v| (v * tint).clamp(0.0, 1.0) as f32));
    }
    Tensor::from_vec([1, scene.channels, n, n], data).expect("render extents")
}

fn draw_scene<R: Rng>(spec: &SyntheticSpec, defective: bool, rng: &mut R) -> SceneParams {
    let s = spec.image_size as f64;
    let background = 0.1 + rng.random_range(-0.02..0.02);
    let foreground = 0.7 + rng.random_range(-0.05..0.05);
    let defect = if defective {
        let width = (s / 20.0).max(3.0);
        let c = s / 2.0;
        // anchor inside the object so the defect always changes its pixels
        let reach = 0.18 * s;
        let anchor = (c + rng.random_range(-reach..reach), c + rng.random_range(-reach..reach));
        if rng.random_bool(0.5) {
            let len = rng.random_range(0.25 * s..0.4 * s);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let (dx, dy) = (0.5 * len * angle.cos(), 0.5 * len * angle.sin());
            Some(DefectKind::Scratch {
                from: (anchor.0 - dx, anchor.1 - dy),
                to: (anchor.0 + dx, anchor.1 + dy),
                width,
            })
        } else {
            let radius = rng.random_range(width..(s / 10.0).max(width + 1.0));
            Some(DefectKind::Hole { center: anchor, radius })
        }
    } else {
        None
    };
    SceneParams {
        shape: spec.shape,
        size: spec.image_size,
        channels: spec.channels,
        background,
        foreground,
        defect,
    }
}

/// One generated sample with the scene that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub sample: ImageSample,
    pub scene: SceneParams,
}

pub fn generate_synthetic_samples(spec: &SyntheticSpec) -> Result<Vec<SyntheticSample>> {
    spec.validate()?;
    let stream = SeedStream::new(spec.seed);
    let n_defect = (spec.defect_rate * spec.n_test as f64).round() as usize;
    let mut defect_flags: Vec<bool> = (0..spec.n_test).map(|i| i < n_defect).collect();
    defect_flags.shuffle(&mut stream.rng("synthetic/defect-order"));

    let mut out = Vec::with_capacity(spec.n_train + spec.n_test);
    let mut rng = stream.rng("synthetic/train");
    for i in 0..spec.n_train {
        let scene = draw_scene(spec, false, &mut rng);
        out.push(SyntheticSample {
            sample: ImageSample {
                pixels: render(&scene),
                label: Label::Good,
                defect_kind: "good".into(),
                split: Split::Train,
                source_path: format!("train/good/{i:04}.pgm"),
            },
            scene,
        });
    }
    let mut rng = stream.rng("synthetic/test");
    for (i, &defective) in defect_flags.iter().enumerate() {
        let scene = draw_scene(spec, defective, &mut rng);
        let kind = scene.defect.map(|d| d.name()).unwrap_or("good");
        out.push(SyntheticSample {
            sample: ImageSample {
                pixels: render(&scene),
                label: if defective { Label::Defect } else { Label::Good },
                defect_kind: kind.into(),
                split: Split::Test,
                source_path: format!("test/{kind}/{i:04}.pgm"),
            },
            scene,
        });
    }
    Ok(out)
}

pub fn generate_synthetic_set(spec: &SyntheticSpec) -> Result<Dataset> {
    let samples = generate_synthetic_samples(spec)?.into_iter().map(|s| s.sample).collect();
    let name = match spec.shape {
        ShapeKind::Disk => "synthetic-disks",
        ShapeKind::Rectangle => "synthetic-rectangles",
    };
    Ok(Dataset {
        class_name: name.into(),
        samples,
        seed: spec.seed,
    })
}
