//! Anomaly-detection pipelines: a supervised CNN and two convolutional
//! autoencoders scored by reconstruction error and latent density.

pub mod arch;
pub mod kde;
pub mod scoring;
pub mod ssim;
pub mod train;

use std::fs;
use std::path::Path;

use crate::dataset::netpbm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use arch::{build_cnn, build_kd_cae, build_ni_cae, CnnConfig, KdCaeConfig, NiCaeConfig};
pub use kde::{fit_kde, kde_log_density, pool_latent, Bandwidth, KdeModel};
pub use scoring::{
    calibrate_thresholds, classify_supervised, decide_anomaly, encode_latent, encode_latents, percentile, reconstruction_error,
    reconstruction_errors, score_csv, AnomalyScore, CaeScorer, CombineRule, ScoreRow, ThresholdSet,
};
pub use ssim::{ssim, SsimResult};
pub use train::{train, EarlyStopping, EpochRecord, TrainConfig, TrainData, TrainOutcome};

/// Writes `original | reconstruction | SSIM difference` strips for each image
/// plus a `diagnostics.csv` manifest (`file,source,ssim`). Color inputs are
/// converted to luminance first.
pub fn write_diagnostics(dir: &Path, sources: &[String], originals: &Tensor<f32>, reconstructions: &Tensor<f32>) -> Result<()> {
    if originals.shape() != reconstructions.shape() {
        return Err(Error::invalid("write_diagnostics", "original and reconstruction shapes differ"));
    }
    if sources.len() != originals.batch() {
        return Err(Error::shape("write_diagnostics", "source count", originals.batch(), sources.len()));
    }
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("file,source,ssim\n");
    for (i, src) in sources.iter().enumerate() {
        let a = crate::dataset::to_grayscale(&originals.slice_sample(i));
        let b = crate::dataset::to_grayscale(&reconstructions.slice_sample(i));
        let s = ssim(&a, &b)?;
        let diff = s.diff_image();
        let [_, _, h, w] = a.shape();
        let [_, _, dh, dw] = diff.shape();
        let (oy, ox) = ((h - dh) / 2, (w - dw) / 2);
        let strip = Tensor::from_fn([1, 1, h, 3 * w], |[_, _, y, x]| match x / w {
            0 => a.at([0, 0, y, x]),
            1 => b.at([0, 0, y, x - w]),
            _ => {
                let (yy, xx) = (y.wrapping_sub(oy), (x - 2 * w).wrapping_sub(ox));
                if yy < dh && xx < dw {
                    diff.at([0, 0, yy, xx])
                } else {
                    0.0
                }
            }
        });
        let name = format!("{i:05}.pgm");
        netpbm::write(&dir.join(&name), &strip, 0)?;
        let src = if src.contains([',', '"']) { format!("\"{}\"", src.replace('"', "\"\"")) } else { src.clone() };
        manifest.push_str(&format!("{name},{src},{}\n", crate::metrics::fmt6(s.score)));
    }
    fs::write(dir.join("diagnostics.csv"), manifest)?;
    Ok(())
}
