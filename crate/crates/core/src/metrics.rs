//! Binary classification metrics with defects as the positive class,
//! score histograms and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::{netpbm, Label};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion_counts(labels: &[Label], predictions: &[Label]) -> Result<ConfusionCounts> {
    if labels.len() != predictions.len() {
        return Err(Error::shape("confusion_counts", "length", labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(Error::invalid("confusion_counts", "no samples"));
    }
    let mut c = ConfusionCounts::default();
    for (&l, &p) in labels.iter().zip(predictions) {
        match (l.is_defect(), p.is_defect()) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `tp / (tp + (fp + fn) / 2)`, and 0 when the denominator is 0.
pub fn f1_score(c: &ConfusionCounts) -> f64 {
    let denom = c.tp as f64 + 0.5 * (c.fp + c.fn_) as f64;
    if denom == 0.0 {
        0.0
    } else {
        c.tp as f64 / denom
    }
}

/// Probability that a random defect outscores a random good sample, ties
/// counting one half. Computed from ranks in `O(n log n)`.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("roc_auc", "length", labels.len(), scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("roc_auc: NaN score".into()));
    }
    let n_pos = labels.iter().filter(|l| l.is_defect()).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("roc_auc", "both classes must be present (AUC undefined)"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the Mann-Whitney U statistic, kept in integers
    let mut u2: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]].is_defect() {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        u2 += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Per-group counts over shared bin edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub groups: Vec<(String, Vec<u64>)>,
}

pub fn score_histogram(groups: &[(&str, &[f64])], bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::invalid("score_histogram", "need at least 2 bins"));
    }
    let all = groups.iter().flat_map(|(_, s)| s.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return Err(Error::invalid("score_histogram", "no scores"));
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Numeric("score_histogram: non-finite score".into()));
    }
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    edges[bins] = hi;
    let groups = groups
        .iter()
        .map(|(name, scores)| {
            let mut counts = vec![0u64; bins];
            for &s in scores.iter() {
                let b = (((s - lo) / width).floor() as usize).min(bins - 1);
                counts[b] += 1;
            }
            (name.to_string(), counts)
        })
        .collect();
    Ok(Histogram { edges, groups })
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high");
        for (name, _) in &self.groups {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for b in 0..self.edges.len() - 1 {
            let _ = write!(out, "{},{}", fmt6(self.edges[b]), fmt6(self.edges[b + 1]));
            for (_, counts) in &self.groups {
                let _ = write!(out, ",{}", counts[b]);
            }
            out.push('\n');
        }
        out
    }

    /// Grouped bar chart; groups alternate gray levels, an optional marker
    /// value is drawn as a white vertical line.
    pub fn render(&self, marker: Option<f64>) -> Tensor<f32> {
        const HEIGHT: usize = 120;
        const BAR: usize = 4;
        let bins = self.edges.len() - 1;
        let g = self.groups.len().max(1);
        let slot = g * BAR + 2;
        let width = bins * slot + 2;
        let peak = self.groups.iter().flat_map(|(_, c)| c.iter().copied()).max().unwrap_or(0).max(1);
        let mut img = Tensor::full([1, 1, HEIGHT, width], 0.0f32);
        for (gi, (_, counts)) in self.groups.iter().enumerate() {
            let shade = 0.35 + 0.5 * gi as f32 / g as f32;
            for (b, &count) in counts.iter().enumerate() {
                let h = (count as f64 / peak as f64 * (HEIGHT - 2) as f64).round() as usize;
                let x0 = 1 + b * slot + gi * BAR;
                for y in HEIGHT - h..HEIGHT {
                    for x in x0..x0 + BAR {
                        img.set([0, 0, y, x], shade);
                    }
                }
            }
        }
        if let Some(m) = marker {
            let (lo, hi) = (self.edges[0], self.edges[bins]);
            if (lo..=hi).contains(&m) {
                let x = 1 + ((m - lo) / (hi - lo) * (bins * slot) as f64).round() as usize;
                for y in 0..HEIGHT {
                    img.set([0, 0, y, x.min(width - 1)], 1.0);
                }
            }
        }
        img
    }

    pub fn write(&self, csv_path: &Path, pgm_path: &Path, marker: Option<f64>) -> Result<()> {
        fs::write(csv_path, self.to_csv())?;
        netpbm::write(pgm_path, &self.render(marker), 0)
    }
}

/// Fixed six-decimal formatting used by every report file.
pub fn fmt6(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        let s = format!("{v:.6}");
        // avoid "-0.000000"
        if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            s.trim_start_matches('-').to_string()
        } else {
            s
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub path: String,
    pub label: Label,
    pub score: f64,
    pub decision: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub seed: u64,
    pub confusion: ConfusionCounts,
    pub f1: f64,
    /// `None` when the evaluated set holds a single class.
    pub roc_auc: Option<f64>,
    /// Named thresholds, e.g. `tau_re`.
    pub thresholds: Vec<(String, f64)>,
    pub samples: Vec<ScoredSample>,
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const DETAIL_FILE: &str = "detail.csv";

const FOOTER: &str = "# f1 = tp/(tp+(fp+fn)/2), defined as 0 when tp+fp+fn = 0; roc_auc counts ties as 1/2\n";

impl EvalReport {
    pub fn from_samples(dataset: &str, seed: u64, thresholds: Vec<(String, f64)>, samples: Vec<ScoredSample>) -> Result<Self> {
        let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
        let decisions: Vec<Label> = samples.iter().map(|s| s.decision).collect();
        let scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
        let confusion = confusion_counts(&labels, &decisions)?;
        let both = labels.iter().any(|l| l.is_defect()) && labels.iter().any(|l| !l.is_defect());
        let roc_auc = if both { Some(roc_auc(&scores, &labels)?) } else { None };
        Ok(Self {
            dataset: dataset.to_string(),
            seed,
            confusion,
            f1: f1_score(&confusion),
            roc_auc,
            thresholds,
            samples,
        })
    }

    pub fn summary_csv(&self) -> String {
        let c = &self.confusion;
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "dataset,{}", self.dataset);
        let _ = writeln!(out, "seed,{}", self.seed);
        let _ = writeln!(out, "n,{}", c.total());
        for (k, v) in [("tp", c.tp), ("fp", c.fp), ("tn", c.tn), ("fn", c.fn_)] {
            let _ = writeln!(out, "{k},{v}");
        }
        let _ = writeln!(out, "f1,{}", fmt6(self.f1));
        let _ = writeln!(out, "roc_auc,{}", self.roc_auc.map(fmt6).unwrap_or_else(|| "undefined".into()));
        for (k, v) in &self.thresholds {
            let _ = writeln!(out, "threshold_{k},{}", fmt6(*v));
        }
        out.push_str(FOOTER);
        out
    }

    pub fn detail_csv(&self) -> String {
        let mut out = String::from("path,label,score,decision\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{},{}", csv_field(&s.path), s.label, fmt6(s.score), s.decision);
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(SUMMARY_FILE), self.summary_csv())?;
        fs::write(dir.join(DETAIL_FILE), self.detail_csv())?;
        Ok(())
    }

    /// Reads a report written by [`EvalReport::write`]. Reals come back at the
    /// six-decimal precision of the files; the stored f1 is checked against
    /// the stored confusion counts.
    pub fn read(dir: &Path) -> Result<Self> {
        let summary = read_records(&dir.join(SUMMARY_FILE), &["metric", "value"])?;
        let get = |k: &str| {
            summary
                .iter()
                .find(|r| r[0] == k)
                .map(|r| r[1].clone())
                .ok_or_else(|| Error::Data(format!("summary lacks `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Data(format!("summary `{k}` is not a number")))
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Data(format!("summary `{k}` is not an integer")))
        };
        let roc_auc = match get("roc_auc")?.as_str() {
            "undefined" => None,
            _ => Some(num("roc_auc")?),
        };
        let thresholds = summary
            .iter()
            .filter_map(|r| r[0].strip_prefix("threshold_").map(|k| (k.to_string(), r[1].clone())))
            .map(|(k, v)| v.parse().map(|v| (k, v)).map_err(|_| Error::Data("bad threshold value".into())))
            .collect::<Result<Vec<_>>>()?;
        let samples = read_records(&dir.join(DETAIL_FILE), &["path", "label", "score", "decision"])?
            .into_iter()
            .map(|r| {
                Ok(ScoredSample {
                    path: r[0].clone(),
                    label: r[1].parse()?,
                    score: r[2].parse().map_err(|_| Error::Data(format!("bad score `{}`", r[2])))?,
                    decision: r[3].parse()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let confusion = ConfusionCounts {
            tp: int("tp")?,
            fp: int("fp")?,
            tn: int("tn")?,
            fn_: int("fn")?,
        };
        if fmt6(f1_score(&confusion)) != get("f1")? {
            return Err(Error::Data("summary f1 disagrees with its confusion counts".into()));
        }
        Ok(Self {
            dataset: get("dataset")?,
            seed: int("seed")?,
            confusion,
            f1: num("f1")?,
            roc_auc,
            thresholds,
            samples,
        })
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Reads a headed CSV file, skipping `#` comment lines.
pub fn read_records(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let found: Vec<String> = r
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(Error::Data(format!("{}: expected header `{}`", path.display(), header.join(","))));
    }
    r.records()
        .map(|rec| {
            rec.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}
