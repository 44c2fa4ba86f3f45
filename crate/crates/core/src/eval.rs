//! Precision-recall curves, F-measure, adaptive thresholding, overlap and
//! image statistics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::image::{Gray8, Map, Mask, RgbImage};
use crate::{Error, Result};

/// β² of the F-measure.
pub const BETA2: f64 = 0.3;

/// Version of the metrics JSON and PR CSV layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: u8,
    pub precision: f64,
    pub recall: f64,
}

/// One point per threshold `0..=255`; a pixel is predicted salient when
/// its value is strictly greater than the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Pool counts over all images, then divide.
    Micro,
    /// Average per-image precision and recall over images with salient
    /// ground truth.
    Macro,
}

/// Per-value histograms of ground-truth positive and negative pixels.
fn value_histograms(map: &Gray8, gt: &Mask) -> ([u64; 256], [u64; 256]) {
    let mut pos = [0u64; 256];
    let mut neg = [0u64; 256];
    for (&v, &g) in map.data.iter().zip(&gt.data) {
        if g {
            pos[v as usize] += 1;
        } else {
            neg[v as usize] += 1;
        }
    }
    (pos, neg)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(tp, fp, fn)` per threshold.
fn counts(pos: &[u64; 256], neg: &[u64; 256]) -> Vec<(u64, u64, u64)> {
    let total_pos: u64 = pos.iter().sum();
    let mut tp = 0;
    let mut fp = 0;
    let mut out = vec![(0, 0, 0); 256];
    for t in (0..256).rev() {
        out[t] = (tp, fp, total_pos - tp);
        tp += pos[t];
        fp += neg[t];
    }
    out
}

pub fn pr_curve(maps: &[Gray8], gts: &[Mask], averaging: Averaging) -> Result<PrCurve> {
    if maps.len() != gts.len() {
        return Err(Error::invalid(format!("{} maps for {} ground-truth masks", maps.len(), gts.len())));
    }
    for (i, (m, g)) in maps.iter().zip(gts).enumerate() {
        if !m.same_size(g) {
            return Err(Error::invalid(format!(
                "map {i} is {}×{} but its mask is {}×{}",
                m.width, m.height, g.width, g.height
            )));
        }
    }
    let per_image: Vec<_> = maps.iter().zip(gts).map(|(m, g)| value_histograms(m, g)).collect();
    let positives: u64 = per_image.iter().map(|(p, _)| p.iter().sum::<u64>()).sum();
    if positives == 0 {
        return Err(Error::invalid("ground truth contains no salient pixels"));
    }
    let points = match averaging {
        Averaging::Micro => {
            let mut pos = [0u64; 256];
            let mut neg = [0u64; 256];
            for (p, n) in &per_image {
                for v in 0..256 {
                    pos[v] += p[v];
                    neg[v] += n[v];
                }
            }
            counts(&pos, &neg)
                .into_iter()
                .enumerate()
                .map(|(t, (tp, fp, fnn))| PrPoint {
                    threshold: t as u8,
                    precision: ratio(tp, tp + fp),
                    recall: ratio(tp, tp + fnn),
                })
                .collect()
        }
        Averaging::Macro => {
            let per: Vec<Vec<(u64, u64, u64)>> = per_image
                .iter()
                .filter(|(p, _)| p.iter().any(|&c| c > 0))
                .map(|(p, n)| counts(p, n))
                .collect();
            let k = per.len() as f64;
            (0..256)
                .map(|t| {
                    let (mut ps, mut rs) = (0.0, 0.0);
                    for c in &per {
                        let (tp, fp, fnn) = c[t];
                        ps += ratio(tp, tp + fp);
                        rs += ratio(tp, tp + fnn);
                    }
                    PrPoint {
                        threshold: t as u8,
                        precision: ps / k,
                        recall: rs / k,
                    }
                })
                .collect()
        }
    };
    Ok(PrCurve { points })
}

/// Weighted harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64, beta2: f64) -> f64 {
    let den = beta2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / den
    }
}

/// Twice the mean value of the map, clamped to `range_max`.
pub fn adaptive_threshold(values: &[f64], range_max: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (2.0 * mean).min(range_max)
}

/// Adaptive threshold of an 8-bit map, in `[0, 255]`.
pub fn adaptive_threshold_u8(map: &Gray8) -> f64 {
    let values: Vec<f64> = map.data.iter().map(|&v| v as f64).collect();
    adaptive_threshold(&values, 255.0)
}

/// Segmentation at threshold `t`: values `≥ t`, and strictly positive
/// values only when `t = 0`.
pub fn binarize(values: &[f64], width: usize, height: usize, t: f64) -> Mask {
    Mask::from_vec(width, height, values.iter().map(|&v| v >= t && v > 0.0).collect())
        .expect("length matches size")
}

/// Segmentation of an 8-bit map at its adaptive threshold.
pub fn adaptive_segmentation(map: &Gray8) -> Mask {
    let values: Vec<f64> = map.data.iter().map(|&v| v as f64).collect();
    let t = adaptive_threshold(&values, 255.0);
    binarize(&values, map.width, map.height, t)
}

/// Intersection over union; 1 when both masks are empty.
pub fn overlap(a: &Mask, b: &Mask) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::invalid("masks differ in size"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Precision and recall of a binary segmentation.
pub fn precision_recall(seg: &Mask, gt: &Mask) -> Result<(f64, f64)> {
    if !seg.same_size(gt) {
        return Err(Error::invalid("segmentation and ground truth differ in size"));
    }
    let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
    for (&s, &g) in seg.data.iter().zip(&gt.data) {
        match (s, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    Ok((ratio(tp, tp + fp), ratio(tp, tp + fnn)))
}

/// Denominator of the smoke size ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaRatio {
    /// `|mask| / (H·W)`.
    Image,
    /// `|mask| / |background|`.
    Background,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    /// χ² distance between smoke and background RGB histograms.
    pub hist_contrast: f64,
    pub size_ratio: f64,
    /// Mean gray level (0-255) over the smoke region.
    pub thickness: f64,
    /// Mean squared distance of smoke pixels to their centroid.
    pub dispersion: f64,
}

const HIST_BINS: usize = 32;
const CHI2_EPS: f64 = 1e-10;

/// Normalized 32-bin histograms of R, G and B over the selected pixels;
/// all zero when nothing is selected.
fn rgb_histogram(image: &RgbImage, select: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut h = vec![0.0; 3 * HIST_BINS];
    let mut n = 0usize;
    let q = image.to_u8();
    for i in 0..image.width * image.height {
        if select(i) {
            for c in 0..3 {
                h[c * HIST_BINS + q[c][i] as usize * HIST_BINS / 256] += 1.0;
            }
            n += 1;
        }
    }
    if n > 0 {
        h.iter_mut().for_each(|v| *v /= n as f64);
    }
    h
}

pub fn chi_square(h1: &[f64], h2: &[f64]) -> f64 {
    h1.iter().zip(h2).map(|(a, b)| (a - b) * (a - b) / (a + b + CHI2_EPS)).sum()
}

pub fn image_stats(image: &RgbImage, mask: &Mask, area: AreaRatio) -> Result<ImageStats> {
    if image.size() != mask.size() {
        return Err(Error::invalid("image and mask differ in size"));
    }
    let n = mask.count();
    if n == 0 {
        return Err(Error::invalid("smoke mask is empty"));
    }
    let total = mask.data.len();
    let fg = rgb_histogram(image, |i| mask.data[i]);
    let bg = rgb_histogram(image, |i| !mask.data[i]);
    let size_ratio = match area {
        AreaRatio::Image => n as f64 / total as f64,
        AreaRatio::Background => {
            if n == total {
                return Err(Error::invalid("background is empty"));
            }
            n as f64 / (total - n) as f64
        }
    };
    let luma = image.luma();
    let (mut gray, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (i, _) in mask.data.iter().enumerate().filter(|(_, &m)| m) {
        gray += luma.data[i] * 255.0;
        sx += (i % mask.width) as f64;
        sy += (i / mask.width) as f64;
    }
    let (cx, cy) = (sx / n as f64, sy / n as f64);
    let dispersion = mask
        .data
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| ((i % mask.width) as f64 - cx).powi(2) + ((i / mask.width) as f64 - cy).powi(2))
        .sum::<f64>()
        / n as f64;
    Ok(ImageStats {
        hist_contrast: chi_square(&fg, &bg),
        size_ratio,
        thickness: gray / n as f64,
        dispersion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub image_id: String,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub overlap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub existence_probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_label: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub images: usize,
    /// Images with salient ground truth, over which F-measure, precision
    /// and recall are averaged.
    pub salient_images: usize,
    pub f_measure: f64,
    pub precision: f64,
    pub recall: f64,
    /// Mean overlap over all images.
    pub overlap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub existence_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
}

/// One evaluated image: an 8-bit saliency map with its ground truth and,
/// optionally, the existence prediction.
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub map: &'a Gray8,
    pub gt: &'a Mask,
    pub existence: Option<(f64, u8)>,
}

/// Metrics at each image's adaptive threshold.
pub fn evaluate(items: &[EvalItem]) -> Result<MetricsReport> {
    let mut per_image = Vec::with_capacity(items.len());
    for it in items {
        let seg = adaptive_segmentation(it.map);
        let (precision, recall) = precision_recall(&seg, it.gt)?;
        per_image.push(ImageMetrics {
            image_id: it.id.to_string(),
            threshold: adaptive_threshold_u8(it.map),
            precision,
            recall,
            f_measure: f_measure(precision, recall, BETA2),
            overlap: overlap(&seg, it.gt)?,
            existence_probability: it.existence.map(|e| e.0),
            frame_label: it.existence.map(|e| e.1),
        });
    }
    let salient: Vec<&ImageMetrics> = per_image
        .iter()
        .zip(items)
        .filter(|(_, it)| it.gt.count() > 0)
        .map(|(m, _)| m)
        .collect();
    let mean = |f: &dyn Fn(&ImageMetrics) -> f64, set: &[&ImageMetrics]| {
        if set.is_empty() {
            0.0
        } else {
            set.iter().map(|m| f(m)).sum::<f64>() / set.len() as f64
        }
    };
    let all: Vec<&ImageMetrics> = per_image.iter().collect();
    let existence_accuracy = if items.iter().all(|it| it.existence.is_some()) && !items.is_empty() {
        let correct = items
            .iter()
            .filter(|it| {
                let (p, label) = it.existence.unwrap();
                (p >= 0.5) == (label == 1)
            })
            .count();
        Some(correct as f64 / items.len() as f64)
    } else {
        None
    };
    let aggregate = Aggregate {
        images: items.len(),
        salient_images: salient.len(),
        f_measure: mean(&|m| m.f_measure, &salient),
        precision: mean(&|m| m.precision, &salient),
        recall: mean(&|m| m.recall, &salient),
        overlap: mean(&|m| m.overlap, &all),
        existence_accuracy,
    };
    Ok(MetricsReport {
        schema_version: SCHEMA_VERSION,
        per_image,
        aggregate,
    })
}

/// Quantizes a `[0, 1]` map to 8 bits.
pub fn to_u8(map: &Map) -> Gray8 {
    map.unit_to_gray8()
}

/// Writes `threshold,precision,recall` rows, preceded by an optional
/// `# provenance:` comment line.
pub fn write_pr_csv(path: impl AsRef<Path>, curve: &PrCurve, provenance: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    if let Some(p) = provenance {
        writeln!(buf, "# provenance: {p}").expect("write to memory");
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["threshold", "precision", "recall"]).expect("write to memory");
        for p in &curve.points {
            w.serialize((p.threshold, p.precision, p.recall)).expect("write to memory");
        }
        w.flush().expect("write to memory");
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
