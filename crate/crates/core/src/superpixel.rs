//! SLIC superpixels: k-means over (L*, a*, b*, x, y) restricted to local
//! windows, followed by connectivity enforcement.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use smokesal_tensor::par;

use crate::image::{Gray8, Map, Plane, RgbImage};
use crate::{Error, Result};

/// One superpixel label per pixel, labels dense in `[0, count)`.
pub type LabelMap = Plane<u32>;

/// CIE L*a*b* image (D65), planar.
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub channels: [Vec<f64>; 3],
}

impl LabImage {
    fn at(&self, i: usize) -> [f64; 3] {
        [self.channels[0][i], self.channels[1][i], self.channels[2][i]]
    }
}

const D65: [f64; 3] = [0.950_47, 1.0, 1.088_83];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts one sRGB colour with components in `[0, 1]` to L*a*b*.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (lab_f(x / D65[0]), lab_f(y / D65[1]), lab_f(z / D65[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// 8-bit sRGB to L*a*b*.
pub fn srgb8_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    srgb_to_lab(rgb.map(|v| v as f64 / 255.0))
}

pub fn rgb_to_lab(image: &RgbImage) -> LabImage {
    let n = image.width * image.height;
    let mut channels = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        let lab = srgb_to_lab([image.channels[0][i], image.channels[1][i], image.channels[2][i]]);
        for c in 0..3 {
            channels[c][i] = lab[c];
        }
    }
    LabImage {
        width: image.width,
        height: image.height,
        channels,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicParams {
    /// Requested number of superpixels K.
    pub k: usize,
    /// Compactness m, trading colour similarity against spatial proximity.
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            k: 100,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// Output of [`slic`].
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub labels: LabelMap,
    /// Number of superpixels after connectivity enforcement.
    pub count: usize,
    /// Sum over pixels of the squared SLIC distance to the assigned centre,
    /// recorded after each assignment step.
    pub residuals: Vec<f64>,
}

const UNASSIGNED: u32 = u32::MAX;

pub fn slic(image: &RgbImage, params: &SlicParams) -> Result<Segmentation> {
    let (w, h) = image.size();
    let n = w * h;
    if params.k == 0 || params.k > n {
        return Err(Error::invalid(format!(
            "requested {} superpixels for an image of {n} pixels",
            params.k
        )));
    }
    if !(params.compactness > 0.0) {
        return Err(Error::invalid("compactness must be positive"));
    }
    let lab = rgb_to_lab(image);
    let step = (n as f64 / params.k as f64).sqrt();
    let mut centers = seed_centers(&lab, step);
    let spatial = (params.compactness / step).powi(2);

    let dist2 = |c: &Center, i: usize, x: usize, y: usize| -> f64 {
        let p = lab.at(i);
        let dl = (p[0] - c.lab[0]).powi(2) + (p[1] - c.lab[1]).powi(2) + (p[2] - c.lab[2]).powi(2);
        let dx = x as f64 - c.x;
        let dy = y as f64 - c.y;
        dl + spatial * (dx * dx + dy * dy)
    };

    let mut labels = vec![UNASSIGNED; n];
    let mut residuals = Vec::with_capacity(params.iterations);
    for _ in 0..params.iterations.max(1) {
        let snapshot = labels.clone();
        let row_residuals = {
            let centers = &centers;
            let mut rows: Vec<(&mut [u32], f64)> = labels.chunks_mut(w).map(|r| (r, 0.0)).collect();
            par::for_each_chunk_mut(&mut rows, 1, |y, slot| {
                let (row, acc) = &mut slot[0];
                let near: Vec<usize> = (0..centers.len())
                    .filter(|&k| (centers[k].y - y as f64).abs() <= step)
                    .collect();
                for x in 0..w {
                    let i = y * w + x;
                    let cur = snapshot[i];
                    let (mut best_k, mut best) = if cur == UNASSIGNED {
                        (UNASSIGNED, f64::INFINITY)
                    } else {
                        (cur, dist2(&centers[cur as usize], i, x, y))
                    };
                    for &k in near.iter().filter(|&&k| (centers[k].x - x as f64).abs() <= step) {
                        let d = dist2(&centers[k], i, x, y);
                        if d < best || (d == best && (k as u32) < best_k) {
                            best = d;
                            best_k = k as u32;
                        }
                    }
                    if best_k == UNASSIGNED {
                        // Outside every window: fall back to the global nearest centre.
                        for (k, c) in centers.iter().enumerate() {
                            let d = dist2(c, i, x, y);
                            if d < best {
                                best = d;
                                best_k = k as u32;
                            }
                        }
                    }
                    row[x] = best_k;
                    *acc += best;
                }
            });
            rows.iter().map(|(_, r)| *r).collect::<Vec<f64>>()
        };
        residuals.push(row_residuals.iter().sum());
        update_centers(&lab, &labels, &mut centers);
    }

    let min_size = ((step * step) / 4.0).floor().max(1.0) as usize;
    let (labels, count) = enforce_connectivity(&labels, w, h, min_size);
    Ok(Segmentation {
        labels: Plane::from_vec(w, h, labels)?,
        count,
        residuals,
    })
}

fn seed_centers(lab: &LabImage, step: f64) -> Vec<Center> {
    let (w, h) = (lab.width, lab.height);
    let nx = ((w as f64 / step).round() as usize).clamp(1, w);
    let ny = ((h as f64 / step).round() as usize).clamp(1, h);
    let grad = |x: usize, y: usize| -> f64 {
        let at = |x: usize, y: usize| lab.at(y * w + x);
        let (l, r) = (at(x.saturating_sub(1), y), at((x + 1).min(w - 1), y));
        let (u, d) = (at(x, y.saturating_sub(1)), at(x, (y + 1).min(h - 1)));
        (0..3).map(|c| (r[c] - l[c]).powi(2) + (d[c] - u[c]).powi(2)).sum()
    };
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // Cell centre in pixel-index coordinates; it stays there unless
            // a neighbour of the nearest pixel has a strictly lower gradient.
            let cx = (i as f64 + 0.5) * w as f64 / nx as f64 - 0.5;
            let cy = (j as f64 + 0.5) * h as f64 / ny as f64 - 0.5;
            let sx = (cx.round() as usize).min(w - 1);
            let sy = (cy.round() as usize).min(h - 1);
            let (mut bx, mut by, mut bg) = (sx, sy, grad(sx, sy));
            for yy in sy.saturating_sub(1)..=(sy + 1).min(h - 1) {
                for xx in sx.saturating_sub(1)..=(sx + 1).min(w - 1) {
                    let g = grad(xx, yy);
                    if g < bg {
                        (bx, by, bg) = (xx, yy, g);
                    }
                }
            }
            let (x, y) = if (bx, by) == (sx, sy) { (cx, cy) } else { (bx as f64, by as f64) };
            centers.push(Center {
                lab: lab.at(by * w + bx),
                x,
                y,
            });
        }
    }
    centers
}

fn update_centers(lab: &LabImage, labels: &[u32], centers: &mut [Center]) {
    let w = lab.width;
    let mut sums = vec![[0.0f64; 5]; centers.len()];
    let mut counts = vec![0usize; centers.len()];
    for (i, &l) in labels.iter().enumerate() {
        let p = lab.at(i);
        let s = &mut sums[l as usize];
        s[0] += p[0];
        s[1] += p[1];
        s[2] += p[2];
        s[3] += (i % w) as f64;
        s[4] += (i / w) as f64;
        counts[l as usize] += 1;
    }
    for ((c, s), &k) in centers.iter_mut().zip(&sums).zip(&counts) {
        if k > 0 {
            let k = k as f64;
            *c = Center {
                lab: [s[0] / k, s[1] / k, s[2] / k],
                x: s[3] / k,
                y: s[4] / k,
            };
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// 4-connected components of a label map: component id per pixel plus the
/// pixel count of every component, ids in scan order of first pixel.
pub fn connected_components(labels: &[u32], w: usize, h: usize) -> (Vec<usize>, Vec<usize>) {
    let mut comp = vec![usize::MAX; w * h];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let lab = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == lab {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        sizes.push(size);
    }
    (comp, sizes)
}

/// Splits labels into 4-connected pieces. The largest piece of each label
/// keeps it unless smaller than `min_size`; every other piece is an orphan.
/// Orphans and undersized pieces merge into their largest adjacent
/// superpixel. Returns dense labels (numbered in scan order) and their count.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: usize) -> (Vec<u32>, usize) {
    let (comp, sizes) = connected_components(labels, w, h);
    let ncomp = sizes.len();
    let mut adjacent: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
    for y in 0..h {
        for x in 0..w {
            let a = comp[y * w + x];
            let mut link = |b: usize| {
                if a != b {
                    adjacent[a].push(b);
                    adjacent[b].push(a);
                }
            };
            if x + 1 < w {
                link(comp[y * w + x + 1]);
            }
            if y + 1 < h {
                link(comp[(y + 1) * w + x]);
            }
        }
    }
    for a in &mut adjacent {
        a.sort_unstable();
        a.dedup();
    }

    // Largest piece per original label, first in scan order on ties.
    let mut primary: HashMap<u32, usize> = HashMap::new();
    let mut first_pixel = vec![usize::MAX; ncomp];
    for (i, &c) in comp.iter().enumerate() {
        if first_pixel[c] == usize::MAX {
            first_pixel[c] = i;
            let e = primary.entry(labels[i]).or_insert(c);
            if sizes[c] > sizes[*e] {
                *e = c;
            }
        }
    }
    let mut anchored = vec![false; ncomp];
    for &c in primary.values() {
        anchored[c] = sizes[c] >= min_size;
    }

    let mut parent: Vec<usize> = (0..ncomp).collect();
    let mut group_size = sizes.clone();
    let mut loose: Vec<usize> = (0..ncomp).filter(|&c| !anchored[c]).collect();
    loose.sort_by_key(|&c| (sizes[c], c));
    for c in loose {
        let root = find(&mut parent, c);
        if anchored[root] {
            continue;
        }
        let mut best: Option<usize> = None;
        for &nb in &adjacent[c] {
            let r = find(&mut parent, nb);
            if r == root {
                continue;
            }
            best = match best {
                Some(b) if group_size[b] > group_size[r] || (group_size[b] == group_size[r] && b < r) => Some(b),
                _ => Some(r),
            };
        }
        if let Some(target) = best {
            parent[root] = target;
            group_size[target] += group_size[root];
        }
    }

    let mut dense = vec![u32::MAX; ncomp];
    let mut next = 0u32;
    let mut out = vec![0u32; w * h];
    for (i, &c) in comp.iter().enumerate() {
        let r = find(&mut parent, c);
        if dense[r] == u32::MAX {
            dense[r] = next;
            next += 1;
        }
        out[i] = dense[r];
    }
    (out, next as usize)
}

/// Replaces each pixel of `pixel_map` by the mean over its superpixel. This
/// superpixel-mean aggregation stands in for a learned region-level model.
pub fn region_saliency(labels: &LabelMap, pixel_map: &Map) -> Result<Map> {
    if !labels.same_size(pixel_map) {
        return Err(Error::invalid(format!(
            "label map {}×{} does not match saliency map {}×{}",
            labels.width, labels.height, pixel_map.width, pixel_map.height
        )));
    }
    let k = labels.data.iter().max().map_or(0, |&m| m as usize + 1);
    let mut sum = vec![0.0; k];
    let mut cnt = vec![0usize; k];
    for (&l, &v) in labels.data.iter().zip(&pixel_map.data) {
        sum[l as usize] += v;
        cnt[l as usize] += 1;
    }
    Ok(labels.map(|&l| sum[l as usize] / cnt[l as usize] as f64))
}

/// Visualization: superpixels overlapping the mask on strictly more than
/// half their pixels are white, the others take their mean gray level;
/// each superpixel centroid is marked with a 3×3 black block.
pub fn render_overlap(image: &RgbImage, labels: &LabelMap, mask: &Plane<bool>) -> Result<Gray8> {
    if !labels.same_size(mask) || labels.size() != image.size() {
        return Err(Error::invalid("image, label map and mask must have the same size"));
    }
    let (w, h) = labels.size();
    let k = labels.data.iter().max().map_or(0, |&m| m as usize + 1);
    let luma = image.luma();
    let mut gray = vec![0.0; k];
    let mut inside = vec![0usize; k];
    let mut count = vec![0usize; k];
    let mut cx = vec![0.0; k];
    let mut cy = vec![0.0; k];
    for (i, &l) in labels.data.iter().enumerate() {
        let l = l as usize;
        gray[l] += luma.data[i];
        inside[l] += mask.data[i] as usize;
        count[l] += 1;
        cx[l] += (i % w) as f64;
        cy[l] += (i / w) as f64;
    }
    let mut out = labels.map(|&l| {
        let l = l as usize;
        if 2 * inside[l] > count[l] {
            255
        } else {
            (gray[l] / count[l] as f64 * 255.0).round() as u8
        }
    });
    for l in 0..k {
        if count[l] == 0 {
            continue;
        }
        let (mx, my) = (
            (cx[l] / count[l] as f64).round() as usize,
            (cy[l] / count[l] as f64).round() as usize,
        );
        for y in my.saturating_sub(1)..=(my + 1).min(h - 1) {
            for x in mx.saturating_sub(1)..=(mx + 1).min(w - 1) {
                out.set(x, y, 0);
            }
        }
    }
    Ok(out)
}

/// Label map as 16-bit grayscale for PNG export.
pub fn labels_to_u16(labels: &LabelMap) -> Result<Plane<u16>> {
    if labels.data.iter().any(|&l| l > u16::MAX as u32) {
        return Err(Error::invalid("more than 65536 labels cannot be stored in 16 bits"));
    }
    Ok(labels.map(|&l| l as u16))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lab_reference_points() {
        assert_eq!(srgb8_to_lab([0, 0, 0])[0], 0.0);
        let white = srgb8_to_lab([255, 255, 255]);
        assert!((white[0] - 100.0).abs() < 1e-3);
        assert!(white[1].abs() < 0.5 && white[2].abs() < 0.5);
    }

    #[test]
    fn mid_gray_matches_luminance_formula() {
        // L* of a neutral colour depends on relative luminance only.
        let c: f64 = 119.0 / 255.0;
        let y = ((c + 0.055) / 1.055).powf(2.4);
        let l_ref = 116.0 * y.powf(1.0 / 3.0) - 16.0;
        let lab = srgb8_to_lab([119, 119, 119]);
        assert!((lab[0] - l_ref).abs() < 0.1);
        assert!(lab[1].abs() < 0.5 && lab[2].abs() < 0.5);
    }

    #[test]
    fn single_pixel() {
        let img = RgbImage::filled(1, 1, [0.2, 0.3, 0.4]);
        let seg = slic(&img, &SlicParams { k: 1, ..Default::default() }).unwrap();
        assert_eq!(seg.count, 1);
        assert_eq!(seg.labels.data, vec![0]);
    }

    #[test]
    fn too_many_superpixels_rejected() {
        let img = RgbImage::filled(3, 3, [0.0; 3]);
        assert!(slic(&img, &SlicParams { k: 10, ..Default::default() }).is_err());
    }

    #[test]
    fn region_saliency_block_means() {
        let labels = Plane::from_vec(4, 1, vec![0, 0, 1, 1]).unwrap();
        let map = Plane::from_vec(4, 1, vec![0.2, 0.4, 1.0, 0.0]).unwrap();
        let r = region_saliency(&labels, &map).unwrap();
        let expect = [0.3, 0.3, 0.5, 0.5];
        for (a, b) in r.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let single = Plane::filled(4, 1, 0u32);
        let g = region_saliency(&single, &map).unwrap();
        assert!(g.data.iter().all(|&v| (v - 0.4).abs() < 1e-15));
        let constant = Plane::filled(4, 1, 0.7);
        assert_eq!(region_saliency(&labels, &constant).unwrap(), constant);
        assert!(region_saliency(&Plane::filled(3, 1, 0u32), &map).is_err());
    }

    #[test]
    fn overlap_rendering_rule() {
        // Two superpixels of 4 pixels; the left one is exactly half covered.
        let img = RgbImage::filled(4, 2, [0.5; 3]);
        let labels = Plane::from_fn(4, 2, |x, _| (x / 2) as u32);
        let mut mask = Plane::filled(4, 2, false);
        mask.set(0, 0, true);
        mask.set(1, 0, true);
        let out = render_overlap(&img, &labels, &mask).unwrap();
        assert!(out.data.iter().all(|&v| v != 255));
        let full = Plane::filled(4, 2, true);
        let out = render_overlap(&img, &labels, &full).unwrap();
        // Everything but the centroid markers is white.
        assert!(out.data.iter().all(|&v| v == 255 || v == 0));
        let none = Plane::filled(4, 2, false);
        assert!(render_overlap(&img, &labels, &none).unwrap().data.iter().all(|&v| v != 255));
    }
}
