//! Dataset augmentation: gradient-domain compositing, alpha compositing,
//! hide-and-seek occlusion and a seeded synthetic smoke dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::image::{Map, Mask, Plane, RgbImage};
use crate::objectness::BBox;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    ConjugateGradient,
    GaussSeidel,
}

/// Pastes the masked region Ω of `source` into `target` with its top-left
/// corner at `offset`.
#[derive(Clone, Debug)]
pub struct CompositeJob {
    pub source: RgbImage,
    /// Ω in source coordinates.
    pub mask: Mask,
    pub target: RgbImage,
    /// `(x, y)` of the source origin inside the target.
    pub offset: (usize, usize),
    pub tolerance: f64,
    pub max_iterations: usize,
    pub solver: Solver,
    /// Retry with Gauss-Seidel when conjugate gradient does not converge.
    pub fallback: bool,
}

impl CompositeJob {
    pub fn new(source: RgbImage, mask: Mask, target: RgbImage, offset: (usize, usize)) -> Self {
        CompositeJob {
            source,
            mask,
            target,
            offset,
            tolerance: 1e-6,
            max_iterations: 10_000,
            solver: Solver::ConjugateGradient,
            fallback: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.mask.same_size(&Plane::filled(self.source.width, self.source.height, ())) {
            return Err(Error::invalid("mask and source image differ in size"));
        }
        let (ox, oy) = self.offset;
        if ox + self.source.width > self.target.width || oy + self.source.height > self.target.height {
            return Err(Error::invalid(format!(
                "source {}×{} at ({ox}, {oy}) exceeds target {}×{}",
                self.source.width, self.source.height, self.target.width, self.target.height
            )));
        }
        let Some((x0, y0, x1, y1)) = self.mask.bounding_box() else {
            return Err(Error::invalid("composite region is empty"));
        };
        let (sw, sh) = self.source.size();
        let (tw, th) = self.target.size();
        if x0 == 0 || y0 == 0 || x1 >= sw || y1 >= sh {
            return Err(Error::invalid("composite region touches the source border"));
        }
        if ox + x0 == 0 || oy + y0 == 0 || ox + x1 >= tw || oy + y1 >= th {
            return Err(Error::invalid("composite region touches the target border"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("solver tolerance must be positive"));
        }
        Ok(())
    }
}

/// Result of a gradient-domain composite.
#[derive(Clone, Debug)]
pub struct Composite {
    pub image: RgbImage,
    /// `max |Δf − Δg|` over Ω and channels.
    pub residual: f64,
    pub iterations: usize,
    pub solver: Solver,
}

/// Sparse 5-point Laplacian system over the pixels of Ω.
struct System {
    /// Target-space pixel index of every unknown.
    pixels: Vec<usize>,
    /// Unknown indices of the four neighbours, `usize::MAX` on ∂Ω.
    neighbours: Vec<[usize; 4]>,
}

impl System {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, nb) in self.neighbours.iter().enumerate() {
            let mut v = 4.0 * x[i];
            for &j in nb {
                if j != usize::MAX {
                    v -= x[j];
                }
            }
            out[i] = v;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn conjugate_gradient(sys: &System, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> (usize, f64) {
    let n = b.len();
    let mut ax = vec![0.0; n];
    sys.apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let res = inf_norm(&r);
        if res < tol {
            return (it, res);
        }
        sys.apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    // Recompute the true residual instead of trusting the recurrence.
    sys.apply(x, &mut ax);
    let res = b.iter().zip(&ax).fold(0.0f64, |m, (b, a)| m.max((b - a).abs()));
    (max_iter, res)
}

fn gauss_seidel(sys: &System, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> (usize, f64) {
    let mut ax = vec![0.0; b.len()];
    for it in 0..max_iter {
        for (i, nb) in sys.neighbours.iter().enumerate() {
            let mut s = b[i];
            for &j in nb {
                if j != usize::MAX {
                    s += x[j];
                }
            }
            x[i] = s / 4.0;
        }
        if it % 16 == 15 || it + 1 == max_iter {
            sys.apply(x, &mut ax);
            let res = b.iter().zip(&ax).fold(0.0f64, |m, (b, a)| m.max((b - a).abs()));
            if res < tol {
                return (it + 1, res);
            }
        }
    }
    sys.apply(x, &mut ax);
    let res = b.iter().zip(&ax).fold(0.0f64, |m, (b, a)| m.max((b - a).abs()));
    (max_iter, res)
}

/// Discrete 5-point Laplacian `4v − Σ neighbours` at interior pixel `(x, y)`.
pub fn laplacian(plane: &[f64], width: usize, x: usize, y: usize) -> f64 {
    let i = y * width + x;
    4.0 * plane[i] - plane[i - 1] - plane[i + 1] - plane[i - width] - plane[i + width]
}

/// Seamless cloning: inside Ω solves `Δf = Δg` per channel with `f` equal
/// to the target on ∂Ω; outside Ω the target is copied unchanged.
pub fn composite_poisson(job: &CompositeJob) -> Result<Composite> {
    job.validate()?;
    let (sw, _) = job.source.size();
    let (tw, _) = job.target.size();
    let (ox, oy) = job.offset;
    let mut unknown = vec![usize::MAX; job.target.width * job.target.height];
    let mut pixels = Vec::new();
    let mut src_pixels = Vec::new();
    for (si, &inside) in job.mask.data.iter().enumerate() {
        if inside {
            let (x, y) = (si % sw + ox, si / sw + oy);
            unknown[y * tw + x] = pixels.len();
            pixels.push(y * tw + x);
            src_pixels.push(si);
        }
    }
    let neighbours: Vec<[usize; 4]> = pixels
        .iter()
        .map(|&t| [unknown[t - 1], unknown[t + 1], unknown[t - tw], unknown[t + tw]])
        .collect();
    let sys = System { pixels, neighbours };

    let mut image = job.target.clone();
    let mut residual = 0.0f64;
    let mut iterations = 0;
    let mut used = job.solver;
    for c in 0..3 {
        let src = &job.source.channels[c];
        let tgt = &job.target.channels[c];
        let b: Vec<f64> = sys
            .pixels
            .iter()
            .zip(&src_pixels)
            .map(|(&t, &s)| {
                let mut v = laplacian(src, sw, s % sw, s / sw);
                for nb in [t - 1, t + 1, t - tw, t + tw] {
                    if unknown[nb] == usize::MAX {
                        v += tgt[nb];
                    }
                }
                v
            })
            .collect();
        let mut x: Vec<f64> = sys.pixels.iter().map(|&t| tgt[t]).collect();
        let solve = |solver: Solver, x: &mut Vec<f64>| match solver {
            Solver::ConjugateGradient => conjugate_gradient(&sys, &b, x, job.tolerance * 0.1, job.max_iterations),
            Solver::GaussSeidel => gauss_seidel(&sys, &b, x, job.tolerance * 0.1, job.max_iterations),
        };
        let (mut it, mut res) = solve(used, &mut x);
        if res >= job.tolerance && job.fallback && used == Solver::ConjugateGradient {
            used = Solver::GaussSeidel;
            (it, res) = solve(used, &mut x);
        }
        if res >= job.tolerance {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: res,
            });
        }
        for (&t, &v) in sys.pixels.iter().zip(&x) {
            image.channels[c][t] = v;
        }
        iterations += it;
        residual = residual.max(res);
    }
    Ok(Composite {
        image,
        residual,
        iterations,
        solver: used,
    })
}

/// `α·source + (1 − α)·target` over the placed source rectangle; `alpha`
/// is given in source coordinates.
pub fn composite_alpha(job: &CompositeJob, alpha: &Map) -> Result<RgbImage> {
    if !alpha.same_size(&Plane::filled(job.source.width, job.source.height, ())) {
        return Err(Error::invalid(format!(
            "alpha map {}×{} does not match source {}×{}",
            alpha.width, alpha.height, job.source.width, job.source.height
        )));
    }
    if alpha.data.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::invalid("alpha values must lie in [0, 1]"));
    }
    let (ox, oy) = job.offset;
    if ox + job.source.width > job.target.width || oy + job.source.height > job.target.height {
        return Err(Error::invalid("source does not fit inside the target at the given offset"));
    }
    let mut out = job.target.clone();
    for y in 0..job.source.height {
        for x in 0..job.source.width {
            let a = *alpha.get(x, y);
            let s = job.source.pixel(x, y);
            let t = job.target.pixel(x + ox, y + oy);
            out.set_pixel(x + ox, y + oy, [0, 1, 2].map(|c| a * s[c] + (1.0 - a) * t[c]));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HideParams {
    /// Cells across and down the mask bounding box.
    pub grid: (usize, usize),
    pub p_hide: f64,
    /// Colour written into hidden cells.
    pub fill: [f64; 3],
    /// Also clear the mask inside hidden cells.
    pub hide_mask: bool,
}

impl Default for HideParams {
    fn default() -> Self {
        HideParams {
            grid: (4, 4),
            p_hide: 0.5,
            fill: [0.5; 3],
            hide_mask: true,
        }
    }
}

/// Cell `(i, j)` of a `gx × gy` grid over `[x0, x1) × [y0, y1)`.
pub fn grid_cell(bbox: (usize, usize, usize, usize), grid: (usize, usize), i: usize, j: usize) -> (usize, usize, usize, usize) {
    let (x0, y0, x1, y1) = bbox;
    let (gx, gy) = grid;
    let (bw, bh) = (x1 - x0, y1 - y0);
    (
        x0 + i * bw / gx,
        y0 + j * bh / gy,
        x0 + (i + 1) * bw / gx,
        y0 + (j + 1) * bh / gy,
    )
}

/// Randomly hides grid cells of the smoke bounding box. One uniform draw
/// is taken per cell in row-major order; a cell is hidden when the draw is
/// below `p_hide` and the cell contains smoke.
pub fn hide_and_seek(image: &RgbImage, mask: &Mask, params: &HideParams, seed: u64) -> Result<(RgbImage, Mask)> {
    if !(0.0..=1.0).contains(&params.p_hide) {
        return Err(Error::invalid(format!("p_hide {} outside [0, 1]", params.p_hide)));
    }
    if params.grid.0 == 0 || params.grid.1 == 0 {
        return Err(Error::invalid("hide-and-seek grid must have at least one cell"));
    }
    if image.size() != mask.size() {
        return Err(Error::invalid("image and mask differ in size"));
    }
    let mut out = image.clone();
    let mut out_mask = mask.clone();
    let Some(bbox) = mask.bounding_box() else {
        return Ok((out, out_mask));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..params.grid.1 {
        for i in 0..params.grid.0 {
            let u: f64 = rng.gen();
            let (cx0, cy0, cx1, cy1) = grid_cell(bbox, params.grid, i, j);
            let has_smoke = (cy0..cy1).any(|y| (cx0..cx1).any(|x| *mask.get(x, y)));
            if u < params.p_hide && has_smoke {
                for y in cy0..cy1 {
                    for x in cx0..cx1 {
                        out.set_pixel(x, y, params.fill);
                        if params.hide_mask {
                            out_mask.set(x, y, false);
                        }
                    }
                }
            }
        }
    }
    Ok((out, out_mask))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_smoke: usize,
    pub n_background: usize,
    /// `[height, width]`, both divisible by 8.
    pub size: [usize; 2],
    pub seed: u64,
    /// Fraction of background images carrying a bright tinted blob.
    pub hard_negative_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_smoke: 64,
            n_background: 64,
            size: [64, 64],
            seed: 0,
            hard_negative_fraction: 0.5,
        }
    }
}

/// Smoke opacity above which a pixel belongs to the mask.
const MASK_ALPHA: f64 = 0.25;

/// Sum of a few random plane waves.
struct Waves {
    terms: Vec<(f64, f64, f64, f64)>,
}

impl Waves {
    fn new(rng: &mut ChaCha8Rng, count: usize, max_freq: f64, amplitude: f64) -> Self {
        let terms = (0..count)
            .map(|_| {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let f = rng.gen_range(0.2 * max_freq..max_freq);
                (f * angle.cos(), f * angle.sin(), rng.gen_range(0.0..std::f64::consts::TAU), amplitude / count as f64)
            })
            .collect();
        Waves { terms }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.terms.iter().map(|&(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin()).sum()
    }
}

fn background(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
    let base = [
        rng.gen_range(0.15..0.55),
        rng.gen_range(0.2..0.55),
        rng.gen_range(0.1..0.45),
    ];
    // Mostly shared luminance texture with weaker per-channel variation.
    let waves: Vec<Waves> = (0..3).map(|_| Waves::new(rng, 4, 0.5, 0.08)).collect();
    let shade = Waves::new(rng, 4, 0.4, 0.25);
    let noise: Vec<f64> = (0..w * h * 3).map(|_| rng.gen_range(-0.03..0.03)).collect();
    RgbImage::from_fn(w, h, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let s = shade.at(fx, fy);
        [0, 1, 2].map(|c| (base[c] + waves[c].at(fx, fy) + s + noise[(y * w + x) * 3 + c]).clamp(0.0, 1.0))
    })
}

/// Anisotropic Gaussian opacity with turbulence, peak at least `intensity`.
fn plume(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Map {
    let (fw, fh) = (w as f64, h as f64);
    let cx = rng.gen_range(0.25 * fw..0.75 * fw);
    let cy = rng.gen_range(0.25 * fh..0.75 * fh);
    let sx = rng.gen_range(0.08..0.22) * fw;
    let sy = rng.gen_range(0.08..0.22) * fh;
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let intensity = rng.gen_range(0.65..0.95);
    let turbulence = Waves::new(rng, 5, 0.6, 0.5);
    let (ct, st) = (theta.cos(), theta.sin());
    Plane::from_fn(w, h, |x, y| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        let u = (ct * dx + st * dy) / sx;
        let v = (-st * dx + ct * dy) / sy;
        let g = (-0.5 * (u * u + v * v)).exp();
        (intensity * g * (1.0 + 0.3 * turbulence.at(x as f64, y as f64))).clamp(0.0, 1.0)
    })
}

/// Bright, saturated, isotropic blurred blob: cloud-like clutter that is
/// not smoke.
fn tinted_blob(rng: &mut ChaCha8Rng, image: &mut RgbImage) {
    let (w, h) = image.size();
    let (fw, fh) = (w as f64, h as f64);
    let cx = rng.gen_range(0.2 * fw..0.8 * fw);
    let cy = rng.gen_range(0.2 * fh..0.8 * fh);
    let s = rng.gen_range(0.08..0.2) * fw.min(fh);
    let mut tint = [rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3)];
    tint[rng.gen_range(0..3)] = 1.0;
    let strength = rng.gen_range(0.6..0.9);
    for y in 0..h {
        for x in 0..w {
            let d2 = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)) / (s * s);
            let a = strength * (-0.5 * d2).exp();
            let p = image.pixel(x, y);
            image.set_pixel(x, y, [0, 1, 2].map(|c| a * tint[c] + (1.0 - a) * p[c]));
        }
    }
}

fn smoke_sample(rng: &mut ChaCha8Rng, id: String, w: usize, h: usize) -> Sample {
    let mut image = background(rng, w, h);
    let alpha = loop {
        let a = plume(rng, w, h);
        if a.data.iter().any(|&v| v > MASK_ALPHA) {
            break a;
        }
    };
    let gray: f64 = rng.gen_range(0.7..0.95);
    let tone = [gray, gray, (gray + 0.03).min(1.0)];
    for y in 0..h {
        for x in 0..w {
            let a = *alpha.get(x, y);
            let p = image.pixel(x, y);
            image.set_pixel(x, y, [0, 1, 2].map(|c| a * tone[c] + (1.0 - a) * p[c]));
        }
    }
    let image = image.quantized();
    let mask = alpha.map(|&a| a > MASK_ALPHA);
    let (x0, y0, x1, y1) = mask.bounding_box().expect("mask is non-empty");
    let score = rng.gen_range(0.6..=1.0);
    Sample {
        id,
        image,
        mask,
        label: 1,
        boxes: vec![BBox::new(x0 as u32, y0 as u32, x1 as u32, y1 as u32, score)],
    }
}

/// Generates smoke samples (ids `smoke_NNNN`) followed by background
/// samples (ids `bg_NNNN`). Identical parameters give identical output.
pub fn synth_dataset(params: &SynthParams) -> Result<Vec<Sample>> {
    let [h, w] = params.size;
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::invalid(format!("synthetic image size {h}×{w} must be a positive multiple of 8")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut samples = Vec::with_capacity(params.n_smoke + params.n_background);
    for i in 0..params.n_smoke {
        samples.push(smoke_sample(&mut rng, format!("smoke_{i:04}"), w, h));
    }
    for i in 0..params.n_background {
        let mut image = background(&mut rng, w, h);
        if rng.gen::<f64>() < params.hard_negative_fraction {
            tinted_blob(&mut rng, &mut image);
        }
        samples.push(Sample {
            id: format!("bg_{i:04}"),
            image: image.quantized(),
            mask: Plane::filled(w, h, false),
            label: 0,
            boxes: Vec::new(),
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| [x as f64 / w as f64, y as f64 / h as f64, 0.3])
    }

    fn disc(w: usize, h: usize, r: f64) -> Mask {
        Plane::from_fn(w, h, |x, y| {
            let dx = x as f64 - w as f64 / 2.0;
            let dy = y as f64 - h as f64 / 2.0;
            dx * dx + dy * dy <= r * r
        })
    }

    #[test]
    fn constant_images_stay_constant() {
        let src = RgbImage::filled(10, 10, [0.4; 3]);
        let tgt = RgbImage::filled(20, 20, [0.4; 3]);
        let job = CompositeJob::new(src, disc(10, 10, 3.0), tgt.clone(), (5, 5));
        let out = composite_poisson(&job).unwrap();
        for c in 0..3 {
            for (a, b) in out.image.channels[c].iter().zip(&tgt.channels[c]) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gauss_seidel_agrees_with_cg() {
        let mut job = CompositeJob::new(ramp(12, 12), disc(12, 12, 4.0), RgbImage::filled(16, 16, [0.2; 3]), (2, 2));
        let cg = composite_poisson(&job).unwrap();
        job.solver = Solver::GaussSeidel;
        let gs = composite_poisson(&job).unwrap();
        assert_eq!(gs.solver, Solver::GaussSeidel);
        for c in 0..3 {
            for (a, b) in cg.image.channels[c].iter().zip(&gs.image.channels[c]) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn non_convergence_reported() {
        let bump = RgbImage::from_fn(12, 12, |x, y| [((x * x + y * y) as f64 / 242.0); 3]);
        let mut job = CompositeJob::new(bump, disc(12, 12, 4.0), RgbImage::filled(16, 16, [0.2; 3]), (2, 2));
        job.max_iterations = 1;
        job.fallback = false;
        assert!(matches!(composite_poisson(&job), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn border_region_rejected() {
        let job = CompositeJob::new(ramp(8, 8), Plane::filled(8, 8, true), RgbImage::filled(16, 16, [0.0; 3]), (4, 4));
        assert!(composite_poisson(&job).is_err());
    }

    #[test]
    fn alpha_blend() {
        let src = RgbImage::filled(2, 2, [1.0, 0.0, 0.5]);
        let tgt = RgbImage::filled(4, 4, [0.0, 1.0, 0.5]);
        let job = CompositeJob::new(src.clone(), Plane::filled(2, 2, true), tgt.clone(), (1, 1));
        assert_eq!(composite_alpha(&job, &Plane::filled(2, 2, 0.0)).unwrap(), tgt);
        let half = composite_alpha(&job, &Plane::filled(2, 2, 0.5)).unwrap();
        assert_eq!(half.pixel(1, 1), [0.5, 0.5, 0.5]);
        assert_eq!(half.pixel(0, 0), tgt.pixel(0, 0));
        let full = composite_alpha(&job, &Plane::filled(2, 2, 1.0)).unwrap();
        assert_eq!(full.pixel(2, 2), src.pixel(1, 1));
        assert!(composite_alpha(&job, &Plane::filled(3, 2, 0.0)).is_err());
    }

    #[test]
    fn hide_extremes() {
        let img = ramp(16, 16);
        let mask = disc(16, 16, 5.0);
        let p0 = HideParams { p_hide: 0.0, ..Default::default() };
        assert_eq!(hide_and_seek(&img, &mask, &p0, 3).unwrap(), (img.clone(), mask.clone()));
        let p1 = HideParams { p_hide: 1.0, ..Default::default() };
        let (out, m) = hide_and_seek(&img, &mask, &p1, 3).unwrap();
        assert_eq!(m.count(), 0);
        let (x0, y0, x1, y1) = mask.bounding_box().unwrap();
        for y in 0..16 {
            for x in 0..16 {
                if !(x0..x1).contains(&x) || !(y0..y1).contains(&y) {
                    assert_eq!(out.pixel(x, y), img.pixel(x, y));
                }
            }
        }
        let empty = Plane::filled(16, 16, false);
        assert_eq!(hide_and_seek(&img, &empty, &p1, 3).unwrap().0, img);
    }

    #[test]
    fn synth_contract() {
        let p = SynthParams { n_smoke: 6, n_background: 4, size: [32, 32], seed: 9, ..Default::default() };
        let a = synth_dataset(&p).unwrap();
        assert_eq!(a, synth_dataset(&p).unwrap());
        for s in &a[..6] {
            assert!(s.mask.count() > 0);
            let (x0, y0, x1, y1) = s.mask.bounding_box().unwrap();
            let b = s.boxes[0];
            assert_eq!((b.x0, b.y0, b.x1, b.y1), (x0 as u32, y0 as u32, x1 as u32, y1 as u32));
            assert!((0.6..=1.0).contains(&b.score));
        }
        assert!(a[6..].iter().all(|s| s.label == 0 && s.mask.count() == 0));
        assert!(synth_dataset(&SynthParams { size: [30, 32], ..p }).is_err());
    }
}
