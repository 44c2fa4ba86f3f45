use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smokesal_core::image::{read_gray16, write_gray16, RgbImage};
use smokesal_core::superpixel::*;

fn textured(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..12)
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(10.0..60.0),
                [rng.gen(), rng.gen(), rng.gen()],
            )
        })
        .collect();
    RgbImage::from_fn(w, h, |x, y| {
        let mut c = [0.3, 0.35, 0.4];
        for &(bx, by, r, col) in &blobs {
            if (x as f64 - bx).powi(2) + (y as f64 - by).powi(2) < r * r {
                c = col;
            }
        }
        let n = ((x * 31 + y * 17) % 13) as f64 / 130.0;
        c.map(|v| (v + n).min(1.0))
    })
    .quantized()
}

/// True when every label's pixels form one 4-connected set.
fn labels_connected(seg: &Segmentation) -> bool {
    let (w, h) = seg.labels.size();
    let mut seen = vec![false; w * h];
    let mut components_per_label = vec![0usize; seg.count];
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        let l = seg.labels.data[start];
        components_per_label[l as usize] += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut nbs = Vec::new();
            if x > 0 { nbs.push(i - 1); }
            if x + 1 < w { nbs.push(i + 1); }
            if y > 0 { nbs.push(i - w); }
            if y + 1 < h { nbs.push(i + w); }
            for j in nbs {
                if !seen[j] && seg.labels.data[j] == l {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    components_per_label.iter().all(|&c| c == 1)
}

fn check_coverage(seg: &Segmentation) {
    let mut counts = vec![0usize; seg.count];
    for &l in &seg.labels.data {
        assert!((l as usize) < seg.count);
        counts[l as usize] += 1;
    }
    assert!(counts.iter().all(|&c| c > 0));
    assert_eq!(counts.iter().sum::<usize>(), seg.labels.data.len());
}

#[test]
fn default_parameters_on_a_large_image() {
    let img = textured(400, 300, 1);
    let seg = slic(&img, &SlicParams::default()).unwrap();
    assert!((80..=120).contains(&seg.count), "{} superpixels", seg.count);
    check_coverage(&seg);
    assert!(labels_connected(&seg));
    let again = slic(&img, &SlicParams::default()).unwrap();
    assert_eq!(again.labels, seg.labels);
}

#[test]
fn uniform_image_splits_evenly() {
    let img = RgbImage::filled(20, 20, [0.4, 0.5, 0.6]);
    let seg = slic(&img, &SlicParams { k: 4, ..Default::default() }).unwrap();
    assert_eq!(seg.count, 4);
    let mut counts = [0usize; 4];
    for &l in &seg.labels.data {
        counts[l as usize] += 1;
    }
    for c in counts {
        assert!((80..=120).contains(&c), "{counts:?}");
    }
}

#[test]
fn residual_never_increases() {
    for seed in 0..3 {
        let img = textured(96, 64, seed);
        let seg = slic(&img, &SlicParams { k: 24, iterations: 8, ..Default::default() }).unwrap();
        for w in seg.residuals.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", seg.residuals);
        }
    }
}

#[test]
fn small_images_stay_connected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let w = rng.gen_range(5..40);
        let h = rng.gen_range(5..40);
        let img = RgbImage::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let k = rng.gen_range(1..(w * h / 4).max(2));
        let seg = slic(&img, &SlicParams { k, ..Default::default() }).unwrap();
        check_coverage(&seg);
        assert!(labels_connected(&seg));
    }
}

/// CIE L* from relative luminance with the exact rational constants.
fn reference_lightness(y: f64) -> f64 {
    let eps = 216.0 / 24389.0;
    let kappa = 24389.0 / 27.0;
    if y > eps {
        116.0 * y.cbrt() - 16.0
    } else {
        kappa * y
    }
}

#[test]
fn lab_mid_gray() {
    let c = 119.0 / 255.0;
    let linear = ((c + 0.055) / 1.055_f64).powf(2.4);
    let lab = srgb8_to_lab([119, 119, 119]);
    assert!((lab[0] - reference_lightness(linear)).abs() < 0.1, "{lab:?}");
    assert!(lab[1].abs() < 0.5 && lab[2].abs() < 0.5);
    assert_eq!(srgb8_to_lab([0, 0, 0])[0], 0.0);
    let white = srgb8_to_lab([255, 255, 255]);
    assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 0.5 && white[2].abs() < 0.5);
}

#[test]
fn labels_export_as_16_bit_png() {
    let img = textured(64, 48, 2);
    let seg = slic(&img, &SlicParams { k: 30, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.png");
    write_gray16(&path, &labels_to_u16(&seg.labels).unwrap(), None).unwrap();
    let back = read_gray16(&path).unwrap();
    assert_eq!(back.data.iter().map(|&v| v as u32).collect::<Vec<_>>(), seg.labels.data);
}
