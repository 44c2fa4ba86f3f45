use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smokesal_core::augment::*;
use smokesal_core::image::{Mask, Plane, RgbImage};

fn blob_mask(w: usize, h: usize, cx: f64, cy: f64, rx: f64, ry: f64) -> Mask {
    Plane::from_fn(w, h, |x, y| ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2) <= 1.0)
}

fn noisy(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

fn lap(v: &[f64], w: usize, x: usize, y: usize) -> f64 {
    let at = |x: usize, y: usize| v[y * w + x];
    at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y)
}

#[test]
fn ramp_source_solves_poisson_equation() {
    let src = RgbImage::from_fn(24, 20, |x, y| [x as f64 / 24.0, 0.5 + y as f64 / 50.0, (x + y) as f64 / 60.0]);
    let mask = blob_mask(24, 20, 12.0, 10.0, 9.0, 7.0);
    let tgt = RgbImage::filled(40, 32, [0.3, 0.6, 0.2]);
    let job = CompositeJob::new(src.clone(), mask.clone(), tgt.clone(), (7, 5));
    let out = composite_poisson(&job).unwrap();
    let mut worst: f64 = 0.0;
    for y in 0..20 {
        for x in 0..24 {
            if *mask.get(x, y) {
                for c in 0..3 {
                    let d = lap(&out.image.channels[c], 40, x + 7, y + 5) - lap(&src.channels[c], 24, x, y);
                    worst = worst.max(d.abs());
                }
            }
        }
    }
    assert!(worst < 1e-6, "residual {worst}");
}

#[test]
fn textured_source_residual_and_untouched_outside() {
    let src = noisy(30, 30, 1);
    let mask = blob_mask(30, 30, 15.0, 14.0, 11.0, 9.0);
    let tgt = noisy(48, 40, 2);
    let job = CompositeJob::new(src.clone(), mask.clone(), tgt.clone(), (10, 6));
    let out = composite_poisson(&job).unwrap();
    assert_eq!(out.image.size(), tgt.size());
    for y in 0..40 {
        for x in 0..48 {
            let inside = x >= 10 && y >= 6 && x < 40 && y < 36 && *mask.get(x - 10, y - 6);
            for c in 0..3 {
                let i = y * 48 + x;
                if inside {
                    let d = lap(&out.image.channels[c], 48, x, y) - lap(&src.channels[c], 30, x - 10, y - 6);
                    assert!(d.abs() < 1e-6);
                } else {
                    assert_eq!(out.image.channels[c][i].to_bits(), tgt.channels[c][i].to_bits());
                }
            }
        }
    }
}

#[test]
fn harmonic_fill_respects_maximum_principle() {
    let src = RgbImage::filled(20, 20, [0.9, 0.1, 0.5]);
    let mask = blob_mask(20, 20, 10.0, 10.0, 7.0, 6.0);
    let tgt = noisy(32, 32, 3);
    let (ox, oy) = (6, 5);
    let out = composite_poisson(&CompositeJob::new(src, mask.clone(), tgt.clone(), (ox, oy))).unwrap();
    for c in 0..3 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let inside = |x: usize, y: usize| x >= ox && y >= oy && x < ox + 20 && y < oy + 20 && *mask.get(x - ox, y - oy);
        for y in 1..31 {
            for x in 1..31 {
                if inside(x, y) {
                    for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
                        if !inside(nx, ny) {
                            let v = tgt.channels[c][ny * 32 + nx];
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                }
            }
        }
        for y in 0..32 {
            for x in 0..32 {
                if inside(x, y) {
                    let v = out.image.channels[c][y * 32 + x];
                    assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "{v} outside [{lo}, {hi}]");
                }
            }
        }
    }
}

#[test]
fn identical_constants_leave_target_unchanged() {
    let src = RgbImage::filled(12, 12, [0.25; 3]);
    let tgt = RgbImage::filled(20, 20, [0.25; 3]);
    let out = composite_poisson(&CompositeJob::new(src, blob_mask(12, 12, 6.0, 6.0, 4.0, 4.0), tgt.clone(), (4, 4))).unwrap();
    for c in 0..3 {
        for (a, b) in out.image.channels[c].iter().zip(&tgt.channels[c]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn hide_and_seek_follows_reference_draws() {
    let img = noisy(40, 40, 4);
    let mask = blob_mask(40, 40, 20.0, 18.0, 14.0, 12.0);
    let params = HideParams { grid: (4, 4), p_hide: 0.5, fill: [0.1, 0.2, 0.3], hide_mask: true };
    let seed = 77;
    let (out, out_mask) = hide_and_seek(&img, &mask, &params, seed).unwrap();

    let (x0, y0, x1, y1) = mask.bounding_box().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..16).map(|_| rng.gen::<f64>()).collect();
    let mut hidden = 0;
    for j in 0..4 {
        for i in 0..4 {
            let cx0 = x0 + i * (x1 - x0) / 4;
            let cx1 = x0 + (i + 1) * (x1 - x0) / 4;
            let cy0 = y0 + j * (y1 - y0) / 4;
            let cy1 = y0 + (j + 1) * (y1 - y0) / 4;
            let smoke = (cy0..cy1).any(|y| (cx0..cx1).any(|x| *mask.get(x, y)));
            let hide = draws[j * 4 + i] < 0.5 && smoke;
            hidden += hide as usize;
            for y in cy0..cy1 {
                for x in cx0..cx1 {
                    if hide {
                        assert_eq!(out.pixel(x, y), [0.1, 0.2, 0.3]);
                        assert!(!out_mask.get(x, y));
                    } else {
                        assert_eq!(out.pixel(x, y), img.pixel(x, y));
                        assert_eq!(out_mask.get(x, y), mask.get(x, y));
                    }
                }
            }
        }
    }
    assert!(hidden > 0 && hidden < 16);
    for y in 0..40 {
        for x in 0..40 {
            assert!(!*out_mask.get(x, y) || *mask.get(x, y));
            if !(x0..x1).contains(&x) || !(y0..y1).contains(&y) {
                assert_eq!(out.pixel(x, y), img.pixel(x, y));
            }
        }
    }
}

#[test]
fn hide_image_only() {
    let img = noisy(16, 16, 5);
    let mask = blob_mask(16, 16, 8.0, 8.0, 5.0, 5.0);
    let params = HideParams { p_hide: 1.0, hide_mask: false, ..Default::default() };
    let (out, m) = hide_and_seek(&img, &mask, &params, 1).unwrap();
    assert_eq!(m, mask);
    assert_ne!(out, img);
}
