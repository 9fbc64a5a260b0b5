use blendsync::augment::{apply_augmentation, sample_aug_params, AugmentationConfig, AugmentationParams};
use blendsync::image::{gaussian_blur_plane, gaussian_kernel, Image};
use blendsync::masks::deform::{deform_mask, MaskDeformParams};
use blendsync::masks::landmarks::{Point, MOUTH, NOSE_BASE};
use blendsync::masks::polygon::{area, rasterize};
use blendsync::masks::{region_polygon, RegionOptions, RegionTag};
use blendsync::pseudo_forgery::{make_pair, PairConfig};
use blendsync::rng::derive_seed;
use blendsync::synth::{landmark_consistency, synth_face, SynthFaceSpec};

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

// Gift wrapping, counter-clockwise, collinear points dropped.
fn jarvis_hull(pts: &[Point]) -> Vec<Point> {
    let start = *pts
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .unwrap();
    let mut hull = vec![start];
    let mut cur = start;
    loop {
        let mut next = if pts[0] == cur { pts[1] } else { pts[0] };
        for &p in pts {
            if p == cur {
                continue;
            }
            let c = cross(cur, next, p);
            let d = |q: Point| (q.0 - cur.0).powi(2) + (q.1 - cur.1).powi(2);
            if c < 0.0 || (c == 0.0 && d(p) > d(next)) {
                next = p;
            }
        }
        if next == start {
            break;
        }
        hull.push(next);
        cur = next;
        assert!(hull.len() <= pts.len(), "hull did not close");
    }
    hull
}

fn shoelace(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

fn dist_to_convex(p: Point, hull: &[Point]) -> f64 {
    let n = hull.len();
    let sign = cross(hull[0], hull[1], hull[2]).signum();
    if (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) * sign >= 0.0) {
        return 0.0;
    }
    (0..n).map(|i| seg_dist(p, hull[i], hull[(i + 1) % n])).fold(f64::INFINITY, f64::min)
}

fn face(seed: u64, canvas: usize) -> (Image<f64>, blendsync::masks::landmarks::LandmarkSet) {
    synth_face::<f64>(&SynthFaceSpec::random(seed, canvas)).unwrap()
}

#[test]
fn face_polygon_area_matches_hull_oracle() {
    let (_, lm) = face(7, 128);
    let poly = region_polygon(&lm, RegionTag::Face, &RegionOptions::default()).unwrap();
    let want = shoelace(&jarvis_hull(lm.points()));
    assert!((area(&poly) - want).abs() <= 1e-9 * want, "{} vs {want}", area(&poly));
}

#[test]
fn lip_and_lower_face_vertices_respect_their_definitions() {
    let opts = RegionOptions::default();
    for s in 0..100 {
        let (_, lm) = face(derive_seed(11, s), 96);
        let lip = region_polygon(&lm, RegionTag::Lip, &opts).unwrap();
        let hull = jarvis_hull(lm.subset(MOUTH));
        let margin = opts.lip_dilation * lm.mouth_width();
        for &v in &lip {
            assert!(dist_to_convex(v, &hull) <= margin + 1e-9, "face {s}: lip vertex {v:?} too far out");
        }
        let top = lm.point(NOSE_BASE).1;
        for &v in &region_polygon(&lm, RegionTag::LowerFace, &opts).unwrap() {
            assert!(v.1 >= top - 1e-9, "face {s}: lower-face vertex {v:?} above the nose base");
        }
    }
}

fn disk(cx: f64, cy: f64, r: f64) -> Vec<Point> {
    (0..64)
        .map(|k| {
            let a = k as f64 / 64.0 * std::f64::consts::TAU;
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect()
}

fn conv2d_replicated(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let g = |d: isize| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp();
    let norm: f64 = (-r..=r).map(g).sum::<f64>().powi(2);
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    acc += g(dy) * g(dx) * plane[yy * w + xx];
                }
            }
            out[y as usize * w + x as usize] = acc / norm;
        }
    }
    out
}

#[test]
fn blurred_disk_matches_direct_convolution_and_has_a_soft_band() {
    let (h, w) = (48, 40);
    let bin = rasterize(&disk(18.0, 22.0, 11.0), h, w).unwrap();
    let plane: Vec<f64> = (0..h * w).map(|i| f64::from(u8::from(bin.get(i / w, i % w)))).collect();
    let sigma = 2.0;
    assert_eq!(gaussian_kernel::<f64>(sigma).len(), 13);
    let oracle = conv2d_replicated(&plane, h, w, sigma);

    let sep = gaussian_blur_plane(&plane, h, w, sigma);
    let params = MaskDeformParams { blur_sigma: sigma, ..MaskDeformParams::identity(3) };
    let soft = deform_mask::<f64>(&bin, RegionTag::Face, &params).unwrap();
    for i in 0..h * w {
        assert!((sep[i] - oracle[i]).abs() < 1e-12, "pixel {i}: {} vs {}", sep[i], oracle[i]);
        assert!((soft.values()[i] - oracle[i]).abs() < 1e-12, "pixel {i}: {} vs {}", soft.values()[i], oracle[i]);
    }
    let band = soft.values().iter().filter(|v| **v > 0.0 && **v < 1.0).count();
    assert!(band > 0);
    assert!(band < h * w);
}

#[test]
fn brightness_sampler_monte_carlo() {
    let cfg = AugmentationConfig { photometric_prob: 1.0, ..AugmentationConfig::default() };
    let draws: Vec<f64> = (0..1000u64)
        .map(|s| sample_aug_params(derive_seed(5, s), &cfg).unwrap().1.brightness_delta)
        .collect();
    let (lo, hi) = draws.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!(lo >= -0.1 && hi <= 0.1, "range [{lo}, {hi}]");
    assert!(mean.abs() <= 0.02, "mean {mean}");
    assert!(sample_aug_params(9, &cfg).unwrap() == sample_aug_params(9, &cfg).unwrap());
}

#[test]
fn contrast_matches_per_pixel_formula() {
    let (img, _) = face(3, 64);
    let params = AugmentationParams { contrast_factor: 1.2, ..AugmentationParams::IDENTITY };
    let out = apply_augmentation(&img, &params);
    let (h, w, c) = img.dims();
    for ch in 0..c {
        let mut mean = 0.0;
        for y in 0..h {
            for x in 0..w {
                mean += img.get(y, x, ch);
            }
        }
        mean /= (h * w) as f64;
        for y in 0..h {
            for x in 0..w {
                let want = (mean + 1.2 * (img.get(y, x, ch) - mean)).clamp(0.0, 1.0);
                assert!((out.get(y, x, ch) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn lip_pairs_leave_pixels_outside_the_mask_untouched() {
    let cfg = PairConfig::default();
    for s in 0..100 {
        let (img, lm) = face(derive_seed(21, s), 96);
        let pair = make_pair(&img, "f", &lm, RegionTag::Lip, derive_seed(s, 1), &cfg).unwrap();
        let c = img.channels();
        let m = pair.mask.values();
        let mut outside = 0;
        for (i, (r, f)) in pair.real_view.data().iter().zip(pair.fake_view.data()).enumerate() {
            if m[i / c] == 0.0 {
                assert_eq!(r.to_bits(), f.to_bits(), "face {s}, value {i}");
                outside += 1;
            }
        }
        assert!(outside > 0);
    }
}

#[test]
fn synthetic_landmarks_sit_on_their_features() {
    for s in 0..100 {
        let spec = SynthFaceSpec::random(derive_seed(31, s), 96);
        let d = landmark_consistency(&spec);
        assert!(d <= 1.0, "spec {s}: worst landmark {d} px from its feature");
    }
}
