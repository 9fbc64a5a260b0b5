//! Synthetic stand-ins for real data: cartoon faces with exact 68-point
//! landmarks, and audio/visual feature streams driven by a shared latent.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::avsync::{FeatureSequence, Modality};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::masks::landmarks::{LandmarkSet, Point, NUM_LANDMARKS};
use crate::rng::{derive_seed, rng_from_seed, tag, Rng};
use crate::scalar::Real;

/// Filled shapes extend this far beyond the landmark curves so every
/// landmark has a pixel centre of its feature close by.
const PAD: f64 = 0.6;
/// Half-thickness of stroked features (brows, nose).
const STROKE: f64 = 1.0;

/// What a pixel of a synthetic face depicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    Background,
    Skin,
    Brow,
    Eye,
    Nose,
    Lip,
    MouthInterior,
}

/// Geometry and appearance of one synthetic face, in pixel units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFaceSpec {
    pub canvas: usize,
    pub center_x: f64,
    /// Eye line; also where the jaw curve starts.
    pub eye_y: f64,
    pub chin_y: f64,
    pub forehead_y: f64,
    pub face_half_width: f64,
    /// Horizontal distance from the face centre to each eye centre.
    pub eye_offset: f64,
    pub eye_half_width: f64,
    pub eye_half_height: f64,
    pub brow_gap: f64,
    pub brow_arch: f64,
    pub nose_base_y: f64,
    pub nose_half_width: f64,
    pub mouth_y: f64,
    pub mouth_half_width: f64,
    pub lip_half_height: f64,
    /// 0 closed, 1 fully open.
    pub mouth_openness: f64,
    pub skin: [f64; 3],
    pub background: [f64; 3],
    pub lip_color: [f64; 3],
    pub texture_noise: f64,
    pub seed: u64,
}

impl SynthFaceSpec {
    /// Draw a plausible face for a `canvas × canvas` image.
    pub fn random(seed: u64, canvas: usize) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, tag::SYNTH));
        let c = canvas as f64;
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let center_x = c / 2.0 + u(-0.025, 0.025) * c;
        let eye_y = c * (0.42 + u(-0.025, 0.025));
        let face_half_width = c * u(0.26, 0.30);
        let chin_y = eye_y + c * u(0.36, 0.40);
        let forehead_y = eye_y - c * u(0.22, 0.26);
        let eye_offset = face_half_width * u(0.42, 0.48);
        let eye_half_width = face_half_width * u(0.20, 0.24);
        let eye_half_height = eye_half_width * u(0.35, 0.5);
        let brow_gap = eye_half_height + c * u(0.05, 0.07);
        let brow_arch = c * u(0.01, 0.02);
        let drop = chin_y - eye_y;
        let nose_base_y = eye_y + drop * u(0.40, 0.46);
        let nose_half_width = face_half_width * u(0.18, 0.24);
        let mouth_y = eye_y + drop * u(0.62, 0.68);
        let mouth_half_width = face_half_width * u(0.36, 0.44);
        let lip_half_height = c * u(0.03, 0.045);
        let mouth_openness = u(0.0, 1.0);
        let skin_base = u(0.35, 0.85);
        let skin = [skin_base + u(0.05, 0.12), skin_base, skin_base - u(0.05, 0.15)];
        let background = [u(0.05, 0.95), u(0.05, 0.95), u(0.05, 0.95)];
        let lip_color = [u(0.5, 0.8), u(0.15, 0.35), u(0.2, 0.4)];
        let texture_noise = u(0.01, 0.04);
        SynthFaceSpec {
            canvas,
            center_x,
            eye_y,
            chin_y,
            forehead_y,
            face_half_width,
            eye_offset,
            eye_half_width,
            eye_half_height,
            brow_gap,
            brow_arch,
            nose_base_y,
            nose_half_width,
            mouth_y,
            mouth_half_width,
            lip_half_height,
            mouth_openness,
            skin,
            background,
            lip_color,
            texture_noise,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.canvas as f64;
        if self.canvas < crate::image::MIN_SIDE {
            return Err(Error::Config(format!("canvas {} below {}", self.canvas, crate::image::MIN_SIDE)));
        }
        if !(0.0..=1.0).contains(&self.mouth_openness) {
            return Err(Error::Config("mouth_openness must lie in [0, 1]".into()));
        }
        let positive = [
            self.face_half_width,
            self.eye_half_width,
            self.eye_half_height,
            self.nose_half_width,
            self.mouth_half_width,
            self.lip_half_height,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("feature sizes must be positive".into()));
        }
        let ordered = self.forehead_y < self.eye_y - self.brow_gap - self.brow_arch - STROKE
            && self.eye_y < self.nose_base_y
            && self.nose_base_y < self.mouth_y - self.lip_half_height
            && self.mouth_y + self.lip_half_height < self.chin_y;
        if !ordered {
            return Err(Error::Config("facial features are out of vertical order".into()));
        }
        if self.eye_offset + self.eye_half_width >= self.face_half_width || self.eye_offset <= self.eye_half_width {
            return Err(Error::Config("eyes must sit inside the face without overlapping".into()));
        }
        let margin = PAD + STROKE;
        let inside = self.forehead_y - margin >= 0.0
            && self.chin_y + margin < c
            && self.center_x - self.face_half_width - margin >= 0.0
            && self.center_x + self.face_half_width + margin < c;
        if !inside {
            return Err(Error::Config("face geometry leaves the canvas".into()));
        }
        Ok(())
    }

    /// The 68 landmarks implied by the geometry.
    pub fn landmarks(&self) -> Vec<Point> {
        let mut pts = Vec::with_capacity(NUM_LANDMARKS);
        let (cx, ey) = (self.center_x, self.eye_y);
        let drop = self.chin_y - ey;
        for k in 0..17 {
            let phi = PI * k as f64 / 16.0;
            pts.push((cx - self.face_half_width * phi.cos(), ey + drop * phi.sin()));
        }
        for side in [-1.0, 1.0] {
            let ex = cx + side * self.eye_offset;
            let half = self.eye_half_width * 1.1;
            for k in 0..5 {
                let t = k as f64 / 4.0;
                pts.push((ex - half + 2.0 * half * t, ey - self.brow_gap - self.brow_arch * (PI * t).sin()));
            }
        }
        let bridge_len = self.nose_base_y - ey;
        for k in 0..4 {
            pts.push((cx, ey + bridge_len * (0.1 + 0.25 * k as f64)));
        }
        for k in 0..5 {
            pts.push((cx - self.nose_half_width + self.nose_half_width * 0.5 * k as f64, self.nose_base_y));
        }
        for side in [-1.0, 1.0] {
            let ex = cx + side * self.eye_offset;
            for k in 0..6 {
                let th = PI * k as f64 / 3.0;
                pts.push((ex - self.eye_half_width * th.cos(), ey - self.eye_half_height * th.sin()));
            }
        }
        let (mw, lh, my) = (self.mouth_half_width, self.lip_half_height, self.mouth_y);
        for k in 0..12 {
            let a = PI - PI * k as f64 / 6.0;
            pts.push((cx + mw * a.cos(), my - lh * a.sin()));
        }
        let (iw, ih) = self.inner_mouth();
        for k in 0..8 {
            let a = PI - PI * k as f64 / 4.0;
            pts.push((cx + iw * a.cos(), my - ih * a.sin()));
        }
        pts
    }

    fn inner_mouth(&self) -> (f64, f64) {
        (0.6 * self.mouth_half_width, 0.6 * self.lip_half_height * self.mouth_openness)
    }

    /// Feature label of every pixel, row-major.
    pub fn labels(&self) -> Vec<Feature> {
        let n = self.canvas;
        let pts = self.landmarks();
        let (cx, ey) = (self.center_x, self.eye_y);
        let ell = |x: f64, y: f64, ox: f64, oy: f64, rx: f64, ry: f64| {
            let (dx, dy) = ((x - ox) / rx, (y - oy) / ry);
            dx * dx + dy * dy <= 1.0
        };
        let strokes: Vec<(Point, Point)> = {
            let mut s = Vec::new();
            for start in [17, 22] {
                for k in start..start + 4 {
                    s.push((pts[k], pts[k + 1]));
                }
            }
            s
        };
        let nose: Vec<(Point, Point)> = vec![(pts[27], pts[30]), (pts[31], pts[35]), (pts[30], pts[31]), (pts[30], pts[35])];
        let (iw, ih) = self.inner_mouth();
        let mut out = vec![Feature::Background; n * n];
        for y in 0..n {
            for x in 0..n {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut f = Feature::Background;
                let rx = self.face_half_width + PAD;
                let skin = if py >= ey {
                    ell(px, py, cx, ey, rx, self.chin_y - ey + PAD)
                } else {
                    ell(px, py, cx, ey, rx, ey - self.forehead_y)
                };
                if skin {
                    f = Feature::Skin;
                }
                if strokes.iter().any(|&(a, b)| segment_distance((px, py), a, b) <= STROKE) {
                    f = Feature::Brow;
                }
                for side in [-1.0, 1.0] {
                    let ex = cx + side * self.eye_offset;
                    if ell(px, py, ex, ey, self.eye_half_width + PAD, self.eye_half_height + PAD) {
                        f = Feature::Eye;
                    }
                }
                if nose.iter().any(|&(a, b)| segment_distance((px, py), a, b) <= STROKE) {
                    f = Feature::Nose;
                }
                if ell(px, py, cx, self.mouth_y, self.mouth_half_width + PAD, self.lip_half_height + PAD) {
                    f = Feature::Lip;
                    if iw > PAD && ih > PAD && ell(px, py, cx, self.mouth_y, iw - PAD, ih - PAD) {
                        f = Feature::MouthInterior;
                    }
                }
                out[y * n + x] = f;
            }
        }
        out
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Feature each landmark index is drawn on.
pub fn landmark_feature(i: usize) -> Feature {
    match i {
        0..=16 => Feature::Skin,
        17..=26 => Feature::Brow,
        27..=35 => Feature::Nose,
        36..=47 => Feature::Eye,
        _ => Feature::Lip,
    }
}

/// Largest distance from a landmark to the nearest pixel centre carrying its
/// feature label.
pub fn landmark_consistency(spec: &SynthFaceSpec) -> f64 {
    let labels = spec.labels();
    let n = spec.canvas as isize;
    let mut worst: f64 = 0.0;
    for (i, &(x, y)) in spec.landmarks().iter().enumerate() {
        let want = landmark_feature(i);
        let mut best = f64::INFINITY;
        let (x0, y0) = (x.floor() as isize, y.floor() as isize);
        for yy in (y0 - 3).max(0)..(y0 + 4).min(n) {
            for xx in (x0 - 3).max(0)..(x0 + 4).min(n) {
                if labels[(yy * n + xx) as usize] == want {
                    let d = ((xx as f64 + 0.5 - x).powi(2) + (yy as f64 + 0.5 - y).powi(2)).sqrt();
                    best = best.min(d);
                }
            }
        }
        worst = worst.max(best);
    }
    worst
}

/// Render a face and its landmarks. Deterministic in the spec.
pub fn synth_face<T: Real>(spec: &SynthFaceSpec) -> Result<(Image<T>, LandmarkSet)> {
    spec.validate()?;
    let n = spec.canvas;
    let landmarks = LandmarkSet::new(spec.landmarks(), n, n)?;
    let labels = spec.labels();
    let mut rng = rng_from_seed(derive_seed(spec.seed, tag::SYNTH ^ 0xface));
    let noise = Normal::new(0.0, spec.texture_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let (cx, ey) = (spec.center_x, spec.eye_y);
    let mut data = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let shade = 1.0 - 0.15 * (py - spec.forehead_y) / (spec.chin_y - spec.forehead_y);
            let rgb: [f64; 3] = match labels[y * n + x] {
                Feature::Background => {
                    let g = 0.9 + 0.2 * py / n as f64;
                    spec.background.map(|v| v * g)
                }
                Feature::Skin => spec.skin.map(|v| v * shade),
                Feature::Brow => spec.skin.map(|v| v * 0.3),
                Feature::Nose => spec.skin.map(|v| v * 0.8 * shade),
                Feature::Eye => {
                    let ex = if px < cx { cx - spec.eye_offset } else { cx + spec.eye_offset };
                    let r = ((px - ex).powi(2) + (py - ey).powi(2)).sqrt();
                    if r <= spec.eye_half_height {
                        [0.25, 0.18, 0.1]
                    } else {
                        [0.92, 0.92, 0.9]
                    }
                }
                Feature::Lip => spec.lip_color,
                Feature::MouthInterior => [0.2, 0.05, 0.06],
            };
            for v in rgb {
                data.push(T::lit(v + noise.sample(&mut rng)));
            }
        }
    }
    let image = Image::from_clamped(n, n, 3, data)?;
    Ok((image, landmarks))
}

/// Audio/visual clip generator driven by a shared low-dimensional latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthAvSpec {
    pub frames: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub latent_dim: usize,
    /// Moving-average window applied to the latent.
    pub smoothing: usize,
    /// Range of sinusoid periods, in frames.
    pub period_min: f64,
    pub period_max: f64,
    pub noise_sigma: f64,
    /// Visual stream lags the audio by this many frames (`v_t` uses `z_{t−k}`).
    pub shift: isize,
    /// Visual stream comes from an unrelated latent.
    pub mismatched: bool,
    /// Window radius the clip is meant for; `frames` must be at least `2w + 2`.
    pub window_radius: usize,
    pub frame_rate: f32,
    /// Seeds the mixing matrices, shared by every clip of a corpus.
    pub mixing_seed: u64,
    pub seed: u64,
}

impl Default for SynthAvSpec {
    fn default() -> Self {
        SynthAvSpec {
            frames: 64,
            audio_dim: 16,
            visual_dim: 16,
            latent_dim: 4,
            smoothing: 3,
            period_min: 6.0,
            period_max: 24.0,
            noise_sigma: 0.1,
            shift: 0,
            mismatched: false,
            window_radius: 15,
            frame_rate: 25.0,
            mixing_seed: 0,
            seed: 0,
        }
    }
}

impl SynthAvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 * self.window_radius + 2 {
            return Err(Error::Config(format!(
                "T = {} is shorter than 2w + 2 = {} for w = {}",
                self.frames,
                2 * self.window_radius + 2,
                self.window_radius
            )));
        }
        if self.audio_dim == 0 || self.visual_dim == 0 || self.latent_dim == 0 || self.smoothing == 0 {
            return Err(Error::Config("synthetic AV dimensions must be positive".into()));
        }
        if !(self.period_min > 1.0 && self.period_max >= self.period_min) {
            return Err(Error::Config("sinusoid periods must satisfy 1 < min ≤ max".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// True when the clip is an aligned (real) pair.
    pub fn is_aligned(&self) -> bool {
        self.shift == 0 && !self.mismatched
    }
}

/// Mixing matrices `(A, V)`, `D_a × L` and `D_v × L`, row-major.
pub fn mixing_matrices(spec: &SynthAvSpec) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_from_seed(derive_seed(spec.mixing_seed, tag::SYNTH ^ 0xa0));
    let scale = 1.0 / (spec.latent_dim as f64).sqrt();
    let normal = Normal::new(0.0, scale).expect("positive scale");
    let a = (0..spec.audio_dim * spec.latent_dim).map(|_| normal.sample(&mut rng)).collect();
    let v = (0..spec.visual_dim * spec.latent_dim).map(|_| normal.sample(&mut rng)).collect();
    (a, v)
}

/// Latent trajectory over frames `start .. start + len`, `len × L`.
fn latent(spec: &SynthAvSpec, rng: &mut Rng, start: isize, len: usize) -> Vec<f64> {
    let l = spec.latent_dim;
    let comps: Vec<[(f64, f64, f64); 3]> = (0..l)
        .map(|_| {
            std::array::from_fn(|_| {
                let period = rng.random_range(spec.period_min..=spec.period_max);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.5..1.0);
                (period, phase, amp)
            })
        })
        .collect();
    let raw = |t: isize, d: usize| -> f64 {
        comps[d].iter().map(|&(p, ph, a)| a * (2.0 * PI * t as f64 / p + ph).sin()).sum()
    };
    let m = spec.smoothing as isize;
    let mut out = Vec::with_capacity(len * l);
    for i in 0..len as isize {
        let t = start + i;
        for d in 0..l {
            let s: f64 = (0..m).map(|j| raw(t - j, d)).sum();
            out.push(s / m as f64);
        }
    }
    out
}

fn mix(mat: &[f64], rows: usize, z: &[f64], l: usize, noise: &Normal<f64>, rng: &mut Rng) -> Vec<f64> {
    let frames = z.len() / l;
    let mut out = Vec::with_capacity(frames * rows);
    for t in 0..frames {
        let zt = &z[t * l..(t + 1) * l];
        for r in 0..rows {
            let dot: f64 = mat[r * l..(r + 1) * l].iter().zip(zt).map(|(a, b)| a * b).sum();
            out.push(dot + noise.sample(rng));
        }
    }
    out
}

/// A generated clip and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthAvClip<T> {
    pub audio: FeatureSequence<T>,
    pub visual: FeatureSequence<T>,
    /// 0 aligned (real), 1 shifted or mismatched (fake).
    pub label: u8,
}

pub fn synth_av<T: Real>(spec: &SynthAvSpec) -> Result<SynthAvClip<T>> {
    spec.validate()?;
    let (a_mat, v_mat) = mixing_matrices(spec);
    let mut rng = rng_from_seed(derive_seed(spec.seed, tag::SYNTH ^ 0xa1));
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let t = spec.frames;
    let l = spec.latent_dim;
    let za = latent(spec, &mut rng, 0, t);
    let zv = if spec.mismatched {
        let mut other = rng_from_seed(derive_seed(spec.seed, tag::SYNTH ^ 0xa2));
        latent(spec, &mut other, -spec.shift, t)
    } else if spec.shift == 0 {
        za.clone()
    } else {
        // Same process (same draws), evaluated `shift` frames earlier.
        let mut again = rng_from_seed(derive_seed(spec.seed, tag::SYNTH ^ 0xa1));
        latent(spec, &mut again, -spec.shift, t)
    };
    let audio = mix(&a_mat, spec.audio_dim, &za, l, &noise, &mut rng);
    let visual = mix(&v_mat, spec.visual_dim, &zv, l, &noise, &mut rng);
    let cast = |v: Vec<f64>| v.into_iter().map(T::lit).collect::<Vec<T>>();
    Ok(SynthAvClip {
        audio: FeatureSequence::new(Modality::Audio, t, spec.audio_dim, cast(audio), spec.frame_rate)?,
        visual: FeatureSequence::new(Modality::Visual, t, spec.visual_dim, cast(visual), spec.frame_rate)?,
        label: u8::from(!spec.is_aligned()),
    })
}

/// Least-squares estimate of the latent from a mixed sequence (`T × L`).
pub fn latent_projection<T: Real>(seq: &FeatureSequence<T>, mat: &[f64], latent_dim: usize) -> Result<Vec<f64>> {
    let (rows, l) = (seq.dim(), latent_dim);
    if mat.len() != rows * l {
        return Err(Error::Shape("mixing matrix does not match sequence dimension".into()));
    }
    // Normal equations MᵀM z = Mᵀx, solved once per frame by Gaussian elimination.
    let mut gram = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..l {
            gram[i * l + j] = (0..rows).map(|r| mat[r * l + i] * mat[r * l + j]).sum();
        }
    }
    let mut out = Vec::with_capacity(seq.len() * l);
    for t in 0..seq.len() {
        let x = seq.row(t);
        let rhs: Vec<f64> = (0..l).map(|i| (0..rows).map(|r| mat[r * l + i] * x[r].to_f64_lossy()).sum()).collect();
        out.extend(solve(gram.clone(), rhs, l)?);
    }
    Ok(out)
}

fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[piv * n + col].abs() < 1e-12 {
            return Err(Error::Numerical("singular mixing matrix".into()));
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn face_is_deterministic_and_consistent() {
        let spec = SynthFaceSpec::random(11, 96);
        let (a, la) = synth_face::<f64>(&spec).unwrap();
        let (b, lb) = synth_face::<f64>(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(landmark_consistency(&spec) <= 1.0);
    }

    #[test]
    fn closed_mouth_collapses_inner_lip() {
        let mut spec = SynthFaceSpec::random(3, 128);
        spec.mouth_openness = 0.0;
        let pts = spec.landmarks();
        for p in &pts[60..68] {
            assert!((p.1 - spec.mouth_y).abs() <= 1.0);
        }
    }

    #[test]
    fn out_of_canvas_is_config_error() {
        let mut spec = SynthFaceSpec::random(3, 128);
        spec.center_x = 10.0;
        assert!(matches!(synth_face::<f64>(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn av_labels_and_window_check() {
        let spec = SynthAvSpec { seed: 4, ..Default::default() };
        let a = synth_av::<f64>(&spec).unwrap();
        assert_eq!(a.label, 0);
        assert_eq!(a, synth_av::<f64>(&spec).unwrap());
        assert_eq!(synth_av::<f64>(&SynthAvSpec { shift: 5, ..spec.clone() }).unwrap().label, 1);
        assert_eq!(synth_av::<f64>(&SynthAvSpec { mismatched: true, ..spec.clone() }).unwrap().label, 1);
        assert!(matches!(synth_av::<f64>(&SynthAvSpec { frames: 20, ..spec }), Err(Error::Config(_))));
    }

    #[test]
    fn projection_recovers_noiseless_latent() {
        let spec = SynthAvSpec { noise_sigma: 0.0, seed: 8, ..Default::default() };
        let clip = synth_av::<f64>(&spec).unwrap();
        let (am, vm) = mixing_matrices(&spec);
        let za = latent_projection(&clip.audio, &am, spec.latent_dim).unwrap();
        let zv = latent_projection(&clip.visual, &vm, spec.latent_dim).unwrap();
        for (x, y) in za.iter().zip(&zv) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
