//! Deterministic FER-format stand-in data.
//!
//! Renders cartoon 48x48 faces whose brows, eyes and mouth depend on the
//! expression class, with per-example jitter in pose, scale, lighting,
//! feature geometry and pixel noise so that classes overlap. Class
//! frequencies follow the public FER2013 distribution, including the small
//! disgust class. Used for fixtures and desk-scale experiments when the real
//! CSV is not available.

use super::{Dataset, Example, IMAGE_SIDE, NUM_CLASSES};
use crate::tensor::Rng;

/// Public FER2013 per-class counts (35,887 images), used as sampling weights.
pub const FER2013_CLASS_COUNTS: [usize; NUM_CLASSES] = [4953, 547, 5121, 8989, 6077, 4002, 6198];

/// Mean expression geometry per class:
/// `(brow_tilt, brow_raise, eye_open, mouth_curve, mouth_open)`.
const EXPRESSIONS: [[f64; 5]; NUM_CLASSES] = [
    [0.9, -0.3, 0.6, -0.3, 0.1],  // angry
    [0.5, -0.1, 0.4, -0.6, 0.3],  // disgusted
    [-0.5, 0.6, 1.3, -0.2, 0.6],  // fearful
    [0.0, 0.0, 0.8, 0.9, 0.4],    // happy
    [-0.8, 0.2, 0.7, -0.8, 0.0],  // sad
    [0.0, 1.0, 1.5, 0.0, 1.2],    // surprised
    [0.0, 0.0, 1.0, 0.0, 0.0],    // neutral
];

/// Knobs for [`generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    /// Standard deviation of the per-example jitter on each expression
    /// parameter, in the units of the table above.
    pub expression_jitter: f64,
    /// Standard deviation of additive pixel noise on the [0, 1] scale.
    pub pixel_noise: f64,
    /// Largest face-centre shift in pixels.
    pub max_shift: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            expression_jitter: 0.35,
            pixel_noise: 0.08,
            max_shift: 3.0,
        }
    }
}

fn sample_class(rng: &mut Rng) -> u8 {
    let total: usize = FER2013_CLASS_COUNTS.iter().sum();
    let mut r = rng.below(total);
    for (c, &n) in FER2013_CLASS_COUNTS.iter().enumerate() {
        if r < n {
            return c as u8;
        }
        r -= n;
    }
    unreachable!("weights cover the range")
}

/// Renders one face of `class` into 0..=255 intensities.
pub fn render_face(class: u8, cfg: &SynthConfig, rng: &mut Rng) -> Vec<u8> {
    let side = IMAGE_SIDE as f64;
    let base = EXPRESSIONS[usize::from(class)];
    let p: Vec<f64> = base
        .iter()
        .map(|&v| v + rng.normal(0.0, cfg.expression_jitter))
        .collect();
    let (brow_tilt, brow_raise, eye_open, curve, mouth_open) =
        (p[0], p[1], p[2].max(0.1), p[3], p[4].max(0.0));

    let scale = rng.uniform_range(0.85, 1.15);
    let cx = side / 2.0 + rng.uniform_range(-cfg.max_shift, cfg.max_shift);
    let cy = side / 2.0 + 1.0 + rng.uniform_range(-cfg.max_shift, cfg.max_shift);
    let skin = rng.uniform_range(0.5, 0.85);
    let bg = rng.uniform_range(0.05, 0.45);
    let bg_slope = rng.uniform_range(-0.006, 0.006);
    let feature = skin - rng.uniform_range(0.3, 0.45);
    let contrast = rng.uniform_range(0.75, 1.25);
    let (face_rx, face_ry) = (15.0 * scale, 19.0 * scale);
    let eye_dx = 6.5 * scale;
    let eye_y = cy - 4.5 * scale;
    let (eye_rx, eye_ry) = (3.2 * scale, 1.6 * scale * eye_open);
    let brow_y = cy - 9.5 * scale - 1.8 * scale * brow_raise;
    let mouth_y = cy + 9.0 * scale;
    let mouth_w = 7.0 * scale;

    let mut out = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for row in 0..IMAGE_SIDE {
        for col in 0..IMAGE_SIDE {
            let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
            let fx = (x - cx) / face_rx;
            let fy = (y - cy) / face_ry;
            let mut v = if fx * fx + fy * fy <= 1.0 {
                skin - 0.08 * fy
            } else {
                bg + bg_slope * (x - side / 2.0)
            };

            for side_sign in [-1.0, 1.0] {
                let ex = cx + side_sign * eye_dx;
                let (dx, dy) = ((x - ex) / eye_rx, (y - eye_y) / eye_ry);
                if dx * dx + dy * dy <= 1.0 {
                    v = feature;
                }
                // brow: segment over the eye, inner end lowered by the tilt
                let t = (x - ex) / (eye_rx * 1.3);
                if t.abs() <= 1.0 {
                    let inner = -side_sign * t; // +1 at the end nearest the nose
                    let by = brow_y + 1.4 * scale * brow_tilt * inner;
                    if (y - by).abs() <= 0.8 * scale {
                        v = feature;
                    }
                }
            }

            let u = (x - cx) / mouth_w;
            if u.abs() <= 1.0 {
                let centre = mouth_y + 2.5 * scale * curve * (1.0 - 2.0 * u * u) / 2.0;
                let lower = centre + 0.7 + 3.0 * scale * mouth_open * (1.0 - u * u);
                if y >= centre - 0.7 && y <= lower {
                    v = feature;
                }
            }

            let v = 0.5 + contrast * (v - 0.5) + rng.normal(0.0, cfg.pixel_noise);
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// `n` examples with FER2013-like class frequencies, fully determined by
/// `seed`.
pub fn generate(n: usize, seed: u64, cfg: &SynthConfig) -> Dataset {
    let mut rng = Rng::seed(seed);
    let examples = (0..n)
        .map(|_| {
            let class = sample_class(&mut rng);
            let bytes = render_face(class, cfg, &mut rng);
            Example::from_bytes(class, &bytes).expect("rendered faces are valid")
        })
        .collect();
    Dataset::new(examples)
}
