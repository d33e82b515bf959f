use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::EpisodeError;
use crate::image_buf::ImageBuf;
use crate::index::{assemble, ClassSource, DatasetIndex, SplitConfig};

/// Procedural glyph dataset: each class is a fixed arrangement of quadratic
/// Bezier strokes; each sample perturbs the control points and applies a
/// small rotation and translation. The jitter is strong enough that a linear
/// probe on raw pixels cannot separate classes perfectly, while a small CNN
/// can.
pub fn synth_glyphs(
    n_classes: usize,
    samples_per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<DatasetIndex, EpisodeError> {
    let cfg = SplitConfig::all_train(n_classes);
    synth_glyphs_with(n_classes, samples_per_class, image_size, seed, &cfg)
}

/// Same dataset with an explicit split/augmentation config (used by URIs).
pub fn synth_glyphs_with(
    n_classes: usize,
    samples_per_class: usize,
    image_size: usize,
    seed: u64,
    cfg: &SplitConfig,
) -> Result<DatasetIndex, EpisodeError> {
    if n_classes < 2 {
        return Err(EpisodeError::Dataset(format!(
            "need at least 2 glyph classes, got {}",
            n_classes
        )));
    }
    if image_size < 16 {
        return Err(EpisodeError::Dataset(format!(
            "glyph canvas must be at least 16 pixels, got {}",
            image_size
        )));
    }
    if samples_per_class == 0 {
        return Err(EpisodeError::Dataset("samples_per_class must be > 0".into()));
    }
    let width = format!("{}", n_classes.max(2) - 1).len();
    let mut base = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let glyph = Glyph::for_class(seed, class as u64);
        let images: Vec<ImageBuf> = (0..samples_per_class)
            .map(|i| glyph.render(image_size, mix(seed, (class as u64) << 24 | (i as u64 + 1))))
            .collect();
        base.push((
            format!("glyph_{:0w$}", class, w = width),
            ClassSource::Synth(images),
        ));
    }
    assemble(base, (image_size, image_size, 1), cfg)
}

/// splitmix64 seed derivation, so per-class and per-sample streams never
/// overlap.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One stroke: a quadratic Bezier in unit coordinates.
#[derive(Clone, Copy)]
struct Stroke {
    p: [(f64, f64); 3],
}

struct Glyph {
    strokes: Vec<Stroke>,
}

const STROKES_PER_GLYPH: usize = 3;
/// Per-sample geometry jitter (unit coordinates / radians).
const CONTROL_JITTER: f64 = 0.022;
const ROTATION_JITTER: f64 = 0.16;
const TRANSLATE_JITTER: f64 = 0.10;
/// Stroke half-width as a fraction of the canvas.
const STROKE_SIGMA: f64 = 0.05;

impl Glyph {
    fn for_class(seed: u64, class: u64) -> Glyph {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, class.wrapping_mul(2) + 1));
        let strokes = (0..STROKES_PER_GLYPH)
            .map(|_| Stroke {
                p: [
                    (rng.gen_range(0.18..0.82), rng.gen_range(0.18..0.82)),
                    (rng.gen_range(0.10..0.90), rng.gen_range(0.10..0.90)),
                    (rng.gen_range(0.18..0.82), rng.gen_range(0.18..0.82)),
                ],
            })
            .collect();
        Glyph { strokes }
    }

    fn render(&self, size: usize, sample_seed: u64) -> ImageBuf {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let jitter = Normal::new(0.0, CONTROL_JITTER).expect("jitter sigma");
        let theta = rng.gen_range(-ROTATION_JITTER..ROTATION_JITTER);
        let (dy, dx) = (
            rng.gen_range(-TRANSLATE_JITTER..TRANSLATE_JITTER),
            rng.gen_range(-TRANSLATE_JITTER..TRANSLATE_JITTER),
        );
        let (sin, cos) = theta.sin_cos();
        let mut img = ImageBuf::new(1, size, size);
        let sigma = STROKE_SIGMA * size as f64;
        let reach = (3.0 * sigma).ceil() as i64;
        let steps = size * 3;
        for stroke in &self.strokes {
            // Jitter, rotate about the canvas center, translate.
            let p: Vec<(f64, f64)> = stroke
                .p
                .iter()
                .map(|&(x, y)| {
                    let (x, y) = (x + jitter.sample(&mut rng), y + jitter.sample(&mut rng));
                    let (cx, cy) = (x - 0.5, y - 0.5);
                    (
                        cx * cos - cy * sin + 0.5 + dx,
                        cx * sin + cy * cos + 0.5 + dy,
                    )
                })
                .collect();
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let omt = 1.0 - t;
                let bx = omt * omt * p[0].0 + 2.0 * omt * t * p[1].0 + t * t * p[2].0;
                let by = omt * omt * p[0].1 + 2.0 * omt * t * p[1].1 + t * t * p[2].1;
                stamp(&mut img, bx * size as f64, by * size as f64, sigma, reach);
            }
        }
        img
    }
}

/// Max-composite a Gaussian dot at (x, y) in pixel coordinates.
fn stamp(img: &mut ImageBuf, x: f64, y: f64, sigma: f64, reach: i64) {
    let size = img.height as i64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    for py in (cy - reach).max(0)..=(cy + reach).min(size - 1) {
        for px in (cx - reach).max(0)..=(cx + reach).min(size - 1) {
            let d2 = (px as f64 - x).powi(2) + (py as f64 - y).powi(2);
            let v = (-d2 * inv).exp() as f32;
            let cell = img.at_mut(0, py as usize, px as usize);
            if v > *cell {
                *cell = v;
            }
        }
    }
}
