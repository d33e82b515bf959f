use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image_buf::ImageBuf;

/// Augmentation policy. Rotations act at class level (a class and its rotated
/// variants are distinct classes, each rotated as a whole); flips and crop
/// jitter act per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub rotations_90: bool,
    pub hflip: bool,
    /// Maximum absolute translation in pixels for random crop jitter.
    pub crop_jitter: u32,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            rotations_90: false,
            hflip: false,
            crop_jitter: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn off() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        !self.rotations_90 && !self.hflip && self.crop_jitter == 0
    }
}

/// Pure function of (image, spec, class rotation, seed). `class_rot` is the
/// 90-degree rotation count of the sample's class variant; per-sample flip and
/// jitter draws come from the seed.
pub fn augment(image: &ImageBuf, spec: &AugmentationSpec, class_rot: u8, seed: u64) -> ImageBuf {
    let mut out = if spec.rotations_90 && class_rot % 4 != 0 {
        image.rot90(class_rot)
    } else {
        image.clone()
    };
    if spec.hflip || spec.crop_jitter > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if spec.hflip && rng.gen_bool(0.5) {
            out = out.hflip();
        }
        if spec.crop_jitter > 0 {
            let j = spec.crop_jitter as i32;
            let dy = rng.gen_range(-j..=j);
            let dx = rng.gen_range(-j..=j);
            if dy != 0 || dx != 0 {
                out = out.shift(dy, dx);
            }
        }
    }
    out
}
