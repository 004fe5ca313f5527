//! Seeded synthetic detection data: bright rectangles over a dark noisy
//! background, with exact box annotations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::anchors::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const MAX_IMAGE_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image: Tensor3,
    pub boxes: Vec<BBox>,
}

/// `n` RGB images of side `image_size`, each with between one and
/// `max_boxes` rectangles (none when `max_boxes` is zero). Rectangle sides
/// lie between a quarter and a half of the image side.
pub fn synth_dataset(seed: u64, n: usize, image_size: usize, max_boxes: usize) -> Result<Vec<Sample>> {
    if image_size < 4 || image_size > MAX_IMAGE_SIZE {
        return Err(Error::Config(format!(
            "synthetic image size must lie in 4..={MAX_IMAGE_SIZE}, got {image_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = image_size;
    let (lo, hi) = ((s / 4).max(2), (s / 2).max(3));
    (0..n)
        .map(|_| {
            let mut image = Tensor3::zeros(s, s, 3);
            for v in image.values_mut() {
                *v = rng.gen_range(-0.9..-0.3);
            }
            let count = if max_boxes == 0 { 0 } else { rng.gen_range(1..=max_boxes) };
            let mut boxes = Vec::with_capacity(count);
            for _ in 0..count {
                let w = rng.gen_range(lo..=hi);
                let h = rng.gen_range(lo..=hi);
                let x0 = rng.gen_range(0..=s - w);
                let y0 = rng.gen_range(0..=s - h);
                let colour: [f64; 3] = [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)];
                for y in y0..y0 + h {
                    for x in x0..x0 + w {
                        for (c, base) in colour.iter().enumerate() {
                            image.set(y, x, c, (base + rng.gen_range(-0.05..0.05)).min(1.0));
                        }
                    }
                }
                boxes.push(BBox::new(x0 as f64, y0 as f64, (x0 + w) as f64, (y0 + h) as f64));
            }
            Ok(Sample { image, boxes })
        })
        .collect()
}
