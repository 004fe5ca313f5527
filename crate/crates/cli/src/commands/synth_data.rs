//! Writes the seeded rectangle dataset: one `FQT1` file per image and an
//! `annotations.json` listing the boxes. With the same seed and size this
//! is exactly the training set `train-qrpn` uses.

use fqc_core::detection::synth_dataset;
use fqc_core::io::write_tensor;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::write_json;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Annotation {
    pub file: String,
    /// `[x0, y0, x1, y1]` in pixels, exclusive upper corner.
    pub boxes: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Annotations {
    pub seed: u64,
    pub image_size: usize,
    pub images: Vec<Annotation>,
}

pub fn run(cfg: &RunConfig) -> anyhow::Result<Annotations> {
    let s = &cfg.synth;
    let data = synth_dataset(cfg.seed, s.samples, s.image_size, s.max_boxes)?;
    let dir = cfg.output_dir.join("synth");
    let mut images = Vec::with_capacity(data.len());
    for (i, sample) in data.iter().enumerate() {
        let file = format!("images/{i:06}.fqt");
        write_tensor(&dir.join(&file), &sample.image)?;
        images.push(Annotation {
            file,
            boxes: sample.boxes.iter().map(|b| [b.x0, b.y0, b.x1, b.y1]).collect(),
        });
    }
    let ann = Annotations {
        seed: cfg.seed,
        image_size: s.image_size,
        images,
    };
    write_json(&dir.join("annotations.json"), &ann)?;
    println!("wrote {} images to {}", ann.images.len(), dir.display());
    Ok(ann)
}
