//! Boxes, anchors, and the standard region-proposal box parameterisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel corner coordinates, `x0 <= x1`, `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn clip(&self, width: f64, height: f64) -> Self {
        Self::new(
            self.x0.clamp(0.0, width),
            self.y0.clamp(0.0, height),
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
        )
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = BBox::new(
            self.x0.max(other.x0),
            self.y0.max(other.y0),
            self.x1.min(other.x1),
            self.y1.min(other.y1),
        )
        .area();
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// `(tx, ty, tw, th)` of `self` relative to `anchor`.
    pub fn deltas_from(&self, anchor: &BBox) -> Result<[f64; 4]> {
        if self.area() <= 0.0 || anchor.area() <= 0.0 {
            return Err(Error::Data(format!("degenerate box {self:?} or anchor {anchor:?}")));
        }
        let (gx, gy) = self.center();
        let (ax, ay) = anchor.center();
        let (aw, ah) = (anchor.width(), anchor.height());
        Ok([
            (gx - ax) / aw,
            (gy - ay) / ah,
            (self.width() / aw).ln(),
            (self.height() / ah).ln(),
        ])
    }

    /// Inverse of [`BBox::deltas_from`].
    pub fn apply_deltas(anchor: &BBox, d: &[f64]) -> BBox {
        let (ax, ay) = anchor.center();
        let (aw, ah) = (anchor.width(), anchor.height());
        // clamp the log-size terms so a wild prediction cannot overflow
        let tw = d[2].clamp(-4.0, 4.0);
        let th = d[3].clamp(-4.0, 4.0);
        BBox::from_center(ax + d[0] * aw, ay + d[1] * ah, aw * tw.exp(), ah * th.exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Side lengths in pixels before the aspect ratio is applied.
    pub sizes: Vec<f64>,
    /// Height over width.
    pub ratios: Vec<f64>,
}

impl AnchorConfig {
    pub fn per_position(&self) -> usize {
        self.sizes.len() * self.ratios.len()
    }
}

impl Default for AnchorConfig {
    /// One size, three ratios.
    fn default() -> Self {
        Self {
            sizes: vec![8.0],
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

/// All anchors of a feature map, ordered `(y, x, a)` like the head
/// output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub grid: (usize, usize),
    pub k: usize,
    pub image: (usize, usize),
    pub boxes: Vec<BBox>,
}

impl AnchorSet {
    /// Anchors centred on the input pixel `stride * (y, x)` at which each
    /// feature cell's receptive field is centred (3x3 kernel, pad 1).
    pub fn new(cfg: &AnchorConfig, grid: (usize, usize), stride: usize, image: (usize, usize)) -> Result<Self> {
        let k = cfg.per_position();
        if k == 0 || cfg.sizes.iter().chain(&cfg.ratios).any(|v| !(*v > 0.0)) {
            return Err(Error::Config("anchor sizes and ratios must be positive".into()));
        }
        let mut boxes = Vec::with_capacity(grid.0 * grid.1 * k);
        for y in 0..grid.0 {
            for x in 0..grid.1 {
                let (cx, cy) = ((x * stride) as f64 + 0.5, (y * stride) as f64 + 0.5);
                for &s in &cfg.sizes {
                    for &r in &cfg.ratios {
                        boxes.push(BBox::from_center(cx, cy, s / r.sqrt(), s * r.sqrt()));
                    }
                }
            }
        }
        Ok(Self { grid, k, image, boxes })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn clipped(&self, i: usize) -> BBox {
        self.boxes[i].clip(self.image.1 as f64, self.image.0 as f64)
    }
}
