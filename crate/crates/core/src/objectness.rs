//! Object-level saliency from confidence-scored bounding boxes.
//!
//! Each pixel p receives
//!
//! ```text
//! s_p = sqrt( Σᵢ bᵢ² · 1[p ∈ Bᵢ] · exp(−λ · d(p, Bᵢ)) )
//! ```
//!
//! where `d` is the Euclidean distance from the pixel centre to the box
//! centre divided by half the box diagonal, so `d = 1` at the box corners.

use serde::{Deserialize, Serialize};
use smokesal_tensor::par;

use crate::image::{Gray8, Map, Plane};
use crate::{Error, Result};

/// Axis-aligned box in pixel units with half-open extent
/// `[x0, x1) × [y0, y1)` and a confidence score in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub score: f64,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32, score: f64) -> Self {
        BBox { x0, y0, x1, y1, score }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0 as usize..self.x1 as usize).contains(&x) && (self.y0 as usize..self.y1 as usize).contains(&y)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 as f64 + self.x1 as f64) / 2.0,
            (self.y0 as f64 + self.y1 as f64) / 2.0,
        )
    }

    pub fn half_diagonal(&self) -> f64 {
        let w = (self.x1 - self.x0) as f64;
        let h = (self.y1 - self.y0) as f64;
        (w * w + h * h).sqrt() / 2.0
    }

    /// Distance from the centre of pixel `(x, y)` to the box centre, in units
    /// of half the box diagonal.
    pub fn normalized_distance(&self, x: usize, y: usize) -> f64 {
        let (cx, cy) = self.center();
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        (dx * dx + dy * dy).sqrt() / self.half_diagonal()
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let ok = self.x0 < self.x1
            && self.y0 < self.y1
            && self.x1 as usize <= width
            && self.y1 as usize <= height
            && self.score.is_finite()
            && (0.0..=1.0).contains(&self.score);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "box {self:?} is degenerate, outside the {width}×{height} image or has a score outside [0, 1]"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectnessParams {
    /// Decay rate λ of the distance weighting.
    pub lambda: f64,
}

impl Default for ObjectnessParams {
    fn default() -> Self {
        ObjectnessParams { lambda: 1.0 }
    }
}

pub fn objectness_map(boxes: &[BBox], width: usize, height: usize, params: &ObjectnessParams) -> Result<Map> {
    if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be ≥ 0, got {}", params.lambda)));
    }
    for b in boxes {
        b.validate(width, height)?;
    }
    let mut data = vec![0.0; width * height];
    par::for_each_chunk_mut(&mut data, width.max(1), |y, row| {
        for b in boxes.iter().filter(|b| (b.y0 as usize..b.y1 as usize).contains(&y)) {
            let b2 = b.score * b.score;
            for (x, acc) in row.iter_mut().enumerate().take(b.x1 as usize).skip(b.x0 as usize) {
                *acc += b2 * (-params.lambda * b.normalized_distance(x, y)).exp();
            }
        }
        row.iter_mut().for_each(|v| *v = v.sqrt());
    });
    Plane::from_vec(width, height, data)
}

/// Linear rescale so the maximum maps to 255; all-zero maps stay zero.
/// Rounds half away from zero.
pub fn normalize_u8(map: &Map) -> Result<Gray8> {
    if let Some(bad) = map.data.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("objectness values must be finite and ≥ 0, found {bad}")));
    }
    let max = map.data.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(map.map(|_| 0));
    }
    Ok(map.map(|&v| (v / max * 255.0).round() as u8))
}

/// Objectness map normalized to 8 bits and rescaled to `[0, 1]`, the form
/// fed into saliency fusion.
pub fn objectness_unit_map(boxes: &[BBox], width: usize, height: usize, params: &ObjectnessParams) -> Result<Map> {
    Ok(normalize_u8(&objectness_map(boxes, width, height, params)?)?.to_unit())
}
