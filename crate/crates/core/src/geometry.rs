//! Box and mask primitives: L1 distance in center-size form, IoU, GIoU,
//! Dice, and run-length mask serialization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("invalid box coordinates ({0}, {1}, {2}, {3})")]
    InvalidBox(String, String, String, String),
    #[error("mask dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("run lengths sum to {got}, expected {expected}")]
    BadRunLength { got: usize, expected: usize },
}

/// Axis-aligned box in corner form, coordinates normalized to [0, 1].
/// Degenerate zero-area boxes are permitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct Box {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<Box> for [f64; 4] {
    fn from(b: Box) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl TryFrom<[f64; 4]> for Box {
    type Error = GeometryError;
    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Box::new(v[0], v[1], v[2], v[3])
    }
}

impl Box {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        let ok = (0.0..=1.0).contains(&x0)
            && (0.0..=1.0).contains(&y0)
            && x0 <= x1
            && y0 <= y1
            && x1 <= 1.0
            && y1 <= 1.0;
        if !ok {
            return Err(GeometryError::InvalidBox(
                x0.to_string(),
                y0.to_string(),
                x1.to_string(),
                y1.to_string(),
            ));
        }
        Ok(Box { x0, y0, x1, y1 })
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// (cx, cy, w, h) form used for the L1 distance.
    pub fn center_size(&self) -> (f64, f64, f64, f64) {
        (
            (self.x0 + self.x1) / 2.0,
            (self.y0 + self.y1) / 2.0,
            self.x1 - self.x0,
            self.y1 - self.y0,
        )
    }
}

/// Sum of absolute center-size coordinate differences.
pub fn box_l1(a: &Box, b: &Box) -> f64 {
    let (acx, acy, aw, ah) = a.center_size();
    let (bcx, bcy, bw, bh) = b.center_size();
    (acx - bcx).abs() + (acy - bcy).abs() + (aw - bw).abs() + (ah - bh).abs()
}

fn intersection_area(a: &Box, b: &Box) -> f64 {
    let w = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let h = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    w * h
}

/// Intersection over union; 1 when both boxes have zero area and
/// coincide, 0 when only one is empty.
pub fn box_iou(a: &Box, b: &Box) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

/// IoU minus the normalized slack of the smallest enclosing box.
pub fn box_giou(a: &Box, b: &Box) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let enclosure = Box {
        x0: a.x0.min(b.x0),
        y0: a.y0.min(b.y0),
        x1: a.x1.max(b.x1),
        y1: a.y1.max(b.y1),
    };
    let c = enclosure.area();
    if c <= 0.0 {
        // both degenerate; coincident degenerate boxes match perfectly
        return if a == b { 1.0 } else { 0.0 };
    }
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    iou - (c - union) / c
}

/// Row-major binary grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self, GeometryError> {
        if data.len() != height * width {
            return Err(GeometryError::BadRunLength {
                got: data.len(),
                expected: height * width,
            });
        }
        Ok(BinaryMask { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<(), GeometryError> {
        if self.height != other.height || self.width != other.width {
            return Err(GeometryError::DimensionMismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        Ok(())
    }
}

/// 2|A∩B| / (|A|+|B|); 1 when both masks are empty.
pub fn mask_dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64, GeometryError> {
    a.check_dims(b)?;
    let inter = a
        .data
        .iter()
        .zip(&b.data)
        .filter(|(&x, &y)| x && y)
        .count();
    let total = a.count_ones() + b.count_ones();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// |A∩B| / |A∪B|; 1 when both masks are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, GeometryError> {
    a.check_dims(b)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Pixel counts of intersection and union, for dataset-pooled IoU.
pub fn mask_inter_union(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize), GeometryError> {
    a.check_dims(b)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    Ok((inter, union))
}

/// Uncompressed run-length encoding; `counts[0]` is the leading zero run
/// (possibly 0) and runs alternate 0/1 thereafter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// (height, width)
    pub size: (usize, usize),
    pub counts: Vec<usize>,
}

pub fn rle_encode(m: &BinaryMask) -> Rle {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0usize;
    for &bit in &m.data {
        if bit == current {
            run += 1;
        } else {
            counts.push(run);
            current = bit;
            run = 1;
        }
    }
    counts.push(run);
    if m.data.is_empty() {
        counts.clear();
        counts.push(0);
    }
    Rle {
        size: (m.height, m.width),
        counts,
    }
}

pub fn rle_decode(r: &Rle) -> Result<BinaryMask, GeometryError> {
    let (h, w) = r.size;
    let expected = h * w;
    let got: usize = r.counts.iter().sum();
    if got != expected {
        return Err(GeometryError::BadRunLength { got, expected });
    }
    let mut data = Vec::with_capacity(expected);
    let mut bit = false;
    for &run in &r.counts {
        data.extend(std::iter::repeat(bit).take(run));
        bit = !bit;
    }
    BinaryMask::new(h, w, data)
}
