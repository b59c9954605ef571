//! Parameter-free mask-guided feature aggregation: visual prompts are
//! rasterized to normalized masks aligned with a patch-partitioned
//! feature grid, pooled by elementwise product and spatial summation,
//! then fused with a cosine positional encoding.
//!
//! Summation order over a patch is h-major then w, so parallel tilings
//! over (q, n) stay bit-stable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Box;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AggregationError {
    #[error("tensor dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("prompt rasterizes to an all-zero mask")]
    EmptyPrompt,
}

/// Patch layout: `rows × cols` patches of `patch_h × patch_w` cells.
/// The full raster is (rows·patch_h) × (cols·patch_w).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub patch_h: usize,
    pub patch_w: usize,
}

impl GridLayout {
    /// Default layout: 3×3 patches of 8×8 cells.
    pub fn default_vpt() -> Self {
        GridLayout { rows: 3, cols: 3, patch_h: 8, patch_w: 8 }
    }

    pub fn patches(&self) -> usize {
        self.rows * self.cols
    }

    pub fn full_height(&self) -> usize {
        self.rows * self.patch_h
    }

    pub fn full_width(&self) -> usize {
        self.cols * self.patch_w
    }
}

/// Image features, C × N × H × W.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub channels: usize,
    pub patches: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(
        channels: usize,
        patches: usize,
        patch_h: usize,
        patch_w: usize,
        data: Vec<f64>,
    ) -> Result<Self, AggregationError> {
        let expected = channels * patches * patch_h * patch_w;
        if data.len() != expected || channels == 0 || patches == 0 || patch_h == 0 || patch_w == 0 {
            return Err(AggregationError::DimensionMismatch(format!(
                "feature data length {} != C*N*H*W = {expected}",
                data.len()
            )));
        }
        Ok(FeatureGrid { channels, patches, patch_h, patch_w, data })
    }

    pub fn get(&self, c: usize, n: usize, h: usize, w: usize) -> f64 {
        self.data[((c * self.patches + n) * self.patch_h + h) * self.patch_w + w]
    }
}

/// Normalized prompt mask, Q × N × H × W with entries in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMask {
    pub queries: usize,
    pub patches: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub data: Vec<f64>,
}

impl PromptMask {
    pub fn new(
        queries: usize,
        patches: usize,
        patch_h: usize,
        patch_w: usize,
        data: Vec<f64>,
    ) -> Result<Self, AggregationError> {
        let expected = queries * patches * patch_h * patch_w;
        if data.len() != expected || queries == 0 {
            return Err(AggregationError::DimensionMismatch(format!(
                "mask data length {} != Q*N*H*W = {expected}",
                data.len()
            )));
        }
        Ok(PromptMask { queries, patches, patch_h, patch_w, data })
    }

    pub fn get(&self, q: usize, n: usize, h: usize, w: usize) -> f64 {
        self.data[((q * self.patches + n) * self.patch_h + h) * self.patch_w + w]
    }
}

/// A user-supplied visual prompt, coordinates normalized to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VisualPrompt {
    Point { x: f64, y: f64 },
    Box { r#box: Box },
    Scribble { points: Vec<(f64, f64)> },
    Mask { height: usize, width: usize, data: Vec<bool> },
}

/// Cosine positional-encoding configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeConfig {
    /// temperature
    pub temperature: f64,
    pub alpha: f64,
}

impl Default for PeConfig {
    fn default() -> Self {
        PeConfig { temperature: 10000.0, alpha: 1.0 }
    }
}

fn cell_of(coord: f64, extent: usize) -> usize {
    (((coord * extent as f64).floor() as isize).max(0) as usize).min(extent - 1)
}

/// Rasterize a prompt to the full-resolution grid. Points dilate to a
/// 3×3 neighborhood; scribbles get a 1-cell stroke; boxes fill their
/// rectangle; masks resample nearest-neighbor.
fn rasterize(p: &VisualPrompt, layout: &GridLayout) -> Result<Vec<f64>, AggregationError> {
    let fh = layout.full_height();
    let fw = layout.full_width();
    let mut grid = vec![0.0; fh * fw];
    let set = |r: usize, c: usize, g: &mut Vec<f64>| g[r * fw + c] = 1.0;
    match p {
        VisualPrompt::Point { x, y } => {
            let r0 = cell_of(*y, fh) as isize;
            let c0 = cell_of(*x, fw) as isize;
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let (r, c) = (r0 + dr, c0 + dc);
                    if r >= 0 && c >= 0 && (r as usize) < fh && (c as usize) < fw {
                        set(r as usize, c as usize, &mut grid);
                    }
                }
            }
        }
        VisualPrompt::Box { r#box: b } => {
            let r0 = cell_of(b.y0, fh);
            let c0 = cell_of(b.x0, fw);
            // end cells: last cell whose start lies inside the box
            let r1 = (((b.y1 * fh as f64).ceil() as usize).max(r0 + 1) - 1).min(fh - 1);
            let c1 = (((b.x1 * fw as f64).ceil() as usize).max(c0 + 1) - 1).min(fw - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    set(r, c, &mut grid);
                }
            }
        }
        VisualPrompt::Scribble { points } => {
            for pair in points.windows(2) {
                let (x0, y0) = pair[0];
                let (x1, y1) = pair[1];
                // oversampled line walk, 1-cell stroke
                let steps = (fh.max(fw) * 2).max(1);
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    let x = x0 + (x1 - x0) * t;
                    let y = y0 + (y1 - y0) * t;
                    set(cell_of(y, fh), cell_of(x, fw), &mut grid);
                }
            }
            if let [(x, y)] = points[..] {
                set(cell_of(y, fh), cell_of(x, fw), &mut grid);
            }
        }
        VisualPrompt::Mask { height, width, data } => {
            if data.len() != height * width || *height == 0 || *width == 0 {
                return Err(AggregationError::DimensionMismatch(
                    "mask prompt payload".into(),
                ));
            }
            for r in 0..fh {
                for c in 0..fw {
                    let sr = r * height / fh;
                    let sc = c * width / fw;
                    if data[sr * width + sc] {
                        set(r, c, &mut grid);
                    }
                }
            }
        }
    }
    if grid.iter().all(|&v| v == 0.0) {
        return Err(AggregationError::EmptyPrompt);
    }
    Ok(grid)
}

/// Convert a prompt into a Q-replicated, patch-partitioned mask.
pub fn prompt_to_mask(
    p: &VisualPrompt,
    layout: &GridLayout,
    queries: usize,
) -> Result<PromptMask, AggregationError> {
    let grid = rasterize(p, layout)?;
    let (n, ph, pw) = (layout.patches(), layout.patch_h, layout.patch_w);
    let fw = layout.full_width();
    let mut data = Vec::with_capacity(queries * n * ph * pw);
    for _q in 0..queries {
        for patch in 0..n {
            let pr = patch / layout.cols;
            let pc = patch % layout.cols;
            for h in 0..ph {
                for w in 0..pw {
                    data.push(grid[(pr * ph + h) * fw + (pc * pw + w)]);
                }
            }
        }
    }
    PromptMask::new(queries, n, ph, pw, data)
}

/// Q × N × C pooled features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregated {
    pub queries: usize,
    pub patches: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Aggregated {
    pub fn get(&self, q: usize, n: usize, c: usize) -> f64 {
        self.data[(q * self.patches + n) * self.channels + c]
    }
}

/// V[q][n][c] = Σ_{h,w} X[c][n][h][w] · M[q][n][h][w].
pub fn aggregate(x: &FeatureGrid, m: &PromptMask) -> Result<Aggregated, AggregationError> {
    if x.patches != m.patches || x.patch_h != m.patch_h || x.patch_w != m.patch_w {
        return Err(AggregationError::DimensionMismatch(format!(
            "features (N,H,W)=({},{},{}) vs mask ({},{},{})",
            x.patches, x.patch_h, x.patch_w, m.patches, m.patch_h, m.patch_w
        )));
    }
    let mut data = Vec::with_capacity(m.queries * x.patches * x.channels);
    for q in 0..m.queries {
        for n in 0..x.patches {
            for c in 0..x.channels {
                let mut acc = 0.0;
                for h in 0..x.patch_h {
                    for w in 0..x.patch_w {
                        acc += x.get(c, n, h, w) * m.get(q, n, h, w);
                    }
                }
                data.push(acc);
            }
        }
    }
    Ok(Aggregated {
        queries: m.queries,
        patches: x.patches,
        channels: x.channels,
        data,
    })
}

/// PE[n][c] = cos(n / s^(2c/C)), row-major N × C.
pub fn positional_encoding(patches: usize, channels: usize, cfg: &PeConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(patches * channels);
    for n in 0..patches {
        for c in 0..channels {
            let scale = cfg.temperature.powf(2.0 * c as f64 / channels as f64);
            out.push((n as f64 / scale).cos());
        }
    }
    out
}

/// out[q][n][c] = v[q][n][c] + α · PE[n][c].
pub fn fuse(v: &Aggregated, cfg: &PeConfig) -> Aggregated {
    let pe = positional_encoding(v.patches, v.channels, cfg);
    let mut data = Vec::with_capacity(v.data.len());
    for q in 0..v.queries {
        for n in 0..v.patches {
            for c in 0..v.channels {
                data.push(v.get(q, n, c) + cfg.alpha * pe[n * v.channels + c]);
            }
        }
    }
    Aggregated {
        queries: v.queries,
        patches: v.patches,
        channels: v.channels,
        data,
    }
}
