//! Dense anchor points over a multi-level feature pyramid.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// One pyramid level: the stride and the feature-map extent it covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub stride: f64,
    pub width: usize,
    pub height: usize,
}

/// A candidate location. `id` is its index in the flattened grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub stride: f64,
    pub level: usize,
    pub row: usize,
    pub col: usize,
}

impl Anchor {
    #[inline]
    pub fn point(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGrid {
    pub levels: Vec<LevelSpec>,
    pub anchors: Vec<Anchor>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Flat index of `(level, row, col)`.
    pub fn index_of(&self, level: usize, row: usize, col: usize) -> Option<usize> {
        let spec = self.levels.get(level)?;
        if row >= spec.height || col >= spec.width {
            return None;
        }
        let offset: usize = self.levels[..level].iter().map(|l| l.width * l.height).sum();
        Some(offset + row * spec.width + col)
    }
}

/// Builds anchor points at `stride * (c + 0.5)` for every level. Feature maps
/// use ceiling division so the whole image is covered.
pub fn build_anchor_grid(image_width: f64, image_height: f64, strides: &[f64]) -> Result<AnchorGrid> {
    if strides.is_empty() {
        return Err(config_err("anchor grid needs at least one level"));
    }
    if !(image_width > 0.0 && image_height > 0.0) {
        return Err(config_err("image size must be positive"));
    }
    if strides.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(config_err("strides must be positive"));
    }
    if strides.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config_err("strides must be strictly increasing"));
    }
    let mut levels = Vec::with_capacity(strides.len());
    let mut anchors = Vec::new();
    for (level, &stride) in strides.iter().enumerate() {
        let width = libm::ceil(image_width / stride) as usize;
        let height = libm::ceil(image_height / stride) as usize;
        levels.push(LevelSpec {
            stride,
            width,
            height,
        });
        for row in 0..height {
            for col in 0..width {
                anchors.push(Anchor {
                    id: anchors.len(),
                    x: stride * (col as f64 + 0.5),
                    y: stride * (row as f64 + 0.5),
                    stride,
                    level,
                    row,
                    col,
                });
            }
        }
    }
    Ok(AnchorGrid { levels, anchors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_level_counts_and_positions() {
        let g = build_anchor_grid(64.0, 64.0, &[8.0]).unwrap();
        assert_eq!(g.len(), 64);
        assert_eq!(g.anchors[0].point(), (4.0, 4.0));
        assert_eq!(g.anchors[1].point(), (12.0, 4.0));
    }

    #[test]
    fn two_levels() {
        let g = build_anchor_grid(64.0, 64.0, &[8.0, 16.0]).unwrap();
        assert_eq!(g.len(), 80);
        let i = g.index_of(0, 1, 2).unwrap();
        assert_eq!(g.anchors[i].point(), (20.0, 12.0));
        let j = g.index_of(1, 0, 0).unwrap();
        assert_eq!(j, 64);
        assert_eq!(g.anchors[j].stride, 16.0);
    }

    #[test]
    fn every_anchor_maps_to_one_cell() {
        let g = build_anchor_grid(50.0, 30.0, &[8.0, 16.0, 32.0]).unwrap();
        for a in &g.anchors {
            assert_eq!(g.index_of(a.level, a.row, a.col), Some(a.id));
        }
        // ceil(50/8) * ceil(30/8) + ceil(50/16) * ceil(30/16) + 2 * 1
        assert_eq!(g.len(), 7 * 4 + 4 * 2 + 2);
    }

    #[test]
    fn errors() {
        assert!(build_anchor_grid(64.0, 64.0, &[]).is_err());
        assert!(build_anchor_grid(64.0, 64.0, &[16.0, 8.0]).is_err());
        assert!(build_anchor_grid(64.0, 64.0, &[0.0]).is_err());
    }
}
