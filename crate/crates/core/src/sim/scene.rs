//! Seeded synthetic scenes.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::Instance;
use crate::error::{config_err, Error, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Instances barely overlap.
    #[default]
    Sparse,
    /// Neighbouring instances overlap heavily, as in crowds of pedestrians.
    Crowded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: f64,
    pub height: f64,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Box side range (sparse) or box height range (crowded).
    pub min_size: f64,
    pub max_size: f64,
    pub n_categories: usize,
    pub regime: Regime,
    /// Sparse: every pair stays below this IoU.
    pub sparse_max_iou: f64,
    /// Crowded: a pair counts as overlapping at this IoU.
    pub crowded_min_iou: f64,
    /// Crowded: minimum fraction of overlapping pairs.
    pub crowded_fraction: f64,
    /// Crowded: instance centers stay at least this far apart.
    pub min_center_distance: f64,
    /// Crowded: horizontal offset from the parent box, as a fraction of its
    /// width.
    pub crowded_shift: [f64; 2],
    pub max_retries: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 64.0,
            height: 64.0,
            min_instances: 1,
            max_instances: 6,
            min_size: 12.0,
            max_size: 32.0,
            n_categories: 3,
            regime: Regime::Sparse,
            sparse_max_iou: 0.1,
            crowded_min_iou: 0.3,
            crowded_fraction: 0.4,
            min_center_distance: 4.0,
            crowded_shift: [0.1, 0.45],
            max_retries: 2000,
        }
    }
}

impl SceneConfig {
    pub fn crowded() -> Self {
        Self {
            regime: Regime::Crowded,
            n_categories: 1,
            min_instances: 2,
            min_size: 24.0,
            max_size: 44.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(config_err("scene size must be positive"));
        }
        if self.min_instances > self.max_instances {
            return Err(config_err("min_instances exceeds max_instances"));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size) {
            return Err(config_err("size range must be positive and ordered"));
        }
        if self.max_size > self.width.min(self.height) {
            return Err(config_err("max_size exceeds the scene"));
        }
        if self.n_categories == 0 {
            return Err(config_err("n_categories must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.crowded_fraction) {
            return Err(config_err("crowded_fraction must lie in [0, 1]"));
        }
        let [lo, hi] = self.crowded_shift;
        if !(lo >= 0.0 && lo < hi) {
            return Err(config_err("crowded_shift must be an increasing non-negative range"));
        }
        if self.max_retries == 0 {
            return Err(config_err("max_retries must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: f64,
    pub height: f64,
    pub instances: Vec<Instance>,
    pub seed: u64,
}

/// Fraction of instance pairs whose IoU reaches `threshold` (1 for fewer than
/// two instances).
pub fn overlapping_pair_fraction(instances: &[Instance], threshold: f64) -> f64 {
    let n = instances.len();
    if n < 2 {
        return 1.0;
    }
    let mut hits = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            if iou(&instances[a].bbox, &instances[b].bbox) >= threshold {
                hits += 1;
            }
        }
    }
    hits as f64 / (n * (n - 1) / 2) as f64
}

fn sample_sparse(cfg: &SceneConfig, n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<BBox>> {
    let mut boxes: Vec<BBox> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..64 {
            let w = rng.gen_range(cfg.min_size..=cfg.max_size);
            let h = rng.gen_range(cfg.min_size..=cfg.max_size);
            let x1 = rng.gen_range(0.0..=cfg.width - w);
            let y1 = rng.gen_range(0.0..=cfg.height - h);
            let b = BBox::new(x1, y1, x1 + w, y1 + h).ok()?;
            if boxes.iter().all(|o| iou(o, &b) < cfg.sparse_max_iou) {
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(boxes)
}

/// Pedestrian-like boxes; each new box is a horizontal neighbour of an
/// existing one.
fn sample_crowded(cfg: &SceneConfig, n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<BBox>> {
    let mut boxes: Vec<BBox> = Vec::with_capacity(n);
    let aspect = |rng: &mut ChaCha8Rng| rng.gen_range(0.45..0.65);
    let h = rng.gen_range(cfg.min_size..=cfg.max_size);
    let w = h * aspect(rng);
    let x1 = rng.gen_range(0.0..=cfg.width - w);
    let y1 = rng.gen_range(0.0..=cfg.height - h);
    boxes.push(BBox::new(x1, y1, x1 + w, y1 + h).ok()?);
    while boxes.len() < n {
        let mut placed = false;
        for _ in 0..64 {
            let parent = boxes[rng.gen_range(0..boxes.len())];
            let h = (parent.height() * rng.gen_range(0.85..1.15)).clamp(cfg.min_size, cfg.max_size);
            let w = h * aspect(rng);
            let (pcx, pcy) = parent.center();
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let cx = pcx + side * rng.gen_range(cfg.crowded_shift[0]..cfg.crowded_shift[1]) * parent.width();
            let cy = pcy + rng.gen_range(-0.1..0.1) * parent.height();
            let Ok(b) = BBox::from_center(cx, cy, w, h) else {
                continue;
            };
            let in_bounds = b.x1() >= 0.0 && b.y1() >= 0.0 && b.x2() <= cfg.width && b.y2() <= cfg.height;
            let spaced = boxes.iter().all(|o| {
                let (ox, oy) = o.center();
                libm::hypot(ox - cx, oy - cy) >= cfg.min_center_distance
            });
            if in_bounds && spaced && iou(&parent, &b) >= cfg.crowded_min_iou {
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(boxes)
}

/// Deterministic scene for `seed`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(cfg.min_instances..=cfg.max_instances);
    for _ in 0..cfg.max_retries {
        let boxes = match cfg.regime {
            Regime::Sparse => sample_sparse(cfg, n, &mut rng),
            Regime::Crowded => sample_crowded(cfg, n, &mut rng),
        };
        let Some(boxes) = boxes else { continue };
        let instances: Vec<Instance> = boxes
            .into_iter()
            .map(|b| Instance::new(b, rng.gen_range(0..cfg.n_categories)))
            .collect();
        if cfg.regime == Regime::Crowded
            && overlapping_pair_fraction(&instances, cfg.crowded_min_iou) < cfg.crowded_fraction
        {
            continue;
        }
        return Ok(Scene {
            width: cfg.width,
            height: cfg.height,
            instances,
            seed,
        });
    }
    Err(Error::InfeasibleScene {
        wanted: n,
        retries: cfg.max_retries,
    })
}
