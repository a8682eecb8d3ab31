//! Toy prediction models with hand-written backward passes.
//!
//! `Tabular` keeps free head logits for every (training scene, anchor) pair;
//! it isolates the assignment dynamics from any function approximation.
//! `Mlp` maps per-anchor features (geometry relative to the nearest instance,
//! pyramid level, category of that instance) through one hidden layer to the
//! head outputs, and is evaluated on held-out scenes.
//!
//! Both store parameters in one flat vector so the optimizer stays generic.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::AnchorGrid;
use crate::error::{config_err, Error, Result};
use crate::head::{decode, Prediction, RawOutput};
use crate::math::{ln, softplus_inv, sqrt};
use crate::sim::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Tabular,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    /// Initial foreground probability of the classification logits.
    pub prior: f64,
    /// Initial box distances in units of stride.
    pub init_box: f64,
    /// Half-width of the uniform init of the output layer.
    pub head_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Tabular,
            hidden: 32,
            prior: 0.01,
            init_box: 2.0,
            head_init: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(config_err("model prior must lie in (0, 1)"));
        }
        if !(self.init_box > 0.0) {
            return Err(config_err("model init_box must be positive"));
        }
        if self.kind == ModelKind::Mlp && self.hidden == 0 {
            return Err(config_err("mlp hidden width must be at least 1"));
        }
        if !(self.head_init >= 0.0 && self.head_init.is_finite()) {
            return Err(config_err("model head_init must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Gradient of the objective w.r.t. one anchor's raw outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGrad {
    pub cls: Vec<f64>,
    pub ctr: f64,
    pub box_params: [f64; 4],
}

/// Number of geometric features before the one-hot blocks.
const GEOM_FEATURES: usize = 9;

/// Per-anchor input features for the MLP.
pub fn anchor_features(grid: &AnchorGrid, scene: &Scene, n_categories: usize) -> Vec<Vec<f64>> {
    let n_levels = grid.levels.len();
    let dim = GEOM_FEATURES + n_levels + n_categories + 1;
    grid.anchors
        .iter()
        .map(|a| {
            let mut f = vec![0.0; dim];
            f[GEOM_FEATURES + a.level] = 1.0;
            let nearest = scene
                .instances
                .iter()
                .enumerate()
                .map(|(i, inst)| {
                    let (cx, cy) = inst.bbox.center();
                    let d = (a.x - cx) * (a.x - cx) + (a.y - cy) * (a.y - cy);
                    (d, i)
                })
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            if let Some((_, i)) = nearest {
                let inst = &scene.instances[i];
                let b = &inst.bbox;
                let (cx, cy) = b.center();
                let s = a.stride;
                let (w, h) = (b.width(), b.height());
                f[0] = ((a.x - cx) / s).clamp(-4.0, 4.0);
                f[1] = ((a.y - cy) / s).clamp(-4.0, 4.0);
                f[2] = ((a.x - cx) / (0.5 * w)).clamp(-2.0, 2.0);
                f[3] = ((a.y - cy) / (0.5 * h)).clamp(-2.0, 2.0);
                f[4] = ln(w / s);
                f[5] = ln(h / s);
                f[6] = (0.5 * w / s).min(8.0);
                f[7] = (0.5 * h / s).min(8.0);
                f[8] = if b.contains_point(a.x, a.y) { 1.0 } else { 0.0 };
                if inst.category < n_categories {
                    f[GEOM_FEATURES + n_levels + inst.category] = 1.0;
                }
                f[dim - 1] = 1.0;
            }
            f
        })
        .collect()
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub enum ForwardCache {
    Tabular { slot: usize },
    Mlp { features: Vec<Vec<f64>>, hidden: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    n_categories: usize,
    n_anchors: usize,
    /// Tabular: number of scene slots. Mlp: input dimension.
    rows: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl Model {
    /// Outputs per anchor: categories, centerness, four box parameters.
    fn out_dim(&self) -> usize {
        self.n_categories + 5
    }

    fn head_bias(cfg: &ModelConfig, n_categories: usize) -> Vec<f64> {
        let mut b = vec![ln(cfg.prior / (1.0 - cfg.prior)); n_categories];
        b.push(0.0);
        b.extend([softplus_inv(cfg.init_box); 4]);
        b
    }

    /// Fresh model for `grid`. `slots` is the number of training scenes (only
    /// used by the tabular model).
    pub fn new(cfg: &ModelConfig, grid: &AnchorGrid, n_categories: usize, slots: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n_categories == 0 {
            return Err(config_err("n_categories must be at least 1"));
        }
        let bias = Self::head_bias(cfg, n_categories);
        let out = bias.len();
        let n_anchors = grid.len();
        match cfg.kind {
            ModelKind::Tabular => {
                if slots == 0 {
                    return Err(config_err("tabular model needs at least one scene"));
                }
                let mut params = Vec::with_capacity(slots * n_anchors * out);
                for _ in 0..slots * n_anchors {
                    params.extend_from_slice(&bias);
                }
                Ok(Self {
                    kind: ModelKind::Tabular,
                    n_categories,
                    n_anchors,
                    rows: slots,
                    hidden: 0,
                    params,
                })
            }
            ModelKind::Mlp => {
                let d = GEOM_FEATURES + grid.levels.len() + n_categories + 1;
                let h = cfg.hidden;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut params = Vec::with_capacity(h * d + h + out * h + out);
                let r1 = sqrt(3.0 / d as f64);
                params.extend((0..h * d).map(|_| rng.gen_range(-r1..=r1)));
                params.extend(core::iter::repeat_n(0.0, h));
                let r2 = cfg.head_init;
                params.extend((0..out * h).map(|_| if r2 > 0.0 { rng.gen_range(-r2..=r2) } else { 0.0 }));
                params.extend_from_slice(&bias);
                Ok(Self {
                    kind: ModelKind::Mlp,
                    n_categories,
                    n_anchors,
                    rows: d,
                    hidden: h,
                    params,
                })
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check(&self, grid: &AnchorGrid) -> Result<()> {
        if grid.len() != self.n_anchors {
            return Err(Error::AnchorMismatch {
                expected: self.n_anchors,
                got: grid.len(),
            });
        }
        Ok(())
    }

    fn split_out(&self, out: &[f64]) -> RawOutput {
        let c = self.n_categories;
        RawOutput {
            cls_logits: out[..c].to_vec(),
            ctr_logit: out[c],
            box_params: [out[c + 1], out[c + 2], out[c + 3], out[c + 4]],
        }
    }

    /// Raw head outputs for every anchor of `scene`. `slot` picks the
    /// tabular row and is ignored by the MLP.
    pub fn forward_raw(&self, grid: &AnchorGrid, scene: &Scene, slot: usize) -> Result<(Vec<RawOutput>, ForwardCache)> {
        self.check(grid)?;
        let out = self.out_dim();
        match self.kind {
            ModelKind::Tabular => {
                if slot >= self.rows {
                    return Err(config_err("tabular slot out of range"));
                }
                let base = slot * self.n_anchors * out;
                let raws = (0..self.n_anchors)
                    .map(|a| self.split_out(&self.params[base + a * out..base + (a + 1) * out]))
                    .collect();
                Ok((raws, ForwardCache::Tabular { slot }))
            }
            ModelKind::Mlp => {
                let (d, h) = (self.rows, self.hidden);
                let features = anchor_features(grid, scene, self.n_categories);
                let (w1, rest) = self.params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(out * h);
                let mut hidden = Vec::with_capacity(features.len());
                let mut raws = Vec::with_capacity(features.len());
                let mut o = vec![0.0; out];
                for f in &features {
                    let hv: Vec<f64> = (0..h)
                        .map(|j| {
                            let row = &w1[j * d..(j + 1) * d];
                            let z = b1[j] + row.iter().zip(f).map(|(w, x)| w * x).sum::<f64>();
                            libm::tanh(z)
                        })
                        .collect();
                    for k in 0..out {
                        let row = &w2[k * h..(k + 1) * h];
                        o[k] = b2[k] + row.iter().zip(&hv).map(|(w, x)| w * x).sum::<f64>();
                    }
                    raws.push(self.split_out(&o));
                    hidden.push(hv);
                }
                Ok((raws, ForwardCache::Mlp { features, hidden }))
            }
        }
    }

    /// Decoded predictions for every anchor of `scene`.
    pub fn forward(&self, grid: &AnchorGrid, scene: &Scene, slot: usize) -> Result<Vec<Prediction>> {
        let (raws, _) = self.forward_raw(grid, scene, slot)?;
        grid.anchors.iter().zip(&raws).map(|(a, r)| decode(a, r)).collect()
    }

    /// Parameter gradient from per-anchor raw-output gradients.
    pub fn backward(&self, cache: &ForwardCache, d_raw: &[RawGrad]) -> Result<Vec<f64>> {
        if d_raw.len() != self.n_anchors {
            return Err(Error::AnchorMismatch {
                expected: self.n_anchors,
                got: d_raw.len(),
            });
        }
        let out = self.out_dim();
        let c = self.n_categories;
        let flat = |g: &RawGrad, dst: &mut [f64]| {
            dst[..c].copy_from_slice(&g.cls);
            dst[c] = g.ctr;
            dst[c + 1..c + 5].copy_from_slice(&g.box_params);
        };
        let mut grad = vec![0.0; self.params.len()];
        match cache {
            ForwardCache::Tabular { slot } => {
                let base = slot * self.n_anchors * out;
                for (a, g) in d_raw.iter().enumerate() {
                    flat(g, &mut grad[base + a * out..base + (a + 1) * out]);
                }
            }
            ForwardCache::Mlp { features, hidden } => {
                let (d, h) = (self.rows, self.hidden);
                let w2 = &self.params[h * d + h..h * d + h + out * h];
                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(out * h);
                let mut go = vec![0.0; out];
                let mut dh = vec![0.0; h];
                for ((f, hv), g) in features.iter().zip(hidden).zip(d_raw) {
                    flat(g, &mut go);
                    dh.iter_mut().for_each(|v| *v = 0.0);
                    for k in 0..out {
                        let gk = go[k];
                        if gk == 0.0 {
                            continue;
                        }
                        gb2[k] += gk;
                        for j in 0..h {
                            gw2[k * h + j] += gk * hv[j];
                            dh[j] += gk * w2[k * h + j];
                        }
                    }
                    for j in 0..h {
                        let dz = dh[j] * (1.0 - hv[j] * hv[j]);
                        if dz == 0.0 {
                            continue;
                        }
                        gb1[j] += dz;
                        for (i, x) in f.iter().enumerate() {
                            gw1[j * d + i] += dz * x;
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor::build_anchor_grid;
    use crate::assignment::Instance;
    use crate::geometry::BBox;

    fn scene() -> Scene {
        Scene {
            width: 32.0,
            height: 32.0,
            instances: vec![
                Instance::new(BBox::new(2.0, 3.0, 14.0, 20.0).unwrap(), 1),
                Instance::new(BBox::new(18.0, 16.0, 30.0, 30.0).unwrap(), 0),
            ],
            seed: 0,
        }
    }

    /// Scalar probe: a fixed random linear functional of the raw outputs.
    fn probe(raws: &[RawOutput], weights: &[f64]) -> f64 {
        let mut k = 0;
        let mut s = 0.0;
        for r in raws {
            for v in r.cls_logits.iter().chain([&r.ctr_logit]).chain(r.box_params.iter()) {
                s += weights[k] * v * v;
                k += 1;
            }
        }
        s
    }

    fn check_backward(kind: ModelKind) {
        let grid = build_anchor_grid(32.0, 32.0, &[8.0, 16.0]).unwrap();
        let cfg = ModelConfig {
            kind,
            hidden: 5,
            head_init: 0.5,
            ..Default::default()
        };
        let mut model = Model::new(&cfg, &grid, 2, 2, 7).unwrap();
        let sc = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n_out = grid.len() * 7;
        let weights: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (raws, cache) = model.forward_raw(&grid, &sc, 1).unwrap();
        let mut k = 0;
        let d_raw: Vec<RawGrad> = raws
            .iter()
            .map(|r| {
                let mut g = |v: f64| {
                    let out = 2.0 * weights[k] * v;
                    k += 1;
                    out
                };
                let cls = r.cls_logits.iter().map(|&v| g(v)).collect();
                let ctr = g(r.ctr_logit);
                let box_params = [g(r.box_params[0]), g(r.box_params[1]), g(r.box_params[2]), g(r.box_params[3])];
                RawGrad { cls, ctr, box_params }
            })
            .collect();
        let analytic = model.backward(&cache, &d_raw).unwrap();
        let h = 1e-6;
        for i in (0..model.num_params()).step_by(7) {
            let orig = model.params[i];
            model.params[i] = orig + h;
            let up = probe(&model.forward_raw(&grid, &sc, 1).unwrap().0, &weights);
            model.params[i] = orig - h;
            let down = probe(&model.forward_raw(&grid, &sc, 1).unwrap().0, &weights);
            model.params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
            assert!(err < 1e-5, "param {i}: {numeric} vs {}", analytic[i]);
        }
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        check_backward(ModelKind::Mlp);
    }

    #[test]
    fn tabular_backward_matches_finite_differences() {
        check_backward(ModelKind::Tabular);
    }

    #[test]
    fn init_prior() {
        let grid = build_anchor_grid(32.0, 32.0, &[8.0]).unwrap();
        let cfg = ModelConfig {
            kind: ModelKind::Mlp,
            head_init: 0.0,
            ..Default::default()
        };
        let m = Model::new(&cfg, &grid, 3, 1, 0).unwrap();
        let preds = m.forward(&grid, &scene(), 0).unwrap();
        for p in preds {
            for s in &p.cls_scores {
                assert!((s - 0.01).abs() < 1e-12);
            }
            assert!((p.bbox.width() - 32.0).abs() < 1e-9);
        }
    }

    #[test]
    fn features_empty_scene() {
        let grid = build_anchor_grid(32.0, 32.0, &[8.0, 16.0]).unwrap();
        let empty = Scene {
            instances: vec![],
            ..scene()
        };
        let f = anchor_features(&grid, &empty, 2);
        assert_eq!(f[0].len(), GEOM_FEATURES + 2 + 2 + 1);
        assert_eq!(f[0].iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn mismatched_grid() {
        let grid = build_anchor_grid(32.0, 32.0, &[8.0]).unwrap();
        let other = build_anchor_grid(64.0, 64.0, &[8.0]).unwrap();
        let m = Model::new(&ModelConfig::default(), &grid, 2, 1, 0).unwrap();
        assert!(matches!(m.forward(&other, &scene(), 0), Err(Error::AnchorMismatch { .. })));
    }
}
