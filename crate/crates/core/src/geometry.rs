//! Axis-aligned box algebra: IoU, GIoU, the GIoU loss and its gradient, and
//! the center-region spatial prior used to gate candidate anchors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corner-form box `(x1, y1, x2, y2)` with `x1 <= x2`, `y1 <= y2` and finite
/// coordinates. Zero-area boxes are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 > x2 || y1 > y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from its center and size.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }
    #[inline]
    pub fn y1(&self) -> f64 {
        self.y1
    }
    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }
    #[inline]
    pub fn y2(&self) -> f64 {
        self.y2
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl core::fmt::Display for BBox {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

#[inline]
fn intersection(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    iw * ih
}

#[inline]
fn enclosing_area(a: &BBox, b: &BBox) -> f64 {
    (a.x2.max(b.x2) - a.x1.min(b.x1)) * (a.y2.max(b.y2) - a.y1.min(b.y1))
}

/// Intersection over union. Two zero-area boxes give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU in `[-1, 1]`.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64> {
    let enclosing = enclosing_area(a, b);
    if enclosing <= 0.0 {
        return Err(Error::DegenerateEnclosure);
    }
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    Ok(iou - (enclosing - union) / enclosing)
}

/// `1 - giou(pred, gt)`, in `[0, 2]`.
pub fn giou_loss(pred: &BBox, gt: &BBox) -> Result<f64> {
    Ok(1.0 - giou(pred, gt)?)
}

/// GIoU loss together with its gradient with respect to the predicted corners
/// `(x1, y1, x2, y2)`.
///
/// Where a `min`/`max` is tied the gradient flows to the predicted box's
/// intersection edge and to the ground truth's enclosing edge.
pub fn giou_loss_grad(pred: &BBox, gt: &BBox) -> Result<(f64, [f64; 4])> {
    let enclosing = enclosing_area(pred, gt);
    if enclosing <= 0.0 {
        return Err(Error::DegenerateEnclosure);
    }
    let (pw, ph) = (pred.width(), pred.height());
    let iw_raw = pred.x2.min(gt.x2) - pred.x1.max(gt.x1);
    let ih_raw = pred.y2.min(gt.y2) - pred.y1.max(gt.y1);
    let (iw, ih) = (iw_raw.max(0.0), ih_raw.max(0.0));
    let inter = iw * ih;
    let area_p = pw * ph;
    let union = area_p + gt.area() - inter;
    let cw = pred.x2.max(gt.x2) - pred.x1.min(gt.x1);
    let ch = pred.y2.max(gt.y2) - pred.y1.min(gt.y1);

    // loss = 2 - I/U - U/C
    let (loss, d_inter, d_area_p) = if union > 0.0 {
        let u2 = union * union;
        (
            2.0 - inter / union - union / enclosing,
            -(union + inter) / u2 + 1.0 / enclosing,
            inter / u2 - 1.0 / enclosing,
        )
    } else {
        (2.0, 1.0 / enclosing, -1.0 / enclosing)
    };
    let d_enclosing = union / (enclosing * enclosing);

    // partials of the intersection width/height
    let (diw_x1, diw_x2) = if iw_raw > 0.0 {
        (
            if pred.x1 >= gt.x1 { -1.0 } else { 0.0 },
            if pred.x2 <= gt.x2 { 1.0 } else { 0.0 },
        )
    } else {
        (0.0, 0.0)
    };
    let (dih_y1, dih_y2) = if ih_raw > 0.0 {
        (
            if pred.y1 >= gt.y1 { -1.0 } else { 0.0 },
            if pred.y2 <= gt.y2 { 1.0 } else { 0.0 },
        )
    } else {
        (0.0, 0.0)
    };
    let dcw_x1 = if pred.x1 < gt.x1 { -1.0 } else { 0.0 };
    let dcw_x2 = if pred.x2 > gt.x2 { 1.0 } else { 0.0 };
    let dch_y1 = if pred.y1 < gt.y1 { -1.0 } else { 0.0 };
    let dch_y2 = if pred.y2 > gt.y2 { 1.0 } else { 0.0 };

    let grad = [
        d_inter * ih * diw_x1 - d_area_p * ph + d_enclosing * ch * dcw_x1,
        d_inter * iw * dih_y1 - d_area_p * pw + d_enclosing * cw * dch_y1,
        d_inter * ih * diw_x2 + d_area_p * ph + d_enclosing * ch * dcw_x2,
        d_inter * iw * dih_y2 + d_area_p * pw + d_enclosing * cw * dch_y2,
    ];
    Ok((loss, grad))
}

/// Center-sampling region of an instance: a square of half-width
/// `radius_factor * stride` around the box center, clipped to the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterRegion {
    pub instance_box: BBox,
    pub radius_factor: f64,
}

impl CenterRegion {
    pub const DEFAULT_RADIUS_FACTOR: f64 = 1.5;

    pub fn new(instance_box: BBox, radius_factor: f64) -> Result<Self> {
        if !(radius_factor > 0.0 && radius_factor.is_finite()) {
            return Err(crate::error::config_err("radius_factor must be positive"));
        }
        Ok(Self {
            instance_box,
            radius_factor,
        })
    }
}

/// Whether an anchor point lies in the center region for the given stride.
pub fn in_center_region(point: (f64, f64), region: &CenterRegion, stride: f64) -> bool {
    let (cx, cy) = region.instance_box.center();
    let r = region.radius_factor * stride;
    let (x, y) = point;
    (x - cx).abs() <= r && (y - cy).abs() <= r && region.instance_box.contains_point(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 2., 2.), &b(0., 0., 2., 2.)), 1.0);
        assert_eq!(iou(&b(0., 0., 1., 1.), &b(2., 2., 3., 3.)), 0.0);
        assert!((iou(&b(0., 0., 2., 2.), &b(1., 1., 3., 3.)) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn zero_area_pairs() {
        let p = b(1., 1., 1., 1.);
        assert_eq!(iou(&p, &p), 0.0);
        assert_eq!(giou(&p, &p), Err(Error::DegenerateEnclosure));
        // one zero-area box is fine for giou
        assert!(giou(&p, &b(0., 0., 2., 2.)).is_ok());
    }

    #[test]
    fn giou_examples() {
        assert_eq!(giou(&b(0., 0., 2., 2.), &b(0., 0., 2., 2.)).unwrap(), 1.0);
        let g = giou(&b(0., 0., 1., 1.), &b(2., 2., 3., 3.)).unwrap();
        assert!((g + 7.0 / 9.0).abs() < 1e-12);
        let g = giou(&b(0., 0., 2., 2.), &b(1., 1., 3., 3.)).unwrap();
        assert!((g - (1.0 / 7.0 - 2.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn giou_loss_examples() {
        assert_eq!(giou_loss(&b(0., 0., 2., 2.), &b(0., 0., 2., 2.)).unwrap(), 0.0);
        let l = giou_loss(&b(0., 0., 1., 1.), &b(2., 2., 3., 3.)).unwrap();
        assert!((l - 16.0 / 9.0).abs() < 1e-12);
        let l = giou_loss(&b(0., 0., 2., 2.), &b(1., 1., 3., 3.)).unwrap();
        assert!((l - (1.0 - 1.0 / 7.0 + 2.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn loss_value_from_grad_matches() {
        let p = b(0.3, 0.1, 2.2, 1.7);
        let g = b(1.0, 0.5, 3.0, 2.5);
        let (l, _) = giou_loss_grad(&p, &g).unwrap();
        assert!((l - giou_loss(&p, &g).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rejects_inverted_and_nan() {
        assert!(BBox::new(1., 0., 0., 1.).is_err());
        assert!(BBox::new(0., 0., f64::NAN, 1.).is_err());
        assert!(BBox::new(0., 0., f64::INFINITY, 1.).is_err());
    }

    #[test]
    fn center_region() {
        let region = CenterRegion::new(b(0., 0., 10., 10.), 1.5).unwrap();
        assert!(in_center_region((5., 5.), &region, 4.0));
        assert!(!in_center_region((12., 5.), &region, 4.0));
        assert!(in_center_region((8.5, 5.), &region, 4.0));
        // inside the box but beyond the radius
        assert!(!in_center_region((9.5, 5.), &region, 2.0));
        assert!(CenterRegion::new(b(0., 0., 1., 1.), 0.0).is_err());
    }
}
