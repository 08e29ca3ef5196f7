use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned box in pixel coordinates, `x1 < x2` and `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite || !(self.x1 < self.x2) || !(self.y1 < self.y2) {
            return Err(Error::Validation(format!("inverted or non-finite box {self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x > self.x1 && x < self.x2 && y > self.y1 && y < self.y2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// `m[i][j] = iou(a[i], b[j])`
pub fn iou_matrix(a: &[BBox], b: &[BBox]) -> Vec<Vec<f64>> {
    a.iter().map(|x| b.iter().map(|y| iou(x, y)).collect()).collect()
}

/// Distance decoding: `(cx - l, cy - t, cx + r, cy + b)`.
pub fn decode(center: (f64, f64), offsets: [f64; 4]) -> BBox {
    let (cx, cy) = center;
    BBox {
        x1: cx - offsets[0],
        y1: cy - offsets[1],
        x2: cx + offsets[2],
        y2: cy + offsets[3],
    }
}

/// Inverse of [`decode`].
pub fn encode(center: (f64, f64), b: &BBox) -> [f64; 4] {
    let (cx, cy) = center;
    [cx - b.x1, cy - b.y1, b.x2 - cx, b.y2 - cy]
}

/// A batch of boxes as four differentiable coordinate vectors.
#[derive(Debug, Clone)]
pub struct BoxTensors {
    pub x1: Tensor,
    pub y1: Tensor,
    pub x2: Tensor,
    pub y2: Tensor,
}

impl BoxTensors {
    pub fn constant(boxes: &[BBox]) -> Result<Self> {
        let col = |f: fn(&BBox) -> f64| Tensor::vector(boxes.iter().map(f).collect());
        Ok(BoxTensors {
            x1: col(|b| b.x1)?,
            y1: col(|b| b.y1)?,
            x2: col(|b| b.x2)?,
            y2: col(|b| b.y2)?,
        })
    }

    /// Differentiable distance decoding around constant centers.
    pub fn decode(cx: &Tensor, cy: &Tensor, l: &Tensor, t: &Tensor, r: &Tensor, b: &Tensor) -> Result<Self> {
        Ok(BoxTensors {
            x1: cx.sub(l)?,
            y1: cy.sub(t)?,
            x2: cx.add(r)?,
            y2: cy.add(b)?,
        })
    }

    pub fn len(&self) -> usize {
        self.x1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x1.is_empty()
    }

    pub fn area(&self) -> Result<Tensor> {
        let w = self.x2.sub(&self.x1)?.relu();
        let h = self.y2.sub(&self.y1)?.relu();
        w.mul(&h)
    }
}

struct Overlap {
    inter: Tensor,
    union: Tensor,
}

fn overlap(a: &BoxTensors, b: &BoxTensors) -> Result<Overlap> {
    let iw = a.x2.minimum(&b.x2)?.sub(&a.x1.maximum(&b.x1)?)?.relu();
    let ih = a.y2.minimum(&b.y2)?.sub(&a.y1.maximum(&b.y1)?)?.relu();
    let inter = iw.mul(&ih)?;
    let union = a.area()?.add(&b.area()?)?.sub(&inter)?;
    Ok(Overlap { inter, union })
}

/// Elementwise differentiable IoU of paired boxes.
pub fn iou_tensor(a: &BoxTensors, b: &BoxTensors) -> Result<Tensor> {
    let o = overlap(a, b)?;
    o.inter.div(&o.union)
}

/// Elementwise generalized IoU, in `[-1, 1]`.
pub fn giou_tensor(a: &BoxTensors, b: &BoxTensors) -> Result<Tensor> {
    let o = overlap(a, b)?;
    let iou = o.inter.div(&o.union)?;
    let cw = a.x2.maximum(&b.x2)?.sub(&a.x1.minimum(&b.x1)?)?;
    let ch = a.y2.maximum(&b.y2)?.sub(&a.y1.minimum(&b.y1)?)?;
    let enclose = cw.mul(&ch)?;
    iou.sub(&enclose.sub(&o.union)?.div(&enclose)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((iou(&a, &bb(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-15);
        let m = iou_matrix(&[a], &[a, bb(1.0, 1.0, 3.0, 3.0)]);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0][0], 1.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BBox::new(2.0, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, 0.0).is_err());
        assert!(BBox::new(0.0, f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode((10.0, 10.0), [1.0; 4]), bb(9.0, 9.0, 11.0, 11.0));
        let o = [1.5, 2.0, 3.25, 0.5];
        assert_eq!(encode((4.0, 12.0), &decode((4.0, 12.0), o)), o);
    }

    #[test]
    fn decode_gradient_is_unit() {
        let cx = Tensor::vector(vec![10.0]).unwrap();
        let cy = Tensor::vector(vec![10.0]).unwrap();
        let l = Tensor::param(vec![1.0], &[1]).unwrap();
        let t = Tensor::param(vec![1.0], &[1]).unwrap();
        let r = Tensor::param(vec![1.0], &[1]).unwrap();
        let b = Tensor::param(vec![1.0], &[1]).unwrap();
        let bx = BoxTensors::decode(&cx, &cy, &l, &t, &r, &b).unwrap();
        bx.x1.add(&bx.y1).unwrap().add(&bx.x2).unwrap().add(&bx.y2).unwrap().sum_all().backward().unwrap();
        assert_eq!(l.grad().unwrap(), vec![-1.0]);
        assert_eq!(t.grad().unwrap(), vec![-1.0]);
        assert_eq!(r.grad().unwrap(), vec![1.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn giou_examples() {
        let a = BoxTensors::constant(&[bb(0.0, 0.0, 2.0, 2.0), bb(0.0, 0.0, 2.0, 2.0)]).unwrap();
        let b = BoxTensors::constant(&[bb(0.0, 0.0, 2.0, 2.0), bb(1.0, 1.0, 3.0, 3.0)]).unwrap();
        let g = giou_tensor(&a, &b).unwrap();
        assert_eq!(g.data()[0], 1.0);
        assert!((g.data()[1] - (1.0 / 7.0 - 2.0 / 9.0)).abs() < 1e-15);
        let i = iou_tensor(&a, &b).unwrap();
        assert!((i.data()[1] - 1.0 / 7.0).abs() < 1e-15);
    }
}
