//! Axis-aligned box arithmetic and the crowding (density) target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, corner form.
///
/// `width = x2 - x1`, `height = y2 - y1`. Zero-area boxes are allowed.
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
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::Integrity(format!(
                "non-finite box coordinates ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x2 < x1 || y2 < y1 {
            return Err(Error::Integrity(format!(
                "negative box extent ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from COCO `[x, y, w, h]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if w < 0.0 || h < 0.0 {
            return Err(Error::Integrity(format!("negative box size w={w} h={h}")));
        }
        Self::new(x, y, x + w, y + h)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Area of the overlap with `other` (0 when disjoint).
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    /// Overlap with `window`, or `None` unless the overlap has positive area.
    pub fn clip(&self, window: &BBox) -> Option<BBox> {
        clip(self, window)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Clamps every coordinate into `[0, w] x [0, h]`.
    pub fn clamp_to(&self, w: f64, h: f64) -> BBox {
        BBox {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        }
    }

    pub fn within(&self, w: f64, h: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= w && self.y2 <= h
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn clip(b: &BBox, window: &BBox) -> Option<BBox> {
    let x1 = b.x1.max(window.x1);
    let y1 = b.y1.max(window.y1);
    let x2 = b.x2.min(window.x2);
    let y2 = b.y2.min(window.y2);
    (x2 > x1 && y2 > y1).then_some(BBox { x1, y1, x2, y2 })
}

/// For each box, the largest IoU it has with any other box in the list.
///
/// Neighbours are class-agnostic. A box with no neighbour gets 0.
pub fn density(boxes: &[BBox]) -> Vec<f64> {
    let n = boxes.len();
    let mut out = vec![0.0f64; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = iou(&boxes[i], &boxes[j]);
            if v > out[i] {
                out[i] = v;
            }
            if v > out[j] {
                out[j] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    /// Counts unit cells covered by integer boxes.
    fn raster_iou(a: &BBox, c: &BBox) -> f64 {
        let (lo_x, hi_x) = (a.x1.min(c.x1) as i64, a.x2.max(c.x2) as i64);
        let (lo_y, hi_y) = (a.y1.min(c.y1) as i64, a.y2.max(c.y2) as i64);
        let inside = |bb: &BBox, x: i64, y: i64| {
            (x as f64) >= bb.x1
                && ((x + 1) as f64) <= bb.x2
                && (y as f64) >= bb.y1
                && ((y + 1) as f64) <= bb.y2
        };
        let (mut inter, mut uni) = (0u64, 0u64);
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let (p, q) = (inside(a, x, y), inside(c, x, y));
                inter += (p && q) as u64;
                uni += (p || q) as u64;
            }
        }
        if uni == 0 {
            0.0
        } else {
            inter as f64 / uni as f64
        }
    }

    #[test]
    fn area_examples() {
        assert_eq!(area(&b(0.0, 0.0, 10.0, 10.0)), 100.0);
        assert_eq!(area(&b(3.0, 3.0, 3.0, 9.0)), 0.0);
        assert_eq!(area(&b(1.5, 2.0, 4.0, 5.5)), 8.75);
    }

    #[test]
    fn construction_rejects_bad_boxes() {
        assert!(BBox::new(5.0, 0.0, 4.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
        assert!(BBox::from_xywh(0.0, 0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
        let shifted = b(5.0, 0.0, 15.0, 10.0);
        assert!((iou(&a, &shifted) - 1.0 / 3.0).abs() < 1e-15);
        assert!((raster_iou(&a, &shifted) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_boxes_have_zero_iou() {
        let z = b(3.0, 3.0, 3.0, 9.0);
        assert_eq!(iou(&z, &z), 0.0);
        assert_eq!(iou(&z, &b(0.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn clip_examples() {
        let w = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(
            clip(&b(5.0, 5.0, 15.0, 15.0), &w),
            Some(b(5.0, 5.0, 10.0, 10.0))
        );
        assert_eq!(
            clip(&b(0.0, 0.0, 4.0, 4.0), &w),
            Some(b(0.0, 0.0, 4.0, 4.0))
        );
        assert_eq!(clip(&b(20.0, 20.0, 30.0, 30.0), &w), None);
        // touching edge has zero area
        assert_eq!(clip(&b(10.0, 0.0, 12.0, 4.0), &w), None);
    }

    #[test]
    fn density_examples() {
        assert!(density(&[]).is_empty());
        assert_eq!(density(&[b(0.0, 0.0, 1.0, 1.0)]), vec![0.0]);
        let x = b(2.0, 2.0, 8.0, 9.0);
        assert_eq!(density(&[x, x]), vec![1.0, 1.0]);
        let d = density(&[
            b(0.0, 0.0, 10.0, 10.0),
            b(5.0, 0.0, 15.0, 10.0),
            b(100.0, 100.0, 110.0, 110.0),
        ]);
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn serde_uses_corner_array() {
        let bx = b(1.0, 2.0, 3.0, 4.5);
        let s = serde_json::to_string(&bx).unwrap();
        assert_eq!(s, "[1.0,2.0,3.0,4.5]");
        assert_eq!(serde_json::from_str::<BBox>(&s).unwrap(), bx);
        assert!(serde_json::from_str::<BBox>("[3,0,1,1]").is_err());
    }

    fn int_box() -> impl Strategy<Value = BBox> {
        (0u32..64, 0u32..64, 0u32..24, 0u32..24).prop_map(|(x, y, w, h)| {
            BBox::from_xywh(x as f64, y as f64, w as f64, h as f64).unwrap()
        })
    }

    fn float_box() -> impl Strategy<Value = BBox> {
        (-1e3..1e3f64, -1e3..1e3f64, 0.0..500.0f64, 0.0..500.0f64)
            .prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in float_box(), c in float_box()) {
            let v = iou(&a, &c);
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn self_iou_is_one(a in float_box()) {
            prop_assume!(a.area() > 0.0);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn iou_matches_rasterization(a in int_box(), c in int_box()) {
            prop_assert!((iou(&a, &c) - raster_iou(&a, &c)).abs() <= 1e-12);
        }

        #[test]
        fn clip_is_contained(a in float_box(), w in float_box()) {
            if let Some(c) = clip(&a, &w) {
                prop_assert!(a.contains(&c) && w.contains(&c));
                prop_assert!(c.area() <= a.area().min(w.area()) * (1.0 + 1e-12));
            }
        }

        #[test]
        fn density_permutation_equivariant(
            boxes in proptest::collection::vec(float_box(), 0..12),
            seed in any::<u64>(),
        ) {
            let d = density(&boxes);
            let mut rng = crate::rng::SplitMix64::new(seed);
            let perm = rng.sample_indices(boxes.len(), boxes.len());
            let shuffled: Vec<BBox> = perm.iter().map(|&i| boxes[i]).collect();
            let ds = density(&shuffled);
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(ds[k], d[i]);
            }
            prop_assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn far_box_leaves_density_unchanged(boxes in proptest::collection::vec(float_box(), 1..10)) {
            let before = density(&boxes);
            let mut more = boxes.clone();
            more.push(BBox::new(1e6, 1e6, 1e6 + 5.0, 1e6 + 5.0).unwrap());
            let after = density(&more);
            prop_assert_eq!(&after[..boxes.len()], &before[..]);
            prop_assert_eq!(after[boxes.len()], 0.0);
        }
    }
}
