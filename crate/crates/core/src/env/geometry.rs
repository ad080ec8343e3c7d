use serde::{Deserialize, Serialize};

/// A touched pixel: `x` is the column, `y` the row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionPoint {
    pub x: u32,
    pub y: u32,
}

impl ActionPoint {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Pixel-centre coordinates relative to the screen centre, scaled to
    /// `[-1, 1]`. Never exactly zero on even-sized screens.
    pub fn normalized(self, screen: Screen) -> [f64; 2] {
        [
            (2.0 * self.x as f64 + 1.0) / screen.width as f64 - 1.0,
            (2.0 * self.y as f64 + 1.0) / screen.height as f64 - 1.0,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Screen {
    pub height: u32,
    pub width: u32,
}

impl Screen {
    pub const DESK: Screen = Screen { height: 64, width: 64 };
    pub const FULL: Screen = Screen { height: 224, width: 224 };

    pub fn square(side: u32) -> Self {
        Self {
            height: side,
            width: side,
        }
    }

    pub fn cells(self) -> usize {
        self.height as usize * self.width as usize
    }

    pub fn contains(self, a: ActionPoint) -> bool {
        a.x < self.width && a.y < self.height
    }

    /// Row-major index of a grid point.
    pub fn index(self, a: ActionPoint) -> usize {
        a.y as usize * self.width as usize + a.x as usize
    }

    pub fn point(self, index: usize) -> ActionPoint {
        ActionPoint::new((index % self.width as usize) as u32, (index / self.width as usize) as u32)
    }

    pub fn in_left_half(self, a: ActionPoint) -> bool {
        a.x < self.width / 2
    }

    pub fn in_top_half(self, a: ActionPoint) -> bool {
        a.y < self.height / 2
    }

    /// Quadrant index: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    pub fn quadrant(self, a: ActionPoint) -> usize {
        let right = !self.in_left_half(a) as usize;
        let bottom = !self.in_top_half(a) as usize;
        2 * bottom + right
    }
}

/// Half-open box `[x0, x1) × [y0, y1)` in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

    /// Box spanned by two touched corners, in either diagonal order; the
    /// touched pixels are included.
    pub fn from_corners(a: ActionPoint, b: ActionPoint) -> Self {
        Self {
            x0: a.x.min(b.x) as f64,
            y0: a.y.min(b.y) as f64,
            x1: a.x.max(b.x) as f64 + 1.0,
            y1: a.y.max(b.y) as f64 + 1.0,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn contains(&self, a: ActionPoint) -> bool {
        let (x, y) = (a.x as f64, a.y as f64);
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }
}

/// Intersection over union; zero when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Integer pixel rectangle used for on-screen buttons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn contains(&self, a: ActionPoint) -> bool {
        a.x >= self.x && a.x < self.x + self.w && a.y >= self.y && a.y < self.y + self.h
    }

    pub fn overlaps(&self, o: &Rect) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        let b = BBox::new(5.0, 0.0, 15.0, 10.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn corners_in_any_order() {
        let ul = ActionPoint::new(3, 4);
        let lr = ActionPoint::new(9, 12);
        let ur = ActionPoint::new(9, 4);
        let ll = ActionPoint::new(3, 12);
        let b = BBox::from_corners(ul, lr);
        assert_eq!(b, BBox::from_corners(lr, ul));
        assert_eq!(b, BBox::from_corners(ur, ll));
        assert_eq!(b, BBox::new(3.0, 4.0, 10.0, 13.0));
    }

    #[test]
    fn half_open_partition() {
        let s = Screen::DESK;
        assert!(s.in_left_half(ActionPoint::new(31, 0)));
        assert!(!s.in_left_half(ActionPoint::new(32, 0)));
        assert_eq!(s.quadrant(ActionPoint::new(32, 32)), 3);
        assert_eq!(s.quadrant(ActionPoint::new(31, 31)), 0);
        assert_eq!(s.quadrant(ActionPoint::new(32, 31)), 1);
        assert_eq!(s.quadrant(ActionPoint::new(31, 32)), 2);
    }

    #[test]
    fn normalized_coordinates_avoid_zero() {
        let s = Screen::DESK;
        let l = ActionPoint::new(31, 0).normalized(s);
        let r = ActionPoint::new(32, 63).normalized(s);
        assert!(l[0] < 0.0 && r[0] > 0.0);
        assert!((ActionPoint::new(0, 0).normalized(s)[0] + 1.0 - 1.0 / 64.0).abs() < 1e-15);
        assert!(r[1] < 1.0);
    }
}
