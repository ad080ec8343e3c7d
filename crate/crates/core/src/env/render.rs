//! Procedural class instances and multi-instance scenes.
//!
//! Each class pairs one silhouette with one colour, so every class differs
//! from every other in both. Instances vary in position, size, rotation,
//! colour jitter and background.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{BBox, Screen};
use crate::error::{Error, Result};

pub const CLASS_COUNT: usize = 8;

/// An RGB frame stored as 8-bit channels, row-major `H × W × 3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    screen: Screen,
    pixels: Vec<u8>,
    digest: u64,
}

impl Image {
    pub fn new(screen: Screen, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != screen.cells() * 3 {
            return Err(Error::Input(format!(
                "image of {}×{} needs {} channel values, got {}",
                screen.height,
                screen.width,
                screen.cells() * 3,
                pixels.len()
            )));
        }
        let mut h = DefaultHasher::new();
        screen.hash(&mut h);
        pixels.hash(&mut h);
        Ok(Self {
            screen,
            digest: h.finish(),
            pixels,
        })
    }

    pub fn filled(screen: Screen, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(screen.cells() * 3).collect();
        Self::new(screen, pixels).expect("sized from screen")
    }

    pub fn screen(&self) -> Screen {
        self.screen
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Content hash, used as a cache key and in replay logs.
    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn rgb(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.screen.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Channel values scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    /// Copies `src` with its top-left corner at `(x, y)`, clipping at the edges.
    pub fn paste(&self, src: &Image, x: u32, y: u32) -> Image {
        let mut pixels = self.pixels.clone();
        let (w, h) = (self.screen.width, self.screen.height);
        for sy in 0..src.screen.height {
            for sx in 0..src.screen.width {
                let (dx, dy) = (x + sx, y + sy);
                if dx >= w || dy >= h {
                    continue;
                }
                let d = 3 * (dy as usize * w as usize + dx as usize);
                pixels[d..d + 3].copy_from_slice(&src.rgb(sx, sy));
            }
        }
        Image::new(self.screen, pixels).expect("same screen")
    }
}

/// Binary mask plus its tight bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub class_id: usize,
    pub mask: Vec<bool>,
    pub bbox: BBox,
}

impl Instance {
    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    /// The displayed class for single-instance frames.
    pub class_id: Option<usize>,
    pub instances: Vec<Instance>,
}

/// Placement of one instance: centre as a fraction of the screen, radius as a
/// fraction of the shorter side, rotation in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl Pose {
    pub const CENTERED: Pose = Pose {
        cx: 0.5,
        cy: 0.5,
        scale: 0.42,
        rotation: 0.0,
    };

    /// Random pose that keeps the whole silhouette on screen.
    pub fn sample<R: Rng>(rng: &mut R, min_scale: f64, max_scale: f64) -> Pose {
        let scale = rng.random_range(min_scale..=max_scale);
        let m = scale.min(0.49);
        Pose {
            cx: rng.random_range(m..=1.0 - m),
            cy: rng.random_range(m..=1.0 - m),
            scale,
            rotation: rng.random_range(0.0..2.0 * PI),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Disc,
    Square,
    Triangle,
    Cross,
    Ring,
    Diamond,
    Ellipse,
    Hourglass,
}

impl Shape {
    fn contains(self, u: f64, v: f64) -> bool {
        let r2 = u * u + v * v;
        match self {
            Shape::Disc => r2 <= 1.0,
            Shape::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
            Shape::Triangle => v >= -0.7 && v <= 0.9 - 1.8 * u.abs(),
            Shape::Cross => (u.abs() <= 0.3 && v.abs() <= 0.9) || (v.abs() <= 0.3 && u.abs() <= 0.9),
            Shape::Ring => (0.3..=1.0).contains(&r2),
            Shape::Diamond => u.abs() + v.abs() <= 1.0,
            Shape::Ellipse => u * u + (v / 0.5) * (v / 0.5) <= 1.0,
            Shape::Hourglass => u.abs() <= v.abs() + 0.1 && v.abs() <= 0.9,
        }
    }
}

const SHAPES: [Shape; CLASS_COUNT] = [
    Shape::Disc,
    Shape::Square,
    Shape::Triangle,
    Shape::Cross,
    Shape::Ring,
    Shape::Diamond,
    Shape::Ellipse,
    Shape::Hourglass,
];

const COLOURS: [[f64; 3]; CLASS_COUNT] = [
    [0.90, 0.15, 0.10],
    [0.10, 0.75, 0.20],
    [0.15, 0.30, 0.95],
    [0.95, 0.85, 0.10],
    [0.85, 0.10, 0.80],
    [0.10, 0.85, 0.90],
    [1.00, 0.55, 0.05],
    [0.95, 0.95, 0.95],
];

pub fn class_name(class_id: usize) -> Option<&'static str> {
    const NAMES: [&str; CLASS_COUNT] = [
        "red-disc",
        "green-square",
        "blue-triangle",
        "yellow-cross",
        "magenta-ring",
        "cyan-diamond",
        "orange-ellipse",
        "white-hourglass",
    ];
    NAMES.get(class_id).copied()
}

fn check_class(class_id: usize) -> Result<()> {
    if class_id >= CLASS_COUNT {
        return Err(Error::Input(format!(
            "unknown class {class_id}; classes are 0..{CLASS_COUNT}"
        )));
    }
    Ok(())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Low-contrast textured background.
fn background(screen: Screen, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base: f64 = rng.random_range(0.15..0.45);
    let tint = [
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
    ];
    let gx: f64 = rng.random_range(-0.1..0.1);
    let gy: f64 = rng.random_range(-0.1..0.1);
    let (w, h) = (screen.width as f64, screen.height as f64);
    let mut px = Vec::with_capacity(screen.cells() * 3);
    for y in 0..screen.height {
        for x in 0..screen.width {
            let ramp = gx * (x as f64 / w - 0.5) + gy * (y as f64 / h - 0.5);
            let noise: f64 = rng.random_range(-0.04..0.04);
            for t in tint {
                px.push(base + t + ramp + noise);
            }
        }
    }
    px
}

/// Draws instances in order, later ones occluding earlier ones. Returned
/// masks are the visible parts.
pub fn compose_scene(screen: Screen, items: &[(usize, Pose)], seed: u64) -> Result<LabeledImage> {
    for &(c, _) in items {
        check_class(c)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = background(screen, &mut rng);
    let cells = screen.cells();
    let mut owner: Vec<Option<usize>> = vec![None; cells];
    let short = screen.height.min(screen.width) as f64;
    for (k, &(class_id, pose)) in items.iter().enumerate() {
        let jitter: [f64; 3] = [
            rng.random_range(-0.08..0.08),
            rng.random_range(-0.08..0.08),
            rng.random_range(-0.08..0.08),
        ];
        let colour = COLOURS[class_id];
        let radius = (pose.scale * short).max(0.5);
        let (cx, cy) = (pose.cx * screen.width as f64, pose.cy * screen.height as f64);
        let (s, c) = pose.rotation.sin_cos();
        for y in 0..screen.height {
            for x in 0..screen.width {
                let dx = (x as f64 + 0.5 - cx) / radius;
                let dy = (y as f64 + 0.5 - cy) / radius;
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                if !SHAPES[class_id].contains(u, -v) {
                    continue;
                }
                let i = y as usize * screen.width as usize + x as usize;
                owner[i] = Some(k);
                let shade = 1.0 - 0.15 * (u + v) * 0.5;
                for ch in 0..3 {
                    px[3 * i + ch] = (colour[ch] + jitter[ch]) * shade;
                }
            }
        }
    }
    let image = Image::new(screen, px.into_iter().map(to_u8).collect())?;
    let mut instances = Vec::with_capacity(items.len());
    for (k, &(class_id, _)) in items.iter().enumerate() {
        let mask: Vec<bool> = owner.iter().map(|o| *o == Some(k)).collect();
        let bbox = tight_box(screen, &mask).unwrap_or(BBox::new(0.0, 0.0, 0.0, 0.0));
        instances.push(Instance { class_id, mask, bbox });
    }
    let class_id = if items.len() == 1 { Some(items[0].0) } else { None };
    Ok(LabeledImage {
        image,
        class_id,
        instances,
    })
}

/// Smallest half-open box covering every set pixel, or `None` for an empty mask.
pub fn tight_box(screen: Screen, mask: &[bool]) -> Option<BBox> {
    let w = screen.width as usize;
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (x, y) = (i % w, i / w);
        b = Some(match b {
            None => (x, y, x, y),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        });
    }
    b.map(|(x0, y0, x1, y1)| BBox::new(x0 as f64, y0 as f64, x1 as f64 + 1.0, y1 as f64 + 1.0))
}

/// One instance of `class_id` on a textured background.
pub fn render_class_instance(screen: Screen, class_id: usize, pose: Pose, seed: u64) -> Result<LabeledImage> {
    let img = compose_scene(screen, &[(class_id, pose)], seed)?;
    if img.instances[0].area() == 0 {
        return Err(Error::Input(format!("pose {pose:?} leaves class {class_id} off screen")));
    }
    Ok(img)
}

/// A face-on, centred rendering on a black square, used for buttons and
/// sample screens of the match tasks.
pub fn render_template(class_id: usize, side: u32) -> Result<Image> {
    check_class(class_id)?;
    let screen = Screen::square(side);
    let radius = Pose::CENTERED.scale * side as f64;
    let colour = COLOURS[class_id];
    let mut px = vec![0u8; screen.cells() * 3];
    let c = side as f64 / 2.0;
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 + 0.5 - c) / radius;
            let v = (y as f64 + 0.5 - c) / radius;
            if SHAPES[class_id].contains(u, -v) {
                let i = 3 * (y as usize * side as usize + x as usize);
                for ch in 0..3 {
                    px[i + ch] = to_u8(colour[ch] * (1.0 - 0.075 * (u - v)));
                }
            }
        }
    }
    Image::new(screen, px)
}
