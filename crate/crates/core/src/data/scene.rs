//! Synthetic shape scenes with exact ground-truth boxes.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BBox, DataError};
use crate::encoders::ImageTensor;

pub const MIN_SHAPES: usize = 2;
pub const MAX_SHAPES: usize = 6;
pub const DEFAULT_CANVAS: (u32, u32) = (320, 240);
const BACKGROUND: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn noun(&self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    /// Attribute used to refer to the shape without naming it.
    pub fn adjective(&self) -> &'static str {
        match self {
            ShapeKind::Circle => "round",
            ShapeKind::Square => "boxy",
            ShapeKind::Triangle => "pointed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
    Cyan,
    Gray,
}

impl Color {
    pub const PALETTE: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
        Color::Cyan,
        Color::Gray,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
            Color::Cyan => "cyan",
            Color::Gray => "gray",
        }
    }

    pub fn rgb(&self) -> [u8; 3] {
        match self {
            Color::Red => [230, 25, 25],
            Color::Green => [30, 160, 40],
            Color::Blue => [30, 60, 220],
            Color::Yellow => [240, 210, 20],
            Color::Purple => [140, 50, 170],
            Color::Orange => [245, 130, 20],
            Color::Cyan => [20, 190, 200],
            Color::Gray => [120, 120, 120],
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub color: Color,
    pub bbox: BBox,
    /// Drawing order; higher values are painted later and end up on top.
    pub z: u32,
}

impl Shape {
    pub fn describe(&self) -> String {
        format!("{} {}", self.color.name(), self.kind.noun())
    }

    /// Whether the centre of pixel `(x, y)` lies inside the shape.
    pub fn covers(&self, x: u32, y: u32) -> bool {
        let b = &self.bbox;
        if x < b.x1 || x >= b.x2 || y < b.y1 || y >= b.y2 {
            return false;
        }
        let px = x as f64 + 0.5;
        let py = y as f64 + 0.5;
        match self.kind {
            ShapeKind::Square => true,
            ShapeKind::Circle => {
                let cx = (b.x1 + b.x2) as f64 / 2.0;
                let cy = (b.y1 + b.y2) as f64 / 2.0;
                let r = b.width().min(b.height()) as f64 / 2.0;
                (px - cx).powi(2) + (py - cy).powi(2) <= r * r
            }
            ShapeKind::Triangle => {
                // apex at top centre, base along the bottom edge
                let apex_x = (b.x1 + b.x2) as f64 / 2.0;
                let half = b.width() as f64 / 2.0;
                let t = (py - b.y1 as f64) / b.height() as f64;
                (px - apex_x).abs() <= half * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub shapes: Vec<Shape>,
    pub target: usize,
}

impl SceneSpec {
    pub fn target_shape(&self) -> &Shape {
        &self.shapes[self.target]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.target >= self.shapes.len() {
            return Err(DataError::InvalidScene(format!(
                "target index {} out of range for {} shapes",
                self.target,
                self.shapes.len()
            )));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if !s.bbox.fits_in(self.width, self.height) {
                return Err(DataError::InvalidScene(format!(
                    "shape {i} box {} outside {}x{} canvas",
                    s.bbox, self.width, self.height
                )));
            }
            if self.shapes[..i]
                .iter()
                .any(|o| o.kind == s.kind && o.color == s.color)
            {
                return Err(DataError::AmbiguousScene(s.describe()));
            }
        }
        Ok(())
    }
}

/// `synth_scene_on` with the default 320x240 canvas.
pub fn synth_scene(seed: u64, n_shapes: usize) -> Result<SceneSpec, DataError> {
    synth_scene_on(seed, n_shapes, DEFAULT_CANVAS)
}

/// Places `n_shapes` shapes with distinct (kind, colour) pairs and picks a
/// target uniformly. Placements overlapping an earlier shape by IoU above
/// 0.25 are re-drawn a bounded number of times.
pub fn synth_scene_on(
    seed: u64,
    n_shapes: usize,
    canvas: (u32, u32),
) -> Result<SceneSpec, DataError> {
    if !(MIN_SHAPES..=MAX_SHAPES).contains(&n_shapes) {
        return Err(DataError::ShapeCount {
            requested: n_shapes,
            min: MIN_SHAPES,
            max: MAX_SHAPES,
        });
    }
    let (width, height) = canvas;
    let short = width.min(height);
    if short < 32 {
        return Err(DataError::InvalidScene(format!(
            "canvas {width}x{height} too small"
        )));
    }
    let min_side = (short / 8).max(8);
    let max_side = (short * 2 / 7).max(min_side + 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut combos: Vec<(ShapeKind, Color)> = ShapeKind::ALL
        .iter()
        .flat_map(|k| Color::PALETTE.iter().map(move |c| (*k, *c)))
        .collect();
    let mut shapes: Vec<Shape> = Vec::with_capacity(n_shapes);
    for z in 0..n_shapes {
        let pick = rng.random_range(0..combos.len());
        let (kind, color) = combos.swap_remove(pick);
        let mut bbox = random_box(&mut rng, width, height, min_side, max_side);
        for _ in 0..50 {
            if shapes
                .iter()
                .all(|s| crate::metrics::iou(&s.bbox, &bbox) <= 0.25)
            {
                break;
            }
            bbox = random_box(&mut rng, width, height, min_side, max_side);
        }
        shapes.push(Shape {
            kind,
            color,
            bbox,
            z: z as u32,
        });
    }
    let target = rng.random_range(0..n_shapes);
    let spec = SceneSpec {
        width,
        height,
        shapes,
        target,
    };
    spec.validate()?;
    Ok(spec)
}

fn random_box(rng: &mut ChaCha8Rng, width: u32, height: u32, min_side: u32, max_side: u32) -> BBox {
    let side = rng.random_range(min_side..=max_side);
    let x1 = rng.random_range(0..=width - side);
    let y1 = rng.random_range(0..=height - side);
    BBox {
        x1,
        y1,
        x2: x1 + side,
        y2: y1 + side,
    }
}

/// Paints shapes in ascending z-order onto a white canvas.
pub fn render_scene(spec: &SceneSpec) -> ImageTensor {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut rgb = vec![0u8; w * h * 3];
    for px in rgb.chunks_exact_mut(3) {
        px.copy_from_slice(&BACKGROUND);
    }
    let mut order: Vec<&Shape> = spec.shapes.iter().collect();
    order.sort_by_key(|s| s.z);
    for shape in order {
        let color = shape.color.rgb();
        let b = shape.bbox;
        for y in b.y1..b.y2.min(spec.height) {
            for x in b.x1..b.x2.min(spec.width) {
                if shape.covers(x, y) {
                    let i = (y as usize * w + x as usize) * 3;
                    rgb[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }
    ImageTensor::from_rgb8(spec.width, spec.height, &rgb)
}
