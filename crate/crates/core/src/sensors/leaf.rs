//! Camera stub producing synthetic VGA leaf photographs.
//!
//! A scene is rendered from its seed alone; a diseased scene is the healthy
//! render for the same seed with lesion blobs painted over it, so the two
//! differ only inside the lesion mask.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SensorError;

pub const VGA_WIDTH: u32 = 640;
pub const VGA_HEIGHT: u32 = 480;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafImage {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl LeafImage {
    pub fn from_raw(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, SensorError> {
        if channels != 1 && channels != 3 {
            return Err(SensorError::Channels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(SensorError::PixelCount {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    /// Luma (BT.601 weights) in [0, 255] for every pixel, row-major.
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.pixels.iter().map(|&p| f64::from(p)).collect(),
            _ => self
                .pixels
                .chunks_exact(3)
                .map(|px| 0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2]))
                .collect(),
        }
    }

    pub fn to_gray(&self) -> LeafImage {
        let pixels = self
            .luma()
            .into_iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        LeafImage {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
        }
    }

    pub fn to_pnm(&self) -> Vec<u8> {
        super::pnm::encode_pnm(self)
    }

    pub fn from_pnm(bytes: &[u8]) -> Result<Self, SensorError> {
        super::pnm::decode_pnm(bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeafScene {
    Healthy,
    Diseased(u8),
}

/// How one disease class looks on the leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseAppearance {
    pub name: String,
    pub color: [u8; 3],
    pub min_lesions: u32,
    pub max_lesions: u32,
    pub min_radius: f64,
    pub max_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseCatalog {
    pub classes: BTreeMap<u8, DiseaseAppearance>,
}

impl Default for DiseaseCatalog {
    fn default() -> Self {
        let mut classes = BTreeMap::new();
        classes.insert(
            1,
            DiseaseAppearance {
                name: "early_blight".into(),
                color: [88, 52, 24],
                min_lesions: 4,
                max_lesions: 7,
                min_radius: 32.0,
                max_radius: 52.0,
            },
        );
        classes.insert(
            2,
            DiseaseAppearance {
                name: "leaf_spot".into(),
                color: [205, 190, 70],
                min_lesions: 5,
                max_lesions: 8,
                min_radius: 28.0,
                max_radius: 46.0,
            },
        );
        Self { classes }
    }
}

/// Leaf pose and colouring, drawn from the scene seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafGeometry {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
    pub color: [f64; 3],
    pub background: [f64; 3],
}

impl LeafGeometry {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let green = rng.random_range(120.0..165.0);
        let shade = rng.random_range(0.85..1.1);
        let soil = rng.random_range(150.0..200.0);
        Self {
            cx: rng.random_range(260.0..380.0),
            cy: rng.random_range(200.0..280.0),
            semi_major: rng.random_range(200.0..260.0),
            semi_minor: rng.random_range(120.0..170.0),
            angle: rng.random_range(-0.5..0.5),
            color: [48.0 * shade, green * shade, 44.0 * shade],
            background: [soil, soil * 0.93, soil * 0.8],
        }
    }

    /// Position in leaf-aligned coordinates scaled so the leaf edge is at radius 1.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        (
            (dx * c + dy * s) / self.semi_major,
            (-dx * s + dy * c) / self.semi_minor,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x, y);
        u * u + v * v <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lesion {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

impl Lesion {
    fn covers(&self, x: f64, y: f64) -> bool {
        let dx = x - self.x;
        let dy = y - self.y;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, Default)]
pub struct LeafCamera {
    pub catalog: DiseaseCatalog,
}

impl LeafCamera {
    pub fn new(catalog: DiseaseCatalog) -> Self {
        Self { catalog }
    }

    /// Lesion placement for a diseased scene; centres always fall on the leaf.
    pub fn lesions(&self, class_id: u8, seed: u64) -> Result<Vec<Lesion>, SensorError> {
        let look = self
            .catalog
            .classes
            .get(&class_id)
            .ok_or(SensorError::UnknownDiseaseClass(class_id))?;
        let leaf = LeafGeometry::from_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(class_id) << 56) ^ 0x5eed_1e55);
        let count = rng.random_range(look.min_lesions..=look.max_lesions);
        let mut lesions = Vec::with_capacity(count as usize);
        while lesions.len() < count as usize {
            let r = rng.random_range(0.0..0.8f64).sqrt();
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let (u, v) = (r * theta.cos() * leaf.semi_major, r * theta.sin() * leaf.semi_minor);
            let (s, c) = leaf.angle.sin_cos();
            lesions.push(Lesion {
                x: leaf.cx + u * c - v * s,
                y: leaf.cy + u * s + v * c,
                radius: rng.random_range(look.min_radius..=look.max_radius),
            });
        }
        Ok(lesions)
    }

    /// Row-major mask of pixels a diseased render may repaint.
    pub fn lesion_mask(&self, class_id: u8, seed: u64) -> Result<Vec<bool>, SensorError> {
        let lesions = self.lesions(class_id, seed)?;
        let mut mask = vec![false; (VGA_WIDTH * VGA_HEIGHT) as usize];
        for y in 0..VGA_HEIGHT {
            for x in 0..VGA_WIDTH {
                let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
                mask[(y * VGA_WIDTH + x) as usize] = lesions.iter().any(|l| l.covers(px, py));
            }
        }
        Ok(mask)
    }

    pub fn capture(&self, scene: LeafScene, seed: u64) -> Result<LeafImage, SensorError> {
        let (lesions, lesion_color) = match scene {
            LeafScene::Healthy => (Vec::new(), [0.0; 3]),
            LeafScene::Diseased(class_id) => {
                let lesions = self.lesions(class_id, seed)?;
                let c = self.catalog.classes[&class_id].color;
                (lesions, [f64::from(c[0]), f64::from(c[1]), f64::from(c[2])])
            }
        };
        let leaf = LeafGeometry::from_seed(seed);
        // Sensor grain is drawn from its own stream so that it is shared by
        // healthy and diseased renders of the same seed.
        let mut grain = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
        let mut pixels = Vec::with_capacity((VGA_WIDTH * VGA_HEIGHT * 3) as usize);
        for y in 0..VGA_HEIGHT {
            for x in 0..VGA_WIDTH {
                let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
                let noise = f64::from(grain.random_range(-6i8..=6));
                let mut rgb = if leaf.contains(px, py) {
                    let (u, v) = leaf.local(px, py);
                    // Midrib and a soft darkening towards the margin.
                    let vein = if v.abs() < 0.025 { 1.25 } else { 1.0 };
                    let edge = 1.0 - 0.25 * (u * u + v * v);
                    leaf.color.map(|ch| ch * vein * edge)
                } else {
                    let shade = 1.0 - 0.15 * (py / f64::from(VGA_HEIGHT));
                    leaf.background.map(|ch| ch * shade)
                };
                if lesions.iter().any(|l| l.covers(px, py)) {
                    rgb = lesion_color;
                }
                pixels.extend(rgb.map(|ch| (ch + noise).round().clamp(0.0, 255.0) as u8));
            }
        }
        LeafImage::from_raw(VGA_WIDTH, VGA_HEIGHT, 3, pixels)
    }
}

/// Captures with the default disease catalogue.
pub fn capture_leaf(scene: LeafScene, seed: u64) -> Result<LeafImage, SensorError> {
    LeafCamera::default().capture(scene, seed)
}
