//! Synthetic shape scenes.
//!
//! Each 64x64 single-channel scene holds one to four filled shapes (rectangle,
//! circle, triangle) on a dark background with additive Gaussian noise. Scene
//! `i` of seed `s` depends only on `(s, i)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detector::boxes::{iou, BBox, GroundTruth};
use crate::detector::net::{IMAGE_SIZE, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::eval::io::{ground_truth_to_json, parse_ground_truth, ImageAnnotations};
use crate::fsutil;
use crate::parallel::{map_indexed, Exec};

pub const MIN_OBJECTS: usize = 1;
pub const MAX_OBJECTS: usize = 4;
pub const MIN_SIZE: u32 = 12;
pub const MAX_SIZE: u32 = 28;
pub const NOISE_STD: f64 = 0.05;
/// Placements overlapping an earlier object by more than this are redrawn.
pub const MAX_OVERLAP: f64 = 0.3;
const PLACEMENT_ATTEMPTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeClass {
    Rectangle,
    Circle,
    Triangle,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; NUM_CLASSES] = [ShapeClass::Rectangle, ShapeClass::Circle, ShapeClass::Triangle];

    pub fn id(self) -> usize {
        self as usize
    }

    /// Whether the pixel center `(x, y)` is inside the shape inscribed in `b`.
    fn covers(self, b: &BBox, x: f64, y: f64) -> bool {
        if !(x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2) {
            return false;
        }
        match self {
            ShapeClass::Rectangle => true,
            ShapeClass::Circle => {
                let (cx, cy) = ((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0);
                let r = (b.x2 - b.x1) / 2.0;
                (x - cx).powi(2) + (y - cy).powi(2) <= r * r
            }
            ShapeClass::Triangle => {
                // Apex at top center, base along the bottom edge.
                let t = (y - b.y1) / (b.y2 - b.y1);
                let half = t * (b.x2 - b.x1) / 2.0;
                let cx = (b.x1 + b.x2) / 2.0;
                (x - cx).abs() <= half
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeScene {
    pub seed: u64,
    pub index: u64,
    /// Row-major `IMAGE_SIZE x IMAGE_SIZE` intensities in `[0, 1]`.
    pub image: Vec<f64>,
    pub gts: Vec<GroundTruth>,
}

impl ShapeScene {
    pub fn image_id(&self) -> String {
        format!("s{}-{}", self.seed, self.index)
    }
}

pub fn generate_scene(seed: u64, index: u64) -> ShapeScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let count = rng.random_range(MIN_OBJECTS..=MAX_OBJECTS);
    let mut objects: Vec<(ShapeClass, BBox, f64)> = Vec::with_capacity(count);
    for _ in 0..count {
        let class = ShapeClass::ALL[rng.random_range(0..NUM_CLASSES)];
        let intensity = rng.random_range(0.5..=1.0);
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = rng.random_range(MIN_SIZE..=MAX_SIZE);
            let h = if class == ShapeClass::Circle {
                w
            } else {
                rng.random_range(MIN_SIZE..=MAX_SIZE)
            };
            let x = rng.random_range(0..=IMAGE_SIZE as u32 - w);
            let y = rng.random_range(0..=IMAGE_SIZE as u32 - h);
            let b = BBox {
                x1: x as f64,
                y1: y as f64,
                x2: (x + w) as f64,
                y2: (y + h) as f64,
            };
            if objects.iter().all(|(_, o, _)| iou(o, &b) <= MAX_OVERLAP) {
                objects.push((class, b, intensity));
                break;
            }
        }
    }
    let noise = Normal::new(0.0, NOISE_STD).expect("valid noise");
    let mut image = vec![0.0; IMAGE_SIZE * IMAGE_SIZE];
    for (py, row) in image.chunks_mut(IMAGE_SIZE).enumerate() {
        for (px, v) in row.iter_mut().enumerate() {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            for (class, b, intensity) in &objects {
                if class.covers(b, x, y) {
                    *v = *intensity;
                }
            }
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    ShapeScene {
        seed,
        index,
        image,
        gts: objects
            .into_iter()
            .map(|(class, bbox, _)| GroundTruth {
                bbox,
                class_id: class.id(),
            })
            .collect(),
    }
}

/// A generated set of scenes with contiguous indices starting at `offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub offset: u64,
    pub scenes: Vec<ShapeScene>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub offset: u64,
    pub count: usize,
    pub image_size: usize,
    pub noise_std: f64,
}

const IMAGES_FILE: &str = "images.bin";
const GT_FILE: &str = "gt.json";
const META_FILE: &str = "meta.json";

impl Dataset {
    pub fn generate(seed: u64, offset: u64, n: usize) -> Result<Self> {
        Self::generate_with(Exec::default(), seed, offset, n)
    }

    pub fn generate_with(exec: Exec, seed: u64, offset: u64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("dataset size must be positive".into()));
        }
        let scenes = map_indexed(exec, n, |i| generate_scene(seed, offset + i as u64));
        Ok(Dataset { seed, offset, scenes })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// All images back to back.
    pub fn pixels(&self) -> Vec<f64> {
        self.scenes.iter().flat_map(|s| s.image.iter().copied()).collect()
    }

    /// Images `indices` back to back.
    pub fn gather_pixels(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().flat_map(|&i| self.scenes[i].image.iter().copied()).collect()
    }

    pub fn ground_truth(&self) -> Vec<Vec<GroundTruth>> {
        self.scenes.iter().map(|s| s.gts.clone()).collect()
    }

    pub fn annotations(&self) -> Vec<ImageAnnotations> {
        self.scenes
            .iter()
            .map(|s| ImageAnnotations {
                image_id: s.image_id(),
                objects: s.gts.clone(),
            })
            .collect()
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.scenes.iter().map(|s| s.image_id()).collect()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            seed: self.seed,
            offset: self.offset,
            count: self.len(),
            image_size: IMAGE_SIZE,
            noise_std: NOISE_STD,
        }
    }

    /// Writes `images.bin` (little-endian f64 pixels), `gt.json` and
    /// `meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.pixels().iter().flat_map(|v| v.to_le_bytes()).collect();
        fsutil::write_atomic(&dir.join(IMAGES_FILE), &bytes)?;
        fsutil::write_atomic(&dir.join(GT_FILE), ground_truth_to_json(&self.annotations())?.as_bytes())?;
        crate::eval::io::write_json(&self.meta(), &dir.join(META_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&fsutil::read_to_string(&dir.join(META_FILE))?)?;
        if meta.image_size != IMAGE_SIZE {
            return Err(Error::Format(format!("dataset image size {} != {IMAGE_SIZE}", meta.image_size)));
        }
        let bytes = fsutil::read(&dir.join(IMAGES_FILE))?;
        let per_image = IMAGE_SIZE * IMAGE_SIZE;
        if bytes.len() != meta.count * per_image * 8 {
            return Err(Error::Format(format!("{IMAGES_FILE} has {} bytes for {} images", bytes.len(), meta.count)));
        }
        let pixels: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let gts = parse_ground_truth(&fsutil::read_to_string(&dir.join(GT_FILE))?)?;
        if gts.len() != meta.count {
            return Err(Error::Format(format!("{GT_FILE} has {} images, expected {}", gts.len(), meta.count)));
        }
        let scenes = gts
            .into_iter()
            .enumerate()
            .map(|(i, a)| ShapeScene {
                seed: meta.seed,
                index: meta.offset + i as u64,
                image: pixels[i * per_image..(i + 1) * per_image].to_vec(),
                gts: a.objects,
            })
            .collect();
        Ok(Dataset {
            seed: meta.seed,
            offset: meta.offset,
            scenes,
        })
    }
}
