//! Seeded synthetic importance/instance maps and matching luma frames.
//!
//! A [`SynthSpec`] describes either one explicit map (blobs and boxes listed
//! by hand) or a whole corpus: `count` entries, each with its own random
//! blobs and boxes drawn from a ChaCha stream keyed by `(seed, index)`.
//! Equal specs always produce byte-identical rasters.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::LumaFrame;
use crate::error::{Error, Result};
use crate::importance::{ImportanceMap, InstanceMap, TaskMaps};

/// Isotropic Gaussian importance bump; `peak` is the weight at the center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
    #[serde(default = "one")]
    pub peak: f64,
}

/// Axis-aligned instance rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub id: u8,
}

fn one() -> f64 {
    1.0
}

fn default_count() -> usize {
    1
}

fn default_side() -> usize {
    576
}

fn default_sigma_range() -> [f64; 2] {
    [20.0, 56.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    /// Descriptors applied to every generated entry.
    #[serde(default)]
    pub blobs: Vec<Blob>,
    #[serde(default)]
    pub boxes: Vec<InstanceBox>,
    /// Number of entries (frames/maps) to generate.
    #[serde(default = "default_count")]
    pub count: usize,
    /// Inclusive range of random blobs added per entry.
    #[serde(default)]
    pub random_blobs: [usize; 2],
    #[serde(default = "default_sigma_range")]
    pub sigma_range: [f64; 2],
    /// Each random blob also gets an instance box around it with this
    /// probability.
    #[serde(default)]
    pub box_probability: f64,
    /// Emit luma frames next to the maps.
    #[serde(default)]
    pub with_frames: bool,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

fn default_prefix() -> String {
    "synth".to_string()
}

impl SynthSpec {
    /// Explicit single-entry spec with no random content.
    pub fn explicit(seed: u64, width: usize, height: usize) -> Self {
        SynthSpec {
            seed,
            width,
            height,
            blobs: Vec::new(),
            boxes: Vec::new(),
            count: 1,
            random_blobs: [0, 0],
            sigma_range: default_sigma_range(),
            box_probability: 0.0,
            with_frames: false,
            prefix: default_prefix(),
        }
    }

    /// Corpus spec: `count` frames with 1..=3 random blobs each, most of
    /// them boxed as instances.
    pub fn corpus(seed: u64, count: usize, side: usize) -> Self {
        SynthSpec {
            count,
            random_blobs: [1, 3],
            box_probability: 0.7,
            with_frames: true,
            ..Self::explicit(seed, side, side)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain("synthetic map dimensions must be positive"));
        }
        for b in &self.blobs {
            let inside = b.cx >= 0.0
                && b.cy >= 0.0
                && b.cx <= self.width as f64
                && b.cy <= self.height as f64;
            if !inside || b.sigma.is_nan() || b.sigma <= 0.0 || !(0.0..=1.0).contains(&b.peak) {
                return Err(Error::domain(format!("invalid blob {b:?}")));
            }
        }
        for b in &self.boxes {
            if b.id == 0 || b.x + b.w > self.width || b.y + b.h > self.height {
                return Err(Error::domain(format!("invalid box {b:?}")));
            }
        }
        if self.random_blobs[0] > self.random_blobs[1] {
            return Err(Error::domain("random_blobs range is reversed"));
        }
        let [lo, hi] = self.sigma_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::domain("sigma_range must be positive and ordered"));
        }
        if !(0.0..=1.0).contains(&self.box_probability) {
            return Err(Error::domain("box_probability outside [0, 1]"));
        }
        Ok(())
    }

    pub fn entry_id(&self, index: usize) -> String {
        format!("{}_{index:04}", self.prefix)
    }

    fn rng_for(&self, index: usize, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.wrapping_mul(1 << 32) ^ index as u64);
        rng
    }

    /// Explicit descriptors plus the entry's random ones.
    pub fn descriptors(&self, index: usize) -> (Vec<Blob>, Vec<InstanceBox>) {
        let mut blobs = self.blobs.clone();
        let mut boxes = self.boxes.clone();
        let [lo, hi] = self.random_blobs;
        if hi == 0 {
            return (blobs, boxes);
        }
        let mut rng = self.rng_for(index, 1);
        let n = rng.gen_range(lo..=hi);
        let mut next_id = boxes.iter().map(|b| b.id).max().unwrap_or(0);
        for _ in 0..n {
            let sigma = rng.gen_range(self.sigma_range[0]..=self.sigma_range[1]);
            let blob = Blob {
                cx: rng.gen_range(0.0..self.width as f64),
                cy: rng.gen_range(0.0..self.height as f64),
                sigma,
                peak: 1.0,
            };
            if rng.gen_bool(self.box_probability) && next_id < u8::MAX {
                next_id += 1;
                let half = 1.5 * sigma;
                let x0 = (blob.cx - half).max(0.0) as usize;
                let y0 = (blob.cy - half).max(0.0) as usize;
                let x1 = ((blob.cx + half) as usize).min(self.width);
                let y1 = ((blob.cy + half) as usize).min(self.height);
                if x1 > x0 && y1 > y0 {
                    boxes.push(InstanceBox {
                        x: x0,
                        y: y0,
                        w: x1 - x0,
                        h: y1 - y0,
                        id: next_id,
                    });
                }
            }
            blobs.push(blob);
        }
        (blobs, boxes)
    }
}

/// Rasterize the importance and instance maps of one entry.
pub fn synth_maps(spec: &SynthSpec, index: usize) -> Result<TaskMaps> {
    spec.validate()?;
    let (blobs, boxes) = spec.descriptors(index);
    Ok(rasterize(spec.width, spec.height, &blobs, &boxes))
}

pub fn rasterize(width: usize, height: usize, blobs: &[Blob], boxes: &[InstanceBox]) -> TaskMaps {
    let mut weights = vec![0.0f64; width * height];
    for b in blobs {
        // contributions below 1/510 cannot move a level
        let reach = b.sigma * (2.0 * (510.0f64 * b.peak.max(1e-12)).ln()).max(0.0).sqrt();
        let x0 = (b.cx - reach).floor().max(0.0) as usize;
        let y0 = (b.cy - reach).floor().max(0.0) as usize;
        let x1 = ((b.cx + reach).ceil() as usize).min(width);
        let y1 = ((b.cy + reach).ceil() as usize).min(height);
        let inv = 1.0 / (2.0 * b.sigma * b.sigma);
        for y in y0..y1 {
            let dy = y as f64 + 0.5 - b.cy;
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - b.cx;
                weights[y * width + x] += b.peak * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    let importance = ImportanceMap::from_weights(width, height, &weights);
    let mut ids = vec![0u8; width * height];
    for b in boxes {
        for y in b.y..(b.y + b.h).min(height) {
            for x in b.x..(b.x + b.w).min(width) {
                ids[y * width + x] = b.id;
            }
        }
    }
    TaskMaps {
        importance,
        instances: InstanceMap::from_ids(width, height, ids),
    }
}

/// Synthetic luma content for one entry: a smooth background with a few
/// textured patches, and a textured object under every blob so that
/// important regions are also expensive to code.
pub fn synth_frame(spec: &SynthSpec, index: usize) -> Result<LumaFrame> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (blobs, _) = spec.descriptors(index);
    let mut rng = spec.rng_for(index, 2);

    let base = rng.gen_range(60.0..180.0);
    let gx = rng.gen_range(-60.0..60.0) / w as f64;
    let gy = rng.gen_range(-60.0..60.0) / h as f64;
    let mut img: Vec<f64> = (0..w * h)
        .map(|i| base + gx * (i % w) as f64 + gy * (i / w) as f64)
        .collect();

    let patches = rng.gen_range(2..=5);
    for _ in 0..patches {
        let pw = rng.gen_range(w / 8..=w / 3);
        let ph = rng.gen_range(h / 8..=h / 3);
        let px = rng.gen_range(0..w - pw.min(w - 1));
        let py = rng.gen_range(0..h - ph.min(h - 1));
        let texture = Texture::random(&mut rng, 6.0, 28.0);
        for y in py..(py + ph).min(h) {
            for x in px..(px + pw).min(w) {
                img[y * w + x] += texture.at(x as f64, y as f64);
            }
        }
    }

    for b in &blobs {
        let radius = 1.6 * b.sigma;
        let offset = rng.gen_range(-50.0..50.0);
        let texture = Texture::random(&mut rng, 10.0, 36.0);
        let x0 = (b.cx - radius).max(0.0) as usize;
        let y0 = (b.cy - radius).max(0.0) as usize;
        let x1 = ((b.cx + radius) as usize + 1).min(w);
        let y1 = ((b.cy + radius) as usize + 1).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - b.cx;
                let dy = y as f64 + 0.5 - b.cy;
                let d = (dx * dx + dy * dy).sqrt() / radius;
                if d < 1.0 {
                    let fade = 1.0 - d * d;
                    img[y * w + x] += fade * (offset + texture.at(x as f64, y as f64));
                }
            }
        }
    }

    let samples = img
        .iter()
        .map(|&v| (v + rng.gen_range(-2.0..2.0)).round().clamp(0.0, 255.0) as u8)
        .collect();
    LumaFrame::from_raw(spec.entry_id(index), w, h, samples)
}

/// Sum of two oriented gratings.
struct Texture {
    waves: [(f64, f64, f64, f64); 2],
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, amp_lo: f64, amp_hi: f64) -> Self {
        let mut wave = || {
            let period = rng.gen_range(3.0..24.0);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let k = std::f64::consts::TAU / period;
            (
                k * theta.cos(),
                k * theta.sin(),
                rng.gen_range(amp_lo..amp_hi),
                rng.gen_range(0.0..6.3),
            )
        };
        Texture {
            waves: [wave(), wave()],
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.waves
            .iter()
            .map(|&(kx, ky, a, p)| 0.5 * a * (kx * x + ky * y + p).sin())
            .sum()
    }
}
