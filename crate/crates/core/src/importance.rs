//! Task-importance and instance maps, and the per-CTU features derived
//! from them.
//!
//! Importance weights live in `[0, 1]` and are stored as 8-bit levels
//! (`weight = level / 255`), which is exactly what the PGM interchange
//! format can carry. Instance maps hold one id per pixel, `0` meaning
//! background.

use std::path::Path;

use crate::codec::frame::pad_edge;
use crate::codec::{LumaFrame, Rect, CTU_PIXELS};
use crate::error::{Error, Result};
use crate::pgm::{self, Gray8};

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportanceMap {
    pub width: usize,
    pub height: usize,
    levels: Vec<u8>,
}

impl ImportanceMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::from_levels(width, height, vec![0; width * height])
    }

    pub fn from_levels(width: usize, height: usize, levels: Vec<u8>) -> Self {
        assert_eq!(levels.len(), width * height, "importance raster size");
        ImportanceMap {
            width,
            height,
            levels,
        }
    }

    /// Quantizes real weights (clamped to `[0, 1]`) to 8-bit levels.
    pub fn from_weights(width: usize, height: usize, weights: &[f64]) -> Self {
        let levels = weights
            .iter()
            .map(|w| (w.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self::from_levels(width, height, levels)
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn weight_at(&self, x: usize, y: usize) -> f64 {
        self.levels[y * self.width + x] as f64 / 255.0
    }

    /// Weights of a rect in row-major order.
    pub fn rect_weights(&self, rect: Rect) -> Vec<f64> {
        let mut out = Vec::with_capacity(rect.area());
        for y in rect.y..rect.y + rect.h {
            let row = &self.levels[y * self.width + rect.x..y * self.width + rect.x + rect.w];
            out.extend(row.iter().map(|&l| l as f64 / 255.0));
        }
        out
    }

    pub fn full_rect(&self) -> Rect {
        Rect {
            x: 0,
            y: 0,
            w: self.width,
            h: self.height,
        }
    }

    pub fn to_gray(&self) -> Gray8 {
        Gray8 {
            width: self.width,
            height: self.height,
            data: self.levels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    pub width: usize,
    pub height: usize,
    ids: Vec<u8>,
}

impl InstanceMap {
    pub fn background(width: usize, height: usize) -> Self {
        Self::from_ids(width, height, vec![0; width * height])
    }

    pub fn from_ids(width: usize, height: usize, ids: Vec<u8>) -> Self {
        assert_eq!(ids.len(), width * height, "instance raster size");
        InstanceMap { width, height, ids }
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn full_rect(&self) -> Rect {
        Rect {
            x: 0,
            y: 0,
            w: self.width,
            h: self.height,
        }
    }

    pub fn to_gray(&self) -> Gray8 {
        Gray8 {
            width: self.width,
            height: self.height,
            data: self.ids.clone(),
        }
    }
}

/// Importance and instance rasters belonging to one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskMaps {
    pub importance: ImportanceMap,
    pub instances: InstanceMap,
}

impl TaskMaps {
    pub fn empty_for(frame: &LumaFrame) -> Self {
        TaskMaps {
            importance: ImportanceMap::zeros(frame.width, frame.height),
            instances: InstanceMap::background(frame.width, frame.height),
        }
    }

    pub fn matches(&self, frame: &LumaFrame) -> bool {
        self.importance.width == frame.width
            && self.importance.height == frame.height
            && self.instances.width == frame.width
            && self.instances.height == frame.height
    }
}

/// Crop/edge-replicate a map raster to the frame's padded size. The map
/// must cover at least the frame's unpadded area.
fn conform(img: Gray8, frame: &LumaFrame, what: &str) -> Result<Vec<u8>> {
    if img.width < frame.source_width || img.height < frame.source_height {
        return Err(Error::domain(format!(
            "{what} map {}x{} smaller than frame {} ({}x{})",
            img.width, img.height, frame.frame_id, frame.source_width, frame.source_height
        )));
    }
    if img.width == frame.width && img.height == frame.height {
        return Ok(img.data);
    }
    Ok(pad_edge(
        &img.data,
        img.width,
        img.height,
        frame.width,
        frame.height,
    ))
}

/// Loads an importance PGM (weight = value / 255) sized to `frame`.
pub fn load_importance(path: &Path, frame: &LumaFrame) -> Result<ImportanceMap> {
    let img = pgm::read(path)?;
    let levels = conform(img, frame, "importance")?;
    Ok(ImportanceMap::from_levels(
        frame.width,
        frame.height,
        levels,
    ))
}

/// Loads an instance-id PGM (value = id, 0 = background) sized to `frame`.
pub fn load_instances(path: &Path, frame: &LumaFrame) -> Result<InstanceMap> {
    let img = pgm::read(path)?;
    let ids = conform(img, frame, "instance")?;
    Ok(InstanceMap::from_ids(frame.width, frame.height, ids))
}

fn check_rect(rect: Rect, width: usize, height: usize) -> Result<()> {
    if rect.area() == 0 || !rect.fits_in(width, height) {
        return Err(Error::domain(format!(
            "rect {rect:?} outside {width}x{height} map"
        )));
    }
    Ok(())
}

/// Fraction of pixels in `rect` whose weight exceeds `threshold`.
pub fn mask_ratio(map: &ImportanceMap, rect: Rect, threshold: f64) -> Result<f64> {
    check_rect(rect, map.width, map.height)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::domain(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let mut above = 0usize;
    for y in rect.y..rect.y + rect.h {
        let row = &map.levels[y * map.width + rect.x..y * map.width + rect.x + rect.w];
        above += row
            .iter()
            .filter(|&&l| l as f64 / 255.0 > threshold)
            .count();
    }
    Ok(above as f64 / rect.area() as f64)
}

/// Number of distinct nonzero instance ids present in `rect`.
pub fn instance_count(map: &InstanceMap, rect: Rect) -> Result<usize> {
    check_rect(rect, map.width, map.height)?;
    let mut seen = [false; 256];
    for y in rect.y..rect.y + rect.h {
        for &id in &map.ids[y * map.width + rect.x..y * map.width + rect.x + rect.w] {
            seen[id as usize] = true;
        }
    }
    Ok(seen[1..].iter().filter(|&&s| s).count())
}

/// Importance-weighted squared error, normalized by the CTU pixel count:
/// `sum_p w_p (orig_p - recon_p)^2 / 4096`.
pub fn weighted_distortion(orig: &[u8], recon: &[u8], weights: &[f64]) -> f64 {
    assert_eq!(orig.len(), CTU_PIXELS, "orig must be one CTU");
    assert_eq!(recon.len(), CTU_PIXELS, "recon must be one CTU");
    assert_eq!(weights.len(), CTU_PIXELS, "weights must cover one CTU");
    let mut acc = 0.0;
    for ((&o, &r), &w) in orig.iter().zip(recon).zip(weights) {
        let d = o as f64 - r as f64;
        acc += w * d * d;
    }
    acc / CTU_PIXELS as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{CtuGrid, CTU_SIZE};
    use proptest::prelude::*;

    fn ctu_rect() -> Rect {
        CtuGrid::new(1, 1).rect(0)
    }

    #[test]
    fn mask_ratio_basics() {
        let zero = ImportanceMap::zeros(64, 64);
        assert_eq!(mask_ratio(&zero, ctu_rect(), 0.5).unwrap(), 0.0);
        let ones = ImportanceMap::from_levels(64, 64, vec![255; CTU_PIXELS]);
        assert_eq!(mask_ratio(&ones, ctu_rect(), 0.5).unwrap(), 1.0);
        let half: Vec<u8> = (0..CTU_PIXELS)
            .map(|i| if i % CTU_SIZE < 32 { 255 } else { 0 })
            .collect();
        let half = ImportanceMap::from_levels(64, 64, half);
        assert_eq!(mask_ratio(&half, ctu_rect(), 0.5).unwrap(), 0.5);
    }

    #[test]
    fn mask_ratio_errors() {
        let m = ImportanceMap::zeros(64, 64);
        let out = Rect {
            x: 32,
            y: 0,
            w: 64,
            h: 64,
        };
        assert!(mask_ratio(&m, out, 0.5).is_err());
        assert!(mask_ratio(&m, ctu_rect(), 1.5).is_err());
        assert!(instance_count(&InstanceMap::background(64, 64), out).is_err());
    }

    #[test]
    fn instance_counts() {
        let bg = InstanceMap::background(64, 64);
        assert_eq!(instance_count(&bg, ctu_rect()).unwrap(), 0);
        let mut ids = vec![0u8; CTU_PIXELS];
        ids[10] = 3;
        ids[200] = 7;
        ids[300] = 7;
        let m = InstanceMap::from_ids(64, 64, ids.clone());
        assert_eq!(instance_count(&m, ctu_rect()).unwrap(), 2);
        let mut ids = vec![0u8; CTU_PIXELS];
        ids[5] = 5;
        ids[4000] = 5;
        let m = InstanceMap::from_ids(64, 64, ids);
        assert_eq!(instance_count(&m, ctu_rect()).unwrap(), 1);
    }

    #[test]
    fn weighted_distortion_reductions() {
        let orig: Vec<u8> = (0..CTU_PIXELS).map(|i| (i % 200) as u8).collect();
        let recon: Vec<u8> = orig.iter().map(|&v| v.saturating_add(3)).collect();
        assert_eq!(weighted_distortion(&orig, &orig, &[1.0; CTU_PIXELS]), 0.0);
        assert_eq!(weighted_distortion(&orig, &recon, &[0.0; CTU_PIXELS]), 0.0);
        let mse = orig
            .iter()
            .zip(&recon)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            / CTU_PIXELS as f64;
        assert_eq!(weighted_distortion(&orig, &recon, &[1.0; CTU_PIXELS]), mse);
    }

    #[test]
    fn load_conforms_to_padded_frame() {
        let dir = tempfile::tempdir().unwrap();
        let frame = LumaFrame::from_raw("f", 70, 60, vec![0; 70 * 60]).unwrap();
        let path = dir.path().join("imp.pgm");
        let mut data = vec![0u8; 70 * 60];
        data[0] = 128;
        data[69] = 255;
        pgm::write(
            &path,
            &Gray8 {
                width: 70,
                height: 60,
                data,
            },
        )
        .unwrap();
        let m = load_importance(&path, &frame).unwrap();
        assert_eq!((m.width, m.height), (128, 64));
        assert!((m.weight_at(0, 0) - 128.0 / 255.0).abs() < 1e-12);
        assert_eq!(m.weight_at(127, 0), 1.0);

        let small = dir.path().join("small.pgm");
        pgm::write(
            &small,
            &Gray8 {
                width: 10,
                height: 10,
                data: vec![0; 100],
            },
        )
        .unwrap();
        assert!(matches!(
            load_importance(&small, &frame),
            Err(Error::Domain(_))
        ));

        let bad = dir.path().join("bad.pgm");
        std::fs::write(&bad, b"P6\n1 1\n255\n\0\0\0").unwrap();
        assert!(matches!(
            load_instances(&bad, &frame),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn load_extremes() {
        let dir = tempfile::tempdir().unwrap();
        let frame = LumaFrame::from_raw("f", 64, 64, vec![0; CTU_PIXELS]).unwrap();
        for (v, w) in [(0u8, 0.0), (255, 1.0)] {
            let path = dir.path().join(format!("m{v}.pgm"));
            pgm::write(
                &path,
                &Gray8 {
                    width: 64,
                    height: 64,
                    data: vec![v; CTU_PIXELS],
                },
            )
            .unwrap();
            let m = load_importance(&path, &frame).unwrap();
            assert!(m.rect_weights(ctu_rect()).iter().all(|&x| x == w));
        }
    }

    proptest! {
        #[test]
        fn weighted_never_exceeds_mse(
            orig in prop::collection::vec(any::<u8>(), CTU_PIXELS),
            recon in prop::collection::vec(any::<u8>(), CTU_PIXELS),
            levels in prop::collection::vec(any::<u8>(), CTU_PIXELS),
        ) {
            let w: Vec<f64> = levels.iter().map(|&l| l as f64 / 255.0).collect();
            let wd = weighted_distortion(&orig, &recon, &w);
            let mse = weighted_distortion(&orig, &recon, &[1.0; CTU_PIXELS]);
            prop_assert!(wd >= 0.0);
            prop_assert!(wd <= mse + 1e-9);
        }

        #[test]
        fn rect_features_ignore_pixel_order(
            levels in prop::collection::vec(any::<u8>(), CTU_PIXELS),
            ids in prop::collection::vec(0u8..12, CTU_PIXELS),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..CTU_PIXELS).collect();
            perm.shuffle(&mut rng);
            let l2: Vec<u8> = perm.iter().map(|&i| levels[i]).collect();
            let i2: Vec<u8> = perm.iter().map(|&i| ids[i]).collect();
            let a = ImportanceMap::from_levels(64, 64, levels);
            let b = ImportanceMap::from_levels(64, 64, l2);
            prop_assert_eq!(mask_ratio(&a, ctu_rect(), 0.5).unwrap(), mask_ratio(&b, ctu_rect(), 0.5).unwrap());
            let a = InstanceMap::from_ids(64, 64, ids);
            let b = InstanceMap::from_ids(64, 64, i2);
            prop_assert_eq!(instance_count(&a, ctu_rect()).unwrap(), instance_count(&b, ctu_rect()).unwrap());
        }
    }
}
