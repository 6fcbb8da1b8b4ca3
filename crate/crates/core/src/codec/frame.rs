use std::path::Path;

use crate::error::{Error, Result};
use crate::pgm::{self, Gray8};

pub const CTU_SIZE: usize = 64;
pub const CTU_PIXELS: usize = CTU_SIZE * CTU_SIZE;

/// An 8-bit luma raster, edge-padded so both dimensions are CTU multiples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LumaFrame {
    pub frame_id: String,
    /// Padded width.
    pub width: usize,
    /// Padded height.
    pub height: usize,
    /// Dimensions before padding.
    pub source_width: usize,
    pub source_height: usize,
    pub samples: Vec<u8>,
}

impl LumaFrame {
    /// Builds a frame from a raw raster, replicating the last column/row out
    /// to the next multiple of [`CTU_SIZE`].
    pub fn from_raw(
        frame_id: impl Into<String>,
        width: usize,
        height: usize,
        samples: Vec<u8>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain("frame dimensions must be positive"));
        }
        if samples.len() != width * height {
            return Err(Error::domain(format!(
                "sample count {} does not match {width}x{height}",
                samples.len()
            )));
        }
        let pw = width.div_ceil(CTU_SIZE) * CTU_SIZE;
        let ph = height.div_ceil(CTU_SIZE) * CTU_SIZE;
        let samples = pad_edge(&samples, width, height, pw, ph);
        Ok(LumaFrame {
            frame_id: frame_id.into(),
            width: pw,
            height: ph,
            source_width: width,
            source_height: height,
            samples,
        })
    }

    /// Reads a P5 PGM; the frame id is the file stem.
    pub fn load_pgm(path: &Path) -> Result<Self> {
        let img = pgm::read(path)?;
        let id = frame_id_from_path(path);
        Self::from_raw(id, img.width, img.height, img.data)
    }

    pub fn grid(&self) -> CtuGrid {
        CtuGrid::new(self.width / CTU_SIZE, self.height / CTU_SIZE)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Copies one CTU out in row-major order.
    pub fn ctu(&self, rect: Rect) -> [u8; CTU_PIXELS] {
        let mut out = [0u8; CTU_PIXELS];
        for (r, row) in out.chunks_exact_mut(CTU_SIZE).enumerate() {
            let start = (rect.y + r) * self.width + rect.x;
            row.copy_from_slice(&self.samples[start..start + CTU_SIZE]);
        }
        out
    }

    /// The unpadded source area.
    pub fn to_gray(&self) -> Gray8 {
        let (w, h) = (self.source_width, self.source_height);
        Gray8 {
            width: w,
            height: h,
            data: self
                .samples
                .chunks_exact(self.width)
                .take(h)
                .flat_map(|row| &row[..w])
                .copied()
                .collect(),
        }
    }
}

pub fn frame_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Crop or edge-replicate a raster to `out_w` x `out_h`.
pub(crate) fn pad_edge(data: &[u8], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let sy = y.min(h - 1);
        let row = &data[sy * w..sy * w + w];
        for x in 0..out_w {
            out.push(row[x.min(w - 1)]);
        }
    }
    out
}

/// Pixel rectangle of one CTU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.x + self.w <= width && self.y + self.h <= height
    }
}

/// CTU partition of a padded frame; indices run in raster order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CtuGrid {
    pub cols: usize,
    pub rows: usize,
}

impl CtuGrid {
    pub fn new(cols: usize, rows: usize) -> Self {
        CtuGrid { cols, rows }
    }

    pub fn ctu_size(&self) -> usize {
        CTU_SIZE
    }

    pub fn total(&self) -> usize {
        self.cols * self.rows
    }

    pub fn position(&self, index: usize) -> (usize, usize) {
        (index % self.cols, index / self.cols)
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    pub fn rect(&self, index: usize) -> Rect {
        let (c, r) = self.position(index);
        Rect {
            x: c * CTU_SIZE,
            y: r * CTU_SIZE,
            w: CTU_SIZE,
            h: CTU_SIZE,
        }
    }

    /// Neighbor at offset (dc, dr), or `None` outside the grid.
    pub fn neighbor(&self, index: usize, dc: isize, dr: isize) -> Option<usize> {
        let (c, r) = self.position(index);
        let nc = c as isize + dc;
        let nr = r as isize + dr;
        if nc < 0 || nr < 0 || nc >= self.cols as isize || nr >= self.rows as isize {
            None
        } else {
            Some(self.index(nc as usize, nr as usize))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pads_to_ctu_multiple_by_replication() {
        let samples: Vec<u8> = (0..(70 * 65)).map(|i| (i % 251) as u8).collect();
        let f = LumaFrame::from_raw("f", 70, 65, samples.clone()).unwrap();
        assert_eq!((f.width, f.height), (128, 128));
        assert_eq!(f.grid().total(), 4);
        // last source column replicated to the right
        assert_eq!(f.samples[100], samples[69]);
        // last source row replicated downward
        assert_eq!(f.samples[127 * 128 + 3], samples[64 * 70 + 3]);
    }

    #[test]
    fn gray_export_drops_padding() {
        let samples: Vec<u8> = (0..(70 * 65)).map(|i| (i % 251) as u8).collect();
        let g = LumaFrame::from_raw("f", 70, 65, samples.clone()).unwrap().to_gray();
        assert_eq!((g.width, g.height), (70, 65));
        assert_eq!(g.data, samples);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(LumaFrame::from_raw("f", 0, 4, vec![]).is_err());
        assert!(LumaFrame::from_raw("f", 2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn grid_raster_order() {
        let g = CtuGrid::new(9, 9);
        assert_eq!(g.total(), 81);
        assert_eq!(g.position(10), (1, 1));
        assert_eq!(
            g.rect(10),
            Rect {
                x: 64,
                y: 64,
                w: 64,
                h: 64
            }
        );
        assert_eq!(g.neighbor(0, -1, 0), None);
        assert_eq!(g.neighbor(10, 1, -1), Some(2));
        assert_eq!(g.neighbor(8, 1, -1), None);
    }
}
