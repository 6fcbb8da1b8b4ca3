//! The task-driven bit allocation (TBA) cache: per-CTU rate and distortion
//! for every frame of a corpus over the whole QP sweep.
//!
//! On disk a cache is two files: the record table as CSV
//! (`frame_id,ctu_index,qp,bits,bpp,mse,wdist`, reals with 9 significant
//! digits) and a JSON manifest at `<cache>.manifest.json` carrying the
//! frame list, map paths, grid sizes, per-CTU mask ratios and the split.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{CtuTransform, LumaFrame, CTU_PIXELS};
use crate::error::{Error, Result};
use crate::importance::{
    self, mask_ratio, weighted_distortion, InstanceMap, TaskMaps, DEFAULT_MASK_THRESHOLD,
};

pub const ANCHOR_QP: u8 = 22;
pub const QP_LO: u8 = 22;
pub const QP_HI: u8 = 51;
pub const CSV_HEADER: [&str; 7] = ["frame_id", "ctu_index", "qp", "bits", "bpp", "mse", "wdist"];

/// One (frame, CTU, QP) measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TbaRecord {
    pub frame_id: String,
    pub ctu_index: u32,
    pub qp: u8,
    pub bits: u64,
    pub bpp: f64,
    pub mse: f64,
    pub wdist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: String,
    #[serde(default)]
    pub frame_path: Option<PathBuf>,
    #[serde(default)]
    pub importance_path: Option<PathBuf>,
    #[serde(default)]
    pub instance_path: Option<PathBuf>,
    /// Padded dimensions.
    pub width: usize,
    pub height: usize,
    pub cols: usize,
    pub rows: usize,
    /// Per-CTU mask ratio at the default threshold, raster order.
    pub mask_ratios: Vec<f64>,
    #[serde(default)]
    pub split: Option<Split>,
}

impl FrameEntry {
    pub fn n_ctus(&self) -> usize {
        self.cols * self.rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub qp_lo: u8,
    pub qp_hi: u8,
    /// Corpus mean MSE at the anchor QP; the default distortion divisor.
    pub distortion_scale: f64,
    #[serde(default)]
    pub split_seed: Option<u64>,
    pub frames: Vec<FrameEntry>,
}

impl Manifest {
    pub fn n_qps(&self) -> usize {
        (self.qp_hi - self.qp_lo) as usize + 1
    }

    pub fn frame(&self, frame_id: &str) -> Option<&FrameEntry> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn frames_in(&self, split: Split) -> Vec<&FrameEntry> {
        self.frames
            .iter()
            .filter(|f| f.split == Some(split))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TbaCache {
    records: Vec<TbaRecord>,
    manifest: Manifest,
    /// frame_id -> offset of its first record
    offsets: HashMap<String, usize>,
}

impl PartialEq for TbaCache {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.manifest == other.manifest
    }
}

impl TbaCache {
    /// Assembles a cache, checking completeness and canonical order.
    pub fn new(mut records: Vec<TbaRecord>, mut manifest: Manifest) -> Result<Self> {
        manifest.frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
        records.sort_by(|a, b| {
            (&a.frame_id, a.ctu_index, a.qp).cmp(&(&b.frame_id, b.ctu_index, b.qp))
        });
        let nq = manifest.n_qps();
        let mut offsets = HashMap::new();
        let mut at = 0usize;
        for f in &manifest.frames {
            if f.mask_ratios.len() != f.n_ctus() {
                return Err(Error::format(format!(
                    "manifest entry {} has {} mask ratios for {} CTUs",
                    f.frame_id,
                    f.mask_ratios.len(),
                    f.n_ctus()
                )));
            }
            if offsets.insert(f.frame_id.clone(), at).is_some() {
                return Err(Error::format(format!("duplicate frame {}", f.frame_id)));
            }
            for ctu in 0..f.n_ctus() {
                for q in 0..nq {
                    let want_qp = manifest.qp_lo + q as u8;
                    match records.get(at) {
                        Some(r)
                            if r.frame_id == f.frame_id
                                && r.ctu_index as usize == ctu
                                && r.qp == want_qp => {}
                        _ => {
                            return Err(Error::format(format!(
                                "cache incomplete: missing record ({}, {ctu}, {want_qp})",
                                f.frame_id
                            )))
                        }
                    }
                    at += 1;
                }
            }
        }
        if at != records.len() {
            return Err(Error::format(format!(
                "cache has {} records not covered by the manifest",
                records.len() - at
            )));
        }
        Ok(TbaCache {
            records,
            manifest,
            offsets,
        })
    }

    pub fn empty(qp_lo: u8, qp_hi: u8) -> Self {
        TbaCache {
            records: Vec::new(),
            manifest: Manifest {
                qp_lo,
                qp_hi,
                distortion_scale: 1.0,
                split_seed: None,
                frames: Vec::new(),
            },
            offsets: HashMap::new(),
        }
    }

    pub fn records(&self) -> &[TbaRecord] {
        &self.records
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lookup(&self, frame_id: &str, ctu: usize, qp: u8) -> Option<&TbaRecord> {
        let m = &self.manifest;
        if qp < m.qp_lo || qp > m.qp_hi {
            return None;
        }
        let start = *self.offsets.get(frame_id)?;
        let entry = m.frame(frame_id)?;
        if ctu >= entry.n_ctus() {
            return None;
        }
        self.records
            .get(start + ctu * m.n_qps() + (qp - m.qp_lo) as usize)
    }

    /// Like [`lookup`](Self::lookup) but a miss is a configuration error.
    pub fn get(&self, frame_id: &str, ctu: usize, qp: u8) -> Result<&TbaRecord> {
        self.lookup(frame_id, ctu, qp)
            .ok_or_else(|| Error::config(format!("cache miss for ({frame_id}, {ctu}, {qp})")))
    }
}

/// Round to the 9 significant digits the CSV carries, so the in-memory
/// value is exactly what a reload produces.
pub fn canonical(x: f64) -> f64 {
    format_real(x).parse().expect("formatted real parses")
}

fn format_real(x: f64) -> String {
    format!("{x:.8e}")
}

/// A frame with its maps, ready for coding.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub frame: LumaFrame,
    pub maps: TaskMaps,
    pub frame_path: Option<PathBuf>,
    pub importance_path: Option<PathBuf>,
    pub instance_path: Option<PathBuf>,
}

impl FrameInput {
    pub fn in_memory(frame: LumaFrame, maps: TaskMaps) -> Self {
        FrameInput {
            frame,
            maps,
            frame_path: None,
            importance_path: None,
            instance_path: None,
        }
    }
}

pub fn importance_path(maps_dir: &Path, frame_id: &str) -> PathBuf {
    maps_dir.join(format!("{frame_id}.importance.pgm"))
}

pub fn instance_path(maps_dir: &Path, frame_id: &str) -> PathBuf {
    maps_dir.join(format!("{frame_id}.instances.pgm"))
}

/// Loads a frame and its maps from explicit paths. A missing instance map
/// means all background.
pub fn load_frame_input(
    frame_path: &Path,
    importance: &Path,
    instances: Option<&Path>,
) -> Result<FrameInput> {
    let frame = LumaFrame::load_pgm(frame_path)?;
    if !importance.exists() {
        return Err(Error::config(format!(
            "no importance map for frame {} (expected {})",
            frame.frame_id,
            importance.display()
        )));
    }
    let imp = importance::load_importance(importance, &frame)?;
    let inst = match instances {
        Some(p) if p.exists() => importance::load_instances(p, &frame)?,
        _ => InstanceMap::background(frame.width, frame.height),
    };
    Ok(FrameInput {
        maps: TaskMaps {
            importance: imp,
            instances: inst,
        },
        frame_path: Some(frame_path.to_path_buf()),
        importance_path: Some(importance.to_path_buf()),
        instance_path: instances.filter(|p| p.exists()).map(Path::to_path_buf),
        frame,
    })
}

/// Reloads a manifest entry's frame and maps from disk.
pub fn load_entry(entry: &FrameEntry) -> Result<FrameInput> {
    let frame_path = entry.frame_path.as_deref().ok_or_else(|| {
        Error::config(format!(
            "manifest entry {} has no frame path",
            entry.frame_id
        ))
    })?;
    let imp = entry.importance_path.as_deref().ok_or_else(|| {
        Error::config(format!(
            "manifest entry {} has no importance path",
            entry.frame_id
        ))
    })?;
    let input = load_frame_input(frame_path, imp, entry.instance_path.as_deref())?;
    if input.frame.width != entry.width || input.frame.height != entry.height {
        return Err(Error::config(format!(
            "frame {} is {}x{} but the manifest says {}x{}",
            entry.frame_id, input.frame.width, input.frame.height, entry.width, entry.height
        )));
    }
    Ok(input)
}

/// Lists `*.pgm` frames in `corpus_dir` (sorted) with maps from `maps_dir`.
pub fn scan_corpus(corpus_dir: &Path, maps_dir: &Path) -> Result<Vec<FrameInput>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(corpus_dir)
        .map_err(|e| Error::io(corpus_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let id = crate::codec::frame::frame_id_from_path(p);
            let inst = instance_path(maps_dir, &id);
            load_frame_input(p, &importance_path(maps_dir, &id), Some(&inst))
        })
        .collect()
}

/// Builds the cache from files on disk. `jobs = 0` uses all cores.
pub fn build_cache(
    corpus_dir: &Path,
    maps_dir: &Path,
    qp_lo: u8,
    qp_hi: u8,
    jobs: usize,
) -> Result<TbaCache> {
    let inputs = scan_corpus(corpus_dir, maps_dir)?;
    build_cache_from(&inputs, qp_lo, qp_hi, jobs)
}

/// Per-CTU records for one frame over `qp_lo..=qp_hi`.
pub fn frame_records(input: &FrameInput, qp_lo: u8, qp_hi: u8) -> Result<Vec<TbaRecord>> {
    let FrameInput { frame, maps, .. } = input;
    if !maps.matches(frame) {
        return Err(Error::domain(format!(
            "maps for {} do not match its padded size",
            frame.frame_id
        )));
    }
    let grid = frame.grid();
    let mut out = Vec::with_capacity(grid.total() * (qp_hi - qp_lo + 1) as usize);
    for ctu in 0..grid.total() {
        let rect = grid.rect(ctu);
        let t = CtuTransform::new(&frame.ctu(rect))?;
        let weights = maps.importance.rect_weights(rect);
        for qp in qp_lo..=qp_hi {
            let c = t.encode(qp)?;
            let wdist = weighted_distortion(t.source(), &c.recon, &weights);
            out.push(TbaRecord {
                frame_id: frame.frame_id.clone(),
                ctu_index: ctu as u32,
                qp,
                bits: c.bits,
                bpp: c.bpp,
                mse: canonical(c.mse),
                wdist: canonical(wdist),
            });
        }
    }
    Ok(out)
}

fn entry_for(input: &FrameInput) -> Result<FrameEntry> {
    let grid = input.frame.grid();
    let mask_ratios = (0..grid.total())
        .map(|i| mask_ratio(&input.maps.importance, grid.rect(i), DEFAULT_MASK_THRESHOLD))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameEntry {
        frame_id: input.frame.frame_id.clone(),
        frame_path: input.frame_path.clone(),
        importance_path: input.importance_path.clone(),
        instance_path: input.instance_path.clone(),
        width: input.frame.width,
        height: input.frame.height,
        cols: grid.cols,
        rows: grid.rows,
        mask_ratios,
        split: None,
    })
}

/// Builds the cache from frames already in memory.
pub fn build_cache_from(
    inputs: &[FrameInput],
    qp_lo: u8,
    qp_hi: u8,
    jobs: usize,
) -> Result<TbaCache> {
    if qp_lo > qp_hi || !(qp_lo..=qp_hi).contains(&ANCHOR_QP) || qp_hi > crate::codec::QP_MAX {
        return Err(Error::domain(format!(
            "qp range {qp_lo}..={qp_hi} must be ordered, within 1..=51 and contain the anchor {ANCHOR_QP}"
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let per_frame: Vec<Vec<TbaRecord>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|input| frame_records(input, qp_lo, qp_hi))
            .collect::<Result<Vec<_>>>()
    })?;
    let frames = inputs.iter().map(entry_for).collect::<Result<Vec<_>>>()?;

    let anchor: Vec<f64> = per_frame
        .iter()
        .flatten()
        .filter(|r| r.qp == ANCHOR_QP)
        .map(|r| r.mse)
        .collect();
    let mean = anchor.iter().sum::<f64>() / anchor.len().max(1) as f64;
    let distortion_scale = if mean > 0.0 { canonical(mean) } else { 1.0 };

    TbaCache::new(
        per_frame.into_iter().flatten().collect(),
        Manifest {
            qp_lo,
            qp_hi,
            distortion_scale,
            split_seed: None,
            frames,
        },
    )
}

/// Seeded frame-level train/test split: the first `floor(ratio * n)`
/// frames of a shuffled, id-sorted list train.
pub fn split(mut cache: TbaCache, ratio: f64, seed: u64) -> Result<TbaCache> {
    let n = cache.manifest.frames.len();
    if n < 2 {
        return Err(Error::domain(format!(
            "cannot split {n} frame(s); need at least 2"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::domain(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut ids: Vec<String> = cache
        .manifest
        .frames
        .iter()
        .map(|f| f.frame_id.clone())
        .collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = (ratio * n as f64 + 1e-9).floor() as usize;
    let assignment: HashMap<&str, Split> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            (
                id.as_str(),
                if i < n_train {
                    Split::Train
                } else {
                    Split::Test
                },
            )
        })
        .collect();
    for f in &mut cache.manifest.frames {
        f.split = Some(assignment[f.frame_id.as_str()]);
    }
    cache.manifest.split_seed = Some(seed);
    Ok(cache)
}

#[derive(Debug, Deserialize)]
struct DistortionRow {
    frame_id: String,
    qp: u8,
    distortion: f64,
}

/// Replaces `wdist` with externally measured frame-level task distortion,
/// apportioned to CTUs by their share of `mask_ratio * mse` at that QP
/// (uniformly when every share is zero).
pub fn ingest_task_distortion(cache: TbaCache, path: &Path) -> Result<TbaCache> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for row in rdr.deserialize::<DistortionRow>() {
        rows.push(row.map_err(|e| Error::format(format!("{}: {e}", path.display())))?);
    }
    apply_task_distortion(
        cache,
        rows.iter()
            .map(|r| (r.frame_id.as_str(), r.qp, r.distortion)),
    )
}

pub fn apply_task_distortion<'a>(
    mut cache: TbaCache,
    rows: impl IntoIterator<Item = (&'a str, u8, f64)>,
) -> Result<TbaCache> {
    let nq = cache.manifest.n_qps();
    for (frame_id, qp, distortion) in rows {
        if distortion.is_nan() || distortion < 0.0 {
            return Err(Error::domain(format!(
                "negative task distortion {distortion} for ({frame_id}, {qp})"
            )));
        }
        let entry = cache
            .manifest
            .frame(frame_id)
            .ok_or_else(|| Error::config(format!("unknown frame_id {frame_id}")))?
            .clone();
        if qp < cache.manifest.qp_lo || qp > cache.manifest.qp_hi {
            return Err(Error::config(format!(
                "qp {qp} for {frame_id} outside the cache's sweep"
            )));
        }
        let start = cache.offsets[frame_id];
        let q = (qp - cache.manifest.qp_lo) as usize;
        let idx = |ctu: usize| start + ctu * nq + q;
        let shares: Vec<f64> = (0..entry.n_ctus())
            .map(|c| entry.mask_ratios[c] * cache.records[idx(c)].mse)
            .collect();
        let total: f64 = shares.iter().sum();
        let n = entry.n_ctus() as f64;
        for (c, share) in shares.iter().enumerate() {
            let part = if total > 0.0 { share / total } else { 1.0 / n };
            cache.records[idx(c)].wdist = canonical(distortion * part);
        }
    }
    Ok(cache)
}

pub fn manifest_path(cache_path: &Path) -> PathBuf {
    let mut s = cache_path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn cache_dir(cache_path: &Path) -> Result<PathBuf> {
    let abs = std::path::absolute(cache_path).map_err(|e| Error::io(cache_path, e))?;
    Ok(abs.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn normalize(p: &Path) -> Vec<std::path::Component<'_>> {
    use std::path::Component;
    let mut out: Vec<Component<'_>> = Vec::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir if matches!(out.last(), Some(Component::Normal(_))) => {
                out.pop();
            }
            c => out.push(c),
        }
    }
    out
}

/// `path` expressed relative to the absolute directory `base`.
fn relative_to(path: &Path, base: &Path) -> Result<PathBuf> {
    let abs = std::path::absolute(path).map_err(|e| Error::io(path, e))?;
    let (a, b) = (normalize(&abs), normalize(base));
    if a.first() != b.first() {
        return Ok(abs);
    }
    let common = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut rel = PathBuf::new();
    for _ in common..b.len() {
        rel.push("..");
    }
    for c in &a[common..] {
        rel.push(c.as_os_str());
    }
    Ok(rel)
}

/// Writes the CSV table and its manifest, each atomically. Frame and map
/// paths are stored relative to the cache's directory.
pub fn save_cache(cache: &TbaCache, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(CSV_HEADER)?;
        for r in &cache.records {
            wtr.write_record([
                r.frame_id.clone(),
                r.ctu_index.to_string(),
                r.qp.to_string(),
                r.bits.to_string(),
                format_real(r.bpp),
                format_real(r.mse),
                format_real(r.wdist),
            ])?;
        }
        wtr.flush()
    })?;
    let base = cache_dir(path)?;
    let mut manifest = cache.manifest.clone();
    for f in &mut manifest.frames {
        for p in [
            &mut f.frame_path,
            &mut f.importance_path,
            &mut f.instance_path,
        ]
        .into_iter()
        .flatten()
        {
            *p = relative_to(p, &base)?;
        }
    }
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::format(format!("manifest: {e}")))?;
    crate::io::write_string_atomic(&manifest_path(path), &(json + "\n"))
}

#[derive(Debug, Deserialize)]
struct CsvRecord {
    frame_id: String,
    ctu_index: u32,
    qp: u8,
    bits: u64,
    bpp: f64,
    mse: f64,
    wdist: f64,
}

pub fn load_cache(path: &Path) -> Result<TbaCache> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", mpath.display())))?;
    let base = cache_dir(path)?;
    for f in &mut manifest.frames {
        for p in [
            &mut f.frame_path,
            &mut f.importance_path,
            &mut f.instance_path,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
    let header = rdr
        .headers()
        .map_err(|e| Error::format(format!("{}: line 1: {e}", path.display())))?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::format(format!(
            "{}: line 1: expected header {}",
            path.display(),
            CSV_HEADER.join(",")
        )));
    }
    let mut records = Vec::new();
    for row in rdr.deserialize::<CsvRecord>() {
        let r = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::format(format!("{}: line {line}: {e}", path.display()))
        })?;
        let bpp = r.bits as f64 / CTU_PIXELS as f64;
        if (canonical(bpp) - r.bpp).abs() > 0.0 {
            return Err(Error::format(format!(
                "{}: record ({}, {}, {}) has bpp {} but bits/4096 = {bpp}",
                path.display(),
                r.frame_id,
                r.ctu_index,
                r.qp,
                r.bpp
            )));
        }
        records.push(TbaRecord {
            frame_id: r.frame_id,
            ctu_index: r.ctu_index,
            qp: r.qp,
            bits: r.bits,
            bpp,
            mse: r.mse,
            wdist: r.wdist,
        });
    }
    TbaCache::new(records, manifest)
}
