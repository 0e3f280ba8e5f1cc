//! On-disk formats: VRT1 trajectories, LTN1 latent tables and plain-text
//! manifests. All integers and floats are little-endian. Writers go through
//! a temporary file in the destination directory followed by a rename, so a
//! reader never observes a partial file.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::field::{Grid, VorticityField};
use crate::repr::{FrameKey, LatentTable, PcaModel};
use crate::spectral::{SolverConfig, Trajectory};

pub const VRT1_MAGIC: [u8; 4] = *b"VRT1";
pub const LTN1_MAGIC: [u8; 4] = *b"LTN1";
pub const PCA1_MAGIC: [u8; 4] = *b"PCA1";
const VRT1_HEADER_LEN: u64 = 4 + 4 * 3 + 8 * 3 + 4 + 8;
const LTN1_HEADER_LEN: u64 = 4 + 4 + 8;
const PCA1_HEADER_LEN: u64 = 4 + 4 + 4 + 4 + 8 + 8;

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        let file = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Bounds-checked little-endian reader over a byte buffer.
struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
    expected_total: u64,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: self.expected_total.max((self.pos + n) as u64),
                found: self.bytes.len() as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn check_magic(path: &Path, bytes: &[u8], expected: [u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    let n = bytes.len().min(4);
    found[..n].copy_from_slice(&bytes[..n]);
    if n < 4 || found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Serialises a trajectory to VRT1 bytes. Frame values are stored as `f32`.
pub fn encode_trajectory(traj: &Trajectory) -> Vec<u8> {
    let cfg = &traj.config;
    let grid = cfg.grid;
    let mut out = Vec::with_capacity(VRT1_HEADER_LEN as usize + traj.frames.len() * grid.len() * 4);
    out.extend_from_slice(&VRT1_MAGIC);
    out.extend_from_slice(&(grid.nx as u32).to_le_bytes());
    out.extend_from_slice(&(grid.ny as u32).to_le_bytes());
    out.extend_from_slice(&(traj.frames.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg.nu.to_le_bytes());
    out.extend_from_slice(&cfg.record_interval.to_le_bytes());
    out.extend_from_slice(&cfg.forcing_amplitude.to_le_bytes());
    out.extend_from_slice(&cfg.k_f.to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    for frame in &traj.frames {
        for &v in frame.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_atomic(path, &encode_trajectory(traj))
}

/// Reads a VRT1 file. Solver fields absent from the header (dt, spinup,
/// initial-condition spectrum) take their defaults.
pub fn read_trajectory(path: &Path, trajectory_id: u32) -> Result<Trajectory> {
    let bytes = read_all(path)?;
    decode_trajectory(path, &bytes, trajectory_id)
}

pub fn decode_trajectory(path: &Path, bytes: &[u8], trajectory_id: u32) -> Result<Trajectory> {
    check_magic(path, bytes, VRT1_MAGIC)?;
    let mut cur = Cursor {
        path,
        bytes,
        pos: 4,
        expected_total: VRT1_HEADER_LEN,
    };
    let nx = cur.u32()? as usize;
    let ny = cur.u32()? as usize;
    let n_frames = cur.u32()? as usize;
    let nu = cur.f64()?;
    let record_interval = cur.f64()?;
    let forcing_amplitude = cur.f64()?;
    let k_f = cur.u32()?;
    let seed = cur.u64()?;

    let grid = Grid::new(nx, ny).map_err(|e| Error::InvalidHeader {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if n_frames == 0 {
        return Err(Error::InvalidHeader {
            path: path.to_path_buf(),
            reason: "zero frames".into(),
        });
    }
    let payload = (n_frames as u64) * (grid.len() as u64) * 4;
    let expected_total = VRT1_HEADER_LEN + payload;
    if (bytes.len() as u64) < expected_total {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected_total,
            found: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected_total {
        return Err(Error::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() as u64 - expected_total),
        });
    }
    cur.expected_total = expected_total;

    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            values.push(cur.f32()? as f64);
        }
        frames.push(VorticityField::from_values(grid, values)?);
    }
    let config = SolverConfig {
        grid,
        nu,
        k_f,
        forcing_amplitude,
        record_interval,
        seed,
        ..SolverConfig::default()
    };
    Ok(Trajectory {
        frames,
        config,
        trajectory_id,
    })
}

/// Serialises latents to LTN1, entries in key order. Values are stored as `f32`.
pub fn encode_latents(table: &LatentTable) -> Vec<u8> {
    let entries = table.sorted();
    let mut out = Vec::with_capacity(LTN1_HEADER_LEN as usize + entries.len() * (8 + 4 * table.dim()));
    out.extend_from_slice(&LTN1_MAGIC);
    out.extend_from_slice(&(table.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (key, v) in entries {
        out.extend_from_slice(&key.trajectory_id.to_le_bytes());
        out.extend_from_slice(&key.frame_id.to_le_bytes());
        for &x in v {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_latents(path: &Path, table: &LatentTable) -> Result<()> {
    write_atomic(path, &encode_latents(table))
}

pub fn read_latents(path: &Path) -> Result<LatentTable> {
    let bytes = read_all(path)?;
    decode_latents(path, &bytes)
}

pub fn decode_latents(path: &Path, bytes: &[u8]) -> Result<LatentTable> {
    check_magic(path, bytes, LTN1_MAGIC)?;
    let mut cur = Cursor {
        path,
        bytes,
        pos: 4,
        expected_total: LTN1_HEADER_LEN,
    };
    let dim = cur.u32()? as usize;
    let n_entries = cur.u64()?;
    if dim == 0 {
        return Err(Error::InvalidHeader {
            path: path.to_path_buf(),
            reason: "zero latent dimension".into(),
        });
    }
    let record = 8 + 4 * dim as u64;
    let expected_total = n_entries
        .checked_mul(record)
        .and_then(|p| p.checked_add(LTN1_HEADER_LEN))
        .ok_or_else(|| Error::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("entry count {n_entries} overflows"),
        })?;
    if (bytes.len() as u64) < expected_total {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected_total,
            found: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected_total {
        return Err(Error::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() as u64 - expected_total),
        });
    }
    cur.expected_total = expected_total;

    let mut table = LatentTable::new(dim);
    for _ in 0..n_entries {
        let key = FrameKey::new(cur.u32()?, cur.u32()?);
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(cur.f32()? as f64);
        }
        if !table.insert(key, v)? {
            return Err(Error::DuplicateKey {
                path: path.to_path_buf(),
                trajectory_id: key.trajectory_id,
                frame_id: key.frame_id,
            });
        }
    }
    Ok(table)
}

/// Serialises a PCA model. Layout: magic `PCA1`, u32 dim, u32 n_components,
/// u32 rank, u64 n_samples, f64 total_variance, then f64 mean (dim),
/// explained variance (n_components) and components (n_components x dim).
pub fn encode_pca(model: &PcaModel) -> Vec<u8> {
    let (dim, n) = (model.dim(), model.n_components());
    let mut out = Vec::with_capacity(PCA1_HEADER_LEN as usize + 8 * (dim + n + n * dim));
    out.extend_from_slice(&PCA1_MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(model.rank as u32).to_le_bytes());
    out.extend_from_slice(&(model.n_samples as u64).to_le_bytes());
    out.extend_from_slice(&model.total_variance.to_le_bytes());
    let body = model
        .mean
        .iter()
        .chain(&model.explained_variance)
        .chain(model.components.iter().flatten());
    for v in body {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_pca(path: &Path, model: &PcaModel) -> Result<()> {
    write_atomic(path, &encode_pca(model))
}

pub fn read_pca(path: &Path) -> Result<PcaModel> {
    let bytes = read_all(path)?;
    decode_pca(path, &bytes)
}

pub fn decode_pca(path: &Path, bytes: &[u8]) -> Result<PcaModel> {
    check_magic(path, bytes, PCA1_MAGIC)?;
    let mut cur = Cursor {
        path,
        bytes,
        pos: 4,
        expected_total: PCA1_HEADER_LEN,
    };
    let dim = cur.u32()? as usize;
    let n = cur.u32()? as usize;
    let rank = cur.u32()? as usize;
    let n_samples = cur.u64()? as usize;
    let total_variance = cur.f64()?;
    if dim == 0 || n == 0 || n > dim || rank > n {
        return Err(Error::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("dim {dim}, {n} components, rank {rank}"),
        });
    }
    let expected_total = PCA1_HEADER_LEN + 8 * (dim + n + n * dim) as u64;
    if bytes.len() as u64 != expected_total {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected_total,
            found: bytes.len() as u64,
        });
    }
    cur.expected_total = expected_total;
    let mut read = |k: usize| (0..k).map(|_| cur.f64()).collect::<Result<Vec<f64>>>();
    let mean = read(dim)?;
    let explained_variance = read(n)?;
    let components = (0..n).map(|_| read(dim)).collect::<Result<Vec<_>>>()?;
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
        rank,
        n_samples,
    })
}

/// One manifest line: `trajectory_id<TAB>seed<TAB>path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub trajectory_id: u32,
    pub seed: u64,
    pub path: PathBuf,
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.trajectory_id, e.seed, e.path.display()));
    }
    out
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    write_atomic(path, format_manifest(entries).as_bytes())
}

/// Reads a manifest. Relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = String::from_utf8(read_all(path)?).map_err(|_| Error::InvalidHeader {
        path: path.to_path_buf(),
        reason: "manifest is not UTF-8".into(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("line {}: {reason}", lineno + 1),
        };
        let mut parts = line.splitn(3, '\t');
        let id = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("trajectory id"))?;
        let seed = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("seed"))?;
        let p = parts.next().ok_or_else(|| bad("path"))?;
        let p = PathBuf::from(p);
        let p = if p.is_relative() { base.join(p) } else { p };
        out.push(ManifestEntry {
            trajectory_id: id,
            seed,
            path: p,
        });
    }
    Ok(out)
}

/// Loads every trajectory listed in a manifest, in manifest order.
pub fn read_dataset(manifest: &Path) -> Result<Vec<Trajectory>> {
    read_manifest(manifest)?
        .iter()
        .map(|e| read_trajectory(&e.path, e.trajectory_id))
        .collect()
}
