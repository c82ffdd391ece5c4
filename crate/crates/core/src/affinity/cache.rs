//! Binary cache for [`SparseAffinities`].
//!
//! Layout, all little-endian: `u64` row count, then per row a `u64` entry
//! count, that many `u64` column indices, and that many `f64` values.
//! Files are named by [`cache_key`], a digest of the dataset values and the
//! perplexity.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{build_affinities, SparseAffinities};
use crate::data::Dataset;
use crate::error::{Error, Result};

pub fn cache_key(data: &Dataset, perplexity: f64) -> String {
    let mut h = Sha256::new();
    h.update((data.n() as u64).to_le_bytes());
    h.update((data.d() as u64).to_le_bytes());
    for v in data.as_slice() {
        h.update(v.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    let hex: String = digest[..16].iter().map(|b| format!("{b:02x}")).collect();
    format!("{hex}-p{}.aff", perplexity.to_bits())
}

pub fn write_affinities<W: Write>(p: &SparseAffinities, out: &mut W) -> std::io::Result<()> {
    out.write_all(&(p.n() as u64).to_le_bytes())?;
    for i in 0..p.n() {
        let (cols, vals) = p.row(i);
        out.write_all(&(cols.len() as u64).to_le_bytes())?;
        for &j in cols {
            out.write_all(&(j as u64).to_le_bytes())?;
        }
        for &v in vals {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_affinities<R: Read>(r: &mut R) -> Result<SparseAffinities> {
    let io = |e: std::io::Error| Error::invalid(format!("truncated affinity cache: {e}"));
    let n = read_u64(r).map_err(io)? as usize;
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for _ in 0..n {
        let count = read_u64(r).map_err(io)? as usize;
        if count >= n.max(1) {
            return Err(Error::invalid(format!("corrupt affinity cache: row of {count} entries")));
        }
        for _ in 0..count {
            let j = read_u64(r).map_err(io)?;
            cols.push(u32::try_from(j).map_err(|_| Error::invalid("column index overflow"))?);
        }
        for _ in 0..count {
            vals.push(f64::from_bits(read_u64(r).map_err(io)?));
        }
        row_ptr.push(cols.len());
    }
    SparseAffinities::from_csr(row_ptr, cols, vals)
}

pub fn save(p: &SparseAffinities, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_affinities(p, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SparseAffinities> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_affinities(&mut BufReader::new(file))
}

/// Loads from `dir` when a matching cache file exists, otherwise builds and
/// stores it. Returns the affinities and the cache file path.
pub fn build_cached(data: &Dataset, perplexity: f64, dir: &Path) -> Result<(SparseAffinities, PathBuf)> {
    let path = dir.join(cache_key(data, perplexity));
    if path.exists() {
        match load(&path) {
            Ok(p) if p.n() == data.n() => return Ok((p, path)),
            Ok(_) | Err(_) => log::warn!("ignoring unusable affinity cache {}", path.display()),
        }
    }
    let p = build_affinities(data, perplexity)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save(&p, &path)?;
    Ok((p, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn round_trip_and_layout() {
        let data = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + 0.1 * i as f64);
        let ds = Dataset::from_matrix(data).unwrap();
        let p = build_affinities(&ds, 5.0).unwrap();
        let mut buf = Vec::new();
        write_affinities(&p, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 * 40 + 16 * p.nnz());
        assert_eq!(&buf[..8], &40u64.to_le_bytes());
        let back = read_affinities(&mut buf.as_slice()).unwrap();
        assert_eq!(back.parts(), p.parts());
        assert!(read_affinities(&mut &buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn cached_build_reuses_file() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array2::from_shape_fn((30, 2), |(i, j)| (i as f64).sin() * (j as f64 + 1.0));
        let ds = Dataset::from_matrix(data).unwrap();
        let (a, path) = build_cached(&ds, 4.0, dir.path()).unwrap();
        assert!(path.exists());
        let (b, path2) = build_cached(&ds, 4.0, dir.path()).unwrap();
        assert_eq!(path, path2);
        assert_eq!(a.parts(), b.parts());
        assert_ne!(cache_key(&ds, 4.0), cache_key(&ds, 5.0));
    }
}
