//! Binary field files and atomic artifact directories.
//!
//! Field file layout, all little-endian:
//! magic `TDFIELD\0` (8 bytes), version `u32`, `n: u32`, `n` axis sizes `u32`, side length `f64`,
//! value count `u64`, then the values as `f64`. The count is a whole multiple of the grid size;
//! several stacked fields share one header.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub const FIELD_MAGIC: [u8; 8] = *b"TDFIELD\0";
pub const FIELD_VERSION: u32 = 1;

/// Encode fields sharing one grid.
pub fn encode_fields(fields: &[Field]) -> Result<Vec<u8>> {
    let first = fields.first().ok_or_else(|| Error::Format("no fields to encode".into()))?;
    let g = first.grid;
    for f in fields {
        g.check_same(&f.grid)?;
    }
    let mut out = Vec::with_capacity(40 + 8 * g.len() * fields.len());
    out.extend_from_slice(&FIELD_MAGIC);
    out.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.n as u32).to_le_bytes());
    for _ in 0..g.n {
        out.extend_from_slice(&(g.points_per_dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&g.side_length.to_le_bytes());
    out.extend_from_slice(&((g.len() * fields.len()) as u64).to_le_bytes());
    for f in fields {
        for v in &f.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(k)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated field file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
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
}

/// Decode every field stored in a buffer.
pub fn decode_fields(bytes: &[u8]) -> Result<Vec<Field>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != FIELD_MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = c.u32()?;
    if version != FIELD_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = c.u32()? as usize;
    if !(1..=3).contains(&n) {
        return Err(Error::Format(format!("unsupported dimension {n}")));
    }
    let dims: Vec<u32> = (0..n).map(|_| c.u32()).collect::<Result<_>>()?;
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(Error::Format("axis sizes must agree".into()));
    }
    let side = c.f64()?;
    let count = c.u64()? as usize;
    let grid = Grid::new(n, dims[0] as usize, side).map_err(|e| Error::Format(e.to_string()))?;
    if count == 0 || count % grid.len() != 0 {
        return Err(Error::Format(format!("count {count} is not a multiple of the grid size {}", grid.len())));
    }
    if bytes.len() - c.pos != 8 * count {
        return Err(Error::Format(format!(
            "expected {} value bytes, found {}",
            8 * count,
            bytes.len() - c.pos
        )));
    }
    let mut out = Vec::with_capacity(count / grid.len());
    for _ in 0..count / grid.len() {
        let values = (0..grid.len()).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        out.push(Field {
            grid,
            values,
            time: None,
        });
    }
    Ok(out)
}

pub fn read_fields(path: &Path) -> Result<Vec<Field>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_fields(&buf)
}

pub fn write_fields(path: &Path, fields: &[Field]) -> Result<()> {
    write_atomic(path, &encode_fields(fields)?)
}

/// Write a file through a sibling temporary and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Artifacts staged in a temporary directory and moved into place on commit.
pub struct ArtifactDir {
    staging: tempfile::TempDir,
    target: PathBuf,
}

impl ArtifactDir {
    pub fn new(target: &Path) -> Result<Self> {
        let parent = target
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let staging = tempfile::Builder::new().prefix(".staging-").tempdir_in(parent)?;
        Ok(Self {
            staging,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.staging.path()
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.staging.path().join(name);
        if let Some(d) = p.parent() {
            fs::create_dir_all(d)?;
        }
        fs::write(p, bytes)?;
        Ok(())
    }

    /// Replace the target directory with the staged contents.
    pub fn commit(self) -> Result<PathBuf> {
        let staged = self.staging.keep();
        if self.target.exists() {
            let old = self.target.with_extension("previous");
            if old.exists() {
                fs::remove_dir_all(&old)?;
            }
            fs::rename(&self.target, &old)?;
            fs::rename(&staged, &self.target)?;
            fs::remove_dir_all(&old)?;
        } else {
            fs::rename(&staged, &self.target)?;
        }
        Ok(self.target)
    }
}

/// Rows of equal length as CSV with a header line.
pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let g = Grid::new(2, 8, 3.0).unwrap();
        let a = Field::from_fn(g, |x| x[0] - 2.0 * x[1]);
        let b = a.scale(-0.5);
        let bytes = encode_fields(&[a.clone(), b.clone()]).unwrap();
        let back = decode_fields(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].values, a.values);
        assert_eq!(back[1].values, b.values);
        assert!(decode_fields(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_fields(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(decode_fields(&bad).is_err());
    }

    #[test]
    fn artifact_dir_replaces_target() {
        let d = tempfile::tempdir().unwrap();
        let target = d.path().join("out");
        let a = ArtifactDir::new(&target).unwrap();
        a.write("x.txt", b"one").unwrap();
        a.commit().unwrap();
        let b = ArtifactDir::new(&target).unwrap();
        b.write("y.txt", b"two").unwrap();
        b.commit().unwrap();
        assert!(!target.join("x.txt").exists());
        assert_eq!(fs::read(target.join("y.txt")).unwrap(), b"two");
    }
}
