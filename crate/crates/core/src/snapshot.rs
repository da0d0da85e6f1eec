//! Binary field snapshots and CSV profile export.
//!
//! Layout, all little-endian: magic `BFLD`, `u32` format version, `u32 nx`,
//! `u32 nz`, `f64` aspect, `f64` time, then `nx * nz` `f64` values in
//! row-major `[i, k]` order.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

pub const MAGIC: &[u8; 4] = b"BFLD";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub grid: Grid,
    pub time: f64,
    pub values: Array2<f64>,
}

impl Snapshot {
    pub fn new(grid: Grid, time: f64, values: Array2<f64>) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::GridMismatch);
        }
        Ok(Snapshot { grid, time, values })
    }

    pub fn of_field(field: &ScalarField, time: f64) -> Self {
        Snapshot {
            grid: field.grid,
            time,
            values: field.values.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.grid.nx as u32).to_le_bytes());
        out.extend_from_slice(&(self.grid.nz as u32).to_le_bytes());
        out.extend_from_slice(&self.grid.aspect.to_le_bytes());
        out.extend_from_slice(&self.time.to_le_bytes());
        for v in self.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corrupt(format!("snapshot of {} bytes has no complete header", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Corrupt("bad snapshot magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (nx, nz) = (u32_at(8) as usize, u32_at(12) as usize);
        let grid = Grid::new(nx, nz, f64_at(16)).map_err(|e| Error::Corrupt(format!("snapshot header: {e}")))?;
        let time = f64_at(24);
        let expected = HEADER_LEN + 8 * nx * nz;
        if bytes.len() != expected {
            return Err(Error::Corrupt(format!(
                "snapshot of {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let values = Array2::from_shape_vec((nx, nz), values).expect("length checked");
        Ok(Snapshot { grid, time, values })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Horizontal-mean profile as CSV with columns `x2,value`.
pub fn profile_csv(field: &ScalarField, header: &str) -> String {
    let mut out = String::from(header);
    out.push_str("x2,value\n");
    for (k, v) in field.horizontal_mean().iter().enumerate() {
        out.push_str(&format!("{},{}\n", field.grid.x2(k), v));
    }
    out
}
