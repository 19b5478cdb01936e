//! Binary restart snapshots of the Gaussian path.
//!
//! Layout (little endian): magic `QCYCSNAP`, format version `u32`, model
//! hash as 64 ASCII hex bytes, `dim: u64`, `cycle: u64`, `time: f64`, then
//! `dim` occupations and `dim²` orbital entries as `(re, im)` pairs.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"QCYCSNAP";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub model_hash: String,
    pub dim: usize,
    pub time: f64,
    pub cycle: usize,
    pub occupations: Vec<f64>,
    pub rows: Vec<Complex64>,
}

impl Snapshot {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        if self.model_hash.len() != 64 {
            return Err(Error::Snapshot("model hash must be 64 hex characters".into()));
        }
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_u32::<LittleEndian>(SNAPSHOT_VERSION)?;
        w.write_all(self.model_hash.as_bytes())?;
        w.write_u64::<LittleEndian>(self.dim as u64)?;
        w.write_u64::<LittleEndian>(self.cycle as u64)?;
        w.write_f64::<LittleEndian>(self.time)?;
        for &d in &self.occupations {
            w.write_f64::<LittleEndian>(d)?;
        }
        for z in &self.rows {
            w.write_f64::<LittleEndian>(z.re)?;
            w.write_f64::<LittleEndian>(z.im)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic header".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}, expected {SNAPSHOT_VERSION}")));
        }
        let mut hash = [0u8; 64];
        r.read_exact(&mut hash)?;
        let model_hash = String::from_utf8(hash.to_vec()).map_err(|_| Error::Snapshot("hash is not ASCII".into()))?;
        let dim = r.read_u64::<LittleEndian>()? as usize;
        if dim == 0 || dim > 1 << 16 {
            return Err(Error::Snapshot(format!("implausible dimension {dim}")));
        }
        let cycle = r.read_u64::<LittleEndian>()? as usize;
        let time = r.read_f64::<LittleEndian>()?;
        let occupations = (0..dim).map(|_| r.read_f64::<LittleEndian>()).collect::<std::io::Result<Vec<_>>>()?;
        let mut rows = Vec::with_capacity(dim * dim);
        for _ in 0..dim * dim {
            let re = r.read_f64::<LittleEndian>()?;
            let im = r.read_f64::<LittleEndian>()?;
            rows.push(Complex64::new(re, im));
        }
        Ok(Self { model_hash, dim, time, cycle, occupations, rows })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }
}
