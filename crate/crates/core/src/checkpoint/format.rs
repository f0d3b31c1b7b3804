//! Per-shard snapshot files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset size field
//!      0    4 magic "CPRS"
//!      4    2 format version
//!      6    1 kind (0 = full, 1 = partial rows)
//!      7    1 reserved, zero
//!      8    4 table id
//!     12    4 shard id
//!     16    8 row count
//!     24    4 dim
//!     28    4 optimizer scalars per row
//!     32    8 logical time (f64 hours)
//!     40    8 sample count
//!     48      records: row id (u64), dim x f32 values, opt scalars x f32
//! ```

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CPRS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotKind {
    Full,
    PartialRows,
}

impl SnapshotKind {
    fn code(self) -> u8 {
        match self {
            SnapshotKind::Full => 0,
            SnapshotKind::PartialRows => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(SnapshotKind::Full),
            1 => Ok(SnapshotKind::PartialRows),
            other => Err(Error::Format(format!("unknown snapshot kind {other}"))),
        }
    }
}

/// One shard's saved rows of one table.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub table: u32,
    pub shard: u32,
    pub kind: SnapshotKind,
    pub logical_time: f64,
    pub sample_count: u64,
    pub dim: u32,
    pub opt_scalars: u32,
    /// Row ids in ascending order.
    pub rows: Vec<u64>,
    /// `rows.len() * dim` values.
    pub values: Vec<f32>,
    /// `rows.len() * opt_scalars` values.
    pub opt: Vec<f32>,
}

impl Snapshot {
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn row_values(&self, i: usize) -> &[f32] {
        let d = self.dim as usize;
        &self.values[i * d..(i + 1) * d]
    }

    pub fn row_opt(&self, i: usize) -> &[f32] {
        let k = self.opt_scalars as usize;
        &self.opt[i * k..(i + 1) * k]
    }

    /// Encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.rows.len() * (8 + 4 * (self.dim + self.opt_scalars) as usize)
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.rows.len();
        if self.values.len() != n * self.dim as usize || self.opt.len() != n * self.opt_scalars as usize {
            return Err(Error::ShapeMismatch(format!(
                "{n} rows with {} values and {} optimizer scalars",
                self.values.len(),
                self.opt.len()
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.check_shape()?;
        let mut buf = Vec::with_capacity(self.encoded_len());
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(self.kind.code());
        buf.push(0);
        buf.extend_from_slice(&self.table.to_le_bytes());
        buf.extend_from_slice(&self.shard.to_le_bytes());
        buf.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.dim.to_le_bytes());
        buf.extend_from_slice(&self.opt_scalars.to_le_bytes());
        buf.extend_from_slice(&self.logical_time.to_le_bytes());
        buf.extend_from_slice(&self.sample_count.to_le_bytes());
        for i in 0..self.rows.len() {
            buf.extend_from_slice(&self.rows[i].to_le_bytes());
            for v in self.row_values(i) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in self.row_opt(i) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Snapshot> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = SnapshotKind::from_code(r.take(1)?[0])?;
        r.take(1)?;
        let table = r.u32()?;
        let shard = r.u32()?;
        let n = r.u64()?;
        let dim = r.u32()?;
        let opt_scalars = r.u32()?;
        let logical_time = f64::from_le_bytes(r.array()?);
        let sample_count = r.u64()?;
        let record = 8 + 4 * (dim as u64 + opt_scalars as u64);
        let expected = n.checked_mul(record).and_then(|b| b.checked_add(HEADER_LEN as u64));
        if expected != Some(bytes.len() as u64) {
            return Err(Error::Format(format!(
                "length {} does not match {n} records of {record} bytes",
                bytes.len()
            )));
        }
        let n = n as usize;
        let mut rows = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n * dim as usize);
        let mut opt = Vec::with_capacity(n * opt_scalars as usize);
        for _ in 0..n {
            rows.push(r.u64()?);
            for _ in 0..dim {
                values.push(f32::from_le_bytes(r.array()?));
            }
            for _ in 0..opt_scalars {
                opt.push(f32::from_le_bytes(r.array()?));
            }
        }
        Ok(Snapshot {
            table,
            shard,
            kind,
            logical_time,
            sample_count,
            dim,
            opt_scalars,
            rows,
            values,
            opt,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("truncated snapshot".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice length"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}
