//! Table snapshots and voxel partitions for external tooling.
//!
//! Binary table dump, little endian throughout:
//!
//! | bytes | field |
//! |-------|-------|
//! | 8 | magic `HPSFTBL1` |
//! | 8 | capacity (slots) |
//! | 4 | probe limit |
//! | 4 | frame |
//! | 1 | sum mode: 0 fixed point, 1 float |
//! | 1 | 1 if cell keys follow each record |
//! | 2 | zero |
//! | 8 | number of records |
//!
//! then one record per occupied slot, ascending:
//!
//! | bytes | field |
//! |-------|-------|
//! | 8 | slot |
//! | 8 | tag word |
//! | 24 | raw sums r, g, b |
//! | 4 | count |
//! | 4 | last frame touched |
//! | 24 | raw previous-generation sums |
//! | 8 | previous count, `2^-16` units |
//! | 8 | carried change metric, f64 bits |
//! | 17 | key `qx qy qz` (i32), level (u8), aux (u32), only with keys |
//!
//! Raw sums are `2^-16` fixed point or f64 bits depending on the sum mode.

use std::fmt::Write as _;
use std::path::Path;

use hpsf_core::oracle::VoxelPartition;
use hpsf_core::table::History;
use hpsf_core::{CellKey, HashTable, SumMode};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HPSFTBL1";

#[derive(Debug, Clone, PartialEq)]
pub struct DumpCell {
    pub slot: u64,
    pub tag: u64,
    pub sum: [u64; 3],
    pub count: u32,
    pub last_touch: u32,
    pub prev: History,
    pub delta: f64,
    pub key: Option<CellKey>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableDump {
    pub capacity: u64,
    pub probe_limit: u32,
    pub frame: u32,
    pub sum_mode: SumMode,
    pub cells: Vec<DumpCell>,
}

impl TableDump {
    pub fn of(table: &HashTable) -> Self {
        let cells = table
            .occupied_slots()
            .map(|slot| {
                let view = table.cell(slot);
                DumpCell {
                    slot: slot as u64,
                    tag: view.tag,
                    sum: table.raw_sum(slot),
                    count: view.count,
                    last_touch: view.last_touch,
                    prev: table.raw_history(slot),
                    delta: view.delta,
                    key: view.key,
                }
            })
            .collect();
        Self {
            capacity: table.capacity() as u64,
            probe_limit: table.probe_limit(),
            frame: table.frame(),
            sum_mode: table.sum_mode(),
            cells,
        }
    }

    pub fn has_keys(&self) -> bool {
        self.cells.first().is_some_and(|c| c.key.is_some())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let keys = self.has_keys();
        let mut b = Vec::with_capacity(40 + self.cells.len() * 113);
        b.extend_from_slice(MAGIC);
        b.extend(self.capacity.to_le_bytes());
        b.extend(self.probe_limit.to_le_bytes());
        b.extend(self.frame.to_le_bytes());
        b.push(match self.sum_mode {
            SumMode::Fixed => 0,
            SumMode::Float => 1,
        });
        b.push(keys as u8);
        b.extend([0, 0]);
        b.extend((self.cells.len() as u64).to_le_bytes());
        for c in &self.cells {
            b.extend(c.slot.to_le_bytes());
            b.extend(c.tag.to_le_bytes());
            c.sum.iter().for_each(|s| b.extend(s.to_le_bytes()));
            b.extend(c.count.to_le_bytes());
            b.extend(c.last_touch.to_le_bytes());
            c.prev.sum.iter().for_each(|s| b.extend(s.to_le_bytes()));
            b.extend(c.prev.count.to_le_bytes());
            b.extend(c.delta.to_bits().to_le_bytes());
            if keys {
                let k = c.key.unwrap_or_default();
                b.extend(k.qx.to_le_bytes());
                b.extend(k.qy.to_le_bytes());
                b.extend(k.qz.to_le_bytes());
                b.push(k.level);
                b.extend(k.aux.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a table dump".into()));
        }
        let capacity = r.u64()?;
        let probe_limit = r.u32()?;
        let frame = r.u32()?;
        let sum_mode = match r.take(1)?[0] {
            0 => SumMode::Fixed,
            1 => SumMode::Float,
            m => return Err(Error::Format(format!("unknown sum mode {m}"))),
        };
        let keys = r.take(1)?[0] != 0;
        r.take(2)?;
        let n = r.u64()?;
        let mut cells = Vec::new();
        for _ in 0..n {
            let slot = r.u64()?;
            let tag = r.u64()?;
            let sum = [r.u64()?, r.u64()?, r.u64()?];
            let count = r.u32()?;
            let last_touch = r.u32()?;
            let prev = History {
                sum: [r.u64()?, r.u64()?, r.u64()?],
                count: r.u64()?,
            };
            let delta = f64::from_bits(r.u64()?);
            let key = if keys {
                Some(CellKey {
                    qx: r.u32()? as i32,
                    qy: r.u32()? as i32,
                    qz: r.u32()? as i32,
                    level: r.take(1)?[0],
                    aux: r.u32()?,
                })
            } else {
                None
            };
            cells.push(DumpCell {
                slot,
                tag,
                sum,
                count,
                last_touch,
                prev,
                delta,
                key,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after the last record".into()));
        }
        Ok(Self {
            capacity,
            probe_limit,
            frame,
            sum_mode,
            cells,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// `slot,fingerprint,count,sum_r,sum_g,sum_b` with decoded sums.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slot,fingerprint,count,sum_r,sum_g,sum_b\n");
        for c in &self.cells {
            let s = c.sum.map(|v| self.sum_mode.decode(v));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.slot,
                c.tag as u32,
                c.count,
                s[0],
                s[1],
                s[2]
            );
        }
        out
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("table dump is truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// `qx,qy,qz,level,aux,count,sum_r,sum_g,sum_b`, one row per voxel in key
/// order.
pub fn partition_csv(p: &VoxelPartition) -> String {
    let mut out = String::from("qx,qy,qz,level,aux,count,sum_r,sum_g,sum_b\n");
    for (k, e) in &p.voxels {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            k.qx, k.qy, k.qz, k.level, k.aux, e.count, e.sum.r, e.sum.g, e.sum.b
        );
    }
    out
}
