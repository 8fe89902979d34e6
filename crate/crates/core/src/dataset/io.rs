//! fvecs / bvecs / ivecs containers.
//!
//! Every record is a little-endian `i32` length followed by that many
//! values (`f32` for fvecs, `u8` for bvecs, `i32` for ivecs).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ElemType, Metric, VectorData, VectorDataset};
use crate::{Error, Result};

fn read_i32(bytes: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Loads an fvecs (`F32`) or bvecs (`U8`) file.
pub fn load_vectors(path: impl AsRef<Path>, elem: ElemType, metric: Metric) -> Result<VectorDataset> {
    let bytes = fs::read(path.as_ref())?;
    parse_vectors(&bytes, elem, metric)
}

pub(crate) fn parse_vectors(bytes: &[u8], elem: ElemType, metric: Metric) -> Result<VectorDataset> {
    if bytes.is_empty() {
        return Err(Error::format("zero records"));
    }
    if bytes.len() < 4 {
        return Err(Error::format("truncated record header"));
    }
    let dim = read_i32(bytes, 0);
    if dim <= 0 {
        return Err(Error::format(format!("record 0 declares dimension {dim}")));
    }
    let dim = dim as usize;
    let record = 4 + dim * elem.size();
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::format(format!(
            "file size {} is not a multiple of the record size {record}",
            bytes.len()
        )));
    }
    let n = bytes.len() / record;
    let mut u8s = Vec::new();
    let mut f32s = Vec::new();
    match elem {
        ElemType::U8 => u8s.reserve_exact(n * dim),
        ElemType::F32 => f32s.reserve_exact(n * dim),
    }
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let d = read_i32(rec, 0);
        if d as usize != dim {
            return Err(Error::format(format!(
                "record {i} has dimension {d}, expected {dim}"
            )));
        }
        let body = &rec[4..];
        match elem {
            ElemType::U8 => u8s.extend_from_slice(body),
            ElemType::F32 => f32s.extend(
                body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())),
            ),
        }
    }
    let data = match elem {
        ElemType::U8 => VectorData::U8(u8s),
        ElemType::F32 => VectorData::F32(f32s),
    };
    VectorDataset::new(dim, metric, data)
}

pub fn save_vectors(path: impl AsRef<Path>, dataset: &VectorDataset) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    let dim = (dataset.dim() as i32).to_le_bytes();
    let mut buf = Vec::with_capacity(dataset.dim() * 4);
    for v in dataset.iter() {
        buf.clear();
        v.extend_le_bytes(&mut buf);
        out.write_all(&dim)?;
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_ivecs(path: impl AsRef<Path>, lists: &[Vec<u32>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for list in lists {
        out.write_all(&(list.len() as i32).to_le_bytes())?;
        for &id in list {
            out.write_all(&(id as i32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<u32>>> {
    let bytes = fs::read(path.as_ref())?;
    let mut at = 0;
    let mut lists = Vec::new();
    while at < bytes.len() {
        if at + 4 > bytes.len() {
            return Err(Error::format("truncated ivecs record header"));
        }
        let count = read_i32(&bytes, at);
        if count < 0 {
            return Err(Error::format(format!("negative ivecs count {count}")));
        }
        at += 4;
        let end = at + count as usize * 4;
        if end > bytes.len() {
            return Err(Error::format("truncated ivecs record"));
        }
        lists.push(bytes[at..end].chunks_exact(4).map(|c| read_i32(c, 0) as u32).collect());
        at = end;
    }
    Ok(lists)
}

/// Distance sidecar for ground truth: same framing as ivecs, `f32` payload.
pub fn write_distances(path: impl AsRef<Path>, lists: &[Vec<f32>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for list in lists {
        out.write_all(&(list.len() as i32).to_le_bytes())?;
        for d in list {
            out.write_all(&d.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_distances(path: impl AsRef<Path>) -> Result<Vec<Vec<f32>>> {
    let ids = read_ivecs(path)?;
    Ok(ids.into_iter().map(|l| l.into_iter().map(f32::from_bits).collect()).collect())
}
