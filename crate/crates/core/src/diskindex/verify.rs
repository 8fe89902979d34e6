use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{index_path, map_path, unpack, DiskIndexHeader, VertexLocationMap};
use crate::Result;

/// Outcome of [`verify_index`]; `violation` names the first failed check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub ok: bool,
    pub violation: Option<String>,
    pub vertices: u64,
    pub blocks: u64,
}

impl VerifyReport {
    fn fail(msg: String, vertices: u64, blocks: u64) -> Self {
        Self { ok: false, violation: Some(msg), vertices, blocks }
    }
}

/// Checks header, file size, location-map bijectivity, and every record's
/// neighbor count and IDs. Only I/O failures are returned as errors.
pub fn verify_index(prefix: impl AsRef<Path>) -> Result<VerifyReport> {
    let prefix = prefix.as_ref();
    let idx = index_path(prefix);
    let size = std::fs::metadata(&idx)?.len();
    let mut reader = BufReader::with_capacity(1 << 20, File::open(&idx)?);
    let mut first = vec![0u8; 56.min(size as usize)];
    reader.read_exact(&mut first)?;
    let header = match DiskIndexHeader::decode(&first) {
        Ok(h) => h,
        Err(e) => return Ok(VerifyReport::fail(format!("header: {e}"), 0, 0)),
    };
    let (n, rho) = (header.vertex_count, header.block_count);
    let fail = |msg: String| Ok(VerifyReport::fail(msg, n, rho));
    if size != header.file_bytes() {
        return fail(format!("index file has {size} bytes, header implies {}", header.file_bytes()));
    }

    let map = VertexLocationMap::load(map_path(prefix))?;
    if map.len() as u64 != n {
        return fail(format!("location map has {} entries, index has {n} vertices", map.len()));
    }
    let eps = header.slots_per_block as usize;
    let mut table = vec![u32::MAX; rho as usize * eps];
    for (v, &p) in map.packed().iter().enumerate() {
        let (b, s) = unpack(p);
        if b as u64 >= rho || s as usize >= eps {
            return fail(format!("map out of range: vertex {v} at block {b} slot {s}"));
        }
        let cell = &mut table[b as usize * eps + s as usize];
        if *cell != u32::MAX {
            return fail(format!("map not bijective: vertices {} and {v} at block {b} slot {s}", *cell));
        }
        *cell = v as u32;
    }

    let eta = header.block_size as usize;
    let gamma = header.record_size as usize;
    let vec_bytes = header.dim as usize * header.elem.size();
    let cap = header.max_degree as usize;
    let mut block = vec![0u8; eta];
    reader.read_exact(&mut block[..eta - first.len()])?;
    for b in 0..rho as usize {
        reader.read_exact(&mut block)?;
        for s in 0..eps {
            let v = table[b * eps + s];
            if v == u32::MAX {
                continue;
            }
            let rec = &block[s * gamma..(s + 1) * gamma];
            let degree = u32::from_le_bytes(rec[vec_bytes..vec_bytes + 4].try_into().unwrap()) as usize;
            if degree > cap {
                return fail(format!(
                    "block {b} slot {s}: neighbor count {degree} exceeds the cap {cap}"
                ));
            }
            for c in rec[vec_bytes + 4..vec_bytes + 4 + 4 * degree].chunks_exact(4) {
                let w = u32::from_le_bytes(c.try_into().unwrap());
                if w as u64 >= n || w == v {
                    return fail(format!("block {b} slot {s}: vertex {v} has invalid neighbor {w}"));
                }
            }
        }
    }
    Ok(VerifyReport { ok: true, violation: None, vertices: n, blocks: rho })
}
