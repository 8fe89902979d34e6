//! Binary layout file: magic, geometry, then per block a `u32` occupant
//! count followed by the occupant IDs in slot order.

use std::fs;
use std::path::Path;

use super::{BlockLayout, LayoutGeometry};
use crate::codec::{put_u32, put_u64, Reader};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"STARLAY1";

pub fn write_layout(path: impl AsRef<Path>, layout: &BlockLayout) -> Result<()> {
    let g = layout.geometry();
    let mut out = Vec::with_capacity(48 + 4 * (g.block_count + g.vertex_count));
    out.extend_from_slice(MAGIC);
    for v in [g.block_size, g.record_size, g.slots_per_block, g.block_count, g.vertex_count] {
        put_u64(&mut out, v as u64);
    }
    for block in layout.blocks() {
        put_u32(&mut out, block.len() as u32);
        for &v in block {
            put_u32(&mut out, v);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_layout(path: impl AsRef<Path>) -> Result<BlockLayout> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes, "layout file");
    if r.take(8)? != MAGIC {
        return Err(Error::format("not a layout file"));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u64()? as usize;
    }
    let [block_size, record_size, slots_per_block, block_count, vertex_count] = dims;
    if record_size == 0 || slots_per_block != block_size / record_size {
        return Err(Error::format("layout geometry is inconsistent"));
    }
    let geometry = LayoutGeometry { block_size, record_size, slots_per_block, block_count, vertex_count };
    let mut blocks = Vec::with_capacity(block_count.min(bytes.len() / 4));
    for _ in 0..block_count {
        let len = r.u32()? as usize;
        if len > slots_per_block {
            return Err(Error::format(format!("block holds {len} vertices, limit {slots_per_block}")));
        }
        blocks.push(r.u32s(len)?);
    }
    r.finish()?;
    BlockLayout::from_blocks(geometry, blocks).map_err(|e| Error::format(format!("bad layout: {e}")))
}
