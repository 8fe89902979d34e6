//! On-disk block format.
//!
//! `<prefix>.idx` starts with a header block followed by `block_count`
//! data blocks; block `i` begins at byte `(i + 1) * block_size`. Each data
//! block packs its occupants' records at offsets `slot * record_size` and
//! zero-fills the tail. A record is the raw vector, a `u32` neighbor count
//! and `max_degree` `u32` neighbor slots (unused ones zeroed).
//!
//! Header block, little-endian:
//!
//! | offset | field                      |
//! |--------|----------------------------|
//! | 0      | magic `STARSEG1`           |
//! | 8      | version `u32`              |
//! | 12     | dimension `u32`            |
//! | 16     | vertex count `u64`         |
//! | 24     | max degree `u32`           |
//! | 28     | block size `u32`           |
//! | 32     | record size `u32`          |
//! | 36     | slots per block `u32`      |
//! | 40     | block count `u64`          |
//! | 48     | element type `u8`          |
//! | 49     | metric `u8`                |
//! | 50     | reserved `u16`             |
//! | 52     | entry vertex `u32`         |
//!
//! `<prefix>.map` holds one `u64` per vertex: `block * 256 + slot`.

mod aligned;
mod verify;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::codec::{put_u32, put_u64, Reader};
use crate::dataset::{ElemType, Metric, VectorData, VectorDataset, VectorRef};
use crate::graph::NeighborGraph;
use crate::layout::{BlockLayout, LayoutGeometry, MAX_SLOTS_PER_BLOCK};
use crate::{Error, Result};

pub use aligned::AlignedBuf;
pub use verify::{verify_index, VerifyReport};

pub const MAGIC: [u8; 8] = *b"STARSEG1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_BYTES: usize = 56;

/// `<prefix><suffix>`, e.g. `out/base` + `.idx`.
pub fn with_suffix(prefix: impl AsRef<Path>, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_ref().as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

pub fn index_path(prefix: impl AsRef<Path>) -> PathBuf {
    with_suffix(prefix, ".idx")
}

pub fn map_path(prefix: impl AsRef<Path>) -> PathBuf {
    with_suffix(prefix, ".map")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiskIndexHeader {
    pub dim: u32,
    pub vertex_count: u64,
    pub max_degree: u32,
    pub block_size: u32,
    pub record_size: u32,
    pub slots_per_block: u32,
    pub block_count: u64,
    pub elem: ElemType,
    pub metric: Metric,
    pub entry: u32,
}

impl DiskIndexHeader {
    pub fn geometry(&self) -> LayoutGeometry {
        LayoutGeometry {
            block_size: self.block_size as usize,
            record_size: self.record_size as usize,
            slots_per_block: self.slots_per_block as usize,
            block_count: self.block_count as usize,
            vertex_count: self.vertex_count as usize,
        }
    }

    /// Serializes into one zero-padded block.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.block_size as usize);
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.dim);
        put_u64(&mut out, self.vertex_count);
        put_u32(&mut out, self.max_degree);
        put_u32(&mut out, self.block_size);
        put_u32(&mut out, self.record_size);
        put_u32(&mut out, self.slots_per_block);
        put_u64(&mut out, self.block_count);
        out.push(self.elem.code());
        out.push(self.metric.code());
        out.extend_from_slice(&[0, 0]);
        put_u32(&mut out, self.entry);
        debug_assert_eq!(out.len(), HEADER_BYTES);
        out.resize(self.block_size as usize, 0);
        out
    }

    /// Parses the header fields and checks the geometry is self-consistent.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes.get(..HEADER_BYTES).unwrap_or(bytes), "index header");
        if r.take(8)? != MAGIC {
            return Err(Error::format("bad magic, not a block index"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported index version {version}")));
        }
        let header = Self {
            dim: r.u32()?,
            vertex_count: r.u64()?,
            max_degree: r.u32()?,
            block_size: r.u32()?,
            record_size: r.u32()?,
            slots_per_block: r.u32()?,
            block_count: r.u64()?,
            elem: ElemType::from_code(r.u8()?)?,
            metric: Metric::from_code(r.u8()?)?,
            entry: {
                r.take(2)?;
                r.u32()?
            },
        };
        header.check()?;
        Ok(header)
    }

    fn check(&self) -> Result<()> {
        let expected = LayoutGeometry::new(
            self.dim as usize,
            self.elem.size(),
            self.max_degree as usize,
            self.block_size as usize,
            self.vertex_count as usize,
        )
        .map_err(|e| Error::Corrupt(format!("header geometry: {e}")))?;
        if expected != self.geometry() {
            return Err(Error::Corrupt(format!(
                "header geometry {:?} disagrees with the derived {:?}",
                self.geometry(),
                expected
            )));
        }
        if !(self.block_size as usize).is_multiple_of(4) || (self.block_size as usize) < HEADER_BYTES {
            return Err(Error::Corrupt(format!("block size {} unusable", self.block_size)));
        }
        if self.entry as u64 >= self.vertex_count {
            return Err(Error::Corrupt(format!("entry vertex {} out of range", self.entry)));
        }
        Ok(())
    }

    /// Exact size of the `.idx` file.
    pub fn file_bytes(&self) -> u64 {
        (self.block_count + 1) * self.block_size as u64
    }
}

/// Vertex ID to `(block, slot)`, packed as `block * 256 + slot`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VertexLocationMap {
    packed: Vec<u64>,
}

impl VertexLocationMap {
    pub fn from_layout(layout: &BlockLayout) -> Self {
        let packed = (0..layout.vertex_count() as u32)
            .map(|v| pack(layout.block_of(v), layout.slot_of(v)))
            .collect();
        Self { packed }
    }

    pub fn from_packed(packed: Vec<u64>) -> Self {
        Self { packed }
    }

    pub fn packed(&self) -> &[u64] {
        &self.packed
    }

    pub fn len(&self) -> usize {
        self.packed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packed.is_empty()
    }

    pub fn memory_bytes(&self) -> usize {
        self.packed.len() * 8
    }

    pub fn locate(&self, v: u32) -> Result<(u32, u32)> {
        let p = *self.packed.get(v as usize).ok_or_else(|| {
            Error::invalid(format!("vertex {v} out of range (n = {})", self.packed.len()))
        })?;
        Ok(unpack(p))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for &p in &self.packed {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::format(format!("location map of {} bytes is not whole u64s", bytes.len())));
        }
        let packed = bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { packed })
    }
}

#[inline]
fn pack(block: u32, slot: u32) -> u64 {
    block as u64 * MAX_SLOTS_PER_BLOCK as u64 + slot as u64
}

#[inline]
fn unpack(p: u64) -> (u32, u32) {
    ((p / MAX_SLOTS_PER_BLOCK as u64) as u32, (p % MAX_SLOTS_PER_BLOCK as u64) as u32)
}

fn encode_record(out: &mut [u8], vector: VectorRef<'_>, neighbors: &[u32]) {
    let mut bytes = Vec::with_capacity(out.len());
    vector.extend_le_bytes(&mut bytes);
    put_u32(&mut bytes, neighbors.len() as u32);
    for &v in neighbors {
        put_u32(&mut bytes, v);
    }
    out[..bytes.len()].copy_from_slice(&bytes);
}

/// Writes `<prefix>.idx` and `<prefix>.map`.
pub fn write_index(
    dataset: &VectorDataset,
    graph: &NeighborGraph,
    layout: &BlockLayout,
    prefix: impl AsRef<Path>,
) -> Result<DiskIndexHeader> {
    let n = dataset.len();
    if graph.len() != n || layout.vertex_count() != n {
        return Err(Error::invalid(format!(
            "dataset has {n} vectors, graph {} vertices, layout {} vertices",
            graph.len(),
            layout.vertex_count()
        )));
    }
    let geometry = *layout.geometry();
    let expected = LayoutGeometry::new(
        dataset.dim(),
        dataset.elem().size(),
        graph.max_degree(),
        geometry.block_size,
        n,
    )?;
    if expected != geometry {
        return Err(Error::invalid(format!(
            "layout geometry {geometry:?} does not match the data and degree cap ({expected:?})"
        )));
    }
    let header = DiskIndexHeader {
        dim: dataset.dim() as u32,
        vertex_count: n as u64,
        max_degree: graph.max_degree() as u32,
        block_size: geometry.block_size as u32,
        record_size: geometry.record_size as u32,
        slots_per_block: geometry.slots_per_block as u32,
        block_count: geometry.block_count as u64,
        elem: dataset.elem(),
        metric: dataset.metric(),
        entry: graph.entry(),
    };
    let prefix = prefix.as_ref();
    let mut w = BufWriter::with_capacity(1 << 20, File::create(index_path(prefix))?);
    w.write_all(&header.encode())?;
    let mut block = vec![0u8; geometry.block_size];
    for occupants in layout.blocks() {
        block.fill(0);
        for (slot, &v) in occupants.iter().enumerate() {
            let at = slot * geometry.record_size;
            encode_record(
                &mut block[at..at + geometry.record_size],
                dataset.get(v as usize),
                graph.neighbors(v),
            );
        }
        w.write_all(&block)?;
    }
    w.flush()?;
    VertexLocationMap::from_layout(layout).save(map_path(prefix))?;
    Ok(header)
}

/// One data block read from disk, decoded for its occupied slots only.
#[derive(Debug)]
pub struct LoadedBlock {
    pub block: u32,
    occupants: Vec<u32>,
    vectors: VectorData,
    neighbors: Vec<Vec<u32>>,
    dim: usize,
    raw: AlignedBuf,
}

impl LoadedBlock {
    /// Vertex IDs in slot order.
    pub fn occupants(&self) -> &[u32] {
        &self.occupants
    }

    pub fn len(&self) -> usize {
        self.occupants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupants.is_empty()
    }

    pub fn position(&self, v: u32) -> Option<usize> {
        self.occupants.iter().position(|&x| x == v)
    }

    #[inline]
    pub fn vector(&self, i: usize) -> VectorRef<'_> {
        let range = i * self.dim..(i + 1) * self.dim;
        match &self.vectors {
            VectorData::U8(v) => VectorRef::U8(&v[range]),
            VectorData::F32(v) => VectorRef::F32(&v[range]),
        }
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[i]
    }

    /// The block exactly as stored.
    pub fn raw(&self) -> &[u8] {
        &self.raw
    }
}

/// Read-only handle on a written index. Safe to share across threads.
#[derive(Debug)]
pub struct DiskIndex {
    file: File,
    header: DiskIndexHeader,
    map: VertexLocationMap,
    /// `slot_table[b * ε + s]` is the occupant of `(b, s)` or `u32::MAX`.
    slot_table: Vec<u32>,
    io_count: AtomicU64,
    direct: bool,
}

impl DiskIndex {
    /// Opens with unbuffered reads where the filesystem supports them.
    pub fn open(prefix: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(prefix, true)
    }

    /// Opens through the page cache.
    pub fn open_buffered(prefix: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(prefix, false)
    }

    fn open_with(prefix: impl AsRef<Path>, want_direct: bool) -> Result<Self> {
        let prefix = prefix.as_ref();
        let idx = index_path(prefix);
        let mut first = vec![0u8; HEADER_BYTES];
        File::open(&idx)?.read_exact_at(&mut first, 0)?;
        let block_size = DiskIndexHeader::decode(&first)?.block_size as usize;
        let (file, direct) = aligned::open_for_blocks(&idx, block_size, want_direct)?;
        let mut head = AlignedBuf::zeroed(block_size);
        file.read_exact_at(&mut head, 0)?;
        let header = DiskIndexHeader::decode(&head)?;
        let size = file.metadata()?.len();
        if size != header.file_bytes() {
            return Err(Error::Corrupt(format!(
                "index file has {size} bytes, header implies {}",
                header.file_bytes()
            )));
        }
        let map = VertexLocationMap::load(map_path(prefix))?;
        let slot_table = build_slot_table(&header, &map)?;
        Ok(Self { file, header, map, slot_table, io_count: AtomicU64::new(0), direct })
    }

    pub fn header(&self) -> &DiskIndexHeader {
        &self.header
    }

    pub fn geometry(&self) -> LayoutGeometry {
        self.header.geometry()
    }

    pub fn map(&self) -> &VertexLocationMap {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.header.vertex_count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.header.vertex_count == 0
    }

    pub fn dim(&self) -> usize {
        self.header.dim as usize
    }

    pub fn metric(&self) -> Metric {
        self.header.metric
    }

    pub fn elem(&self) -> ElemType {
        self.header.elem
    }

    pub fn entry(&self) -> u32 {
        self.header.entry
    }

    pub fn block_count(&self) -> usize {
        self.header.block_count as usize
    }

    /// Whether reads bypass the page cache.
    pub fn is_direct(&self) -> bool {
        self.direct
    }

    /// Block reads issued since open (or the last reset).
    pub fn io_count(&self) -> u64 {
        self.io_count.load(Ordering::Relaxed)
    }

    pub fn reset_io_count(&self) {
        self.io_count.store(0, Ordering::Relaxed);
    }

    pub fn locate(&self, v: u32) -> Result<(u32, u32)> {
        self.map.locate(v)
    }

    #[inline]
    pub fn block_of(&self, v: u32) -> u32 {
        unpack(self.map.packed[v as usize]).0
    }

    /// Occupants of `block` in slot order.
    pub fn occupants(&self, block: u32) -> impl Iterator<Item = u32> + '_ {
        let eps = self.header.slots_per_block as usize;
        let start = block as usize * eps;
        self.slot_table[start..start + eps].iter().copied().filter(|&v| v != u32::MAX)
    }

    /// One aligned read of a whole block, decoded.
    pub fn read_block(&self, block: u32) -> Result<LoadedBlock> {
        if block as u64 >= self.header.block_count {
            return Err(Error::invalid(format!(
                "block {block} out of range (block count {})",
                self.header.block_count
            )));
        }
        let eta = self.header.block_size as usize;
        let offset = (block as u64 + 1) * eta as u64;
        let mut raw = AlignedBuf::zeroed(eta);
        assert!(offset.is_multiple_of(eta as u64) && raw.len() == eta);
        self.file.read_exact_at(&mut raw, offset)?;
        self.io_count.fetch_add(1, Ordering::Relaxed);
        self.decode_block(block, raw)
    }

    fn decode_block(&self, block: u32, raw: AlignedBuf) -> Result<LoadedBlock> {
        let h = &self.header;
        let (dim, gamma, cap) = (h.dim as usize, h.record_size as usize, h.max_degree as usize);
        let vec_bytes = dim * h.elem.size();
        let eps = h.slots_per_block as usize;
        let slots = &self.slot_table[block as usize * eps..(block as usize + 1) * eps];
        let mut occupants = Vec::with_capacity(eps);
        let mut neighbors = Vec::with_capacity(eps);
        let mut u8s = Vec::new();
        let mut f32s = Vec::new();
        for (slot, &v) in slots.iter().enumerate() {
            if v == u32::MAX {
                continue;
            }
            let rec = &raw[slot * gamma..(slot + 1) * gamma];
            match h.elem {
                ElemType::U8 => u8s.extend_from_slice(&rec[..vec_bytes]),
                ElemType::F32 => f32s.extend(
                    rec[..vec_bytes].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())),
                ),
            }
            let degree = u32::from_le_bytes(rec[vec_bytes..vec_bytes + 4].try_into().unwrap()) as usize;
            if degree > cap {
                return Err(Error::Corrupt(format!(
                    "block {block} slot {slot}: neighbor count {degree} exceeds {cap}"
                )));
            }
            let list: Vec<u32> = rec[vec_bytes + 4..vec_bytes + 4 + 4 * degree]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if let Some(&bad) = list.iter().find(|&&w| w as u64 >= h.vertex_count) {
                return Err(Error::Corrupt(format!(
                    "block {block} slot {slot}: neighbor {bad} out of range"
                )));
            }
            occupants.push(v);
            neighbors.push(list);
        }
        let vectors = match h.elem {
            ElemType::U8 => VectorData::U8(u8s),
            ElemType::F32 => VectorData::F32(f32s),
        };
        Ok(LoadedBlock { block, occupants, vectors, neighbors, dim, raw })
    }

    /// Reads every block and reassembles the dataset and graph in ID order.
    pub fn read_all(&self) -> Result<(VectorDataset, NeighborGraph)> {
        let n = self.len();
        let dim = self.dim();
        let mut adjacency = vec![Vec::new(); n];
        let mut data = match self.header.elem {
            ElemType::U8 => VectorData::U8(vec![0; n * dim]),
            ElemType::F32 => VectorData::F32(vec![0.0; n * dim]),
        };
        for b in 0..self.header.block_count as u32 {
            let block = self.read_block(b)?;
            for (i, &v) in block.occupants().iter().enumerate() {
                let at = v as usize * dim;
                match (&mut data, block.vector(i)) {
                    (VectorData::U8(out), VectorRef::U8(src)) => out[at..at + dim].copy_from_slice(src),
                    (VectorData::F32(out), VectorRef::F32(src)) => {
                        out[at..at + dim].copy_from_slice(src)
                    }
                    _ => unreachable!("element type fixed by the header"),
                }
                adjacency[v as usize] = block.neighbors(i).to_vec();
            }
        }
        let dataset = VectorDataset::new(dim, self.metric(), data)?;
        let graph = NeighborGraph::new(adjacency, self.header.max_degree as usize, self.entry())
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok((dataset, graph))
    }

    /// The layout recorded in the location map.
    pub fn layout(&self) -> Result<BlockLayout> {
        let eps = self.header.slots_per_block as usize;
        let blocks = self
            .slot_table
            .chunks(eps)
            .map(|slots| slots.iter().copied().filter(|&v| v != u32::MAX).collect())
            .collect();
        BlockLayout::from_blocks(self.geometry(), blocks)
    }
}

/// Inverts the location map, rejecting out-of-range or shared slots.
fn build_slot_table(header: &DiskIndexHeader, map: &VertexLocationMap) -> Result<Vec<u32>> {
    if map.len() as u64 != header.vertex_count {
        return Err(Error::Corrupt(format!(
            "location map has {} entries, index has {} vertices",
            map.len(),
            header.vertex_count
        )));
    }
    let eps = header.slots_per_block as usize;
    let mut table = vec![u32::MAX; header.block_count as usize * eps];
    for (v, &p) in map.packed().iter().enumerate() {
        let (b, s) = unpack(p);
        if b as u64 >= header.block_count || s as usize >= eps {
            return Err(Error::Corrupt(format!(
                "map out of range: vertex {v} at block {b} slot {s}"
            )));
        }
        let cell = &mut table[b as usize * eps + s as usize];
        if *cell != u32::MAX {
            return Err(Error::Corrupt(format!(
                "vertices {} and {v} share block {b} slot {s}",
                *cell
            )));
        }
        *cell = v as u32;
    }
    Ok(table)
}
