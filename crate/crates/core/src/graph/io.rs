//! Graph and navigation-graph files.
//!
//! Graph: `|V|`, `Λ`, entry ID, then per vertex `λ` followed by `λ`
//! neighbor IDs; every field a little-endian `u32`.
//!
//! Navigation graph: a graph section, the sample ratio as `f64`, the
//! sample-to-base ID map (`u32` count + IDs), then the sampled vectors
//! (`u8` element code, `u8` metric code, two zero bytes, `u32` dim,
//! `u32` count, row-major values).

use std::fs;
use std::path::Path;

use super::{NavigationGraph, NeighborGraph};
use crate::codec::{put_u32, Reader};
use crate::dataset::{ElemType, Metric, VectorData, VectorDataset};
use crate::{Error, Result};

fn encode_graph(graph: &NeighborGraph, out: &mut Vec<u8>) {
    put_u32(out, graph.len() as u32);
    put_u32(out, graph.max_degree() as u32);
    put_u32(out, graph.entry());
    for list in graph.adjacency() {
        put_u32(out, list.len() as u32);
        list.iter().for_each(|&v| put_u32(out, v));
    }
}

fn decode_graph(r: &mut Reader<'_>) -> Result<NeighborGraph> {
    let n = r.u32()? as usize;
    let max_degree = r.u32()? as usize;
    let entry = r.u32()?;
    let mut adjacency = Vec::with_capacity(n);
    for _ in 0..n {
        let degree = r.u32()? as usize;
        if degree > max_degree {
            return Err(Error::format(format!("degree {degree} exceeds cap {max_degree}")));
        }
        adjacency.push(r.u32s(degree)?);
    }
    NeighborGraph::new(adjacency, max_degree, entry).map_err(|e| Error::format(e.to_string()))
}

pub fn write_graph(path: impl AsRef<Path>, graph: &NeighborGraph) -> Result<()> {
    let mut out = Vec::with_capacity(12 + graph.len() * 4 + graph.edge_count() * 4);
    encode_graph(graph, &mut out);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_graph(path: impl AsRef<Path>) -> Result<NeighborGraph> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes, "graph file");
    let g = decode_graph(&mut r)?;
    r.finish()?;
    Ok(g)
}

pub fn write_navigation(path: impl AsRef<Path>, nav: &NavigationGraph) -> Result<()> {
    let mut out = Vec::new();
    encode_graph(nav.graph(), &mut out);
    out.extend_from_slice(&nav.ratio().to_le_bytes());
    put_u32(&mut out, nav.ids().len() as u32);
    nav.ids().iter().for_each(|&id| put_u32(&mut out, id));
    let data = nav.data();
    out.push(data.elem().code());
    out.push(data.metric().code());
    out.extend_from_slice(&[0, 0]);
    put_u32(&mut out, data.dim() as u32);
    put_u32(&mut out, data.len() as u32);
    for v in data.iter() {
        v.extend_le_bytes(&mut out);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_navigation(path: impl AsRef<Path>) -> Result<NavigationGraph> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes, "navigation file");
    let graph = decode_graph(&mut r)?;
    let ratio = r.f64()?;
    let count = r.u32()? as usize;
    let ids = r.u32s(count)?;
    let elem = ElemType::from_code(r.u8()?)?;
    let metric = Metric::from_code(r.u8()?)?;
    r.take(2)?;
    let dim = r.u32()? as usize;
    let n = r.u32()? as usize;
    let data = match elem {
        ElemType::U8 => VectorData::U8(r.take(n * dim)?.to_vec()),
        ElemType::F32 => VectorData::F32(r.f32s(n * dim)?),
    };
    r.finish()?;
    let data = VectorDataset::new(dim, metric, data)?;
    NavigationGraph::from_parts(graph, ids, ratio, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic;
    use crate::graph::{build_navigation, BuildParams};

    #[test]
    fn graph_file_layout_is_exact() {
        let g = NeighborGraph::new(vec![vec![1, 2], vec![0], vec![]], 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.graph");
        write_graph(&path, &g).unwrap();
        let bytes = fs::read(&path).unwrap();
        let words: Vec<u32> =
            bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(words, vec![3, 2, 1, 2, 1, 2, 1, 0, 0]);
        assert_eq!(read_graph(&path).unwrap(), g);
    }

    #[test]
    fn navigation_round_trip() {
        let data = synthetic::uniform_f32(200, 6, Metric::InnerProduct, 4);
        let nav = build_navigation(&data, 0.5, &BuildParams::new(6, 12)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.nav");
        write_navigation(&path, &nav).unwrap();
        assert_eq!(read_navigation(&path).unwrap(), nav);
    }

    #[test]
    fn truncated_graph_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.graph");
        fs::write(&path, [3u8, 0, 0, 0, 2, 0, 0, 0]).unwrap();
        assert!(read_graph(&path).is_err());
    }
}
