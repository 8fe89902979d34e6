//! Block-level placement of graph vertices on disk.
//!
//! A disk block of `block_size` bytes holds up to `slots_per_block`
//! fixed-size vertex records. The overlap ratio of a vertex is the share
//! of its block co-occupants that are also its out-neighbors; the mean
//! over all vertices measures how much of a loaded block a graph
//! traversal can use.

mod io;
mod shuffle;

use serde::{Deserialize, Serialize};

use crate::graph::NeighborGraph;
use crate::{Error, Result};

pub use io::{read_layout, write_layout};
pub use shuffle::{
    shuffle, shuffle_bnf, shuffle_bnp, shuffle_bns, ShuffleAlgorithm, ShuffleParams,
    ShuffleReport,
};

/// Largest slot index representable in the packed vertex-location map.
pub const MAX_SLOTS_PER_BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutGeometry {
    /// η, bytes per block.
    pub block_size: usize,
    /// γ, bytes per vertex record.
    pub record_size: usize,
    /// ε = ⌊η/γ⌋.
    pub slots_per_block: usize,
    /// ρ = ⌈|V|/ε⌉.
    pub block_count: usize,
    pub vertex_count: usize,
}

impl LayoutGeometry {
    /// Record size for `dim` elements of `elem_size` bytes plus a `u32`
    /// neighbor count and `max_degree` `u32` neighbor slots.
    pub fn record_size(dim: usize, elem_size: usize, max_degree: usize) -> usize {
        dim * elem_size + 4 + 4 * max_degree
    }

    pub fn new(
        dim: usize,
        elem_size: usize,
        max_degree: usize,
        block_size: usize,
        vertex_count: usize,
    ) -> Result<Self> {
        let record_size = Self::record_size(dim, elem_size, max_degree);
        if record_size > block_size {
            return Err(Error::invalid(format!(
                "record of {record_size} bytes does not fit a {block_size}-byte block"
            )));
        }
        let slots_per_block = block_size / record_size;
        if slots_per_block > MAX_SLOTS_PER_BLOCK {
            return Err(Error::invalid(format!(
                "{slots_per_block} slots per block exceed the location-map limit of {MAX_SLOTS_PER_BLOCK}"
            )));
        }
        if vertex_count == 0 {
            return Err(Error::invalid("layout needs at least one vertex"));
        }
        Ok(Self {
            block_size,
            record_size,
            slots_per_block,
            block_count: vertex_count.div_ceil(slots_per_block),
            vertex_count,
        })
    }
}

/// Bijective assignment of vertices to `(block, slot)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    geometry: LayoutGeometry,
    blocks: Vec<Vec<u32>>,
    block_of: Vec<u32>,
    slot_of: Vec<u32>,
}

impl BlockLayout {
    /// Builds a layout from per-block occupant lists; the slot of a vertex
    /// is its position in its block's list.
    pub fn from_blocks(geometry: LayoutGeometry, blocks: Vec<Vec<u32>>) -> Result<Self> {
        if blocks.len() != geometry.block_count {
            return Err(Error::invalid(format!(
                "{} blocks given, geometry needs {}",
                blocks.len(),
                geometry.block_count
            )));
        }
        let n = geometry.vertex_count;
        let mut block_of = vec![u32::MAX; n];
        let mut slot_of = vec![u32::MAX; n];
        for (b, occupants) in blocks.iter().enumerate() {
            if occupants.len() > geometry.slots_per_block {
                return Err(Error::invalid(format!(
                    "block {b} holds {} vertices, capacity is {}",
                    occupants.len(),
                    geometry.slots_per_block
                )));
            }
            for (s, &v) in occupants.iter().enumerate() {
                let slot = block_of.get_mut(v as usize).ok_or_else(|| {
                    Error::invalid(format!("block {b} holds vertex {v}, out of range"))
                })?;
                if *slot != u32::MAX {
                    return Err(Error::invalid(format!("vertex {v} is placed twice")));
                }
                *slot = b as u32;
                slot_of[v as usize] = s as u32;
            }
        }
        if let Some(v) = block_of.iter().position(|&b| b == u32::MAX) {
            return Err(Error::invalid(format!("vertex {v} is not placed")));
        }
        Ok(Self { geometry, blocks, block_of, slot_of })
    }

    /// Vertex `v` at block `v / ε`, slot `v % ε`.
    pub fn sequential(geometry: LayoutGeometry) -> Self {
        let eps = geometry.slots_per_block;
        let n = geometry.vertex_count as u32;
        let blocks = (0..geometry.block_count as u32)
            .map(|b| (b * eps as u32..((b + 1) * eps as u32).min(n)).collect())
            .collect();
        Self::from_blocks(geometry, blocks).expect("sequential layout is valid")
    }

    pub fn geometry(&self) -> &LayoutGeometry {
        &self.geometry
    }

    pub fn blocks(&self) -> &[Vec<u32>] {
        &self.blocks
    }

    pub fn occupants(&self, block: u32) -> &[u32] {
        &self.blocks[block as usize]
    }

    #[inline]
    pub fn block_of(&self, v: u32) -> u32 {
        self.block_of[v as usize]
    }

    #[inline]
    pub fn slot_of(&self, v: u32) -> u32 {
        self.slot_of[v as usize]
    }

    pub fn vertex_count(&self) -> usize {
        self.geometry.vertex_count
    }

    /// Re-checks bijectivity and per-block capacity.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = Self::from_blocks(self.geometry, self.blocks.clone())?;
        if rebuilt.block_of != self.block_of || rebuilt.slot_of != self.slot_of {
            return Err(Error::invalid("assignment table disagrees with block lists"));
        }
        Ok(())
    }
}

fn check_sizes(layout: &BlockLayout, graph: &NeighborGraph) {
    assert_eq!(
        layout.vertex_count(),
        graph.len(),
        "layout and graph disagree on the vertex count"
    );
}

/// Number of `u`'s out-neighbors sharing its block.
pub(crate) fn in_block_neighbors(u: u32, layout: &BlockLayout, graph: &NeighborGraph) -> usize {
    let b = layout.block_of(u);
    graph.neighbors(u).iter().filter(|&&v| layout.block_of(v) == b).count()
}

/// OR(u) = |B(u) ∩ N(u)| / (|B(u)| − 1), or 0 for a singleton block.
pub fn or_vertex(u: u32, layout: &BlockLayout, graph: &NeighborGraph) -> f64 {
    check_sizes(layout, graph);
    let size = layout.occupants(layout.block_of(u)).len();
    if size <= 1 {
        return 0.0;
    }
    in_block_neighbors(u, layout, graph) as f64 / (size - 1) as f64
}

/// Mean OR over a block's occupants (0 for an empty block).
pub fn or_block(block: u32, layout: &BlockLayout, graph: &NeighborGraph) -> f64 {
    let occupants = layout.occupants(block);
    if occupants.is_empty() {
        return 0.0;
    }
    occupants.iter().map(|&v| or_vertex(v, layout, graph)).sum::<f64>() / occupants.len() as f64
}

/// OR(G), the mean of OR(u) over every vertex.
pub fn or_graph(layout: &BlockLayout, graph: &NeighborGraph) -> f64 {
    check_sizes(layout, graph);
    let total: f64 = (0..graph.len() as u32).map(|u| or_vertex(u, layout, graph)).sum();
    total / graph.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_examples() {
        let g = LayoutGeometry::new(128, 1, 31, 4096, 33_000_000).unwrap();
        assert_eq!((g.record_size, g.slots_per_block, g.block_count), (256, 16, 2_062_500));
        let deep = LayoutGeometry::new(96, 4, 48, 4096, 1).unwrap();
        assert_eq!((deep.record_size, deep.slots_per_block), (580, 7));
        let ssnpp = LayoutGeometry::new(256, 1, 48, 4096, 1).unwrap();
        assert_eq!((ssnpp.record_size, ssnpp.slots_per_block), (452, 9));
        let small = LayoutGeometry::new(128, 1, 48, 4096, 10_000).unwrap();
        assert_eq!((small.slots_per_block, small.block_count), (12, 834));
        assert!(LayoutGeometry::new(2048, 4, 8, 4096, 10).is_err());
    }

    fn geometry(n: usize, eps: usize) -> LayoutGeometry {
        LayoutGeometry {
            block_size: 4096,
            record_size: 4096 / eps,
            slots_per_block: eps,
            block_count: n.div_ceil(eps),
            vertex_count: n,
        }
    }

    #[test]
    fn sequential_examples() {
        let l = BlockLayout::sequential(geometry(16, 4));
        assert_eq!(l.occupants(0), &[0, 1, 2, 3]);
        assert_eq!((l.block_of(13), l.slot_of(13)), (3, 1));
        let l = BlockLayout::sequential(geometry(5, 4));
        assert_eq!(l.occupants(1), &[4]);
        let l = BlockLayout::sequential(geometry(4, 4));
        assert_eq!(l.blocks().len(), 1);
    }

    #[test]
    fn from_blocks_rejects_bad_assignments() {
        let g = geometry(4, 2);
        assert!(BlockLayout::from_blocks(g, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(BlockLayout::from_blocks(g, vec![vec![0, 1, 2], vec![3]]).is_err());
        assert!(BlockLayout::from_blocks(g, vec![vec![0, 1], vec![2]]).is_err());
        assert!(BlockLayout::from_blocks(g, vec![vec![0, 1], vec![2, 9]]).is_err());
        assert!(BlockLayout::from_blocks(g, vec![vec![3, 1], vec![2, 0]]).is_ok());
    }

    #[test]
    fn overlap_ratio_examples() {
        // Block {0, 7, 8, 14} where N(0) = {7, 8, 14}, 7 and 8 point back at
        // 0, 7 also at 8, and 14 links outside the block.
        let mut adj = vec![Vec::new(); 16];
        adj[0] = vec![7, 8, 14];
        adj[7] = vec![0, 8, 12];
        adj[8] = vec![0];
        adj[14] = vec![9];
        adj[12] = vec![7, 8];
        let graph = NeighborGraph::new(adj, 3, 0).unwrap();
        let layout = BlockLayout::from_blocks(
            geometry(16, 4),
            vec![vec![0, 7, 8, 14], vec![1, 2, 3, 4], vec![5, 6, 9, 10], vec![11, 12, 13, 15]],
        )
        .unwrap();
        assert_eq!(or_vertex(0, &layout, &graph), 1.0);
        assert!((or_block(0, &layout, &graph) - 0.5).abs() < 1e-12);
        assert_eq!(or_vertex(1, &layout, &graph), 0.0);

        let single = BlockLayout::from_blocks(geometry(2, 1), vec![vec![0], vec![1]]).unwrap();
        let pair = NeighborGraph::new(vec![vec![1], vec![0]], 1, 0).unwrap();
        assert_eq!(or_vertex(0, &single, &pair), 0.0);

        let clique = NeighborGraph::new(
            (0..4u32).map(|u| (0..4).filter(|&v| v != u).collect()).collect(),
            3,
            0,
        )
        .unwrap();
        let one = BlockLayout::sequential(geometry(4, 4));
        assert_eq!(or_vertex(2, &one, &clique), 1.0);
        assert_eq!(or_graph(&one, &clique), 1.0);
    }
}
