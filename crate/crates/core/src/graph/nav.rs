use super::{build_vamana, greedy_vertex_search, BuildParams, NeighborGraph};
use crate::dataset::{sample_subset, Neighbor, VectorDataset, VectorRef};
use crate::{Error, Result};

/// Memory-resident graph over a uniform sample of the base vectors, used
/// to pick query-aware entry points for the disk search.
#[derive(Clone, Debug, PartialEq)]
pub struct NavigationGraph {
    graph: NeighborGraph,
    ids: Vec<u32>,
    ratio: f64,
    data: VectorDataset,
}

impl NavigationGraph {
    pub fn from_parts(
        graph: NeighborGraph,
        ids: Vec<u32>,
        ratio: f64,
        data: VectorDataset,
    ) -> Result<Self> {
        if ids.len() != graph.len() || data.len() != graph.len() {
            return Err(Error::invalid(format!(
                "navigation graph has {} vertices, {} mapped IDs and {} vectors",
                graph.len(),
                ids.len(),
                data.len()
            )));
        }
        Ok(Self { graph, ids, ratio, data })
    }

    pub fn graph(&self) -> &NeighborGraph {
        &self.graph
    }

    /// Base-dataset ID of each navigation vertex.
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn data(&self) -> &VectorDataset {
        &self.data
    }

    /// Bytes held in memory: vectors, adjacency and the ID map.
    pub fn memory_bytes(&self) -> usize {
        let vectors = self.data.len() * self.data.dim() * self.data.elem().size();
        let adjacency = self.graph.len() * 4 + self.graph.edge_count() * 4;
        vectors + adjacency + self.ids.len() * 4
    }

    /// Greedy search on the sample; the `count` best hits as base IDs.
    pub fn entry_points(
        &self,
        query: VectorRef<'_>,
        list_size: usize,
        count: usize,
    ) -> Result<Vec<u32>> {
        Ok(self.entry_neighbors(query, list_size, count)?.into_iter().map(|n| n.id).collect())
    }

    /// Like [`entry_points`](Self::entry_points), with each hit's exact
    /// distance to `query` (the sample holds the original vectors).
    pub fn entry_neighbors(
        &self,
        query: VectorRef<'_>,
        list_size: usize,
        count: usize,
    ) -> Result<Vec<Neighbor>> {
        let count = count.min(self.graph.len()).max(1);
        let list_size = list_size.max(count);
        let outcome = greedy_vertex_search(&self.graph, &self.data, query, list_size, count)?;
        Ok(outcome.top.iter().map(|n| Neighbor::new(self.ids[n.id as usize], n.dist)).collect())
    }

    /// Maximum base-dataset ID referenced, for consistency checks.
    pub fn max_base_id(&self) -> u32 {
        self.ids.iter().copied().max().unwrap_or(0)
    }
}

/// Samples `ratio` of the base set and builds a graph over it with the
/// same builder as the disk graph.
pub fn build_navigation(
    data: &VectorDataset,
    ratio: f64,
    params: &BuildParams,
) -> Result<NavigationGraph> {
    let (sample, ids) = sample_subset(data, ratio, params.seed)?;
    if sample.len() < 2 {
        return Err(Error::invalid(format!(
            "sample ratio {ratio} keeps {} point(s); the navigation graph needs 2",
            sample.len()
        )));
    }
    let graph = build_vamana(&sample, params)?;
    NavigationGraph::from_parts(graph, ids, ratio, sample)
}
