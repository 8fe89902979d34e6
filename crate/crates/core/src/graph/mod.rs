//! In-memory proximity graphs: the Vamana-style builder, greedy vertex
//! search, and the sampled navigation graph.

mod io;
mod nav;
mod vamana;

use std::collections::{HashSet, VecDeque};

use crate::dataset::{distance_unchecked, Metric, Neighbor, VectorDataset, VectorRef};
use crate::{Error, Result};

pub use io::{read_graph, read_navigation, write_graph, write_navigation};
pub use nav::{build_navigation, NavigationGraph};
pub use vamana::{build_vamana, medoid, robust_prune, BuildParams};

/// Directed adjacency lists with a degree cap and an entry vertex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<u32>>,
    max_degree: usize,
    entry: u32,
}

impl NeighborGraph {
    /// Validates IDs, self-loops and the degree cap.
    pub fn new(adjacency: Vec<Vec<u32>>, max_degree: usize, entry: u32) -> Result<Self> {
        let n = adjacency.len();
        if n == 0 {
            return Err(Error::invalid("graph has no vertices"));
        }
        if entry as usize >= n {
            return Err(Error::invalid(format!("entry {entry} out of range (|V| = {n})")));
        }
        for (u, list) in adjacency.iter().enumerate() {
            if list.len() > max_degree {
                return Err(Error::invalid(format!(
                    "vertex {u} has degree {} above the cap {max_degree}",
                    list.len()
                )));
            }
            for &v in list {
                if v as usize >= n {
                    return Err(Error::invalid(format!("vertex {u} links to {v}, out of range")));
                }
                if v as usize == u {
                    return Err(Error::invalid(format!("vertex {u} has a self-loop")));
                }
            }
        }
        Ok(Self { adjacency, max_degree, entry })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }

    #[inline]
    pub fn neighbors(&self, u: u32) -> &[u32] {
        &self.adjacency[u as usize]
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    /// Vertices not reachable from the entry vertex, ascending.
    pub fn unreachable(&self) -> Vec<u32> {
        let reached = reachable_from(self.entry, self.len(), |u| &self.adjacency[u as usize]);
        (0..self.len() as u32).filter(|&v| !reached[v as usize]).collect()
    }
}

pub(crate) fn reachable_from<'a>(
    start: u32,
    n: usize,
    neighbors: impl Fn(u32) -> &'a [u32],
) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start as usize] = true;
    while let Some(u) = queue.pop_front() {
        for &v in neighbors(u) {
            if !seen[v as usize] {
                seen[v as usize] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Mean out-degree over all vertices.
pub fn avg_out_degree(graph: &NeighborGraph) -> f64 {
    graph.edge_count() as f64 / graph.len() as f64
}

/// Result of a greedy vertex search.
#[derive(Clone, Debug, Default)]
pub struct GreedyOutcome {
    /// The `k` nearest expanded vertices, ascending.
    pub top: Vec<Neighbor>,
    /// Every vertex whose neighbors were expanded, in expansion order.
    pub visited: Vec<Neighbor>,
    /// Number of expansions after the entry vertex.
    pub hops: usize,
}

/// Best-first beam search with a bounded candidate list.
///
/// Starts from the graph's entry vertex, keeps the `list_size` closest
/// discovered vertices ordered by exact distance, and expands the closest
/// unexpanded one until every listed vertex has been expanded.
pub fn greedy_vertex_search(
    graph: &NeighborGraph,
    data: &VectorDataset,
    query: VectorRef<'_>,
    list_size: usize,
    k: usize,
) -> Result<GreedyOutcome> {
    if query.len() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: query.len() });
    }
    if data.len() != graph.len() {
        return Err(Error::invalid(format!(
            "graph has {} vertices but data has {} rows",
            graph.len(),
            data.len()
        )));
    }
    if k == 0 || list_size < k {
        return Err(Error::invalid(format!("need list size {list_size} >= k = {k} >= 1")));
    }
    let mut buf = Vec::new();
    Ok(beam_search(
        &[graph.entry],
        data,
        query,
        data.metric(),
        list_size,
        k,
        |u, out| {
            out.clear();
            out.extend_from_slice(graph.neighbors(u));
        },
        &mut buf,
    ))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn beam_search(
    entries: &[u32],
    data: &VectorDataset,
    query: VectorRef<'_>,
    metric: Metric,
    list_size: usize,
    k: usize,
    neighbors_of: impl Fn(u32, &mut Vec<u32>),
    scratch: &mut Vec<u32>,
) -> GreedyOutcome {
    // (neighbor, expanded) sorted by distance, ties by ID.
    let mut list: Vec<(Neighbor, bool)> = Vec::with_capacity(list_size + 1);
    let mut seen: HashSet<u32> = HashSet::with_capacity(list_size * 4);
    for &e in entries {
        if seen.insert(e) {
            let n = Neighbor::new(e, distance_unchecked(query, data.get(e as usize), metric));
            insert_bounded(&mut list, n, list_size);
        }
    }
    let mut visited = Vec::new();
    while let Some(pos) = list.iter().position(|(_, expanded)| !expanded) {
        list[pos].1 = true;
        let current = list[pos].0;
        visited.push(current);
        neighbors_of(current.id, scratch);
        for &v in scratch.iter() {
            if !seen.insert(v) {
                continue;
            }
            let n = Neighbor::new(v, distance_unchecked(query, data.get(v as usize), metric));
            insert_bounded(&mut list, n, list_size);
        }
    }
    let mut top = visited.clone();
    top.sort_unstable_by(Neighbor::cmp_by_dist);
    top.truncate(k);
    let hops = visited.len().saturating_sub(1);
    GreedyOutcome { top, visited, hops }
}

fn insert_bounded(list: &mut Vec<(Neighbor, bool)>, n: Neighbor, cap: usize) {
    if list.len() == cap && n.cmp_by_dist(&list[cap - 1].0).is_ge() {
        return;
    }
    let pos = list.partition_point(|(x, _)| x.cmp_by_dist(&n).is_lt());
    list.insert(pos, (n, false));
    list.truncate(cap);
}
