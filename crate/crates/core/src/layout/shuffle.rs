//! Block shuffling heuristics.
//!
//! * BNP packs each vertex with its not-yet-placed neighbors, scanning IDs
//!   in ascending order.
//! * BNF repeatedly reassigns every vertex to the non-full block that held
//!   most of its neighbors in the previous round.
//! * BNS swaps the lowest-OR occupants of two blocks whenever that raises
//!   their combined overlap; OR(G) never decreases.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{in_block_neighbors, or_graph, BlockLayout, LayoutGeometry};
use crate::graph::NeighborGraph;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShuffleAlgorithm {
    Bnp,
    Bnf,
    Bns,
}

impl fmt::Display for ShuffleAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShuffleAlgorithm::Bnp => "bnp",
            ShuffleAlgorithm::Bnf => "bnf",
            ShuffleAlgorithm::Bns => "bns",
        })
    }
}

impl FromStr for ShuffleAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bnp" => Ok(ShuffleAlgorithm::Bnp),
            "bnf" => Ok(ShuffleAlgorithm::Bnf),
            "bns" => Ok(ShuffleAlgorithm::Bns),
            other => Err(Error::invalid(format!("unknown shuffle algorithm {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleParams {
    pub algorithm: ShuffleAlgorithm,
    /// β, iteration cap for BNF/BNS.
    pub max_iterations: usize,
    /// τ, stop once an iteration gains less OR(G) than this.
    pub gain_threshold: f64,
    /// Starting layout for BNS (BNP or BNF).
    pub init: ShuffleAlgorithm,
}

impl Default for ShuffleParams {
    fn default() -> Self {
        Self {
            algorithm: ShuffleAlgorithm::Bnf,
            max_iterations: 8,
            gain_threshold: 0.01,
            init: ShuffleAlgorithm::Bnp,
        }
    }
}

impl ShuffleParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("shuffle needs at least one iteration"));
        }
        if !(self.gain_threshold >= 0.0) {
            return Err(Error::invalid(format!(
                "gain threshold {} must be >= 0",
                self.gain_threshold
            )));
        }
        if self.algorithm == ShuffleAlgorithm::Bns && self.init == ShuffleAlgorithm::Bns {
            return Err(Error::invalid("BNS must start from a BNP or BNF layout"));
        }
        Ok(())
    }
}

/// Summary of one shuffle run, exported by `layout-stats --json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleReport {
    pub algorithm: ShuffleAlgorithm,
    pub init: Option<ShuffleAlgorithm>,
    pub beta: usize,
    pub beta_used: usize,
    pub tau: f64,
    /// OR(G) of the starting layout followed by one value per iteration.
    pub or_per_iteration: Vec<f64>,
    pub slots_per_block: usize,
    pub block_count: usize,
    pub elapsed_secs: f64,
}

/// Block Neighbor Padding.
///
/// Scans vertices by ascending ID; each unplaced vertex goes into the
/// current block followed by its unplaced neighbors in adjacency order,
/// until the block is full. A full block closes and the next unplaced
/// vertex opens a new one.
pub fn shuffle_bnp(graph: &NeighborGraph, geometry: &LayoutGeometry) -> BlockLayout {
    assert_eq!(graph.len(), geometry.vertex_count, "graph and geometry disagree on |V|");
    let eps = geometry.slots_per_block;
    let mut placed = vec![false; graph.len()];
    let mut blocks: Vec<Vec<u32>> = Vec::with_capacity(geometry.block_count);
    let mut current: Vec<u32> = Vec::with_capacity(eps);
    for u in 0..graph.len() as u32 {
        if placed[u as usize] {
            continue;
        }
        if current.len() == eps {
            blocks.push(std::mem::replace(&mut current, Vec::with_capacity(eps)));
        }
        placed[u as usize] = true;
        current.push(u);
        for &v in graph.neighbors(u) {
            if current.len() == eps {
                break;
            }
            if !placed[v as usize] {
                placed[v as usize] = true;
                current.push(v);
            }
        }
    }
    blocks.push(current);
    BlockLayout::from_blocks(*geometry, blocks).expect("BNP places every vertex exactly once")
}

/// Block Neighbor Frequency.
///
/// Returns the final layout and OR(G) before the first and after every
/// iteration. Stops after `max_iterations` passes or once a pass gains
/// less than `gain_threshold` over the previous pass.
pub fn shuffle_bnf(
    graph: &NeighborGraph,
    initial: &BlockLayout,
    max_iterations: usize,
    gain_threshold: f64,
) -> (BlockLayout, Vec<f64>) {
    let geometry = *initial.geometry();
    let eps = geometry.slots_per_block;
    let mut layout = initial.clone();
    let mut history = vec![or_graph(&layout, graph)];
    let mut freq: Vec<(u32, u32)> = Vec::with_capacity(graph.max_degree());
    let mut scratch: Vec<u32> = Vec::with_capacity(graph.max_degree());
    for _ in 0..max_iterations {
        let mut blocks: Vec<Vec<u32>> =
            (0..geometry.block_count).map(|_| Vec::with_capacity(eps)).collect();
        let mut cursor = 0usize;
        for u in 0..graph.len() as u32 {
            scratch.clear();
            scratch.extend(graph.neighbors(u).iter().map(|&v| layout.block_of(v)));
            scratch.sort_unstable();
            freq.clear();
            for &b in &scratch {
                match freq.last_mut() {
                    Some((last, count)) if *last == b => *count += 1,
                    _ => freq.push((b, 1)),
                }
            }
            // Most neighbors first, then lowest block ID.
            freq.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let target = match freq.iter().find(|(b, _)| blocks[*b as usize].len() < eps) {
                Some(&(b, _)) => b as usize,
                None => {
                    while blocks[cursor].len() == eps {
                        cursor += 1;
                    }
                    cursor
                }
            };
            blocks[target].push(u);
        }
        layout = BlockLayout::from_blocks(geometry, blocks).expect("BNF keeps a bijection");
        let or = or_graph(&layout, graph);
        let prev = history[history.len() - 1];
        history.push(or);
        // The first pass reshuffles every block and may score below its
        // input, so the gain test starts from the second pass.
        if history.len() > 2 && or - prev < gain_threshold {
            break;
        }
    }
    (layout, history)
}

/// Incremental state for BNS: per-vertex in-block neighbor counts plus a
/// memo of block pairs already found not to improve at their current
/// contents.
pub(crate) struct BnsState<'g> {
    graph: &'g NeighborGraph,
    geometry: LayoutGeometry,
    sorted: Vec<Vec<u32>>,
    blocks: Vec<Vec<u32>>,
    block_of: Vec<u32>,
    count: Vec<u32>,
    version: Vec<u32>,
    rejected: HashMap<(u32, u32), (u32, u32)>,
    pub(crate) swaps: u64,
}

impl<'g> BnsState<'g> {
    pub(crate) fn new(graph: &'g NeighborGraph, layout: &BlockLayout) -> Self {
        let sorted = graph
            .adjacency()
            .iter()
            .map(|l| {
                let mut s = l.clone();
                s.sort_unstable();
                s
            })
            .collect();
        let count =
            (0..graph.len() as u32).map(|u| in_block_neighbors(u, layout, graph) as u32).collect();
        Self {
            graph,
            geometry: *layout.geometry(),
            sorted,
            blocks: layout.blocks().to_vec(),
            block_of: (0..graph.len() as u32).map(|v| layout.block_of(v)).collect(),
            count,
            version: vec![0; layout.blocks().len()],
            rejected: HashMap::new(),
            swaps: 0,
        }
    }

    #[inline]
    fn has_edge(&self, from: u32, to: u32) -> bool {
        self.sorted[from as usize].binary_search(&to).is_ok()
    }

    /// Lowest-OR occupant; occupants share a denominator so the lowest
    /// count wins, ties to the lowest ID.
    fn weakest(&self, block: u32) -> u32 {
        *self.blocks[block as usize]
            .iter()
            .min_by_key(|&&v| (self.count[v as usize], v))
            .expect("blocks passed to BNS are non-empty")
    }

    /// Neighbors of `v` that would share block `block` if `leaving` left it.
    fn count_into(&self, v: u32, block: u32, leaving: u32) -> u32 {
        self.graph
            .neighbors(v)
            .iter()
            .filter(|&&w| w != leaving && self.block_of[w as usize] == block)
            .count() as u32
    }

    /// Evaluates swapping the weakest occupants of blocks `a` and `e` and
    /// applies it if their combined OR(G) contribution strictly grows.
    pub(crate) fn try_swap(&mut self, a: u32, e: u32) -> bool {
        debug_assert_ne!(a, e);
        let key = (a.min(e), a.max(e));
        let stamp = (self.version[key.0 as usize], self.version[key.1 as usize]);
        if self.rejected.get(&key) == Some(&stamp) {
            return false;
        }
        let x = self.weakest(a);
        let y = self.weakest(e);

        let mut new_a = Vec::with_capacity(self.geometry.slots_per_block);
        let mut new_e = Vec::with_capacity(self.geometry.slots_per_block);
        let (mut old_sum_a, mut new_sum_a) = (0i64, 0i64);
        for &v in &self.blocks[a as usize] {
            old_sum_a += self.count[v as usize] as i64;
            let c = if v == x {
                self.count_into(y, a, x)
            } else {
                self.count[v as usize] - self.has_edge(v, x) as u32 + self.has_edge(v, y) as u32
            };
            new_sum_a += c as i64;
            new_a.push(c);
        }
        let (mut old_sum_e, mut new_sum_e) = (0i64, 0i64);
        for &v in &self.blocks[e as usize] {
            old_sum_e += self.count[v as usize] as i64;
            let c = if v == y {
                self.count_into(x, e, y)
            } else {
                self.count[v as usize] - self.has_edge(v, y) as u32 + self.has_edge(v, x) as u32
            };
            new_sum_e += c as i64;
            new_e.push(c);
        }

        // A block contributes sum(count) / (|B| - 1) to |V| * OR(G).
        let da = self.blocks[a as usize].len() as i64 - 1;
        let de = self.blocks[e as usize].len() as i64 - 1;
        let improves = match (da > 0, de > 0) {
            (true, true) => (new_sum_a - old_sum_a) * de + (new_sum_e - old_sum_e) * da > 0,
            (true, false) => new_sum_a > old_sum_a,
            (false, true) => new_sum_e > old_sum_e,
            (false, false) => false,
        };
        if !improves {
            self.rejected.insert(key, stamp);
            return false;
        }

        let xs = self.blocks[a as usize].iter().position(|&v| v == x).unwrap();
        let ys = self.blocks[e as usize].iter().position(|&v| v == y).unwrap();
        self.blocks[a as usize][xs] = y;
        self.blocks[e as usize][ys] = x;
        self.block_of[x as usize] = e;
        self.block_of[y as usize] = a;
        for (&v, c) in self.blocks[a as usize].iter().zip(new_a) {
            self.count[v as usize] = c;
        }
        for (&v, c) in self.blocks[e as usize].iter().zip(new_e) {
            self.count[v as usize] = c;
        }
        self.version[a as usize] += 1;
        self.version[e as usize] += 1;
        self.swaps += 1;
        true
    }

    /// One pass over every vertex and every unordered pair of its
    /// neighbors living in different blocks.
    pub(crate) fn iterate(&mut self) {
        let graph = self.graph;
        for u in 0..graph.len() as u32 {
            let nbrs = graph.neighbors(u);
            for i in 0..nbrs.len() {
                for j in i + 1..nbrs.len() {
                    let a = self.block_of[nbrs[i] as usize];
                    let e = self.block_of[nbrs[j] as usize];
                    if a != e {
                        self.try_swap(a, e);
                    }
                }
            }
        }
    }

    pub(crate) fn overlap(&self) -> f64 {
        let total: f64 = self
            .blocks
            .iter()
            .filter(|b| b.len() > 1)
            .map(|b| {
                b.iter().map(|&v| self.count[v as usize] as f64).sum::<f64>() / (b.len() - 1) as f64
            })
            .sum();
        total / self.graph.len() as f64
    }

    pub(crate) fn layout(&self) -> BlockLayout {
        BlockLayout::from_blocks(self.geometry, self.blocks.clone())
            .expect("BNS swaps preserve the bijection")
    }
}

/// Block Neighbor Swap.
///
/// Returns the final layout and OR(G) before the first and after every
/// iteration; the sequence is non-decreasing.
pub fn shuffle_bns(
    graph: &NeighborGraph,
    initial: &BlockLayout,
    max_iterations: usize,
    gain_threshold: f64,
) -> (BlockLayout, Vec<f64>) {
    let mut state = BnsState::new(graph, initial);
    let mut history = vec![state.overlap()];
    for _ in 0..max_iterations {
        state.iterate();
        debug_assert!(state.layout().validate().is_ok());
        let or = state.overlap();
        let gain = or - history.last().copied().unwrap_or(0.0);
        history.push(or);
        if gain < gain_threshold {
            break;
        }
    }
    (state.layout(), history)
}

/// Runs the configured algorithm from the sequential layout.
pub fn shuffle(
    graph: &NeighborGraph,
    geometry: &LayoutGeometry,
    params: &ShuffleParams,
) -> Result<(BlockLayout, ShuffleReport)> {
    params.validate()?;
    if graph.len() != geometry.vertex_count {
        return Err(Error::invalid(format!(
            "graph has {} vertices, geometry expects {}",
            graph.len(),
            geometry.vertex_count
        )));
    }
    let start = Instant::now();
    let (beta, tau) = (params.max_iterations, params.gain_threshold);
    let (layout, history, init) = match params.algorithm {
        ShuffleAlgorithm::Bnp => {
            let layout = shuffle_bnp(graph, geometry);
            let or = or_graph(&layout, graph);
            (layout, vec![or], None)
        }
        ShuffleAlgorithm::Bnf => {
            let (layout, history) = shuffle_bnf(graph, &shuffle_bnp(graph, geometry), beta, tau);
            (layout, history, Some(ShuffleAlgorithm::Bnp))
        }
        ShuffleAlgorithm::Bns => {
            let mut start_layout = shuffle_bnp(graph, geometry);
            if params.init == ShuffleAlgorithm::Bnf {
                start_layout = shuffle_bnf(graph, &start_layout, beta, tau).0;
            }
            let (layout, history) = shuffle_bns(graph, &start_layout, beta, tau);
            (layout, history, Some(params.init))
        }
    };
    let report = ShuffleReport {
        algorithm: params.algorithm,
        init,
        beta,
        beta_used: history.len() - 1,
        tau,
        or_per_iteration: history,
        slots_per_block: geometry.slots_per_block,
        block_count: geometry.block_count,
        elapsed_secs: start.elapsed().as_secs_f64(),
    };
    Ok((layout, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{or_block, or_vertex};

    fn geometry(n: usize, eps: usize) -> LayoutGeometry {
        LayoutGeometry {
            block_size: 4096,
            record_size: 4096 / eps,
            slots_per_block: eps,
            block_count: n.div_ceil(eps),
            vertex_count: n,
        }
    }

    /// 16 vertices, 4 per block, reconstructed to match the worked example:
    /// N(0) = {7, 8, 14}; 7 links to 0, 8 and 12; 8 links to 0; 12 links to
    /// 7 and 8; 13 and 9 are mutual; 14 has no out-edges.
    fn example_graph() -> NeighborGraph {
        let mut adj = vec![Vec::new(); 16];
        adj[0] = vec![7, 8, 14];
        adj[7] = vec![0, 8, 12];
        adj[8] = vec![0];
        adj[12] = vec![7, 8];
        adj[9] = vec![13];
        adj[13] = vec![9];
        NeighborGraph::new(adj, 3, 0).unwrap()
    }

    #[test]
    fn bnp_packs_vertex_with_neighbors() {
        let g = example_graph();
        let layout = shuffle_bnp(&g, &geometry(16, 4));
        assert_eq!(layout.occupants(0), &[0, 7, 8, 14]);
        assert!((or_block(0, &layout, &g) - 0.5).abs() < 1e-12);
        assert_eq!(or_vertex(12, &layout, &g), 0.0);
        assert_eq!(layout.occupants(2), &[5, 6, 9, 13]);
        layout.validate().unwrap();
    }

    #[test]
    fn bnp_without_edges_is_sequential() {
        let g = NeighborGraph::new(vec![Vec::new(); 10], 2, 0).unwrap();
        let geo = geometry(10, 3);
        assert_eq!(shuffle_bnp(&g, &geo), BlockLayout::sequential(geo));
    }

    fn disjoint_cliques(count: usize, size: usize) -> NeighborGraph {
        let adj = (0..count * size)
            .map(|u| {
                let base = u / size * size;
                (base..base + size).filter(|&v| v != u).map(|v| v as u32).collect()
            })
            .collect();
        NeighborGraph::new(adj, size - 1, 0).unwrap()
    }

    #[test]
    fn bnp_on_cliques_is_perfect() {
        let g = disjoint_cliques(5, 4);
        let layout = shuffle_bnp(&g, &geometry(20, 4));
        assert_eq!(or_graph(&layout, &g), 1.0);
    }

    #[test]
    fn bnf_single_iteration_by_hand() {
        let g = example_graph();
        let bnp = shuffle_bnp(&g, &geometry(16, 4));
        let (bnf, history) = shuffle_bnf(&g, &bnp, 1, 0.0);
        // Edge-less vertices fill the lowest non-full block; 7 and 8 find
        // block 0 full and fall through.
        assert_eq!(
            bnf.blocks(),
            &[vec![0, 1, 2, 3], vec![4, 5, 6, 8], vec![9, 10, 11, 12], vec![7, 13, 14, 15]]
        );
        assert_eq!(history.len(), 2);
        assert!((history[1] - or_graph(&bnf, &g)).abs() < 1e-12);
    }

    #[test]
    fn bnf_improves_scrambled_cliques() {
        let g = disjoint_cliques(30, 4);
        let geo = geometry(120, 4);
        let order: Vec<u32> = (0..120u32).map(|v| v * 7 % 120).collect();
        let blocks = order.chunks(4).map(<[u32]>::to_vec).collect();
        let scrambled = BlockLayout::from_blocks(geo, blocks).unwrap();
        let (out, history) = shuffle_bnf(&g, &scrambled, 8, 0.0);
        out.validate().unwrap();
        assert!(history.last().unwrap() > &history[0], "{history:?}");
    }

    #[test]
    fn example_block_after_bnf_move() {
        let g = example_graph();
        let layout = BlockLayout::from_blocks(
            geometry(16, 4),
            vec![vec![0, 7, 8, 12], vec![1, 2, 3, 4], vec![5, 6, 10, 11], vec![9, 13, 14, 15]],
        )
        .unwrap();
        assert!((or_block(0, &layout, &g) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bnf_fixed_point_on_perfect_layout() {
        let g = disjoint_cliques(4, 3);
        let layout = BlockLayout::sequential(geometry(12, 3));
        let (out, history) = shuffle_bnf(&g, &layout, 8, 0.01);
        assert_eq!(out, layout);
        // Two passes: the gain test needs a pair of passes to compare.
        assert_eq!(history, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn bns_swaps_lowest_overlap_vertices() {
        let g = example_graph();
        let layout = BlockLayout::from_blocks(
            geometry(16, 4),
            vec![vec![0, 7, 8, 14], vec![1, 2, 3, 4], vec![5, 6, 10, 11], vec![9, 12, 13, 15]],
        )
        .unwrap();
        let mut state = BnsState::new(&g, &layout);
        // Blocks of neighbors 0 and 12 of vertex 7.
        assert!(state.try_swap(0, 3));
        let after = state.layout();
        assert_eq!(after.block_of(12), 0);
        assert_eq!(after.block_of(14), 3);
        assert!((or_block(0, &after, &g) - 2.0 / 3.0).abs() < 1e-12);
        assert!((or_block(3, &after, &g) - 1.0 / 6.0).abs() < 1e-12);
        assert!((state.overlap() - or_graph(&after, &g)).abs() < 1e-12);
    }

    #[test]
    fn bns_leaves_perfect_layout_alone() {
        let g = disjoint_cliques(4, 3);
        let layout = BlockLayout::sequential(geometry(12, 3));
        let mut state = BnsState::new(&g, &layout);
        state.iterate();
        assert_eq!(state.swaps, 0);
        assert_eq!(state.layout(), layout);
    }

    #[test]
    fn shuffle_reports_history() {
        let g = example_graph();
        let params = ShuffleParams { algorithm: ShuffleAlgorithm::Bns, ..Default::default() };
        let (layout, report) = shuffle(&g, &geometry(16, 4), &params).unwrap();
        assert_eq!(report.or_per_iteration.len(), report.beta_used + 1);
        assert_eq!(*report.or_per_iteration.last().unwrap(), or_graph(&layout, &g));
        assert!(report.or_per_iteration.windows(2).all(|w| w[1] >= w[0]));
        let bad = ShuffleParams { max_iterations: 0, ..Default::default() };
        assert!(shuffle(&g, &geometry(16, 4), &bad).is_err());
    }

    #[test]
    fn algorithm_names_parse() {
        assert_eq!("BNF".parse::<ShuffleAlgorithm>().unwrap(), ShuffleAlgorithm::Bnf);
        assert!("gp1".parse::<ShuffleAlgorithm>().is_err());
        assert_eq!(ShuffleAlgorithm::Bns.to_string(), "bns");
    }
}
