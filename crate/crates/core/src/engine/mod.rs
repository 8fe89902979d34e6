//! Query engine: block search over the on-disk graph.
//!
//! Each step takes the closest unvisited candidate (the target), reads its
//! block, and besides the target also processes the pruned-in occupants
//! B′: the `⌈(ε − 1)·σ⌉` closest unvisited co-occupants by exact
//! distance. The target and B′ enter the result set with exact distances;
//! their neighbors enter the candidate set with PQ distances.
//!
//! With pipelining the next target is chosen right after the current
//! target's expansion and B′ selection, and its block read runs on a
//! helper thread while B′ is processed. Sequential mode uses the same
//! selection point, so both modes return identical results.

mod sets;

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{distance_unchecked, Metric, Neighbor, VectorRef};
use crate::diskindex::{DiskIndex, LoadedBlock};
use crate::graph::NavigationGraph;
use crate::pq::{approx_distance, DistanceTable, PqIndex};
use crate::{Error, Result};

pub use sets::{Candidate, CandidateSet, Insert, KickedPool, ResultSet};

/// Smallest positive pruning ratio; selects no co-occupants, so every
/// block read serves only its target.
pub const TARGET_ONLY_SIGMA: f64 = f64::MIN_POSITIVE;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub k: usize,
    /// Γ, candidate-set capacity for ANNS.
    pub gamma: usize,
    /// σ ∈ (0, 1], share of co-occupants processed per block.
    pub sigma: f64,
    /// E, entry points taken from the navigation graph.
    pub entries: usize,
    pub nav_list_size: usize,
    /// W, target blocks read per round.
    pub beam_width: usize,
    /// Range-search radius, in distance units (squared for L2).
    pub radius: f32,
    /// φ, result-to-capacity ratio that triggers a capacity doubling.
    pub phi: f64,
    /// Γ₀, initial range-search capacity.
    pub initial_capacity: usize,
    pub max_doublings: usize,
    pub pipeline: bool,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            k: 10,
            gamma: 128,
            sigma: 0.3,
            entries: 8,
            nav_list_size: 32,
            beam_width: 1,
            radius: 0.0,
            phi: 0.5,
            initial_capacity: 100,
            max_doublings: 10,
            pipeline: false,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.gamma < self.k {
            return Err(Error::invalid(format!("need Γ = {} >= k = {} >= 1", self.gamma, self.k)));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::invalid(format!("pruning ratio {} outside (0, 1]", self.sigma)));
        }
        if !(self.phi > 0.0 && self.phi <= 1.0) {
            return Err(Error::invalid(format!("ratio threshold {} outside (0, 1]", self.phi)));
        }
        if self.entries == 0 || self.beam_width == 0 || self.initial_capacity == 0 {
            return Err(Error::invalid("entry count, beam width and initial capacity must be >= 1"));
        }
        if self.nav_list_size == 0 {
            return Err(Error::invalid("navigation list size must be >= 1"));
        }
        Ok(())
    }
}

/// Number of co-occupants processed per block: `⌈(ε − 1)·σ⌉`.
pub fn pruned_count(slots_per_block: usize, sigma: f64) -> usize {
    let others = slots_per_block.saturating_sub(1);
    let raw = (others as f64 * sigma - 1e-9).ceil();
    (raw.max(0.0) as usize).min(others)
}

/// Per-query counters and timers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Block reads.
    pub io_count: u64,
    /// ℓ, target vertices expanded. Each costs a block read unless an
    /// earlier step already loaded its block.
    pub hops: u64,
    /// Sum over explored blocks of `1 + |B′|`.
    pub xi_processed: u64,
    /// Number of explored blocks.
    pub xi_samples: u64,
    pub slots_per_block: u64,
    pub exact_distances: u64,
    pub approx_distances: u64,
    pub t_io: f64,
    pub t_comp: f64,
    pub t_other: f64,
    pub t_total: f64,
    /// Range search: capacity doublings performed.
    pub doublings: u64,
    /// Whether block reads bypassed the page cache.
    pub direct_io: bool,
}

impl SearchStats {
    /// ξ, mean share of a block's slots processed per explored block.
    pub fn mean_xi(&self) -> f64 {
        if self.xi_samples == 0 {
            return 0.0;
        }
        self.xi_processed as f64 / (self.xi_samples * self.slots_per_block) as f64
    }
}

/// Entry points for `query`: greedy search on the navigation graph, the
/// `count` best hits mapped to base IDs.
pub fn nav_entry_points(
    nav: &NavigationGraph,
    query: VectorRef<'_>,
    list_size: usize,
    count: usize,
) -> Result<Vec<u32>> {
    nav.entry_points(query, list_size, count)
}

/// Loaded artifacts for answering queries. Cheap to share across threads.
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    index: &'a DiskIndex,
    pq: &'a PqIndex,
    nav: Option<&'a NavigationGraph>,
}

impl<'a> Engine<'a> {
    /// Without a navigation graph every query starts at the index's entry
    /// vertex.
    pub fn new(index: &'a DiskIndex, pq: &'a PqIndex, nav: Option<&'a NavigationGraph>) -> Result<Self> {
        let n = index.len();
        if pq.len() != n || pq.codebook.dim() != index.dim() {
            return Err(Error::invalid(format!(
                "PQ codes cover {} vectors of dim {}, index has {n} of dim {}",
                pq.len(),
                pq.codebook.dim(),
                index.dim()
            )));
        }
        if pq.codebook.metric() != index.metric() {
            return Err(Error::invalid("PQ codebook and index use different metrics"));
        }
        if let Some(nav) = nav {
            if nav.data().dim() != index.dim() || nav.max_base_id() as usize >= n {
                return Err(Error::invalid("navigation graph does not belong to this index"));
            }
        }
        Ok(Self { index, pq, nav })
    }

    pub fn index(&self) -> &DiskIndex {
        self.index
    }

    pub fn has_navigation(&self) -> bool {
        self.nav.is_some()
    }

    pub fn entry_points(&self, query: VectorRef<'_>, params: &SearchParams) -> Result<Vec<u32>> {
        match self.nav {
            Some(nav) => nav_entry_points(nav, query, params.nav_list_size, params.entries),
            None => Ok(vec![self.index.entry()]),
        }
    }

    fn check_query(&self, query: VectorRef<'_>, params: &SearchParams) -> Result<()> {
        params.validate()?;
        if query.len() != self.index.dim() {
            return Err(Error::DimensionMismatch { expected: self.index.dim(), got: query.len() });
        }
        Ok(())
    }

    /// Top-`k` by exact distance, ties by ID.
    pub fn search_ann(&self, query: VectorRef<'_>, params: &SearchParams) -> Result<(Vec<Neighbor>, SearchStats)> {
        self.check_query(query, params)?;
        if params.k > self.index.len() {
            return Err(Error::invalid(format!("k = {} exceeds n = {}", params.k, self.index.len())));
        }
        self.run(query, params, None)
            .map(|(results, stats)| (results.top(params.k), stats))
    }

    /// Every found vertex within `params.radius`, ascending.
    pub fn search_range(&self, query: VectorRef<'_>, params: &SearchParams) -> Result<(Vec<Neighbor>, SearchStats)> {
        self.check_query(query, params)?;
        let r = params.radius;
        if r.is_nan() || (self.index.metric() == Metric::L2 && r < 0.0) {
            return Err(Error::invalid(format!("radius {r} is not valid for this metric")));
        }
        self.run(query, params, Some(r)).map(|(results, stats)| (results.sorted(), stats))
    }

    fn run(&self, query: VectorRef<'_>, params: &SearchParams, radius: Option<f32>) -> Result<(ResultSet, SearchStats)> {
        let start = Instant::now();
        let mut state = QueryState::new(self, query, params, radius)?;
        if params.pipeline {
            let index = self.index;
            std::thread::scope(|s| {
                let (req_tx, req_rx) = mpsc::channel::<u32>();
                let (resp_tx, resp_rx) = mpsc::channel();
                s.spawn(move || {
                    for b in req_rx {
                        if resp_tx.send((b, index.read_block(b))).is_err() {
                            break;
                        }
                    }
                });
                let mut fetch = Fetcher::Pipelined { requests: req_tx, responses: resp_rx };
                state.execute(&mut fetch)
            })?;
        } else {
            state.execute(&mut Fetcher::Direct)?;
        }
        let mut stats = state.stats;
        stats.t_total = start.elapsed().as_secs_f64();
        stats.t_other = (stats.t_total - stats.t_io - stats.t_comp).max(0.0);
        Ok((state.results, stats))
    }
}

enum Fetcher {
    Direct,
    Pipelined {
        requests: mpsc::Sender<u32>,
        responses: mpsc::Receiver<(u32, Result<LoadedBlock>)>,
    },
}

/// B′ member awaiting processing: slot position and exact distance.
struct Pruned {
    block: u32,
    pos: usize,
    id: u32,
    dist: f32,
}

struct QueryState<'e, 'q> {
    engine: &'e Engine<'e>,
    params: &'e SearchParams,
    query: VectorRef<'q>,
    table: DistanceTable,
    metric: Metric,
    pruned: usize,
    radius: Option<f32>,
    candidates: CandidateSet,
    results: ResultSet,
    kicked: Option<KickedPool>,
    visited: HashSet<u32>,
    cache: HashMap<u32, Rc<LoadedBlock>>,
    in_flight: HashSet<u32>,
    stats: SearchStats,
}

impl<'e, 'q> QueryState<'e, 'q> {
    fn new(
        engine: &'e Engine<'e>,
        query: VectorRef<'q>,
        params: &'e SearchParams,
        radius: Option<f32>,
    ) -> Result<Self> {
        let index = engine.index;
        let eps = index.header().slots_per_block as usize;
        let capacity = if radius.is_some() { params.initial_capacity } else { params.gamma };
        let t = Instant::now();
        let table = engine.pq.codebook.distance_table(query)?;
        let stats = SearchStats {
            slots_per_block: eps as u64,
            direct_io: index.is_direct(),
            t_comp: t.elapsed().as_secs_f64(),
            ..Default::default()
        };
        Ok(Self {
            engine,
            params,
            query,
            table,
            metric: index.metric(),
            pruned: pruned_count(eps, params.sigma),
            radius,
            candidates: CandidateSet::new(capacity),
            results: ResultSet::new(),
            kicked: radius.map(|_| KickedPool::new()),
            visited: HashSet::new(),
            cache: HashMap::new(),
            in_flight: HashSet::new(),
            stats,
        })
    }

    fn execute(&mut self, fetch: &mut Fetcher) -> Result<()> {
        self.seed()?;
        self.explore(fetch)?;
        if self.radius.is_none() {
            return Ok(());
        }
        while (self.stats.doublings as usize) < self.params.max_doublings {
            let ratio = self.results.len() as f64 / self.candidates.capacity() as f64;
            if ratio < self.params.phi {
                break;
            }
            let capacity = self.candidates.capacity() * 2;
            self.candidates.grow(capacity);
            self.stats.doublings += 1;
            let visited = &self.visited;
            let moved = self
                .kicked
                .as_mut()
                .expect("range search keeps a kicked pool")
                .refill(&mut self.candidates, |id| !visited.contains(&id));
            if moved == 0 && !self.candidates.has_unvisited() {
                break;
            }
            self.explore(fetch)?;
        }
        Ok(())
    }

    #[inline]
    fn exact(&mut self, v: VectorRef<'_>) -> f32 {
        self.stats.exact_distances += 1;
        distance_unchecked(self.query, v, self.metric)
    }

    fn admit(&mut self, id: u32, dist: f32) {
        if self.radius.is_none_or(|r| dist <= r) {
            self.results.insert(id, dist);
        }
    }

    fn push_candidate(&mut self, id: u32) {
        if self.visited.contains(&id) || self.candidates.contains(id) {
            return;
        }
        self.stats.approx_distances += 1;
        let d = approx_distance(&self.table, self.engine.pq.codes.get(id as usize));
        let outcome = self.candidates.insert(id, d);
        let Some(pool) = self.kicked.as_mut() else {
            return;
        };
        match outcome {
            Insert::Added => pool.remove(id),
            Insert::AddedEvicting(out) => {
                pool.remove(id);
                if !out.visited {
                    pool.insert(out.id, out.dist);
                }
            }
            Insert::Rejected => pool.insert(id, d),
            Insert::Duplicate => {}
        }
    }

    fn push_neighbors(&mut self, block: &LoadedBlock, pos: usize) {
        for &v in block.neighbors(pos) {
            self.push_candidate(v);
        }
    }

    /// Seeds C with the entry points. Navigation entries also enter R: the
    /// sample keeps their vectors in memory, so no block read is needed.
    /// The fallback entry vertex is read when it becomes the first target.
    fn seed(&mut self) -> Result<()> {
        let Some(nav) = self.engine.nav else {
            self.push_candidate(self.engine.index.entry());
            return Ok(());
        };
        let t = Instant::now();
        let entries = nav.entry_neighbors(self.query, self.params.nav_list_size, self.params.entries)?;
        for e in entries {
            self.push_candidate(e.id);
            self.admit(e.id, e.dist);
        }
        self.stats.t_comp += t.elapsed().as_secs_f64();
        Ok(())
    }

    fn pick(&mut self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.params.beam_width);
        while out.len() < self.params.beam_width {
            let Some(c) = self.candidates.pop_unvisited() else {
                break;
            };
            self.visited.insert(c.id);
            out.push(c.id);
        }
        out
    }

    fn explore(&mut self, fetch: &mut Fetcher) -> Result<()> {
        let mut targets = self.pick();
        while !targets.is_empty() {
            let mut pruned = Vec::new();
            for &t in &targets {
                let b = self.engine.index.block_of(t);
                self.load(b, fetch)?;
                self.expand_target(b, t, &mut pruned)?;
            }
            let next = self.pick();
            if matches!(fetch, Fetcher::Pipelined { .. }) {
                for &n in &next {
                    let b = self.engine.index.block_of(n);
                    self.prefetch(b, fetch)?;
                }
            }
            let t = Instant::now();
            for p in &pruned {
                self.admit(p.id, p.dist);
                let block = Rc::clone(&self.cache[&p.block]);
                self.push_neighbors(&block, p.pos);
            }
            self.stats.t_comp += t.elapsed().as_secs_f64();
            targets = if next.is_empty() { self.pick() } else { next };
        }
        Ok(())
    }

    /// Exact distance and neighbor expansion for the target, then B′
    /// selection. B′ members are marked visited immediately.
    fn expand_target(&mut self, b: u32, target: u32, pruned: &mut Vec<Pruned>) -> Result<()> {
        let block = Rc::clone(&self.cache[&b]);
        let pos = block
            .position(target)
            .ok_or_else(|| Error::Corrupt(format!("vertex {target} missing from block {b}")))?;
        let t = Instant::now();
        if !self.results.contains(target) {
            let d = self.exact(block.vector(pos));
            self.admit(target, d);
        }
        self.push_neighbors(&block, pos);
        let mut chosen = 0;
        if self.pruned > 0 {
            let mut others: Vec<Pruned> = Vec::with_capacity(block.len());
            for (i, &v) in block.occupants().iter().enumerate() {
                if i != pos && !self.visited.contains(&v) {
                    let dist = self.exact(block.vector(i));
                    others.push(Pruned { block: b, pos: i, id: v, dist });
                }
            }
            others.sort_unstable_by(|a, b| a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id)));
            others.truncate(self.pruned);
            for p in &others {
                self.visited.insert(p.id);
                self.candidates.mark_visited(p.id);
            }
            chosen = others.len();
            pruned.extend(others);
        }
        self.stats.hops += 1;
        self.stats.xi_processed += 1 + chosen as u64;
        self.stats.xi_samples += 1;
        self.stats.t_comp += t.elapsed().as_secs_f64();
        Ok(())
    }


    fn prefetch(&mut self, b: u32, fetch: &mut Fetcher) -> Result<()> {
        if self.cache.contains_key(&b) || self.in_flight.contains(&b) {
            return Ok(());
        }
        if let Fetcher::Pipelined { requests, .. } = fetch {
            requests
                .send(b)
                .map_err(|_| Error::Io(std::io::Error::other("block reader thread stopped")))?;
            self.in_flight.insert(b);
            self.stats.io_count += 1;
        }
        Ok(())
    }

    fn load(&mut self, b: u32, fetch: &mut Fetcher) -> Result<()> {
        if self.cache.contains_key(&b) {
            return Ok(());
        }
        let t = Instant::now();
        match fetch {
            Fetcher::Direct => {
                let block = self.engine.index.read_block(b)?;
                self.stats.io_count += 1;
                self.cache.insert(b, Rc::new(block));
            }
            Fetcher::Pipelined { requests, responses } => {
                if !self.in_flight.contains(&b) {
                    requests
                        .send(b)
                        .map_err(|_| Error::Io(std::io::Error::other("block reader thread stopped")))?;
                    self.in_flight.insert(b);
                    self.stats.io_count += 1;
                }
                loop {
                    let (got, block) = responses
                        .recv()
                        .map_err(|_| Error::Io(std::io::Error::other("block reader thread stopped")))?;
                    self.in_flight.remove(&got);
                    self.cache.insert(got, Rc::new(block?));
                    if got == b {
                        break;
                    }
                }
            }
        }
        self.stats.t_io += t.elapsed().as_secs_f64();
        Ok(())
    }
}

#[cfg(test)]
mod tests;
