//! Vamana-style graph construction.

use std::collections::HashSet;
use std::sync::RwLock;

use log::debug;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{beam_search, reachable_from, NeighborGraph};
use crate::dataset::{distance_unchecked, Metric, Neighbor, VectorDataset};
use crate::{Error, Result};

/// Graph geometry is always L2. Inner-product datasets are linked by
/// Euclidean proximity and only searched under their own metric.
const BUILD_METRIC: Metric = Metric::L2;

const MEDOID_SAMPLE: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct BuildParams {
    /// Degree cap (Λ).
    pub max_degree: usize,
    /// Candidate list size during insertion (L).
    pub list_size: usize,
    /// Prune slack for the second pass; the first pass always uses 1.0.
    pub alpha: f32,
    pub seed: u64,
    /// Worker threads. 1 gives a deterministic serial build, 0 uses all cores.
    pub threads: usize,
    /// In the α > 1 pass, top pruned lists back up to `max_degree` with the
    /// nearest candidates the prune dropped.
    pub saturate: bool,
}

impl BuildParams {
    pub fn new(max_degree: usize, list_size: usize) -> Self {
        Self { max_degree, list_size, alpha: 1.2, seed: 0, threads: 1, saturate: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_degree == 0 {
            return Err(Error::invalid("max degree must be at least 1"));
        }
        if self.list_size < self.max_degree {
            return Err(Error::invalid(format!(
                "build list size {} is below the max degree {}",
                self.list_size, self.max_degree
            )));
        }
        if !(self.alpha >= 1.0) {
            return Err(Error::invalid(format!("alpha {} must be >= 1", self.alpha)));
        }
        Ok(())
    }
}

/// α-pruning over candidates sorted by ascending distance to the vertex
/// being linked.
///
/// Keeps the nearest remaining candidate `c` and drops every later `d` with
/// `alpha * dist(c, d) <= dist(p, d)`, stopping at `max_degree` kept.
/// An infinite `alpha` disables pruning and simply truncates.
pub fn robust_prune(
    candidates: &[Neighbor],
    max_degree: usize,
    alpha: f32,
    pair_distance: impl Fn(u32, u32) -> f32,
) -> Vec<u32> {
    let mut kept = Vec::with_capacity(max_degree.min(candidates.len()));
    if alpha.is_infinite() {
        kept.extend(candidates.iter().take(max_degree).map(|c| c.id));
        return kept;
    }
    let mut dropped = vec![false; candidates.len()];
    for i in 0..candidates.len() {
        if kept.len() == max_degree {
            break;
        }
        if dropped[i] {
            continue;
        }
        let c = candidates[i];
        kept.push(c.id);
        for j in i + 1..candidates.len() {
            if !dropped[j] && alpha * pair_distance(c.id, candidates[j].id) <= candidates[j].dist {
                dropped[j] = true;
            }
        }
    }
    kept
}

/// The vertex with the smallest summed distance to a fixed-seed sample of
/// up to 1,000 points (all points when `n <= 1000`). Ties go to the lower ID.
pub fn medoid(data: &VectorDataset, seed: u64) -> u32 {
    let n = data.len();
    let sample: Vec<usize> = if n <= MEDOID_SAMPLE {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d65_646f_6964);
        index::sample(&mut rng, n, MEDOID_SAMPLE).into_vec()
    };
    (0..n)
        .into_par_iter()
        .map(|v| {
            let x = data.get(v);
            let total: f64 = sample
                .iter()
                .map(|&s| distance_unchecked(x, data.get(s), BUILD_METRIC) as f64)
                .sum();
            (total, v as u32)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, v)| v)
        .expect("dataset is non-empty")
}

struct Builder<'a> {
    data: &'a VectorDataset,
    adjacency: Vec<RwLock<Vec<u32>>>,
    entry: u32,
    max_degree: usize,
    list_size: usize,
    saturate: bool,
}

impl Builder<'_> {
    #[inline]
    fn dist(&self, a: u32, b: u32) -> f32 {
        distance_unchecked(self.data.get(a as usize), self.data.get(b as usize), BUILD_METRIC)
    }

    fn prune(&self, pool: &[Neighbor], alpha: f32) -> Vec<u32> {
        let mut kept = robust_prune(pool, self.max_degree, alpha, |a, b| self.dist(a, b));
        if self.saturate && alpha > 1.0 && kept.len() < self.max_degree {
            for c in pool {
                if kept.len() == self.max_degree {
                    break;
                }
                if !kept.contains(&c.id) {
                    kept.push(c.id);
                }
            }
        }
        kept
    }

    fn insert(&self, p: u32, alpha: f32, scratch: &mut Vec<u32>) {
        let outcome = beam_search(
            &[self.entry],
            self.data,
            self.data.get(p as usize),
            BUILD_METRIC,
            self.list_size,
            1,
            |u, out| {
                out.clear();
                out.extend_from_slice(&self.adjacency[u as usize].read().unwrap());
            },
            scratch,
        );
        let mut seen: HashSet<u32> = HashSet::with_capacity(outcome.visited.len() + self.max_degree);
        seen.insert(p);
        let mut pool: Vec<Neighbor> = Vec::with_capacity(outcome.visited.len() + self.max_degree);
        for n in outcome.visited {
            if seen.insert(n.id) {
                pool.push(n);
            }
        }
        let current = self.adjacency[p as usize].read().unwrap().clone();
        for v in current {
            if seen.insert(v) {
                pool.push(Neighbor::new(v, self.dist(p, v)));
            }
        }
        pool.sort_unstable_by(Neighbor::cmp_by_dist);
        let linked = self.prune(&pool, alpha);
        *self.adjacency[p as usize].write().unwrap() = linked.clone();

        for q in linked {
            let mut list = self.adjacency[q as usize].write().unwrap();
            if list.contains(&p) {
                continue;
            }
            if list.len() < self.max_degree {
                list.push(p);
                continue;
            }
            let mut pool: Vec<Neighbor> =
                list.iter().chain([&p]).map(|&v| Neighbor::new(v, self.dist(q, v))).collect();
            pool.sort_unstable_by(Neighbor::cmp_by_dist);
            *list = self.prune(&pool, alpha);
        }
    }

    /// Links every vertex the entry cannot reach from its nearest reachable
    /// vertex, preferring ones with spare degree.
    fn repair_reachability(&self) {
        let n = self.data.len();
        let mut scratch = Vec::new();
        for _round in 0..n {
            let snapshot: Vec<Vec<u32>> =
                self.adjacency.iter().map(|l| l.read().unwrap().clone()).collect();
            let reached = reachable_from(self.entry, n, |u| &snapshot[u as usize]);
            let Some(orphan) = reached.iter().position(|r| !r) else {
                return;
            };
            let orphan = orphan as u32;
            let outcome = beam_search(
                &[self.entry],
                self.data,
                self.data.get(orphan as usize),
                BUILD_METRIC,
                self.list_size,
                1,
                |u, out| {
                    out.clear();
                    out.extend_from_slice(&snapshot[u as usize]);
                },
                &mut scratch,
            );
            let mut near = outcome.visited;
            near.sort_unstable_by(Neighbor::cmp_by_dist);
            let host = near
                .iter()
                .find(|h| snapshot[h.id as usize].len() < self.max_degree)
                .unwrap_or(&near[0])
                .id;
            let mut list = self.adjacency[host as usize].write().unwrap();
            if list.len() == self.max_degree {
                // Replace the host's farthest link.
                let far = (0..list.len())
                    .max_by(|&a, &b| {
                        self.dist(host, list[a]).total_cmp(&self.dist(host, list[b]))
                    })
                    .unwrap();
                list[far] = orphan;
            } else {
                list.push(orphan);
            }
            debug!("linked unreachable vertex {orphan} from {host}");
        }
    }
}

/// Builds a degree-capped proximity graph over `data`.
///
/// Two insertion passes over a seeded random permutation: the first with
/// α = 1, the second with `params.alpha`. Reverse edges that overflow the
/// cap re-prune the receiving vertex. The entry vertex is the medoid.
pub fn build_vamana(data: &VectorDataset, params: &BuildParams) -> Result<NeighborGraph> {
    params.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 vectors to build a graph, got {n}")));
    }
    if n > u32::MAX as usize {
        return Err(Error::invalid("vertex count exceeds 32-bit IDs"));
    }
    let entry = medoid(data, params.seed);
    let builder = Builder {
        data,
        adjacency: (0..n).map(|_| RwLock::new(Vec::new())).collect(),
        entry,
        max_degree: params.max_degree,
        list_size: params.list_size,
        saturate: params.saturate,
    };
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    for alpha in [1.0, params.alpha] {
        if params.threads == 1 {
            let mut scratch = Vec::new();
            for &p in &order {
                builder.insert(p, alpha, &mut scratch);
            }
        } else {
            pool.install(|| {
                order.par_iter().for_each_init(Vec::new, |scratch, &p| {
                    builder.insert(p, alpha, scratch)
                })
            });
        }
    }
    builder.repair_reachability();

    let adjacency = builder.adjacency.into_iter().map(|l| l.into_inner().unwrap()).collect();
    NeighborGraph::new(adjacency, params.max_degree, entry)
}
