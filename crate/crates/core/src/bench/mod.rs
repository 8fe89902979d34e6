//! Accuracy metrics, the query harness and build-cost reporting.

mod build;
mod harness;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dataset::Neighbor;
use crate::{Error, Result};

pub use build::{build_index, BuildConfig, BuildOutput, BuildSummary, IndexArtifacts};
pub use harness::{
    io_at_recall, run_benchmark, run_queries, sweep_gamma, BenchmarkConfig, EvalReport, QueryRun,
    SearchMode, SweepPoint,
};

/// Share of `truth[..k]` found in `results[..k]`, per query.
pub fn recall_per_query(results: &[Vec<u32>], truth: &[Vec<u32>], k: usize) -> Result<Vec<f64>> {
    if results.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} result lists for {} ground-truth lists",
            results.len(),
            truth.len()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    results
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(q, (r, t))| {
            if r.len() < k || t.len() < k {
                return Err(Error::invalid(format!(
                    "query {q}: {} results and {} truth entries, need {k}",
                    r.len(),
                    t.len()
                )));
            }
            let want: HashSet<u32> = t[..k].iter().copied().collect();
            Ok(r[..k].iter().filter(|id| want.contains(id)).count() as f64 / k as f64)
        })
        .collect()
}

/// Mean recall@k over queries.
pub fn eval_recall(results: &[Vec<u32>], truth: &[Vec<u32>], k: usize) -> Result<f64> {
    let per = recall_per_query(results, truth, k)?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

/// Range-search accuracy over a query batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub mean: f64,
    /// `None` for queries left out of the mean.
    pub per_query: Vec<Option<f64>>,
    /// Queries with no true neighbors but a non-empty result.
    pub excluded: usize,
}

/// Found share of every true in-range vertex, averaged over queries.
///
/// Every returned distance must be within `radius`; otherwise the result is
/// unsound and an error names the offending vertex. A query with an empty
/// truth counts 1.0 when its result is empty too and is excluded otherwise.
pub fn eval_ap(results: &[Vec<Neighbor>], truth: &[Vec<u32>], radius: f32) -> Result<ApReport> {
    if results.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} result lists for {} ground-truth lists",
            results.len(),
            truth.len()
        )));
    }
    let mut per_query = Vec::with_capacity(results.len());
    let mut excluded = 0;
    for (r, t) in results.iter().zip(truth) {
        if let Some(bad) = r.iter().find(|n| !(n.dist <= radius)) {
            return Err(Error::Unsound { id: bad.id, dist: bad.dist, radius });
        }
        if t.is_empty() {
            if r.is_empty() {
                per_query.push(Some(1.0));
            } else {
                excluded += 1;
                per_query.push(None);
            }
            continue;
        }
        let want: HashSet<u32> = t.iter().copied().collect();
        let found: HashSet<u32> = r.iter().map(|n| n.id).filter(|id| want.contains(id)).collect();
        per_query.push(Some(found.len() as f64 / want.len() as f64));
    }
    let counted: Vec<f64> = per_query.iter().flatten().copied().collect();
    let mean = if counted.is_empty() { 0.0 } else { counted.iter().sum::<f64>() / counted.len() as f64 };
    Ok(ApReport { mean, per_query, excluded })
}

/// Build time per phase (seconds) and resident/disk footprint (bytes).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexCostReport {
    pub t_disk_graph: f64,
    pub t_shuffling: f64,
    pub t_memory_graph: f64,
    pub t_pq: f64,
    pub t_total: f64,
    pub nav_graph_bytes: u64,
    pub location_map_bytes: u64,
    pub pq_bytes: u64,
    pub memory_total_bytes: u64,
    pub disk_bytes: u64,
}

/// Fills in the totals from the per-phase parts.
#[allow(clippy::too_many_arguments)]
pub fn report_index_costs(
    t_disk_graph: f64,
    t_shuffling: f64,
    t_memory_graph: f64,
    t_pq: f64,
    nav_graph_bytes: u64,
    location_map_bytes: u64,
    pq_bytes: u64,
    disk_bytes: u64,
) -> IndexCostReport {
    IndexCostReport {
        t_disk_graph,
        t_shuffling,
        t_memory_graph,
        t_pq,
        t_total: t_disk_graph + t_shuffling + t_memory_graph + t_pq,
        nav_graph_bytes,
        location_map_bytes,
        pq_bytes,
        memory_total_bytes: nav_graph_bytes + location_map_bytes + pq_bytes,
        disk_bytes,
    }
}

impl IndexCostReport {
    /// Shuffling time relative to graph construction.
    pub fn shuffle_share(&self) -> f64 {
        if self.t_disk_graph > 0.0 {
            self.t_shuffling / self.t_disk_graph
        } else {
            0.0
        }
    }
}
