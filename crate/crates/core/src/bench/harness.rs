use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{eval_ap, recall_per_query};
use crate::dataset::{GroundTruth, Neighbor, QuerySet};
use crate::engine::{Engine, SearchParams, SearchStats};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Knn,
    Range,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub mode: SearchMode,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub repetitions: usize,
    /// Seed for the query execution order.
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { mode: SearchMode::Knn, threads: 1, repetitions: 3, seed: 0 }
    }
}

/// Raw output of one pass over a query batch, indexed by query.
#[derive(Clone, Debug)]
pub struct QueryRun {
    pub results: Vec<Vec<Neighbor>>,
    pub stats: Vec<SearchStats>,
    pub latencies: Vec<f64>,
    pub wall_secs: f64,
}

impl QueryRun {
    pub fn ids(&self) -> Vec<Vec<u32>> {
        self.results.iter().map(|r| r.iter().map(|n| n.id).collect()).collect()
    }

    pub fn mean_ios(&self) -> f64 {
        mean(self.stats.iter().map(|s| s.io_count as f64))
    }

    pub fn mean_hops(&self) -> f64 {
        mean(self.stats.iter().map(|s| s.hops as f64))
    }

    /// Block-weighted ξ over the whole batch.
    pub fn mean_xi(&self) -> f64 {
        let processed: u64 = self.stats.iter().map(|s| s.xi_processed).sum();
        let slots: u64 = self.stats.iter().map(|s| s.xi_samples * s.slots_per_block).sum();
        if slots == 0 {
            0.0
        } else {
            processed as f64 / slots as f64
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Runs every query once in a seeded random order on a `threads`-worker
/// pool.
pub fn run_queries(
    engine: &Engine<'_>,
    queries: &QuerySet,
    params: &SearchParams,
    mode: SearchMode,
    threads: usize,
    seed: u64,
) -> Result<QueryRun> {
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {threads} workers: {e}")))?;
    let start = Instant::now();
    let outcomes: Vec<(usize, Result<(Vec<Neighbor>, SearchStats)>, f64)> = pool.install(|| {
        order
            .par_iter()
            .with_max_len(1)
            .map(|&q| {
                let t = Instant::now();
                let out = match mode {
                    SearchMode::Knn => engine.search_ann(queries.get(q), params),
                    SearchMode::Range => engine.search_range(queries.get(q), params),
                };
                (q, out, t.elapsed().as_secs_f64())
            })
            .collect()
    });
    let wall_secs = start.elapsed().as_secs_f64();
    let n = queries.len();
    let mut results = vec![Vec::new(); n];
    let mut stats = vec![SearchStats::default(); n];
    let mut latencies = vec![0.0; n];
    for (q, out, latency) in outcomes {
        let (r, s) = out?;
        results[q] = r;
        stats[q] = s;
        latencies[q] = latency;
    }
    Ok(QueryRun { results, stats, latencies, wall_secs })
}

/// Aggregated benchmark result, serialized as the search stats JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: SearchMode,
    pub queries: usize,
    pub threads: usize,
    pub repetitions: usize,
    /// Mean recall@k (k-NN mode with ground truth).
    pub recall: Option<f64>,
    /// Mean AP (range mode with ground truth).
    pub ap: Option<f64>,
    pub per_query_accuracy: Vec<Option<f64>>,
    /// Range queries left out of AP: empty truth, non-empty result.
    pub excluded_queries: usize,
    /// Median over repetitions.
    pub qps: f64,
    pub qps_mean: f64,
    /// Wall-clock seconds of the repetition reported in `qps`.
    pub wall_secs: f64,
    /// Median over repetitions of the per-query mean latency.
    pub mean_latency_ms: f64,
    pub mean_latency_ms_mean: f64,
    pub mean_ios: f64,
    pub mean_hops: f64,
    pub mean_xi: f64,
    pub t_io_frac: f64,
    pub t_comp_frac: f64,
    pub direct_io: bool,
    pub params: SearchParams,
}

/// Repeats [`run_queries`] and reports throughput medians and means.
/// Accuracy and counters come from the first repetition; they do not
/// depend on scheduling.
pub fn run_benchmark(
    engine: &Engine<'_>,
    queries: &QuerySet,
    params: &SearchParams,
    truth: Option<&GroundTruth>,
    config: &BenchmarkConfig,
) -> Result<(EvalReport, QueryRun)> {
    if config.repetitions == 0 {
        return Err(Error::invalid("need at least one repetition"));
    }
    if queries.is_empty() {
        return Err(Error::invalid("no queries to run"));
    }
    let mut runs = Vec::with_capacity(config.repetitions);
    for rep in 0..config.repetitions {
        let seed = config.seed.wrapping_add(rep as u64);
        runs.push(run_queries(engine, queries, params, config.mode, config.threads, seed)?);
    }
    let first = &runs[0];

    let n = queries.len();
    let (mut recall, mut ap, mut per_query, mut excluded) = (None, None, Vec::new(), 0);
    if let Some(truth) = truth {
        match config.mode {
            SearchMode::Knn => {
                let per = recall_per_query(&first.ids(), &truth.ids, params.k)?;
                recall = Some(mean(per.iter().copied()));
                per_query = per.into_iter().map(Some).collect();
            }
            SearchMode::Range => {
                let report = eval_ap(&first.results, &truth.ids, params.radius)?;
                ap = Some(report.mean);
                per_query = report.per_query;
                excluded = report.excluded;
            }
        }
    }

    let mut by_qps: Vec<(f64, f64)> = runs.iter().map(|r| (n as f64 / r.wall_secs, r.wall_secs)).collect();
    by_qps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (qps, wall_secs) = by_qps[(by_qps.len() - 1) / 2];
    let qps_mean = mean(by_qps.iter().map(|x| x.0));
    let mut latencies: Vec<f64> = runs.iter().map(|r| 1e3 * mean(r.latencies.iter().copied())).collect();
    let mean_latency_ms_mean = mean(latencies.iter().copied());
    let mean_latency_ms = median(&mut latencies);

    let total: f64 = first.stats.iter().map(|s| s.t_total).sum();
    let frac = |f: fn(&SearchStats) -> f64| {
        if total > 0.0 {
            first.stats.iter().map(f).sum::<f64>() / total
        } else {
            0.0
        }
    };
    let report = EvalReport {
        mode: config.mode,
        queries: n,
        threads: config.threads,
        repetitions: config.repetitions,
        recall,
        ap,
        per_query_accuracy: per_query,
        excluded_queries: excluded,
        qps,
        qps_mean,
        wall_secs,
        mean_latency_ms,
        mean_latency_ms_mean,
        mean_ios: first.mean_ios(),
        mean_hops: first.mean_hops(),
        mean_xi: first.mean_xi(),
        t_io_frac: frac(|s| s.t_io),
        t_comp_frac: frac(|s| s.t_comp),
        direct_io: first.stats.iter().all(|s| s.direct_io),
        params: *params,
    };
    let run = runs.swap_remove(0);
    Ok((report, run))
}

/// Recall and I/O at one candidate-set capacity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma: usize,
    pub recall: f64,
    pub mean_ios: f64,
    pub mean_hops: f64,
    pub mean_xi: f64,
}

/// Runs k-NN search at each Γ in `gammas`.
pub fn sweep_gamma(
    engine: &Engine<'_>,
    queries: &QuerySet,
    truth: &GroundTruth,
    base: &SearchParams,
    gammas: &[usize],
    threads: usize,
) -> Result<Vec<SweepPoint>> {
    gammas
        .iter()
        .map(|&gamma| {
            let params = SearchParams { gamma, ..*base };
            let run = run_queries(engine, queries, &params, SearchMode::Knn, threads, 0)?;
            let per = recall_per_query(&run.ids(), &truth.ids, base.k)?;
            Ok(SweepPoint {
                gamma,
                recall: mean(per.into_iter()),
                mean_ios: run.mean_ios(),
                mean_hops: run.mean_hops(),
                mean_xi: run.mean_xi(),
            })
        })
        .collect()
}

/// Mean I/O at `target` recall, linearly interpolated between the first
/// pair of consecutive sweep points (ascending Γ) that brackets it.
/// `None` when the sweep never crosses the target from below.
pub fn io_at_recall(points: &[SweepPoint], target: f64) -> Option<f64> {
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.gamma);
    if let Some(p) = sorted.iter().find(|p| p.recall == target) {
        return Some(p.mean_ios);
    }
    sorted.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        (a.recall < target && b.recall >= target).then(|| {
            a.mean_ios + (target - a.recall) / (b.recall - a.recall) * (b.mean_ios - a.mean_ios)
        })
    })
}
