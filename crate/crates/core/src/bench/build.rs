use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{report_index_costs, IndexCostReport};
use crate::dataset::VectorDataset;
use crate::diskindex::{map_path, with_suffix, write_index, DiskIndex};
use crate::engine::Engine;
use crate::graph::{
    build_navigation, build_vamana, read_navigation, write_graph, write_navigation, BuildParams,
    NavigationGraph, NeighborGraph,
};
use crate::layout::{shuffle, BlockLayout, LayoutGeometry, ShuffleParams, ShuffleReport};
use crate::pq::PqIndex;
use crate::Result;

/// Settings for the full offline pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct BuildConfig {
    pub graph: BuildParams,
    pub block_size: usize,
    /// `None` keeps the sequential layout.
    pub shuffle: Option<ShuffleParams>,
    /// Navigation sample ratio; `None` skips the navigation graph.
    pub nav_ratio: Option<f64>,
    pub nav_max_degree: usize,
    pub nav_list_size: usize,
    pub pq_budget_bytes: u64,
}

impl BuildConfig {
    /// BNF layout, 10% navigation sample, 16 code bytes per vector.
    pub fn new(max_degree: usize, list_size: usize, block_size: usize, n: usize) -> Self {
        Self {
            graph: BuildParams::new(max_degree, list_size),
            block_size,
            shuffle: Some(ShuffleParams::default()),
            nav_ratio: Some(0.1),
            nav_max_degree: max_degree,
            nav_list_size: list_size,
            pq_budget_bytes: 16 * n as u64,
        }
    }
}

pub struct BuildOutput {
    pub graph: NeighborGraph,
    pub layout: BlockLayout,
    pub shuffle: Option<ShuffleReport>,
    pub costs: IndexCostReport,
}

/// Builds and writes every artifact under `prefix`: `.graph`, `.idx`,
/// `.map`, `.pq` and (optionally) `.nav`.
pub fn build_index(data: &VectorDataset, config: &BuildConfig, prefix: impl AsRef<Path>) -> Result<BuildOutput> {
    let prefix = prefix.as_ref();
    let t = Instant::now();
    let graph = build_vamana(data, &config.graph)?;
    let t_disk_graph = t.elapsed().as_secs_f64();
    write_graph(with_suffix(prefix, ".graph"), &graph)?;

    let geometry = LayoutGeometry::new(
        data.dim(),
        data.elem().size(),
        graph.max_degree(),
        config.block_size,
        data.len(),
    )?;
    let t = Instant::now();
    let (layout, report, t_shuffling) = match &config.shuffle {
        Some(params) => {
            let (layout, report) = shuffle(&graph, &geometry, params)?;
            (layout, Some(report), t.elapsed().as_secs_f64())
        }
        None => (BlockLayout::sequential(geometry), None, 0.0),
    };
    let header = write_index(data, &graph, &layout, prefix)?;

    let (mut t_memory_graph, mut nav_bytes) = (0.0, 0);
    if let Some(ratio) = config.nav_ratio {
        let params = BuildParams {
            max_degree: config.nav_max_degree,
            list_size: config.nav_list_size,
            ..config.graph.clone()
        };
        let t = Instant::now();
        let nav = build_navigation(data, ratio, &params)?;
        t_memory_graph = t.elapsed().as_secs_f64();
        nav_bytes = nav.memory_bytes() as u64;
        write_navigation(with_suffix(prefix, ".nav"), &nav)?;
    }

    let t = Instant::now();
    let pq = PqIndex::build(data, config.pq_budget_bytes, config.graph.seed)?;
    let t_pq = t.elapsed().as_secs_f64();
    pq.save(with_suffix(prefix, ".pq"))?;

    let costs = report_index_costs(
        t_disk_graph,
        t_shuffling,
        t_memory_graph,
        t_pq,
        nav_bytes,
        std::fs::metadata(map_path(prefix))?.len(),
        pq.memory_bytes() as u64,
        header.file_bytes(),
    );
    Ok(BuildOutput { graph, layout, shuffle: report, costs })
}

/// Everything a query needs, loaded from disk.
pub struct IndexArtifacts {
    pub index: DiskIndex,
    pub pq: PqIndex,
    pub nav: Option<NavigationGraph>,
}

impl IndexArtifacts {
    /// Opens `.idx`/`.map` and `.pq`; `.nav` is loaded when present.
    pub fn load(prefix: impl AsRef<Path>) -> Result<Self> {
        let prefix = prefix.as_ref();
        let index = DiskIndex::open(prefix)?;
        let pq = PqIndex::load(with_suffix(prefix, ".pq"))?;
        let nav_file = with_suffix(prefix, ".nav");
        let nav = if nav_file.exists() { Some(read_navigation(nav_file)?) } else { None };
        Ok(Self { index, pq, nav })
    }

    /// Engine over these artifacts; `use_nav = false` starts every query at
    /// the index's entry vertex.
    pub fn engine(&self, use_nav: bool) -> Result<Engine<'_>> {
        Engine::new(&self.index, &self.pq, if use_nav { self.nav.as_ref() } else { None })
    }
}

/// Serializable summary of a build, written next to the artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub costs: IndexCostReport,
    pub shuffle: Option<ShuffleReport>,
}
