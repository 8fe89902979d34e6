use super::*;
use crate::dataset::{brute_force_knn, brute_force_range, distance_unchecked, synthetic, VectorDataset};
use crate::diskindex::write_index;
use crate::graph::{build_navigation, build_vamana, BuildParams};
use crate::layout::{shuffle_bnf, shuffle_bnp, BlockLayout, LayoutGeometry};

struct Fixture {
    _dir: tempfile::TempDir,
    data: VectorDataset,
    queries: VectorDataset,
    index: DiskIndex,
    pq: PqIndex,
    nav: NavigationGraph,
}

fn fixture(n: usize, dim: usize, shuffled: bool) -> Fixture {
    let gen = synthetic::ClusteredU8::new(dim, 17);
    let data = gen.generate(n, 1);
    let queries = gen.generate(60, 2);
    let params = BuildParams { threads: 0, ..BuildParams::new(24, 48) };
    let graph = build_vamana(&data, &params).unwrap();
    let geo = LayoutGeometry::new(dim, 1, 24, 4096, n).unwrap();
    let layout = if shuffled {
        shuffle_bnf(&graph, &shuffle_bnp(&graph, &geo), 8, 0.01).0
    } else {
        BlockLayout::sequential(geo)
    };
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("t");
    write_index(&data, &graph, &layout, &prefix).unwrap();
    let index = DiskIndex::open(&prefix).unwrap();
    let pq = PqIndex::build(&data, (n * dim.min(16)) as u64, 3).unwrap();
    let nav = build_navigation(&data, 0.1, &params).unwrap();
    Fixture { _dir: dir, data, queries, index, pq, nav }
}

fn recall(found: &[Neighbor], truth: &[Neighbor]) -> f64 {
    let t: HashSet<u32> = truth.iter().map(|n| n.id).collect();
    found.iter().filter(|n| t.contains(&n.id)).count() as f64 / truth.len() as f64
}

#[test]
fn pruned_count_examples() {
    assert_eq!(pruned_count(16, 0.3), 5);
    assert_eq!(pruned_count(12, 0.3), 4);
    assert_eq!(pruned_count(12, 1.0), 11);
    assert_eq!(pruned_count(12, TARGET_ONLY_SIGMA), 0);
    assert_eq!(pruned_count(1, 1.0), 0);
}

#[test]
fn params_validation() {
    let ok = SearchParams::default();
    ok.validate().unwrap();
    for bad in [
        SearchParams { k: 0, ..ok },
        SearchParams { gamma: 5, ..ok },
        SearchParams { sigma: 0.0, ..ok },
        SearchParams { sigma: 1.5, ..ok },
        SearchParams { phi: 0.0, ..ok },
        SearchParams { beam_width: 0, ..ok },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn stored_vector_is_found_at_distance_zero() {
    let f = fixture(1000, 32, true);
    let engine = Engine::new(&f.index, &f.pq, Some(&f.nav)).unwrap();
    for id in [0usize, 123, 999] {
        let (res, _) = engine.search_ann(f.data.get(id), &SearchParams::default()).unwrap();
        assert_eq!(res[0].dist, 0.0);
        assert_eq!(distance_unchecked(f.data.get(id), f.data.get(res[0].id as usize), Metric::L2), 0.0);
    }
}

#[test]
fn recall_and_exact_distances() {
    let f = fixture(3000, 32, true);
    let engine = Engine::new(&f.index, &f.pq, Some(&f.nav)).unwrap();
    let params = SearchParams::default();
    let mut total = 0.0;
    for q in f.queries.iter() {
        let (res, stats) = engine.search_ann(q, &params).unwrap();
        assert_eq!(res.len(), 10);
        for n in &res {
            assert_eq!(n.dist, distance_unchecked(q, f.data.get(n.id as usize), Metric::L2));
        }
        assert!(stats.io_count <= stats.hops);
        assert_eq!(stats.hops, stats.xi_samples);
        assert!(stats.io_count <= f.index.block_count() as u64);
        assert!(stats.mean_xi() > 0.0 && stats.mean_xi() <= 1.0);
        assert!(stats.t_io + stats.t_comp <= stats.t_total + 1e-6);
        total += recall(&res, &brute_force_knn(&f.data, q, 10).unwrap());
    }
    let mean = total / f.queries.len() as f64;
    assert!(mean >= 0.9, "recall {mean}");
}

#[test]
fn target_only_search_uses_one_slot_per_block() {
    let f = fixture(2000, 32, false);
    let engine = Engine::new(&f.index, &f.pq, None).unwrap();
    let params = SearchParams { sigma: TARGET_ONLY_SIGMA, ..Default::default() };
    let eps = f.index.header().slots_per_block as f64;
    for q in f.queries.iter().take(10) {
        let (_, stats) = engine.search_ann(q, &params).unwrap();
        assert_eq!(stats.mean_xi(), 1.0 / eps);
        assert_eq!(stats.xi_processed, stats.xi_samples);
    }
}

#[test]
fn full_sigma_processes_every_fresh_occupant() {
    let f = fixture(1000, 32, false);
    let engine = Engine::new(&f.index, &f.pq, None).unwrap();
    let params = SearchParams { sigma: 1.0, ..Default::default() };
    let (_, stats) = engine.search_ann(f.queries.get(0), &params).unwrap();
    let low = 1.0 / stats.slots_per_block as f64;
    assert!(stats.mean_xi() > low);
    // The first explored block is the entry's; every occupant is fresh.
    let entry_block = f.index.block_of(f.index.entry());
    let occupied = f.index.occupants(entry_block).count() as u64;
    assert!(stats.xi_processed >= occupied);
}

#[test]
fn pipeline_matches_sequential() {
    let f = fixture(2000, 32, true);
    let engine = Engine::new(&f.index, &f.pq, Some(&f.nav)).unwrap();
    for sigma in [0.3, 1.0] {
        for width in [1, 3] {
            let seq = SearchParams { sigma, beam_width: width, ..Default::default() };
            let pipe = SearchParams { pipeline: true, ..seq };
            for q in f.queries.iter().take(20) {
                let (a, sa) = engine.search_ann(q, &seq).unwrap();
                let (b, sb) = engine.search_ann(q, &pipe).unwrap();
                assert_eq!(a, b);
                assert_eq!((sa.io_count, sa.hops, sa.xi_processed), (sb.io_count, sb.hops, sb.xi_processed));
            }
        }
    }
}

#[test]
fn range_search_below_minimum_is_empty() {
    let f = fixture(1000, 32, true);
    let engine = Engine::new(&f.index, &f.pq, Some(&f.nav)).unwrap();
    let q = f.queries.get(0);
    let nearest = brute_force_knn(&f.data, q, 1).unwrap()[0].dist;
    let params = SearchParams { radius: nearest * 0.5, ..Default::default() };
    let (res, stats) = engine.search_range(q, &params).unwrap();
    assert!(res.is_empty());
    assert_eq!(stats.doublings, 0);
}

#[test]
fn range_search_over_everything_doubles_to_cap() {
    let f = fixture(1000, 32, true);
    let engine = Engine::new(&f.index, &f.pq, Some(&f.nav)).unwrap();
    let q = f.queries.get(1);
    let params = SearchParams { radius: f32::MAX, max_doublings: 10, ..Default::default() };
    let (res, stats) = engine.search_range(q, &params).unwrap();
    let truth = brute_force_range(&f.data, q, f32::MAX).unwrap();
    assert!(res.len() as f64 >= 0.9 * truth.len() as f64, "{} of {}", res.len(), truth.len());
    assert!(stats.doublings >= 3 && stats.doublings <= 10);
}

#[test]
fn range_search_is_sound() {
    let f = fixture(3000, 32, true);
    let engine = Engine::new(&f.index, &f.pq, Some(&f.nav)).unwrap();
    let mut ap = 0.0;
    for q in f.queries.iter().take(20) {
        let all = brute_force_knn(&f.data, q, 100).unwrap();
        let r = all[99].dist;
        let params = SearchParams { radius: r, ..Default::default() };
        let (res, _) = engine.search_range(q, &params).unwrap();
        assert!(res.iter().all(|n| n.dist <= r));
        let truth = brute_force_range(&f.data, q, r).unwrap();
        ap += recall(&res, &truth);
    }
    assert!(ap / 20.0 >= 0.9, "AP {}", ap / 20.0);
}

#[test]
fn rejects_bad_queries() {
    let f = fixture(500, 16, false);
    let engine = Engine::new(&f.index, &f.pq, None).unwrap();
    let short = [0u8; 8];
    assert!(engine.search_ann(VectorRef::U8(&short), &SearchParams::default()).is_err());
    let huge = SearchParams { k: 501, gamma: 600, ..Default::default() };
    assert!(engine.search_ann(f.queries.get(0), &huge).is_err());
    let neg = SearchParams { radius: -1.0, ..Default::default() };
    assert!(engine.search_range(f.queries.get(0), &neg).is_err());
    let other_pq = PqIndex::build(&synthetic::uniform_u8(400, 16, 1), 400, 1).unwrap();
    assert!(Engine::new(&f.index, &other_pq, None).is_err());
}
