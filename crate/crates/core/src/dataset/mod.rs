//! Vector collections, distance kernels and brute-force oracles.
//!
//! Distances are "smaller is closer" for every metric: L2 is the squared
//! Euclidean distance and inner product is negated. Range radii are in the
//! same units, so an L2 radius is a squared distance.

mod io;
pub mod synthetic;

use std::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{
    load_vectors, read_distances, read_ivecs, save_vectors, write_distances, write_ivecs,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemType {
    U8,
    F32,
}

impl ElemType {
    pub fn size(self) -> usize {
        match self {
            ElemType::U8 => 1,
            ElemType::F32 => 4,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ElemType::U8 => 0,
            ElemType::F32 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ElemType::U8),
            1 => Ok(ElemType::F32),
            other => Err(Error::format(format!("unknown element type code {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L2,
    #[serde(rename = "ip")]
    InnerProduct,
}

impl Metric {
    pub fn code(self) -> u8 {
        match self {
            Metric::L2 => 0,
            Metric::InnerProduct => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Metric::L2),
            1 => Ok(Metric::InnerProduct),
            other => Err(Error::format(format!("unknown metric code {other}"))),
        }
    }
}

/// Borrowed view of a single vector.
#[derive(Clone, Copy, Debug)]
pub enum VectorRef<'a> {
    U8(&'a [u8]),
    F32(&'a [f32]),
}

impl<'a> VectorRef<'a> {
    pub fn len(&self) -> usize {
        match self {
            VectorRef::U8(v) => v.len(),
            VectorRef::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elem(&self) -> ElemType {
        match self {
            VectorRef::U8(_) => ElemType::U8,
            VectorRef::F32(_) => ElemType::F32,
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            VectorRef::U8(v) => v.iter().map(|&x| x as f32).collect(),
            VectorRef::F32(v) => v.to_vec(),
        }
    }

    pub fn at(&self, i: usize) -> f32 {
        match self {
            VectorRef::U8(v) => v[i] as f32,
            VectorRef::F32(v) => v[i],
        }
    }

    pub(crate) fn extend_le_bytes(&self, out: &mut Vec<u8>) {
        match self {
            VectorRef::U8(v) => out.extend_from_slice(v),
            VectorRef::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

/// Row-major storage for `n` vectors of one element type.
#[derive(Clone, Debug, PartialEq)]
pub enum VectorData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl VectorData {
    fn len(&self) -> usize {
        match self {
            VectorData::U8(v) => v.len(),
            VectorData::F32(v) => v.len(),
        }
    }
}

/// An immutable collection of equally sized vectors under one metric.
///
/// Also used for query sets, where the metric is carried along but the
/// target dataset's metric is the one that counts.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorDataset {
    n: usize,
    dim: usize,
    metric: Metric,
    data: VectorData,
}

pub type QuerySet = VectorDataset;

impl VectorDataset {
    pub fn new(dim: usize, metric: Metric, data: VectorData) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let len = data.len();
        if len == 0 {
            return Err(Error::invalid("dataset has zero records"));
        }
        if !len.is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{len} values do not split into rows of dimension {dim}"
            )));
        }
        Ok(Self { n: len / dim, dim, metric, data })
    }

    pub fn from_u8(dim: usize, values: Vec<u8>, metric: Metric) -> Result<Self> {
        Self::new(dim, metric, VectorData::U8(values))
    }

    pub fn from_f32(dim: usize, values: Vec<f32>, metric: Metric) -> Result<Self> {
        Self::new(dim, metric, VectorData::F32(values))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn elem(&self) -> ElemType {
        match self.data {
            VectorData::U8(_) => ElemType::U8,
            VectorData::F32(_) => ElemType::F32,
        }
    }

    pub fn data(&self) -> &VectorData {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize) -> VectorRef<'_> {
        let range = i * self.dim..(i + 1) * self.dim;
        match &self.data {
            VectorData::U8(v) => VectorRef::U8(&v[range]),
            VectorData::F32(v) => VectorRef::F32(&v[range]),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = VectorRef<'_>> + '_ {
        (0..self.n).map(move |i| self.get(i))
    }

    /// Copies the listed rows, in order, into a new dataset.
    pub fn select(&self, ids: &[u32]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot select zero rows"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.n) {
            return Err(Error::invalid(format!("row {bad} out of range (n = {})", self.n)));
        }
        let data = match &self.data {
            VectorData::U8(v) => VectorData::U8(
                ids.iter()
                    .flat_map(|&i| &v[i as usize * self.dim..(i as usize + 1) * self.dim])
                    .copied()
                    .collect(),
            ),
            VectorData::F32(v) => VectorData::F32(
                ids.iter()
                    .flat_map(|&i| &v[i as usize * self.dim..(i as usize + 1) * self.dim])
                    .copied()
                    .collect(),
            ),
        };
        Self::new(self.dim, self.metric, data)
    }

    /// Same vectors, different metric.
    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }
}

/// A vertex ID with its distance to some reference vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u32,
    pub dist: f32,
}

impl Neighbor {
    pub fn new(id: u32, dist: f32) -> Self {
        Self { id, dist }
    }

    /// Ascending distance, ties by lower ID.
    #[inline]
    pub fn cmp_by_dist(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

/// Checked distance between two vectors; see [`distance_unchecked`].
pub fn distance(a: VectorRef<'_>, b: VectorRef<'_>, metric: Metric) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    Ok(distance_unchecked(a, b, metric))
}

/// Squared L2 or negated inner product. Lengths must match.
#[inline]
pub fn distance_unchecked(a: VectorRef<'_>, b: VectorRef<'_>, metric: Metric) -> f32 {
    match (a, b, metric) {
        (VectorRef::U8(x), VectorRef::U8(y), Metric::L2) => l2_u8(x, y) as f32,
        (VectorRef::U8(x), VectorRef::U8(y), Metric::InnerProduct) => -(dot_u8(x, y) as f32),
        (VectorRef::F32(x), VectorRef::F32(y), Metric::L2) => l2_f32(x, y),
        (VectorRef::F32(x), VectorRef::F32(y), Metric::InnerProduct) => -dot_f32(x, y),
        (VectorRef::F32(x), VectorRef::U8(y), m) | (VectorRef::U8(y), VectorRef::F32(x), m) => {
            match m {
                Metric::L2 => l2_mixed(x, y),
                Metric::InnerProduct => -dot_mixed(x, y),
            }
        }
    }
}

// u8 kernels accumulate in 32 bits: 128 * 255^2 already overflows 16.
#[inline]
fn l2_u8(a: &[u8], b: &[u8]) -> u32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as i32 - y as i32;
            (d * d) as u32
        })
        .sum()
}

#[inline]
fn dot_u8(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).map(|(&x, &y)| x as u32 * y as u32).sum()
}

#[inline]
fn l2_f32(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent lanes let the compiler vectorize without reassociating.
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            let d = a[c * 8 + l] - b[c * 8 + l];
            acc[l] += d * d;
        }
    }
    let mut sum: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        let d = a[i] - b[i];
        sum += d * d;
    }
    sum
}

#[inline]
fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += a[c * 8 + l] * b[c * 8 + l];
        }
    }
    let mut sum: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

#[inline]
fn l2_mixed(a: &[f32], b: &[u8]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y as f32;
            d * d
        })
        .sum()
}

#[inline]
fn dot_mixed(a: &[f32], b: &[u8]) -> f32 {
    a.iter().zip(b).map(|(&x, &y)| x * y as f32).sum()
}

fn check_query(dataset: &VectorDataset, query: VectorRef<'_>) -> Result<()> {
    if query.len() != dataset.dim() {
        return Err(Error::DimensionMismatch { expected: dataset.dim(), got: query.len() });
    }
    Ok(())
}

fn all_distances(dataset: &VectorDataset, query: VectorRef<'_>) -> Vec<Neighbor> {
    let metric = dataset.metric();
    (0..dataset.len())
        .map(|i| Neighbor::new(i as u32, distance_unchecked(query, dataset.get(i), metric)))
        .collect()
}

/// Exact k nearest neighbors, ascending by distance with ties by lower ID.
pub fn brute_force_knn(
    dataset: &VectorDataset,
    query: VectorRef<'_>,
    k: usize,
) -> Result<Vec<Neighbor>> {
    check_query(dataset, query)?;
    if k == 0 || k >= dataset.len() {
        return Err(Error::invalid(format!(
            "k = {k} must satisfy 0 < k < n = {}",
            dataset.len()
        )));
    }
    let mut all = all_distances(dataset, query);
    all.select_nth_unstable_by(k - 1, Neighbor::cmp_by_dist);
    all.truncate(k);
    all.sort_unstable_by(Neighbor::cmp_by_dist);
    Ok(all)
}

/// Every vector with distance `<= radius`, ascending by distance.
pub fn brute_force_range(
    dataset: &VectorDataset,
    query: VectorRef<'_>,
    radius: f32,
) -> Result<Vec<Neighbor>> {
    check_query(dataset, query)?;
    if radius.is_nan() || (dataset.metric() == Metric::L2 && radius < 0.0) {
        return Err(Error::invalid(format!("radius {radius} is not valid for L2")));
    }
    let mut hits: Vec<Neighbor> =
        all_distances(dataset, query).into_iter().filter(|n| n.dist <= radius).collect();
    hits.sort_unstable_by(Neighbor::cmp_by_dist);
    Ok(hits)
}

/// Ground-truth neighbor lists for a query batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub ids: Vec<Vec<u32>>,
    pub dists: Vec<Vec<f32>>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn from_lists(lists: Vec<Vec<Neighbor>>) -> Self {
        let ids = lists.iter().map(|l| l.iter().map(|n| n.id).collect()).collect();
        let dists = lists.iter().map(|l| l.iter().map(|n| n.dist).collect()).collect();
        Self { ids, dists }
    }
}

pub fn knn_ground_truth(
    dataset: &VectorDataset,
    queries: &QuerySet,
    k: usize,
) -> Result<GroundTruth> {
    let lists = (0..queries.len())
        .into_par_iter()
        .map(|q| brute_force_knn(dataset, queries.get(q), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruth::from_lists(lists))
}

pub fn range_ground_truth(
    dataset: &VectorDataset,
    queries: &QuerySet,
    radius: f32,
) -> Result<GroundTruth> {
    let lists = (0..queries.len())
        .into_par_iter()
        .map(|q| brute_force_range(dataset, queries.get(q), radius))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruth::from_lists(lists))
}

/// Uniform sample of `floor(ratio * n)` rows without replacement.
///
/// Returns the sampled rows and, for each of them, its ID in `dataset`.
/// The ID map is ascending and fully determined by `(seed, ratio, n)`.
pub fn sample_subset(
    dataset: &VectorDataset,
    ratio: f64,
    seed: u64,
) -> Result<(VectorDataset, Vec<u32>)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("sample ratio {ratio} outside (0, 1]")));
    }
    let n = dataset.len();
    let count = (ratio * n as f64).floor() as usize;
    if count == 0 {
        return Err(Error::invalid(format!("sample ratio {ratio} selects no rows out of {n}")));
    }
    let ids: Vec<u32> = if count == n {
        (0..n as u32).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<u32> =
            index::sample(&mut rng, n, count).into_iter().map(|i| i as u32).collect();
        picked.sort_unstable();
        picked
    };
    Ok((dataset.select(&ids)?, ids))
}
