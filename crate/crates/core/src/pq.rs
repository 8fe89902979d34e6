//! Product quantization for in-memory routing distances.
//!
//! Vectors are cut into `M` contiguous subspaces, each quantized to one of
//! 256 centroids, so a code is `M` bytes. A per-query [`DistanceTable`]
//! turns a code into an asymmetric distance with `M` lookups.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{put_u32, put_u64, Reader};
use crate::dataset::{sample_subset, Metric, VectorDataset, VectorRef};
use crate::{Error, Result};

pub const CENTROIDS: usize = 256;
pub const DEFAULT_ITERATIONS: usize = 12;
pub const MAX_TRAINING_VECTORS: usize = 100_000;

/// Largest `M` with `n * M <= budget_bytes`, capped at `dim`.
pub fn choose_m(n: usize, dim: usize, budget_bytes: u64) -> Result<usize> {
    if n == 0 || dim == 0 {
        return Err(Error::invalid("code budget needs n >= 1 and dim >= 1"));
    }
    if budget_bytes < n as u64 {
        return Err(Error::invalid(format!(
            "budget of {budget_bytes} bytes is below one byte per vector (n = {n})"
        )));
    }
    Ok(((budget_bytes / n as u64) as usize).clamp(1, dim))
}

/// Subspace widths: the first `dim % m` get one extra dimension.
pub fn split_dims(dim: usize, m: usize) -> Vec<usize> {
    (0..m).map(|s| dim / m + usize::from(s < dim % m)).collect()
}

#[inline]
fn l2(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nearest centroid, ties to the lowest index. Returns `(index, distance)`.
fn nearest(point: &[f32], centroids: &[f32], width: usize) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (c, centroid) in centroids.chunks_exact(width).enumerate() {
        let d = l2(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct PqCodebook {
    dim: usize,
    metric: Metric,
    sub_dims: Vec<usize>,
    offsets: Vec<usize>,
    /// Subspace `s` holds `256 * sub_dims[s]` floats starting at
    /// `256 * offsets[s]`.
    centroids: Vec<f32>,
}

impl PqCodebook {
    pub fn from_parts(dim: usize, metric: Metric, sub_dims: Vec<usize>, centroids: Vec<f32>) -> Result<Self> {
        if sub_dims.is_empty() || sub_dims.contains(&0) || sub_dims.iter().sum::<usize>() != dim {
            return Err(Error::invalid(format!("subspace widths {sub_dims:?} do not partition {dim} dims")));
        }
        if centroids.len() != CENTROIDS * dim {
            return Err(Error::invalid(format!(
                "expected {} centroid values, got {}",
                CENTROIDS * dim,
                centroids.len()
            )));
        }
        let offsets = sub_dims
            .iter()
            .scan(0, |acc, &w| {
                let at = *acc;
                *acc += w;
                Some(at)
            })
            .collect();
        Ok(Self { dim, metric, sub_dims, offsets, centroids })
    }

    pub fn m(&self) -> usize {
        self.sub_dims.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn sub_dims(&self) -> &[usize] {
        &self.sub_dims
    }

    fn subspace(&self, s: usize) -> &[f32] {
        let start = CENTROIDS * self.offsets[s];
        &self.centroids[start..start + CENTROIDS * self.sub_dims[s]]
    }

    pub fn centroid(&self, s: usize, c: u8) -> &[f32] {
        let w = self.sub_dims[s];
        &self.subspace(s)[c as usize * w..(c as usize + 1) * w]
    }

    fn check_dim(&self, v: VectorRef<'_>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        Ok(())
    }

    pub fn encode(&self, v: VectorRef<'_>) -> Result<Vec<u8>> {
        self.check_dim(v)?;
        let x = v.to_f32();
        Ok((0..self.m())
            .map(|s| {
                let o = self.offsets[s];
                nearest(&x[o..o + self.sub_dims[s]], self.subspace(s), self.sub_dims[s]).0 as u8
            })
            .collect())
    }

    /// Concatenated centroids named by `code`.
    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        assert_eq!(code.len(), self.m(), "code length must equal M");
        code.iter().enumerate().flat_map(|(s, &c)| self.centroid(s, c).iter().copied()).collect()
    }

    pub fn distance_table(&self, query: VectorRef<'_>) -> Result<DistanceTable> {
        self.check_dim(query)?;
        let q = query.to_f32();
        let mut table = Vec::with_capacity(self.m() * CENTROIDS);
        for s in 0..self.m() {
            let (o, w) = (self.offsets[s], self.sub_dims[s]);
            let qs = &q[o..o + w];
            table.extend(self.subspace(s).chunks_exact(w).map(|c| match self.metric {
                Metric::L2 => l2(qs, c),
                Metric::InnerProduct => -dot(qs, c),
            }));
        }
        Ok(DistanceTable { m: self.m(), table })
    }

    pub fn memory_bytes(&self) -> usize {
        self.centroids.len() * 4
    }
}

/// Per-query `M x 256` partial distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceTable {
    m: usize,
    table: Vec<f32>,
}

impl DistanceTable {
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, s: usize, c: u8) -> f32 {
        self.table[s * CENTROIDS + c as usize]
    }
}

/// Sum of `table[s][code[s]]` over subspaces.
#[inline]
pub fn approx_distance(table: &DistanceTable, code: &[u8]) -> f32 {
    debug_assert_eq!(code.len(), table.m);
    code.iter()
        .enumerate()
        .map(|(s, &c)| table.table[s * CENTROIDS + c as usize])
        .sum()
}

/// `n x M` code bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PqCodes {
    m: usize,
    codes: Vec<u8>,
}

impl PqCodes {
    pub fn len(&self) -> usize {
        self.codes.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[u8] {
        &self.codes[i * self.m..(i + 1) * self.m]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.codes
    }
}

/// One k-means run over a single subspace.
fn train_subspace(points: &[f32], width: usize, iterations: usize, seed: u64) -> Vec<f32> {
    let n = points.len() / width;
    let row = |i: usize| &points[i * width..(i + 1) * width];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<usize> = if n >= CENTROIDS {
        index::sample(&mut rng, n, CENTROIDS).into_vec()
    } else {
        (0..CENTROIDS).map(|c| c % n).collect()
    };
    let mut centroids: Vec<f32> = init.iter().flat_map(|&i| row(i).iter().copied()).collect();
    let mut assign = vec![(0usize, 0f32); n];
    for _ in 0..iterations {
        for (i, a) in assign.iter_mut().enumerate() {
            *a = nearest(row(i), &centroids, width);
        }
        let mut sums = vec![0f64; CENTROIDS * width];
        let mut counts = vec![0usize; CENTROIDS];
        for (i, &(c, _)) in assign.iter().enumerate() {
            counts[c] += 1;
            for (acc, &x) in sums[c * width..(c + 1) * width].iter_mut().zip(row(i)) {
                *acc += x as f64;
            }
        }
        // Farthest points, descending, ties to the lower row.
        let mut far: Vec<usize> = (0..n).collect();
        far.sort_by(|&a, &b| assign[b].1.total_cmp(&assign[a].1).then(a.cmp(&b)));
        let mut far = far.into_iter();
        for c in 0..CENTROIDS {
            let out = &mut centroids[c * width..(c + 1) * width];
            if counts[c] > 0 {
                for (dst, &s) in out.iter_mut().zip(&sums[c * width..(c + 1) * width]) {
                    *dst = (s / counts[c] as f64) as f32;
                }
            } else if let Some(i) = far.next() {
                out.copy_from_slice(row(i));
            }
        }
    }
    centroids
}

/// k-means with 256 centroids per subspace, seeded random-sample start.
///
/// Fewer than 256 training vectors are padded by repetition.
pub fn train_pq(training: &VectorDataset, m: usize, iterations: usize, seed: u64) -> Result<PqCodebook> {
    let dim = training.dim();
    if m == 0 || m > dim {
        return Err(Error::invalid(format!("subspace count {m} outside 1..={dim}")));
    }
    let n = training.len();
    if n < CENTROIDS {
        log::warn!("only {n} training vectors for {CENTROIDS} centroids; padding by repetition");
    }
    let first = training.get(0);
    if (1..n).all(|i| training.get(i).to_f32() == first.to_f32()) {
        log::warn!("all training vectors are identical; codebook collapses to one centroid");
    }
    let sub_dims = split_dims(dim, m);
    let rows: Vec<Vec<f32>> = training.iter().map(|v| v.to_f32()).collect();
    let mut offset = 0;
    let jobs: Vec<(usize, usize, usize)> = sub_dims
        .iter()
        .enumerate()
        .map(|(s, &w)| {
            let job = (s, offset, w);
            offset += w;
            job
        })
        .collect();
    let parts: Vec<Vec<f32>> = jobs
        .par_iter()
        .map(|&(s, o, w)| {
            let points: Vec<f32> = rows.iter().flat_map(|r| r[o..o + w].iter().copied()).collect();
            train_subspace(&points, w, iterations, seed.wrapping_add(s as u64))
        })
        .collect();
    PqCodebook::from_parts(dim, training.metric(), sub_dims, parts.concat())
}

pub fn encode_all(dataset: &VectorDataset, codebook: &PqCodebook) -> Result<PqCodes> {
    if dataset.dim() != codebook.dim() {
        return Err(Error::DimensionMismatch { expected: codebook.dim(), got: dataset.dim() });
    }
    let codes: Vec<Vec<u8>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| codebook.encode(dataset.get(i)))
        .collect::<Result<_>>()?;
    Ok(PqCodes { m: codebook.m(), codes: codes.concat() })
}

/// Codebook plus the codes of every base vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PqIndex {
    pub codebook: PqCodebook,
    pub codes: PqCodes,
}

impl PqIndex {
    /// Picks `M` from the byte budget, trains on at most
    /// [`MAX_TRAINING_VECTORS`] sampled rows and encodes everything.
    pub fn build(data: &VectorDataset, budget_bytes: u64, seed: u64) -> Result<Self> {
        let m = choose_m(data.len(), data.dim(), budget_bytes)?;
        let ratio = (MAX_TRAINING_VECTORS as f64 / data.len() as f64).min(1.0);
        let (training, _) = sample_subset(data, ratio, seed)?;
        let codebook = train_pq(&training, m, DEFAULT_ITERATIONS, seed)?;
        let codes = encode_all(data, &codebook)?;
        Ok(Self { codebook, codes })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn memory_bytes(&self) -> usize {
        self.codebook.memory_bytes() + self.codes.as_bytes().len()
    }

    /// Layout: dim `u32`, M `u32`, metric `u8`, 3 zero bytes, M widths
    /// `u32`, n `u64`, centroids `f32`, then `n * M` code bytes.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let cb = &self.codebook;
        let mut head = Vec::new();
        put_u32(&mut head, cb.dim as u32);
        put_u32(&mut head, cb.m() as u32);
        head.push(cb.metric.code());
        head.extend_from_slice(&[0; 3]);
        for &w in &cb.sub_dims {
            put_u32(&mut head, w as u32);
        }
        put_u64(&mut head, self.codes.len() as u64);
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&head)?;
        for &c in &cb.centroids {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(self.codes.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut r = Reader::new(&bytes, "pq file");
        let dim = r.u32()? as usize;
        let m = r.u32()? as usize;
        let metric = Metric::from_code(r.u8()?)?;
        r.take(3)?;
        if m == 0 || m > dim {
            return Err(Error::format(format!("pq file declares M = {m} for {dim} dims")));
        }
        let sub_dims: Vec<usize> = r.u32s(m)?.into_iter().map(|w| w as usize).collect();
        let n = r.u64()? as usize;
        let centroids = r.f32s(CENTROIDS * dim)?;
        let codes = r.take(n.checked_mul(m).ok_or_else(|| Error::format("pq size overflow"))?)?.to_vec();
        r.finish()?;
        let codebook = PqCodebook::from_parts(dim, metric, sub_dims, centroids)
            .map_err(|e| Error::format(e.to_string()))?;
        Ok(Self { codebook, codes: PqCodes { m, codes } })
    }
}
