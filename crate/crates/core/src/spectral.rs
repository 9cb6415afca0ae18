//! Alignment-kernel similarity and spectral clustering.
//!
//! The alignment cost of a pair of points is 2^-|R| where R is the set of
//! other points lying within a vertical distance delta of the line through
//! the pair; pairs whose tube is empty get a large cap instead, and the
//! similarity matrix is e^-cost. Two constructions are provided: an exact
//! cubic-time reference over all pairs, and the quadratic sampled variant
//! that visits a bounded number of neighbors per point and propagates low
//! costs through tube members. Spectral clustering then embeds the points
//! with the bottom eigenvectors of the symmetric normalized Laplacian and
//! runs point K-means in embedding space.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affine::{fit_affine, AffineModel, FitError};
use crate::eigen::{top_eigenpairs, SymmetricOp};
pub use crate::eigen::EigenMethod;
use crate::klinear::Clustering;
use crate::trace::{Point, PointSet};

/// Finite stand-in for the infinite cost of a pair with an empty tube;
/// e^-700 vanishes, so the similarity becomes 0 without special cases.
pub const DEFAULT_INFINITY_CAP: f64 = 700.0;

/// Raw cost used by the sampled kernel for pairs never computed.
pub const UNTOUCHED_COST: f64 = 2.0;

/// The random neighbor draws come from a pool this many times larger than
/// the per-point sample budget.
pub const NEIGHBOR_POOL_FACTOR: usize = 8;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("alignment kernel needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("spectral clustering needs 2 <= k <= n, got k={k} for n={n}")]
    BadK { k: usize, n: usize },
    #[error("similarity matrix is {n}x{n} but the point set has {points} points")]
    SizeMismatch { n: usize, points: usize },
    #[error("similarity matrix entry ({i},{j}) = {value} outside [0, 1]")]
    BadEntry { i: usize, j: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Sampled-kernel parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentConfig {
    /// Tube half-width; `None` means 5% of the y range.
    pub delta: Option<f64>,
    /// Neighbors sampled per point; `None` means min(n-1, 32).
    pub neighbor_samples: Option<usize>,
    pub k: usize,
    pub seed: u64,
    pub infinity_cap: f64,
}

impl AlignmentConfig {
    pub fn new(k: usize) -> Self {
        AlignmentConfig {
            delta: None,
            neighbor_samples: None,
            k,
            seed: 0,
            infinity_cap: DEFAULT_INFINITY_CAP,
        }
    }

    pub fn resolve_delta(&self, ps: &PointSet) -> f64 {
        match self.delta {
            Some(d) => d,
            None => {
                let range = ps.y_range();
                if range > 0.0 {
                    0.05 * range
                } else {
                    1.0
                }
            }
        }
    }

    pub fn resolve_samples(&self, n: usize) -> usize {
        self.neighbor_samples
            .unwrap_or_else(|| (n.saturating_sub(1)).min(32))
            .max(1)
    }
}

/// Raw pairwise alignment costs (before the exponential transform).
#[derive(Debug, Clone)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
    /// Pairs with identical inputs, whose line is undefined.
    pub vertical_pairs: Vec<(usize, usize)>,
    /// Pairs whose line was directly computed, with the cost assigned at
    /// that moment (later propagation can only lower the stored entry).
    pub computed_pairs: Vec<(usize, usize, f64)>,
}

impl CostMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Symmetric similarity graph with entries in [0, 1] and unit diagonal.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl SimilarityMatrix {
    /// e^-cost of every entry of a raw cost matrix.
    pub fn from_costs(costs: &CostMatrix) -> Self {
        let entries = costs.data.iter().map(|&w| (-w).exp()).collect();
        SimilarityMatrix { n: costs.n, entries }
    }

    /// Wraps explicit entries, validating symmetry and range.
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self, SpectralError> {
        assert_eq!(entries.len(), n * n, "entry buffer must be n*n");
        for i in 0..n {
            for j in 0..n {
                let v = entries[i * n + j];
                if !(0.0..=1.0).contains(&v) || (entries[j * n + i] - v).abs() > 1e-12 {
                    return Err(SpectralError::BadEntry { i, j, value: v });
                }
            }
        }
        Ok(SimilarityMatrix { n, entries })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Dense CSV dump for debugging.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| self.get(i, j).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// The interpolating line through two points, or `None` when their inputs
/// coincide and no function of x passes through both.
fn line_through(a: &Point, b: &Point) -> Option<AffineModel> {
    if a.x == b.x {
        return None;
    }
    let report = fit_affine(&[a.clone(), b.clone()]).ok()?;
    Some(report.model)
}

/// Key for value-identity of points: two traces at the same (x, y) count as
/// one support point, matching the set semantics of the point set.
fn value_key(p: &Point) -> Vec<u64> {
    let norm = |v: f64| if v == 0.0 { 0.0f64 } else { v };
    p.x.iter()
        .map(|&v| norm(v).to_bits())
        .chain(std::iter::once(norm(p.y).to_bits()))
        .collect()
}

/// Groups points by value identity; `group_of[r]` indexes into the distinct
/// values. Duplicate traces then count once as tube support.
struct ValueGroups {
    group_of: Vec<u32>,
    n_groups: usize,
}

fn value_groups(ps: &PointSet) -> ValueGroups {
    let n = ps.len();
    let keys: Vec<Vec<u64>> = ps.points.iter().map(value_key).collect();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| keys[a as usize].cmp(&keys[b as usize]));
    let mut group_of = vec![0u32; n];
    let mut groups = 0u32;
    for (pos, &idx) in order.iter().enumerate() {
        if pos > 0 && keys[idx as usize] != keys[order[pos - 1] as usize] {
            groups += 1;
        }
        group_of[idx as usize] = groups;
    }
    ValueGroups {
        group_of,
        n_groups: groups as usize + 1,
    }
}

/// Allocation-free scratch for tube sweeps.
struct TubeScratch {
    members: Vec<usize>,
    stamp: Vec<u64>,
    epoch: u64,
}

impl TubeScratch {
    fn new(groups: &ValueGroups) -> Self {
        TubeScratch {
            members: Vec::new(),
            stamp: vec![0; groups.n_groups],
            epoch: 0,
        }
    }
}

/// Tube membership of a pair's line: indices of other points within `delta`
/// vertically, and the number of distinct point values among them (excluding
/// values equal to either endpoint). Results land in `scratch.members`.
fn tube_sweep(
    ps: &PointSet,
    groups: &ValueGroups,
    scratch: &mut TubeScratch,
    model: &AffineModel,
    i: usize,
    j: usize,
    delta: f64,
) -> usize {
    scratch.members.clear();
    scratch.epoch += 1;
    let epoch = scratch.epoch;
    let gi = groups.group_of[i];
    let gj = groups.group_of[j];
    let mut distinct = 0usize;
    let slope = &model.slope;
    let intercept = model.intercept;
    for (r, p) in ps.points.iter().enumerate() {
        if r == i || r == j {
            continue;
        }
        let mut pred = intercept;
        for (a, v) in slope.iter().zip(&p.x) {
            pred += a * v;
        }
        if (p.y - pred).abs() < delta {
            scratch.members.push(r);
            let g = groups.group_of[r];
            if g != gi && g != gj && scratch.stamp[g as usize] != epoch {
                scratch.stamp[g as usize] = epoch;
                distinct += 1;
            }
        }
    }
    distinct
}

fn pair_cost(distinct: usize, cap: f64) -> f64 {
    if distinct >= 1 {
        (-(distinct as f64)).exp2()
    } else {
        cap
    }
}

/// Reciprocal data range per coordinate (inputs then y), for the neighbor
/// metric.
fn normalized_scales(ps: &PointSet) -> Vec<f64> {
    let dim = ps.dim();
    let mut lo = vec![f64::INFINITY; dim + 1];
    let mut hi = vec![f64::NEG_INFINITY; dim + 1];
    for p in &ps.points {
        for (d, &v) in p.x.iter().enumerate() {
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
        lo[dim] = lo[dim].min(p.y);
        hi[dim] = hi[dim].max(p.y);
    }
    (0..=dim)
        .map(|d| {
            let range = hi[d] - lo[d];
            if range > 0.0 {
                1.0 / range
            } else {
                1.0
            }
        })
        .collect()
}

/// Exact alignment costs over every pair; cubic time, the reference the
/// sampled variant is tested against.
pub fn alignment_kernel_exact(ps: &PointSet, delta: f64) -> Result<CostMatrix, SpectralError> {
    alignment_kernel_exact_with_cap(ps, delta, DEFAULT_INFINITY_CAP)
}

pub fn alignment_kernel_exact_with_cap(
    ps: &PointSet,
    delta: f64,
    cap: f64,
) -> Result<CostMatrix, SpectralError> {
    let n = ps.len();
    if n < 3 {
        return Err(SpectralError::TooFewPoints(n));
    }
    let groups = value_groups(ps);
    let mut scratch = TubeScratch::new(&groups);
    let mut costs = CostMatrix {
        n,
        data: vec![0.0; n * n],
        vertical_pairs: Vec::new(),
        computed_pairs: Vec::new(),
    };
    for i in 0..n {
        for j in (i + 1)..n {
            let cost = match line_through(&ps.points[i], &ps.points[j]) {
                Some(model) => {
                    let distinct = tube_sweep(ps, &groups, &mut scratch, &model, i, j, delta);
                    let cost = pair_cost(distinct, cap);
                    costs.computed_pairs.push((i, j, cost));
                    cost
                }
                None => {
                    costs.vertical_pairs.push((i, j));
                    cap
                }
            };
            costs.data[i * n + j] = cost;
            costs.data[j * n + i] = cost;
        }
    }
    Ok(costs)
}

/// Sampled quadratic-time construction: every point visits its nearest
/// neighbors in (x, y) space, computes the pair cost for lines not yet
/// touched, and propagates low costs to the tube members. Pairs never
/// touched keep the 2.0 initialization. Deterministic given the seed.
pub fn alignment_kernel_approx(
    ps: &PointSet,
    cfg: &AlignmentConfig,
) -> Result<SimilarityMatrix, SpectralError> {
    Ok(SimilarityMatrix::from_costs(&alignment_costs_approx(ps, cfg)?))
}

/// The sampled kernel's raw costs, exposed for agreement tests against the
/// exact variant.
pub fn alignment_costs_approx(
    ps: &PointSet,
    cfg: &AlignmentConfig,
) -> Result<CostMatrix, SpectralError> {
    let n = ps.len();
    if n < 3 {
        return Err(SpectralError::TooFewPoints(n));
    }
    let delta = cfg.resolve_delta(ps);
    let samples = cfg.resolve_samples(n);
    let cap = cfg.infinity_cap;
    if delta.is_nan() || delta <= 0.0 {
        return Err(SpectralError::BadConfig(format!(
            "tube delta must be positive, got {delta}"
        )));
    }
    if cap.is_nan() || cap <= 0.0 {
        return Err(SpectralError::BadConfig(format!(
            "infinity cap must be positive, got {cap}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut w = vec![UNTOUCHED_COST; n * n];
    let mut vertical_pairs = Vec::new();
    let mut computed_pairs = Vec::new();
    let groups = value_groups(ps);
    let mut scratch = TubeScratch::new(&groups);

    // Neighborhood distances use range-normalized coordinates; otherwise a
    // wide input scale collapses every pool onto points of nearly equal x
    // and same-line pairs are never sampled.
    let scales = normalized_scales(ps);

    // Random draws come from a pool several times larger than the sample
    // budget; sampling only the immediate neighbors keeps every pair's
    // baseline short and the resulting tubes too local to tie a cluster
    // together. On small sets the pool is capped by a fraction of n so it
    // does not reach across to unrelated points.
    let pool_size = (samples * NEIGHBOR_POOL_FACTOR)
        .min(n / 4)
        .max(samples)
        .min(n - 1);

    for i in 0..n {
        let mut order: Vec<(f64, u64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let pi = &ps.points[i];
                let pj = &ps.points[j];
                let dy = (pi.y - pj.y) * scales[pi.x.len()];
                let mut d = dy * dy;
                for (dim, (a, b)) in pi.x.iter().zip(&pj.x).enumerate() {
                    let dx = (a - b) * scales[dim];
                    d += dx * dx;
                }
                (d, rng.gen::<u64>(), j)
            })
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        order.truncate(pool_size);
        let mut pool: Vec<usize> = order.into_iter().map(|(_, _, j)| j).collect();
        pool.shuffle(&mut rng);
        pool.truncate(samples);

        for j in pool {
            if w[i * n + j] != UNTOUCHED_COST {
                continue; // already computed or lowered by propagation
            }
            match line_through(&ps.points[i], &ps.points[j]) {
                None => {
                    vertical_pairs.push((i.min(j), i.max(j)));
                    w[i * n + j] = cap;
                    w[j * n + i] = cap;
                }
                Some(model) => {
                    let distinct = tube_sweep(ps, &groups, &mut scratch, &model, i, j, delta);
                    let cost = pair_cost(distinct, cap);
                    computed_pairs.push((i.min(j), i.max(j), cost));
                    w[i * n + j] = cost;
                    w[j * n + i] = cost;
                    if distinct >= 1 {
                        for &r in &scratch.members {
                            if cost < w[i * n + r] {
                                w[i * n + r] = cost;
                                w[r * n + i] = cost;
                            }
                            if cost < w[r * n + j] {
                                w[r * n + j] = cost;
                                w[j * n + r] = cost;
                            }
                        }
                    }
                }
            }
        }
    }

    for i in 0..n {
        w[i * n + i] = 0.0;
    }
    Ok(CostMatrix {
        n,
        data: w,
        vertical_pairs,
        computed_pairs,
    })
}

/// All eigenvalues of the symmetric normalized Laplacian, ascending. Dense;
/// intended for diagnostics and tests.
pub fn laplacian_eigenvalues(sim: &SimilarityMatrix) -> Vec<f64> {
    let n = sim.size();
    let invd = inverse_sqrt_degrees(sim);
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let a = sim.get(i, j) * invd[i] * invd[j];
            lap[(i, j)] = if i == j { 1.0 - a } else { -a };
        }
    }
    let mut vals: Vec<f64> = lap.symmetric_eigenvalues().iter().cloned().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals
}

fn inverse_sqrt_degrees(sim: &SimilarityMatrix) -> Vec<f64> {
    let n = sim.size();
    (0..n)
        .map(|i| {
            let d: f64 = (0..n).map(|j| sim.get(i, j)).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0 // isolated vertex convention
            }
        })
        .collect()
}

/// Spectral embedding: row-normalized bottom-k eigenvectors of the
/// symmetric normalized Laplacian.
pub fn spectral_embedding(
    sim: &SimilarityMatrix,
    k: usize,
    seed: u64,
    method: EigenMethod,
) -> DMatrix<f64> {
    let n = sim.size();
    let invd = inverse_sqrt_degrees(sim);
    // Bottom-k of L = I - A are the top-k of A + I (same eigenvectors).
    let op = SymmetricOp::new(sim.entries(), n, &invd, 1.0);
    let (_, vectors) = top_eigenpairs(&op, k, seed, method);
    let mut embedding = vectors;
    for r in 0..n {
        let norm: f64 = embedding.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for c in 0..embedding.ncols() {
                embedding[(r, c)] /= norm;
            }
        }
    }
    embedding
}

/// Spectral clustering over a similarity graph. The embedding is clustered
/// with standard point K-means (20 restarts), after which each cluster gets
/// an affine centroid refit so the result is interchangeable with the
/// K-linear engine's. Deterministic given the seed.
pub fn spectral_cluster(
    ps: &PointSet,
    sim: &SimilarityMatrix,
    k: usize,
    seed: u64,
) -> Result<Clustering, SpectralError> {
    spectral_cluster_with(ps, sim, k, seed, EigenMethod::Auto)
}

pub fn spectral_cluster_with(
    ps: &PointSet,
    sim: &SimilarityMatrix,
    k: usize,
    seed: u64,
    method: EigenMethod,
) -> Result<Clustering, SpectralError> {
    let n = sim.size();
    if ps.len() != n {
        return Err(SpectralError::SizeMismatch { n, points: ps.len() });
    }
    if k < 2 || k > n {
        return Err(SpectralError::BadK { k, n });
    }

    let mut flags = Vec::new();
    let invd = inverse_sqrt_degrees(sim);
    let isolated = invd.iter().filter(|&&v| v == 0.0).count();
    if isolated > 0 {
        flags.push(format!(
            "{isolated} isolated vertices embedded at the origin and assigned to the nearest cluster"
        ));
    }

    let embedding = spectral_embedding(sim, k, seed, method);
    let (assignments, iterations) = kmeans_rows(&embedding, k, 20, 100, seed ^ 0x9e37_79b9);

    let mut sizes = vec![0usize; k];
    for &a in &assignments {
        sizes[a] += 1;
    }
    let mut centroids = Vec::with_capacity(k);
    let mut empty = vec![false; k];
    let mut rss = 0.0;
    let mut any_degenerate = false;
    for c in 0..k {
        if sizes[c] == 0 {
            empty[c] = true;
            centroids.push(AffineModel::new(vec![0.0; ps.dim()], 0.0));
            continue;
        }
        let members: Vec<Point> = ps
            .points
            .iter()
            .zip(&assignments)
            .filter(|(_, &a)| a == c)
            .map(|(p, _)| p.clone())
            .collect();
        let report = fit_affine(&members)?;
        any_degenerate |= report.degenerate;
        rss += report.rss;
        centroids.push(report.model);
    }
    if any_degenerate {
        flags.push("degenerate fit in at least one cluster".into());
    }
    if empty.iter().any(|&e| e) {
        flags.push("empty cluster in final clustering".into());
    }

    Ok(Clustering {
        assignments,
        centroids,
        rss,
        iterations,
        empty,
        flags,
    })
}

/// Standard point K-means over matrix rows with k-means++ seeding, restarts,
/// and deterministic tie-breaking. Returns assignments and the iteration
/// count of the winning run.
fn kmeans_rows(
    rows: &DMatrix<f64>,
    k: usize,
    restarts: usize,
    max_iterations: usize,
    seed: u64,
) -> (Vec<usize>, usize) {
    let n = rows.nrows();
    let dim = rows.ncols();
    let row = |i: usize| -> Vec<f64> { (0..dim).map(|c| rows[(i, c)]).collect() };
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>, usize)> = None;

    for _ in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());

        // k-means++ seeding.
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
        centers.push(row(rng.gen_range(0..n)));
        let mut d2: Vec<f64> = (0..n).map(|i| dist2(&row(i), &centers[0])).collect();
        while centers.len() < k {
            let total: f64 = d2.iter().sum();
            let next = if total > 0.0 {
                let mut target = rng.gen::<f64>() * total;
                let mut chosen = n - 1;
                for (i, &d) in d2.iter().enumerate() {
                    target -= d;
                    if target <= 0.0 {
                        chosen = i;
                        break;
                    }
                }
                chosen
            } else {
                rng.gen_range(0..n) // all remaining points coincide
            };
            centers.push(row(next));
            for (i, slot) in d2.iter_mut().enumerate() {
                let d = dist2(&row(i), centers.last().unwrap());
                if d < *slot {
                    *slot = d;
                }
            }
        }

        let mut assignments = vec![0usize; n];
        let mut iterations = 0usize;
        loop {
            iterations += 1;
            let mut changed = false;
            for (i, slot) in assignments.iter_mut().enumerate() {
                let p = row(i);
                let mut best_c = *slot;
                let mut best_d = dist2(&p, &centers[best_c]);
                for (c, center) in centers.iter().enumerate() {
                    let d = dist2(&p, center);
                    if d < best_d {
                        best_d = d;
                        best_c = c;
                    }
                }
                if best_c != *slot {
                    *slot = best_c;
                    changed = true;
                }
            }

            let mut counts = vec![0usize; k];
            let mut sums = vec![vec![0.0f64; dim]; k];
            for i in 0..n {
                counts[assignments[i]] += 1;
                for c in 0..dim {
                    sums[assignments[i]][c] += rows[(i, c)];
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    // Re-seed an empty cluster with the farthest point.
                    let far = (0..n)
                        .filter(|&i| counts[assignments[i]] > 1)
                        .max_by(|&a, &b| {
                            let da = dist2(&row(a), &centers[assignments[a]]);
                            let db = dist2(&row(b), &centers[assignments[b]]);
                            da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                        });
                    if let Some(i) = far {
                        counts[assignments[i]] -= 1;
                        for d in 0..dim {
                            sums[assignments[i]][d] -= rows[(i, d)];
                        }
                        assignments[i] = c;
                        counts[c] = 1;
                        for d in 0..dim {
                            sums[c][d] = rows[(i, d)];
                        }
                        changed = true;
                    }
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    for d in 0..dim {
                        centers[c][d] = sums[c][d] / counts[c] as f64;
                    }
                }
            }

            if !changed || iterations >= max_iterations {
                break;
            }
        }

        let wcss: f64 = (0..n).map(|i| dist2(&row(i), &centers[assignments[i]])).sum();
        let replace = match &best {
            None => true,
            Some((best_wcss, _, _)) => wcss < *best_wcss,
        };
        if replace {
            best = Some((wcss, assignments, iterations));
        }
    }

    let (_, assignments, iterations) = best.expect("at least one restart");
    (assignments, iterations)
}
