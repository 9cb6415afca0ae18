//! K-linear clustering: K-means with affine "line centroids".
//!
//! Each iteration refits one affine model per cluster and then moves points
//! to a different cluster only when that strictly lowers their squared
//! vertical residual; exact ties keep the current assignment, which rules
//! out oscillation. Runs restart from random partitions (or from
//! high-coverage tube lines) and the best residual sum of squares wins.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affine::{fit_affine, AffineModel, FitError};
use crate::trace::PointSet;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("{points} points cannot form {k} clusters")]
    TooFewPoints { points: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("tube initialization needs at least two points")]
    TooFewForTubes,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// How a run's initial partition is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitStrategy {
    /// Uniform random assignment (each cluster seeded with one point first).
    RandomPartition,
    /// Lines through sampled point pairs, ranked by how many points fall in
    /// an epsilon-width tube around them.
    TubePairs,
}

/// Parameters for one clustering call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KLinearConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    pub init: InitStrategy,
    /// Tube half-width for [`InitStrategy::TubePairs`]; `None` means 5% of
    /// the y range.
    pub tube_epsilon: Option<f64>,
    pub seed: u64,
}

impl KLinearConfig {
    pub fn new(k: usize) -> Self {
        KLinearConfig {
            k,
            restarts: 20,
            max_iterations: 100,
            init: InitStrategy::RandomPartition,
            tube_epsilon: None,
            seed: 0,
        }
    }
}

/// Cap on sampled candidate pairs in the tube initializer.
pub const TUBE_PAIR_BUDGET: usize = 10_000;

/// A partition of the point set with one affine centroid per cluster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<AffineModel>,
    pub rss: f64,
    pub iterations: usize,
    /// Per-cluster emptiness; an empty cluster keeps a placeholder centroid.
    pub empty: Vec<bool>,
    /// Diagnostics (initializer fallback, degenerate fits, ...).
    pub flags: Vec<String>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Squared residual of every point against its assigned centroid.
    pub fn residuals(&self, ps: &PointSet) -> Vec<f64> {
        ps.points
            .iter()
            .zip(&self.assignments)
            .map(|(p, &c)| self.centroids[c].squared_residual(p))
            .collect()
    }
}

/// Runs K-linear clustering with restarts and returns the minimum-RSS result.
/// Deterministic for a fixed config.
pub fn klinear_cluster(ps: &PointSet, cfg: &KLinearConfig) -> Result<Clustering, ClusterError> {
    let n = ps.len();
    if cfg.k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if n < cfg.k {
        return Err(ClusterError::TooFewPoints { points: n, k: cfg.k });
    }

    if all_points_identical(ps) && cfg.k >= 2 {
        // Degenerate data: one real cluster, the rest flagged empty.
        let report = fit_affine(&ps.points)?;
        let mut empty = vec![true; cfg.k];
        empty[0] = false;
        return Ok(Clustering {
            assignments: vec![0; n],
            centroids: vec![report.model; cfg.k],
            rss: report.rss,
            iterations: 1,
            empty,
            flags: vec!["all points identical; clusters beyond the first are empty".into()],
        });
    }

    if cfg.k == 1 {
        let report = fit_affine(&ps.points)?;
        let mut flags = Vec::new();
        if report.degenerate {
            flags.push("degenerate fit for cluster 0".into());
        }
        return Ok(Clustering {
            assignments: vec![0; n],
            centroids: vec![report.model],
            rss: report.rss,
            iterations: 1,
            empty: vec![false],
            flags,
        });
    }

    let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
    let restart_seeds: Vec<u64> = (0..cfg.restarts.max(1)).map(|_| seeder.gen()).collect();

    let runs: Vec<Result<Clustering, ClusterError>> = restart_seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (init, fallback) = initial_assignments(ps, cfg, &mut rng)?;
            let mut result = run_single(ps, cfg.k, init, cfg.max_iterations, None)?;
            if fallback {
                result
                    .flags
                    .push("tube initialization fell back to a random partition".into());
            }
            Ok(result)
        })
        .collect();

    let mut best: Option<Clustering> = None;
    for run in runs {
        let run = run?;
        let replace = match &best {
            None => true,
            Some(b) => run.rss < b.rss, // ties keep the earlier restart
        };
        if replace {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn all_points_identical(ps: &PointSet) -> bool {
    let first = &ps.points[0];
    ps.points.iter().all(|p| p.x == first.x && p.y == first.y)
}

fn initial_assignments(
    ps: &PointSet,
    cfg: &KLinearConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, bool), ClusterError> {
    match cfg.init {
        InitStrategy::RandomPartition => Ok((random_partition(ps.len(), cfg.k, rng), false)),
        InitStrategy::TubePairs => {
            let epsilon = cfg
                .tube_epsilon
                .unwrap_or_else(|| default_tube_epsilon(ps));
            let init = tube_pair_init_with_rng(ps, cfg.k, epsilon, rng)?;
            match init {
                Some(assignments) => Ok((assignments, false)),
                None => Ok((random_partition(ps.len(), cfg.k, rng), true)),
            }
        }
    }
}

/// Default tube half-width: 5% of the y range (or 1.0 on flat data).
pub fn default_tube_epsilon(ps: &PointSet) -> f64 {
    let range = ps.y_range();
    if range > 0.0 {
        0.05 * range
    } else {
        1.0
    }
}

/// Random partition that seeds every cluster with at least one point.
fn random_partition(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut assignments = vec![0usize; n];
    for (rank, &point) in order.iter().enumerate() {
        assignments[point] = if rank < k { rank } else { rng.gen_range(0..k) };
    }
    assignments
}

/// Initial assignments from high-coverage tube lines through sampled point
/// pairs. Deterministic given the seed. Returns the assignments, or `None`
/// when fewer than `k` non-redundant lines exist (caller falls back).
pub fn tube_pair_init(
    ps: &PointSet,
    k: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Option<Vec<usize>>, ClusterError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tube_pair_init_with_rng(ps, k, epsilon, &mut rng)
}

fn tube_pair_init_with_rng(
    ps: &PointSet,
    k: usize,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<usize>>, ClusterError> {
    let n = ps.len();
    if n < 2 {
        return Err(ClusterError::TooFewForTubes);
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(ClusterError::BadConfig(format!(
            "tube epsilon must be positive, got {epsilon}"
        )));
    }

    let all_pairs = n * (n - 1) / 2;
    let pairs: Vec<(usize, usize)> = if all_pairs <= TUBE_PAIR_BUDGET {
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect()
    } else {
        let mut sampled = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(TUBE_PAIR_BUDGET);
        while out.len() < TUBE_PAIR_BUDGET {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a == b {
                continue;
            }
            let pair = (a.min(b), a.max(b));
            if sampled.insert(pair) {
                out.push(pair);
            }
        }
        out
    };

    struct Candidate {
        model: AffineModel,
        score: usize,
        /// Tube members plus the defining pair, sorted: the points this
        /// line accounts for, used for the redundancy check.
        covered: Vec<usize>,
    }

    let mut candidates: Vec<Candidate> = Vec::new();
    for &(i, j) in &pairs {
        if ps.points[i].x == ps.points[j].x {
            continue; // vertical or duplicate pair: no usable line
        }
        let model = match fit_affine(&[ps.points[i].clone(), ps.points[j].clone()]) {
            Ok(report) => report.model,
            Err(_) => continue,
        };
        let tube: Vec<usize> = (0..n)
            .filter(|&r| r != i && r != j)
            .filter(|&r| {
                let p = &ps.points[r];
                (p.y - model.eval(&p.x)).abs() < epsilon
            })
            .collect();
        if !tube.is_empty() {
            let mut covered = tube.clone();
            covered.push(i);
            covered.push(j);
            covered.sort_unstable();
            candidates.push(Candidate {
                model,
                score: tube.len(),
                covered,
            });
        }
    }

    // Highest coverage first; pair order (already index-sorted) breaks ties.
    candidates.sort_by_key(|c| std::cmp::Reverse(c.score));

    let mut selected: Vec<&Candidate> = Vec::new();
    'outer: for cand in &candidates {
        if selected.len() == k {
            break;
        }
        for chosen in &selected {
            let overlap = cand
                .covered
                .iter()
                .filter(|r| chosen.covered.binary_search(r).is_ok())
                .count();
            if 2 * overlap > cand.covered.len() {
                continue 'outer; // mostly the same line
            }
        }
        selected.push(cand);
    }

    if selected.len() < k {
        return Ok(None);
    }

    let assignments = ps
        .points
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, cand) in selected.iter().enumerate() {
                let d = (p.y - cand.model.eval(&p.x)).abs();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(Some(assignments))
}

/// One alternating run from a given initial partition. When `history` is
/// supplied it receives the assignment vector after every iteration.
pub fn run_single(
    ps: &PointSet,
    k: usize,
    mut assignments: Vec<usize>,
    max_iterations: usize,
    mut history: Option<&mut Vec<Vec<usize>>>,
) -> Result<Clustering, ClusterError> {
    let n = ps.len();
    debug_assert_eq!(assignments.len(), n);
    let mut flags = Vec::new();

    // An arbitrary init may leave clusters empty; donate points from the
    // largest clusters so the first fit is defined.
    loop {
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let donor = sizes
            .iter()
            .enumerate()
            .max_by_key(|(_, &s)| s)
            .map(|(c, _)| c)
            .expect("k >= 1");
        let point = assignments
            .iter()
            .rposition(|&a| a == donor)
            .expect("donor is non-empty");
        assignments[point] = empty;
    }

    let mut centroids: Vec<AffineModel> = Vec::new();
    let mut iterations = 0usize;
    let mut any_degenerate = false;

    loop {
        iterations += 1;

        // Refit each cluster's line centroid.
        centroids.clear();
        for c in 0..k {
            let members: Vec<_> = ps
                .points
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p.clone())
                .collect();
            debug_assert!(!members.is_empty());
            let report = fit_affine(&members)?;
            any_degenerate |= report.degenerate;
            centroids.push(report.model);
        }

        // Reassign under the strict-improvement rule: ties stay put.
        let mut next = assignments.clone();
        for (i, p) in ps.points.iter().enumerate() {
            let current = assignments[i];
            let current_res = centroids[current].squared_residual(p);
            let mut best = current;
            let mut best_res = current_res;
            for (c, model) in centroids.iter().enumerate() {
                let res = model.squared_residual(p);
                if res < best_res {
                    best_res = res;
                    best = c;
                }
            }
            if best_res < current_res {
                next[i] = best;
            }
        }

        // A cluster everyone left is re-seeded with the worst-fit point.
        loop {
            let mut sizes = vec![0usize; k];
            for &a in &next {
                sizes[a] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let worst = (0..n)
                .filter(|&i| sizes[next[i]] > 1)
                .max_by(|&a, &b| {
                    let ra = centroids[next[a]].squared_residual(&ps.points[a]);
                    let rb = centroids[next[b]].squared_residual(&ps.points[b]);
                    ra.partial_cmp(&rb).unwrap().then(b.cmp(&a))
                });
            match worst {
                Some(i) => next[i] = empty,
                None => break, // every remaining cluster is a singleton
            }
        }

        let converged = next == assignments;
        let stopped = converged || iterations >= max_iterations;
        if next != assignments {
            assignments = next;
        }
        if let Some(h) = history.as_deref_mut() {
            h.push(assignments.clone());
        }
        if stopped {
            break;
        }
    }

    // Final fit consistent with the final assignments.
    let mut sizes = vec![0usize; k];
    for &a in &assignments {
        sizes[a] += 1;
    }
    let mut empty = vec![false; k];
    centroids.clear();
    let mut rss = 0.0;
    for c in 0..k {
        if sizes[c] == 0 {
            empty[c] = true;
            centroids.push(AffineModel::new(vec![0.0; ps.dim()], 0.0));
            continue;
        }
        let members: Vec<_> = ps
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

/// Best-permutation agreement between two labelings: the largest fraction of
/// positions that match after optimally renaming one side's labels.
/// Permutation-invariant, in [0, 1]. Label counts up to 10 are matched
/// exactly via the contingency table.
pub fn best_permutation_agreement(a: &[usize], b: &[usize]) -> Result<f64, ClusterError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(ClusterError::TooFewPoints {
            points: a.len().min(b.len()),
            k: 1,
        });
    }
    let k = a
        .iter()
        .chain(b.iter())
        .max()
        .map(|&m| m + 1)
        .unwrap_or(1);
    let mut table = vec![vec![0usize; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }

    let best = if k <= 10 {
        // Exact: maximize the table trace over label permutations.
        fn search(table: &[Vec<usize>], used: &mut [bool], row: usize, acc: usize, best: &mut usize) {
            let k = table.len();
            if row == k {
                *best = (*best).max(acc);
                return;
            }
            // Upper bound: remaining rows each contribute at most their max.
            let bound: usize = (row..k)
                .map(|r| table[r].iter().cloned().max().unwrap_or(0))
                .sum();
            if acc + bound <= *best {
                return;
            }
            for c in 0..k {
                if !used[c] {
                    used[c] = true;
                    search(table, used, row + 1, acc + table[row][c], best);
                    used[c] = false;
                }
            }
        }
        let mut best = 0usize;
        search(&table, &mut vec![false; k], 0, 0, &mut best);
        best
    } else {
        // Greedy fallback for unusually many labels.
        let mut used = vec![false; k];
        let mut total = 0usize;
        for row in &table {
            let (c, v) = row
                .iter()
                .enumerate()
                .filter(|(c, _)| !used[*c])
                .max_by_key(|(_, &v)| v)
                .map(|(c, &v)| (c, v))
                .unwrap_or((0, 0));
            used[c] = true;
            total += v;
        }
        total
    };
    Ok(best as f64 / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Point;
    use approx::assert_relative_eq;

    fn two_lines() -> PointSet {
        // 5 points on y = x and 5 on y = 2x + 5.
        let mut points = Vec::new();
        for i in 0..5 {
            let x = i as f64;
            points.push(Point::new(vec![x], x));
            points.push(Point::new(vec![x], 2.0 * x + 5.0));
        }
        PointSet::new(points)
    }

    #[test]
    fn separates_two_exact_lines() {
        let ps = two_lines();
        let mut cfg = KLinearConfig::new(2);
        cfg.restarts = 30;
        let clustering = klinear_cluster(&ps, &cfg).unwrap();
        assert!(clustering.rss < 1e-16, "rss = {}", clustering.rss);
        // Points on the same generating line share a cluster.
        for i in (0..10).step_by(2) {
            assert_eq!(clustering.assignments[i], clustering.assignments[0]);
            assert_eq!(clustering.assignments[i + 1], clustering.assignments[1]);
        }
        assert_ne!(clustering.assignments[0], clustering.assignments[1]);
    }

    #[test]
    fn k1_equals_plain_fit() {
        let ps = two_lines();
        let clustering = klinear_cluster(&ps, &KLinearConfig::new(1)).unwrap();
        let report = fit_affine(&ps.points).unwrap();
        assert_relative_eq!(clustering.rss, report.rss, epsilon = 1e-12);
        assert_eq!(clustering.centroids[0], report.model);
    }

    #[test]
    fn fewer_points_than_k_is_an_error() {
        let ps = PointSet::new(vec![Point::new(vec![0.0], 0.0)]);
        assert!(matches!(
            klinear_cluster(&ps, &KLinearConfig::new(2)),
            Err(ClusterError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn identical_points_yield_one_cluster_plus_flagged_empties() {
        let ps = PointSet::new(vec![Point::new(vec![1.0], 2.0); 6]);
        let clustering = klinear_cluster(&ps, &KLinearConfig::new(3)).unwrap();
        assert!(clustering.assignments.iter().all(|&a| a == 0));
        assert_eq!(clustering.empty, vec![false, true, true]);
        assert!(clustering.rss < 1e-18);
    }

    #[test]
    fn deterministic_given_seed() {
        let ps = two_lines();
        let mut cfg = KLinearConfig::new(2);
        cfg.seed = 42;
        let a = klinear_cluster(&ps, &cfg).unwrap();
        let b = klinear_cluster(&ps, &cfg).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.rss, b.rss);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn tube_init_separates_parallel_lines() {
        // Two dense parallel lines far apart relative to epsilon.
        let mut points = Vec::new();
        for i in 0..20 {
            let x = i as f64 * 0.5;
            points.push(Point::new(vec![x], x));
            points.push(Point::new(vec![x], x + 10.0));
        }
        let ps = PointSet::new(points);
        let init = tube_pair_init(&ps, 2, 1.0, 0).unwrap().unwrap();
        for i in (0..40).step_by(2) {
            assert_eq!(init[i], init[0]);
            assert_eq!(init[i + 1], init[1]);
        }
        assert_ne!(init[0], init[1]);
    }

    #[test]
    fn tube_init_rejects_nonpositive_epsilon() {
        let ps = two_lines();
        assert!(matches!(
            tube_pair_init(&ps, 2, 0.0, 0),
            Err(ClusterError::BadConfig(_))
        ));
    }

    #[test]
    fn tube_init_collinear_falls_back() {
        let points: Vec<Point> = (0..10).map(|i| Point::new(vec![i as f64], i as f64)).collect();
        let ps = PointSet::new(points);
        assert!(tube_pair_init(&ps, 2, 0.5, 0).unwrap().is_none());
    }

    #[test]
    fn tube_init_huge_epsilon_falls_back() {
        let points = vec![
            Point::new(vec![0.0], 0.0),
            Point::new(vec![1.0], 3.0),
            Point::new(vec![2.0], 1.0),
            Point::new(vec![3.0], 4.0),
        ];
        let ps = PointSet::new(points);
        // Epsilon at the data range: every line's tube holds everything.
        assert!(tube_pair_init(&ps, 2, 100.0, 0).unwrap().is_none());
    }

    #[test]
    fn agreement_is_permutation_invariant() {
        let a = vec![0, 0, 1, 1, 2, 2];
        let b = vec![2, 2, 0, 0, 1, 1];
        assert_relative_eq!(best_permutation_agreement(&a, &b).unwrap(), 1.0);
        let c = vec![2, 2, 0, 1, 1, 1];
        assert_relative_eq!(
            best_permutation_agreement(&a, &c).unwrap(),
            5.0 / 6.0
        );
        assert!(best_permutation_agreement(&a, &[0]).is_err());
    }

    #[test]
    fn rss_is_monotone_within_a_run() {
        let ps = two_lines();
        let mut history = Vec::new();
        let init = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        run_single(&ps, 2, init, 100, Some(&mut history)).unwrap();
        // Recompute rss per recorded state.
        let mut last = f64::INFINITY;
        for state in &history {
            let mut rss = 0.0;
            for c in 0..2 {
                let members: Vec<_> = ps
                    .points
                    .iter()
                    .zip(state)
                    .filter(|(_, &a)| a == c)
                    .map(|(p, _)| p.clone())
                    .collect();
                if !members.is_empty() {
                    rss += fit_affine(&members).unwrap().rss;
                }
            }
            assert!(rss <= last + 1e-12 * (1.0 + last));
            last = rss;
        }
    }
}
