//! Symmetric eigensolvers for the spectral embedding.
//!
//! Small problems go through nalgebra's dense symmetric solver. Above
//! [`DENSE_EIGEN_LIMIT`] a full decomposition is wasteful (only the k
//! extreme eigenpairs are needed), so block subspace iteration with a
//! Rayleigh-Ritz finish is used instead; the two paths are checked against
//! each other in tests.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Largest matrix order handled by the dense solver.
pub const DENSE_EIGEN_LIMIT: usize = 1024;

/// A symmetric linear operator given by its dense row-major entries.
pub struct SymmetricOp<'a> {
    entries: &'a [f64],
    n: usize,
    /// Per-row scaling s: the operator is diag(s) . W . diag(s) + shift . I.
    row_scale: &'a [f64],
    shift: f64,
}

impl<'a> SymmetricOp<'a> {
    pub fn new(entries: &'a [f64], n: usize, row_scale: &'a [f64], shift: f64) -> Self {
        debug_assert_eq!(entries.len(), n * n);
        debug_assert_eq!(row_scale.len(), n);
        SymmetricOp {
            entries,
            n,
            row_scale,
            shift,
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// out = op * block, with `block` and `out` column-major n x p.
    fn apply_block(&self, block: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let n = self.n;
        let p = block.ncols();
        // scaled = diag(row_scale) * block, laid out row-major so the inner
        // accumulation below walks contiguous memory.
        let mut scaled = vec![0.0f64; n * p];
        for r in 0..n {
            let s = self.row_scale[r];
            for c in 0..p {
                scaled[r * p + c] = block[(r, c)] * s;
            }
        }
        // Row-parallel multiply by W; each output row is accumulated
        // sequentially, so results do not depend on thread scheduling.
        let mut result = vec![0.0f64; n * p];
        result
            .par_chunks_mut(p)
            .enumerate()
            .for_each(|(r, acc)| {
                let row = &self.entries[r * n..(r + 1) * n];
                for (j, &w) in row.iter().enumerate() {
                    if w != 0.0 {
                        let sb = &scaled[j * p..j * p + p];
                        for c in 0..p {
                            acc[c] += w * sb[c];
                        }
                    }
                }
            });
        for r in 0..n {
            let s = self.row_scale[r];
            for c in 0..p {
                out[(r, c)] = result[r * p + c] * s + self.shift * block[(r, c)];
            }
        }
    }

    /// Materializes the dense operator matrix (small n only).
    fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] = self.entries[r * n + c] * self.row_scale[r] * self.row_scale[c];
            }
        }
        for r in 0..n {
            m[(r, r)] += self.shift;
        }
        m
    }
}

/// Which eigensolver backs [`top_eigenpairs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    Auto,
    Dense,
    Subspace,
}

/// The k algebraically largest eigenpairs of a symmetric operator, sorted by
/// descending eigenvalue. Deterministic given the seed.
pub fn top_eigenpairs(
    op: &SymmetricOp,
    k: usize,
    seed: u64,
    method: EigenMethod,
) -> (Vec<f64>, DMatrix<f64>) {
    let n = op.order();
    let k = k.min(n);
    let use_dense = match method {
        EigenMethod::Dense => true,
        EigenMethod::Subspace => false,
        EigenMethod::Auto => n <= DENSE_EIGEN_LIMIT,
    };
    if use_dense {
        dense_top(op, k)
    } else {
        subspace_top(op, k, seed)
    }
}

fn dense_top(op: &SymmetricOp, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = op.order();
    let eig = SymmetricEigen::new(op.to_matrix());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut values = Vec::with_capacity(k);
    let mut vectors = DMatrix::<f64>::zeros(n, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        values.push(eig.eigenvalues[idx]);
        vectors.set_column(c, &eig.eigenvectors.column(idx));
    }
    (values, vectors)
}

fn subspace_top(op: &SymmetricOp, k: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>) {
    let n = op.order();
    let p = (k + 4).min(n);
    let max_iterations = 400;
    let check_every = 10;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DMatrix::<f64>::from_fn(n, p, |_, _| rng.gen::<f64>() - 0.5);
    orthonormalize(&mut q);

    let mut z = DMatrix::<f64>::zeros(n, p);
    let mut last_ritz: Option<Vec<f64>> = None;
    for iter in 0..max_iterations {
        op.apply_block(&q, &mut z);
        std::mem::swap(&mut q, &mut z);
        orthonormalize(&mut q);

        if (iter + 1) % check_every == 0 {
            let ritz = ritz_values(op, &q, &mut z, k);
            if let Some(prev) = &last_ritz {
                let scale = ritz.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
                let drift = ritz
                    .iter()
                    .zip(prev)
                    .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                if drift <= 1e-12 * scale {
                    break;
                }
            }
            last_ritz = Some(ritz);
        }
    }

    // Rayleigh-Ritz: rotate the converged basis into eigenvector estimates.
    op.apply_block(&q, &mut z);
    let small = q.transpose() * &z;
    let small = (&small + small.transpose()) * 0.5;
    let eig = SymmetricEigen::new(small);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut rotation = DMatrix::<f64>::zeros(p, k);
    let mut values = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        values.push(eig.eigenvalues[idx]);
        rotation.set_column(c, &eig.eigenvectors.column(idx));
    }
    (values, q * rotation)
}

fn ritz_values(op: &SymmetricOp, q: &DMatrix<f64>, scratch: &mut DMatrix<f64>, k: usize) -> Vec<f64> {
    op.apply_block(q, scratch);
    let small = q.transpose() * &*scratch;
    let small = (&small + small.transpose()) * 0.5;
    let eig = small.symmetric_eigenvalues();
    let mut vals: Vec<f64> = eig.iter().cloned().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    vals.truncate(k);
    vals
}

/// In-place modified Gram-Schmidt; deterministic replacement columns keep
/// the basis full-rank if a column collapses.
fn orthonormalize(q: &mut DMatrix<f64>) {
    let (n, p) = q.shape();
    for c in 0..p {
        for prev in 0..c {
            let proj = q.column(c).dot(&q.column(prev));
            let prev_col = q.column(prev).clone_owned();
            let mut col = q.column_mut(c);
            col.axpy(-proj, &prev_col, 1.0);
        }
        let norm = q.column(c).norm();
        if norm > 1e-300 {
            q.column_mut(c).scale_mut(1.0 / norm);
        } else {
            // Degenerate column: replace with a unit basis vector not yet
            // spanned (deterministic choice).
            let mut replacement = DVector::<f64>::zeros(n);
            replacement[c % n] = 1.0;
            for prev in 0..c {
                let proj = replacement.dot(&q.column(prev).clone_owned());
                replacement.axpy(-proj, &q.column(prev).clone_owned(), 1.0);
            }
            let norm = replacement.norm();
            if norm > 1e-300 {
                replacement.scale_mut(1.0 / norm);
            }
            q.set_column(c, &replacement);
        }
    }
}
