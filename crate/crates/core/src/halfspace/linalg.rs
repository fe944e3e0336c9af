//! Sparse symmetric systems on grid graphs: CSR storage, a banded Cholesky
//! factorization for thin grids and line-preconditioned conjugate gradients
//! for everything else.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Compressed sparse row matrix with full (both triangles) storage.
#[derive(Clone, Debug)]
pub struct Csr<T> {
    pub n: usize,
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
    pub val: Vec<T>,
}

impl<T: Real> Csr<T> {
    /// Assembles from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut trips: Vec<(usize, usize, T)>) -> Self {
        trips.sort_unstable_by_key(|t| (t.0, t.1));
        let mut ptr = vec![0usize; n + 1];
        let mut idx = Vec::with_capacity(trips.len());
        let mut val: Vec<T> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trips {
            if last == Some((r, c)) {
                let k = val.len() - 1;
                val[k] = val[k] + v;
            } else {
                idx.push(c);
                val.push(v);
                ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            ptr[r + 1] += ptr[r];
        }
        Self { n, ptr, idx, val }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.ptr[r]..self.ptr[r + 1]).map(move |k| (self.idx[k], self.val[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let s = &self.idx[self.ptr[r]..self.ptr[r + 1]];
        match s.binary_search(&c) {
            Ok(k) => self.val[self.ptr[r] + k],
            Err(_) => T::zero(),
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .into_par_iter()
            .map(|r| {
                let mut s = T::zero();
                for k in self.ptr[r]..self.ptr[r + 1] {
                    s = s + self.val[k] * x[self.idx[k]];
                }
                s
            })
            .collect()
    }

    /// Restriction to the index set `keep` (given in the new order).
    pub fn submatrix(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut trips = Vec::with_capacity(keep.len() * 5);
        for (new, &old) in keep.iter().enumerate() {
            for (c, v) in self.row(old) {
                if map[c] != usize::MAX {
                    trips.push((new, map[c], v));
                }
            }
        }
        Self::from_triplets(keep.len(), trips)
    }

    pub fn bandwidth(&self) -> usize {
        let mut b = 0;
        for r in 0..self.n {
            for (c, _) in self.row(r) {
                b = b.max(r.abs_diff(c));
            }
        }
        b
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Lower Cholesky factor in band storage: row `i` holds columns
/// `i - band ..= i`.
#[derive(Clone, Debug)]
pub struct BandedCholesky<T> {
    n: usize,
    band: usize,
    l: Vec<T>,
}

impl<T: Real> BandedCholesky<T> {
    pub fn factor(a: &Csr<T>) -> Result<Self> {
        let n = a.n;
        let band = a.bandwidth();
        let w = band + 1;
        let mut l = vec![T::zero(); n * w];
        for r in 0..n {
            for (c, v) in a.row(r) {
                if c <= r {
                    l[r * w + (band - (r - c))] = v;
                }
            }
        }
        for i in 0..n {
            let i0 = i.saturating_sub(band);
            for j in i0..=i {
                let j0 = j.saturating_sub(band).max(i0);
                let mut s = l[i * w + band - (i - j)];
                let ri = &l[i * w..(i + 1) * w];
                let rj = &l[j * w..(j + 1) * w];
                for k in j0..j {
                    s = s - ri[band - (i - k)] * rj[band - (j - k)];
                }
                if i == j {
                    if !(s > T::zero()) {
                        return Err(Error::NotPositiveDefinite { row: i });
                    }
                    l[i * w + band] = s.sqrt();
                } else {
                    l[i * w + band - (i - j)] = s / l[j * w + band];
                }
            }
        }
        Ok(Self { n, band, l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let (n, band, w) = (self.n, self.band, self.band + 1);
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(band)..i {
                s = s - self.l[i * w + band - (i - k)] * x[k];
            }
            x[i] = s / self.l[i * w + band];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + band + 1).min(n) {
                s = s - self.l[k * w + band - (k - i)] * x[k];
            }
            x[i] = s / self.l[i * w + band];
        }
        x
    }
}

/// Block Jacobi preconditioner whose blocks are chains of consecutive
/// unknowns (grid lines), each solved as a tridiagonal system.
#[derive(Clone, Debug)]
pub struct LinePreconditioner<T> {
    lines: Vec<Vec<usize>>,
    diag: Vec<Vec<T>>,
    off: Vec<Vec<T>>,
}

impl<T: Real> LinePreconditioner<T> {
    pub fn new(a: &Csr<T>, lines: Vec<Vec<usize>>) -> Self {
        let diag = lines
            .iter()
            .map(|l| l.iter().map(|&i| a.get(i, i)).collect())
            .collect();
        let off = lines
            .iter()
            .map(|l| l.windows(2).map(|p| a.get(p[0], p[1])).collect())
            .collect();
        Self { lines, diag, off }
    }

    pub fn apply(&self, r: &[T]) -> Vec<T> {
        let parts: Vec<Vec<T>> = self
            .lines
            .par_iter()
            .zip(&self.diag)
            .zip(&self.off)
            .map(|((line, d), e)| {
                let m = line.len();
                let mut c = vec![T::zero(); m];
                let mut x: Vec<T> = line.iter().map(|&i| r[i]).collect();
                let mut denom = d[0];
                x[0] = x[0] / denom;
                for k in 1..m {
                    c[k - 1] = e[k - 1] / denom;
                    denom = d[k] - e[k - 1] * c[k - 1];
                    x[k] = (x[k] - e[k - 1] * x[k - 1]) / denom;
                }
                for k in (0..m.saturating_sub(1)).rev() {
                    x[k] = x[k] - c[k] * x[k + 1];
                }
                x
            })
            .collect();
        let mut z = vec![T::zero(); r.len()];
        for (line, x) in self.lines.iter().zip(parts) {
            for (&i, v) in line.iter().zip(x) {
                z[i] = v;
            }
        }
        z
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats<T> {
    pub iterations: usize,
    pub relative_residual: T,
}

/// Preconditioned conjugate gradients from the zero initial guess.
pub fn pcg<T: Real>(
    a: &Csr<T>,
    pre: &LinePreconditioner<T>,
    b: &[T],
    rel_tol: T,
    max_iter: usize,
) -> Result<(Vec<T>, SolveStats<T>)> {
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![T::zero(); a.n];
    if bnorm == T::zero() {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: T::zero(),
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z = pre.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = a.matvec(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..a.n {
            x[i] = x[i] + alpha * p[i];
            r[i] = r[i] - alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= rel_tol {
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    relative_residual: rel,
                },
            ));
        }
        z = pre.apply(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..a.n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = dot(&r, &r).sqrt() / bnorm;
    Err(Error::SolverNonConvergence {
        iterations: max_iter,
        residual: rel.as_f64(),
    })
}

/// Factored SPD system, direct when the band is affordable.
#[derive(Clone, Debug)]
pub enum SpdSolver<T> {
    Banded {
        matrix: Csr<T>,
        order: Vec<usize>,
        factor: BandedCholesky<T>,
    },
    Iterative {
        matrix: Csr<T>,
        pre: LinePreconditioner<T>,
        max_iter: usize,
    },
}

/// Work limit (multiply-adds) above which the banded factorization is
/// abandoned in favour of conjugate gradients.
const BANDED_WORK_LIMIT: f64 = 4.0e10;
const BANDED_MEMORY_LIMIT: f64 = 6.0e7;

impl<T: Real> SpdSolver<T> {
    /// `orders` are candidate permutations (new index -> old index) tried
    /// for the direct factorization; `lines` feed the iterative fallback.
    pub fn new(matrix: Csr<T>, orders: Vec<Vec<usize>>, lines: Vec<Vec<usize>>) -> Result<Self> {
        let n = matrix.n as f64;
        let mut best: Option<(usize, Vec<usize>)> = None;
        for order in orders {
            let mut inv = vec![0usize; order.len()];
            for (new, &old) in order.iter().enumerate() {
                inv[old] = new;
            }
            let mut b = 0;
            for r in 0..matrix.n {
                for (c, _) in matrix.row(r) {
                    b = b.max(inv[r].abs_diff(inv[c]));
                }
            }
            if best.as_ref().is_none_or(|(bb, _)| b < *bb) {
                best = Some((b, order));
            }
        }
        if let Some((band, order)) = best {
            let bf = band as f64 + 1.0;
            if n * bf * bf <= BANDED_WORK_LIMIT && n * bf <= BANDED_MEMORY_LIMIT {
                let permuted = matrix.submatrix(&order);
                let factor = BandedCholesky::factor(&permuted)?;
                return Ok(Self::Banded {
                    matrix,
                    order,
                    factor,
                });
            }
        }
        let pre = LinePreconditioner::new(&matrix, lines);
        Ok(Self::Iterative {
            matrix,
            pre,
            max_iter: 20_000,
        })
    }

    pub fn matrix(&self) -> &Csr<T> {
        match self {
            Self::Banded { matrix, .. } | Self::Iterative { matrix, .. } => matrix,
        }
    }

    pub fn is_direct(&self) -> bool {
        matches!(self, Self::Banded { .. })
    }

    /// Solves to relative residual `rel_tol`.
    pub fn solve(&self, b: &[T], rel_tol: T) -> Result<(Vec<T>, SolveStats<T>)> {
        match self {
            Self::Iterative {
                matrix,
                pre,
                max_iter,
            } => pcg(matrix, pre, b, rel_tol, *max_iter),
            Self::Banded {
                matrix,
                order,
                factor,
            } => {
                let bnorm = dot(b, b).sqrt();
                let mut x = vec![T::zero(); b.len()];
                if bnorm == T::zero() {
                    return Ok((
                        x,
                        SolveStats {
                            iterations: 0,
                            relative_residual: T::zero(),
                        },
                    ));
                }
                let mut r = b.to_vec();
                let mut rel = T::one();
                // direct solve plus iterative refinement
                for it in 1..=4 {
                    let rp: Vec<T> = order.iter().map(|&o| r[o]).collect();
                    let dp = factor.solve(&rp);
                    for (new, &old) in order.iter().enumerate() {
                        x[old] = x[old] + dp[new];
                    }
                    let ax = matrix.matvec(&x);
                    for i in 0..r.len() {
                        r[i] = b[i] - ax[i];
                    }
                    rel = dot(&r, &r).sqrt() / bnorm;
                    if rel <= rel_tol {
                        return Ok((
                            x,
                            SolveStats {
                                iterations: it,
                                relative_residual: rel,
                            },
                        ));
                    }
                }
                Err(Error::SolverNonConvergence {
                    iterations: 4,
                    residual: rel.as_f64(),
                })
            }
        }
    }
}
