//! Dense matrix kernels: induced and mixed norms, matrix measures
//! (logarithmic norms), Metzler spectral abscissa, matrix exponential, and
//! the interconnection matrix of a partitioned system.
//!
//! The matrix measure associated with a vector norm is
//! `mu(A) = lim_{h -> 0+} (||I + hA|| - 1)/h`; closed forms are used for the
//! 1, 2, and infinity norms. For any eigenvalue lambda of A the sandwich
//! `-mu(-A) <= Re(lambda) <= mu(A) <= ||A||` holds, which
//! [`measure_sandwich_check`] verifies numerically using the module's
//! small-matrix eigensolver.

mod eig;
mod expm;

pub use eig::eigenvalues;
pub use expm::matrix_exponential;

use crate::system::{Norm, System};
use crate::expr::EvalError;

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from explicit rows; all rows must have equal length.
    pub fn from_rows(rows: &[&[f64]]) -> Matrix {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut m = Matrix::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            m.data[i * c..(i + 1) * c].copy_from_slice(row);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch in matmul");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "dimension mismatch in matvec");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut s = 0.0;
            for j in 0..self.cols {
                s += self[(i, j)] * v[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn scale(&self, c: f64) -> Matrix {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= c;
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v += w;
        }
        out
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v -= w;
        }
        out
    }

    /// Extract the block with the given row and column ranges.
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), cols.len());
        for (bi, i) in rows.clone().enumerate() {
            for (bj, j) in cols.clone().enumerate() {
                out[(bi, bj)] = self[(i, j)];
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        assert!(self.is_square());
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].abs()).sum())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum())
            .fold(0.0, f64::max)
    }

    /// Determinant via LU with partial pivoting.
    pub fn det(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut det = 1.0;
        for k in 0..n {
            let mut piv = k;
            for i in k + 1..n {
                if a[(i, k)].abs() > a[(piv, k)].abs() {
                    piv = i;
                }
            }
            if a[(piv, k)] == 0.0 {
                return 0.0;
            }
            if piv != k {
                for j in 0..n {
                    let tmp = a[(k, j)];
                    a[(k, j)] = a[(piv, j)];
                    a[(piv, j)] = tmp;
                }
                det = -det;
            }
            det *= a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / a[(k, k)];
                for j in k..n {
                    a[(i, j)] -= f * a[(k, j)];
                }
            }
        }
        det
    }

    /// Solve `self * X = B` for X via LU with partial pivoting.
    /// Panics if the matrix is numerically singular.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        assert!(self.is_square());
        assert_eq!(self.rows, b.rows);
        let n = self.rows;
        let mut a = self.clone();
        let mut x = b.clone();
        for k in 0..n {
            let mut piv = k;
            for i in k + 1..n {
                if a[(i, k)].abs() > a[(piv, k)].abs() {
                    piv = i;
                }
            }
            assert!(a[(piv, k)] != 0.0, "singular matrix in solve");
            if piv != k {
                for j in 0..n {
                    a.data.swap(k * n + j, piv * n + j);
                }
                for j in 0..x.cols {
                    x.data.swap(k * x.cols + j, piv * x.cols + j);
                }
            }
            for i in k + 1..n {
                let f = a[(i, k)] / a[(k, k)];
                if f == 0.0 {
                    continue;
                }
                for j in k..n {
                    a[(i, j)] -= f * a[(k, j)];
                }
                for j in 0..x.cols {
                    x[(i, j)] -= f * x[(k, j)];
                }
            }
        }
        for k in (0..n).rev() {
            for j in 0..x.cols {
                let mut s = x[(k, j)];
                for i in k + 1..n {
                    s -= a[(k, i)] * x[(i, j)];
                }
                x[(k, j)] = s / a[(k, k)];
            }
        }
        x
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl std::fmt::Display for Matrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for i in 0..self.rows {
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{:>12.6}", self[(i, j)])?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Vector p-norm for p in {1, 2, inf}.
pub fn vector_norm(v: &[f64], p: Norm) -> f64 {
    match p {
        Norm::One => v.iter().map(|x| x.abs()).sum(),
        Norm::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        Norm::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// Induced operator norm `||A||_p = max_{|v|_p = 1} |Av|_p`.
///
/// p = 1 and p = inf use their closed forms (max column / row absolute sum);
/// p = 2 is the largest singular value, computed by power iteration on
/// `A^T A` to relative tolerance 1e-12 (with a Jacobi eigensolve as a
/// fallback if the iteration stalls).
pub fn induced_norm(a: &Matrix, p: Norm) -> f64 {
    match p {
        Norm::One => a.norm_one(),
        Norm::Inf => a.norm_inf(),
        Norm::Two => sigma_max(a),
    }
}

/// Mixed induced norm `||A||_{out<-in} = max_{|v|_in = 1} |Av|_out`.
///
/// Closed forms exist for in = out (see [`induced_norm`]) and for
/// (out, in) = (inf, 1): max |a_ij|, (inf, 2): max row 2-norm,
/// (2, 1): max column 2-norm. The remaining combinations with an inf or 1
/// norm reduce to a maximum over sign vectors, computed exactly for up to 20
/// relevant dimensions; beyond that a safe upper bound is returned (these
/// norms only enter as interconnection gains, where an upper bound preserves
/// the validity of every derived entropy bound).
pub fn mixed_norm(a: &Matrix, out: Norm, inn: Norm) -> f64 {
    const ENUM_LIMIT: usize = 20;
    match (out, inn) {
        (p, q) if p == q => induced_norm(a, p),
        (Norm::Inf, Norm::One) => a.max_abs(),
        (Norm::Inf, Norm::Two) => (0..a.rows())
            .map(|i| {
                (0..a.cols())
                    .map(|j| a[(i, j)] * a[(i, j)])
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max),
        (Norm::Two, Norm::One) => (0..a.cols())
            .map(|j| {
                (0..a.rows())
                    .map(|i| a[(i, j)] * a[(i, j)])
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max),
        // max_{s in {-1,1}^cols} |As|_out: the unit inf-ball is the convex
        // hull of sign vectors and v -> |Av|_out is convex.
        (Norm::One, Norm::Inf) | (Norm::Two, Norm::Inf) => {
            if a.cols() <= ENUM_LIMIT {
                max_over_sign_vectors(a.cols(), |s| vector_norm(&a.matvec(s), out))
            } else {
                // Entrywise-absolute-sum (out=1) / sqrt(cols)*sigma (out=2)
                // upper bounds.
                match out {
                    Norm::One => a.data.iter().map(|v| v.abs()).sum(),
                    _ => (a.cols() as f64).sqrt() * sigma_max(a),
                }
            }
        }
        // max_{|v|_2=1} |Av|_1 = max_{s in {-1,1}^rows} |A^T s|_2.
        (Norm::One, Norm::Two) => {
            if a.rows() <= ENUM_LIMIT {
                let at = a.transpose();
                max_over_sign_vectors(a.rows(), |s| vector_norm(&at.matvec(s), Norm::Two))
            } else {
                (a.rows() as f64).sqrt() * sigma_max(a)
            }
        }
        _ => unreachable!("all (out, in) pairs are covered"),
    }
}

fn max_over_sign_vectors(dim: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut s = vec![1.0; dim];
    let mut best = f(&s);
    // Gray-code sweep over all sign patterns (half of them by symmetry).
    for code in 1u64..(1u64 << (dim - 1)) {
        let flip = code.trailing_zeros() as usize;
        s[flip] = -s[flip];
        best = best.max(f(&s));
    }
    best
}

/// Matrix measure (logarithmic norm) `mu_p(A)` for p in {1, 2, inf}.
///
/// Closed forms: `mu_inf = max_i (a_ii + sum_{j!=i} |a_ij|)`,
/// `mu_1 = max_j (a_jj + sum_{i!=j} |a_ij|)`,
/// `mu_2 = lambda_max((A + A^T)/2)` via cyclic Jacobi.
pub fn matrix_measure(a: &Matrix, p: Norm) -> f64 {
    assert!(a.is_square(), "matrix measure needs a square matrix");
    let n = a.rows();
    match p {
        Norm::Inf => (0..n)
            .map(|i| {
                a[(i, i)]
                    + (0..n)
                        .filter(|&j| j != i)
                        .map(|j| a[(i, j)].abs())
                        .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max),
        Norm::One => (0..n)
            .map(|j| {
                a[(j, j)]
                    + (0..n)
                        .filter(|&i| i != j)
                        .map(|i| a[(i, j)].abs())
                        .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max),
        Norm::Two => {
            let sym = a.add(&a.transpose()).scale(0.5);
            symmetric_eigenvalues(&sym)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

/// All eigenvalues of a symmetric matrix via cyclic Jacobi rotations
/// (off-diagonal Frobenius norm driven below 1e-13 times the matrix scale).
pub fn symmetric_eigenvalues(s: &Matrix) -> Vec<f64> {
    assert!(s.is_square());
    let n = s.rows();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![s[(0, 0)]];
    }
    let mut a = s.clone();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let tol = 1e-13 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= tol * 1e-3 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

/// Largest singular value via power iteration on `A^T A`.
fn sigma_max(a: &Matrix) -> f64 {
    if a.rows() == 0 || a.cols() == 0 {
        return 0.0;
    }
    // Iterate on the smaller Gram matrix.
    let g = if a.cols() <= a.rows() {
        a.transpose().matmul(a)
    } else {
        a.matmul(&a.transpose())
    };
    let n = g.rows();
    if g.max_abs() == 0.0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i as f64 + 1.0) / n as f64).collect();
    normalize(&mut v);
    let mut lambda = 0.0f64;
    let mut stable = 0;
    for _ in 0..20_000 {
        let w = g.matvec(&v);
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let wn = vector_norm(&w, Norm::Two);
        if wn == 0.0 {
            return 0.0;
        }
        v = w;
        normalize(&mut v);
        if (next - lambda).abs() <= 1e-12 * next.abs().max(1e-300) {
            stable += 1;
            if stable >= 3 {
                return next.max(0.0).sqrt();
            }
        } else {
            stable = 0;
        }
        lambda = next;
    }
    // Stalled (e.g. tightly clustered top eigenvalues): fall back to the
    // exact symmetric eigensolve.
    symmetric_eigenvalues(&g)
        .into_iter()
        .fold(0.0, f64::max)
        .max(0.0)
        .sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = vector_norm(v, Norm::Two);
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}

/// True iff every off-diagonal entry is >= 0 (exact check, no tolerance).
pub fn is_metzler(a: &Matrix) -> bool {
    assert!(a.is_square());
    let n = a.rows();
    (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] >= 0.0))
}

/// Spectral abscissa (largest real part, which is real — the Perron root
/// shifted) of a Metzler matrix.
///
/// Computed as `rho(M + cI) - c` with `c = 1 + max_i |m_ii|`, which makes the
/// shifted matrix nonnegative with positive diagonal; the Perron root comes
/// from power iteration with Rayleigh-quotient acceleration. If the iteration
/// has not met relative tolerance 1e-10 within its budget, falls back to
/// repeated squaring of `exp(M)` with norm accumulation,
/// `(1/2^k) log ||exp(M)^{2^k}||_inf`, which converges to the abscissa.
pub fn spectral_abscissa_metzler(m: &Matrix) -> f64 {
    assert!(is_metzler(m), "spectral_abscissa_metzler requires a Metzler matrix");
    let n = m.rows();
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    if n == 1 {
        return m[(0, 0)];
    }
    let c = 1.0 + (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let mut b = m.clone();
    for i in 0..n {
        b[(i, i)] += c;
    }
    let mut v = vec![1.0; n];
    normalize(&mut v);
    let mut rho = 0.0f64;
    let mut stable = 0;
    for _ in 0..50_000 {
        let w = b.matvec(&v);
        let vw: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let vv: f64 = v.iter().map(|a| a * a).sum();
        let rq = vw / vv;
        let wn = vector_norm(&w, Norm::Two);
        if wn == 0.0 {
            // Only possible if B annihilates a nonnegative vector; the
            // squaring fallback handles it.
            break;
        }
        v = w;
        normalize(&mut v);
        // Residual check makes the Rayleigh estimate trustworthy for
        // non-symmetric B.
        let bv = b.matvec(&v);
        let res: f64 = bv
            .iter()
            .zip(&v)
            .map(|(a, x)| (a - rq * x) * (a - rq * x))
            .sum::<f64>()
            .sqrt();
        if (rq - rho).abs() <= 1e-10 * rq.abs().max(1.0) && res <= 1e-10 * rq.abs().max(1.0) {
            stable += 1;
            if stable >= 3 {
                return rq - c;
            }
        } else {
            stable = 0;
        }
        rho = rq;
    }
    spectral_abscissa_by_squaring(m)
}

/// `(1/2^k) log ||exp(M)^{2^k}||_inf` with norm-accumulated squaring.
fn spectral_abscissa_by_squaring(m: &Matrix) -> f64 {
    let mut q = matrix_exponential(m);
    let mut log_scale = 0.0f64; // log ||exp(M)^{2^k}||_inf
    let mut est_prev = f64::INFINITY;
    for k in 1..=64u32 {
        let nq = q.norm_inf();
        log_scale = 2.0 * log_scale + 2.0 * nq.ln();
        q = q.scale(1.0 / nq);
        q = q.matmul(&q);
        // After k squarings of the normalized factor, the accumulated scale
        // tracks ||exp(M)^{2^k}|| up to the (bounded) norm of the residual
        // factor, which the division by 2^k kills.
        let correction = q.norm_inf().ln();
        let est = (log_scale + correction) / f64::powi(2.0, k as i32);
        if (est - est_prev).abs() <= 1e-10 * (1.0 + est.abs()) && k >= 8 {
            return est;
        }
        est_prev = est;
    }
    est_prev
}

/// `log ||exp(A t)||_inf` computed without overflow by scaling and
/// norm-accumulated squaring. Used by the growth-identity checks, where
/// `exp(A t)` itself can exceed f64 range.
pub fn log_norm_expm(a: &Matrix, t: f64) -> f64 {
    let at = a.scale(t);
    let norm = at.norm_inf();
    let k = if norm <= 1.0 {
        0
    } else {
        norm.log2().ceil() as u32 + 1
    };
    let base = matrix_exponential(&at.scale(1.0 / f64::powi(2.0, k as i32)));
    // exp(At) = base^(2^k); track log norm through the squarings.
    let mut log_scale = 0.0f64;
    let mut q = base;
    for _ in 0..k {
        let nq = q.norm_inf();
        log_scale = 2.0 * (log_scale + nq.ln());
        q = q.scale(1.0 / nq);
        q = q.matmul(&q);
    }
    log_scale + q.norm_inf().ln()
}

/// Report from the eigenvalue/measure/norm sandwich check.
#[derive(Debug, Clone)]
pub struct SandwichReport {
    /// `-mu_p(-A)`.
    pub lower: f64,
    /// `mu_p(A)`.
    pub upper: f64,
    /// `||A||_p`.
    pub norm: f64,
    pub min_re: f64,
    pub max_re: f64,
    pub ok: bool,
}

/// Check `-mu(-A) <= Re(lambda) <= mu(A) <= ||A||` for all eigenvalues of A
/// (slack 1e-9), with eigenvalues from the module's small-matrix QR solver.
pub fn measure_sandwich_check(a: &Matrix, p: Norm) -> SandwichReport {
    let eigs = eigenvalues(a);
    let min_re = eigs.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let max_re = eigs.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    let lower = -matrix_measure(&a.scale(-1.0), p);
    let upper = matrix_measure(a, p);
    let norm = induced_norm(a, p);
    let tol = 1e-9;
    let ok = lower <= min_re + tol && max_re <= upper + tol && upper <= norm + tol;
    SandwichReport {
        lower,
        upper,
        norm,
        min_re,
        max_re,
        ok,
    }
}

/// Interconnection matrix of a partitioned system at `(t, x)`: the m-by-m
/// matrix with `mu_i(J_ii)` on the diagonal (local measure of each block's
/// own Jacobian) and the mixed norm `||J_ij||_{i<-j}` off the diagonal.
/// Metzler by construction since every off-diagonal entry is a norm.
pub fn interconnection_matrix(sys: &System, t: f64, x: &[f64]) -> Result<Matrix, EvalError> {
    let j = sys.jacobian(t, x)?;
    Ok(interconnection_from_jacobian(&j, sys.partition()))
}

/// Assemble the interconnection matrix from an already-evaluated Jacobian.
pub fn interconnection_from_jacobian(j: &Matrix, part: &crate::system::Partition) -> Matrix {
    let m = part.block_count();
    let mut out = Matrix::zeros(m, m);
    for bi in 0..m {
        for bj in 0..m {
            let blk = j.block(part.block_range(bi), part.block_range(bj));
            out[(bi, bj)] = if bi == bj {
                matrix_measure(&blk, part.local_norms()[bi])
            } else {
                mixed_norm(&blk, part.local_norms()[bi], part.local_norms()[bj])
            };
        }
    }
    out
}
