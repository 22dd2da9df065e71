//! Small dense nonsymmetric eigensolver: Householder reduction to upper
//! Hessenberg form followed by the implicit double-shift QR iteration with
//! deflation. Intended for the modest matrix sizes this crate works with
//! (interconnection matrices and Jacobians, n <= 16 or so); used by the
//! eigenvalue/measure sandwich check and as an oracle in tests.

use super::Matrix;

/// All eigenvalues of a square real matrix as `(re, im)` pairs, in no
/// particular order. Complex eigenvalues come in conjugate pairs.
pub fn eigenvalues(a: &Matrix) -> Vec<(f64, f64)> {
    assert!(a.is_square(), "eigenvalues need a square matrix");
    let n = a.rows();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![(a[(0, 0)], 0.0)];
    }
    let mut h = hessenberg(a);
    francis_qr(&mut h)
}

/// Reduce to upper Hessenberg form by Householder similarity transforms.
fn hessenberg(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut h = a.clone();
    for k in 0..n.saturating_sub(2) {
        // Householder vector for column k, rows k+1..n.
        let mut v: Vec<f64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let alpha = super::vector_norm(&v, crate::system::Norm::Two);
        if alpha == 0.0 {
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // H := P H with P = I - beta v v^T acting on rows k+1..n.
        for j in 0..n {
            let dot: f64 = (0..v.len()).map(|i| v[i] * h[(k + 1 + i, j)]).sum();
            let f = beta * dot;
            for i in 0..v.len() {
                h[(k + 1 + i, j)] -= f * v[i];
            }
        }
        // H := H P acting on columns k+1..n.
        for i in 0..n {
            let dot: f64 = (0..v.len()).map(|j| v[j] * h[(i, k + 1 + j)]).sum();
            let f = beta * dot;
            for j in 0..v.len() {
                h[(i, k + 1 + j)] -= f * v[j];
            }
        }
        // Enforce exact zeros below the subdiagonal in this column.
        for i in k + 2..n {
            h[(i, k)] = 0.0;
        }
    }
    h
}

fn sign_with(mag: f64, sign_of: f64) -> f64 {
    if sign_of >= 0.0 {
        mag.abs()
    } else {
        -mag.abs()
    }
}

/// Double-shift QR with deflation on an upper Hessenberg matrix, consuming
/// it; follows the classic implicit-shift formulation.
fn francis_qr(h: &mut Matrix) -> Vec<(f64, f64)> {
    let n = h.rows();
    let mut eigs: Vec<(f64, f64)> = Vec::with_capacity(n);
    let eps = f64::EPSILON;
    let anorm_scale: f64 = {
        let s = h.norm_inf();
        if s == 0.0 {
            1.0
        } else {
            s
        }
    };

    let mut hi = n - 1; // active block is rows/cols lo..=hi
    let mut t_shift = 0.0; // accumulated exceptional-shift offset
    'outer: loop {
        // Deflate fully converged 1x1 / 2x2 trailing blocks.
        let mut its = 0;
        loop {
            // Find the start of the active block: smallest lo such that the
            // subdiagonal entry just above it is negligible.
            let mut lo = hi;
            while lo > 0 {
                let s = h[(lo - 1, lo - 1)].abs() + h[(lo, lo)].abs();
                let s = if s == 0.0 { anorm_scale } else { s };
                if h[(lo, lo - 1)].abs() <= eps * s {
                    h[(lo, lo - 1)] = 0.0;
                    break;
                }
                lo -= 1;
            }

            let x = h[(hi, hi)];
            if lo == hi {
                // 1x1 block: real eigenvalue.
                eigs.push((x + t_shift, 0.0));
                if hi == 0 {
                    break 'outer;
                }
                hi -= 1;
                break;
            }
            let y = h[(hi - 1, hi - 1)];
            let w = h[(hi, hi - 1)] * h[(hi - 1, hi)];
            if lo == hi - 1 {
                // 2x2 block: quadratic formula on [[y, *], [*, x]].
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                let xx = x + t_shift;
                if q >= 0.0 {
                    let z = p + sign_with(z, p);
                    let e1 = xx + z;
                    let e2 = if z != 0.0 { xx - w / z } else { e1 };
                    eigs.push((e1, 0.0));
                    eigs.push((e2, 0.0));
                } else {
                    eigs.push((xx + p, z));
                    eigs.push((xx + p, -z));
                }
                if hi == 1 {
                    break 'outer;
                }
                hi -= 2;
                break;
            }

            // No deflation possible: perform one double-shift sweep.
            assert!(
                its < 60,
                "QR iteration failed to converge on an eigenvalue block"
            );
            let (mut x, mut y, mut w) = (x, y, w);
            if its == 10 || its == 20 || its == 30 || its == 40 || its == 50 {
                // Exceptional shift to break symmetry-induced cycles.
                t_shift += x;
                for i in 0..=hi {
                    h[(i, i)] -= x;
                }
                let s = h[(hi, hi - 1)].abs() + h[(hi - 1, hi - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;

            // Find m: the row where the implicit shift can start without
            // disturbing already-converged structure.
            let mut m = hi - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = h[(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - rr - ss;
                r = h[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == lo {
                    break;
                }
                let u = h[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=hi {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            // Chase the bulge from row m down to hi.
            for k in m..hi {
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if k != hi - 1 { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                let s = sign_with((p * p + q * q + r * r).sqrt(), p);
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if lo != m {
                        h[(k, k - 1)] = -h[(k, k - 1)];
                    }
                } else {
                    h[(k, k - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                // Row modification.
                for j in k..=hi {
                    let mut pp = h[(k, j)] + q * h[(k + 1, j)];
                    if k != hi - 1 {
                        pp += r * h[(k + 2, j)];
                        h[(k + 2, j)] -= pp * z;
                    }
                    h[(k + 1, j)] -= pp * y;
                    h[(k, j)] -= pp * x;
                }
                // Column modification.
                let mmin = if hi < k + 3 { hi } else { k + 3 };
                for i in lo..=mmin {
                    let mut pp = x * h[(i, k)] + y * h[(i, k + 1)];
                    if k != hi - 1 {
                        pp += z * h[(i, k + 2)];
                        h[(i, k + 2)] -= pp * r;
                    }
                    h[(i, k + 1)] -= pp * q;
                    h[(i, k)] -= pp;
                }
            }
        }
    }
    eigs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_re(mut eigs: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
        eigs.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
        eigs
    }

    #[test]
    fn diagonal_matrix() {
        let a = Matrix::from_rows(&[&[3.0, 0.0, 0.0], &[0.0, -1.0, 0.0], &[0.0, 0.0, 2.0]]);
        let e = sorted_re(eigenvalues(&a));
        let want = [(-1.0, 0.0), (2.0, 0.0), (3.0, 0.0)];
        for (got, w) in e.iter().zip(want.iter()) {
            assert!((got.0 - w.0).abs() < 1e-12 && got.1.abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_gives_conjugate_pair() {
        let a = Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let e = sorted_re(eigenvalues(&a));
        assert!((e[0].0).abs() < 1e-12 && (e[0].1 + 1.0).abs() < 1e-12);
        assert!((e[1].0).abs() < 1e-12 && (e[1].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn companion_matrix_of_known_cubic() {
        // x^3 - 6x^2 + 11x - 6 = (x-1)(x-2)(x-3).
        let a = Matrix::from_rows(&[&[0.0, 0.0, 6.0], &[1.0, 0.0, -11.0], &[0.0, 1.0, 6.0]]);
        let mut re: Vec<f64> = eigenvalues(&a).iter().map(|e| e.0).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in re.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn defective_jordan_block() {
        // Jordan block with eigenvalue 2 (algebraic multiplicity 3).
        let a = Matrix::from_rows(&[&[2.0, 1.0, 0.0], &[0.0, 2.0, 1.0], &[0.0, 0.0, 2.0]]);
        for (re, im) in eigenvalues(&a) {
            assert!((re - 2.0).abs() < 1e-5, "defective eigenvalue drift: {re}");
            assert!(im.abs() < 1e-5);
        }
    }

    #[test]
    fn trace_and_det_consistency_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for n in 2..=8usize {
            for _ in 0..50 {
                let mut a = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        a[(i, j)] = rng.gen_range(-2.0..2.0);
                    }
                }
                let eigs = eigenvalues(&a);
                assert_eq!(eigs.len(), n);
                let tr_eig: f64 = eigs.iter().map(|e| e.0).sum();
                assert!(
                    (tr_eig - a.trace()).abs() < 1e-8 * (1.0 + a.trace().abs()),
                    "trace mismatch n={n}: {tr_eig} vs {}",
                    a.trace()
                );
                // Product of eigenvalues = det (imaginary parts cancel in
                // conjugate pairs; compute complex product).
                let (mut pr, mut pi) = (1.0f64, 0.0f64);
                for (re, im) in &eigs {
                    let (nr, ni) = (pr * re - pi * im, pr * im + pi * re);
                    pr = nr;
                    pi = ni;
                }
                let d = a.det();
                assert!(
                    (pr - d).abs() < 1e-6 * (1.0 + d.abs()) && pi.abs() < 1e-6 * (1.0 + d.abs()),
                    "det mismatch n={n}: ({pr}, {pi}) vs {d}"
                );
            }
        }
    }
}
