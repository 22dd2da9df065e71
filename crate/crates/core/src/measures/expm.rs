//! Matrix exponential by scaling and squaring with a degree-13 Padé
//! approximant, the standard double-precision recipe: scale `A` by `2^-s`
//! until its 1-norm is below the degree-13 threshold, evaluate the (13, 13)
//! Padé approximant with a partial-pivot LU solve, then square `s` times.

use super::Matrix;

// Largest 1-norm for which the (13,13) approximant attains full double
// precision without scaling.
const THETA_13: f64 = 5.371920351148152;

const B: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// `exp(A)` for square `A`; relative error around 1e-12 for well-scaled
/// inputs.
pub fn matrix_exponential(a: &Matrix) -> Matrix {
    assert!(a.is_square(), "matrix exponential needs a square matrix");
    let n = a.rows();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    let norm = a.norm_one();
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as u32
    } else {
        0
    };
    let a = a.scale(1.0 / f64::powi(2.0, s as i32));

    let ident = Matrix::identity(n);
    let a2 = a.matmul(&a);
    let a4 = a2.matmul(&a2);
    let a6 = a2.matmul(&a4);

    // U = A * (A6*(b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I)
    let u_inner = a6
        .matmul(&a6.scale(B[13]).add(&a4.scale(B[11])).add(&a2.scale(B[9])))
        .add(&a6.scale(B[7]))
        .add(&a4.scale(B[5]))
        .add(&a2.scale(B[3]))
        .add(&ident.scale(B[1]));
    let u = a.matmul(&u_inner);

    // V = A6*(b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
    let v = a6
        .matmul(&a6.scale(B[12]).add(&a4.scale(B[10])).add(&a2.scale(B[8])))
        .add(&a6.scale(B[6]))
        .add(&a4.scale(B[4]))
        .add(&a2.scale(B[2]))
        .add(&ident.scale(B[0]));

    // (V - U) X = (V + U)
    let mut x = v.sub(&u).solve(&v.add(&u));
    for _ in 0..s {
        x = x.matmul(&x);
    }
    x
}
