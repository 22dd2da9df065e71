//! Problem description: vector field, initial set, partition into
//! subsystems, and norm configuration, with exact (symbolically
//! differentiated) Jacobian evaluation.

use crate::expr::{EvalError, Expr};
use crate::measures::Matrix;
use thiserror::Error;

/// Which vector norm (and induced matrix norm / measure) to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    One,
    Two,
    Inf,
}

impl Norm {
    pub fn name(self) -> &'static str {
        match self {
            Norm::One => "1",
            Norm::Two => "2",
            Norm::Inf => "inf",
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = String;
    fn from_str(s: &str) -> Result<Norm, String> {
        match s.trim() {
            "1" | "one" => Ok(Norm::One),
            "2" | "two" => Ok(Norm::Two),
            "inf" | "infinity" | "max" => Ok(Norm::Inf),
            other => Err(format!("unknown norm {other:?} (expected 1, 2, or inf)")),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Axis-aligned box with nonempty interior; the initial set of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<BoxSet, BuildError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(BuildError::BoxDimension {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(BuildError::EmptyInterior {
                    axis: i,
                    lower: *lo,
                    upper: *hi,
                });
            }
        }
        Ok(BoxSet { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    /// Corner selected by bitmask: bit j set picks the upper end on axis j.
    pub fn corner(&self, mask: u64) -> Vec<f64> {
        (0..self.dim())
            .map(|j| {
                if mask >> j & 1 == 1 {
                    self.upper[j]
                } else {
                    self.lower[j]
                }
            })
            .collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    /// Point at the given per-axis fractions (0 = lower corner, 1 = upper).
    pub fn at_fractions(&self, fractions: &[f64]) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(fractions)
            .map(|((lo, hi), f)| lo + f * (hi - lo))
            .collect()
    }
}

/// Partition of the state into m contiguous blocks, each with a local norm,
/// plus the norm used on the m-dimensional network level. A single block
/// (m = 1) expresses the unpartitioned case through the same machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    local_norms: Vec<Norm>,
    network_norm: Norm,
}

impl Partition {
    pub fn new(
        sizes: Vec<usize>,
        local_norms: Vec<Norm>,
        network_norm: Norm,
    ) -> Result<Partition, BuildError> {
        if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
            return Err(BuildError::BadPartition(
                "partition needs at least one nonempty block".into(),
            ));
        }
        if local_norms.len() != sizes.len() {
            return Err(BuildError::BadPartition(format!(
                "{} blocks but {} local norms",
                sizes.len(),
                local_norms.len()
            )));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(Partition {
            sizes,
            offsets,
            local_norms,
            network_norm,
        })
    }

    /// Single block covering the whole state.
    pub fn trivial(n: usize, norm: Norm) -> Partition {
        Partition::new(vec![n], vec![norm], norm).expect("trivial partition is valid")
    }

    /// Every coordinate its own block.
    pub fn scalar(n: usize, norm: Norm) -> Partition {
        Partition::new(vec![1; n], vec![norm; n], norm).expect("scalar partition is valid")
    }

    pub fn block_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total_dim(&self) -> usize {
        self.offsets.last().unwrap() + self.sizes.last().unwrap()
    }

    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.sizes[i]
    }

    pub fn local_norms(&self) -> &[Norm] {
        &self.local_norms
    }

    pub fn network_norm(&self) -> Norm {
        self.network_norm
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("expression for f{}: {source}", .index + 1)]
    Parse {
        index: usize,
        source: crate::expr::ParseError,
    },
    #[error("initial set dimensions disagree: {lower} lower vs {upper} upper bounds")]
    BoxDimension { lower: usize, upper: usize },
    #[error("initial set axis {axis} has empty interior: [{lower}, {upper}]")]
    EmptyInterior { axis: usize, lower: f64, upper: f64 },
    #[error("initial set has dimension {box_dim} but the system has {n} states")]
    DimensionMismatch { box_dim: usize, n: usize },
    #[error("invalid partition: {0}")]
    BadPartition(String),
    #[error("initial time must be finite, got {0}")]
    NonFiniteT0(f64),
    #[error("breakpoint must be finite, got {0}")]
    NonFiniteBreakpoint(f64),
}

/// Immutable system description with precomputed symbolic Jacobian; shared
/// read-only across worker threads.
#[derive(Debug, Clone)]
pub struct System {
    n: usize,
    f: Vec<Expr>,
    jac: Vec<Vec<Expr>>,
    t_breakpoints: Vec<f64>,
    partition: Partition,
    initial_set: BoxSet,
    t0: f64,
}

impl System {
    /// Parse the component expressions and assemble a system. The Jacobian
    /// is differentiated symbolically and simplified up front. Breakpoints
    /// declared explicitly are merged with the time thresholds of any
    /// piecewise expressions so the integrator never steps across a
    /// discontinuity in t.
    pub fn build(
        field_texts: &[&str],
        t_breakpoints: &[f64],
        partition: Option<Partition>,
        initial_set: BoxSet,
        t0: f64,
    ) -> Result<System, BuildError> {
        let n = field_texts.len();
        let mut f = Vec::with_capacity(n);
        for (i, text) in field_texts.iter().enumerate() {
            let e = crate::expr::parse(text, n)
                .map_err(|source| BuildError::Parse { index: i, source })?;
            f.push(e.simplify());
        }
        System::from_exprs(f, t_breakpoints, partition, initial_set, t0)
    }

    /// Assemble from already-built expressions (dimension = f.len()).
    pub fn from_exprs(
        f: Vec<Expr>,
        t_breakpoints: &[f64],
        partition: Option<Partition>,
        initial_set: BoxSet,
        t0: f64,
    ) -> Result<System, BuildError> {
        let n = f.len();
        if n == 0 {
            return Err(BuildError::BadPartition("system needs n >= 1".into()));
        }
        if !t0.is_finite() {
            return Err(BuildError::NonFiniteT0(t0));
        }
        if initial_set.dim() != n {
            return Err(BuildError::DimensionMismatch {
                box_dim: initial_set.dim(),
                n,
            });
        }
        let partition = partition.unwrap_or_else(|| Partition::trivial(n, Norm::Inf));
        if partition.total_dim() != n {
            return Err(BuildError::BadPartition(format!(
                "block sizes sum to {} but the system has {} states",
                partition.total_dim(),
                n
            )));
        }

        let mut breaks: Vec<f64> = Vec::new();
        for &b in t_breakpoints {
            if !b.is_finite() {
                return Err(BuildError::NonFiniteBreakpoint(b));
            }
            breaks.push(b);
        }
        for e in &f {
            breaks.extend(e.time_breakpoints());
        }
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();

        let jac = f
            .iter()
            .map(|fi| {
                // differentiate takes the 1-based variable index (x1..xn).
                (1..=n)
                    .map(|j| fi.differentiate(j).simplify())
                    .collect::<Vec<_>>()
            })
            .collect();

        Ok(System {
            n,
            f,
            jac,
            t_breakpoints: breaks,
            partition,
            initial_set,
            t0,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn initial_set(&self) -> &BoxSet {
        &self.initial_set
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn components(&self) -> &[Expr] {
        &self.f
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.t_breakpoints
    }

    /// Replace the partition (used to view one system under several
    /// partitions without re-differentiating).
    pub fn with_partition(&self, partition: Partition) -> Result<System, BuildError> {
        if partition.total_dim() != self.n {
            return Err(BuildError::BadPartition(format!(
                "block sizes sum to {} but the system has {} states",
                partition.total_dim(),
                self.n
            )));
        }
        let mut sys = self.clone();
        sys.partition = partition;
        Ok(sys)
    }

    /// Replace the initial set (same dimension).
    pub fn with_initial_set(&self, initial_set: BoxSet) -> Result<System, BuildError> {
        if initial_set.dim() != self.n {
            return Err(BuildError::DimensionMismatch {
                box_dim: initial_set.dim(),
                n: self.n,
            });
        }
        let mut sys = self.clone();
        sys.initial_set = initial_set;
        Ok(sys)
    }

    /// Replace the initial time.
    pub fn with_t0(&self, t0: f64) -> Result<System, BuildError> {
        if !t0.is_finite() {
            return Err(BuildError::NonFiniteT0(t0));
        }
        let mut sys = self.clone();
        sys.t0 = t0;
        Ok(sys)
    }

    /// Evaluate the vector field.
    pub fn f_eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        debug_assert_eq!(x.len(), self.n);
        self.f.iter().map(|e| e.eval(t, x)).collect()
    }

    /// Evaluate the Jacobian matrix at `(t, x)`.
    pub fn jacobian(&self, t: f64, x: &[f64]) -> Result<Matrix, EvalError> {
        let mut j = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for jj in 0..self.n {
                j[(i, jj)] = self.jac[i][jj].eval(t, x)?;
            }
        }
        Ok(j)
    }

    /// The `(bi, bj)` sub-block of the Jacobian under the system partition.
    pub fn jacobian_block(
        &self,
        bi: usize,
        bj: usize,
        t: f64,
        x: &[f64],
    ) -> Result<Matrix, EvalError> {
        assert!(
            bi < self.partition.block_count() && bj < self.partition.block_count(),
            "block index out of range"
        );
        let rows = self.partition.block_range(bi);
        let cols = self.partition.block_range(bj);
        let mut m = Matrix::zeros(rows.len(), cols.len());
        for (r, i) in rows.clone().enumerate() {
            for (c, j) in cols.clone().enumerate() {
                m[(r, c)] = self.jac[i][j].eval(t, x)?;
            }
        }
        Ok(m)
    }

    /// Trace of the Jacobian (divergence of f) at `(t, x)`.
    pub fn jacobian_trace(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        let mut s = 0.0;
        for i in 0..self.n {
            s += self.jac[i][i].eval(t, x)?;
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(n: usize) -> BoxSet {
        BoxSet::new(vec![-1.0; n], vec![1.0; n]).unwrap()
    }

    #[test]
    fn scalar_linear_system() {
        let sys = System::build(&["1.7320508*x1"], &[], None, unit_box(1), 0.0).unwrap();
        let j = sys.jacobian(0.0, &[5.0]).unwrap();
        assert!((j[(0, 0)] - 1.7320508).abs() < 1e-15);
        assert_eq!(sys.breakpoints(), &[] as &[f64]);
    }

    #[test]
    fn oscillator_jacobian() {
        let sys = System::build(
            &["x2", "-x1"],
            &[],
            Some(Partition::scalar(2, Norm::Inf)),
            unit_box(2),
            0.0,
        )
        .unwrap();
        let j = sys.jacobian(1.0, &[0.3, -0.4]).unwrap();
        assert_eq!(
            (j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]),
            (0.0, 1.0, -1.0, 0.0)
        );
        // Block extraction reassembles the Jacobian exactly.
        for bi in 0..2 {
            for bj in 0..2 {
                let b = sys.jacobian_block(bi, bj, 1.0, &[0.3, -0.4]).unwrap();
                assert_eq!(b[(0, 0)], j[(bi, bj)]);
            }
        }
    }

    #[test]
    fn time_varying_jacobian() {
        let sys = System::build(
            &["sin(t)*x1 + cos(t)*x2", "sin(t)*x1 + cos(t)*x2"],
            &[],
            None,
            unit_box(2),
            0.0,
        )
        .unwrap();
        let j = sys.jacobian(0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(
            (j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]),
            (0.0, 1.0, 0.0, 1.0)
        );
    }

    #[test]
    fn out_of_range_variable_is_a_build_error() {
        let err = System::build(&["x1", "x3"], &[], None, unit_box(2), 0.0).unwrap_err();
        assert!(matches!(err, BuildError::Parse { index: 1, .. }));
    }

    #[test]
    fn piecewise_thresholds_merge_into_breakpoints() {
        let sys = System::build(
            &["pw(t < 1, x1, 2*x1)"],
            &[0.5, 1.0],
            None,
            unit_box(1),
            0.0,
        )
        .unwrap();
        assert_eq!(sys.breakpoints(), &[0.5, 1.0]);
        let sys2 = System::build(&["pw(t < 1.5, x1, 2*x1)"], &[], None, unit_box(1), 0.0).unwrap();
        assert_eq!(sys2.breakpoints(), &[1.5]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let sys = System::build(
            &[
                "x2 + 0.3*x1*x1 - sin(t)*x3",
                "tanh(x1) - 0.5*x2",
                "x1*x2 + exp(0.1*x3)",
            ],
            &[],
            None,
            unit_box(3),
            0.0,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..100 {
            let t: f64 = rng.gen_range(-1.0..1.0);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let j = sys.jacobian(t, &x).unwrap();
            for col in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[col] += h;
                xm[col] -= h;
                let fp = sys.f_eval(t, &xp).unwrap();
                let fm = sys.f_eval(t, &xm).unwrap();
                for row in 0..3 {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    let got = j[(row, col)];
                    assert!(
                        (fd - got).abs() <= 1e-6 * (1.0 + got.abs()),
                        "J[{row}][{col}] = {got}, fd = {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![1, 2], vec![Norm::One], Norm::Inf).is_err());
        assert!(Partition::new(vec![], vec![], Norm::Inf).is_err());
        let p = Partition::new(vec![1, 2], vec![Norm::One, Norm::Two], Norm::Inf).unwrap();
        assert_eq!(p.block_range(1), 1..3);
        let sys = System::build(&["x1", "x2"], &[], Some(p), unit_box(2), 0.0);
        assert!(matches!(sys.unwrap_err(), BuildError::BadPartition(_)));
    }

    #[test]
    fn box_validation_and_geometry() {
        assert!(BoxSet::new(vec![0.0], vec![0.0]).is_err());
        assert!(BoxSet::new(vec![1.0], vec![0.0]).is_err());
        let b = BoxSet::new(vec![0.0, -2.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(b.center(), vec![0.5, 0.0]);
        assert_eq!(b.corner(0b10), vec![0.0, 2.0]);
        assert_eq!(b.volume(), 4.0);
        assert!(b.contains(&[0.5, 1.9], 0.0));
        assert!(!b.contains(&[0.5, 2.1], 0.0));
    }
}
