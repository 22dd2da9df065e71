//! Fixed-step RK4 integration of trajectories, the variational
//! (state-transition) equation with the Liouville trace integral, and
//! deterministic sampling of solution ensembles from the initial set.
//!
//! The time grid is shared across ensemble members and splits exactly at
//! every declared breakpoint of the vector field, so no step straddles a
//! discontinuity in `t`.

use crate::expr::EvalError;
use crate::measures::Matrix;
use crate::system::{BoxSet, System};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// States with infinity norm beyond this are treated as numerical blow-up.
pub const BLOWUP_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("trajectory from {x0:?} blew up at t = {t} (|x| = {norm:.3e})")]
    BlowUp { t: f64, norm: f64, x0: Vec<f64> },
    #[error("vector field evaluation failed at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("horizon end {t_end} precedes initial time {t0}")]
    BadHorizon { t0: f64, t_end: f64 },
}

/// A sampled solution curve.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t0: f64,
    /// Strictly increasing sample times starting at `t0`.
    pub times: Vec<f64>,
    /// One state per sample time; `states[0]` is the initial state.
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV export: header `t,x1,...,xn`, one row per grid point, full double
    /// precision, CRLF line endings.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        write!(w, "t")?;
        for j in 1..=n {
            write!(w, ",x{j}")?;
        }
        write!(w, "\r\n")?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(w, "{t:.16e}")?;
            for v in x {
                write!(w, ",{v:.16e}")?;
            }
            write!(w, "\r\n")?;
        }
        Ok(())
    }
}

/// Ensemble of trajectories over one shared time grid.
#[derive(Debug, Clone)]
pub struct ReachEnsemble {
    pub times: Vec<f64>,
    pub members: Vec<Trajectory>,
    pub initial_states: Vec<Vec<f64>>,
    pub seed: u64,
}

impl ReachEnsemble {
    /// States of all members at one grid index.
    pub fn states_at(&self, t_index: usize) -> Vec<Vec<f64>> {
        self.members
            .iter()
            .map(|m| m.states[t_index].clone())
            .collect()
    }

    /// Componentwise bounding box of member states at one grid index.
    pub fn bounding_box_at(&self, t_index: usize) -> Result<BoxSet, crate::system::BuildError> {
        let n = self.members[0].states[0].len();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for m in &self.members {
            for (j, v) in m.states[t_index].iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        // Degenerate axes (all members agree) get a hair of width so the box
        // keeps a nonempty interior.
        for j in 0..n {
            if hi[j] - lo[j] < 1e-12 {
                let pad = 1e-9 * (1.0 + lo[j].abs());
                lo[j] -= pad;
                hi[j] += pad;
            }
        }
        BoxSet::new(lo, hi)
    }
}

/// Trajectory augmented with the state-transition matrix `Phi(t)` (the
/// Jacobian of the flow with respect to the initial state) and the running
/// trace integral `l(t) = int_{t0}^t tr J(s, x(s)) ds`, whose exponential is
/// `det Phi(t)` by Liouville's formula.
#[derive(Debug, Clone)]
pub struct VariationalSolution {
    pub trajectory: Trajectory,
    /// `Phi(t)` per grid point; `transitions[0]` is the identity.
    pub transitions: Vec<Matrix>,
    /// `l(t)` per grid point; `log_det[0] = 0`.
    pub log_det: Vec<f64>,
}

/// Build the integration grid: every breakpoint strictly inside the horizon
/// becomes an exact grid point, and each smooth segment is subdivided into
/// equal steps no longer than `dt`.
pub fn time_grid(t0: f64, t_end: f64, dt: f64, breakpoints: &[f64]) -> Result<Vec<f64>, OdeError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(OdeError::BadStep(dt));
    }
    if t_end < t0 {
        return Err(OdeError::BadHorizon { t0, t_end });
    }
    let mut anchors = vec![t0];
    for &b in breakpoints {
        if b > t0 && b < t_end {
            anchors.push(b);
        }
    }
    anchors.push(t_end);
    anchors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    anchors.dedup();

    let mut grid = vec![t0];
    for w in anchors.windows(2) {
        let (a, b) = (w[0], w[1]);
        let steps = ((b - a) / dt).ceil().max(1.0) as usize;
        for k in 1..=steps {
            let t = if k == steps {
                b // land on the anchor exactly, no rounding drift
            } else {
                a + (b - a) * (k as f64 / steps as f64)
            };
            grid.push(t);
        }
    }
    Ok(grid)
}

fn check_state(t: f64, x: &[f64], x0: &[f64]) -> Result<(), OdeError> {
    let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !norm.is_finite() || norm > BLOWUP_LIMIT {
        return Err(OdeError::BlowUp {
            t,
            norm,
            x0: x0.to_vec(),
        });
    }
    Ok(())
}

fn eval_field(sys: &System, t: f64, x: &[f64]) -> Result<Vec<f64>, OdeError> {
    sys.f_eval(t, x).map_err(|source| OdeError::Eval { t, source })
}

/// Time argument for the field evaluation at the end stage of a step
/// landing on `t`. Piecewise expressions take their right limit at an exact
/// threshold, but a step that *ends* on a breakpoint integrates the segment
/// left of it; nudging the evaluation time down one ulp selects the correct
/// branch while perturbing smooth field values only at machine precision.
fn end_stage_time(sys: &System, t: f64) -> f64 {
    if sys
        .breakpoints()
        .binary_search_by(|b| b.partial_cmp(&t).unwrap())
        .is_ok()
    {
        t.next_down()
    } else {
        t
    }
}

/// One classical RK4 step of size `h` from `(t, x)`.
fn rk4_step(sys: &System, t: f64, x: &[f64], h: f64, t_end_eval: f64) -> Result<Vec<f64>, OdeError> {
    let n = x.len();
    let k1 = eval_field(sys, t, x)?;
    let mut tmp: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1[i]).collect();
    let k2 = eval_field(sys, t + 0.5 * h, &tmp)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    let k3 = eval_field(sys, t + 0.5 * h, &tmp)?;
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    let k4 = eval_field(sys, t_end_eval, &tmp)?;
    Ok((0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrate from `sys.t0()` to `t_end` with fixed RK4 steps of at most `dt`.
pub fn integrate(sys: &System, x0: &[f64], t_end: f64, dt: f64) -> Result<Trajectory, OdeError> {
    let grid = time_grid(sys.t0(), t_end, dt, sys.breakpoints())?;
    let mut states = Vec::with_capacity(grid.len());
    check_state(sys.t0(), x0, x0)?;
    states.push(x0.to_vec());
    for w in grid.windows(2) {
        let (t, tn) = (w[0], w[1]);
        let x = states.last().unwrap();
        let next = rk4_step(sys, t, x, tn - t, end_stage_time(sys, tn))?;
        check_state(tn, &next, x0)?;
        states.push(next);
    }
    Ok(Trajectory {
        t0: sys.t0(),
        times: grid,
        states,
    })
}

/// Integrate the augmented system `(x, Phi, l)` with
/// `Phi' = J(t, x) Phi, Phi(t0) = I` and `l' = tr J(t, x), l(t0) = 0`
/// as one RK4 flow, so `Phi` and `l` have the same order of accuracy as `x`.
pub fn variational(
    sys: &System,
    x0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<VariationalSolution, OdeError> {
    let n = sys.dim();
    let grid = time_grid(sys.t0(), t_end, dt, sys.breakpoints())?;
    check_state(sys.t0(), x0, x0)?;

    // Augmented state layout: [x (n) | Phi row-major (n*n) | l (1)].
    let dim = n + n * n + 1;
    let mut y = vec![0.0; dim];
    y[..n].copy_from_slice(x0);
    for i in 0..n {
        y[n + i * n + i] = 1.0;
    }

    let deriv = |t: f64, y: &[f64]| -> Result<Vec<f64>, OdeError> {
        let x = &y[..n];
        let fx = eval_field(sys, t, x)?;
        let j = sys
            .jacobian(t, x)
            .map_err(|source| OdeError::Eval { t, source })?;
        let mut dy = vec![0.0; dim];
        dy[..n].copy_from_slice(&fx);
        // dPhi = J * Phi.
        for r in 0..n {
            for c in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += j[(r, k)] * y[n + k * n + c];
                }
                dy[n + r * n + c] = s;
            }
        }
        dy[n + n * n] = j.trace();
        Ok(dy)
    };

    let mut states = Vec::with_capacity(grid.len());
    let mut transitions = Vec::with_capacity(grid.len());
    let mut log_det = Vec::with_capacity(grid.len());
    let push = |y: &[f64],
                states: &mut Vec<Vec<f64>>,
                transitions: &mut Vec<Matrix>,
                log_det: &mut Vec<f64>| {
        states.push(y[..n].to_vec());
        let mut phi = Matrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                phi[(r, c)] = y[n + r * n + c];
            }
        }
        transitions.push(phi);
        log_det.push(y[n + n * n]);
    };
    push(&y, &mut states, &mut transitions, &mut log_det);

    for w in grid.windows(2) {
        let (t, tn) = (w[0], w[1]);
        let h = tn - t;
        let k1 = deriv(t, &y)?;
        let mut tmp: Vec<f64> = (0..dim).map(|i| y[i] + 0.5 * h * k1[i]).collect();
        let k2 = deriv(t + 0.5 * h, &tmp)?;
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        let k3 = deriv(t + 0.5 * h, &tmp)?;
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        let k4 = deriv(end_stage_time(sys, tn), &tmp)?;
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_state(tn, &y[..n], x0)?;
        push(&y, &mut states, &mut transitions, &mut log_det);
    }

    Ok(VariationalSolution {
        trajectory: Trajectory {
            t0: sys.t0(),
            times: grid,
            states,
        },
        transitions,
        log_det,
    })
}

/// Initial states for an ensemble of the given size: the 2^n box corners
/// first (in bitmask order), then the center, then Halton low-discrepancy
/// interior points with a seeded Cranley–Patterson rotation. The list for a
/// smaller count is always a prefix of the list for a larger count, so
/// enlarging an ensemble only appends members.
pub fn ensemble_initial_states(k: &BoxSet, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = k.dim();
    let mut out = Vec::with_capacity(count);
    // Corner enumeration is only sensible while 2^n fits comfortably.
    if n <= 20 {
        for mask in 0..(1u64 << n) {
            if out.len() == count {
                return out;
            }
            out.push(k.corner(mask));
        }
    }
    if out.len() < count {
        out.push(k.center());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut index = 1u64;
    while out.len() < count {
        let fractions: Vec<f64> = (0..n)
            .map(|j| {
                let u = halton(index, PRIMES[j % PRIMES.len()]) + shift[j];
                u - u.floor()
            })
            .collect();
        out.push(k.at_fractions(&fractions));
        index += 1;
    }
    out
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical-inverse (van der Corput) value of `index` in the given base.
fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Integrate an ensemble of `count` members seeded from `k`. Members
/// integrate independently (in parallel when enabled) and are merged by
/// index, so results are deterministic for a given seed.
pub fn sample_ensemble(
    sys: &System,
    k: &BoxSet,
    count: usize,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<ReachEnsemble, OdeError> {
    assert!(count >= 2, "an ensemble needs at least 2 members");
    let initial_states = ensemble_initial_states(k, count, seed);
    let members = crate::par::try_map_indexed(count, |i| {
        integrate(sys, &initial_states[i], t_end, dt)
    })?;
    Ok(ReachEnsemble {
        times: members[0].times.clone(),
        members,
        initial_states,
        seed,
    })
}

/// Variational solutions for every member of an ensemble seeding.
pub fn sample_variational_ensemble(
    sys: &System,
    k: &BoxSet,
    count: usize,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<VariationalSolution>, OdeError> {
    assert!(count >= 2, "an ensemble needs at least 2 members");
    let initial_states = ensemble_initial_states(k, count, seed);
    crate::par::try_map_indexed(count, |i| variational(sys, &initial_states[i], t_end, dt))
}

/// `sum_i w_i * states[i]` for convex weights `w`.
pub(crate) fn convex_combination(states: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let n = states[0].len();
    let mut out = vec![0.0; n];
    for (s, w) in states.iter().zip(weights) {
        for j in 0..n {
            out[j] += w * s[j];
        }
    }
    out
}

/// Dirichlet(1,...,1) weights: normalized exponentials.
pub(crate) fn dirichlet_weights(rng: &mut impl Rng, count: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..count)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -u.ln()
        })
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Member states at one grid index plus `combos` random convex combinations
/// of 2–4 members. Combination participants are drawn from the leading
/// (corner + center) members only, and the random stream is keyed by
/// `(seed, t_index)`, so the output for a given `combos` does not change when
/// the ensemble is enlarged.
pub fn convex_hull_samples(
    ens: &ReachEnsemble,
    t_index: usize,
    combos: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let member_states = ens.states_at(t_index);
    let mut out = member_states.clone();
    if combos == 0 {
        return out;
    }
    let n = member_states[0].len();
    let core = if n <= 20 {
        member_states.len().min((1usize << n) + 1)
    } else {
        member_states.len()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t_index as u64);
    for _ in 0..combos {
        let r = if core <= 2 { 2 } else { rng.gen_range(2..=4.min(core)) };
        // Distinct participant indices from the core prefix.
        let mut picks: Vec<usize> = Vec::with_capacity(r);
        while picks.len() < r {
            let c = rng.gen_range(0..core);
            if !picks.contains(&c) {
                picks.push(c);
            }
        }
        let states: Vec<Vec<f64>> = picks.iter().map(|&i| member_states[i].clone()).collect();
        let w = dirichlet_weights(&mut rng, r);
        out.push(convex_combination(&states, &w));
    }
    out
}
