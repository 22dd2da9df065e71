//! Direct entropy estimation from the spanning/separated-set definitions,
//! plus runtime verification of the supporting growth lemmas.
//!
//! The estimator partitions the initial box into cells, propagates the
//! variational equation from each cell center, and converts the column
//! growth factors of the state-transition matrix into per-cell spanning and
//! separated counts ("linearized cell counts"). Absolute counts carry a
//! constant-factor bias, but the fitted exponential growth rate — the
//! quantity that defines entropy — does not. Greedy cover/packing
//! counterparts operating on explicit candidate grids are provided for
//! small problems and cross-checks.
//!
//! Backward integration (time-reversed shooting) is used in exactly one
//! place: the Monte Carlo membership test of [`verify_volume_bound`].

use crate::expr::EvalError;
use crate::measures::{
    induced_norm, interconnection_from_jacobian, matrix_exponential, matrix_measure,
    measure_sandwich_check, vector_norm, Matrix,
};
use crate::ode::{
    convex_hull_samples, integrate, sample_ensemble, sample_variational_ensemble, time_grid,
    OdeError, ReachEnsemble,
};
use crate::system::{BoxSet, Norm, Partition, System};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmpiricalError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("jacobian evaluation failed at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
    #[error("resolution insufficient: candidate spacing {resolution} exceeds eps = {eps}")]
    ResolutionInsufficient { resolution: f64, eps: f64 },
    #[error("candidate budget exceeded: {count} grid points (cap {cap})")]
    CandidateBudget { count: usize, cap: usize },
    #[error("dimension {n} unsupported here (max {max})")]
    Dimension { n: usize, max: usize },
}

/// Knobs for the estimator and the lemma verifiers.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    /// Cells per axis for the linearized count estimator.
    pub cells_per_axis: usize,
    pub dt: f64,
    pub seed: u64,
    /// Ensemble size used where reachable-hull samples are needed.
    pub ensemble: usize,
    /// Random convex combinations per time step for hull sampling.
    pub combos: usize,
    /// Default ball radii, strictly decreasing.
    pub eps_list: Vec<f64>,
    /// Default horizons, strictly increasing.
    pub horizons: Vec<f64>,
    /// Relative slack granted to verification inequalities.
    pub slack: f64,
}

impl Default for EstimatorConfig {
    fn default() -> EstimatorConfig {
        EstimatorConfig {
            cells_per_axis: 32,
            dt: 1e-3,
            seed: 1,
            ensemble: 16,
            combos: 32,
            eps_list: vec![1e-2, 3e-3, 1e-3],
            horizons: vec![4.0, 6.0, 8.0],
            slack: 1e-6,
        }
    }
}

impl EstimatorConfig {
    pub fn from_sections(s: &crate::specfile::SamplingSection, dt: f64) -> EstimatorConfig {
        EstimatorConfig {
            cells_per_axis: s.cells,
            dt,
            seed: s.seed,
            ensemble: s.ensemble,
            combos: s.convex_combos,
            eps_list: s.eps.clone(),
            horizons: s.horizons.clone(),
            slack: 1e-6,
        }
    }
}

/// Outcome of a lemma verification sweep.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub name: String,
    pub checks: usize,
    pub violations: usize,
    pub values: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl VerifyReport {
    fn new(name: &str) -> VerifyReport {
        VerifyReport {
            name: name.to_string(),
            checks: 0,
            violations: 0,
            values: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn text(&self) -> String {
        let mut out = format!(
            "{}: {} (checks = {}, violations = {})\n",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.checks,
            self.violations
        );
        for (k, v) in &self.values {
            out.push_str(&format!("  {k} = {v:.12}\n"));
        }
        for n in &self.notes {
            out.push_str(&format!("  note: {n}\n"));
        }
        out
    }
}

fn rebase(sys: &System, t0: f64) -> System {
    assert!(t0.is_finite(), "t0 must be finite");
    if (t0 - sys.t0()).abs() <= 1e-12 {
        sys.clone()
    } else {
        sys.with_t0(t0).expect("finite t0")
    }
}

// ---------------------------------------------------------------------------
// Lattice grids
// ---------------------------------------------------------------------------

/// Axis-aligned lattice inside a box, shifted to pass through `center`.
#[derive(Debug, Clone)]
pub struct Grid {
    pub center: Vec<f64>,
    pub spacing: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

/// All lattice points `center + (k_1 θ_1, ..., k_n θ_n)` inside the closed
/// box `k`, enumerated in row-major order of the integer indices.
pub fn build_grid(k: &BoxSet, theta: &[f64], center: &[f64]) -> Grid {
    let n = k.dim();
    assert_eq!(theta.len(), n, "spacing dimension mismatch");
    assert_eq!(center.len(), n, "center dimension mismatch");
    assert!(theta.iter().all(|&t| t > 0.0), "spacing must be positive");
    assert!(k.contains(center, 1e-12), "center must lie in the box");

    let mut lo_idx = Vec::with_capacity(n);
    let mut hi_idx = Vec::with_capacity(n);
    for j in 0..n {
        let tol = 1e-9 * theta[j].max(1.0);
        lo_idx.push((((k.lower()[j] - center[j]) - tol) / theta[j]).ceil() as i64);
        hi_idx.push((((k.upper()[j] - center[j]) + tol) / theta[j]).floor() as i64);
    }
    let mut points = Vec::new();
    let mut idx: Vec<i64> = lo_idx.clone();
    'outer: loop {
        let p: Vec<f64> = (0..n)
            .map(|j| center[j] + idx[j] as f64 * theta[j])
            .collect();
        if k.contains(&p, 1e-9) {
            points.push(p);
        }
        let mut axis = n;
        loop {
            if axis == 0 {
                break 'outer;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] <= hi_idx[axis] {
                break;
            }
            idx[axis] = lo_idx[axis];
        }
    }
    Grid {
        center: center.to_vec(),
        spacing: theta.to_vec(),
        points,
    }
}

// ---------------------------------------------------------------------------
// Greedy cover / packing on explicit candidate grids
// ---------------------------------------------------------------------------

const CANDIDATE_CAP: usize = 1_000_000;
const METRIC_SUBSAMPLE: usize = 257;

/// Uniform candidate lattice over `k` with spacing at most `resolution`.
fn candidate_grid(k: &BoxSet, resolution: f64) -> Result<Vec<Vec<f64>>, EmpiricalError> {
    let n = k.dim();
    let per_axis: Vec<usize> = (0..n)
        .map(|j| ((k.side(j) / resolution).ceil() as usize).max(1) + 1)
        .collect();
    let total: usize = per_axis.iter().product();
    if total > CANDIDATE_CAP {
        return Err(EmpiricalError::CandidateBudget {
            count: total,
            cap: CANDIDATE_CAP,
        });
    }
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    loop {
        let fr: Vec<f64> = (0..n)
            .map(|j| idx[j] as f64 / (per_axis[j] - 1).max(1) as f64)
            .collect();
        points.push(k.at_fractions(&fr));
        let mut axis = 0;
        loop {
            idx[axis] += 1;
            if idx[axis] < per_axis[axis] {
                break;
            }
            idx[axis] = 0;
            axis += 1;
            if axis == n {
                return Ok(points);
            }
        }
    }
}

/// Trajectories of every candidate, stored only at the subsampled metric
/// times (at most [`METRIC_SUBSAMPLE`] indices, always including the final
/// one).
fn candidate_tracks(
    sys: &System,
    candidates: &[Vec<f64>],
    t_end: f64,
    dt: f64,
) -> Result<Vec<Vec<Vec<f64>>>, EmpiricalError> {
    let probe = time_grid(sys.t0(), t_end, dt, sys.breakpoints())?;
    let len = probe.len();
    let stride = ((len - 1) / (METRIC_SUBSAMPLE - 1)).max(1);
    let mut keep: Vec<usize> = (0..len).step_by(stride).collect();
    if *keep.last().unwrap() != len - 1 {
        keep.push(len - 1);
    }
    let tracks = crate::par::try_map_indexed(candidates.len(), |i| {
        let traj = integrate(sys, &candidates[i], t_end, dt)?;
        Ok::<_, OdeError>(keep.iter().map(|&j| traj.states[j].clone()).collect())
    })?;
    Ok(tracks)
}

/// Max-over-time sup-norm distance between two stored tracks.
fn track_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut d = 0.0f64;
    for (sa, sb) in a.iter().zip(b) {
        for (va, vb) in sa.iter().zip(sb) {
            d = d.max((va - vb).abs());
        }
    }
    d
}

fn greedy_preflight(
    sys: &System,
    eps: f64,
    t: f64,
    resolution: f64,
) -> Result<(), EmpiricalError> {
    assert!(eps > 0.0 && t >= 0.0, "need eps > 0 and T >= 0");
    if sys.dim() > 2 {
        return Err(EmpiricalError::Dimension {
            n: sys.dim(),
            max: 2,
        });
    }
    if resolution > eps {
        return Err(EmpiricalError::ResolutionInsufficient { resolution, eps });
    }
    Ok(())
}

/// Greedy set-cover size over a candidate lattice: repeatedly pick the
/// candidate whose open `(T, eps)`-ball covers the most uncovered
/// candidates (ties broken by lowest index). An upper proxy for the minimal
/// spanning cardinality.
pub fn greedy_spanning_count(
    sys: &System,
    k: &BoxSet,
    eps: f64,
    t: f64,
    t0: f64,
    resolution: f64,
) -> Result<usize, EmpiricalError> {
    greedy_preflight(sys, eps, t, resolution)?;
    let sysr = rebase(sys, t0);
    let candidates = candidate_grid(k, resolution)?;
    let tracks = candidate_tracks(&sysr, &candidates, t0 + t, sysr_dt(t, resolution))?;
    let count = candidates.len();
    let mut covered = vec![false; count];
    let mut remaining = count;
    let mut picks = 0usize;
    while remaining > 0 {
        let scores: Vec<usize> = crate::par::map_indexed(count, |i| {
            let mut c = 0;
            for j in 0..count {
                if !covered[j] && track_distance(&tracks[i], &tracks[j]) < eps {
                    c += 1;
                }
            }
            c
        });
        let best = scores
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .expect("nonempty candidate set");
        picks += 1;
        for j in 0..count {
            if !covered[j] && track_distance(&tracks[best], &tracks[j]) < eps {
                covered[j] = true;
                remaining -= 1;
            }
        }
    }
    Ok(picks)
}

/// Greedy packing size over a candidate lattice: scan candidates in index
/// order and keep those at trajectory distance >= eps from every kept one.
/// A lower proxy for the maximal separated cardinality.
pub fn greedy_separated_count(
    sys: &System,
    k: &BoxSet,
    eps: f64,
    t: f64,
    t0: f64,
    resolution: f64,
) -> Result<usize, EmpiricalError> {
    greedy_preflight(sys, eps, t, resolution)?;
    let sysr = rebase(sys, t0);
    let candidates = candidate_grid(k, resolution)?;
    let tracks = candidate_tracks(&sysr, &candidates, t0 + t, sysr_dt(t, resolution))?;
    let mut chosen: Vec<usize> = Vec::new();
    for i in 0..candidates.len() {
        if chosen
            .iter()
            .all(|&j| track_distance(&tracks[i], &tracks[j]) >= eps)
        {
            chosen.push(i);
        }
    }
    Ok(chosen.len())
}

/// Step size for candidate integration: fine enough for the horizon but
/// never coarser than 1e-2.
fn sysr_dt(t: f64, _resolution: f64) -> f64 {
    (t / 400.0).clamp(1e-4, 1e-2)
}

// ---------------------------------------------------------------------------
// Linearized cell-count estimator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EstimateRow {
    pub eps: f64,
    pub t: f64,
    pub span_count: f64,
    pub sep_count: f64,
    pub span_slope: f64,
    pub sep_slope: f64,
}

#[derive(Debug, Clone)]
pub struct EntropyEstimate {
    /// One row per (eps, T) pair, eps-major, T increasing within eps.
    pub rows: Vec<EstimateRow>,
    /// Headline: separated-count slope at the smallest eps.
    pub estimate: f64,
    /// Max deviation of any fitted slope from the headline.
    pub band: f64,
    pub qualifiers: Vec<String>,
}

impl EntropyEstimate {
    pub fn csv_header() -> &'static str {
        "eps,T,span_count,sep_count,span_slope,sep_slope,estimate,band"
    }

    /// RFC-4180 body (CRLF line ends, no header).
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "{}\r\n", Self::csv_header())?;
        for r in &self.rows {
            write!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\r\n",
                r.eps,
                r.t,
                r.span_count,
                r.sep_count,
                r.span_slope,
                r.sep_slope,
                self.estimate,
                self.band
            )?;
        }
        Ok(())
    }

    pub fn text(&self) -> String {
        let mut out = format!(
            "entropy estimate = {:.6} (band {:.6})\n",
            self.estimate, self.band
        );
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.rows {
            if seen.insert(r.eps.to_bits()) {
                out.push_str(&format!(
                    "  eps = {:.3e}: span slope {:.6}, sep slope {:.6}\n",
                    r.eps, r.span_slope, r.sep_slope
                ));
            }
        }
        for q in &self.qualifiers {
            out.push_str(&format!("  note: {q}\n"));
        }
        out
    }
}

/// Least-squares slope of `ln(y)` against `x` over the largest `x` values
/// (at least two points, about half the list).
fn tail_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let keep = (xs.len() + 1) / 2;
    let keep = keep.max(2).min(xs.len());
    let xs = &xs[xs.len() - keep..];
    let ys = &ys[ys.len() - keep..];
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().map(|y| y.ln()).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y.ln() - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Per-cell expansion factors: for each horizon, the running maximum over
/// `t <= T` of each state-transition column's sup norm.
fn cell_growth_factors(
    sys: &System,
    center: &[f64],
    t0: f64,
    horizons: &[f64],
    dt: f64,
) -> Result<Vec<Vec<f64>>, EmpiricalError> {
    let n = sys.dim();
    let sol = crate::ode::variational(sys, center, t0 + horizons[horizons.len() - 1], dt)?;
    let times = &sol.trajectory.times;
    let mut snapshots = Vec::with_capacity(horizons.len());
    let mut running = vec![0.0f64; n];
    let mut h_idx = 0usize;
    for (i, &t) in times.iter().enumerate() {
        let phi = &sol.transitions[i];
        for j in 0..n {
            let col_norm = (0..n).fold(0.0f64, |acc, r| acc.max(phi[(r, j)].abs()));
            running[j] = running[j].max(col_norm);
        }
        while h_idx < horizons.len() && t >= t0 + horizons[h_idx] - 1e-9 {
            snapshots.push(running.clone());
            h_idx += 1;
        }
    }
    while snapshots.len() < horizons.len() {
        snapshots.push(running.clone());
    }
    Ok(snapshots)
}

/// Estimate entropy from linearized per-cell spanning/separated counts.
///
/// The initial box is split into `cells_per_axis^n` cells; from each cell
/// center the variational equation gives per-axis growth factors `E_j(T)`.
/// A cell of side `s_j` then contributes `prod_j (floor(s_j E_j / (2 eps)) + 1)`
/// to the spanning count and `prod_j (floor(s_j E_j / eps) + 1)` to the
/// separated count. Slopes of `ln(count)` against `T` are fitted per eps
/// over the largest horizons; the headline estimate is the separated-count
/// slope at the smallest eps, and the band is the largest deviation of any
/// fitted slope from it.
pub fn estimate_entropy(
    sys: &System,
    k: &BoxSet,
    t0: f64,
    eps_list: &[f64],
    t_list: &[f64],
    cfg: &EstimatorConfig,
) -> Result<EntropyEstimate, EmpiricalError> {
    assert!(eps_list.len() >= 3, "need at least 3 eps values");
    assert!(t_list.len() >= 3, "need at least 3 horizons");
    assert!(
        t_list.windows(2).all(|w| w[0] < w[1]) && t_list[0] > 0.0,
        "horizons must be positive and increasing"
    );
    assert!(
        eps_list.windows(2).all(|w| w[0] > w[1]) && eps_list[eps_list.len() - 1] > 0.0,
        "eps values must be positive and decreasing"
    );
    let n = sys.dim();
    if n > 2 {
        return Err(EmpiricalError::Dimension { n, max: 2 });
    }
    let sysr = rebase(sys, t0);
    let cells = cfg.cells_per_axis;
    let sides: Vec<f64> = (0..n).map(|j| k.side(j) / cells as f64).collect();
    let total_cells = cells.pow(n as u32);

    // Growth factors per cell per horizon.
    let factors: Vec<Vec<Vec<f64>>> = crate::par::try_map_indexed(total_cells, |flat| {
        let mut rem = flat;
        let fr: Vec<f64> = (0..n)
            .map(|_| {
                let i = rem % cells;
                rem /= cells;
                (i as f64 + 0.5) / cells as f64
            })
            .collect();
        cell_growth_factors(&sysr, &k.at_fractions(&fr), t0, t_list, cfg.dt)
    })?;

    let mut rows = Vec::with_capacity(eps_list.len() * t_list.len());
    let mut slopes = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let mut span_counts = Vec::with_capacity(t_list.len());
        let mut sep_counts = Vec::with_capacity(t_list.len());
        for h in 0..t_list.len() {
            let mut span_total = 0.0f64;
            let mut sep_total = 0.0f64;
            for cell in &factors {
                let mut span_cell = 1.0f64;
                let mut sep_cell = 1.0f64;
                for j in 0..n {
                    let w = sides[j] * cell[h][j];
                    span_cell *= (w / (2.0 * eps)).floor() + 1.0;
                    sep_cell *= (w / eps).floor() + 1.0;
                }
                span_total += span_cell;
                sep_total += sep_cell;
            }
            span_counts.push(span_total);
            sep_counts.push(sep_total);
        }
        let span_slope = tail_slope(t_list, &span_counts);
        let sep_slope = tail_slope(t_list, &sep_counts);
        slopes.push((span_slope, sep_slope));
        for h in 0..t_list.len() {
            rows.push(EstimateRow {
                eps,
                t: t_list[h],
                span_count: span_counts[h],
                sep_count: sep_counts[h],
                span_slope,
                sep_slope,
            });
        }
    }
    let estimate = slopes[slopes.len() - 1].1;
    let band = slopes
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .fold(0.0f64, |acc, s| acc.max((s - estimate).abs()));
    Ok(EntropyEstimate {
        rows,
        estimate,
        band,
        qualifiers: vec!["linearized cell counts".to_string()],
    })
}

// ---------------------------------------------------------------------------
// Lemma verification: initial-time invariance and finite covers
// ---------------------------------------------------------------------------

/// Estimate entropy from `(t0, K)` and from `(t1, box hull of the reach set
/// at t1)`; the two must agree up to estimator tolerance.
pub fn verify_initial_time_invariance(
    sys: &System,
    k: &BoxSet,
    t0: f64,
    t1: f64,
    cfg: &EstimatorConfig,
) -> Result<VerifyReport, EmpiricalError> {
    assert!(t1 >= t0, "t1 must not precede t0");
    let est0 = estimate_entropy(sys, k, t0, &cfg.eps_list, &cfg.horizons, cfg)?;
    let (k1, t1_eff) = if t1 > t0 {
        let sysr = rebase(sys, t0);
        let ens = sample_ensemble(&sysr, k, cfg.ensemble, t1, cfg.dt, cfg.seed)?;
        let bb = ens
            .bounding_box_at(ens.times.len() - 1)
            .expect("ensemble states are finite");
        (bb, t1)
    } else {
        (k.clone(), t0)
    };
    let est1 = estimate_entropy(sys, &k1, t1_eff, &cfg.eps_list, &cfg.horizons, cfg)?;

    let gap = (est0.estimate - est1.estimate).abs();
    let scale = est0.estimate.abs().max(est1.estimate.abs()).max(1e-12);
    let tol = 0.15 * scale + est0.band + est1.band;
    let mut report = VerifyReport::new("initial_time_invariance");
    report.checks = 1;
    report.violations = usize::from(gap > tol);
    report.values.insert("estimate_t0".into(), est0.estimate);
    report.values.insert("estimate_t1".into(), est1.estimate);
    report.values.insert("band_t0".into(), est0.band);
    report.values.insert("band_t1".into(), est1.band);
    report.values.insert("rel_gap".into(), gap / scale);
    report
        .notes
        .push(format!("reinitialized at t1 = {t1_eff} from the reach-set box hull"));
    Ok(report)
}

/// Estimate entropy on `K` and on its two halves along `split_axis`; the
/// whole-set estimate must match the max of the halves within the combined
/// bands plus a quantization allowance.
pub fn verify_cover_max(
    sys: &System,
    k: &BoxSet,
    t0: f64,
    split_axis: usize,
    cfg: &EstimatorConfig,
) -> Result<VerifyReport, EmpiricalError> {
    assert!(split_axis < k.dim(), "split axis out of range");
    let mid = 0.5 * (k.lower()[split_axis] + k.upper()[split_axis]);
    let mut lo_hi = k.upper().to_vec();
    lo_hi[split_axis] = mid;
    let mut hi_lo = k.lower().to_vec();
    hi_lo[split_axis] = mid;
    let left = BoxSet::new(k.lower().to_vec(), lo_hi).expect("left half is a valid box");
    let right = BoxSet::new(hi_lo, k.upper().to_vec()).expect("right half is a valid box");

    let whole = estimate_entropy(sys, k, t0, &cfg.eps_list, &cfg.horizons, cfg)?;
    let el = estimate_entropy(sys, &left, t0, &cfg.eps_list, &cfg.horizons, cfg)?;
    let er = estimate_entropy(sys, &right, t0, &cfg.eps_list, &cfg.horizons, cfg)?;
    let best_half = el.estimate.max(er.estimate);
    let half_band = if el.estimate >= er.estimate {
        el.band
    } else {
        er.band
    };
    let gap = (whole.estimate - best_half).abs();
    let tol = whole.band + half_band + 0.05;
    let mut report = VerifyReport::new("cover_max");
    report.checks = 1;
    report.violations = usize::from(gap > tol);
    report.values.insert("estimate_whole".into(), whole.estimate);
    report.values.insert("estimate_left".into(), el.estimate);
    report.values.insert("estimate_right".into(), er.estimate);
    report.values.insert("gap".into(), gap);
    report.values.insert("tolerance".into(), tol);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Lemma verification: componentwise separation and Coppel sandwich
// ---------------------------------------------------------------------------

/// Composite norm: max over blocks of the block's local norm.
fn global_norm(v: &[f64], part: &Partition) -> f64 {
    (0..part.block_count())
        .map(|i| vector_norm(&v[part.block_range(i)], part.local_norms()[i]))
        .fold(0.0f64, f64::max)
}

const SEGMENT_SAMPLES: usize = 17;

/// Per-index hull statistics shared by every pair: entrywise interconnection
/// maxima, max measure, and min lower measure of the Jacobian.
struct HullStats {
    entries: Vec<Matrix>,
    mu_up: Vec<f64>,
    mu_lo: Vec<f64>,
}

fn hull_stats(
    sys: &System,
    ens: &ReachEnsemble,
    combos: usize,
    seed: u64,
) -> Result<HullStats, EmpiricalError> {
    let part = sys.partition();
    let m = part.block_count();
    let per: Vec<(Matrix, f64, f64)> = crate::par::try_map_indexed(ens.times.len(), |i| {
        let t = ens.times[i];
        let mut ent = Matrix::zeros(m, m);
        let mut up = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        let mut first = true;
        for v in convex_hull_samples(ens, i, combos, seed) {
            let j = sys
                .jacobian(t, &v)
                .map_err(|source| EmpiricalError::Eval { t, source })?;
            let a = interconnection_from_jacobian(&j, part);
            for r in 0..m {
                for c in 0..m {
                    if first || a[(r, c)] > ent[(r, c)] {
                        ent[(r, c)] = a[(r, c)];
                    }
                }
            }
            up = up.max(matrix_measure(&j, Norm::Inf));
            lo = lo.min(-matrix_measure(&j.scale(-1.0), Norm::Inf));
            first = false;
        }
        Ok::<_, EmpiricalError>((ent, up, lo))
    })?;
    let mut out = HullStats {
        entries: Vec::with_capacity(per.len()),
        mu_up: Vec::with_capacity(per.len()),
        mu_lo: Vec::with_capacity(per.len()),
    };
    for (e, u, l) in per {
        out.entries.push(e);
        out.mu_up.push(u);
        out.mu_lo.push(l);
    }
    Ok(out)
}

/// For random initial pairs, check (a) the componentwise separation bound
/// through the exponential of the running-max interconnection matrix, and
/// (b) the two-sided Coppel estimate with hull-extremal measures, both with
/// relative slack `cfg.slack * (1 + rhs)`. Hull statistics are augmented with samples on
/// the segment joining the two solutions, mirroring the mean-value argument
/// behind the bound.
pub fn verify_separation_bounds(
    sys: &System,
    k: &BoxSet,
    t0: f64,
    t: f64,
    pair_count: usize,
    cfg: &EstimatorConfig,
) -> Result<VerifyReport, EmpiricalError> {
    let sysr = rebase(sys, t0);
    let part = sysr.partition().clone();
    let m = part.block_count();
    let n = sysr.dim();
    let t_end = t0 + t;
    let ens = sample_ensemble(&sysr, k, cfg.ensemble, t_end, cfg.dt, cfg.seed)?;
    let shared = hull_stats(&sysr, &ens, cfg.combos, cfg.seed)?;
    let times = ens.times.clone();
    let len = times.len();
    let stride = ((len - 1) / 128).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7c83_9f2b_5e01_44aa);
    let min_side = (0..n).fold(f64::INFINITY, |acc, j| acc.min(k.side(j)));
    let mut pairs = Vec::with_capacity(pair_count);
    while pairs.len() < pair_count {
        let fa: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let fb: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = k.at_fractions(&fa);
        let b = k.at_fractions(&fb);
        let apart = a
            .iter()
            .zip(&b)
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
        if apart > 1e-3 * min_side {
            pairs.push((a, b));
        }
    }

    let slack = cfg.slack;
    let results: Vec<(usize, usize)> = crate::par::try_map_indexed(pair_count, |pi| {
        let (xa, xb) = &pairs[pi];
        let ta = integrate(&sysr, xa, t_end, cfg.dt)?;
        let tb = integrate(&sysr, xb, t_end, cfg.dt)?;
        let delta_blocks: Vec<f64> = (0..m)
            .map(|i| {
                let r = part.block_range(i);
                let d: Vec<f64> = xa[r.clone()]
                    .iter()
                    .zip(&xb[r])
                    .map(|(a, b)| b - a)
                    .collect();
                vector_norm(&d, part.local_norms()[i])
            })
            .collect();
        let delta_inf = xa
            .iter()
            .zip(xb)
            .fold(0.0f64, |acc, (a, b)| acc.max((b - a).abs()));

        let mut a_run = Matrix::zeros(m, m);
        let mut eta_up = 0.0f64;
        let mut eta_lo = 0.0f64;
        let mut prev_up = 0.0f64;
        let mut prev_lo = 0.0f64;
        let mut checks = 0usize;
        let mut violations = 0usize;
        for i in 0..len {
            let t_i = times[i];
            // Segment samples between the two solutions at this time.
            let mut ent = shared.entries[i].clone();
            let mut up = shared.mu_up[i];
            let mut lo = shared.mu_lo[i];
            for s in 0..SEGMENT_SAMPLES {
                let th = s as f64 / (SEGMENT_SAMPLES - 1) as f64;
                let v: Vec<f64> = ta.states[i]
                    .iter()
                    .zip(&tb.states[i])
                    .map(|(a, b)| a + th * (b - a))
                    .collect();
                let j = sysr
                    .jacobian(t_i, &v)
                    .map_err(|source| EmpiricalError::Eval { t: t_i, source })?;
                let a = interconnection_from_jacobian(&j, &part);
                for r in 0..m {
                    for c in 0..m {
                        ent[(r, c)] = ent[(r, c)].max(a[(r, c)]);
                    }
                }
                up = up.max(matrix_measure(&j, Norm::Inf));
                lo = lo.min(-matrix_measure(&j.scale(-1.0), Norm::Inf));
            }
            if i == 0 {
                // Seed the running max with the t0 entries; the integrals
                // start at zero.
                a_run = ent;
            } else {
                for r in 0..m {
                    for c in 0..m {
                        a_run[(r, c)] = a_run[(r, c)].max(ent[(r, c)]);
                    }
                }
                let h = t_i - times[i - 1];
                eta_up += 0.5 * h * (prev_up + up);
                eta_lo += 0.5 * h * (prev_lo + lo);
            }
            prev_up = up;
            prev_lo = lo;

            if i > 0 && (i % stride == 0 || i == len - 1) {
                let dtt = t_i - t0;
                let rhs = matrix_exponential(&a_run.scale(dtt)).matvec(&delta_blocks);
                let diff: Vec<f64> = ta.states[i]
                    .iter()
                    .zip(&tb.states[i])
                    .map(|(a, b)| b - a)
                    .collect();
                for bi in 0..m {
                    let lhs = vector_norm(&diff[part.block_range(bi)], part.local_norms()[bi]);
                    checks += 1;
                    if lhs > rhs[bi] + slack * (1.0 + rhs[bi]) {
                        violations += 1;
                    }
                }
                let diff_inf = vector_norm(&diff, Norm::Inf);
                let coppel_up = eta_up.exp() * delta_inf;
                checks += 1;
                if diff_inf > coppel_up + slack * (1.0 + coppel_up) {
                    violations += 1;
                }
                let coppel_lo = eta_lo.exp() * delta_inf;
                checks += 1;
                if coppel_lo > diff_inf + slack * (1.0 + diff_inf) {
                    violations += 1;
                }
            }
        }
        Ok::<_, EmpiricalError>((checks, violations))
    })?;

    let mut report = VerifyReport::new("separation_bounds");
    for (c, v) in results {
        report.checks += c;
        report.violations += v;
    }
    report.values.insert("pairs".into(), pair_count as f64);
    report.values.insert("horizon".into(), t);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Lemma verification: volume growth (the only backward integration)
// ---------------------------------------------------------------------------

/// RK4 on the time-reversed field from `(t_end, y)` down to `t0`. When a
/// step starts exactly on a field breakpoint, the first stage is evaluated
/// one ulp below it so the segment being entered (in decreasing time) sees
/// its own branch rather than the right-limit convention's.
fn backward_shoot(
    sys: &System,
    y_end: &[f64],
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<Vec<f64>, OdeError> {
    let span = t_end - t0;
    let mapped: Vec<f64> = {
        let mut b: Vec<f64> = sys
            .breakpoints()
            .iter()
            .map(|&tau| t_end - tau)
            .filter(|&s| s > 0.0 && s < span)
            .collect();
        b.sort_by(|a, b| a.partial_cmp(b).unwrap());
        b
    };
    let grid = time_grid(0.0, span, dt, &mapped)?;
    let is_breakpoint = |t: f64| {
        sys.breakpoints()
            .binary_search_by(|b| b.partial_cmp(&t).unwrap())
            .is_ok()
    };
    let field = |t: f64, y: &[f64]| -> Result<Vec<f64>, OdeError> {
        let f = sys
            .f_eval(t, y)
            .map_err(|source| OdeError::Eval { t, source })?;
        Ok(f.into_iter().map(|v| -v).collect())
    };
    let n = y_end.len();
    let mut y = y_end.to_vec();
    for w in grid.windows(2) {
        let (s_lo, s_hi) = (w[0], w[1]);
        let h = s_hi - s_lo;
        let t_start = t_end - s_lo;
        let t_eval = if is_breakpoint(t_start) {
            t_start.next_down()
        } else {
            t_start
        };
        let k1 = field(t_eval, &y)?;
        let mid: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k1[i]).collect();
        let k2 = field(t_end - (s_lo + 0.5 * h), &mid)?;
        let mid2: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k2[i]).collect();
        let k3 = field(t_end - (s_lo + 0.5 * h), &mid2)?;
        let endp: Vec<f64> = (0..n).map(|i| y[i] + h * k3[i]).collect();
        let k4 = field(t_end - s_hi, &endp)?;
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let norm = y.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if !norm.is_finite() || norm > 1e12 {
            return Err(OdeError::BlowUp {
                t: t_end - s_hi,
                norm,
                x0: y_end.to_vec(),
            });
        }
    }
    Ok(y)
}

/// Monte Carlo check of the volume growth bound `vol(reach(T)) >=
/// e^gamma * vol(K)` with `gamma` the worst-case integrated trace. The
/// reach-set volume is estimated by rejection sampling in the ensemble
/// bounding box, testing membership by backward shooting; the comparison
/// allows three relative Monte Carlo standard errors.
pub fn verify_volume_bound(
    sys: &System,
    k: &BoxSet,
    t0: f64,
    t: f64,
    mc_samples: usize,
    cfg: &EstimatorConfig,
) -> Result<VerifyReport, EmpiricalError> {
    let n = sys.dim();
    if n > 3 {
        return Err(EmpiricalError::Dimension { n, max: 3 });
    }
    assert!(mc_samples >= 100, "need at least 100 Monte Carlo samples");
    let sysr = rebase(sys, t0);
    let t_end = t0 + t;
    let vars = sample_variational_ensemble(&sysr, k, cfg.ensemble, t_end, cfg.dt, cfg.seed)?;
    let gamma = vars
        .iter()
        .map(|v| v.log_det[v.log_det.len() - 1])
        .fold(f64::INFINITY, f64::min);
    let ens = ReachEnsemble {
        times: vars[0].trajectory.times.clone(),
        members: vars.iter().map(|v| v.trajectory.clone()).collect(),
        initial_states: vars.iter().map(|v| v.trajectory.states[0].clone()).collect(),
        seed: cfg.seed,
    };
    let bb = ens
        .bounding_box_at(ens.times.len() - 1)
        .expect("ensemble states are finite");

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3d6e_f1a2_88c4_0b5d);
    let samples: Vec<Vec<f64>> = (0..mc_samples)
        .map(|_| {
            let fr: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            bb.at_fractions(&fr)
        })
        .collect();
    let landed: Vec<bool> = crate::par::map_indexed(mc_samples, |i| {
        match backward_shoot(&sysr, &samples[i], t0, t_end, cfg.dt) {
            Ok(y) => k.contains(&y, 1e-9),
            Err(_) => false,
        }
    });
    let hits = landed.iter().filter(|&&h| h).count();
    let p = hits as f64 / mc_samples as f64;
    let vol_est = p * bb.volume();
    let target = gamma.exp() * k.volume();
    let sigma_rel = if hits > 0 {
        ((1.0 - p) / hits as f64).sqrt()
    } else {
        f64::INFINITY
    };
    let pass = hits > 0 && vol_est >= target * (1.0 - 3.0 * sigma_rel - cfg.slack);

    let mut report = VerifyReport::new("volume_bound");
    report.checks = 1;
    report.violations = usize::from(!pass);
    report.values.insert("gamma".into(), gamma);
    report.values.insert("volume_estimate".into(), vol_est);
    report.values.insert("volume_target".into(), target);
    report.values.insert("box_volume".into(), bb.volume());
    report.values.insert("mc_sigma_rel".into(), sigma_rel);
    report.values.insert("hits".into(), hits as f64);
    report
        .notes
        .push("membership via backward shooting on the time-reversed field".into());
    Ok(report)
}

// ---------------------------------------------------------------------------
// Lemma verification: spanning grids from the network growth matrix
// ---------------------------------------------------------------------------

/// `|v|_p <= r * |v|_inf` equivalence constant on dimension `dim`.
fn norm_equiv_vs_inf(p: Norm, dim: usize) -> f64 {
    match p {
        Norm::Inf => 1.0,
        Norm::One => dim as f64,
        Norm::Two => (dim as f64).sqrt(),
    }
}

/// Build the spanning grid with block spacings
/// `theta_i = eps / (r_N r_i max_t ||e^{A_bar(t)(t - t0)}||_N)` and verify
/// on cell corners that every rectangle sits inside the `(T, eps)`-ball of
/// its grid point (corners are closed-boundary limits, so equality up to
/// slack is accepted).
pub fn verify_grid_spanning(
    sys: &System,
    k: &BoxSet,
    t0: f64,
    t: f64,
    eps: f64,
    cfg: &EstimatorConfig,
) -> Result<VerifyReport, EmpiricalError> {
    let sysr = rebase(sys, t0);
    let part = sysr.partition().clone();
    let m = part.block_count();
    let n = sysr.dim();
    let t_end = t0 + t;
    let ens = sample_ensemble(&sysr, k, cfg.ensemble, t_end, cfg.dt, cfg.seed)?;
    let shared = hull_stats(&sysr, &ens, cfg.combos, cfg.seed)?;

    // Running-max interconnection matrix and the max transition-norm factor.
    let len = ens.times.len();
    let stride = ((len - 1) / 128).max(1);
    let mut a_run = shared.entries[0].clone();
    let mut growth = 1.0f64; // t = t0 gives the identity, norm 1
    for i in 1..len {
        for r in 0..m {
            for c in 0..m {
                a_run[(r, c)] = a_run[(r, c)].max(shared.entries[i][(r, c)]);
            }
        }
        if i % stride == 0 || i == len - 1 {
            let e = matrix_exponential(&a_run.scale(ens.times[i] - t0));
            growth = growth.max(crate::measures::induced_norm(&e, part.network_norm()));
        }
    }

    let r_n = norm_equiv_vs_inf(part.network_norm(), m);
    let mut theta = vec![0.0f64; n];
    for b in 0..m {
        let r_i = norm_equiv_vs_inf(part.local_norms()[b], part.sizes()[b]);
        let th = eps / (r_n * r_i * growth);
        for j in part.block_range(b) {
            theta[j] = th;
        }
    }
    let grid = build_grid(k, &theta, &k.center());

    // Check a bounded selection of grid points against their cell corners.
    let check_points: Vec<usize> = if grid.points.len() <= 32 {
        (0..grid.points.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x11d7_0c4e_92ab_37f5);
        (0..32).map(|_| rng.gen_range(0..grid.points.len())).collect()
    };
    let corner_count = 1usize << n;
    let work: Vec<(usize, usize)> = crate::par::try_map_indexed(check_points.len(), |ci| {
        let x = &grid.points[check_points[ci]];
        let tx = integrate(&sysr, x, t_end, cfg.dt)?;
        let mut checks = 0usize;
        let mut violations = 0usize;
        for mask in 0..corner_count {
            let y: Vec<f64> = (0..n)
                .map(|j| {
                    let raw = if mask >> j & 1 == 1 {
                        x[j] + theta[j]
                    } else {
                        x[j] - theta[j]
                    };
                    raw.clamp(k.lower()[j], k.upper()[j])
                })
                .collect();
            let ty = integrate(&sysr, &y, t_end, cfg.dt)?;
            let mut d = 0.0f64;
            for i in (0..len).step_by(stride).chain([len - 1]) {
                let diff: Vec<f64> = tx.states[i]
                    .iter()
                    .zip(&ty.states[i])
                    .map(|(a, b)| b - a)
                    .collect();
                d = d.max(global_norm(&diff, &part));
            }
            checks += 1;
            if d > eps * (1.0 + cfg.slack) + 1e-9 {
                violations += 1;
            }
        }
        Ok::<_, EmpiricalError>((checks, violations))
    })?;

    let mut report = VerifyReport::new("grid_spanning");
    for (c, v) in work {
        report.checks += c;
        report.violations += v;
    }
    report.values.insert("growth_factor".into(), growth);
    report.values.insert("grid_points".into(), grid.points.len() as f64);
    for (j, th) in theta.iter().enumerate() {
        report.values.insert(format!("theta_{j}"), *th);
    }
    Ok(report)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = rng.gen_range(lo..hi);
        }
    }
    m
}

/// Sweep random dense matrices and check the two-sided measure sandwich
/// `-mu_p(-A) <= re(lambda) <= mu_p(A) <= ||A||_p` for norms 1, 2 and inf.
pub fn verify_measure_sandwich(count: usize, dim: usize, seed: u64) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ab3_91d4_c07e_2f68);
    let mut report = VerifyReport::new("measure_sandwich");
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..count {
        let a = uniform_matrix(&mut rng, dim, -2.0, 2.0);
        for p in [Norm::One, Norm::Two, Norm::Inf] {
            let r = measure_sandwich_check(&a, p);
            report.checks += 1;
            if !r.ok {
                report.violations += 1;
            }
            worst = worst
                .max(r.lower - r.min_re)
                .max(r.max_re - r.upper)
                .max(r.upper - r.norm);
        }
    }
    report.values.insert("max_gap".into(), worst);
    report
}

/// For random Metzler pairs `A >= B` (entrywise), check `||e^A||_N >= ||e^B||_N`
/// and `mu_N(A) >= mu_N(B)` for norms 1, 2 and inf, plus plain norm
/// monotonicity on random nonnegative pairs `A >= B >= 0`.
pub fn verify_metzler_monotonicity(count: usize, dim: usize, seed: u64) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e24_7b55_10cd_83af);
    let mut report = VerifyReport::new("metzler_monotonicity");
    let mut min_margin = f64::INFINITY;
    for _ in 0..count {
        // B Metzler, A = B + nonnegative perturbation, so A >= B entrywise.
        let mut b = uniform_matrix(&mut rng, dim, 0.0, 2.0);
        for i in 0..dim {
            b[(i, i)] = rng.gen_range(-2.0..2.0);
        }
        let mut a = b.clone();
        for i in 0..dim {
            for j in 0..dim {
                a[(i, j)] += rng.gen_range(0.0..1.0);
            }
        }
        let ea = matrix_exponential(&a);
        let eb = matrix_exponential(&b);
        // Independent nonnegative pair for the plain norm comparison.
        let q = uniform_matrix(&mut rng, dim, 0.0, 2.0);
        let mut qp = q.clone();
        for i in 0..dim {
            for j in 0..dim {
                qp[(i, j)] += rng.gen_range(0.0..1.0);
            }
        }
        for p in [Norm::One, Norm::Two, Norm::Inf] {
            let pairs = [
                (induced_norm(&ea, p), induced_norm(&eb, p)),
                (matrix_measure(&a, p), matrix_measure(&b, p)),
                (induced_norm(&qp, p), induced_norm(&q, p)),
            ];
            for (big, small) in pairs {
                report.checks += 1;
                let margin = big - small;
                min_margin = min_margin.min(margin);
                if margin < -1e-9 * (1.0 + small.abs()) {
                    report.violations += 1;
                }
            }
        }
    }
    report.values.insert("min_margin".into(), min_margin);
    report
}

/// For random matrices with random partitions (all-inf local and network
/// norms, the composed global norm then being plain sup), check that the
/// global measure never exceeds the network measure of the interconnection
/// matrix: `mu_G(A) <= mu_N(A_N) + 1e-9`.
pub fn verify_block_domination(count: usize, seed: u64) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x41c6_0e8d_77b2_95fa);
    let mut report = VerifyReport::new("block_domination");
    let mut max_gap = f64::NEG_INFINITY;
    for _ in 0..count {
        let n = rng.gen_range(2..=6usize);
        let mut sizes = Vec::new();
        let mut left = n;
        while left > 0 {
            let s = rng.gen_range(1..=left);
            sizes.push(s);
            left -= s;
        }
        let m = sizes.len();
        let part = Partition::new(sizes, vec![Norm::Inf; m], Norm::Inf).unwrap();
        let a = uniform_matrix(&mut rng, n, -2.0, 2.0);
        let lhs = matrix_measure(&a, Norm::Inf);
        let a_n = interconnection_from_jacobian(&a, &part);
        let rhs = matrix_measure(&a_n, Norm::Inf);
        report.checks += 1;
        max_gap = max_gap.max(lhs - rhs);
        if lhs > rhs + 1e-9 {
            report.violations += 1;
        }
    }
    report.values.insert("max_gap".into(), max_gap);
    report
}

/// Cross-check the transition determinant against the integrated trace,
/// `det Phi(t) = e^{l(t)}`, within relative `cfg.slack` on every ensemble
/// member. The report notes "tight" when the worst deviation is below 1e-9.
pub fn verify_liouville(
    sys: &System,
    k: &BoxSet,
    t: f64,
    cfg: &EstimatorConfig,
) -> Result<VerifyReport, EmpiricalError> {
    let t_end = sys.t0() + t;
    let sols = sample_variational_ensemble(sys, k, cfg.ensemble.max(2), t_end, cfg.dt, cfg.seed)?;
    let mut report = VerifyReport::new("liouville");
    let mut max_rel = 0.0f64;
    for sol in &sols {
        let len = sol.trajectory.times.len();
        let stride = ((len - 1) / 64).max(1);
        for i in (0..len).step_by(stride).chain([len - 1]) {
            let det = sol.transitions[i].det();
            let target = sol.log_det[i].exp();
            let rel = (det - target).abs() / target.abs().max(f64::MIN_POSITIVE);
            report.checks += 1;
            max_rel = max_rel.max(rel);
            if rel > cfg.slack {
                report.violations += 1;
            }
        }
    }
    report.values.insert("max_rel_dev".into(), max_rel);
    if report.violations == 0 && max_rel < 1e-9 {
        report.notes.push(format!("tight (max relative deviation {max_rel:.3e})"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxset(lo: &[f64], hi: &[f64]) -> BoxSet {
        BoxSet::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    fn sys1(field: &str, lo: f64, hi: f64) -> System {
        System::build(&[field], &[], None, boxset(&[lo], &[hi]), 0.0).unwrap()
    }

    fn quick_cfg() -> EstimatorConfig {
        EstimatorConfig {
            cells_per_axis: 16,
            dt: 1e-2,
            seed: 1,
            ensemble: 6,
            combos: 8,
            eps_list: vec![2e-2, 1e-2, 5e-3],
            horizons: vec![2.0, 3.0, 4.0],
            slack: 1e-6,
        }
    }

    #[test]
    fn grid_examples() {
        let k = boxset(&[-1.0], &[1.0]);
        let g = build_grid(&k, &[1.0], &[0.0]);
        assert_eq!(g.points, vec![vec![-1.0], vec![0.0], vec![1.0]]);
        let g = build_grid(&k, &[0.9], &[0.0]);
        assert_eq!(g.points, vec![vec![-0.9], vec![0.0], vec![0.9]]);
        let g = build_grid(&k, &[0.3], &[0.0]);
        assert!(g.points.len() >= 6 && g.points.len() <= 7, "{}", g.points.len());
    }

    #[test]
    fn grid_2d_stays_inside() {
        let k = boxset(&[0.0, -1.0], &[1.0, 1.0]);
        let g = build_grid(&k, &[0.4, 0.7], &[0.5, 0.0]);
        assert!(!g.points.is_empty());
        for p in &g.points {
            assert!(k.contains(p, 1e-12));
        }
    }

    #[test]
    fn greedy_static_interval() {
        let sys = sys1("0", 0.0, 1.0);
        let k = boxset(&[0.0], &[1.0]);
        let span = greedy_spanning_count(&sys, &k, 0.25, 1.0, 0.0, 0.0625).unwrap();
        assert!((2..=3).contains(&span), "span = {span}");
        let sep = greedy_separated_count(&sys, &k, 0.25, 1.0, 0.0, 0.0625).unwrap();
        assert!((4..=5).contains(&sep), "sep = {sep}");
        assert!(span <= sep);
    }

    #[test]
    fn greedy_huge_eps_gives_one() {
        let sys = sys1("-x1", 0.0, 1.0);
        let k = boxset(&[0.0], &[1.0]);
        assert_eq!(
            greedy_spanning_count(&sys, &k, 50.0, 1.0, 0.0, 0.25).unwrap(),
            1
        );
        assert_eq!(
            greedy_separated_count(&sys, &k, 50.0, 1.0, 0.0, 0.25).unwrap(),
            1
        );
    }

    #[test]
    fn greedy_rejects_coarse_resolution() {
        let sys = sys1("0", 0.0, 1.0);
        let k = boxset(&[0.0], &[1.0]);
        let err = greedy_spanning_count(&sys, &k, 0.25, 1.0, 0.0, 0.5).unwrap_err();
        assert!(err.to_string().contains("resolution insufficient"));
    }

    #[test]
    fn greedy_rejects_high_dimension() {
        let sys = System::build(
            &["0", "0", "0"],
            &[],
            None,
            boxset(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]),
            0.0,
        )
        .unwrap();
        let k = sys.initial_set().clone();
        let err = greedy_separated_count(&sys, &k, 0.25, 1.0, 0.0, 0.1).unwrap_err();
        assert!(matches!(err, EmpiricalError::Dimension { n: 3, max: 2 }));
    }

    #[test]
    fn greedy_growth_slope_near_one() {
        let sys = sys1("x1", 0.0, 1.0);
        let k = boxset(&[0.0], &[1.0]);
        let ts = [0.5, 1.0, 1.5];
        let counts: Vec<f64> = ts
            .iter()
            .map(|&t| greedy_separated_count(&sys, &k, 0.2, t, 0.0, 0.005).unwrap() as f64)
            .collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]));
        let slope = tail_slope(&ts, &counts);
        assert!((0.6..=1.25).contains(&slope), "slope = {slope}");
    }

    #[test]
    fn estimate_static_system_is_zero() {
        let sys = sys1("0", 0.0, 1.0);
        let k = boxset(&[0.0], &[1.0]);
        let est = estimate_entropy(&sys, &k, 0.0, &[2e-2, 1e-2, 5e-3], &[1.0, 2.0, 3.0], &quick_cfg())
            .unwrap();
        assert_eq!(est.estimate, 0.0);
        assert_eq!(est.band, 0.0);
    }

    #[test]
    fn estimate_linear_growth_slope_one() {
        let sys = sys1("x1", 0.0, 1.0);
        let k = boxset(&[0.0], &[1.0]);
        let cfg = quick_cfg();
        let est =
            estimate_entropy(&sys, &k, 0.0, &cfg.eps_list, &cfg.horizons, &cfg).unwrap();
        assert!(
            (est.estimate - 1.0).abs() < 0.05,
            "estimate = {}",
            est.estimate
        );
        assert!(est.band < 0.1, "band = {}", est.band);
        assert!(est.qualifiers.iter().any(|q| q.contains("linearized")));
    }

    #[test]
    fn estimate_table_identities() {
        // eps values in exact factor-2 steps so the packing/covering
        // sandwich can be checked across the table.
        let sys = System::build(
            &["x1", "-x2"],
            &[],
            None,
            boxset(&[0.0, 0.0], &[1.0, 1.0]),
            0.0,
        )
        .unwrap();
        let k = sys.initial_set().clone();
        let cfg = quick_cfg();
        let eps = [4e-2, 2e-2, 1e-2];
        let ts = [1.0, 2.0, 3.0];
        let est = estimate_entropy(&sys, &k, 0.0, &eps, &ts, &cfg).unwrap();
        let get = |e: f64, t: f64| {
            est.rows
                .iter()
                .find(|r| r.eps == e && r.t == t)
                .expect("row present")
        };
        for &t in &ts {
            for &e in &eps {
                let row = get(e, t);
                // Spanning never exceeds separated at the same radius.
                assert!(row.span_count <= row.sep_count);
            }
            // Separated at 2*eps never exceeds spanning at eps.
            for w in eps.windows(2) {
                assert!(get(w[0], t).sep_count <= get(w[1], t).span_count);
            }
        }
        for &e in &eps {
            // Counts nondecreasing in T.
            for w in ts.windows(2) {
                assert!(get(e, w[0]).span_count <= get(e, w[1]).span_count);
                assert!(get(e, w[0]).sep_count <= get(e, w[1]).sep_count);
            }
        }
        // Counts nonincreasing in eps at fixed T.
        for &t in &ts {
            for w in eps.windows(2) {
                assert!(get(w[0], t).span_count <= get(w[1], t).span_count);
                assert!(get(w[0], t).sep_count <= get(w[1], t).sep_count);
            }
        }
    }

    #[test]
    fn estimate_rejects_high_dimension() {
        let sys = System::build(
            &["0", "0", "0"],
            &[],
            None,
            boxset(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]),
            0.0,
        )
        .unwrap();
        let k = sys.initial_set().clone();
        let cfg = quick_cfg();
        let err = estimate_entropy(&sys, &k, 0.0, &cfg.eps_list, &cfg.horizons, &cfg).unwrap_err();
        assert!(matches!(err, EmpiricalError::Dimension { n: 3, max: 2 }));
    }

    #[test]
    fn csv_output_shape() {
        let sys = sys1("x1", 0.0, 1.0);
        let k = boxset(&[0.0], &[1.0]);
        let cfg = quick_cfg();
        let est =
            estimate_entropy(&sys, &k, 0.0, &cfg.eps_list, &cfg.horizons, &cfg).unwrap();
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.split("\r\n").filter(|l| !l.is_empty()).collect();
        assert_eq!(lines[0], EntropyEstimate::csv_header());
        assert_eq!(lines.len(), 1 + 9); // header + 3 eps * 3 horizons
        assert!(lines[1].split(',').count() == 8);
    }

    #[test]
    fn invariance_time_invariant_linear() {
        let sys = sys1("x1", 0.0, 1.0);
        let k = boxset(&[0.0], &[1.0]);
        let r = verify_initial_time_invariance(&sys, &k, 0.0, 1.0, &quick_cfg()).unwrap();
        assert!(r.passed(), "{}", r.text());
        assert!((r.values["estimate_t0"] - r.values["estimate_t1"]).abs() < 0.05);
    }

    #[test]
    fn invariance_static() {
        let sys = sys1("0", 0.0, 1.0);
        let k = boxset(&[0.0], &[1.0]);
        let r = verify_initial_time_invariance(&sys, &k, 0.0, 2.0, &quick_cfg()).unwrap();
        assert!(r.passed());
        assert_eq!(r.values["estimate_t0"], 0.0);
        assert_eq!(r.values["estimate_t1"], 0.0);
    }

    #[test]
    fn cover_max_linear_and_static() {
        let cfg = quick_cfg();
        let sys = sys1("x1", 0.0, 1.0);
        let k = boxset(&[0.0], &[1.0]);
        let r = verify_cover_max(&sys, &k, 0.0, 0, &cfg).unwrap();
        assert!(r.passed(), "{}", r.text());
        let sys0 = sys1("0", 0.0, 1.0);
        let r0 = verify_cover_max(&sys0, &k, 0.0, 0, &cfg).unwrap();
        assert!(r0.passed());
        assert_eq!(r0.values["estimate_whole"], 0.0);
    }

    #[test]
    fn separation_scalar_linear_exact() {
        let sys = sys1("0.7*x1", -1.0, 1.0);
        let k = boxset(&[-1.0], &[1.0]);
        let r = verify_separation_bounds(&sys, &k, 0.0, 2.0, 5, &quick_cfg()).unwrap();
        assert_eq!(r.violations, 0, "{}", r.text());
        assert!(r.checks > 0);
    }

    #[test]
    fn separation_two_block_nonlinear() {
        let sys = System::build(
            &["-x1 + 0.2*x2*x2", "0.1*x1 - x2"],
            &[],
            Some(Partition::new(vec![1, 1], vec![Norm::Inf, Norm::Inf], Norm::Inf).unwrap()),
            boxset(&[-0.5, -0.5], &[0.5, 0.5]),
            0.0,
        )
        .unwrap();
        let k = sys.initial_set().clone();
        let r = verify_separation_bounds(&sys, &k, 0.0, 2.0, 6, &quick_cfg()).unwrap();
        assert_eq!(r.violations, 0, "{}", r.text());
    }

    #[test]
    fn volume_linear_diag() {
        let sys = System::build(
            &["x1", "-x2"],
            &[],
            None,
            boxset(&[0.0, 0.0], &[1.0, 1.0]),
            0.0,
        )
        .unwrap();
        let k = sys.initial_set().clone();
        let r = verify_volume_bound(&sys, &k, 0.0, 1.0, 2000, &quick_cfg()).unwrap();
        assert!(r.passed(), "{}", r.text());
        assert!(r.values["gamma"].abs() < 1e-6); // trace zero
    }

    #[test]
    fn volume_contraction() {
        let sys = sys1("-x1", 0.0, 1.0);
        let k = boxset(&[0.0], &[1.0]);
        let r = verify_volume_bound(&sys, &k, 0.0, 2.0, 1500, &quick_cfg()).unwrap();
        assert!(r.passed(), "{}", r.text());
        assert!((r.values["gamma"] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn volume_nonlinear_pitchfork() {
        let sys = sys1("x1 - x1*x1*x1", -0.5, 0.5);
        let k = boxset(&[-0.5], &[0.5]);
        let r = verify_volume_bound(&sys, &k, 0.0, 1.0, 1500, &quick_cfg()).unwrap();
        assert!(r.passed(), "{}", r.text());
    }

    #[test]
    fn volume_rejects_high_dimension() {
        let sys = System::build(
            &["0", "0", "0", "0"],
            &[],
            None,
            boxset(&[0.0; 4], &[1.0; 4]),
            0.0,
        )
        .unwrap();
        let k = sys.initial_set().clone();
        let err = verify_volume_bound(&sys, &k, 0.0, 1.0, 500, &quick_cfg()).unwrap_err();
        assert!(matches!(err, EmpiricalError::Dimension { n: 4, max: 3 }));
    }

    #[test]
    fn backward_shoot_inverts_forward() {
        let sys = System::build(
            &["x2", "-x1"],
            &[],
            None,
            boxset(&[-1.0, -1.0], &[1.0, 1.0]),
            0.0,
        )
        .unwrap();
        let fwd = integrate(&sys, &[0.3, -0.4], 2.0, 1e-3).unwrap();
        let back = backward_shoot(&sys, fwd.states.last().unwrap(), 0.0, 2.0, 1e-3).unwrap();
        assert!((back[0] - 0.3).abs() < 1e-9);
        assert!((back[1] + 0.4).abs() < 1e-9);
    }

    #[test]
    fn backward_shoot_respects_breakpoint_branch() {
        // Field switches value at t = 0.5; a correct backward pass through
        // the breakpoint reproduces the forward endpoint.
        let sys = System::build(
            &["pw(t < 0.5, 1, 3)"],
            &[0.5],
            None,
            boxset(&[-1.0], &[1.0]),
            0.0,
        )
        .unwrap();
        let fwd = integrate(&sys, &[0.0], 1.0, 1e-2).unwrap();
        let x1 = fwd.states.last().unwrap()[0];
        assert!((x1 - 2.0).abs() < 1e-12);
        let back = backward_shoot(&sys, &[x1], 0.0, 1.0, 1e-2).unwrap();
        assert!(back[0].abs() < 1e-12, "landed at {}", back[0]);
    }

    #[test]
    fn grid_spanning_contraction() {
        let sys = sys1("-x1 + 0.1*sin(x1)", -1.0, 1.0);
        let k = boxset(&[-1.0], &[1.0]);
        let r = verify_grid_spanning(&sys, &k, 0.0, 1.0, 0.5, &quick_cfg()).unwrap();
        assert_eq!(r.violations, 0, "{}", r.text());
        assert!(r.values["grid_points"] >= 3.0);
    }

    #[test]
    fn grid_spanning_expansion() {
        let sys = sys1("0.5*x1", -1.0, 1.0);
        let k = boxset(&[-1.0], &[1.0]);
        let r = verify_grid_spanning(&sys, &k, 0.0, 1.0, 0.5, &quick_cfg()).unwrap();
        assert_eq!(r.violations, 0, "{}", r.text());
        // Growth factor e^{0.5} forces a finer grid than the static case.
        assert!(r.values["growth_factor"] > 1.5);
    }

    #[test]
    fn sandwich_sweep_clean() {
        let r = verify_measure_sandwich(200, 4, 7);
        assert_eq!(r.checks, 600);
        assert_eq!(r.violations, 0, "{}", r.text());
        assert!(r.values["max_gap"] <= 1e-9);
    }

    #[test]
    fn metzler_monotonicity_sweep_clean() {
        let r = verify_metzler_monotonicity(200, 4, 7);
        assert_eq!(r.checks, 200 * 9);
        assert_eq!(r.violations, 0, "{}", r.text());
        assert!(r.values["min_margin"] >= -1e-9);
    }

    #[test]
    fn block_domination_sweep_clean() {
        let r = verify_block_domination(200, 7);
        assert_eq!(r.checks, 200);
        assert_eq!(r.violations, 0, "{}", r.text());
        assert!(r.values["max_gap"] <= 1e-9);
    }

    #[test]
    fn liouville_linear_is_tight() {
        let sys = System::build(
            &["x1", "0 - x2"],
            &[],
            None,
            boxset(&[0.0, 0.0], &[1.0, 1.0]),
            0.0,
        )
        .unwrap();
        let k = sys.initial_set().clone();
        let r = verify_liouville(&sys, &k, 1.0, &quick_cfg()).unwrap();
        assert_eq!(r.violations, 0, "{}", r.text());
        assert!(r.notes.iter().any(|s| s.contains("tight")), "{}", r.text());
    }

    #[test]
    fn liouville_nonlinear_within_tolerance() {
        let sys = System::build(
            &["x1 - x1^3 + 0.2*x2", "sin(x1) - 0.5*x2"],
            &[],
            None,
            boxset(&[-0.5, -0.5], &[0.5, 0.5]),
            0.0,
        )
        .unwrap();
        let k = sys.initial_set().clone();
        let r = verify_liouville(&sys, &k, 2.0, &quick_cfg()).unwrap();
        assert_eq!(r.violations, 0, "{}", r.text());
    }

    #[test]
    fn liouville_negative_slack_flags_everything() {
        // The corrupted-slack harness self-test: slack < 0 must fail every check.
        let sys = sys1("0.3*x1", -1.0, 1.0);
        let k = boxset(&[-1.0], &[1.0]);
        let mut cfg = quick_cfg();
        cfg.slack = -1.0;
        let r = verify_liouville(&sys, &k, 1.0, &cfg).unwrap();
        assert_eq!(r.violations, r.checks);
        assert!(!r.passed());
    }
}
