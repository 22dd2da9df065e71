//! Closed-form entropy bounds from sampled ensemble data.
//!
//! Every bound has the shape `n * max(q, 0)` (or `max(q, 0)` for the trace
//! lower bound) where `q` is a limit quantity of the Jacobian along the
//! flow: a tail limsup of a hull-sampled matrix measure, a tail liminf of
//! the member-sampled trace, or the spectral abscissa of a Metzler matrix
//! assembled from entrywise tail maxima. Limits at `t -> infinity` are
//! approximated by the maximum (minimum) over a tail window of the horizon,
//! cross-checked on a nested half-window, and sharpened by a golden-section
//! search in `t` around the discrete argmax with the state sample frozen.
//!
//! The unpartitioned bounds are computed by routing through the network
//! machinery with a single-block (or all-scalar, for the Metzler variant)
//! partition, so the collapse identities hold bit for bit.

use crate::expr::EvalError;
use crate::measures::{
    interconnection_from_jacobian, matrix_measure, spectral_abscissa_metzler, Matrix,
};
use crate::ode::{
    convex_hull_samples, integrate, sample_ensemble, time_grid, OdeError, ReachEnsemble,
    Trajectory,
};
use crate::system::{BoxSet, Norm, Partition, System};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("jacobian evaluation failed at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
    #[error("system is not linear time-varying: Jacobian varies with x by {deviation:.3e}")]
    NotLtv { deviation: f64 },
}

/// Horizon, tail-window, and sampling configuration shared by all bounds.
#[derive(Debug, Clone)]
pub struct HorizonConfig {
    /// End of the integration horizon.
    pub t_max: f64,
    /// Integrator step.
    pub dt: f64,
    /// Fraction of `[t0, t_max]` treated as the tail window (`t -> infinity`
    /// proxy); must lie in (0, 1).
    pub tail_fraction: f64,
    /// Ensemble member count.
    pub ensemble: usize,
    /// Random convex combinations added per time step when sampling hulls.
    pub combos: usize,
    pub seed: u64,
    /// Candidate reinitialization times for the infimum variants; `None`
    /// selects [`HorizonConfig::t1_candidates`]'s default grid.
    pub t1_list: Option<Vec<f64>>,
}

impl HorizonConfig {
    pub fn new(t_max: f64) -> HorizonConfig {
        HorizonConfig {
            t_max,
            dt: 1e-3,
            tail_fraction: 0.25,
            ensemble: 16,
            combos: 32,
            seed: 1,
            t1_list: None,
        }
    }

    pub fn from_sections(
        h: &crate::specfile::HorizonSection,
        s: &crate::specfile::SamplingSection,
    ) -> HorizonConfig {
        HorizonConfig {
            t_max: h.t_max,
            dt: h.dt,
            tail_fraction: h.tail_fraction,
            ensemble: s.ensemble,
            combos: s.convex_combos,
            seed: s.seed,
            t1_list: h.t1_list.clone(),
        }
    }

    /// Reinitialization times: the explicit list if given, otherwise
    /// `t0 + {0, D/8, D/4, D/2, D}` with `D = (t_max - t0)/2`. Including
    /// `t0` itself guarantees the infimum variant never exceeds the plain
    /// bound computed on the same data.
    pub fn t1_candidates(&self, t0: f64) -> Vec<f64> {
        if let Some(list) = &self.t1_list {
            return list.clone();
        }
        let d = 0.5 * (self.t_max - t0);
        [0.0, 0.125, 0.25, 0.5, 1.0]
            .iter()
            .map(|f| t0 + f * d)
            .collect()
    }
}

/// Result of one bound computation: the bound, the intermediate quantities
/// that produce it, the configuration echo, and any caveats.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub result_id: String,
    /// The entropy bound, in nats per unit time; always >= 0.
    pub bound: f64,
    /// Named intermediate values (`mu_hat`, `chi_check`, `spabs`, `n`,
    /// Metzler entries `a_<i>_<j>`, per-candidate values, ...).
    pub intermediates: BTreeMap<String, f64>,
    pub t_max: f64,
    pub dt: f64,
    pub tail_fraction: f64,
    pub ensemble: usize,
    pub combos: usize,
    pub seed: u64,
    /// Caveats such as "sampled max - not rigorous" or the non-converged
    /// tail-window flag.
    pub qualifiers: Vec<String>,
}

pub const QUAL_SAMPLED: &str = "sampled max - not rigorous";
pub const QUAL_NON_CONVERGED: &str = "non-converged tail window";
pub const QUAL_SUPERSET: &str = "superset assumed to contain the reachable hull (unchecked)";

impl BoundReport {
    fn new(result_id: &str, bound: f64, cfg: &HorizonConfig) -> BoundReport {
        BoundReport {
            result_id: result_id.to_string(),
            bound,
            intermediates: BTreeMap::new(),
            t_max: cfg.t_max,
            dt: cfg.dt,
            tail_fraction: cfg.tail_fraction,
            ensemble: cfg.ensemble,
            combos: cfg.combos,
            seed: cfg.seed,
            qualifiers: vec![QUAL_SAMPLED.to_string()],
        }
    }

    pub fn csv_header() -> &'static str {
        "result_id,bound,mu_hat,chi_check,spabs,t_max,dt,tail_fraction,ensemble,combos,seed,qualifiers"
    }

    /// One RFC-4180 row (no trailing newline); absent intermediates are
    /// empty fields.
    pub fn csv_row(&self) -> String {
        let opt = |key: &str| {
            self.intermediates
                .get(key)
                .map(|v| format!("{v:.16e}"))
                .unwrap_or_default()
        };
        format!(
            "{},{:.16e},{},{},{},{:.16e},{:.16e},{:.16e},{},{},{},\"{}\"",
            self.result_id,
            self.bound,
            opt("mu_hat"),
            opt("chi_check"),
            opt("spabs"),
            self.t_max,
            self.dt,
            self.tail_fraction,
            self.ensemble,
            self.combos,
            self.seed,
            self.qualifiers.join("; "),
        )
    }

    /// Human-readable block.
    pub fn text(&self) -> String {
        let mut out = format!("{}: bound = {:.12}\n", self.result_id, self.bound);
        for (k, v) in &self.intermediates {
            out.push_str(&format!("  {k} = {v:.12}\n"));
        }
        out.push_str(&format!(
            "  horizon: t_max = {}, dt = {}, tail_fraction = {}\n  sampling: ensemble = {}, combos = {}, seed = {}\n",
            self.t_max, self.dt, self.tail_fraction, self.ensemble, self.combos, self.seed
        ));
        for q in &self.qualifiers {
            out.push_str(&format!("  note: {q}\n"));
        }
        out
    }

    pub fn is_converged(&self) -> bool {
        !self.qualifiers.iter().any(|q| q == QUAL_NON_CONVERGED)
    }

    fn put(&mut self, key: &str, value: f64) {
        self.intermediates.insert(key.to_string(), value);
    }
}

/// `[q]^+ = max(q, 0)`.
fn positive_part(q: f64) -> f64 {
    q.max(0.0)
}

/// Indices `(i_lo, i_mid)` of the tail window start and of the nested
/// half-window start within `times`.
fn tail_window(times: &[f64], t0: f64, t_max: f64, tail_fraction: f64) -> (usize, usize) {
    let w_lo = t0 + (1.0 - tail_fraction) * (t_max - t0);
    let w_mid = t0 + (1.0 - 0.5 * tail_fraction) * (t_max - t0);
    let first_at = |target: f64| {
        times
            .partition_point(|t| *t < target - 1e-12)
            .min(times.len() - 1)
    };
    (first_at(w_lo), first_at(w_mid))
}

const GOLDEN_ITERS: usize = 64;

/// Golden-section maximization of `f` on `[a, b]`, returning the best value
/// probed. Non-unimodal `f` still yields a valid sampled max (the caller
/// combines it with the grid max).
fn golden_max(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    if !(b > a) {
        return f64::NEG_INFINITY;
    }
    let (mut a, mut b) = (a, b);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = fc.max(fd);
    for _ in 0..GOLDEN_ITERS {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
        best = best.max(fc.max(fd));
    }
    best
}

/// Bracket for polishing around grid index `idx`: the neighboring grid
/// points, which by construction lie in the same smooth segment.
fn polish_bracket(times: &[f64], idx: usize) -> (f64, f64) {
    let lo = if idx == 0 { times[0] } else { times[idx - 1] };
    let hi = if idx + 1 < times.len() {
        times[idx + 1]
    } else {
        times[idx]
    };
    (lo, hi)
}

/// Outcome of a per-index max scan over hull samples.
struct ScanMax {
    /// Grid max over the window and over the nested half-window.
    grid_w: f64,
    grid_w2: f64,
    argmax_index: usize,
    argmax_state: Vec<f64>,
}

/// Per-time-index maximum of `eval(t, v)` over hull samples, scanned from
/// `start`, with the nested-window max taken from `mid`.
fn hull_scan_max(
    ens: &ReachEnsemble,
    combos: usize,
    seed: u64,
    start: usize,
    mid: usize,
    eval: &(dyn Fn(f64, &[f64]) -> Result<f64, EvalError> + Sync),
) -> Result<ScanMax, BoundError> {
    let times = &ens.times;
    let per_index: Vec<(f64, Vec<f64>)> =
        crate::par::try_map_indexed(times.len() - start, |off| {
            let i = start + off;
            let t = times[i];
            let samples = convex_hull_samples(ens, i, combos, seed);
            let mut best = f64::NEG_INFINITY;
            let mut best_state = samples[0].clone();
            for v in samples {
                let val = eval(t, &v).map_err(|source| BoundError::Eval { t, source })?;
                if val > best {
                    best = val;
                    best_state = v;
                }
            }
            Ok::<_, BoundError>((best, best_state))
        })?;
    let mut out = ScanMax {
        grid_w: f64::NEG_INFINITY,
        grid_w2: f64::NEG_INFINITY,
        argmax_index: start,
        argmax_state: per_index[0].1.clone(),
    };
    for (off, (val, state)) in per_index.into_iter().enumerate() {
        let i = start + off;
        if val > out.grid_w {
            out.grid_w = val;
            out.argmax_index = i;
            out.argmax_state = state;
        }
        if i >= mid {
            out.grid_w2 = out.grid_w2.max(val);
        }
    }
    Ok(out)
}

/// Tail limsup proxy with golden-section polish: max of the window grid max
/// and the polished value at the frozen argmax state. Returns the value and
/// whether the nested-window agreement held.
fn polished_limsup(
    ens: &ReachEnsemble,
    combos: usize,
    seed: u64,
    start: usize,
    mid: usize,
    eval: &(dyn Fn(f64, &[f64]) -> Result<f64, EvalError> + Sync),
) -> Result<(f64, bool), BoundError> {
    let scan = hull_scan_max(ens, combos, seed, start, mid, eval)?;
    let (lo, hi) = polish_bracket(&ens.times, scan.argmax_index);
    let frozen = scan.argmax_state;
    let polished = golden_max(lo, hi, |t| {
        eval(t, &frozen).unwrap_or(f64::NEG_INFINITY)
    });
    let converged = (scan.grid_w - scan.grid_w2).abs() <= 1e-3;
    Ok((scan.grid_w.max(polished), converged))
}

/// Member-sampled tail liminf proxy (no hull combos) with polish.
fn polished_liminf_trace(
    sys: &System,
    ens: &ReachEnsemble,
    start: usize,
    mid: usize,
) -> Result<(f64, bool), BoundError> {
    let times = &ens.times;
    let per_index: Vec<(f64, Vec<f64>)> =
        crate::par::try_map_indexed(times.len() - start, |off| {
            let i = start + off;
            let t = times[i];
            let mut best = f64::INFINITY;
            let mut best_state = ens.members[0].states[i].clone();
            for m in &ens.members {
                let x = &m.states[i];
                let val = sys
                    .jacobian_trace(t, x)
                    .map_err(|source| BoundError::Eval { t, source })?;
                if val < best {
                    best = val;
                    best_state = x.clone();
                }
            }
            Ok::<_, BoundError>((best, best_state))
        })?;
    let mut grid_w = f64::INFINITY;
    let mut grid_w2 = f64::INFINITY;
    let mut arg_idx = start;
    let mut arg_state = per_index[0].1.clone();
    for (off, (val, state)) in per_index.into_iter().enumerate() {
        let i = start + off;
        if val < grid_w {
            grid_w = val;
            arg_idx = i;
            arg_state = state;
        }
        if i >= mid {
            grid_w2 = grid_w2.min(val);
        }
    }
    let (lo, hi) = polish_bracket(times, arg_idx);
    let polished = -golden_max(lo, hi, |t| {
        sys.jacobian_trace(t, &arg_state)
            .map(|v| -v)
            .unwrap_or(f64::NEG_INFINITY)
    });
    let converged = (grid_w - grid_w2).abs() <= 1e-3;
    Ok((grid_w.min(polished), converged))
}

/// Entrywise tail maxima of the interconnection matrix over hull samples,
/// with per-entry golden polish. Returns the Metzler matrix of maxima.
fn polished_entrywise_max(
    sys: &System,
    ens: &ReachEnsemble,
    combos: usize,
    seed: u64,
    start: usize,
    mid: usize,
) -> Result<(Matrix, bool), BoundError> {
    let part = sys.partition();
    let m = part.block_count();
    let times = &ens.times;
    // Per index: entrywise max over samples, with the achieving state.
    type EntryMax = (Matrix, Vec<Vec<f64>>);
    let per_index: Vec<EntryMax> = crate::par::try_map_indexed(times.len() - start, |off| {
        let i = start + off;
        let t = times[i];
        let samples = convex_hull_samples(ens, i, combos, seed);
        let mut best = Matrix::zeros(m, m);
        let mut arg: Vec<Vec<f64>> = vec![samples[0].clone(); m * m];
        let mut first = true;
        for v in samples {
            let j = sys
                .jacobian(t, &v)
                .map_err(|source| BoundError::Eval { t, source })?;
            let a = interconnection_from_jacobian(&j, part);
            for r in 0..m {
                for c in 0..m {
                    if first || a[(r, c)] > best[(r, c)] {
                        best[(r, c)] = a[(r, c)];
                        arg[r * m + c] = v.clone();
                    }
                }
            }
            first = false;
        }
        Ok::<_, BoundError>((best, arg))
    })?;

    let mut grid_w = per_index[0].0.clone();
    let mut grid_w2: Option<Matrix> = None;
    let mut arg_idx = vec![start; m * m];
    let mut arg_state = per_index[0].1.clone();
    for (off, (mat, arg)) in per_index.iter().enumerate() {
        let i = start + off;
        for r in 0..m {
            for c in 0..m {
                if off == 0 || mat[(r, c)] > grid_w[(r, c)] {
                    grid_w[(r, c)] = mat[(r, c)];
                    arg_idx[r * m + c] = i;
                    arg_state[r * m + c] = arg[r * m + c].clone();
                }
            }
        }
        if i >= mid {
            grid_w2 = Some(match grid_w2 {
                None => mat.clone(),
                Some(prev) => {
                    let mut nx = prev;
                    for r in 0..m {
                        for c in 0..m {
                            nx[(r, c)] = nx[(r, c)].max(mat[(r, c)]);
                        }
                    }
                    nx
                }
            });
        }
    }

    // Per-entry polish with the achieving state frozen.
    let mut polished = grid_w.clone();
    for r in 0..m {
        for c in 0..m {
            let idx = arg_idx[r * m + c];
            let frozen = &arg_state[r * m + c];
            let (lo, hi) = polish_bracket(times, idx);
            let val = golden_max(lo, hi, |t| {
                match sys.jacobian(t, frozen) {
                    Ok(j) => interconnection_from_jacobian(&j, part)[(r, c)],
                    Err(_) => f64::NEG_INFINITY,
                }
            });
            polished[(r, c)] = polished[(r, c)].max(val);
        }
    }

    let converged = match grid_w2 {
        Some(w2) => grid_w.sub(&w2).max_abs() <= 1e-3,
        None => true,
    };
    Ok((polished, converged))
}

/// Ensemble over the full horizon seeded from `k`.
fn horizon_ensemble(
    sys: &System,
    k: &BoxSet,
    cfg: &HorizonConfig,
) -> Result<ReachEnsemble, BoundError> {
    Ok(sample_ensemble(
        sys,
        k,
        cfg.ensemble,
        cfg.t_max,
        cfg.dt,
        cfg.seed,
    )?)
}

fn record_matrix(report: &mut BoundReport, prefix: &str, m: &Matrix) {
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            report.put(&format!("{prefix}_{r}_{c}"), m[(r, c)]);
        }
    }
}

/// Network-measure upper bound: `n * [mu_hat_N]^+` with `mu_hat_N` the tail
/// limsup over hull samples of the network-norm measure of the
/// interconnection matrix. With a single-block partition this is exactly
/// the plain matrix-measure bound.
pub fn upper_bound_network_measure(
    sys: &System,
    k: &BoxSet,
    cfg: &HorizonConfig,
) -> Result<BoundReport, BoundError> {
    network_measure_with_id(sys, k, cfg, "network_measure")
}

fn network_measure_with_id(
    sys: &System,
    k: &BoxSet,
    cfg: &HorizonConfig,
    result_id: &str,
) -> Result<BoundReport, BoundError> {
    let ens = horizon_ensemble(sys, k, cfg)?;
    let (start, mid) = tail_window(&ens.times, sys.t0(), cfg.t_max, cfg.tail_fraction);
    let part = sys.partition();
    let net = part.network_norm();
    let eval = move |t: f64, v: &[f64]| -> Result<f64, EvalError> {
        let j = sys.jacobian(t, v)?;
        Ok(matrix_measure(&interconnection_from_jacobian(&j, part), net))
    };
    let (mu_hat, converged) = polished_limsup(&ens, cfg.combos, cfg.seed, start, mid, &eval)?;
    let n = sys.dim() as f64;
    let mut report = BoundReport::new(result_id, n * positive_part(mu_hat), cfg);
    report.put("mu_hat", mu_hat);
    report.put("n", n);
    if !converged {
        report.qualifiers.push(QUAL_NON_CONVERGED.to_string());
    }
    Ok(report)
}

/// Matrix-measure upper bound `n * [mu_hat]^+` in the norm `p`, computed
/// through the network machinery with a single-block partition.
pub fn upper_bound_measure(
    sys: &System,
    k: &BoxSet,
    p: Norm,
    cfg: &HorizonConfig,
) -> Result<BoundReport, BoundError> {
    let sys1 = sys
        .with_partition(Partition::trivial(sys.dim(), p))
        .expect("trivial partition always fits");
    network_measure_with_id(&sys1, k, cfg, &format!("measure_{}", p.name()))
}

/// Trace lower bound `[chi_check]^+` with `chi_check` the tail liminf over
/// ensemble members (not hull samples) of `tr J`.
pub fn lower_bound_trace(
    sys: &System,
    k: &BoxSet,
    cfg: &HorizonConfig,
) -> Result<BoundReport, BoundError> {
    let ens = horizon_ensemble(sys, k, cfg)?;
    let (start, mid) = tail_window(&ens.times, sys.t0(), cfg.t_max, cfg.tail_fraction);
    let (chi_check, converged) = polished_liminf_trace(sys, &ens, start, mid)?;
    let mut report = BoundReport::new("trace", positive_part(chi_check), cfg);
    report.put("chi_check", chi_check);
    if !converged {
        report.qualifiers.push(QUAL_NON_CONVERGED.to_string());
    }
    Ok(report)
}

/// Network Metzler bound: assemble the minimal Metzler matrix of entrywise
/// tail maxima of the interconnection matrix, then `n * [spabs]^+`.
pub fn upper_bound_network_metzler(
    sys: &System,
    k: &BoxSet,
    cfg: &HorizonConfig,
) -> Result<BoundReport, BoundError> {
    network_metzler_with_id(sys, k, cfg, "network_metzler")
}

fn network_metzler_with_id(
    sys: &System,
    k: &BoxSet,
    cfg: &HorizonConfig,
    result_id: &str,
) -> Result<BoundReport, BoundError> {
    let ens = horizon_ensemble(sys, k, cfg)?;
    let (start, mid) = tail_window(&ens.times, sys.t0(), cfg.t_max, cfg.tail_fraction);
    let (a_hat, converged) =
        polished_entrywise_max(sys, &ens, cfg.combos, cfg.seed, start, mid)?;
    let spabs = spectral_abscissa_metzler(&a_hat);
    let n = sys.dim() as f64;
    let mut report = BoundReport::new(result_id, n * positive_part(spabs), cfg);
    report.put("spabs", spabs);
    report.put("n", n);
    record_matrix(&mut report, "a_hat", &a_hat);
    if !converged {
        report.qualifiers.push(QUAL_NON_CONVERGED.to_string());
    }
    Ok(report)
}

/// Scalar (coordinate-wise) Metzler bound: signed diagonal maxima, absolute
/// off-diagonal maxima of the Jacobian itself — the all-scalar partition's
/// network Metzler bound.
pub fn upper_bound_metzler_scalar(
    sys: &System,
    k: &BoxSet,
    cfg: &HorizonConfig,
) -> Result<BoundReport, BoundError> {
    let sys1 = sys
        .with_partition(Partition::scalar(sys.dim(), Norm::Inf))
        .expect("scalar partition always fits");
    network_metzler_with_id(&sys1, k, cfg, "metzler")
}

/// Max deviation of `J(t, x)` from `J(t, 0)` over seeded `(t, x)` samples.
fn ltv_deviation(sys: &System, cfg: &HorizonConfig) -> Result<f64, BoundError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x17f3_a2d1);
    let k = sys.initial_set();
    let origin = vec![0.0; sys.dim()];
    let mut worst = 0.0f64;
    for _ in 0..32 {
        let t = rng.gen_range(sys.t0()..=cfg.t_max);
        let fr: Vec<f64> = (0..sys.dim()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let x = k.at_fractions(&fr);
        let jx = sys
            .jacobian(t, &x)
            .map_err(|source| BoundError::Eval { t, source })?;
        let j0 = sys
            .jacobian(t, &origin)
            .map_err(|source| BoundError::Eval { t, source })?;
        worst = worst.max(jx.sub(&j0).norm_inf());
    }
    Ok(worst)
}

/// Bounds for linear time-varying systems: no state sampling (the Jacobian
/// is evaluated at the origin), all three bounds in one report. The measure
/// norm is the system partition's network norm. Errors if the Jacobian in
/// fact depends on `x`.
pub fn ltv_bounds(sys: &System, cfg: &HorizonConfig) -> Result<BoundReport, BoundError> {
    let deviation = ltv_deviation(sys, cfg)?;
    if deviation > 1e-9 {
        return Err(BoundError::NotLtv { deviation });
    }
    let times = time_grid(sys.t0(), cfg.t_max, cfg.dt, sys.breakpoints())?;
    let (start, mid) = tail_window(&times, sys.t0(), cfg.t_max, cfg.tail_fraction);
    let origin = vec![0.0; sys.dim()];
    // A frozen-state ensemble at the origin reuses the scan machinery
    // without integrating anything.
    let frozen = Trajectory {
        t0: sys.t0(),
        times: times.clone(),
        states: vec![origin.clone(); times.len()],
    };
    let ens = ReachEnsemble {
        times,
        members: vec![frozen.clone(), frozen],
        initial_states: vec![origin.clone(), origin],
        seed: cfg.seed,
    };
    let p = sys.partition().network_norm();

    let eval_mu = |t: f64, v: &[f64]| -> Result<f64, EvalError> {
        Ok(matrix_measure(&sys.jacobian(t, v)?, p))
    };
    let (mu_hat, conv_mu) = polished_limsup(&ens, 0, cfg.seed, start, mid, &eval_mu)?;
    let (chi_check, conv_tr) = polished_liminf_trace(sys, &ens, start, mid)?;
    let scalar_sys = sys
        .with_partition(Partition::scalar(sys.dim(), Norm::Inf))
        .expect("scalar partition always fits");
    let (a_hat, conv_mz) =
        polished_entrywise_max(&scalar_sys, &ens, 0, cfg.seed, start, mid)?;
    let spabs = spectral_abscissa_metzler(&a_hat);

    let n = sys.dim() as f64;
    let mut report = BoundReport::new("ltv", n * positive_part(mu_hat), cfg);
    report.put("mu_hat", mu_hat);
    report.put("chi_check", chi_check);
    report.put("spabs", spabs);
    report.put("n", n);
    report.put("upper_measure", n * positive_part(mu_hat));
    report.put("lower_trace", positive_part(chi_check));
    report.put("upper_metzler", n * positive_part(spabs));
    record_matrix(&mut report, "a_hat", &a_hat);
    if !(conv_mu && conv_tr && conv_mz) {
        report.qualifiers.push(QUAL_NON_CONVERGED.to_string());
    }
    Ok(report)
}

/// Hull samples of the reachable set at `t1`, re-propagated to `t_max` as a
/// fresh ensemble, together with the system re-based at `t1`.
fn reinitialized_ensemble(
    sys: &System,
    k: &BoxSet,
    t1: f64,
    cfg: &HorizonConfig,
) -> Result<(System, ReachEnsemble), BoundError> {
    if t1 <= sys.t0() {
        return Ok((sys.clone(), horizon_ensemble(sys, k, cfg)?));
    }
    let stage = sample_ensemble(sys, k, cfg.ensemble, t1, cfg.dt, cfg.seed)?;
    let last = stage.times.len() - 1;
    let seeds = convex_hull_samples(&stage, last, cfg.combos, cfg.seed);
    let sys1 = sys.with_t0(t1).expect("t1 is finite");
    let members: Vec<Trajectory> = crate::par::try_map_indexed(seeds.len(), |i| {
        integrate(&sys1, &seeds[i], cfg.t_max, cfg.dt)
    })?;
    let ens = ReachEnsemble {
        times: members[0].times.clone(),
        members,
        initial_states: seeds,
        seed: cfg.seed,
    };
    Ok((sys1, ens))
}

/// Measure bound with reinitialization: for each candidate `t1`, hull
/// samples of the reach set at `t1` are propagated and the tail limsup of
/// the measure is taken along them; the bound uses the best (smallest)
/// candidate. The norm `p` is applied through a single-block partition.
pub fn upper_bound_measure_t1(
    sys: &System,
    k: &BoxSet,
    p: Norm,
    cfg: &HorizonConfig,
) -> Result<BoundReport, BoundError> {
    let sys1 = sys
        .with_partition(Partition::trivial(sys.dim(), p))
        .expect("trivial partition always fits");
    network_measure_t1_with_id(&sys1, k, cfg, &format!("measure_t1_{}", p.name()))
}

/// Network-measure variant of the reinitialized bound.
pub fn upper_bound_network_measure_t1(
    sys: &System,
    k: &BoxSet,
    cfg: &HorizonConfig,
) -> Result<BoundReport, BoundError> {
    network_measure_t1_with_id(sys, k, cfg, "network_measure_t1")
}

fn network_measure_t1_with_id(
    sys: &System,
    k: &BoxSet,
    cfg: &HorizonConfig,
    result_id: &str,
) -> Result<BoundReport, BoundError> {
    let part = sys.partition().clone();
    let net = part.network_norm();
    let mut best = f64::INFINITY;
    let mut best_t1 = sys.t0();
    let mut best_converged = true;
    let mut per_candidate = Vec::new();
    for (idx, t1) in cfg.t1_candidates(sys.t0()).into_iter().enumerate() {
        let (sys1, ens) = reinitialized_ensemble(sys, k, t1, cfg)?;
        let (start, mid) = tail_window(&ens.times, sys.t0(), cfg.t_max, cfg.tail_fraction);
        let part_ref = sys1.partition();
        let eval = |t: f64, v: &[f64]| -> Result<f64, EvalError> {
            let j = sys1.jacobian(t, v)?;
            Ok(matrix_measure(&interconnection_from_jacobian(&j, part_ref), net))
        };
        let (mu, converged) = polished_limsup(&ens, cfg.combos, cfg.seed, start, mid, &eval)?;
        per_candidate.push((idx, t1, mu));
        if mu < best {
            best = mu;
            best_t1 = t1;
            best_converged = converged;
        }
    }
    let n = sys.dim() as f64;
    let mut report = BoundReport::new(result_id, n * positive_part(best), cfg);
    report.put("mu_hat", best);
    report.put("n", n);
    report.put("t1_best", best_t1);
    for (idx, t1, mu) in per_candidate {
        report.put(&format!("mu_at_t1_{idx}"), mu);
        report.put(&format!("t1_{idx}"), t1);
    }
    if !best_converged {
        report.qualifiers.push(QUAL_NON_CONVERGED.to_string());
    }
    Ok(report)
}

/// Reinitialized network Metzler bound: per candidate `t1` the entrywise
/// supremum over all `t >= t1` (not just the tail window) of the
/// interconnection matrix along re-propagated hull samples; the final
/// Metzler matrix is the entrywise minimum over candidates.
pub fn upper_bound_network_metzler_t1(
    sys: &System,
    k: &BoxSet,
    cfg: &HorizonConfig,
) -> Result<BoundReport, BoundError> {
    let m = sys.partition().block_count();
    let mut a_star: Option<Matrix> = None;
    for t1 in cfg.t1_candidates(sys.t0()) {
        let (sys1, ens) = reinitialized_ensemble(sys, k, t1, cfg)?;
        // Supremum over the whole re-propagated horizon: start at index 0.
        let mid = ens.times.len() / 2;
        let (a_t1, _) =
            polished_entrywise_max(&sys1, &ens, cfg.combos, cfg.seed, 0, mid)?;
        a_star = Some(match a_star {
            None => a_t1,
            Some(prev) => {
                let mut nx = prev;
                for r in 0..m {
                    for c in 0..m {
                        nx[(r, c)] = nx[(r, c)].min(a_t1[(r, c)]);
                    }
                }
                nx
            }
        });
    }
    let a_star = a_star.expect("t1 candidate list is nonempty");
    let spabs = spectral_abscissa_metzler(&a_star);
    let n = sys.dim() as f64;
    let mut report = BoundReport::new("network_metzler_t1", n * positive_part(spabs), cfg);
    report.put("spabs", spabs);
    report.put("n", n);
    record_matrix(&mut report, "a_star", &a_star);
    Ok(report)
}

/// Static superset bound: maximize the measure of the Jacobian over a
/// deterministic grid on `s` times the given time grid — no integration.
/// The caller asserts that `s` contains the relevant reachable hull.
pub fn upper_bound_superset(
    sys: &System,
    s: &BoxSet,
    p: Norm,
    t_grid: &[f64],
) -> Result<BoundReport, BoundError> {
    assert!(!t_grid.is_empty(), "superset bound needs a time grid");
    let n = sys.dim();
    // Per-axis resolution chosen so the full grid stays near 4096 points.
    let per_axis: usize = match n {
        1 => 129,
        2 => 64,
        3 => 16,
        _ => ((4096.0f64).powf(1.0 / n as f64).floor() as usize).max(2),
    };
    let mut points = Vec::with_capacity(per_axis.pow(n.min(6) as u32));
    let mut idx = vec![0usize; n];
    loop {
        let fr: Vec<f64> = idx
            .iter()
            .map(|&i| i as f64 / (per_axis - 1) as f64)
            .collect();
        points.push(s.at_fractions(&fr));
        let mut axis = 0;
        loop {
            idx[axis] += 1;
            if idx[axis] < per_axis {
                break;
            }
            idx[axis] = 0;
            axis += 1;
            if axis == n {
                break;
            }
        }
        if axis == n {
            break;
        }
    }

    let per_time: Vec<(f64, usize)> = crate::par::try_map_indexed(t_grid.len(), |ti| {
        let t = t_grid[ti];
        let mut best = f64::NEG_INFINITY;
        let mut best_point = 0usize;
        for (pi, v) in points.iter().enumerate() {
            let j = sys
                .jacobian(t, v)
                .map_err(|source| BoundError::Eval { t, source })?;
            let val = matrix_measure(&j, p);
            if val > best {
                best = val;
                best_point = pi;
            }
        }
        Ok::<_, BoundError>((best, best_point))
    })?;
    let mut mu_s = f64::NEG_INFINITY;
    let mut arg_t = 0usize;
    let mut arg_p = 0usize;
    for (ti, (val, pi)) in per_time.iter().enumerate() {
        if *val > mu_s {
            mu_s = *val;
            arg_t = ti;
            arg_p = *pi;
        }
    }
    // Polish in t around the best grid time with the state frozen.
    let (lo, hi) = polish_bracket(t_grid, arg_t);
    let frozen = &points[arg_p];
    let polished = golden_max(lo, hi, |t| match sys.jacobian(t, frozen) {
        Ok(j) => matrix_measure(&j, p),
        Err(_) => f64::NEG_INFINITY,
    });
    mu_s = mu_s.max(polished);

    let nf = sys.dim() as f64;
    let cfg_echo = HorizonConfig {
        t_max: *t_grid.last().unwrap(),
        dt: if t_grid.len() > 1 {
            t_grid[1] - t_grid[0]
        } else {
            0.0
        },
        tail_fraction: 1.0,
        ensemble: 0,
        combos: 0,
        seed: 0,
        t1_list: None,
    };
    let mut report = BoundReport::new(
        &format!("superset_{}", p.name()),
        nf * positive_part(mu_s),
        &cfg_echo,
    );
    report.qualifiers = vec![QUAL_SUPERSET.to_string()];
    report.put("mu_hat", mu_s);
    report.put("n", nf);
    Ok(report)
}
