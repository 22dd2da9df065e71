//! Command-line front end: load a spec file, dispatch to the bound
//! computations, the empirical estimator, the verification suite, or plain
//! ensemble simulation, and write reports into an output directory.
//!
//! Exit codes: 0 success, 2 bad arguments / unparseable spec, 3 trajectory
//! blow-up or evaluation failure, 4 non-converged tail window (reports are
//! still written), 5 estimator dimension unsupported, 6 verification
//! violations.

use crate::bounds::{self, BoundError, BoundReport, HorizonConfig};
use crate::empirical::{self, EmpiricalError, EstimatorConfig, VerifyReport};
use crate::ode::{sample_ensemble, OdeError};
use crate::specfile::{load_spec, ParsedSpec};
use crate::system::Norm;
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: u8 = 0;
pub const EXIT_SPEC: u8 = 2;
pub const EXIT_BLOWUP: u8 = 3;
pub const EXIT_NON_CONVERGED: u8 = 4;
pub const EXIT_DIMENSION: u8 = 5;
pub const EXIT_VIOLATION: u8 = 6;

#[derive(Parser)]
#[command(
    name = "entrobound",
    version,
    about = "Entropy bounds and grid-based entropy estimates for ODE systems"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the bound results listed in --results and write bounds.csv.
    Bounds(RunArgs),
    /// Estimate entropy from spanning/separated cell counts.
    Empirical(RunArgs),
    /// Run the lemma verification suite and write verify.txt.
    Verify(RunArgs),
    /// Integrate the initial-set ensemble and write per-member CSVs.
    Simulate(RunArgs),
}

impl Cmd {
    fn args(&self) -> &RunArgs {
        match self {
            Cmd::Bounds(a) | Cmd::Empirical(a) | Cmd::Verify(a) | Cmd::Simulate(a) => a,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// System spec file.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for reports and CSVs (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the [sampling] seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the [horizon] t_max.
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    /// Override the [horizon] dt.
    #[arg(long)]
    dt: Option<f64>,
    /// Bound result ids for `bounds` (e.g. measure_inf,trace,metzler).
    #[arg(long, value_delimiter = ',')]
    results: Vec<String>,
    /// Override the [sampling] eps list for `empirical`.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    /// Override the [sampling] horizons list for `empirical`.
    #[arg(long, value_delimiter = ',')]
    horizons: Vec<f64>,
}

/// Parse the command line, run the chosen subcommand, and return its exit
/// code. `main` wraps this in `ExitCode::from`.
pub fn run() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap routes --help/--version through Err as well; keep its
            // exit semantics (0 for those, 2 for usage errors).
            let code = e.exit_code().clamp(0, u8::MAX as i32) as u8;
            let _ = e.print();
            return code;
        }
    };
    let args = cli.cmd.args();
    let mut spec = match load_spec(&args.spec) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_SPEC;
        }
    };
    apply_overrides(&mut spec, args);
    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return EXIT_SPEC;
    }
    match &cli.cmd {
        Cmd::Bounds(a) => cmd_bounds(&spec, a),
        Cmd::Empirical(a) => cmd_empirical(&spec, a),
        Cmd::Verify(a) => cmd_verify(&spec, a),
        Cmd::Simulate(a) => cmd_simulate(&spec, a),
    }
}

fn apply_overrides(spec: &mut ParsedSpec, args: &RunArgs) {
    if let Some(seed) = args.seed {
        spec.sampling.seed = seed;
    }
    if let Some(t_max) = args.t_max {
        spec.horizon.t_max = t_max;
    }
    if let Some(dt) = args.dt {
        spec.horizon.dt = dt;
    }
    if !args.eps.is_empty() {
        spec.sampling.eps = args.eps.clone();
    }
    if !args.horizons.is_empty() {
        spec.sampling.horizons = args.horizons.clone();
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), u8> {
    fs::write(dir.join(name), contents).map_err(|e| {
        eprintln!("error: cannot write {name}: {e}");
        EXIT_SPEC
    })
}

fn bound_exit(e: &BoundError) -> u8 {
    match e {
        BoundError::Ode(OdeError::BlowUp { .. }) | BoundError::Ode(OdeError::Eval { .. }) => {
            EXIT_BLOWUP
        }
        BoundError::Eval { .. } => EXIT_BLOWUP,
        BoundError::Ode(_) | BoundError::NotLtv { .. } => EXIT_SPEC,
    }
}

fn empirical_exit(e: &EmpiricalError) -> u8 {
    match e {
        EmpiricalError::Ode(OdeError::BlowUp { .. })
        | EmpiricalError::Ode(OdeError::Eval { .. })
        | EmpiricalError::Eval { .. } => EXIT_BLOWUP,
        EmpiricalError::Dimension { .. } => EXIT_DIMENSION,
        EmpiricalError::Ode(_)
        | EmpiricalError::ResolutionInsufficient { .. }
        | EmpiricalError::CandidateBudget { .. } => EXIT_SPEC,
    }
}

const DEFAULT_RESULTS: [&str; 5] = [
    "measure_inf",
    "trace",
    "metzler",
    "network_measure",
    "network_metzler",
];

fn compute_result(
    spec: &ParsedSpec,
    cfg: &HorizonConfig,
    id: &str,
) -> Result<Result<BoundReport, BoundError>, String> {
    let sys = &spec.system;
    let k = sys.initial_set().clone();
    let norm_of = |suffix: &str| -> Result<Norm, String> {
        suffix
            .parse::<Norm>()
            .map_err(|e| format!("in result id {id:?}: {e}"))
    };
    let report = if let Some(suffix) = id.strip_prefix("measure_t1_") {
        bounds::upper_bound_measure_t1(sys, &k, norm_of(suffix)?, cfg)
    } else if let Some(suffix) = id.strip_prefix("measure_") {
        bounds::upper_bound_measure(sys, &k, norm_of(suffix)?, cfg)
    } else if let Some(suffix) = id.strip_prefix("superset_") {
        let p = norm_of(suffix)?;
        let s = spec
            .superset
            .as_ref()
            .ok_or_else(|| format!("result {id:?} needs a [superset] section in the spec"))?;
        let t_grid = superset_time_grid(sys.t0(), cfg.t_max, cfg.dt);
        bounds::upper_bound_superset(sys, s, p, &t_grid)
    } else {
        match id {
            "trace" => bounds::lower_bound_trace(sys, &k, cfg),
            "metzler" => bounds::upper_bound_metzler_scalar(sys, &k, cfg),
            "ltv" => bounds::ltv_bounds(sys, cfg),
            "network_measure" => bounds::upper_bound_network_measure(sys, &k, cfg),
            "network_metzler" => bounds::upper_bound_network_metzler(sys, &k, cfg),
            "network_measure_t1" => bounds::upper_bound_network_measure_t1(sys, &k, cfg),
            "network_metzler_t1" => bounds::upper_bound_network_metzler_t1(sys, &k, cfg),
            other => {
                return Err(format!(
                    "unknown result id {other:?} (expected measure_<norm>, trace, metzler, ltv, \
                     network_measure, network_metzler, measure_t1_<norm>, network_measure_t1, \
                     network_metzler_t1, or superset_<norm>)"
                ))
            }
        }
    };
    Ok(report)
}

/// Evenly spaced superset evaluation times: the spec `dt` when that keeps
/// the grid at or under 2001 points, otherwise 2001 points.
fn superset_time_grid(t0: f64, t_max: f64, dt: f64) -> Vec<f64> {
    let span = (t_max - t0).max(0.0);
    let wanted = if dt > 0.0 { (span / dt).ceil() as usize + 1 } else { 2001 };
    let count = wanted.clamp(2, 2001);
    (0..count)
        .map(|i| t0 + span * i as f64 / (count - 1) as f64)
        .collect()
}

fn cmd_bounds(spec: &ParsedSpec, args: &RunArgs) -> u8 {
    let cfg = HorizonConfig::from_sections(&spec.horizon, &spec.sampling);
    let ids: Vec<String> = if args.results.is_empty() {
        DEFAULT_RESULTS.iter().map(|s| s.to_string()).collect()
    } else {
        args.results.clone()
    };
    let mut reports = Vec::with_capacity(ids.len());
    for id in &ids {
        match compute_result(spec, &cfg, id) {
            Err(msg) => {
                eprintln!("error: {msg}");
                return EXIT_SPEC;
            }
            Ok(Err(e)) => {
                eprintln!("error: {id}: {e}");
                return bound_exit(&e);
            }
            Ok(Ok(r)) => reports.push(r),
        }
    }

    let mut csv = String::from(BoundReport::csv_header());
    csv.push_str("\r\n");
    let mut text = String::new();
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push_str("\r\n");
        text.push_str(&r.text());
    }
    if let Err(code) = write_file(&args.out, "bounds.csv", &csv) {
        return code;
    }
    if let Err(code) = write_file(&args.out, "bounds.txt", &text) {
        return code;
    }
    print!("{text}");
    if reports.iter().all(BoundReport::is_converged) {
        EXIT_OK
    } else {
        eprintln!("warning: non-converged tail window; raise t_max");
        EXIT_NON_CONVERGED
    }
}

fn estimator_config(spec: &ParsedSpec) -> EstimatorConfig {
    let mut cfg = EstimatorConfig::from_sections(&spec.sampling, spec.horizon.dt);
    cfg.slack = spec.verify.slack;
    cfg
}

fn cmd_empirical(spec: &ParsedSpec, args: &RunArgs) -> u8 {
    let cfg = estimator_config(spec);
    let sys = &spec.system;
    let k = sys.initial_set().clone();
    let est = match empirical::estimate_entropy(sys, &k, sys.t0(), &cfg.eps_list, &cfg.horizons, &cfg)
    {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return empirical_exit(&e);
        }
    };
    let mut csv: Vec<u8> = Vec::new();
    if est.write_csv(&mut csv).is_err() {
        return EXIT_SPEC;
    }
    if let Err(code) = write_file(&args.out, "entropy.csv", &String::from_utf8(csv).unwrap()) {
        return code;
    }
    if let Err(code) = write_file(&args.out, "summary.txt", &est.text()) {
        return code;
    }
    print!("{}", est.text());
    EXIT_OK
}

fn cmd_verify(spec: &ParsedSpec, args: &RunArgs) -> u8 {
    let cfg = estimator_config(spec);
    let sys = &spec.system;
    let k = sys.initial_set().clone();
    let t0 = sys.t0();
    let seed = spec.sampling.seed;
    let t_span = (spec.horizon.t_max - t0).min(2.0).max(0.5);

    let mut reports: Vec<VerifyReport> = vec![
        empirical::verify_measure_sandwich(200, 4, seed),
        empirical::verify_metzler_monotonicity(200, 4, seed),
        empirical::verify_block_domination(100, seed),
    ];
    let dynamic: Vec<Result<VerifyReport, EmpiricalError>> = vec![
        empirical::verify_separation_bounds(sys, &k, t0, t_span, spec.verify.pairs, &cfg),
        empirical::verify_liouville(sys, &k, t_span, &cfg),
    ];
    for r in dynamic {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => {
                eprintln!("error: {e}");
                return empirical_exit(&e);
            }
        }
    }
    if sys.dim() <= 3 {
        match empirical::verify_volume_bound(sys, &k, t0, t_span, spec.verify.mc_samples, &cfg) {
            Ok(rep) => reports.push(rep),
            Err(e) => {
                eprintln!("error: {e}");
                return empirical_exit(&e);
            }
        }
    }
    if sys.dim() <= 2 {
        match empirical::verify_initial_time_invariance(sys, &k, t0, t0 + 1.0, &cfg) {
            Ok(rep) => reports.push(rep),
            Err(e) => {
                eprintln!("error: {e}");
                return empirical_exit(&e);
            }
        }
    }

    let mut text = String::new();
    for r in &reports {
        text.push_str(&r.text());
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed == 0 {
        text.push_str("all checks passed\n");
    } else {
        text.push_str(&format!("{failed} check(s) failed\n"));
    }
    if let Err(code) = write_file(&args.out, "verify.txt", &text) {
        return code;
    }
    print!("{text}");
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

fn cmd_simulate(spec: &ParsedSpec, args: &RunArgs) -> u8 {
    let sys = &spec.system;
    let k = sys.initial_set().clone();
    let ens = match sample_ensemble(
        sys,
        &k,
        spec.sampling.ensemble.max(2),
        spec.horizon.t_max,
        spec.horizon.dt,
        spec.sampling.seed,
    ) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return match e {
                OdeError::BlowUp { .. } | OdeError::Eval { .. } => EXIT_BLOWUP,
                _ => EXIT_SPEC,
            };
        }
    };
    for (i, member) in ens.members.iter().enumerate() {
        let name = format!("traj_{i:03}.csv");
        let mut buf: Vec<u8> = Vec::new();
        if member.write_csv(&mut buf).is_err() {
            return EXIT_SPEC;
        }
        if let Err(code) = write_file(&args.out, &name, &String::from_utf8(buf).unwrap()) {
            return code;
        }
    }
    println!(
        "wrote {} trajectories ({} samples each) to {}",
        ens.members.len(),
        ens.times.len(),
        args.out.display()
    );
    let _ = std::io::stdout().flush();
    EXIT_OK
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn superset_grid_respects_cap_and_endpoints() {
        let g = superset_time_grid(0.0, 10.0, 1e-3);
        assert_eq!(g.len(), 2001);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 10.0);
        let g = superset_time_grid(0.0, 1.0, 0.25);
        assert_eq!(g.len(), 5);
        assert!((g[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn unknown_result_id_is_reported() {
        let spec = crate::specfile::parse_spec(
            "[system]\nn = 1\nt0 = 0\nf1 = -x1\n[initial_set]\nlower = -1\nupper = 1\n",
        )
        .unwrap();
        let cfg = HorizonConfig::from_sections(&spec.horizon, &spec.sampling);
        let err = compute_result(&spec, &cfg, "nonsense").unwrap_err();
        assert!(err.contains("unknown result id"));
        let err = compute_result(&spec, &cfg, "superset_inf").unwrap_err();
        assert!(err.contains("[superset]"));
    }
}
