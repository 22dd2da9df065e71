//! Plain-text system description files: line-oriented `key = value` entries
//! grouped under bracketed section headers, `#` comment lines, blank lines
//! ignored. Example:
//!
//! ```text
//! [system]
//! n = 2
//! t0 = 0
//! f1 = sin(t)*x1 + cos(t)*x2
//! f2 = sin(t)*x1 + cos(t)*x2
//!
//! [initial_set]
//! lower = -1, -1
//! upper = 1, 1
//! ```
//!
//! Optional sections: `[partition]` (blocks, local_norms, network_norm),
//! `[horizon]` (t_max, dt, tail_fraction, t1_list), `[sampling]` (ensemble,
//! convex_combos, seed, cells, eps, horizons), `[superset]` (lower, upper),
//! `[verify]` (slack, pairs, mc_samples). Every key has a default except the
//! `[system]` and `[initial_set]` contents.

use crate::system::{BoxSet, Norm, Partition, System};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("{message} (line {line})")]
pub struct SpecError {
    pub message: String,
    pub line: usize,
}

impl SpecError {
    fn new(message: impl Into<String>, line: usize) -> SpecError {
        SpecError {
            message: message.into(),
            line,
        }
    }
}

/// Horizon and tail-window settings.
#[derive(Debug, Clone)]
pub struct HorizonSection {
    pub t_max: f64,
    pub dt: f64,
    pub tail_fraction: f64,
    /// Candidate reinitialization times; `None` selects the default grid.
    pub t1_list: Option<Vec<f64>>,
}

impl Default for HorizonSection {
    fn default() -> Self {
        HorizonSection {
            t_max: 10.0,
            dt: 1e-3,
            tail_fraction: 0.25,
            t1_list: None,
        }
    }
}

/// Ensemble and estimator sampling settings.
#[derive(Debug, Clone)]
pub struct SamplingSection {
    pub ensemble: usize,
    pub convex_combos: usize,
    pub seed: u64,
    /// Cells per axis for the empirical estimator's initial-set grid.
    pub cells: usize,
    /// Radii for the empirical estimator (decreasing).
    pub eps: Vec<f64>,
    /// Horizons for the empirical estimator (increasing).
    pub horizons: Vec<f64>,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            ensemble: 16,
            convex_combos: 32,
            seed: 1,
            cells: 32,
            eps: vec![1e-2, 3e-3, 1e-3],
            horizons: vec![4.0, 6.0, 8.0],
        }
    }
}

/// Tolerances and sample counts for the verification suite.
#[derive(Debug, Clone)]
pub struct VerifySection {
    pub slack: f64,
    pub pairs: usize,
    pub mc_samples: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            slack: 1e-6,
            pairs: 100,
            mc_samples: 4000,
        }
    }
}

/// Everything a spec file describes.
#[derive(Debug, Clone)]
pub struct ParsedSpec {
    pub system: System,
    pub horizon: HorizonSection,
    pub sampling: SamplingSection,
    /// Optional static superset for the no-integration bound variant.
    pub superset: Option<BoxSet>,
    pub verify: VerifySection,
}

/// Raw `key = value` entry with its source line.
struct Entry {
    value: String,
    line: usize,
}

type Section = BTreeMap<String, Entry>;

pub fn parse_spec(text: &str) -> Result<ParsedSpec, SpecError> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| SpecError::new("unterminated section header", line_no))?
                .trim()
                .to_string();
            const KNOWN: [&str; 7] = [
                "system",
                "initial_set",
                "partition",
                "horizon",
                "sampling",
                "superset",
                "verify",
            ];
            if !KNOWN.contains(&name.as_str()) {
                return Err(SpecError::new(format!("unknown section [{name}]"), line_no));
            }
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(SpecError::new(
                format!("expected `key = value`, got {line:?}"),
                line_no,
            ));
        };
        let section = current
            .as_ref()
            .ok_or_else(|| SpecError::new("entry before any [section] header", line_no))?;
        let key = key.trim().to_string();
        let prev = sections.get_mut(section).unwrap().insert(
            key.clone(),
            Entry {
                value: value.trim().to_string(),
                line: line_no,
            },
        );
        if prev.is_some() {
            return Err(SpecError::new(
                format!("duplicate key {key:?} in [{section}]"),
                line_no,
            ));
        }
    }

    let system = build_system(&mut sections)?;
    let horizon = build_horizon(&mut sections)?;
    let sampling = build_sampling(&mut sections)?;
    let superset = build_superset(&mut sections, system.dim())?;
    let verify = build_verify(&mut sections)?;
    Ok(ParsedSpec {
        system,
        horizon,
        sampling,
        superset,
        verify,
    })
}

/// Parse a spec from a file on disk.
pub fn load_spec(path: &std::path::Path) -> Result<ParsedSpec, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_spec(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn take(section: &mut Section, key: &str) -> Option<Entry> {
    section.remove(key)
}

fn require(section: &mut Section, sec_name: &str, key: &str) -> Result<Entry, SpecError> {
    take(section, key)
        .ok_or_else(|| SpecError::new(format!("[{sec_name}] is missing key {key:?}"), 0))
}

fn parse_f64(e: &Entry, key: &str) -> Result<f64, SpecError> {
    e.value
        .parse::<f64>()
        .map_err(|_| SpecError::new(format!("{key} must be a number, got {:?}", e.value), e.line))
}

fn parse_usize(e: &Entry, key: &str) -> Result<usize, SpecError> {
    e.value
        .parse::<usize>()
        .map_err(|_| SpecError::new(format!("{key} must be a nonnegative integer, got {:?}", e.value), e.line))
}

fn parse_f64_list(e: &Entry, key: &str) -> Result<Vec<f64>, SpecError> {
    e.value
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| {
                SpecError::new(format!("{key} must be comma-separated numbers, got {:?}", e.value), e.line)
            })
        })
        .collect()
}

fn no_leftovers(section: &Section, name: &str) -> Result<(), SpecError> {
    if let Some((key, e)) = section.iter().next() {
        return Err(SpecError::new(
            format!("unknown key {key:?} in [{name}]"),
            e.line,
        ));
    }
    Ok(())
}

fn build_system(sections: &mut BTreeMap<String, Section>) -> Result<System, SpecError> {
    let mut sys_sec = sections
        .remove("system")
        .ok_or_else(|| SpecError::new("missing [system] section", 0))?;
    let n_entry = require(&mut sys_sec, "system", "n")?;
    let n = parse_usize(&n_entry, "n")?;
    if n == 0 {
        return Err(SpecError::new("n must be at least 1", n_entry.line));
    }
    let t0_entry = require(&mut sys_sec, "system", "t0")?;
    let t0 = parse_f64(&t0_entry, "t0")?;
    let mut fields = Vec::with_capacity(n);
    let mut f_lines = Vec::with_capacity(n);
    for i in 1..=n {
        let key = format!("f{i}");
        let e = require(&mut sys_sec, "system", &key)?;
        f_lines.push(e.line);
        fields.push(e.value);
    }
    let breakpoints = match take(&mut sys_sec, "breakpoints") {
        Some(e) => parse_f64_list(&e, "breakpoints")?,
        None => Vec::new(),
    };
    no_leftovers(&sys_sec, "system")?;

    let mut init_sec = sections
        .remove("initial_set")
        .ok_or_else(|| SpecError::new("missing [initial_set] section", 0))?;
    let lower_entry = require(&mut init_sec, "initial_set", "lower")?;
    let lower = parse_f64_list(&lower_entry, "lower")?;
    let upper_entry = require(&mut init_sec, "initial_set", "upper")?;
    let upper = parse_f64_list(&upper_entry, "upper")?;
    no_leftovers(&init_sec, "initial_set")?;
    let init_line = lower_entry.line;
    let k = BoxSet::new(lower, upper)
        .map_err(|e| SpecError::new(format!("bad initial set: {e}"), init_line))?;

    let partition = match sections.remove("partition") {
        None => None,
        Some(mut part_sec) => {
            let blocks_entry = require(&mut part_sec, "partition", "blocks")?;
            let blocks: Vec<usize> = blocks_entry
                .value
                .split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| {
                        SpecError::new(
                            format!("blocks must be comma-separated integers, got {:?}", blocks_entry.value),
                            blocks_entry.line,
                        )
                    })
                })
                .collect::<Result<_, _>>()?;
            let norms_entry = require(&mut part_sec, "partition", "local_norms")?;
            let local_norms: Vec<Norm> = norms_entry
                .value
                .split(',')
                .map(|s| {
                    s.parse::<Norm>()
                        .map_err(|e| SpecError::new(e, norms_entry.line))
                })
                .collect::<Result<_, _>>()?;
            let net_entry = require(&mut part_sec, "partition", "network_norm")?;
            let network_norm: Norm = net_entry
                .value
                .parse()
                .map_err(|e: String| SpecError::new(e, net_entry.line))?;
            no_leftovers(&part_sec, "partition")?;
            Some(
                Partition::new(blocks, local_norms, network_norm)
                    .map_err(|e| SpecError::new(e.to_string(), blocks_entry.line))?,
            )
        }
    };

    let field_refs: Vec<&str> = fields.iter().map(String::as_str).collect();
    System::build(&field_refs, &breakpoints, partition, k, t0).map_err(|e| {
        let line = match &e {
            crate::system::BuildError::Parse { index, .. } => f_lines[*index],
            _ => init_line,
        };
        SpecError::new(e.to_string(), line)
    })
}

fn build_horizon(sections: &mut BTreeMap<String, Section>) -> Result<HorizonSection, SpecError> {
    let mut out = HorizonSection::default();
    let Some(mut sec) = sections.remove("horizon") else {
        return Ok(out);
    };
    if let Some(e) = take(&mut sec, "t_max") {
        out.t_max = parse_f64(&e, "t_max")?;
    }
    if let Some(e) = take(&mut sec, "dt") {
        out.dt = parse_f64(&e, "dt")?;
        if !(out.dt > 0.0) {
            return Err(SpecError::new("dt must be positive", e.line));
        }
    }
    if let Some(e) = take(&mut sec, "tail_fraction") {
        out.tail_fraction = parse_f64(&e, "tail_fraction")?;
        if !(out.tail_fraction > 0.0 && out.tail_fraction < 1.0) {
            return Err(SpecError::new("tail_fraction must lie in (0, 1)", e.line));
        }
    }
    if let Some(e) = take(&mut sec, "t1_list") {
        out.t1_list = Some(parse_f64_list(&e, "t1_list")?);
    }
    no_leftovers(&sec, "horizon")?;
    Ok(out)
}

fn build_sampling(sections: &mut BTreeMap<String, Section>) -> Result<SamplingSection, SpecError> {
    let mut out = SamplingSection::default();
    let Some(mut sec) = sections.remove("sampling") else {
        return Ok(out);
    };
    if let Some(e) = take(&mut sec, "ensemble") {
        out.ensemble = parse_usize(&e, "ensemble")?;
        if out.ensemble < 2 {
            return Err(SpecError::new("ensemble must be at least 2", e.line));
        }
    }
    if let Some(e) = take(&mut sec, "convex_combos") {
        out.convex_combos = parse_usize(&e, "convex_combos")?;
    }
    if let Some(e) = take(&mut sec, "seed") {
        out.seed = e.value.parse::<u64>().map_err(|_| {
            SpecError::new(format!("seed must be an unsigned integer, got {:?}", e.value), e.line)
        })?;
    }
    if let Some(e) = take(&mut sec, "cells") {
        out.cells = parse_usize(&e, "cells")?;
        if out.cells == 0 {
            return Err(SpecError::new("cells must be at least 1", e.line));
        }
    }
    if let Some(e) = take(&mut sec, "eps") {
        out.eps = parse_f64_list(&e, "eps")?;
        if out.eps.iter().any(|v| *v <= 0.0) {
            return Err(SpecError::new("eps values must be positive", e.line));
        }
    }
    if let Some(e) = take(&mut sec, "horizons") {
        out.horizons = parse_f64_list(&e, "horizons")?;
    }
    no_leftovers(&sec, "sampling")?;
    Ok(out)
}

fn build_superset(
    sections: &mut BTreeMap<String, Section>,
    n: usize,
) -> Result<Option<BoxSet>, SpecError> {
    let Some(mut sec) = sections.remove("superset") else {
        return Ok(None);
    };
    let lower_entry = require(&mut sec, "superset", "lower")?;
    let lower = parse_f64_list(&lower_entry, "lower")?;
    let upper_entry = require(&mut sec, "superset", "upper")?;
    let upper = parse_f64_list(&upper_entry, "upper")?;
    no_leftovers(&sec, "superset")?;
    if lower.len() != n {
        return Err(SpecError::new(
            format!("superset has dimension {} but the system has {n} states", lower.len()),
            lower_entry.line,
        ));
    }
    let b = BoxSet::new(lower, upper)
        .map_err(|e| SpecError::new(format!("bad superset: {e}"), upper_entry.line))?;
    Ok(Some(b))
}

fn build_verify(sections: &mut BTreeMap<String, Section>) -> Result<VerifySection, SpecError> {
    let mut out = VerifySection::default();
    let Some(mut sec) = sections.remove("verify") else {
        return Ok(out);
    };
    if let Some(e) = take(&mut sec, "slack") {
        out.slack = parse_f64(&e, "slack")?;
    }
    if let Some(e) = take(&mut sec, "pairs") {
        out.pairs = parse_usize(&e, "pairs")?;
    }
    if let Some(e) = take(&mut sec, "mc_samples") {
        out.mc_samples = parse_usize(&e, "mc_samples")?;
    }
    no_leftovers(&sec, "verify")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[system]
n = 2
t0 = 0
f1 = x2
f2 = -x1

[initial_set]
lower = -1, -1
upper = 1, 1
";

    #[test]
    fn minimal_spec_with_defaults() {
        let spec = parse_spec(MINIMAL).unwrap();
        assert_eq!(spec.system.dim(), 2);
        assert_eq!(spec.system.t0(), 0.0);
        assert_eq!(spec.horizon.t_max, 10.0);
        assert_eq!(spec.sampling.ensemble, 16);
        assert_eq!(spec.sampling.seed, 1);
        assert!(spec.superset.is_none());
        assert_eq!(spec.system.partition().block_count(), 1);
    }

    #[test]
    fn full_spec_round_trip() {
        let text = "\
# comment line
[system]
n = 2
t0 = -2
f1 = pw(t < 0, x1, 2*x1)
f2 = x2
breakpoints = 1.5

[initial_set]
lower = -3, -1
upper = -2, 1

[partition]
blocks = 1, 1
local_norms = inf, inf
network_norm = inf

[horizon]
t_max = 8
dt = 1e-2
tail_fraction = 0.5
t1_list = -2, 0, 1

[sampling]
ensemble = 8
convex_combos = 4
seed = 99
cells = 16
eps = 1e-2, 3e-3
horizons = 4, 6

[superset]
lower = -5, -5
upper = 5, 5

[verify]
slack = 1e-7
pairs = 10
mc_samples = 100
";
        let spec = parse_spec(text).unwrap();
        assert_eq!(spec.system.breakpoints(), &[0.0, 1.5]); // pw threshold merged
        assert_eq!(spec.system.partition().block_count(), 2);
        assert_eq!(spec.horizon.t1_list.as_deref(), Some(&[-2.0, 0.0, 1.0][..]));
        assert_eq!(spec.sampling.eps, vec![1e-2, 3e-3]);
        assert_eq!(spec.superset.unwrap().upper(), &[5.0, 5.0]);
        assert_eq!(spec.verify.pairs, 10);
    }

    #[test]
    fn error_carries_line_number() {
        let text = MINIMAL.replace("f2 = -x1", "f2 = -x1 + ");
        let err = parse_spec(&text).unwrap_err();
        assert_eq!(err.line, 5);
        assert!(err.to_string().contains("line 5"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{MINIMAL}\n[horizon]\ntmax = 3\n");
        let err = parse_spec(&text).unwrap_err();
        assert!(err.to_string().contains("tmax"), "{err}");
    }

    #[test]
    fn unknown_section_rejected() {
        let text = format!("{MINIMAL}\n[horizons]\nt_max = 3\n");
        assert!(parse_spec(&text).is_err());
    }

    #[test]
    fn missing_component_rejected() {
        let text = "[system]\nn = 2\nt0 = 0\nf1 = x1\n\n[initial_set]\nlower = 0, 0\nupper = 1, 1\n";
        let err = parse_spec(text).unwrap_err();
        assert!(err.to_string().contains("f2"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = format!("{MINIMAL}upper = 2, 2\n");
        let err = parse_spec(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn dimension_mismatch_in_box() {
        let text = MINIMAL.replace("lower = -1, -1", "lower = -1");
        assert!(parse_spec(&text).is_err());
    }
}
