//! Convergence experiments: sweeps over the number of time steps, fitted
//! convergence rates, CSV output, the runtime-versus-dimension report, and
//! the consistency checks run before a benchmark is trusted.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use crate::error::{invalid, Error, Result};
use crate::multistep::{measure_errors, solve, ErrorNorm, SolverConfig};
use crate::problems::{
    feynman_kac_residual, problem_by_name, sampled_coefficient_bounds, terminal_consistency, z_identity_residual,
    Convention, DomainSpec, FbsdeProblem,
};
use crate::sparse_quad::build_gh_rule;

/// Header of the convergence CSV.
pub const CSV_HEADER: &str = "problem,k,p,pq,N,err_y,err_z,runtime_s,cr_y,cr_z";

/// Sparse levels `(p, pq)` used for a problem and step count in the
/// reference experiments.
pub fn default_levels(problem: &str, k: usize) -> Result<(u32, u32)> {
    let prob = problem_by_name(problem)?;
    let q = prob.state_dim() as u32;
    let family = problem.split(':').next().unwrap_or(problem).trim();
    Ok(match family {
        "example1" => (7, 3),
        "example3" => match q {
            4 => (5, if k >= 3 { 6 } else { 5 }),
            5 => (6, if k >= 2 { 7 } else { 6 }),
            _ => (q + 1, q + 1),
        },
        _ => (q + 1, q + 1),
    })
}

/// One convergence sweep.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub problem: String,
    pub k: usize,
    pub steps: Vec<usize>,
    pub p: u32,
    pub pq: u32,
    pub tol: f64,
    pub horizon: f64,
    pub norm: ErrorNorm,
    pub threads: Option<usize>,
    /// Record wall-clock time; when false the runtime column is zero so
    /// that repeated runs give identical output.
    pub record_runtime: bool,
}

impl ExperimentSpec {
    /// Reference levels, `T = 1`, tolerance `1e-10`, max norm.
    pub fn new(problem: impl Into<String>, k: usize, steps: Vec<usize>) -> Result<Self> {
        let problem = problem.into();
        let (p, pq) = default_levels(&problem, k)?;
        Ok(Self {
            problem,
            k,
            steps,
            p,
            pq,
            tol: 1e-10,
            horizon: 1.0,
            norm: ErrorNorm::Max,
            threads: None,
            record_runtime: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(invalid("the list of step counts is empty"));
        }
        if self.steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!("step counts must be strictly increasing: {:?}", self.steps)));
        }
        if let Some(&n) = self.steps.iter().find(|&&n| n < self.k) {
            return Err(invalid(format!("N = {n} is smaller than k = {}", self.k)));
        }
        Ok(())
    }

    fn config(&self, steps: usize) -> SolverConfig {
        let mut cfg = SolverConfig::new(self.k, steps, self.p, self.pq);
        cfg.tol = self.tol;
        cfg.horizon = self.horizon;
        cfg.threads = self.threads;
        cfg
    }
}

/// Result for one `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub err_y: f64,
    pub err_z: f64,
    pub runtime_s: f64,
    pub max_picard: usize,
    pub mean_picard: f64,
    pub out_of_box: usize,
    /// Set when the solver diverged for this `N`.
    pub failure: Option<String>,
}

impl ConvergenceRow {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Rows of a sweep with fitted and pairwise rates.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub problem: String,
    pub k: usize,
    pub p: u32,
    pub pq: u32,
    pub rows: Vec<ConvergenceRow>,
    pub cr_y: f64,
    pub cr_z: f64,
    /// `log2(e_i / e_{i+1}) / log2(N_{i+1} / N_i)` between successive rows.
    pub pairwise_y: Vec<f64>,
    pub pairwise_z: Vec<f64>,
    /// Fewer than three successful rows entered the fit.
    pub cr_flagged: bool,
}

/// Negated least-squares slope of `log(err)` against `log(N)`; NaN with
/// fewer than two usable (positive, finite) errors.
pub fn fit_rate(steps: &[usize], errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .zip(errors)
        .filter(|(_, e)| e.is_finite() && **e > 0.0)
        .map(|(&n, &e)| ((n as f64).ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let count = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / count;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / count;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return f64::NAN;
    }
    -sxy / sxx
}

/// Rates between successive entries.
pub fn pairwise_rates(steps: &[usize], errors: &[f64]) -> Vec<f64> {
    steps
        .windows(2)
        .zip(errors.windows(2))
        .map(|(n, e)| (e[0] / e[1]).log2() / (n[1] as f64 / n[0] as f64).log2())
        .collect()
}

/// Run the sweep. The timed region is the backward sweep only.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let prob = problem_by_name(&spec.problem)?;
    run_experiment_with(&prob, spec)
}

/// [`run_experiment`] for a problem that is not addressable by name.
pub fn run_experiment_with(prob: &dyn FbsdeProblem, spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.steps.len());
    for &steps in &spec.steps {
        let cfg = spec.config(steps);
        let start = Instant::now();
        let outcome = solve(prob, &cfg);
        let elapsed = start.elapsed().as_secs_f64();
        let runtime_s = if spec.record_runtime { elapsed } else { 0.0 };
        match outcome {
            Ok(sol) => {
                let report = measure_errors(&sol, prob, &spec.norm)?;
                let max_picard = sol.stats.iter().map(|s| s.max_picard).max().unwrap_or(0);
                let mean_picard = sol.stats.iter().map(|s| s.mean_picard).sum::<f64>() / sol.stats.len().max(1) as f64;
                let out_of_box = sol.stats.iter().map(|s| s.out_of_box).sum();
                log::info!(
                    "{} k={} N={steps}: E_Y = {:.3e}, E_Z = {:.3e}, {elapsed:.3}s",
                    spec.problem,
                    spec.k,
                    report.err_y,
                    report.err_z
                );
                rows.push(ConvergenceRow {
                    steps,
                    err_y: report.err_y,
                    err_z: report.err_z,
                    runtime_s,
                    max_picard,
                    mean_picard,
                    out_of_box,
                    failure: None,
                });
            }
            Err(e @ Error::Divergence { .. }) => {
                log::warn!("{} k={} N={steps}: {e}", spec.problem, spec.k);
                rows.push(ConvergenceRow {
                    steps,
                    err_y: f64::NAN,
                    err_z: f64::NAN,
                    runtime_s,
                    max_picard: cfg.max_picard,
                    mean_picard: f64::NAN,
                    out_of_box: 0,
                    failure: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(summarize(spec, rows))
}

fn summarize(spec: &ExperimentSpec, rows: Vec<ConvergenceRow>) -> ExperimentResult {
    let ok: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.succeeded()).collect();
    let steps: Vec<usize> = ok.iter().map(|r| r.steps).collect();
    let ey: Vec<f64> = ok.iter().map(|r| r.err_y).collect();
    let ez: Vec<f64> = ok.iter().map(|r| r.err_z).collect();
    let cr_flagged = ok.len() < 3;
    if cr_flagged {
        log::warn!("{}: convergence rate fitted from {} rows", spec.problem, ok.len());
    }
    ExperimentResult {
        problem: spec.problem.clone(),
        k: spec.k,
        p: spec.p,
        pq: spec.pq,
        cr_y: fit_rate(&steps, &ey),
        cr_z: fit_rate(&steps, &ez),
        pairwise_y: pairwise_rates(&steps, &ey),
        pairwise_z: pairwise_rates(&steps, &ez),
        cr_flagged,
        rows,
    }
}

fn sci(v: f64) -> String {
    format!("{v:.5e}")
}

/// Write the convergence CSV.
pub fn write_csv<W: Write>(result: &ExperimentResult, mut w: W) -> Result<()> {
    if result.rows.is_empty() {
        return Err(invalid("refusing to write a CSV without rows"));
    }
    if result.problem.contains([',', '\n']) {
        return Err(invalid(format!("problem id {:?} cannot be written as a CSV field", result.problem)));
    }
    let mut text = String::new();
    text.push_str(CSV_HEADER);
    text.push('\n');
    for r in &result.rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{}",
            result.problem,
            result.k,
            result.p,
            result.pq,
            r.steps,
            sci(r.err_y),
            sci(r.err_z),
            sci(r.runtime_s),
            sci(result.cr_y),
            sci(result.cr_z)
        );
    }
    w.write_all(text.as_bytes())
        .map_err(|e| Error::Io { path: "<writer>".into(), source: e })
}

/// Write the convergence CSV to `path`.
pub fn emit_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    if result.rows.is_empty() {
        return Err(invalid("refusing to write a CSV without rows"));
    }
    let mut buf = Vec::new();
    write_csv(result, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// One data line of a convergence CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub problem: String,
    pub k: usize,
    pub p: u32,
    pub pq: u32,
    pub steps: usize,
    pub err_y: f64,
    pub err_z: f64,
    pub runtime_s: f64,
    pub cr_y: f64,
    pub cr_z: f64,
}

/// Parse a convergence CSV written by [`write_csv`].
pub fn parse_csv<R: BufRead>(r: R) -> Result<Vec<CsvRow>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))?
        .map_err(|e| Error::Parse(e.to_string()))?;
    if header.trim() != CSV_HEADER {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::Parse(format!("line {}: expected 10 fields, got {}", lineno + 2, f.len())));
        }
        let bad = |what: &str| Error::Parse(format!("line {}: bad {what}", lineno + 2));
        rows.push(CsvRow {
            problem: f[0].to_string(),
            k: f[1].parse().map_err(|_| bad("k"))?,
            p: f[2].parse().map_err(|_| bad("p"))?,
            pq: f[3].parse().map_err(|_| bad("pq"))?,
            steps: f[4].parse().map_err(|_| bad("N"))?,
            err_y: f[5].parse().map_err(|_| bad("err_y"))?,
            err_z: f[6].parse().map_err(|_| bad("err_z"))?,
            runtime_s: f[7].parse().map_err(|_| bad("runtime_s"))?,
            cr_y: f[8].parse().map_err(|_| bad("cr_y"))?,
            cr_z: f[9].parse().map_err(|_| bad("cr_z"))?,
        });
    }
    Ok(rows)
}

/// Runtime at one dimension of the scaling study.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub q: usize,
    pub p: u32,
    pub pq: u32,
    pub steps: usize,
    pub grid_points: usize,
    pub quad_points: usize,
    /// Points of the full tensor grid with the same finest 1D level.
    pub tensor_points: f64,
    pub runtime_s: f64,
}

pub const SCALING_HEADER: &str = "q,p,pq,N,grid_points,quad_points,tensor_points,runtime_s";

/// Time one solve per dimension of `family` (`example2` or `example3`) at
/// fixed `N` with the reference levels.
pub fn scaling_report(family: &str, qs: &[usize], steps: usize, k: usize) -> Result<Vec<ScalingRow>> {
    if qs.is_empty() {
        return Err(invalid("no dimensions given"));
    }
    let mut out = Vec::with_capacity(qs.len());
    for &q in qs {
        let name = format!("{family}:q={q}");
        let prob = problem_by_name(&name)?;
        let (p, pq) = default_levels(&name, k)?;
        let cfg = SolverConfig::new(k, steps, p, pq);
        let start = Instant::now();
        let sol = solve(&prob, &cfg)?;
        let runtime_s = start.elapsed().as_secs_f64();
        let finest = (1u64 << (p as usize - q + 1)) as f64 + 1.0;
        out.push(ScalingRow {
            q,
            p,
            pq,
            steps,
            grid_points: sol.initial().y.index().len(),
            quad_points: build_gh_rule(prob.noise_dim(), pq)?.len(),
            tensor_points: finest.powi(q as i32),
            runtime_s,
        });
    }
    Ok(out)
}

pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], mut w: W) -> Result<()> {
    if rows.is_empty() {
        return Err(invalid("refusing to write a CSV without rows"));
    }
    let mut text = String::from(SCALING_HEADER);
    text.push('\n');
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            r.q,
            r.p,
            r.pq,
            r.steps,
            r.grid_points,
            r.quad_points,
            sci(r.tensor_points),
            sci(r.runtime_s)
        );
    }
    w.write_all(text.as_bytes())
        .map_err(|e| Error::Io { path: "<writer>".into(), source: e })
}

/// Outcome of the checks that gate a benchmark problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub problem: String,
    /// Feynman-Kac residual with the 1/2 on the second-order term.
    pub residual_half: f64,
    /// Feynman-Kac residual without it.
    pub residual_as_printed: f64,
    pub terminal: f64,
    pub z_identity: f64,
    /// Declared and observed `(c_b, c_sigma)` for propagated domains.
    pub bounds: Option<((f64, f64), (f64, f64))>,
}

pub const RESIDUAL_TOL: f64 = 1e-6;
pub const TERMINAL_TOL: f64 = 1e-12;
pub const Z_IDENTITY_TOL: f64 = 1e-6;

impl ValidationReport {
    pub fn bounds_hold(&self) -> bool {
        match self.bounds {
            None => true,
            Some(((cb, cs), (ob, os))) => ob <= cb * (1.0 + 1e-12) && os <= cs * (1.0 + 1e-12),
        }
    }

    pub fn passed(&self) -> bool {
        self.residual_half <= RESIDUAL_TOL
            && self.terminal <= TERMINAL_TOL
            && self.z_identity <= Z_IDENTITY_TOL
            && self.bounds_hold()
    }
}

/// Residual, terminal, `Z` and coefficient-bound checks.
pub fn validate_problem(
    prob: &dyn FbsdeProblem,
    samples: usize,
    bound_samples: usize,
    seed: u64,
    horizon: f64,
) -> Result<ValidationReport> {
    let residual_half = feynman_kac_residual(prob, samples, seed, horizon, Convention::Half)?;
    let residual_as_printed = feynman_kac_residual(prob, samples, seed, horizon, Convention::AsPrinted)?;
    let terminal = terminal_consistency(prob, samples, seed.wrapping_add(1), horizon)?;
    let z_identity = z_identity_residual(prob, samples, seed.wrapping_add(2), horizon)?;
    let bounds = match prob.domain(horizon) {
        DomainSpec::Bounded { c_b, c_sigma, .. } => {
            let observed = sampled_coefficient_bounds(prob, bound_samples, seed.wrapping_add(3), horizon, 5.0)?;
            Some(((c_b, c_sigma), observed))
        }
        _ => None,
    };
    Ok(ValidationReport {
        problem: prob.name().to_string(),
        residual_half,
        residual_as_printed,
        terminal,
        z_identity,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(errs: &[(usize, f64, f64)]) -> ExperimentResult {
        let spec = ExperimentSpec::new("example2:q=3", 2, errs.iter().map(|e| e.0).collect()).unwrap();
        let rows = errs
            .iter()
            .map(|&(n, ey, ez)| ConvergenceRow {
                steps: n,
                err_y: ey,
                err_z: ez,
                runtime_s: 0.5,
                max_picard: 1,
                mean_picard: 1.0,
                out_of_box: 0,
                failure: None,
            })
            .collect();
        summarize(&spec, rows)
    }

    #[test]
    fn geometric_sequence_rate() {
        let r = fit_rate(&[8, 16, 32], &[4e-2, 1e-2, 2.5e-3]);
        assert!((r - 2.0).abs() < 1e-12);
        let p = pairwise_rates(&[8, 16, 32], &[4e-2, 1e-2, 2.5e-3]);
        assert!(p.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn rate_is_scale_invariant() {
        let n = [8, 16, 32, 64];
        let e = [3.1e-2, 1.2e-2, 3.3e-3, 9.0e-4];
        let scaled: Vec<f64> = e.iter().map(|v| v * 37.0).collect();
        assert!((fit_rate(&n, &e) - fit_rate(&n, &scaled)).abs() < 1e-12);
        assert!(fit_rate(&[8], &[1e-2]).is_nan());
    }

    #[test]
    fn csv_single_row() {
        let res = synthetic(&[(8, 1e-2, 2e-2)]);
        assert!(res.cr_flagged);
        let mut buf = Vec::new();
        write_csv(&res, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "example2:q=3,2,4,4,8,1.00000e-2,2.00000e-2,5.00000e-1,NaN,NaN");
    }

    #[test]
    fn csv_round_trip() {
        let res = synthetic(&[(8, 4.123456e-2, 3.2e-2), (16, 1.1e-2, 8.0e-3), (32, 2.7e-3, 2.1e-3)]);
        let mut buf = Vec::new();
        write_csv(&res, &mut buf).unwrap();
        let rows = parse_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].err_y, 4.12346e-2);
        assert_eq!(rows[2].steps, 32);
        let mut again = res.clone();
        for (r, parsed) in again.rows.iter_mut().zip(&rows) {
            r.err_y = parsed.err_y;
            r.err_z = parsed.err_z;
            r.runtime_s = parsed.runtime_s;
        }
        again.cr_y = rows[0].cr_y;
        again.cr_z = rows[0].cr_z;
        let mut buf2 = Vec::new();
        write_csv(&again, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
        assert!(parse_csv("nope\n".as_bytes()).is_err());
    }

    #[test]
    fn empty_rows_refused() {
        let mut res = synthetic(&[(8, 1e-2, 2e-2)]);
        res.rows.clear();
        assert!(write_csv(&res, Vec::new()).is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_csv(&res, &dir.path().join("x.csv")).is_err());
    }

    #[test]
    fn unwritable_path_reports_path() {
        let res = synthetic(&[(8, 1e-2, 2e-2)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("out.csv");
        match emit_csv(&res, &path) {
            Err(Error::Io { path: p, .. }) => assert_eq!(p, path),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spec_validation() {
        assert!(ExperimentSpec::new("example2:q=3", 2, vec![]).unwrap().validate().is_err());
        assert!(ExperimentSpec::new("example2:q=3", 2, vec![16, 8]).unwrap().validate().is_err());
        assert!(ExperimentSpec::new("example2:q=3", 3, vec![2, 8]).unwrap().validate().is_err());
        assert!(ExperimentSpec::new("example2:q=3", 3, vec![8, 16]).unwrap().validate().is_ok());
    }

    #[test]
    fn reference_levels() {
        assert_eq!(default_levels("example1", 3).unwrap(), (7, 3));
        assert_eq!(default_levels("example2:q=5", 1).unwrap(), (6, 6));
        assert_eq!(default_levels("example3:q=2", 3).unwrap(), (3, 3));
        assert_eq!(default_levels("example3:q=4", 2).unwrap(), (5, 5));
        assert_eq!(default_levels("example3:q=4", 3).unwrap(), (5, 6));
        assert_eq!(default_levels("example3:q=5", 1).unwrap(), (6, 6));
        assert_eq!(default_levels("example3:q=5", 2).unwrap(), (6, 7));
    }
}
