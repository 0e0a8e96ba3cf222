//! The fully discrete `k`-step backward scheme: multistep coefficients, the
//! per-time-level domain boxes, and the backward sweep that solves for
//! `(Y, Z)` pointwise on sparse grids by Picard iteration.

use std::sync::Arc;

use num_rational::Ratio;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::index::BasisIndexSet;
use crate::problems::{DomainSpec, FbsdeProblem};
use crate::sparse_interp::{fast_transform, DomainBox, EvalScratch, SparseGrid, SparseInterpolant};
use crate::sparse_quad::{build_gh_rule, conditional_expectation_with, ExpectationPair, ExpectationWorkspace, GhSparseRule};

/// Largest supported step count.
pub const MAX_STEPS: usize = 6;

/// `alpha_{k,j} * dt` for `j = 0..=k`: the solution of
/// `sum_j j^m a_j = delta_{m,1}`, `m = 0..=k`, in exact arithmetic.
pub fn multistep_coeffs_exact(k: usize) -> Result<Vec<Ratio<i128>>> {
    if !(1..=MAX_STEPS).contains(&k) {
        return Err(invalid(format!("step count must be in 1..={MAX_STEPS}, got {k}")));
    }
    let n = k + 1;
    let zero = Ratio::from_integer(0i128);
    let one = Ratio::from_integer(1i128);
    let mut a: Vec<Vec<Ratio<i128>>> = (0..n)
        .map(|m| {
            let mut row: Vec<Ratio<i128>> = (0..n).map(|j| Ratio::from_integer((j as i128).pow(m as u32))).collect();
            row.push(if m == 1 { one } else { zero });
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| a[r][col] != zero)
            .ok_or_else(|| Error::Numeric("singular multistep system".into()))?;
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col && a[r][col] != zero {
                let factor = a[r][col];
                for c in col..=n {
                    let sub = factor * a[col][c];
                    a[r][c] -= sub;
                }
            }
        }
    }
    Ok(a.into_iter().map(|row| row[n]).collect())
}

/// Multistep coefficients `alpha_{k,0..=k}`, already divided by `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultistepCoeffs {
    pub k: usize,
    pub alpha: Vec<f64>,
}

pub fn multistep_coeffs(k: usize, dt: f64) -> Result<MultistepCoeffs> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    let exact = multistep_coeffs_exact(k)?;
    let alpha = exact.iter().map(|r| (*r.numer() as f64) / (*r.denom() as f64) / dt).collect();
    Ok(MultistepCoeffs { k, alpha })
}

/// Uniform partition of `[0, horizon]` into `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub steps: usize,
    pub horizon: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("need steps >= 1 and a positive horizon, got {steps}, {horizon}")));
        }
        Ok(Self { steps, horizon })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn t(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.dt()
        }
    }
}

/// How bounded-coefficient boxes grow per time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Propagation {
    /// Both bounds move outwards by `|c_b| dt + c_sigma sqrt(2 dt) M`.
    #[default]
    Enclose,
    /// Both bounds shift by `c_b dt` and widen by `c_sigma sqrt(2 dt) M`.
    Shift,
}

/// Boxes for time levels `0..=steps` grown from `d0`.
pub fn propagate_domains(
    d0: &DomainBox,
    steps: usize,
    dt: f64,
    c_b: f64,
    c_sigma: f64,
    m_bound: f64,
    propagation: Propagation,
) -> Result<Vec<DomainBox>> {
    let spread = c_sigma.abs() * (2.0 * dt).sqrt() * m_bound;
    let (down, up) = match propagation {
        Propagation::Enclose => (-(c_b.abs() * dt + spread), c_b.abs() * dt + spread),
        Propagation::Shift => (c_b * dt - spread, c_b * dt + spread),
    };
    (0..=steps)
        .map(|n| {
            let lower = d0.lower().iter().map(|a| a + n as f64 * down).collect();
            let upper = d0.upper().iter().map(|b| b + n as f64 * up).collect();
            DomainBox::new(lower, upper)
        })
        .collect()
}

/// How the `k` starting levels `N, N-1, ..., N-k+1` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Initialization {
    /// Interpolate the exact solution.
    #[default]
    Exact,
    /// Run the one-step scheme with `substeps` substeps per interval from the
    /// terminal condition.
    Bootstrap { substeps: usize },
}

/// Solver settings.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub k: usize,
    pub steps: usize,
    pub horizon: f64,
    /// Interpolation level of `C_q^p` at every time level.
    pub p: u32,
    /// Optional per-time-level override (`steps + 1` entries, index `n`).
    pub p_levels: Option<Vec<u32>>,
    /// Quadrature level of `G_d^pq`.
    pub pq: u32,
    pub tol: f64,
    pub max_picard: usize,
    pub max_inner: usize,
    /// Replaces the problem's own domain specification.
    pub domain: Option<DomainSpec>,
    pub propagation: Propagation,
    pub init: Initialization,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl SolverConfig {
    pub fn new(k: usize, steps: usize, p: u32, pq: u32) -> Self {
        Self {
            k,
            steps,
            horizon: 1.0,
            p,
            p_levels: None,
            pq,
            tol: 1e-10,
            max_picard: 100,
            max_inner: 50,
            domain: None,
            propagation: Propagation::Enclose,
            init: Initialization::Exact,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_STEPS).contains(&self.k) {
            return Err(invalid(format!("k must be in 1..={MAX_STEPS}, got {}", self.k)));
        }
        if self.k > self.steps {
            return Err(invalid(format!("k = {} exceeds the number of time steps {}", self.k, self.steps)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid(format!("picard tolerance must be positive, got {}", self.tol)));
        }
        if self.max_picard == 0 || self.max_inner == 0 {
            return Err(invalid("iteration limits must be >= 1"));
        }
        if let Some(levels) = &self.p_levels {
            if levels.len() != self.steps + 1 {
                return Err(invalid(format!("p_levels needs {} entries, got {}", self.steps + 1, levels.len())));
            }
        }
        if let Initialization::Bootstrap { substeps } = self.init {
            if substeps == 0 {
                return Err(invalid("bootstrap needs at least one substep"));
            }
        }
        TimeGrid::new(self.steps, self.horizon)?;
        Ok(())
    }

    fn level_p(&self, n: usize) -> u32 {
        self.p_levels.as_ref().map_or(self.p, |v| v[n])
    }
}

/// `(Y, Z)` at one time level.
#[derive(Debug, Clone)]
pub struct SolutionLevel {
    pub n: usize,
    pub t: f64,
    pub domain: DomainBox,
    /// Value dimension `m`.
    pub y: SparseInterpolant,
    /// Value dimension `m * d`.
    pub z: SparseInterpolant,
    /// Grid values of `Y` (`points x m`) the interpolant was built from.
    pub y_values: Vec<f64>,
    /// Grid values of `Z` (`points x m d`).
    pub z_values: Vec<f64>,
}

/// Per-level diagnostics of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelStats {
    pub n: usize,
    pub points: usize,
    pub max_picard: usize,
    pub mean_picard: f64,
    pub out_of_box: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Every time level, indexed by `n`, and the per-level statistics of the
/// levels computed by the scheme.
#[derive(Debug, Clone)]
pub struct Solution {
    pub levels: Vec<SolutionLevel>,
    pub stats: Vec<LevelStats>,
    pub rule_points: usize,
}

impl Solution {
    pub fn initial(&self) -> &SolutionLevel {
        &self.levels[0]
    }
}

struct PointResult {
    y: Vec<f64>,
    z: Vec<f64>,
    iterations: usize,
    out_of_box: usize,
}

/// Future level used by one time step: interpolant and time offset `j dt`.
struct Future<'a> {
    y: &'a SparseInterpolant,
    jdt: f64,
    alpha: f64,
}

struct StepContext<'a> {
    prob: &'a dyn FbsdeProblem,
    rule: &'a GhSparseRule,
    t_n: f64,
    alpha0: f64,
    futures: Vec<Future<'a>>,
    guess_y: &'a SparseInterpolant,
    guess_z: &'a SparseInterpolant,
    tol: f64,
    max_picard: usize,
    max_inner: usize,
    level: usize,
}

struct PointWorkspace {
    expect: Vec<ExpectationWorkspace>,
    pairs: Vec<ExpectationPair>,
    guess_y: EvalScratch,
    guess_z: EvalScratch,
    f: Vec<f64>,
}

impl StepContext<'_> {
    fn workspace(&self) -> PointWorkspace {
        let (d, m) = (self.prob.noise_dim(), self.prob.value_dim());
        PointWorkspace {
            expect: self.futures.iter().map(|f| ExpectationWorkspace::new(f.y, d)).collect(),
            pairs: self
                .futures
                .iter()
                .map(|_| ExpectationPair { ey: vec![0.0; m], eyw: vec![0.0; m * d], out_of_box: 0 })
                .collect(),
            guess_y: self.guess_y.scratch(),
            guess_z: self.guess_z.scratch(),
            f: vec![0.0; m],
        }
    }

    fn solve_point(&self, ws: &mut PointWorkspace, x: &[f64]) -> Result<PointResult> {
        let (d, m) = (self.prob.noise_dim(), self.prob.value_dim());
        let mut y = vec![0.0; m];
        let mut z = vec![0.0; m * d];
        self.guess_y.eval_into(x, &mut ws.guess_y, &mut y);
        self.guess_z.eval_into(x, &mut ws.guess_z, &mut z);
        let mut y_new = vec![0.0; m];
        let mut z_new = vec![0.0; m * d];
        let mut rhs = vec![0.0; m];
        let mut out_of_box = 0;
        let mut residual = f64::INFINITY;
        for iteration in 1..=self.max_picard {
            if iteration == 1 || self.prob.coupled() {
                for (j, fut) in self.futures.iter().enumerate() {
                    conditional_expectation_with(
                        &mut ws.expect[j],
                        &mut ws.pairs[j],
                        fut.y,
                        x,
                        &y,
                        &z,
                        self.t_n,
                        fut.jdt,
                        self.prob,
                        self.rule,
                    )?;
                    out_of_box += ws.pairs[j].out_of_box;
                }
            }
            z_new.fill(0.0);
            rhs.fill(0.0);
            for (fut, pair) in self.futures.iter().zip(&ws.pairs) {
                for (zv, e) in z_new.iter_mut().zip(&pair.eyw) {
                    *zv += fut.alpha * e;
                }
                for (r, e) in rhs.iter_mut().zip(&pair.ey) {
                    *r -= fut.alpha * e;
                }
            }
            y_new.copy_from_slice(&y);
            let mut inner_ok = false;
            for _ in 0..self.max_inner {
                self.prob.generator(self.t_n, x, &y_new, &z_new, &mut ws.f);
                let mut change: f64 = 0.0;
                for c in 0..m {
                    let next = (rhs[c] - ws.f[c]) / self.alpha0;
                    change = change.max((next - y_new[c]).abs());
                    y_new[c] = next;
                }
                if !change.is_finite() {
                    return Err(Error::Numeric(format!("non-finite Y at level {}, x = {x:?}", self.level)));
                }
                if change < scaled_tol(self.tol / 10.0, &y_new) {
                    inner_ok = true;
                    break;
                }
            }
            if !inner_ok {
                return Err(Error::Divergence { level: self.level, point: x.to_vec(), residual: f64::NAN });
            }
            residual = y_new
                .iter()
                .zip(&y)
                .chain(z_new.iter().zip(&z))
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut z, &mut z_new);
            if !residual.is_finite() {
                return Err(Error::Numeric(format!("non-finite Picard iterate at level {}, x = {x:?}", self.level)));
            }
            let tol = scaled_tol(self.tol, &y).max(scaled_tol(self.tol, &z));
            if !self.prob.coupled() || residual < tol {
                return Ok(PointResult { y, z, iterations: iteration, out_of_box });
            }
        }
        Err(Error::Divergence { level: self.level, point: x.to_vec(), residual })
    }
}

fn build_level(
    ctx: &StepContext<'_>,
    grid: &SparseGrid,
    n: usize,
    t: f64,
    periodic: bool,
) -> Result<(SolutionLevel, LevelStats)> {
    let (d, m) = (ctx.prob.noise_dim(), ctx.prob.value_dim());
    let results: Vec<PointResult> = (0..grid.len())
        .into_par_iter()
        .map_init(|| ctx.workspace(), |ws, pos| ctx.solve_point(ws, grid.point(pos)))
        .collect::<Result<_>>()?;
    let mut y_values = Vec::with_capacity(grid.len() * m);
    let mut z_values = Vec::with_capacity(grid.len() * m * d);
    let mut max_picard = 0;
    let mut total_picard = 0;
    let mut out_of_box = 0;
    for r in &results {
        y_values.extend_from_slice(&r.y);
        z_values.extend_from_slice(&r.z);
        max_picard = max_picard.max(r.iterations);
        total_picard += r.iterations;
        out_of_box += r.out_of_box;
    }
    let y = fast_transform(grid, &y_values, m)?.with_periodic(periodic);
    let z = fast_transform(grid, &z_values, m * d)?.with_periodic(periodic);
    let stats = LevelStats {
        n,
        points: grid.len(),
        max_picard,
        mean_picard: total_picard as f64 / grid.len().max(1) as f64,
        out_of_box,
        lower: grid.domain().lower().to_vec(),
        upper: grid.domain().upper().to_vec(),
    };
    log::debug!(
        "level {n}: t = {t:.6}, max picard {max_picard}, out-of-box evaluations {out_of_box}, box {:?}..{:?}",
        stats.lower,
        stats.upper
    );
    Ok((SolutionLevel { n, t, domain: grid.domain().clone(), y, z, y_values, z_values }, stats))
}

/// Interpolate the exact solution at time `t` on `grid`.
fn exact_level(prob: &dyn FbsdeProblem, grid: &SparseGrid, n: usize, t: f64, periodic: bool) -> Result<SolutionLevel> {
    let (d, m) = (prob.noise_dim(), prob.value_dim());
    let mut y_values = vec![0.0; grid.len() * m];
    let mut z_values = vec![0.0; grid.len() * m * d];
    for (pos, x) in grid.points().enumerate() {
        prob.exact_y(t, x, &mut y_values[pos * m..(pos + 1) * m])?;
        prob.exact_z(t, x, &mut z_values[pos * m * d..(pos + 1) * m * d])?;
    }
    let y = fast_transform(grid, &y_values, m)?.with_periodic(periodic);
    let z = fast_transform(grid, &z_values, m * d)?.with_periodic(periodic);
    Ok(SolutionLevel { n, t, domain: grid.domain().clone(), y, z, y_values, z_values })
}

/// `Y = phi`, `Z = 0` at the horizon.
fn terminal_level(
    prob: &dyn FbsdeProblem,
    grid: &SparseGrid,
    n: usize,
    horizon: f64,
    periodic: bool,
) -> Result<SolutionLevel> {
    let (d, m) = (prob.noise_dim(), prob.value_dim());
    let mut y_values = vec![0.0; grid.len() * m];
    for (pos, x) in grid.points().enumerate() {
        prob.terminal(horizon, x, &mut y_values[pos * m..(pos + 1) * m]);
    }
    let z_values = vec![0.0; grid.len() * m * d];
    let y = fast_transform(grid, &y_values, m)?.with_periodic(periodic);
    let z = fast_transform(grid, &z_values, m * d)?.with_periodic(periodic);
    Ok(SolutionLevel { n, t: horizon, domain: grid.domain().clone(), y, z, y_values, z_values })
}

/// Quadrature rule and per-level boxes implied by `cfg` for `prob`.
pub fn plan_domains(prob: &dyn FbsdeProblem, cfg: &SolverConfig) -> Result<(GhSparseRule, Vec<DomainBox>, bool)> {
    let rule = build_gh_rule(prob.noise_dim(), cfg.pq)?;
    let spec = cfg.domain.clone().unwrap_or_else(|| prob.domain(cfg.horizon));
    if spec.initial().dim() != prob.state_dim() {
        return Err(invalid(format!(
            "domain has dimension {}, problem has {}",
            spec.initial().dim(),
            prob.state_dim()
        )));
    }
    let dt = cfg.horizon / cfg.steps as f64;
    let (boxes, periodic) = match spec {
        DomainSpec::Fixed(b) => (vec![b; cfg.steps + 1], false),
        DomainSpec::Periodic(b) => (vec![b; cfg.steps + 1], true),
        DomainSpec::Bounded { initial, c_b, c_sigma } => (
            propagate_domains(&initial, cfg.steps, dt, c_b, c_sigma, rule.max_abs_node(), cfg.propagation)?,
            false,
        ),
    };
    Ok((rule, boxes, periodic))
}

/// Run the backward sweep from `t_N = T` to `t_0 = 0`.
pub fn solve(prob: &dyn FbsdeProblem, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    match cfg.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| invalid(format!("cannot build thread pool: {e}")))?
            .install(|| solve_inner(prob, cfg)),
        None => solve_inner(prob, cfg),
    }
}

fn solve_inner(prob: &dyn FbsdeProblem, cfg: &SolverConfig) -> Result<Solution> {
    let q = prob.state_dim();
    let (rule, boxes, periodic) = plan_domains(prob, cfg)?;
    let time = TimeGrid::new(cfg.steps, cfg.horizon)?;
    let dt = time.dt();
    let coeffs = multistep_coeffs(cfg.k, dt)?;
    let n_last = cfg.steps;
    let mut index_cache: Vec<(u32, Arc<BasisIndexSet>)> = Vec::new();
    let mut grid_for = |n: usize| -> Result<SparseGrid> {
        let p = cfg.level_p(n);
        let index = match index_cache.iter().find(|(lp, _)| *lp == p) {
            Some((_, idx)) => idx.clone(),
            None => {
                let idx = Arc::new(BasisIndexSet::new(q, p)?);
                index_cache.push((p, idx.clone()));
                idx
            }
        };
        SparseGrid::new(index, boxes[n].clone())
    };

    let mut levels: Vec<Option<SolutionLevel>> = vec![None; n_last + 1];
    let mut stats = Vec::new();
    match cfg.init {
        Initialization::Exact => {
            if !prob.has_exact() {
                return Err(Error::Unsupported(format!(
                    "{} has no exact solution to initialize from; use the bootstrap initialization",
                    prob.name()
                )));
            }
            for n in (n_last + 1 - cfg.k)..=n_last {
                let grid = grid_for(n)?;
                levels[n] = Some(exact_level(prob, &grid, n, time.t(n), periodic)?);
            }
        }
        Initialization::Bootstrap { substeps } => {
            let grid = grid_for(n_last)?;
            levels[n_last] = Some(terminal_level(prob, &grid, n_last, cfg.horizon, periodic)?);
            let one = multistep_coeffs(1, dt / substeps as f64)?;
            for n in (n_last + 1 - cfg.k..n_last).rev() {
                let outer = grid_for(n + 1)?;
                let target = grid_for(n)?;
                let mut current = levels[n + 1].clone().expect("level set");
                for s in (0..substeps).rev() {
                    let t_s = time.t(n) + s as f64 * dt / substeps as f64;
                    let grid = if s == 0 { &target } else { &outer };
                    let ctx = StepContext {
                        prob,
                        rule: &rule,
                        t_n: t_s,
                        alpha0: one.alpha[0],
                        futures: vec![Future { y: &current.y, jdt: dt / substeps as f64, alpha: one.alpha[1] }],
                        guess_y: &current.y,
                        guess_z: &current.z,
                        tol: cfg.tol,
                        max_picard: cfg.max_picard,
                        max_inner: cfg.max_inner,
                        level: n,
                    };
                    let (lvl, _) = build_level(&ctx, grid, n, t_s, periodic)?;
                    current = lvl;
                }
                levels[n] = Some(current);
            }
        }
    }

    for n in (0..=(n_last - cfg.k)).rev() {
        let grid = grid_for(n)?;
        let futures = (1..=cfg.k)
            .map(|j| Future {
                y: &levels[n + j].as_ref().expect("future level computed").y,
                jdt: time.t(n + j) - time.t(n),
                alpha: coeffs.alpha[j],
            })
            .collect();
        let next = levels[n + 1].as_ref().expect("future level computed");
        let ctx = StepContext {
            prob,
            rule: &rule,
            t_n: time.t(n),
            alpha0: coeffs.alpha[0],
            futures,
            guess_y: &next.y,
            guess_z: &next.z,
            tol: cfg.tol,
            max_picard: cfg.max_picard,
            max_inner: cfg.max_inner,
            level: n,
        };
        let (lvl, st) = build_level(&ctx, &grid, n, time.t(n), periodic)?;
        levels[n] = Some(lvl);
        stats.push(st);
    }
    let levels = levels.into_iter().map(|l| l.expect("all levels computed")).collect();
    Ok(Solution { levels, stats, rule_points: rule.len() })
}

/// How errors at `t = 0` are aggregated.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ErrorNorm {
    /// Max-abs over the level-0 grid points.
    #[default]
    Max,
    /// Root mean square over the level-0 grid points.
    Rms,
    /// Error at one point.
    Point(Vec<f64>),
}

/// `(E_Y, E_Z)` at `t = 0`; `Z` errors take the max-abs component per point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub err_y: f64,
    pub err_z: f64,
}

/// Compare the level-0 interpolants with the exact solution.
pub fn measure_errors(solution: &Solution, prob: &dyn FbsdeProblem, norm: &ErrorNorm) -> Result<ErrorReport> {
    if !prob.has_exact() {
        return Err(Error::Unsupported(format!("{} has no exact solution", prob.name())));
    }
    let level = solution.initial();
    let (d, m) = (prob.noise_dim(), prob.value_dim());
    let q = prob.state_dim();
    let points: Vec<Vec<f64>> = match norm {
        ErrorNorm::Point(x) => {
            if x.len() != q {
                return Err(invalid(format!("error point needs {q} coordinates, got {}", x.len())));
            }
            vec![x.clone()]
        }
        _ => {
            let grid = SparseGrid::new(level.y.index().clone(), level.domain.clone())?;
            grid.points().map(|x| x.to_vec()).collect()
        }
    };
    let (mut ey, mut ez) = (vec![0.0; m], vec![0.0; m * d]);
    let (mut sy, mut sz) = (level.y.scratch(), level.z.scratch());
    let (mut vy, mut vz) = (vec![0.0; m], vec![0.0; m * d]);
    let (mut max_y, mut max_z, mut sum_y, mut sum_z) = (0.0f64, 0.0f64, 0.0, 0.0);
    for x in &points {
        prob.exact_y(level.t, x, &mut ey)?;
        prob.exact_z(level.t, x, &mut ez)?;
        level.y.eval_into(x, &mut sy, &mut vy);
        level.z.eval_into(x, &mut sz, &mut vz);
        let dy = vy.iter().zip(&ey).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        let dz = vz.iter().zip(&ez).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        max_y = max_y.max(dy);
        max_z = max_z.max(dz);
        sum_y += dy * dy;
        sum_z += dz * dz;
    }
    let count = points.len() as f64;
    Ok(match norm {
        ErrorNorm::Rms => ErrorReport { err_y: (sum_y / count).sqrt(), err_z: (sum_z / count).sqrt() },
        _ => ErrorReport { err_y: max_y, err_z: max_z },
    })
}

/// Absolute tolerance below magnitude one, relative above it.
fn scaled_tol(tol: f64, v: &[f64]) -> f64 {
    tol * v.iter().fold(1.0f64, |acc, x| acc.max(x.abs()))
}
