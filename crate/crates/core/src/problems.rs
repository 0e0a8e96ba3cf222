//! FBSDE problem definitions: the coefficient interface used by the solver,
//! the benchmark problems with closed-form solutions, and a finite-difference
//! Feynman-Kac validator that checks a generator against its exact solution.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::sparse_interp::DomainBox;

/// Where the solver places the sparse grid of each time level.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    /// Same box at every time level.
    Fixed(DomainBox),
    /// Same box at every level, with evaluation points wrapped into it.
    Periodic(DomainBox),
    /// Box at `t = 0` grown forward in time from coefficient bounds
    /// `|b_i| <= c_b`, `|sigma_ij| <= c_sigma`.
    Bounded { initial: DomainBox, c_b: f64, c_sigma: f64 },
}

impl DomainSpec {
    pub fn initial(&self) -> &DomainBox {
        match self {
            DomainSpec::Fixed(b) | DomainSpec::Periodic(b) => b,
            DomainSpec::Bounded { initial, .. } => initial,
        }
    }
}

/// Coefficients of `dX = b dt + sigma dW`, `-dY = f dt - Z dW`, `Y_T = phi(X_T)`.
///
/// Shapes: `x` has `q` entries, `y` has `m`, `z` is `m x d` row-major, the
/// diffusion output is `q x d` row-major.
pub trait FbsdeProblem: Send + Sync {
    fn name(&self) -> &str;
    /// State dimension `q`.
    fn state_dim(&self) -> usize;
    /// Brownian dimension `d`.
    fn noise_dim(&self) -> usize;
    /// Dimension `m` of `Y`.
    fn value_dim(&self) -> usize;
    /// True when `b` or `sigma` depend on `(y, z)`.
    fn coupled(&self) -> bool;
    fn drift(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]);
    fn diffusion(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]);
    fn generator(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]);
    /// `phi(x)` for horizon `horizon`.
    fn terminal(&self, horizon: f64, x: &[f64], out: &mut [f64]);
    fn has_exact(&self) -> bool {
        false
    }
    fn exact_y(&self, _t: f64, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::Unsupported(format!("{} has no exact solution", self.name())))
    }
    fn exact_z(&self, _t: f64, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::Unsupported(format!("{} has no exact solution", self.name())))
    }
    fn domain(&self, horizon: f64) -> DomainSpec;
}

type CoeffFn = dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;
type ExactFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
type TerminalFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type DomainFn = dyn Fn(f64) -> DomainSpec + Send + Sync;

/// A problem assembled from closures.
#[derive(Clone)]
pub struct FnProblem {
    name: String,
    q: usize,
    d: usize,
    m: usize,
    coupled: bool,
    drift: Arc<CoeffFn>,
    diffusion: Arc<CoeffFn>,
    generator: Arc<CoeffFn>,
    terminal: Option<Arc<TerminalFn>>,
    exact_y: Option<Arc<ExactFn>>,
    exact_z: Option<Arc<ExactFn>>,
    domain: Arc<DomainFn>,
}

impl fmt::Debug for FnProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnProblem")
            .field("name", &self.name)
            .field("q", &self.q)
            .field("d", &self.d)
            .field("m", &self.m)
            .field("coupled", &self.coupled)
            .finish_non_exhaustive()
    }
}

impl FnProblem {
    /// Zero coefficients on `[-1, 1]^q`; fill in with the builder methods.
    pub fn new(name: impl Into<String>, q: usize, d: usize, m: usize) -> Self {
        let domain = DomainBox::cube(q.max(1), -1.0, 1.0).expect("unit cube");
        Self {
            name: name.into(),
            q,
            d,
            m,
            coupled: false,
            drift: Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)),
            diffusion: Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)),
            generator: Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)),
            terminal: None,
            exact_y: None,
            exact_z: None,
            domain: Arc::new(move |_| DomainSpec::Fixed(domain.clone())),
        }
    }

    pub fn coupled(mut self, coupled: bool) -> Self {
        self.coupled = coupled;
        self
    }

    pub fn drift<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.drift = Arc::new(f);
        self
    }

    pub fn diffusion<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.diffusion = Arc::new(f);
        self
    }

    pub fn generator<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.generator = Arc::new(f);
        self
    }

    /// Explicit terminal condition; without one, `phi = exact_y(T, .)`.
    pub fn terminal<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.terminal = Some(Arc::new(f));
        self
    }

    pub fn exact<FY, FZ>(mut self, y: FY, z: FZ) -> Self
    where
        FY: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        FZ: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.exact_y = Some(Arc::new(y));
        self.exact_z = Some(Arc::new(z));
        self
    }

    pub fn domain<F>(mut self, f: F) -> Self
    where
        F: Fn(f64) -> DomainSpec + Send + Sync + 'static,
    {
        self.domain = Arc::new(f);
        self
    }
}

impl FbsdeProblem for FnProblem {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> usize {
        self.q
    }

    fn noise_dim(&self) -> usize {
        self.d
    }

    fn value_dim(&self) -> usize {
        self.m
    }

    fn coupled(&self) -> bool {
        self.coupled
    }

    fn drift(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, y, z, out)
    }

    fn diffusion(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, y, z, out)
    }

    fn generator(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        (self.generator)(t, x, y, z, out)
    }

    fn terminal(&self, horizon: f64, x: &[f64], out: &mut [f64]) {
        match (&self.terminal, &self.exact_y) {
            (Some(phi), _) => phi(x, out),
            (None, Some(exact)) => exact(horizon, x, out),
            (None, None) => out.fill(0.0),
        }
    }

    fn has_exact(&self) -> bool {
        self.exact_y.is_some() && self.exact_z.is_some()
    }

    fn exact_y(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.exact_y {
            Some(f) => {
                f(t, x, out);
                Ok(())
            }
            None => Err(Error::Unsupported(format!("{} has no exact Y", self.name))),
        }
    }

    fn exact_z(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.exact_z {
            Some(f) => {
                f(t, x, out);
                Ok(())
            }
            None => Err(Error::Unsupported(format!("{} has no exact Z", self.name))),
        }
    }

    fn domain(&self, horizon: f64) -> DomainSpec {
        (self.domain)(horizon)
    }
}

fn diagonal(out: &mut [f64], q: usize, mut entry: impl FnMut(usize) -> f64) {
    out.fill(0.0);
    for i in 0..q {
        out[i * q + i] = entry(i);
    }
}

fn ex1_y(t: f64, x: &[f64]) -> f64 {
    (4.0 * (x[0] + t)).sin() * (4.0 * (x[1] + t)).sin()
}

/// Two-dimensional periodic benchmark on `[-pi, pi]^2` with
/// `Y = sin(4(x_1+t)) sin(4(x_2+t))`.
pub fn example1() -> FnProblem {
    use std::f64::consts::PI;
    FnProblem::new("example1", 2, 2, 1)
        .coupled(true)
        .drift(|t, x, _, _, out| {
            for i in 0..2 {
                out[i] = (4.0 * (x[i] + t)).cos() / 4.0 - 1.0;
            }
        })
        .diffusion(|t, x, _, _, out| {
            diagonal(out, 2, |i| {
                let a = 4.0 * (x[i] + t);
                a.cos() * a.sin() / 4.0
            })
        })
        .generator(|t, x, y, z, out| {
            let s = [(4.0 * (t + x[0])).sin(), (4.0 * (t + x[1])).sin()];
            let c = [(4.0 * (t + x[0])).cos(), (4.0 * (t + x[1])).cos()];
            out[0] = 0.5 * (z[0] * s[0] * s[0] + z[1] * s[1] * s[1]) - y[0] * (c[0] * c[0] + c[1] * c[1])
                + s[1] * c[0] * c[0] * (s[0] - 1.0)
                + s[0] * c[1] * c[1] * (s[1] - 1.0);
        })
        .exact(
            |t, x, out| out[0] = ex1_y(t, x),
            |t, x, out| {
                let y = ex1_y(t, x);
                for i in 0..2 {
                    let c = (4.0 * (t + x[i])).cos();
                    out[i] = y * c * c;
                }
            },
        )
        .domain(|_| DomainSpec::Periodic(DomainBox::cube(2, -PI, PI).expect("valid box")))
}

/// `prod_{k not in skip} (x_k + t)`
fn shifted_product(x: &[f64], t: f64, skip: &[usize]) -> f64 {
    x.iter()
        .enumerate()
        .filter(|(k, _)| !skip.contains(k))
        .map(|(_, v)| v + t)
        .product()
}

fn ex2_y(t: f64, x: &[f64]) -> f64 {
    let q = x.len();
    (0..q).map(|j| x[j] * x[j] * shifted_product(x, t, &[j])).sum::<f64>() / q as f64
}

/// Decoupled `q`-dimensional benchmark with polynomial solution
/// `Y = (1/q) sum_j x_j^2 prod_{k != j} (x_k + t)`.
///
/// The inner sums over `j` in the printed `Z` and `f` run over `j != i`.
pub fn example2(q: usize) -> Result<FnProblem> {
    if !(2..=6).contains(&q) {
        return Err(invalid(format!("example2 requires 2 <= q <= 6, got {q}")));
    }
    let qf = q as f64;
    let problem = FnProblem::new(format!("example2:q={q}"), q, q, 1)
        .drift(move |_, x, _, _, out| {
            for i in 0..q {
                out[i] = x[i] * (-x[i] * x[i]).exp() / qf;
            }
        })
        .diffusion(move |_, x, _, _, out| diagonal(out, q, |i| (-x[i] * x[i]).exp() / qf))
        .generator(move |t, x, y, z, out| {
            let mut acc = y[0] / (qf * qf);
            for i in 0..q {
                let xi2 = x[i] * x[i];
                acc -= x[i] * z[i];
                acc -= (xi2 + (-2.0 * xi2).exp()) * shifted_product(x, t, &[i]) / (qf * qf * qf);
                let inner: f64 = (0..q).filter(|&j| j != i).map(|j| shifted_product(x, t, &[i, j])).sum();
                acc -= xi2 * inner / qf;
            }
            out[0] = acc;
        })
        .exact(
            |t, x, out| out[0] = ex2_y(t, x),
            move |t, x, out| {
                for i in 0..q {
                    let e = (-x[i] * x[i]).exp();
                    let inner: f64 = (0..q)
                        .filter(|&j| j != i)
                        .map(|j| x[j] * x[j] * shifted_product(x, t, &[i, j]))
                        .sum();
                    out[i] = e * inner / (qf * qf) + 2.0 * x[i] * e * shifted_product(x, t, &[i]) / (qf * qf);
                }
            },
        )
        .domain(move |_| DomainSpec::Bounded {
            initial: DomainBox::cube(q, -1.0, 1.0).expect("valid box"),
            c_b: (-0.5f64).exp() / (qf * std::f64::consts::SQRT_2),
            c_sigma: 1.0 / qf,
        });
    Ok(problem)
}

fn ex3_y(t: f64, x: &[f64]) -> f64 {
    let q = x.len();
    (0..q).map(|j| x[j] * x[j] * (x[(j + 1) % q] + t)).sum::<f64>() / q as f64
}

/// `u_{x_i}` of the Example 3 solution (cyclic indices).
fn ex3_grad(t: f64, x: &[f64], i: usize) -> f64 {
    let q = x.len();
    let prev = x[(i + q - 1) % q];
    (prev * prev + 2.0 * x[i] * (x[(i + 1) % q] + t)) / q as f64
}

/// Coupled `q`-dimensional benchmark with `Y = (1/q) sum_j x_j^2 (x_{j+1} + t)`
/// (cyclic), using the generator whose last term carries `t^2 / (4q)`.
pub fn example3(q: usize) -> Result<FnProblem> {
    example3_with_m(q, (2.0 * q as f64).sqrt())
}

/// Example 3 with the printed generator's last coefficient `t^2 / (2 M^2)`
/// for a given `M`. Only `M^2 = 2q` is consistent with the exact solution.
pub fn example3_with_m(q: usize, m_symbol: f64) -> Result<FnProblem> {
    if !(2..=5).contains(&q) {
        return Err(invalid(format!("example3 requires 2 <= q <= 5, got {q}")));
    }
    if !(m_symbol.is_finite() && m_symbol > 0.0) {
        return Err(invalid(format!("M must be positive, got {m_symbol}")));
    }
    let qf = q as f64;
    let m2 = m_symbol * m_symbol;
    let name = if (m2 - 2.0 * qf).abs() <= 1e-12 * qf { format!("example3:q={q}") } else { format!("example3:q={q}:M={m_symbol}") };
    let problem = FnProblem::new(name, q, q, 1)
        .coupled(true)
        .drift(move |t, x, y, _, out| {
            for i in 0..q {
                let c = (y[0] + x[i]).cos();
                out[i] = 0.5 * t * c * c;
            }
        })
        .diffusion(move |t, x, y, _, out| {
            diagonal(out, q, |i| {
                let s = (y[0] + x[i]).sin();
                0.5 * t * s * s
            })
        })
        .generator(move |t, x, y, z, out| {
            let mut acc: f64 = z[..q].iter().sum();
            let sq: f64 = x.iter().map(|v| v * v).sum();
            acc -= (1.0 + 0.5 * t) * sq / qf;
            let cross: f64 = (0..q).map(|i| x[i] * (x[(i + 1) % q] + t)).sum();
            acc -= t * cross / qf;
            let quartic: f64 = (0..q)
                .map(|i| (x[(i + 1) % q] + t) * (y[0] + x[i]).sin().powi(4))
                .sum();
            acc -= t * t * quartic / (2.0 * m2);
            out[0] = acc;
        })
        .exact(
            |t, x, out| out[0] = ex3_y(t, x),
            move |t, x, out| {
                let y = ex3_y(t, x);
                for i in 0..q {
                    let s = (y + x[i]).sin();
                    out[i] = ex3_grad(t, x, i) * 0.5 * t * s * s;
                }
            },
        )
        .domain(move |horizon| {
            let bound = 0.5 * horizon.abs();
            DomainSpec::Bounded {
                initial: DomainBox::cube(q, -1.0, 1.0).expect("valid box"),
                c_b: bound,
                c_sigma: bound,
            }
        });
    Ok(problem)
}

/// `Z` of Example 3 exactly as printed (a plain cosine factor); kept for the
/// validator, which shows it fails the `Z = u_x sigma` identity.
pub fn example3_printed_z(t: f64, x: &[f64], out: &mut [f64]) {
    let y = ex3_y(t, x);
    let q = x.len();
    for i in 0..q {
        out[i] = 0.5 * t * ex3_grad(t, x, i) * (y + x[i]).cos();
    }
}

/// `b = sigma = f = 0`, `phi = c`: the solution is `Y = c`, `Z = 0`.
pub fn constant_problem(q: usize, c: f64) -> Result<FnProblem> {
    if q == 0 {
        return Err(invalid("q must be >= 1"));
    }
    Ok(FnProblem::new(format!("constant:q={q}"), q, q, 1).exact(
        move |_, _, out| out[0] = c,
        |_, _, out| out.fill(0.0),
    ))
}

/// `q = d = 1`, `b = f = 0`, `sigma = 1`, `phi(x) = x`: `Y = x`, `Z = 1`.
pub fn brownian_problem() -> FnProblem {
    FnProblem::new("brownian", 1, 1, 1)
        .diffusion(|_, _, _, _, out| out[0] = 1.0)
        .exact(|_, x, out| out[0] = x[0], |_, _, out| out[0] = 1.0)
        .domain(|_| DomainSpec::Bounded {
            initial: DomainBox::cube(1, -1.0, 1.0).expect("valid box"),
            c_b: 0.0,
            c_sigma: 1.0,
        })
}

/// Resolve `example1`, `example2:q=4`, `example3:q=3`, `constant:q=2`,
/// `brownian`. Example 3 also accepts an explicit generator constant,
/// `example3:q=3:M=3`.
pub fn problem_by_name(id: &str) -> Result<FnProblem> {
    let (family, rest) = match id.split_once(':') {
        Some((f, r)) => (f.trim(), Some(r.trim())),
        None => (id.trim(), None),
    };
    let (mut q, mut m_symbol) = (None, None);
    for opt in rest.into_iter().flat_map(|r| r.split(':')) {
        let (key, value) = opt
            .split_once('=')
            .ok_or_else(|| invalid(format!("expected `key=value` options after `:` in {id:?}")))?;
        match key.trim() {
            "q" => {
                q = Some(value.trim().parse::<usize>().map_err(|_| invalid(format!("bad dimension in {id:?}")))?)
            }
            "M" if family == "example3" => {
                m_symbol = Some(value.trim().parse::<f64>().map_err(|_| invalid(format!("bad value of M in {id:?}")))?)
            }
            other => return Err(invalid(format!("unknown option {other:?} in {id:?}"))),
        }
    }
    match (family, q) {
        ("example1", None) | ("example1", Some(2)) => Ok(example1()),
        ("example2", Some(q)) => example2(q),
        ("example3", Some(q)) => match m_symbol {
            Some(m) => example3_with_m(q, m),
            None => example3(q),
        },
        ("constant", q) => constant_problem(q.unwrap_or(1), 1.0),
        ("brownian", None) | ("brownian", Some(1)) => Ok(brownian_problem()),
        ("example2" | "example3", None) => Err(invalid(format!("{family} needs a dimension, e.g. {family}:q=3"))),
        _ => Err(invalid(format!("unknown problem {id:?}"))),
    }
}

/// Whether the second-order term of the generator `L` carries a factor 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// `L u = b . u_x + 1/2 tr(sigma sigma^T u_xx)`
    Half,
    /// `L u = b . u_x + tr(sigma sigma^T u_xx)`
    AsPrinted,
}

/// Finite-difference derivatives of one component of `exact_y`.
struct Derivatives {
    u: f64,
    ut: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

/// Step for the Richardson-extrapolated central differences.
pub const FD_STEP: f64 = 2e-3;

fn derivatives(prob: &dyn FbsdeProblem, t: f64, x: &[f64], comp: usize, h: f64) -> Result<Derivatives> {
    let q = x.len();
    let m = prob.value_dim();
    let mut buf = vec![0.0; m];
    let mut xs = x.to_vec();
    let mut eval = |t: f64, xs: &[f64]| -> Result<f64> {
        prob.exact_y(t, xs, &mut buf)?;
        Ok(buf[comp])
    };
    let u = eval(t, x)?;
    let rich = |d_h: f64, d_h2: f64| (4.0 * d_h2 - d_h) / 3.0;

    let mut first_t = |s: f64| -> Result<f64> { Ok((eval(t + s, x)? - eval(t - s, x)?) / (2.0 * s)) };
    let ut = rich(first_t(h)?, first_t(h / 2.0)?);

    let mut grad = vec![0.0; q];
    let mut hess = vec![0.0; q * q];
    for i in 0..q {
        let mut first = |s: f64| -> Result<(f64, f64)> {
            xs[i] = x[i] + s;
            let p = eval(t, &xs)?;
            xs[i] = x[i] - s;
            let n = eval(t, &xs)?;
            xs[i] = x[i];
            Ok(((p - n) / (2.0 * s), (p - 2.0 * u + n) / (s * s)))
        };
        let (g1, h1) = first(h)?;
        let (g2, h2) = first(h / 2.0)?;
        grad[i] = rich(g1, g2);
        hess[i * q + i] = rich(h1, h2);
    }
    for i in 0..q {
        for j in (i + 1)..q {
            let mut mixed = |s: f64| -> Result<f64> {
                let mut acc = 0.0;
                for (si, sj, sign) in [(s, s, 1.0), (s, -s, -1.0), (-s, s, -1.0), (-s, -s, 1.0)] {
                    xs[i] = x[i] + si;
                    xs[j] = x[j] + sj;
                    acc += sign * eval(t, &xs)?;
                }
                xs[i] = x[i];
                xs[j] = x[j];
                Ok(acc / (4.0 * s * s))
            };
            let v = rich(mixed(h)?, mixed(h / 2.0)?);
            hess[i * q + j] = v;
            hess[j * q + i] = v;
        }
    }
    Ok(Derivatives { u, ut, grad, hess })
}

/// Residual `u_t + L u + f(t, x, u, u_x sigma)` of the exact solution at
/// `(t, x)`, one entry per component of `Y`.
pub fn pde_residual_at(
    prob: &dyn FbsdeProblem,
    t: f64,
    x: &[f64],
    convention: Convention,
    h: f64,
) -> Result<Vec<f64>> {
    let (q, d, m) = (prob.state_dim(), prob.noise_dim(), prob.value_dim());
    let ders: Vec<Derivatives> = (0..m).map(|c| derivatives(prob, t, x, c, h)).collect::<Result<_>>()?;
    let y: Vec<f64> = ders.iter().map(|dv| dv.u).collect();
    let mut z = vec![0.0; m * d];
    if prob.has_exact() {
        prob.exact_z(t, x, &mut z)?;
    }
    let mut sigma = vec![0.0; q * d];
    // Two passes so that a z-dependent diffusion sees the gradient-based z.
    for _ in 0..2 {
        prob.diffusion(t, x, &y, &z, &mut sigma);
        for (c, dv) in ders.iter().enumerate() {
            for r in 0..d {
                z[c * d + r] = (0..q).map(|i| dv.grad[i] * sigma[i * d + r]).sum();
            }
        }
    }
    let mut b = vec![0.0; q];
    prob.drift(t, x, &y, &z, &mut b);
    let mut f = vec![0.0; m];
    prob.generator(t, x, &y, &z, &mut f);
    let scale = match convention {
        Convention::Half => 0.5,
        Convention::AsPrinted => 1.0,
    };
    let mut out = vec![0.0; m];
    for (c, dv) in ders.iter().enumerate() {
        let mut second = 0.0;
        for i in 0..q {
            for j in 0..q {
                let a: f64 = (0..d).map(|r| sigma[i * d + r] * sigma[j * d + r]).sum();
                second += a * dv.hess[i * q + j];
            }
        }
        let drift: f64 = (0..q).map(|i| b[i] * dv.grad[i]).sum();
        out[c] = dv.ut + drift + scale * second + f[c];
    }
    Ok(out)
}

/// Sample `(t, x)` uniformly from `[0, horizon] x box`.
fn sample_point(rng: &mut ChaCha8Rng, horizon: f64, domain: &DomainBox, x: &mut [f64]) -> f64 {
    for (dim, v) in x.iter_mut().enumerate() {
        *v = rng.random_range(domain.lower()[dim]..=domain.upper()[dim]);
    }
    rng.random_range(0.0..=horizon)
}

/// Largest `|u_t + L u + f|` over `samples` random points of
/// `[0, horizon] x` the problem's initial box.
pub fn feynman_kac_residual(
    prob: &dyn FbsdeProblem,
    samples: usize,
    seed: u64,
    horizon: f64,
    convention: Convention,
) -> Result<f64> {
    if !prob.has_exact() {
        return Err(Error::Unsupported(format!("{} has no exact solution", prob.name())));
    }
    let domain = prob.domain(horizon).initial().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; prob.state_dim()];
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let t = sample_point(&mut rng, horizon, &domain, &mut x);
        for r in pde_residual_at(prob, t, &x, convention, FD_STEP)? {
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// Largest `|phi(x) - exact_y(T, x)|` over random points of the initial box.
pub fn terminal_consistency(prob: &dyn FbsdeProblem, samples: usize, seed: u64, horizon: f64) -> Result<f64> {
    let m = prob.value_dim();
    let domain = prob.domain(horizon).initial().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; prob.state_dim()];
    let (mut phi, mut exact) = (vec![0.0; m], vec![0.0; m]);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        sample_point(&mut rng, horizon, &domain, &mut x);
        prob.terminal(horizon, &x, &mut phi);
        prob.exact_y(horizon, &x, &mut exact)?;
        for (a, b) in phi.iter().zip(&exact) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Largest deviation of a candidate `Z` from `u_x sigma(t, x, u, Z)` with a
/// finite-difference gradient of `exact_y`.
pub fn z_identity_residual_with<F>(
    prob: &dyn FbsdeProblem,
    samples: usize,
    seed: u64,
    horizon: f64,
    mut z_fn: F,
) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !prob.has_exact() {
        return Err(Error::Unsupported(format!("{} has no exact solution", prob.name())));
    }
    let (q, d, m) = (prob.state_dim(), prob.noise_dim(), prob.value_dim());
    let domain = prob.domain(horizon).initial().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; q];
    let mut z = vec![0.0; m * d];
    let mut sigma = vec![0.0; q * d];
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let t = sample_point(&mut rng, horizon, &domain, &mut x);
        z_fn(t, &x, &mut z)?;
        let mut y = vec![0.0; m];
        prob.exact_y(t, &x, &mut y)?;
        prob.diffusion(t, &x, &y, &z, &mut sigma);
        for c in 0..m {
            let dv = derivatives(prob, t, &x, c, FD_STEP)?;
            for r in 0..d {
                let fd: f64 = (0..q).map(|i| dv.grad[i] * sigma[i * d + r]).sum();
                worst = worst.max((fd - z[c * d + r]).abs());
            }
        }
    }
    Ok(worst)
}

/// [`z_identity_residual_with`] applied to the problem's own `exact_z`.
pub fn z_identity_residual(prob: &dyn FbsdeProblem, samples: usize, seed: u64, horizon: f64) -> Result<f64> {
    z_identity_residual_with(prob, samples, seed, horizon, |t, x, out| prob.exact_z(t, x, out))
}

/// Observed `(max |b_i|, max |sigma_ij|)` over random points of the box
/// `initial` widened by `margin` on each side, with `(y, z)` from the exact
/// solution.
pub fn sampled_coefficient_bounds(
    prob: &dyn FbsdeProblem,
    samples: usize,
    seed: u64,
    horizon: f64,
    margin: f64,
) -> Result<(f64, f64)> {
    let (q, d, m) = (prob.state_dim(), prob.noise_dim(), prob.value_dim());
    let init = prob.domain(horizon).initial().clone();
    let lower = init.lower().iter().map(|a| a - margin).collect();
    let upper = init.upper().iter().map(|b| b + margin).collect();
    let domain = DomainBox::new(lower, upper)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; q];
    let (mut y, mut z) = (vec![0.0; m], vec![0.0; m * d]);
    let (mut b, mut sigma) = (vec![0.0; q], vec![0.0; q * d]);
    let (mut cb, mut cs): (f64, f64) = (0.0, 0.0);
    for _ in 0..samples {
        let t = sample_point(&mut rng, horizon, &domain, &mut x);
        prob.exact_y(t, &x, &mut y)?;
        prob.exact_z(t, &x, &mut z)?;
        prob.drift(t, &x, &y, &z, &mut b);
        prob.diffusion(t, &x, &y, &z, &mut sigma);
        cb = b.iter().fold(cb, |acc, v| acc.max(v.abs()));
        cs = sigma.iter().fold(cs, |acc, v| acc.max(v.abs()));
    }
    Ok((cb, cs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn y_at(p: &dyn FbsdeProblem, t: f64, x: &[f64]) -> f64 {
        let mut out = [0.0];
        p.exact_y(t, x, &mut out).unwrap();
        out[0]
    }

    #[test]
    fn exact_solution_examples() {
        let e1 = example1();
        assert_eq!(y_at(&e1, 0.0, &[0.0, 0.0]), 0.0);
        assert!((y_at(&e1, 0.0, &[PI / 8.0, PI / 8.0]) - 1.0).abs() < 1e-15);
        let e2 = example2(3).unwrap();
        assert_eq!(y_at(&e2, 0.4, &[0.0; 3]), 0.0);
        assert!((y_at(&e2, 0.0, &[1.0; 3]) - 1.0).abs() < 1e-15);
        let e3 = example3(2).unwrap();
        assert_eq!(y_at(&e3, 0.0, &[0.0; 2]), 0.0);
        assert!((y_at(&e3, 1.0, &[1.0, 1.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_ranges() {
        assert!(example2(1).is_err());
        assert!(example2(7).is_err());
        assert!(example3(6).is_err());
        assert!(example3(5).is_ok());
    }

    #[test]
    fn linear_solution_without_drift_has_zero_residual() {
        let p = FnProblem::new("linear", 2, 2, 1)
            .diffusion(|_, x, _, _, out| {
                out.copy_from_slice(&[1.0 + x[1] * x[1], 0.3, -0.2, 0.7]);
            })
            .exact(|_, x, out| out[0] = x[0], |_, x, out| {
                out[0] = 1.0 + x[1] * x[1];
                out[1] = 0.3;
            });
        for conv in [Convention::Half, Convention::AsPrinted] {
            let r = feynman_kac_residual(&p, 50, 1, 1.0, conv).unwrap();
            assert!(r < 1e-9, "{conv:?}: {r}");
        }
    }

    #[test]
    fn example1_residual_selects_half_convention() {
        let p = example1();
        let half = feynman_kac_residual(&p, 1000, 7, 1.0, Convention::Half).unwrap();
        let printed = feynman_kac_residual(&p, 1000, 7, 1.0, Convention::AsPrinted).unwrap();
        assert!(half <= 1e-8, "half-convention residual {half}");
        assert!(printed > 1e-2, "as-printed residual {printed}");
    }

    #[test]
    fn example3_m_candidates() {
        // M = q coincides with M^2 = 2q only at q = 2.
        let r2 = feynman_kac_residual(&example3_with_m(2, 2.0).unwrap(), 200, 3, 1.0, Convention::Half).unwrap();
        assert!(r2 < 1e-8, "{r2}");
        let r3 = feynman_kac_residual(&example3_with_m(3, 3.0).unwrap(), 200, 3, 1.0, Convention::Half).unwrap();
        assert!(r3 > 1e-4, "{r3}");
        let r3d = feynman_kac_residual(&example3(3).unwrap(), 200, 3, 1.0, Convention::Half).unwrap();
        assert!(r3d < 1e-8, "{r3d}");
    }

    #[test]
    fn example3_printed_z_fails_identity() {
        let p = example3(3).unwrap();
        let printed = z_identity_residual_with(&p, 200, 5, 1.0, |t, x, out| {
            example3_printed_z(t, x, out);
            Ok(())
        })
        .unwrap();
        assert!(printed > 1e-3, "{printed}");
        assert!(z_identity_residual(&p, 200, 5, 1.0).unwrap() < 1e-6);
    }

    #[test]
    fn missing_exact_is_unsupported() {
        let p = FnProblem::new("bare", 1, 1, 1);
        assert!(matches!(
            feynman_kac_residual(&p, 1, 0, 1.0, Convention::Half),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn names_parse() {
        assert_eq!(problem_by_name("example1").unwrap().state_dim(), 2);
        assert_eq!(problem_by_name("example2:q=4").unwrap().state_dim(), 4);
        assert_eq!(problem_by_name("example3:q=3").unwrap().name(), "example3:q=3");
        assert!(problem_by_name("example2").is_err());
        assert!(problem_by_name("example2:q=x").is_err());
        assert!(problem_by_name("example9").is_err());
        assert!(problem_by_name("example3:q=9").is_err());
        assert_eq!(problem_by_name("example3:q=3:M=3").unwrap().name(), "example3:q=3:M=3");
        assert_eq!(problem_by_name("example3:q=2:M=2").unwrap().name(), "example3:q=2");
        assert!(problem_by_name("example3:q=3:M=-1").is_err());
        assert!(problem_by_name("example2:q=3:M=3").is_err());
        assert!(problem_by_name("example2:p=3").is_err());
    }
}
