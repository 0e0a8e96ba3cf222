//! Sparse Gauss-Hermite quadrature in `R^q` by the combination technique, and
//! the conditional expectations `E[Y]`, `E[Y dW^T]` of an interpolant under a
//! one-step Euler move of the forward process.

use std::collections::HashMap;

use crate::basis1d::gh_rule_cached;
use crate::error::{invalid, Error, Result};
use crate::index::combination_terms;
use crate::problems::FbsdeProblem;
use crate::sparse_interp::{EvalScratch, SparseInterpolant};

/// Signed sparse rule for `int f(xi) e^{-xi.xi} dxi`.
#[derive(Debug, Clone)]
pub struct GhSparseRule {
    q: usize,
    p: u32,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    m_bound: f64,
}

impl GhSparseRule {
    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn level(&self) -> u32 {
        self.p
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.q..(i + 1) * self.q]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.nodes.chunks_exact(self.q)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `max |xi|_inf` over the nodes.
    pub fn max_abs_node(&self) -> f64 {
        self.m_bound
    }

    /// Apply the rule to `f`.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        self.nodes().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

/// Assemble `G_q^p` from tensor products of 1D rules weighted by the
/// combination coefficients; coinciding nodes are merged.
pub fn build_gh_rule(q: usize, p: u32) -> Result<GhSparseRule> {
    let terms = combination_terms(q, p)?;
    let mut slot: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut node = vec![0.0; q];
    let mut key = vec![0u64; q];
    for (level, coef) in terms {
        let rules = level
            .levels()
            .iter()
            .map(|&i| gh_rule_cached(i))
            .collect::<Result<Vec<_>>>()?;
        let mut counter = vec![0usize; q];
        'tensor: loop {
            let mut w = coef as f64;
            for d in 0..q {
                // +0.0 folds a negative zero onto the same key.
                node[d] = rules[d].nodes[counter[d]] + 0.0;
                key[d] = node[d].to_bits();
                w *= rules[d].weights[counter[d]];
            }
            match slot.get(&key) {
                Some(&s) => weights[s] += w,
                None => {
                    slot.insert(key.clone(), weights.len());
                    nodes.extend_from_slice(&node);
                    weights.push(w);
                }
            }
            for d in 0..q {
                counter[d] += 1;
                if counter[d] < rules[d].nodes.len() {
                    continue 'tensor;
                }
                counter[d] = 0;
            }
            break;
        }
    }
    let mut kept_nodes = Vec::with_capacity(nodes.len());
    let mut kept_weights = Vec::with_capacity(weights.len());
    for (x, &w) in nodes.chunks_exact(q).zip(&weights) {
        if w != 0.0 {
            kept_nodes.extend_from_slice(x);
            kept_weights.push(w);
        }
    }
    let m_bound = kept_nodes.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok(GhSparseRule { q, p, nodes: kept_nodes, weights: kept_weights, m_bound })
}

/// `E[Y]` (`m` entries) and `E[Y dW^T]` (`m x d`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationPair {
    pub ey: Vec<f64>,
    pub eyw: Vec<f64>,
    /// Quadrature points that fell outside a non-periodic interpolant's box.
    pub out_of_box: usize,
}

/// Reusable buffers for [`conditional_expectation_with`].
#[derive(Debug, Clone)]
pub struct ExpectationWorkspace {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    point: Vec<f64>,
    dw: Vec<f64>,
    value: Vec<f64>,
    eval: EvalScratch,
}

impl ExpectationWorkspace {
    pub fn new(yq: &SparseInterpolant, d: usize) -> Self {
        let q = yq.dim();
        Self {
            drift: vec![0.0; q],
            sigma: vec![0.0; q * d],
            point: vec![0.0; q],
            dw: vec![0.0; d],
            value: vec![0.0; yq.value_dim()],
            eval: yq.scratch(),
        }
    }
}

/// Expectations at `x` of `yq(x + b jdt + sigma dW)` and of the same times
/// `dW^T`, with `dW = sqrt(2 jdt) xi` over the rule's nodes and the
/// coefficients frozen at `(t_n, x, y, z)`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_expectation(
    yq: &SparseInterpolant,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    t_n: f64,
    jdt: f64,
    prob: &dyn FbsdeProblem,
    rule: &GhSparseRule,
) -> Result<ExpectationPair> {
    let mut ws = ExpectationWorkspace::new(yq, prob.noise_dim());
    let mut out = ExpectationPair {
        ey: vec![0.0; yq.value_dim()],
        eyw: vec![0.0; yq.value_dim() * prob.noise_dim()],
        out_of_box: 0,
    };
    conditional_expectation_with(&mut ws, &mut out, yq, x, y, z, t_n, jdt, prob, rule)?;
    Ok(out)
}

/// [`conditional_expectation`] writing into `out` with caller-owned buffers.
#[allow(clippy::too_many_arguments)]
pub fn conditional_expectation_with(
    ws: &mut ExpectationWorkspace,
    out: &mut ExpectationPair,
    yq: &SparseInterpolant,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    t_n: f64,
    jdt: f64,
    prob: &dyn FbsdeProblem,
    rule: &GhSparseRule,
) -> Result<()> {
    let (q, d) = (prob.state_dim(), prob.noise_dim());
    let m = yq.value_dim();
    if !(jdt > 0.0 && jdt.is_finite()) {
        return Err(invalid(format!("time increment must be positive, got {jdt}")));
    }
    if rule.dim() != d || yq.dim() != q || x.len() != q {
        return Err(invalid(format!(
            "dimension mismatch: state {q}, noise {d}, rule {}, interpolant {}, point {}",
            rule.dim(),
            yq.dim(),
            x.len()
        )));
    }
    prob.drift(t_n, x, y, z, &mut ws.drift);
    prob.diffusion(t_n, x, y, z, &mut ws.sigma);
    if ws.drift.iter().chain(&ws.sigma).any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite drift or diffusion at t = {t_n}, x = {x:?}")));
    }
    out.ey.clear();
    out.ey.resize(m, 0.0);
    out.eyw.clear();
    out.eyw.resize(m * d, 0.0);
    out.out_of_box = 0;
    let scale = (2.0 * jdt).sqrt();
    for (xi, &w) in rule.nodes().zip(rule.weights()) {
        for (dw, v) in ws.dw.iter_mut().zip(xi) {
            *dw = scale * v;
        }
        for i in 0..q {
            let diff: f64 = (0..d).map(|r| ws.sigma[i * d + r] * ws.dw[r]).sum();
            ws.point[i] = x[i] + ws.drift[i] * jdt + diff;
        }
        if yq.out_of_box(&ws.point) {
            out.out_of_box += 1;
        }
        yq.eval_into(&ws.point, &mut ws.eval, &mut ws.value);
        for c in 0..m {
            let v = w * ws.value[c];
            out.ey[c] += v;
            for r in 0..d {
                out.eyw[c * d + r] += v * ws.dw[r];
            }
        }
    }
    let norm = std::f64::consts::PI.powf(-(d as f64) / 2.0);
    for v in out.ey.iter_mut().chain(out.eyw.iter_mut()) {
        *v *= norm;
    }
    if let Some(bad) = out.ey.iter().chain(&out.eyw).find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite expectation {bad} at t = {t_n}, x = {x:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis1d::{gauss_hermite, gh_rule};
    use crate::problems::FnProblem;
    use crate::sparse_interp::{build_grid, interpolate, DomainBox};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// `int xi^a e^{-xi^2} dxi`
    fn moment(a: u32) -> f64 {
        if a % 2 == 1 {
            return 0.0;
        }
        let mut v = PI.sqrt();
        for k in 0..a / 2 {
            v *= (2 * k + 1) as f64 / 2.0;
        }
        v
    }

    #[test]
    fn one_dimensional_rule_is_the_finest_level() {
        let r = build_gh_rule(1, 3).unwrap();
        let g = gh_rule(3).unwrap();
        assert_eq!(r.len(), 7);
        assert!(r.weights().iter().all(|&w| w > 0.0));
        for (i, x) in r.nodes().enumerate() {
            assert_eq!(x[0], g.nodes[i] + 0.0);
            assert_eq!(r.weights()[i], g.weights[i]);
        }
    }

    #[test]
    fn weight_sum_and_second_moment() {
        let r = build_gh_rule(2, 3).unwrap();
        assert!((r.weights().iter().sum::<f64>() - PI).abs() < 1e-12);
        let v = r.integrate(|x| x[0] * x[0] + x[1] * x[1]);
        assert!((v - PI).abs() < 1e-10, "{v}");
    }

    #[test]
    fn weight_sum_all_small_rules() {
        for q in 1..=6 {
            for p in q as u32..=q as u32 + 4 {
                let r = build_gh_rule(q, p).unwrap();
                let want = PI.powf(q as f64 / 2.0);
                let got: f64 = r.weights().iter().sum();
                assert!(((got - want) / want).abs() < 1e-10, "q={q} p={p}: {got}");
            }
        }
    }

    #[test]
    fn low_degree_exactness() {
        for q in 2..=3usize {
            let r = build_gh_rule(q, q as u32 + 2).unwrap();
            for code in 0..4usize.pow(q as u32) {
                let exps: Vec<u32> = (0..q).map(|d| (code / 4usize.pow(d as u32) % 4) as u32).collect();
                if exps.iter().sum::<u32>() > 3 {
                    continue;
                }
                let want: f64 = exps.iter().map(|&a| moment(a)).product();
                let got = r.integrate(|x| x.iter().zip(&exps).map(|(v, &a)| v.powi(a as i32)).product());
                assert!((got - want).abs() < 1e-9, "q={q} {exps:?}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn sparse_matches_dense_tensor_rule() {
        let (nodes, weights) = gauss_hermite(31).unwrap();
        let f = |x: &[f64]| (x[0] + x[1]).cos();
        let mut dense = 0.0;
        for (a, wa) in nodes.iter().zip(&weights) {
            for (b, wb) in nodes.iter().zip(&weights) {
                dense += wa * wb * f(&[*a, *b]);
            }
        }
        assert!((dense - PI * (-0.5f64).exp()).abs() < 1e-12);
        // Truncation error of G_2^5 for this integrand, from an independent
        // evaluation of the combination formula with numpy's hermgauss.
        let sparse5 = build_gh_rule(2, 5).unwrap().integrate(f);
        assert!((sparse5 - dense + 2.7053443625e-6).abs() < 1e-12, "{sparse5} vs {dense}");
        let sparse6 = build_gh_rule(2, 6).unwrap().integrate(f);
        assert!((sparse6 - dense).abs() < 1e-6, "{sparse6} vs {dense}");
    }

    #[test]
    fn node_bound_and_merging() {
        let r = build_gh_rule(2, 4).unwrap();
        let mut seen = std::collections::HashSet::new();
        for x in r.nodes() {
            assert!(seen.insert((x[0].to_bits(), x[1].to_bits())));
        }
        let m = gh_rule(3).unwrap().nodes.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert_eq!(r.max_abs_node(), m);
    }

    fn constant_coeff_problem(q: usize, b: Vec<f64>, sigma: Vec<f64>) -> FnProblem {
        FnProblem::new("affine", q, q, 1)
            .drift(move |_, _, _, _, out| out.copy_from_slice(&b))
            .diffusion(move |_, _, _, _, out| out.copy_from_slice(&sigma))
    }

    #[test]
    fn constant_interpolant() {
        let grid = build_grid(2, 4, DomainBox::cube(2, -1.0, 1.0).unwrap()).unwrap();
        let yq = interpolate(&grid, 1, |_| vec![2.5]).unwrap();
        let prob = constant_coeff_problem(2, vec![0.3, -0.1], vec![0.5, 0.1, 0.0, 0.4]);
        let rule = build_gh_rule(2, 4).unwrap();
        let e = conditional_expectation(&yq, &[0.1, 0.2], &[0.0], &[0.0, 0.0], 0.0, 0.05, &prob, &rule).unwrap();
        assert!((e.ey[0] - 2.5).abs() < 1e-12);
        assert!(e.eyw.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn affine_interpolant() {
        let v = [0.7, -1.3];
        let b = vec![0.3, -0.1];
        let sigma = vec![0.5, 0.1, -0.2, 0.4];
        let grid = build_grid(2, 3, DomainBox::cube(2, -2.0, 2.0).unwrap()).unwrap();
        let yq = interpolate(&grid, 1, |x| vec![v[0] * x[0] + v[1] * x[1]]).unwrap();
        let prob = constant_coeff_problem(2, b.clone(), sigma.clone());
        let rule = build_gh_rule(2, 3).unwrap();
        let x = [0.2, -0.4];
        let jdt = 0.1;
        let e = conditional_expectation(&yq, &x, &[0.0], &[0.0, 0.0], 0.0, jdt, &prob, &rule).unwrap();
        let want_ey = v[0] * (x[0] + b[0] * jdt) + v[1] * (x[1] + b[1] * jdt);
        assert!((e.ey[0] - want_ey).abs() < 1e-10);
        for r in 0..2 {
            let want = jdt * (v[0] * sigma[r] + v[1] * sigma[2 + r]);
            assert!((e.eyw[r] - want).abs() < 1e-10, "{r}: {} vs {want}", e.eyw[r]);
        }
    }

    #[test]
    fn linear_in_coefficients() {
        let grid = build_grid(2, 4, DomainBox::cube(2, -1.0, 1.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mk = |v: Vec<f64>| {
            SparseInterpolant::from_coefficients(grid.index().clone(), grid.domain().clone(), 1, v).unwrap()
        };
        let sum: Vec<f64> = a.iter().zip(&c).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let prob = constant_coeff_problem(2, vec![0.2, 0.1], vec![0.3, 0.0, 0.0, 0.3]);
        let rule = build_gh_rule(2, 4).unwrap();
        let run = |yq: &SparseInterpolant| {
            conditional_expectation(yq, &[0.1, -0.3], &[0.0], &[0.0, 0.0], 0.0, 0.02, &prob, &rule).unwrap()
        };
        let (ea, ec, es) = (run(&mk(a)), run(&mk(c)), run(&mk(sum)));
        assert!((es.ey[0] - (2.0 * ea.ey[0] - 0.5 * ec.ey[0])).abs() < 1e-12);
        for r in 0..2 {
            assert!((es.eyw[r] - (2.0 * ea.eyw[r] - 0.5 * ec.eyw[r])).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_increment_and_nonfinite_coefficients() {
        let grid = build_grid(1, 2, DomainBox::cube(1, -1.0, 1.0).unwrap()).unwrap();
        let yq = interpolate(&grid, 1, |x| vec![x[0]]).unwrap();
        let rule = build_gh_rule(1, 2).unwrap();
        let ok = constant_coeff_problem(1, vec![0.0], vec![1.0]);
        assert!(conditional_expectation(&yq, &[0.0], &[0.0], &[0.0], 0.0, 0.0, &ok, &rule).is_err());
        let bad = constant_coeff_problem(1, vec![f64::NAN], vec![1.0]);
        assert!(matches!(
            conditional_expectation(&yq, &[0.0], &[0.0], &[0.0], 0.0, 0.1, &bad, &rule),
            Err(Error::Numeric(_))
        ));
    }
}
