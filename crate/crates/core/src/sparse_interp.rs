//! Sparse interpolation on nested CGL grids with the hierarchical Chebyshev
//! basis: grid construction on a box, the unidirectional fast transform from
//! grid values to expansion coefficients, and evaluation anywhere.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use crate::basis1d::{hier_cheb_table, hier_point, transform_matrix, DomainInterval};
use crate::error::{invalid, Error, Result};
use crate::index::BasisIndexSet;

/// Slack on mapped coordinates before an evaluation counts as out of the box.
pub const OUT_OF_BOX_SLACK: f64 = 1e-9;

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("domain bounds must be non-empty and of equal length"));
        }
        for (a, b) in lower.iter().zip(&upper) {
            DomainInterval::new(*a, *b)?;
        }
        Ok(Self { lower, upper })
    }

    /// `[a, b]^q`
    pub fn cube(q: usize, a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a; q], vec![b; q])
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

    pub fn interval(&self, d: usize) -> DomainInterval {
        DomainInterval { a: self.lower[d], b: self.upper[d] }
    }

    /// True when `inner` lies within this box.
    pub fn encloses(&self, inner: &DomainBox) -> bool {
        self.lower.iter().zip(&inner.lower).all(|(a, b)| a <= b)
            && self.upper.iter().zip(&inner.upper).all(|(a, b)| a >= b)
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        (0..self.dim()).all(|d| self.interval(d).to_reference(x[d]).abs() <= 1.0 + slack)
    }

    /// Map `x` into `[lower, upper)` coordinate-wise by the box period.
    pub fn wrap(&self, x: &mut [f64]) {
        for (d, v) in x.iter_mut().enumerate() {
            let (a, b) = (self.lower[d], self.upper[d]);
            if *v < a || *v > b {
                *v = a + (*v - a).rem_euclid(b - a);
            }
        }
    }
}

/// The nested CGL sparse grid `C_q^p` mapped into a box.
#[derive(Debug, Clone)]
pub struct SparseGrid {
    index: Arc<BasisIndexSet>,
    domain: DomainBox,
    points: Vec<f64>,
}

impl SparseGrid {
    pub fn new(index: Arc<BasisIndexSet>, domain: DomainBox) -> Result<Self> {
        let q = index.dim();
        if domain.dim() != q {
            return Err(invalid(format!("domain dimension {} != q = {q}", domain.dim())));
        }
        let intervals: Vec<DomainInterval> = (0..q).map(|d| domain.interval(d)).collect();
        let mut points = Vec::with_capacity(index.len() * q);
        for idx in index.iter() {
            for (d, &k) in idx.iter().enumerate() {
                points.push(intervals[d].from_reference(hier_point(k)));
            }
        }
        Ok(Self { index, domain, points })
    }

    pub fn index(&self) -> &Arc<BasisIndexSet> {
        &self.index
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn point(&self, pos: usize) -> &[f64] {
        let q = self.dim();
        &self.points[pos * q..(pos + 1) * q]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim())
    }
}

/// Build `C_q^p` on `domain`.
pub fn build_grid(q: usize, p: u32, domain: DomainBox) -> Result<SparseGrid> {
    SparseGrid::new(Arc::new(BasisIndexSet::new(q, p)?), domain)
}

/// Hierarchical Chebyshev expansion `sum_k b_k T̃_k(x)` over a box with
/// `m`-vector coefficients, stored flat in the index-set order.
#[derive(Debug, Clone)]
pub struct SparseInterpolant {
    index: Arc<BasisIndexSet>,
    domain: DomainBox,
    m: usize,
    coeffs: Vec<f64>,
    periodic: bool,
}

impl SparseInterpolant {
    pub fn from_coefficients(
        index: Arc<BasisIndexSet>,
        domain: DomainBox,
        m: usize,
        coeffs: Vec<f64>,
    ) -> Result<Self> {
        if m == 0 {
            return Err(invalid("value dimension must be >= 1"));
        }
        if coeffs.len() != index.len() * m {
            return Err(invalid(format!(
                "expected {} coefficients, got {}",
                index.len() * m,
                coeffs.len()
            )));
        }
        if domain.dim() != index.dim() {
            return Err(invalid("domain and index set dimensions differ"));
        }
        Ok(Self { index, domain, m, coeffs, periodic: false })
    }

    /// Treat the box as one period: evaluation points are wrapped into it.
    pub fn with_periodic(mut self, periodic: bool) -> Self {
        self.periodic = periodic;
        self
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn index(&self) -> &Arc<BasisIndexSet> {
        &self.index
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn value_dim(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Coefficient vector of one basis index.
    pub fn coefficient(&self, index: &[u32]) -> Option<&[f64]> {
        self.index.position(index).map(|p| &self.coeffs[p * self.m..(p + 1) * self.m])
    }

    /// Whether `x` would be evaluated outside the box (never for periodic interpolants).
    pub fn out_of_box(&self, x: &[f64]) -> bool {
        !self.periodic && !self.domain.contains(x, OUT_OF_BOX_SLACK)
    }

    pub fn scratch(&self) -> EvalScratch {
        EvalScratch {
            table: vec![0.0; self.dim() * (self.index.max_index() as usize + 1)],
            point: vec![0.0; self.dim()],
        }
    }

    /// Evaluate at `x`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.eval_into(x, &mut self.scratch(), &mut out);
        out
    }

    /// Evaluate at `x` into `out` (length `m`), reusing `scratch`.
    pub fn eval_into(&self, x: &[f64], scratch: &mut EvalScratch, out: &mut [f64]) {
        let q = self.dim();
        let width = self.index.max_index() as usize + 1;
        scratch.point.copy_from_slice(&x[..q]);
        if self.periodic {
            self.domain.wrap(&mut scratch.point);
        }
        for d in 0..q {
            let t = self.domain.interval(d).to_reference(scratch.point[d]);
            hier_cheb_table(t, &mut scratch.table[d * width..(d + 1) * width]);
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        let m = self.m;
        for (pos, idx) in self.index.iter().enumerate() {
            let mut prod = 1.0;
            for (d, &k) in idx.iter().enumerate() {
                prod *= scratch.table[d * width + k as usize];
            }
            let c = &self.coeffs[pos * m..(pos + 1) * m];
            for (o, &ci) in out.iter_mut().zip(c) {
                *o += prod * ci;
            }
        }
    }

    /// Write the coefficient dump: a header line `q,p,m,a..,b..` followed by
    /// one line per basis index `k_1,..,k_q,c_1,..,c_m`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec![self.dim().to_string(), self.index.sparseness().to_string(), self.m.to_string()];
        header.extend(self.domain.lower().iter().map(|v| format!("{v:e}")));
        header.extend(self.domain.upper().iter().map(|v| format!("{v:e}")));
        writeln!(w, "{}", header.join(","))?;
        for (pos, idx) in self.index.iter().enumerate() {
            let mut fields: Vec<String> = idx.iter().map(|k| k.to_string()).collect();
            fields.extend(self.coeffs[pos * self.m..(pos + 1) * self.m].iter().map(|v| format!("{v:e}")));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io { path: path.to_path_buf(), source };
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    /// Parse a dump written by [`SparseInterpolant::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty interpolant dump".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let h: Vec<&str> = header.split(',').collect();
        let parse_err = |what: &str| Error::Parse(format!("bad {what} in interpolant dump"));
        if h.len() < 3 {
            return Err(parse_err("header"));
        }
        let q: usize = h[0].parse().map_err(|_| parse_err("q"))?;
        let p: u32 = h[1].parse().map_err(|_| parse_err("p"))?;
        let m: usize = h[2].parse().map_err(|_| parse_err("m"))?;
        if h.len() != 3 + 2 * q {
            return Err(parse_err("header length"));
        }
        let bound = |s: &str| s.parse::<f64>().map_err(|_| parse_err("bound"));
        let lower = h[3..3 + q].iter().map(|s| bound(s)).collect::<Result<Vec<_>>>()?;
        let upper = h[3 + q..].iter().map(|s| bound(s)).collect::<Result<Vec<_>>>()?;
        let index = Arc::new(BasisIndexSet::new(q, p)?);
        let domain = DomainBox::new(lower, upper)?;
        let mut coeffs = vec![f64::NAN; index.len() * m];
        let mut count = 0;
        for line in lines {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != q + m {
                return Err(parse_err("row length"));
            }
            let idx = f[..q].iter().map(|s| s.parse::<u32>().map_err(|_| parse_err("index"))).collect::<Result<Vec<_>>>()?;
            let pos = index.position(&idx).ok_or_else(|| parse_err("index (not in set)"))?;
            for c in 0..m {
                coeffs[pos * m + c] = f[q + c].parse().map_err(|_| parse_err("coefficient"))?;
            }
            count += 1;
        }
        if count != index.len() {
            return Err(parse_err("row count"));
        }
        Self::from_coefficients(index, domain, m, coeffs)
    }
}

/// Reusable buffers for [`SparseInterpolant::eval_into`].
#[derive(Debug, Clone)]
pub struct EvalScratch {
    table: Vec<f64>,
    point: Vec<f64>,
}

/// Recover hierarchical coefficients from grid values (`values` is
/// `grid.len() x m`, row-major, in the grid's index order).
///
/// Sweeps the dimensions in turn; along each one every line of the index set
/// is a full 1D level `I^L`, transformed by that level's inverse collocation
/// matrix.
pub fn fast_transform(grid: &SparseGrid, values: &[f64], m: usize) -> Result<SparseInterpolant> {
    let n = grid.len();
    if m == 0 || values.len() != n * m {
        return Err(invalid(format!(
            "expected {} grid values ({} points x m = {m}), got {}",
            n * m,
            n,
            values.len()
        )));
    }
    let index = grid.index();
    let mut b = values.to_vec();
    let mut gathered = Vec::new();
    let mut transformed = Vec::new();
    for d in 0..grid.dim() {
        for pencil in index.pencils(d) {
            let t = transform_matrix(pencil.level)?;
            let len = pencil.positions.len();
            gathered.resize(len, 0.0);
            transformed.resize(len, 0.0);
            for c in 0..m {
                for (g, &pos) in gathered.iter_mut().zip(&pencil.positions) {
                    *g = b[pos * m + c];
                }
                for (k, out) in transformed.iter_mut().enumerate() {
                    *out = t.row(k).iter().zip(&gathered).map(|(a, v)| a * v).sum();
                }
                for (&v, &pos) in transformed.iter().zip(&pencil.positions) {
                    b[pos * m + c] = v;
                }
            }
        }
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite coefficient after fast transform".into()));
    }
    SparseInterpolant::from_coefficients(index.clone(), grid.domain().clone(), m, b)
}

/// Interpolate a function sampled on the grid.
pub fn interpolate<F>(grid: &SparseGrid, m: usize, mut f: F) -> Result<SparseInterpolant>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut values = Vec::with_capacity(grid.len() * m);
    for x in grid.points() {
        let v = f(x);
        if v.len() != m {
            return Err(invalid(format!("function returned {} values, expected {m}", v.len())));
        }
        values.extend(v);
    }
    fast_transform(grid, &values, m)
}
