//! Size mesh, cell-averaged fields, weighted norms and brackets, and the
//! assembled fragmentation operators ℱ₊, B· and ℱ₊*.
//!
//! The gain uses a fixed-pivot assignment: a fragment born at size y between
//! two cell centers is split between them so that both its count and its size
//! are reproduced. Fragments below the first center go to cell 0 with their
//! size preserved. The adjoint is the exact transpose of the gain with respect
//! to the bracket Σ fᵢφᵢΔxᵢ, which amounts to linear interpolation of φ
//! between centers (and toward φ = 0 at x = 0 below the first center).

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, FragmentationKernel, FragmentationRate, KernelDensity};
use crate::error::{GfError, Result};
use crate::quadrature::{gauss_fixed, gauss_legendre};

pub const MIN_CELLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Uniform,
    Geometric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    edges: Vec<f64>,
    centers: Vec<f64>,
    widths: Vec<f64>,
    spacing: Spacing,
}

impl Grid {
    fn from_edges(edges: Vec<f64>, spacing: Spacing) -> Result<Self> {
        if edges.len() < MIN_CELLS + 1 {
            return Err(GfError::Config(format!("grid needs at least {MIN_CELLS} cells, got {}", edges.len().saturating_sub(1))));
        }
        if edges[0] <= 0.0 || edges.windows(2).any(|w| !(w[1] > w[0])) || !edges.last().unwrap().is_finite() {
            return Err(GfError::Config("grid edges must be positive, finite and strictly increasing".into()));
        }
        let centers = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let widths = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Grid { edges, centers, widths, spacing })
    }

    pub fn uniform(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min > 0.0 && x_max > x_min) {
            return Err(GfError::Config(format!("need 0 < x_min < x_max, got [{x_min}, {x_max}]")));
        }
        let h = (x_max - x_min) / n as f64;
        let mut edges: Vec<f64> = (0..=n).map(|k| x_min + k as f64 * h).collect();
        edges[n] = x_max;
        Self::from_edges(edges, Spacing::Uniform)
    }

    pub fn geometric(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min > 0.0 && x_max > x_min) {
            return Err(GfError::Config(format!("need 0 < x_min < x_max, got [{x_min}, {x_max}]")));
        }
        let log_r = (x_max / x_min).ln() / n as f64;
        Self::geometric_ratio(x_min, log_r, n)
    }

    /// Geometric grid whose ratio r satisfies r^k = 1/z for an integer k, so
    /// dilation by z maps cells onto cells. Keeps x_min and N; x_max moves to
    /// the nearest admissible value.
    pub fn geometric_snapped(x_min: f64, x_max: f64, n: usize, z: f64) -> Result<Self> {
        if !(z > 0.0 && z < 1.0) {
            return Err(GfError::Config(format!("snap position must lie in (0,1), got {z}")));
        }
        if !(x_min > 0.0 && x_max > x_min) {
            return Err(GfError::Config(format!("need 0 < x_min < x_max, got [{x_min}, {x_max}]")));
        }
        let log_r0 = (x_max / x_min).ln() / n as f64;
        let k = ((1.0 / z).ln() / log_r0).round().max(1.0);
        Self::geometric_ratio(x_min, (1.0 / z).ln() / k, n)
    }

    /// Number of cells per factor 1/z on a snapped geometric grid.
    pub fn cells_per_dilation(&self, z: f64) -> Option<usize> {
        let r = self.ratio()?;
        let k = (1.0 / z).ln() / r.ln();
        ((k - k.round()).abs() < 1e-9).then_some(k.round() as usize)
    }

    fn geometric_ratio(x_min: f64, log_r: f64, n: usize) -> Result<Self> {
        let edges = (0..=n).map(|k| x_min * (k as f64 * log_r).exp()).collect();
        Self::from_edges(edges, Spacing::Geometric)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn x_min(&self) -> f64 {
        self.edges[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    pub fn max_width(&self) -> f64 {
        self.widths.iter().cloned().fold(0.0, f64::max)
    }

    /// Constant ratio of a geometric grid.
    pub fn ratio(&self) -> Option<f64> {
        (self.spacing == Spacing::Geometric).then(|| self.edges[1] / self.edges[0])
    }

    /// Index of the cell containing x, if any.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if !(x >= self.edges[0]) || x > self.x_max() {
            return None;
        }
        Some((self.edges.partition_point(|&e| e <= x) - 1).min(self.len() - 1))
    }

    /// Grid with twice as many cells over the same range.
    pub fn refined(&self) -> Result<Self> {
        let mut edges = Vec::with_capacity(2 * self.len() + 1);
        for w in self.edges.windows(2) {
            edges.push(w[0]);
            let mid = match self.spacing {
                Spacing::Uniform => 0.5 * (w[0] + w[1]),
                Spacing::Geometric => (w[0] * w[1]).sqrt(),
            };
            edges.push(mid);
        }
        edges.push(self.x_max());
        Self::from_edges(edges, self.spacing)
    }
}

/// Cell-averaged density on a grid.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl PartialEq for DiscreteField {
    fn eq(&self, other: &Self) -> bool {
        same_grid(&self.grid, &other.grid) && self.values == other.values
    }
}

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || a.edges == b.edges
}

impl DiscreteField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(GfError::GridMismatch);
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GfError::DomainError(format!("non-finite value {v} in cell {i}")));
        }
        Ok(DiscreteField { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        DiscreteField { grid, values: vec![0.0; n] }
    }

    /// Cell averages of `f` by 4-point Gauss-Legendre quadrature per cell.
    pub fn from_fn<F: Fn(f64) -> f64>(grid: Arc<Grid>, f: F) -> Self {
        let rule = gauss_legendre(4);
        let values = grid
            .edges
            .windows(2)
            .map(|w| gauss_fixed(&f, w[0], w[1], &rule) / (w[1] - w[0]))
            .collect();
        DiscreteField { grid, values }
    }

    /// Point values of `f` at the cell centers.
    pub fn sample<F: Fn(f64) -> f64>(grid: Arc<Grid>, f: F) -> Self {
        let values = grid.centers.iter().map(|&x| f(x)).collect();
        DiscreteField { grid, values }
    }

    /// Exact cell averages of the indicator of [a, b].
    pub fn indicator(grid: Arc<Grid>, a: f64, b: f64) -> Self {
        let values = grid
            .edges
            .windows(2)
            .map(|w| ((b.min(w[1]) - a.max(w[0])).max(0.0)) / (w[1] - w[0]))
            .collect();
        DiscreteField { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        DiscreteField { grid: self.grid.clone(), values }
    }

    fn check_grid(&self, other: &Self) -> Result<()> {
        if same_grid(&self.grid, &other.grid) {
            Ok(())
        } else {
            Err(GfError::GridMismatch)
        }
    }

    /// Σ |fᵢ|(1+xᵢ)^α Δxᵢ.
    pub fn weighted_norm(&self, alpha: f64) -> f64 {
        weighted_norm(self, alpha)
    }

    /// ∫ f (total number).
    pub fn integral(&self) -> f64 {
        self.values.iter().zip(&self.grid.widths).map(|(v, w)| v * w).sum()
    }

    /// ∫ x f (total size).
    pub fn first_moment(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.grid.widths)
            .zip(&self.grid.centers)
            .map(|((v, w), x)| v * w * x)
            .sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.with_values(self.values.iter().map(|v| c * v).collect())
    }

    /// a·self + b·other.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_grid(other)?;
        Ok(self.with_values(self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Linear interpolation between cell centers, constant outside.
    pub fn interpolate(&self, x: f64) -> f64 {
        let c = &self.grid.centers;
        let n = c.len();
        if x <= c[0] {
            return self.values[0];
        }
        if x >= c[n - 1] {
            return self.values[n - 1];
        }
        let k = c.partition_point(|&v| v <= x) - 1;
        let t = (x - c[k]) / (c[k + 1] - c[k]);
        self.values[k] + t * (self.values[k + 1] - self.values[k])
    }

    /// Writes `x_center,width,value` rows with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x_center,width,value")?;
        for ((x, w), v) in self.grid.centers.iter().zip(&self.grid.widths).zip(&self.values) {
            writeln!(out, "{}", csv_row(&[*x, *w, *v]))?;
        }
        Ok(())
    }
}

/// Shortest round-trip decimal, in exponent form outside [1e-4, 1e15).
pub fn fmt_float(x: f64) -> String {
let a = x.abs();
if a == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
    format!("{x}")
} else {
    format!("{x:e}")
}
}

/// Comma-joined [`fmt_float`] cells.
pub fn csv_row(values: &[f64]) -> String {
values.iter().map(|v| fmt_float(*v)).collect::<Vec<_>>().join(",")
}

/// Σ |fᵢ|(1+xᵢ)^α Δxᵢ.
pub fn weighted_norm(f: &DiscreteField, alpha: f64) -> f64 {
    let g = &f.grid;
    f.values
        .iter()
        .zip(&g.centers)
        .zip(&g.widths)
        .map(|((v, x), w)| v.abs() * weight(*x, alpha) * w)
        .sum()
}

#[inline]
pub(crate) fn weight(x: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        1.0
    } else if alpha == 1.0 {
        1.0 + x
    } else {
        (1.0 + x).powf(alpha)
    }
}

/// ⟨f, φ⟩ = Σ fᵢφᵢΔxᵢ.
pub fn bracket(f: &DiscreteField, phi: &DiscreteField) -> Result<f64> {
    f.check_grid(phi)?;
    Ok(f.values
        .iter()
        .zip(&phi.values)
        .zip(&f.grid.widths)
        .map(|((a, b), w)| a * b * w)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Gain,
    Loss,
    AdjointGain,
}

/// Compressed sparse rows.
#[derive(Debug, Clone, Default)]
pub(crate) struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    pub(crate) fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(j);
            vals.push(v);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr { row_ptr, cols, vals }
    }

    pub(crate) fn apply_add(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *o += s;
        }
    }

    pub(crate) fn apply_transpose_add(&self, x: &[f64], out: &mut [f64]) {
        for (i, xi) in x.iter().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[k]] += self.vals[k] * xi;
            }
        }
    }
}

/// Gain of a power-law density kernel in O(N):
/// (Gf)ᵢ = a·[pᵢ·Σ_{j>i} colⱼfⱼ + qᵢ·colᵢfᵢ].
#[derive(Debug, Clone)]
struct PowerLawGain {
    p: Vec<f64>,
    q: Vec<f64>,
    col: Vec<f64>,
}

impl PowerLawGain {
    fn apply_add(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let mut suffix = 0.0;
        for i in (0..n).rev() {
            let cx = self.col[i] * x[i];
            out[i] += self.p[i] * suffix + self.q[i] * cx;
            suffix += cx;
        }
    }

    fn apply_transpose_add(&self, x: &[f64], out: &mut [f64]) {
        let mut prefix = 0.0;
        for j in 0..x.len() {
            out[j] += self.col[j] * (prefix + self.q[j] * x[j]);
            prefix += self.p[j] * x[j];
        }
    }
}

#[derive(Debug, Clone)]
enum Part {
    Sparse(Csr),
    PowerLaw(PowerLawGain),
    Diagonal(Vec<f64>),
}

impl Part {
    fn apply_add(&self, x: &[f64], out: &mut [f64], transpose: bool) {
        match (self, transpose) {
            (Part::Sparse(m), false) => m.apply_add(x, out),
            (Part::Sparse(m), true) => m.apply_transpose_add(x, out),
            (Part::PowerLaw(m), false) => m.apply_add(x, out),
            (Part::PowerLaw(m), true) => m.apply_transpose_add(x, out),
            (Part::Diagonal(d), _) => {
                for ((o, d), x) in out.iter_mut().zip(d).zip(x) {
                    *o += d * x;
                }
            }
        }
    }
}

/// Linear operator on fields: `left ⊙ M(right ⊙ f)` where M is a sum of parts,
/// possibly transposed.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    kind: OperatorKind,
    n: usize,
    parts: Vec<Part>,
    transposed: bool,
    left: Option<Vec<f64>>,
    right: Option<Vec<f64>>,
}

impl OperatorMatrix {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// out = M·x.
    pub fn apply_slice(&self, x: &[f64], out: &mut [f64]) {
        self.apply_oriented(x, out, false);
    }

    /// out = Mᵀ·x (plain transpose, without grid weights).
    pub fn apply_transpose_slice(&self, x: &[f64], out: &mut [f64]) {
        self.apply_oriented(x, out, true);
    }

    fn apply_oriented(&self, x: &[f64], out: &mut [f64], transpose: bool) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        let (pre, post) = if transpose {
            (&self.left, &self.right)
        } else {
            (&self.right, &self.left)
        };
        let scaled;
        let input = match pre {
            Some(s) => {
                scaled = x.iter().zip(s).map(|(a, b)| a * b).collect::<Vec<_>>();
                &scaled[..]
            }
            None => x,
        };
        out.iter_mut().for_each(|o| *o = 0.0);
        for p in &self.parts {
            p.apply_add(input, out, transpose ^ self.transposed);
        }
        if let Some(s) = post {
            out.iter_mut().zip(s).for_each(|(o, s)| *o *= s);
        }
    }

    pub fn apply(&self, f: &DiscreteField) -> DiscreteField {
        let mut out = vec![0.0; self.n];
        self.apply_slice(&f.values, &mut out);
        f.with_values(out)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut cols = vec![vec![0.0; self.n]; self.n];
        let mut e = vec![0.0; self.n];
        for (j, col) in cols.iter_mut().enumerate() {
            e[j] = 1.0;
            self.apply_slice(&e, col);
            e[j] = 0.0;
        }
        (0..self.n).map(|i| (0..self.n).map(|j| cols[j][i]).collect()).collect()
    }
}

/// Exact cell averages of B.
pub fn cell_average_rate(b: &FragmentationRate, grid: &Grid) -> Vec<f64> {
    let seg = b.segments();
    grid.edges
        .windows(2)
        .map(|w| seg.integral(w[0], w[1]) / (w[1] - w[0]))
        .collect()
}

/// Fixed-pivot split of a fragment born at `y < c_j`: returns (cell, share)
/// pairs that reproduce its count and size (count partly lost below c₀).
fn pivot_split(centers: &[f64], y: f64) -> [(usize, f64); 2] {
    if y <= centers[0] {
        return [(0, y / centers[0]), (0, 0.0)];
    }
    let k = centers.partition_point(|&c| c <= y) - 1;
    let (c0, c1) = (centers[k], centers[k + 1]);
    let s = (y - c0) / (c1 - c0);
    // snap round-off so that exactly mapped atoms stay on one cell
    if s < 1e-12 {
        [(k, 1.0), (k, 0.0)]
    } else if s > 1.0 - 1e-12 {
        [(k + 1, 1.0), (k + 1, 0.0)]
    } else {
        [(k, 1.0 - s), (k + 1, s)]
    }
}

/// ∫ hat(y)·y^ν dy over [lo, hi] where hat is linear with hat(lo) = h_lo, hat(hi) = h_hi.
fn hat_power_integral(lo: f64, hi: f64, h_lo: f64, h_hi: f64, nu: f64) -> f64 {
    // hat(y) = c0 + s y
    let s = (h_hi - h_lo) / (hi - lo);
    let c0 = h_lo - s * lo;
    let prim = |e: f64, a: f64, b: f64| {
        if e == 0.0 {
            (b / a).ln()
        } else {
            (b.powf(e) - a.powf(e)) / e
        }
    };
    c0 * prim(nu + 1.0, lo, hi) + s * prim(nu + 2.0, lo, hi)
}

fn atom_triplets(kernel: &FragmentationKernel, grid: &Grid, rate: &[f64]) -> Vec<(usize, usize, f64)> {
    let c = grid.centers();
    let wd = grid.widths();
    let mut t = Vec::with_capacity(2 * kernel.atoms.len() * grid.len());
    for j in 0..grid.len() {
        let src = rate[j] * wd[j];
        if src == 0.0 {
            continue;
        }
        for &(z, w) in &kernel.atoms {
            for (i, share) in pivot_split(c, z * c[j]) {
                if share != 0.0 {
                    t.push((i, j, src * w * share / wd[i]));
                }
            }
        }
    }
    t
}

/// Power-law density weight·(ν+2)z^ν: separable structure.
fn power_law_part(nu: f64, weight: f64, grid: &Grid, rate: &[f64]) -> PowerLawGain {
    let c = grid.centers();
    let wd = grid.widths();
    let n = grid.len();
    let a = weight * (nu + 2.0);
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        // rising half of the hat of cell i
        let lower = if i == 0 {
            hat_power_integral_from_zero(c[0], nu)
        } else {
            hat_power_integral(c[i - 1], c[i], 0.0, 1.0, nu)
        };
        let upper = if i + 1 < n { hat_power_integral(c[i], c[i + 1], 1.0, 0.0, nu) } else { 0.0 };
        q[i] = a * lower / wd[i];
        p[i] = a * (lower + upper) / wd[i];
    }
    let col = (0..n).map(|j| rate[j] * wd[j] * c[j].powf(-nu - 1.0)).collect();
    PowerLawGain { p, q, col }
}

/// ∫₀^{c} (y/c)·y^ν dy.
fn hat_power_integral_from_zero(c: f64, nu: f64) -> f64 {
    c.powf(nu + 1.0) / (nu + 2.0)
}

/// Tabulated density: dense lower-triangular fill from closed-form hat integrals.
fn tabulated_triplets(density: &KernelDensity, grid: &Grid, rate: &[f64]) -> Vec<(usize, usize, f64)> {
    let c = grid.centers();
    let wd = grid.widths();
    let n = grid.len();
    let mut t = Vec::new();
    for j in 0..n {
        let src = rate[j] * wd[j];
        if src == 0.0 {
            continue;
        }
        let cj = c[j];
        // y ∈ [lo, hi] maps to z = y/c_j; ∫ hat(y) k(y/c_j) dy/c_j with hat linear
        let seg = |lo: f64, hi: f64, h_lo: f64, h_hi: f64| {
            let s = (h_hi - h_lo) / (hi - lo);
            let c0 = h_lo - s * lo;
            let (za, zb) = (lo / cj, hi / cj);
            c0 * density.partial_moment(0, za, zb) + s * cj * density.partial_moment(1, za, zb)
        };
        for i in 0..=j {
            let lower = if i == 0 { seg(0.0, c[0], 0.0, 1.0) } else { seg(c[i - 1], c[i], 0.0, 1.0) };
            let upper = if i < j { seg(c[i], c[i + 1], 1.0, 0.0) } else { 0.0 };
            let v = src * (lower + upper) / wd[i];
            if v != 0.0 {
                t.push((i, j, v));
            }
        }
    }
    t
}

fn gain_parts(coeffs: &CoefficientSet, grid: &Grid) -> Vec<Part> {
    let rate = cell_average_rate(&coeffs.b, grid);
    let mut parts = Vec::new();
    let mut triplets = atom_triplets(&coeffs.kernel, grid, &rate);
    match &coeffs.kernel.density {
        None => {}
        Some(KernelDensity::PowerLaw { nu, weight }) => {
            parts.push(Part::PowerLaw(power_law_part(*nu, *weight, grid, &rate)))
        }
        Some(KernelDensity::Uniform { weight }) => parts.push(Part::PowerLaw(power_law_part(0.0, *weight, grid, &rate))),
        Some(d @ KernelDensity::Tabulated { .. }) => triplets.extend(tabulated_triplets(d, grid, &rate)),
    }
    if !triplets.is_empty() {
        parts.push(Part::Sparse(Csr::from_triplets(grid.len(), triplets)));
    }
    parts
}

/// ℱ₊ on the grid.
pub fn assemble_gain(coeffs: &CoefficientSet, grid: &Grid) -> Result<OperatorMatrix> {
    coeffs.kernel.check_structure()?;
    Ok(OperatorMatrix {
        kind: OperatorKind::Gain,
        n: grid.len(),
        parts: gain_parts(coeffs, grid),
        transposed: false,
        left: None,
        right: None,
    })
}

/// ℱ₊* on the grid: the transpose of ℱ₊ for the bracket Σ fᵢφᵢΔxᵢ.
pub fn assemble_adjoint_gain(coeffs: &CoefficientSet, grid: &Grid) -> Result<OperatorMatrix> {
    coeffs.kernel.check_structure()?;
    Ok(OperatorMatrix {
        kind: OperatorKind::AdjointGain,
        n: grid.len(),
        parts: gain_parts(coeffs, grid),
        transposed: true,
        left: Some(grid.widths().iter().map(|w| 1.0 / w).collect()),
        right: Some(grid.widths().to_vec()),
    })
}

/// Multiplication by the cell averages of B.
pub fn assemble_loss(coeffs: &CoefficientSet, grid: &Grid) -> OperatorMatrix {
    OperatorMatrix {
        kind: OperatorKind::Loss,
        n: grid.len(),
        parts: vec![Part::Diagonal(cell_average_rate(&coeffs.b, grid))],
        transposed: false,
        left: None,
        right: None,
    }
}
