//! Covariance functions: the squared-exponential (RBF) kernel and the
//! conjugate (CK) and neural tangent (NTK) kernels of infinitely wide ReLU
//! networks in the NTK parameterization.
//!
//! The dual kernels are evaluated pairwise by carrying the triple
//! `(K(x,x), K(x,x'), K(x',x'))` through the layer recursion, so one kernel
//! value costs `O(depth + dim)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::par::{self, Execution};

/// A set of points of equal dimension, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("point dimension must be at least 1"));
        }
        if data.len() % dim != 0 {
            return Err(invalid(format!(
                "flat buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| invalid("point set must contain at least one point"))?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    /// One-dimensional points.
    pub fn from_scalars(xs: &[f64]) -> Self {
        Self {
            dim: 1,
            data: xs.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Points at the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    pub fn push(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: p.len(),
            });
        }
        self.data.extend_from_slice(p);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelVariant {
    Rbf,
    Ck,
    Ntk,
}

impl KernelVariant {
    pub fn name(self) -> &'static str {
        match self {
            KernelVariant::Rbf => "rbf",
            KernelVariant::Ck => "ck",
            KernelVariant::Ntk => "ntk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" => Some(KernelVariant::Rbf),
            "ck" => Some(KernelVariant::Ck),
            "ntk" => Some(KernelVariant::Ntk),
            _ => None,
        }
    }
}

impl std::fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters of a ReLU network's dual kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualParams {
    pub sigma_w: f64,
    pub sigma_b: f64,
    /// Number of layers `L >= 1`.
    pub depth: usize,
    /// Input dimension `n0`.
    pub input_dim: usize,
}

/// Which covariance function to evaluate, with its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    Rbf { lengthscale: f64 },
    Ck(DualParams),
    Ntk(DualParams),
}

impl KernelSpec {
    pub fn rbf(lengthscale: f64) -> Result<Self> {
        let s = KernelSpec::Rbf { lengthscale };
        s.validate()?;
        Ok(s)
    }

    pub fn ck(sigma_w: f64, sigma_b: f64, depth: usize, input_dim: usize) -> Result<Self> {
        let s = KernelSpec::Ck(DualParams {
            sigma_w,
            sigma_b,
            depth,
            input_dim,
        });
        s.validate()?;
        Ok(s)
    }

    pub fn ntk(sigma_w: f64, sigma_b: f64, depth: usize, input_dim: usize) -> Result<Self> {
        let s = KernelSpec::Ntk(DualParams {
            sigma_w,
            sigma_b,
            depth,
            input_dim,
        });
        s.validate()?;
        Ok(s)
    }

    pub fn variant(&self) -> KernelVariant {
        match self {
            KernelSpec::Rbf { .. } => KernelVariant::Rbf,
            KernelSpec::Ck(_) => KernelVariant::Ck,
            KernelSpec::Ntk(_) => KernelVariant::Ntk,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { lengthscale } => {
                if !(lengthscale > 0.0 && lengthscale.is_finite()) {
                    return Err(invalid(format!(
                        "rbf lengthscale must be positive, got {lengthscale}"
                    )));
                }
            }
            KernelSpec::Ck(p) | KernelSpec::Ntk(p) => {
                if !(p.sigma_w > 0.0 && p.sigma_w.is_finite()) {
                    return Err(invalid(format!(
                        "sigma_w must be positive, got {}",
                        p.sigma_w
                    )));
                }
                if !(p.sigma_b >= 0.0 && p.sigma_b.is_finite()) {
                    return Err(invalid(format!(
                        "sigma_b must be nonnegative, got {}",
                        p.sigma_b
                    )));
                }
                if p.depth == 0 {
                    return Err(invalid("depth must be at least 1"));
                }
                if p.input_dim == 0 {
                    return Err(invalid("input_dim must be at least 1"));
                }
            }
        }
        Ok(())
    }

    /// Required input dimension, if the kernel fixes one.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            KernelSpec::Rbf { .. } => None,
            KernelSpec::Ck(p) | KernelSpec::Ntk(p) => Some(p.input_dim),
        }
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        match self.input_dim() {
            Some(n0) if n0 != d => Err(Error::DimensionMismatch {
                expected: n0,
                got: d,
            }),
            _ => Ok(()),
        }
    }

    /// Kernel value with argument checks.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            KernelSpec::Rbf { lengthscale } => rbf(x, y, *lengthscale),
            KernelSpec::Ck(_) => ck(x, y, self),
            KernelSpec::Ntk(_) => ntk(x, y, self),
        }
    }

    /// Kernel value without dimension checks; callers validate once per batch.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::Rbf { lengthscale } => (-sq_dist(x, y) / (lengthscale * lengthscale)).exp(),
            KernelSpec::Ck(p) => dual_recursion(x, y, p).0,
            KernelSpec::Ntk(p) => dual_recursion(x, y, p).1,
        }
    }
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn same_dim(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(invalid("kernel inputs must have at least one coordinate"));
    }
    Ok(())
}

/// Squared-exponential kernel `exp(-|x - x'|^2 / l^2)`.
pub fn rbf(x: &[f64], y: &[f64], lengthscale: f64) -> Result<f64> {
    same_dim(x, y)?;
    if !(lengthscale > 0.0) {
        return Err(invalid(format!(
            "rbf lengthscale must be positive, got {lengthscale}"
        )));
    }
    Ok((-sq_dist(x, y) / (lengthscale * lengthscale)).exp())
}

/// Angle `c` between the two feature maps, or `None` when a diagonal is zero.
#[inline]
fn arc_angle(kxx: f64, kxy: f64, kyy: f64) -> Option<(f64, f64)> {
    let norm = (kxx * kyy).sqrt();
    if norm <= 0.0 {
        return None;
    }
    let cos = (kxy / norm).clamp(-1.0, 1.0);
    Some((cos.acos(), norm))
}

/// ReLU dual activation and its derivative dual, evaluated together.
#[inline]
fn relu_duals(kxx: f64, kxy: f64, kyy: f64) -> (f64, f64) {
    match arc_angle(kxx, kxy, kyy) {
        Some((c, norm)) => (
            norm / (2.0 * PI) * (c.sin() + (PI - c) * c.cos()),
            (PI - c) / (2.0 * PI),
        ),
        // Zero-variance feature: the product vanishes, and the derivative
        // dual takes the orthogonal value.
        None => (0.0, 0.25),
    }
}

fn check_dual_args(kxx: f64, kxy: f64, kyy: f64) -> Result<()> {
    if !(kxx >= 0.0) || !(kyy >= 0.0) {
        return Err(invalid(format!(
            "dual activation needs nonnegative diagonals, got ({kxx}, {kyy})"
        )));
    }
    if !kxy.is_finite() {
        return Err(invalid("off-diagonal kernel value is not finite"));
    }
    Ok(())
}

/// `E[relu(u) relu(v)]` for `(u, v) ~ N(0, [[kxx, kxy], [kxy, kyy]])`.
pub fn dual_relu(kxx: f64, kxy: f64, kyy: f64) -> Result<f64> {
    check_dual_args(kxx, kxy, kyy)?;
    Ok(relu_duals(kxx, kxy, kyy).0)
}

/// `E[step(u) step(v)]`, the dual of the ReLU derivative.
pub fn dual_relu_prime(kxx: f64, kxy: f64, kyy: f64) -> Result<f64> {
    check_dual_args(kxx, kxy, kyy)?;
    Ok(relu_duals(kxx, kxy, kyy).1)
}

/// Runs the layer recursion, returning `(CK, NTK)` at the last layer.
#[inline]
fn dual_recursion(x: &[f64], y: &[f64], p: &DualParams) -> (f64, f64) {
    let w2 = p.sigma_w * p.sigma_w;
    let b2 = p.sigma_b * p.sigma_b;
    let scale = w2 / p.input_dim as f64;

    let mut kxx = scale * dot(x, x) + b2;
    let mut kyy = scale * dot(y, y) + b2;
    let mut kxy = scale * dot(x, y) + b2;
    let mut theta = kxy;

    for _ in 1..p.depth {
        let (v, v_prime) = relu_duals(kxx, kxy, kyy);
        let next_xy = w2 * v + b2;
        theta = next_xy + w2 * theta * v_prime;
        kxy = next_xy;
        // On the diagonal the dual activation is K/2.
        kxx = w2 * 0.5 * kxx + b2;
        kyy = w2 * 0.5 * kyy + b2;
    }
    (kxy, theta)
}

fn dual_params(spec: &KernelSpec, want: KernelVariant) -> Result<&DualParams> {
    match (spec, want) {
        (KernelSpec::Ck(p), KernelVariant::Ck) | (KernelSpec::Ntk(p), KernelVariant::Ntk) => Ok(p),
        _ => Err(invalid(format!(
            "expected a {want} kernel spec, got {}",
            spec.variant()
        ))),
    }
}

/// Conjugate kernel `Sigma^L(x, x')`.
pub fn ck(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    let p = dual_params(spec, KernelVariant::Ck)?;
    spec.validate()?;
    same_dim(x, y)?;
    spec.check_dim(x.len())?;
    Ok(dual_recursion(x, y, p).0)
}

/// Neural tangent kernel `Theta^L(x, x')`.
pub fn ntk(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    let p = dual_params(spec, KernelVariant::Ntk)?;
    spec.validate()?;
    same_dim(x, y)?;
    spec.check_dim(x.len())?;
    Ok(dual_recursion(x, y, p).1)
}

/// A dense (cross-)covariance matrix between two point sets.
#[derive(Clone, Debug, PartialEq)]
pub struct CovMatrix {
    pub entries: DMatrix<f64>,
}

impl CovMatrix {
    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }
}

fn check_sets(spec: &KernelSpec, a: &PointSet, b: &PointSet) -> Result<()> {
    spec.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(invalid("covariance inputs must be nonempty"));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    spec.check_dim(a.dim())
}

/// Cross-covariance `K[i][j] = k(a_i, b_j)`.
pub fn cov_matrix(spec: &KernelSpec, a: &PointSet, b: &PointSet) -> Result<CovMatrix> {
    cov_matrix_with(spec, a, b, Execution::default())
}

pub fn cov_matrix_with(
    spec: &KernelSpec,
    a: &PointSet,
    b: &PointSet,
    exec: Execution,
) -> Result<CovMatrix> {
    check_sets(spec, a, b)?;
    let (n, m) = (a.len(), b.len());
    // Column-major storage: column j holds k(a_i, b_j) for all i.
    let mut buf = vec![0.0; n * m];
    par::for_each_chunk_mut(&mut buf, n, exec, |start, col| {
        let bj = b.row(start / n);
        for (i, v) in col.iter_mut().enumerate() {
            *v = spec.eval_unchecked(a.row(i), bj);
        }
    });
    Ok(CovMatrix {
        entries: DMatrix::from_vec(n, m, buf),
    })
}

/// Self-covariance of one point set; exactly symmetric.
pub fn self_cov(spec: &KernelSpec, a: &PointSet) -> Result<CovMatrix> {
    self_cov_with(spec, a, Execution::default())
}

pub fn self_cov_with(spec: &KernelSpec, a: &PointSet, exec: Execution) -> Result<CovMatrix> {
    check_sets(spec, a, a)?;
    let n = a.len();
    let mut buf = vec![0.0; n * n];
    // Upper triangle (i <= j) column by column, then mirror.
    par::for_each_chunk_mut(&mut buf, n, exec, |start, col| {
        let j = start / n;
        let aj = a.row(j);
        for i in 0..=j {
            col[i] = spec.eval_unchecked(a.row(i), aj);
        }
    });
    let mut m = DMatrix::from_vec(n, n, buf);
    for j in 0..n {
        for i in (j + 1)..n {
            m[(i, j)] = m[(j, i)];
        }
    }
    Ok(CovMatrix { entries: m })
}

/// `[k(a_0, a_0), ..., k(a_{n-1}, a_{n-1})]`.
pub fn diag(spec: &KernelSpec, a: &PointSet) -> Result<Vec<f64>> {
    check_sets(spec, a, a)?;
    Ok(a.rows().map(|r| spec.eval_unchecked(r, r)).collect())
}
