//! Multi-fidelity Gaussian-process posterior over `(x, t)`.
//!
//! The latent mean `ξ(x, t)` of the simulator has a GP prior with an unknown
//! constant mean under an improper uniform prior, and each observation is
//! `ξ(x_i, t_i)` plus independent Gaussian noise of known variance
//! `λ(x_i, t_i)`. Integrating the constant mean out gives the ordinary-kriging
//! posterior: with `A = K + Λ`,
//!
//! ```text
//! m̂        = 1ᵀA⁻¹z / 1ᵀA⁻¹1
//! m_n(p)    = m̂ + k(p, X) A⁻¹ (z − m̂ 1)
//! k_n(p, q) = k(p, q) − k(p, X) A⁻¹ k(X, q)
//!             + (1 − 1ᵀA⁻¹k(X, p)) (1 − 1ᵀA⁻¹k(X, q)) / 1ᵀA⁻¹1
//! ```
//!
//! Everything is computed from the Cholesky factor `A = L Lᵀ`, so that for a
//! batch of points `P` one triangular solve `S_P = L⁻¹ k(X, P)` gives all
//! cross covariances as `k(p, q) − S_pᵀ S_q + b_p b_q / 1ᵀA⁻¹1` with
//! `b_p = 1 − (L⁻¹1)ᵀ S_p`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INPUT_DIM: usize = 2;

/// A physical input `x` together with a fidelity level `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointPoint {
    pub x: [f64; INPUT_DIM],
    pub t: f64,
}

impl JointPoint {
    pub fn new(x: [f64; INPUT_DIM], t: f64) -> Self {
        Self { x, t }
    }
}

/// Observations `(x_i, t_i; z_i)` with the noise variance `λ(x_i, t_i)` of each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationSet {
    points: Vec<JointPoint>,
    values: Vec<f64>,
    noise_vars: Vec<f64>,
}

impl ObservationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(points: Vec<JointPoint>, values: Vec<f64>, noise_vars: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() || points.len() != noise_vars.len() {
            return Err(Error::Precondition(format!(
                "observation lists differ in length: {} points, {} values, {} noise variances",
                points.len(),
                values.len(),
                noise_vars.len()
            )));
        }
        let mut set = Self::new();
        for ((p, z), v) in points.into_iter().zip(values).zip(noise_vars) {
            set.push(p, z, v)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, point: JointPoint, value: f64, noise_var: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Precondition(format!("observed value {value} is not finite")));
        }
        if !(noise_var >= 0.0) || !noise_var.is_finite() {
            return Err(Error::Precondition(format!("noise variance {noise_var} must be finite and nonnegative")));
        }
        self.points.push(point);
        self.values.push(value);
        self.noise_vars.push(noise_var);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[JointPoint] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn noise_vars(&self) -> &[f64] {
        &self.noise_vars
    }
}

/// Map from the fidelity parameter to the axis the fidelity kernel acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FidelityTransform {
    Log,
    Identity,
}

impl FidelityTransform {
    #[inline]
    pub fn apply(self, t: f64) -> f64 {
        match self {
            FidelityTransform::Log => t.ln(),
            FidelityTransform::Identity => t,
        }
    }
}

#[inline]
fn matern52(h: f64) -> f64 {
    let s = 5f64.sqrt() * h;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// How the covariance couples fidelity levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum FidelityKernel {
    /// `k = σ² r_x(x, x′) r_t(g(t), g(t′))`, `r_t` a one-dimensional
    /// Matérn-5/2 correlation over the transformed fidelity.
    Separable { lengthscale: f64, transform: FidelityTransform },
    /// `k = σ² r_x(x, x′) + σ_ε² r_ε(x, x′) min(t, t′)^L`: a limit `ξ(x, 0)`
    /// plus a discrepancy that vanishes as `t → 0`, with increments of
    /// variance growing like `t^L`.
    Convergent { variance: f64, lengthscales: [f64; INPUT_DIM], exponent: f64 },
}

/// Matérn-5/2 covariance over the inputs (anisotropic, geometric), combined
/// with a fidelity structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub variance: f64,
    pub input_lengthscales: [f64; INPUT_DIM],
    pub fidelity: FidelityKernel,
}

#[inline]
fn scaled_distance(p: &[f64; INPUT_DIM], q: &[f64; INPUT_DIM], inv: &[f64; INPUT_DIM]) -> f64 {
    let mut d2 = 0.0;
    for k in 0..INPUT_DIM {
        let d = (p[k] - q[k]) * inv[k];
        d2 += d * d;
    }
    d2.sqrt()
}

impl KernelSpec {
    pub fn separable(variance: f64, input_lengthscales: [f64; INPUT_DIM], lengthscale: f64, transform: FidelityTransform) -> Self {
        Self { variance, input_lengthscales, fidelity: FidelityKernel::Separable { lengthscale, transform } }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let fidelity_ok = match self.fidelity {
            FidelityKernel::Separable { lengthscale, .. } => positive(lengthscale),
            FidelityKernel::Convergent { variance, lengthscales, exponent } => {
                positive(variance) && lengthscales.iter().all(|&l| positive(l)) && positive(exponent)
            }
        };
        if !positive(self.variance) || !self.input_lengthscales.iter().all(|&l| positive(l)) || !fidelity_ok {
            return Err(Error::Precondition(format!("kernel parameters must be positive: {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, p: &JointPoint, q: &JointPoint) -> f64 {
        let inv = self.input_lengthscales.map(|l| 1.0 / l);
        let base = self.variance * matern52(scaled_distance(&p.x, &q.x, &inv));
        match self.fidelity {
            FidelityKernel::Separable { lengthscale, transform } => {
                base * matern52((transform.apply(p.t) - transform.apply(q.t)).abs() / lengthscale)
            }
            FidelityKernel::Convergent { variance, lengthscales, exponent } => {
                let inv_e = lengthscales.map(|l| 1.0 / l);
                base + variance * matern52(scaled_distance(&p.x, &q.x, &inv_e)) * p.t.min(q.t).powf(exponent)
            }
        }
    }

    /// Gram matrix `k(P, Q)`.
    pub fn cross(&self, ps: &[JointPoint], qs: &[JointPoint]) -> DMatrix<f64> {
        let inv = self.input_lengthscales.map(|l| 1.0 / l);
        match self.fidelity {
            FidelityKernel::Separable { lengthscale, transform } => {
                let gp: Vec<f64> = ps.iter().map(|p| transform.apply(p.t)).collect();
                let gq: Vec<f64> = qs.iter().map(|q| transform.apply(q.t)).collect();
                DMatrix::from_fn(ps.len(), qs.len(), |i, j| {
                    let r = matern52(scaled_distance(&ps[i].x, &qs[j].x, &inv));
                    self.variance * r * matern52((gp[i] - gq[j]).abs() / lengthscale)
                })
            }
            FidelityKernel::Convergent { variance, lengthscales, exponent } => {
                // min(t, t′)^L = min(t^L, t′^L)
                let inv_e = lengthscales.map(|l| 1.0 / l);
                let wp: Vec<f64> = ps.iter().map(|p| p.t.powf(exponent)).collect();
                let wq: Vec<f64> = qs.iter().map(|q| q.t.powf(exponent)).collect();
                DMatrix::from_fn(ps.len(), qs.len(), |i, j| {
                    let (p, q) = (&ps[i].x, &qs[j].x);
                    self.variance * matern52(scaled_distance(p, q, &inv))
                        + variance * matern52(scaled_distance(p, q, &inv_e)) * wp[i].min(wq[j])
                })
            }
        }
    }
}

/// Initial and maximal diagonal jitter, relative to the kernel variance.
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-6;

/// Cholesky factor of `K + Λ + jitter·σ² I`, escalating the jitter tenfold up
/// to `JITTER_MAX` before giving up.
pub fn factorize(kernel: &KernelSpec, data: &ObservationSet) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let pts = data.points();
    let n = pts.len();
    let mut a = kernel.cross(pts, pts);
    for (i, &v) in data.noise_vars().iter().enumerate() {
        a[(i, i)] += v;
    }
    let mut jitter = JITTER_START;
    loop {
        let mut aj = a.clone();
        for i in 0..n {
            aj[(i, i)] += jitter * kernel.variance;
        }
        if let Some(chol) = Cholesky::new(aj) {
            return Ok((chol, jitter * kernel.variance));
        }
        if jitter >= JITTER_MAX * (1.0 - 1e-9) {
            return Err(Error::IllConditioned { jitter: jitter * kernel.variance });
        }
        jitter *= 10.0;
    }
}

const SOLVE_BLOCK: usize = 64;

/// `B ← L⁻¹ B` for lower-triangular `L`, by row blocks so that the bulk of
/// the work is a matrix product. Only the lower triangle of `l` is read.
fn solve_lower_blocked(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    let mut k0 = 0;
    while k0 < n {
        let kb = SOLVE_BLOCK.min(n - k0);
        let mut head = b.rows(k0, kb).into_owned();
        l.view((k0, k0), (kb, kb)).solve_lower_triangular_mut(&mut head);
        b.rows_mut(k0, kb).copy_from(&head);
        let rest = n - k0 - kb;
        if rest > 0 {
            b.rows_mut(k0 + kb, rest).gemm(-1.0, &l.view((k0 + kb, k0), (rest, kb)), &head, 1.0);
        }
        k0 += kb;
    }
}

/// Fitted ordinary-kriging posterior. Immutable once built.
#[derive(Debug, Clone)]
pub struct PosteriorGP {
    kernel: KernelSpec,
    data: ObservationSet,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    /// `L⁻¹ 1`
    ones_solved: DVector<f64>,
    /// `1ᵀA⁻¹1`
    ones_precision: f64,
    mean: f64,
    /// `A⁻¹ (z − m̂ 1)`
    weights: DVector<f64>,
}

/// Triangular solves of a batch of query points against the training set.
#[derive(Debug, Clone)]
pub struct CrossSolve {
    pub points: Vec<JointPoint>,
    /// `L⁻¹ k(X, P)`, one column per point.
    pub solved: DMatrix<f64>,
    /// `1 − (L⁻¹1)ᵀ S_p` per point.
    pub mean_gap: DVector<f64>,
}

impl PosteriorGP {
    /// Fit the ordinary-kriging posterior to `data`.
    pub fn fit(kernel: KernelSpec, data: ObservationSet) -> Result<Self> {
        kernel.validate()?;
        if data.is_empty() {
            return Err(Error::Precondition(
                "the constant-mean posterior needs at least one observation".into(),
            ));
        }
        let (chol, jitter) = factorize(&kernel, &data)?;
        let n = data.len();
        // l_dirty is enough: the triangular solves only read the lower triangle.
        let l = chol.l_dirty();
        let mut ones_solved = DVector::from_element(n, 1.0);
        l.solve_lower_triangular_mut(&mut ones_solved);
        let mut z_solved = DVector::from_column_slice(data.values());
        l.solve_lower_triangular_mut(&mut z_solved);
        let ones_precision = ones_solved.dot(&ones_solved);
        let mean = ones_solved.dot(&z_solved) / ones_precision;
        let mut weights = z_solved - &ones_solved * mean;
        l.tr_solve_lower_triangular_mut(&mut weights);
        Ok(Self { kernel, data, chol, jitter, ones_solved, ones_precision, mean, weights })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn data(&self) -> &ObservationSet {
        &self.data
    }

    /// GLS estimate of the constant mean.
    pub fn mean_estimate(&self) -> f64 {
        self.mean
    }

    /// `1ᵀA⁻¹1`, the precision of the mean estimate.
    pub fn mean_precision(&self) -> f64 {
        self.ones_precision
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn cross_column(&self, p: &JointPoint) -> DVector<f64> {
        DVector::from_iterator(self.data.len(), self.data.points().iter().map(|x| self.kernel.eval(x, p)))
    }

    /// Posterior mean `m_n(p)`.
    pub fn posterior_mean(&self, p: &JointPoint) -> f64 {
        self.mean + self.cross_column(p).dot(&self.weights)
    }

    /// Posterior covariance `k_n(p, q)`.
    pub fn posterior_cov(&self, p: &JointPoint, q: &JointPoint) -> f64 {
        let batch = self.cross_solve(&[*p, *q]);
        self.cov_from(&batch, 0, &batch, 1)
    }

    /// Posterior variance `k_n(p, p)`, clamped at zero.
    pub fn posterior_var(&self, p: &JointPoint) -> f64 {
        let batch = self.cross_solve(std::slice::from_ref(p));
        self.var_from(&batch, 0)
    }

    /// Solve a batch of points once, for reuse in many covariance evaluations.
    pub fn cross_solve(&self, points: &[JointPoint]) -> CrossSolve {
        let mut solved = self.kernel.cross(self.data.points(), points);
        solve_lower_blocked(self.chol.l_dirty(), &mut solved);
        let mean_gap = DVector::from_iterator(
            points.len(),
            solved.column_iter().map(|c| 1.0 - self.ones_solved.dot(&c)),
        );
        CrossSolve { points: points.to_vec(), solved, mean_gap }
    }

    /// Posterior means for every point of a solved batch.
    pub fn means_from(&self, batch: &CrossSolve) -> Vec<f64> {
        let kxp = self.kernel.cross(self.data.points(), &batch.points);
        (kxp.transpose() * &self.weights).iter().map(|w| self.mean + w).collect()
    }

    /// `k_n(a_i, b_j)` from two solved batches.
    #[inline]
    pub fn cov_from(&self, a: &CrossSolve, i: usize, b: &CrossSolve, j: usize) -> f64 {
        let prior = self.kernel.eval(&a.points[i], &b.points[j]);
        let reduction = a.solved.column(i).dot(&b.solved.column(j));
        prior - reduction + a.mean_gap[i] * b.mean_gap[j] / self.ones_precision
    }

    /// `k_n(a_i, a_i)`, clamped at zero.
    #[inline]
    pub fn var_from(&self, a: &CrossSolve, i: usize) -> f64 {
        let v = self.cov_from(a, i, a, i);
        debug_assert!(v >= -1e-8 * self.kernel.variance, "posterior variance {v} negative");
        v.max(0.0)
    }

    /// Full cross-covariance block `k_n(A, B)` (rows `a`, columns `b`).
    pub fn cov_block(&self, a: &CrossSolve, b: &CrossSolve) -> DMatrix<f64> {
        let mut out = self.kernel.cross(&a.points, &b.points);
        out -= a.solved.transpose() * &b.solved;
        let scale = 1.0 / self.ones_precision;
        for j in 0..b.points.len() {
            for i in 0..a.points.len() {
                out[(i, j)] += a.mean_gap[i] * b.mean_gap[j] * scale;
            }
        }
        out
    }
}

/// Negative log restricted likelihood of `data` under `kernel`, i.e. the
/// marginal likelihood with the constant mean integrated out against the flat
/// prior (up to an additive constant).
pub fn neg_log_restricted_likelihood(kernel: &KernelSpec, data: &ObservationSet) -> Result<f64> {
    kernel.validate()?;
    let (chol, _) = factorize(kernel, data)?;
    let n = data.len();
    let l = chol.l_dirty();
    let mut ones = DVector::from_element(n, 1.0);
    l.solve_lower_triangular_mut(&mut ones);
    let mut z = DVector::from_column_slice(data.values());
    l.solve_lower_triangular_mut(&mut z);
    let prec = ones.dot(&ones);
    let mean = ones.dot(&z) / prec;
    let resid = z - ones * mean;
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    Ok(0.5 * resid.dot(&resid) + 0.5 * log_det + 0.5 * prec.ln())
}
