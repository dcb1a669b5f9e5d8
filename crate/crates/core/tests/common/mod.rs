//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::excessive_precision)]

use msur::exceedance::{ExceedanceField, QuadratureMeasure, ThresholdSpec};
use msur::gp::{FidelityKernel, FidelityTransform, JointPoint, KernelSpec, ObservationSet, PosteriorGP};
use msur::grid::{InputBox, NodePlacement, RegularGrid};
use msur::noise::{ConstantNoise, NoiseFunction};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights at XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = 0.0;
    let mut g = 0.0;
    for i in 0..8 {
        let pair = if i == 7 { f(c) } else { f(c - h * XGK[i]) + f(c + h * XGK[i]) };
        k += WGK[i] * pair;
        if i % 2 == 1 {
            g += WG[i / 2] * pair;
        }
    }
    (k * h, (k - g).abs() * h)
}

fn adapt<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (k, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return k;
    }
    let c = 0.5 * (a + b);
    adapt(f, a, c, 0.5 * tol, depth - 1) + adapt(f, c, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss–Kronrod (7/15) quadrature of `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    adapt(&mut f, a, b, tol, 40)
}

const TAIL: f64 = -10.0;

/// `Φ(z)` by quadrature of the density.
pub fn normal_cdf_quadrature(z: f64) -> f64 {
    let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    integrate(|x| c * (-0.5 * x * x).exp(), -40.0, z, 1e-15)
}

/// `Φ₂(u, v; ρ)` by nested two-dimensional quadrature of the bivariate
/// density over `[−10, u] × [−10, v]`.
pub fn binorm_quadrature(u: f64, v: f64, rho: f64) -> f64 {
    let s2 = 1.0 - rho * rho;
    let s = s2.sqrt();
    let c = 1.0 / (2.0 * std::f64::consts::PI * s);
    integrate(
        |x| {
            let lo = TAIL.max(rho * x - 12.0 * s);
            let hi = v.min(rho * x + 12.0 * s);
            integrate(|y| c * (-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * s2)).exp(), lo, hi, 1e-14)
        },
        TAIL,
        u,
        1e-13,
    )
}

/// Ordinary kriging from the bordered (Lagrangian) system
/// `[[A, 1], [1ᵀ, 0]]`, solved by explicit inversion.
pub struct DenseKriging {
    kernel: KernelSpec,
    points: Vec<JointPoint>,
    values: DVector<f64>,
    bordered_inv: DMatrix<f64>,
}

impl DenseKriging {
    pub fn new(kernel: KernelSpec, data: &ObservationSet, jitter: f64) -> Self {
        let n = data.len();
        let pts = data.points().to_vec();
        let mut b = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = kernel.eval(&pts[i], &pts[j]);
            }
            b[(i, i)] += data.noise_vars()[i] + jitter;
            b[(i, n)] = 1.0;
            b[(n, i)] = 1.0;
        }
        let bordered_inv = b.try_inverse().expect("bordered kriging system is singular");
        Self { kernel, points: pts, values: DVector::from_column_slice(data.values()), bordered_inv }
    }

    fn rhs(&self, p: &JointPoint) -> DVector<f64> {
        let n = self.points.len();
        DVector::from_fn(n + 1, |i, _| if i < n { self.kernel.eval(&self.points[i], p) } else { 1.0 })
    }

    /// Kriging weights for `p` (they sum to one).
    pub fn weights(&self, p: &JointPoint) -> DVector<f64> {
        let n = self.points.len();
        (&self.bordered_inv * self.rhs(p)).rows(0, n).into_owned()
    }

    pub fn mean(&self, p: &JointPoint) -> f64 {
        self.weights(p).dot(&self.values)
    }

    pub fn cov(&self, p: &JointPoint, q: &JointPoint) -> f64 {
        let rp = self.rhs(p);
        let rq = self.rhs(q);
        self.kernel.eval(p, q) - rp.dot(&(&self.bordered_inv * rq))
    }

    /// GLS constant-mean estimate: the mean of the bordered solution with
    /// right-hand side `(0, 1)`.
    pub fn mean_estimate(&self) -> f64 {
        let n = self.points.len();
        let mut e = DVector::zeros(n + 1);
        e[n] = 1.0;
        (&self.bordered_inv * e).rows(0, n).dot(&self.values)
    }
}

pub fn relative_error(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(b.abs()).max(1e-300)
}

/// A Matérn kernel in one of the three supported forms, with moderate random
/// hyper-parameters on the oscillator box.
pub fn random_kernel<R: Rng + ?Sized>(rng: &mut R, form: usize) -> KernelSpec {
    let variance = rng.random_range(0.5..4.0);
    let ls = [rng.random_range(3.0..15.0), rng.random_range(0.15..0.8)];
    match form % 3 {
        0 => KernelSpec::separable(variance, ls, rng.random_range(0.5..3.0), FidelityTransform::Log),
        1 => KernelSpec::separable(variance, ls, rng.random_range(0.2..1.0), FidelityTransform::Identity),
        _ => KernelSpec {
            variance,
            input_lengthscales: ls,
            fidelity: FidelityKernel::Convergent {
                variance: rng.random_range(1.0..10.0),
                lengthscales: [rng.random_range(3.0..15.0), rng.random_range(0.15..0.8)],
                exponent: rng.random_range(0.5..3.0),
            },
        },
    }
}

pub fn random_point<R: Rng + ?Sized>(rng: &mut R, levels: &[f64]) -> JointPoint {
    let b = InputBox::oscillator();
    let x = b.from_unit([rng.random(), rng.random()]);
    JointPoint::new(x, levels[rng.random_range(0..levels.len())])
}

/// A smooth test response straddling the benchmark threshold.
pub fn response(p: &JointPoint) -> f64 {
    let th = ThresholdSpec::benchmark().z_crit;
    th + 1.5 * (p.x[0] / 6.0).sin() - 2.0 * (p.x[1] - 0.5) + 0.5 * p.t
}

/// `n` random observations of [`response`] plus noise of variance `noise`.
pub fn random_data<R: Rng + ?Sized>(rng: &mut R, n: usize, levels: &[f64], noise: f64) -> ObservationSet {
    let mut data = ObservationSet::new();
    for _ in 0..n {
        let p = random_point(rng, levels);
        let e: f64 = rng.sample(StandardNormal);
        data.push(p, response(&p) + noise.sqrt() * e, noise).unwrap();
    }
    data
}

/// Lower Cholesky factor of a symmetric positive semi-definite matrix, with a
/// small diagonal load.
pub fn sampling_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let load = 1e-10 * cov.diagonal().max().max(1e-300);
    let mut c = cov.clone();
    for i in 0..c.nrows() {
        c[(i, i)] += load;
    }
    c.cholesky().expect("covariance is not positive semi-definite").l()
}

/// One draw of `N(mean, L Lᵀ)`.
pub fn gaussian_draw<R: Rng + ?Sized>(rng: &mut R, mean: &[f64], factor: &DMatrix<f64>) -> Vec<f64> {
    let e = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = factor * e;
    mean.iter().zip(y.iter()).map(|(m, d)| m + d).collect()
}

/// `Φ` via the C library `erfc`, bypassing the crate's wrappers.
pub fn phi_libm(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn fitted(kernel: KernelSpec, data: ObservationSet) -> PosteriorGP {
    PosteriorGP::fit(kernel, data).expect("fit failed")
}

/// Sample mean and the standard error of that mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub const SCENARIO_LEVELS: [f64; 4] = [1.0, 0.2, 0.05, 0.01];

/// A fitted posterior on the oscillator box with level-wise constant noise
/// and a uniform grid measure.
pub struct Scenario {
    pub gp: PosteriorGP,
    pub noise: ConstantNoise,
    pub measure: QuadratureMeasure,
    pub threshold: ThresholdSpec,
}

impl Scenario {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, n: usize, form: usize, grid: [usize; 2]) -> Self {
        let noise = ConstantNoise::new(vec![(1.0, 0.4), (0.2, 0.25), (0.05, 0.15), (0.01, 0.1)]).unwrap();
        let kernel = random_kernel(rng, form);
        let mut data = ObservationSet::new();
        for _ in 0..n {
            let p = random_point(rng, &SCENARIO_LEVELS);
            let lambda = noise.variance(&p.x, p.t);
            let e: f64 = rng.sample(StandardNormal);
            data.push(p, response(&p) + lambda.sqrt() * e, lambda).unwrap();
        }
        let g = RegularGrid::new(InputBox::oscillator(), grid, NodePlacement::Midpoint).unwrap();
        Self { gp: fitted(kernel, data), noise, measure: QuadratureMeasure::uniform(&g), threshold: ThresholdSpec::benchmark() }
    }

    pub fn field(&self) -> ExceedanceField<'_> {
        ExceedanceField::new(&self.gp, &self.noise, self.threshold)
    }

    pub fn hf(&self, x: [f64; 2]) -> JointPoint {
        JointPoint::new(x, self.threshold.t_hf)
    }

    /// Joint posterior of `ξ(·, t_hf)` on the measure nodes: means and a
    /// sampling factor of the covariance.
    pub fn node_posterior(&self) -> (Vec<f64>, DMatrix<f64>) {
        let pts: Vec<JointPoint> = self.measure.nodes().iter().map(|x| self.hf(*x)).collect();
        let means = pts.iter().map(|p| self.gp.posterior_mean(p)).collect();
        let cov = DMatrix::from_fn(pts.len(), pts.len(), |i, j| self.gp.posterior_cov(&pts[i], &pts[j]));
        (means, sampling_factor(&cov))
    }

    /// `p(x) = P(ξ + ε > z_crit | ξ)` for a realized latent value.
    pub fn probability_given(&self, x: &[f64; 2], xi: f64) -> f64 {
        let lambda = self.noise.variance(x, self.threshold.t_hf);
        phi_libm((xi - self.threshold.z_crit) / lambda.sqrt())
    }
}
