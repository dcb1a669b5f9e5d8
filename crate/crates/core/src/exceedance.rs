//! Posterior statistics of the exceedance probability field.
//!
//! With `ξ | χ_n ~ GP(m_n, k_n)` and Gaussian simulator noise,
//! `p(x) = Φ((ξ(x, t_hf) − z_crit) / √λ(x, t_hf))` has posterior mean
//! `Φ(u_n(x))` and variance `Φ₂(u_n, u_n; r_n(x, x)) − Φ(u_n)²`, where
//!
//! ```text
//! V_n(x, t)  = λ(x, t) + k_n((x, t), (x, t))
//! u_n(x)     = (m_n(x, t_hf) − z_crit) / √V_n(x, t_hf)
//! r_n(x, x′) = k_n((x, t_hf), (x′, t_hf)) / √(V_n(x, t_hf) V_n(x′, t_hf))
//! ```
//!
//! The integrated variance `H_n = ∫ Var_n(p) dμ` is the uncertainty measure
//! driving the sequential design.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{CrossSolve, JointPoint, PosteriorGP, INPUT_DIM};
use crate::grid::RegularGrid;
use crate::noise::NoiseFunction;
use crate::stats::{binorm_excess_diag, phi_cdf, Correlation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub z_crit: f64,
    /// Highest fidelity level (smallest time step).
    pub t_hf: f64,
}

impl ThresholdSpec {
    /// `z_crit = −3`, `t_hf = 0.01 s`.
    pub fn benchmark() -> Self {
        Self { z_crit: -3.0, t_hf: 0.01 }
    }
}

/// Finite measure `μ = Σ w_j δ_{x_j}` with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureMeasure {
    nodes: Vec<[f64; INPUT_DIM]>,
    weights: Vec<f64>,
}

impl QuadratureMeasure {
    pub fn new(nodes: Vec<[f64; INPUT_DIM]>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Precondition("quadrature measure has no nodes".into()));
        }
        if nodes.len() != weights.len() {
            return Err(Error::Precondition("quadrature nodes and weights differ in length".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Precondition("quadrature weights must be nonnegative".into()));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!("quadrature weights sum to {total}, not 1")));
        }
        Ok(Self { nodes, weights })
    }

    /// Equal weights on every node of `grid`.
    pub fn uniform(grid: &RegularGrid) -> Self {
        let nodes = grid.nodes();
        let w = 1.0 / nodes.len() as f64;
        let weights = vec![w; nodes.len()];
        Self { nodes, weights }
    }

    /// Unit mass at one point.
    pub fn dirac(x: [f64; INPUT_DIM]) -> Self {
        Self { nodes: vec![x], weights: vec![1.0] }
    }

    pub fn nodes(&self) -> &[[f64; INPUT_DIM]] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Weighted sum `Σ w_j f_j` in node order.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.weights.len());
        compensated_sum(self.weights.iter().zip(values).map(|(w, v)| w * v))
    }
}

/// Kahan–Babuška (Neumaier) summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// The exceedance field of a fitted posterior.
#[derive(Clone, Copy)]
pub struct ExceedanceField<'a> {
    pub gp: &'a PosteriorGP,
    pub noise: &'a dyn NoiseFunction,
    pub threshold: ThresholdSpec,
}

impl std::fmt::Debug for ExceedanceField<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExceedanceField").field("threshold", &self.threshold).finish_non_exhaustive()
    }
}

/// Posterior summaries of `p` on every node of a measure, together with the
/// node-side solves needed to evaluate the sampling criterion.
#[derive(Debug, Clone)]
pub struct NodeSummary {
    pub solve: CrossSolve,
    /// `V_n(y_j, t_hf)`
    pub total_var: Vec<f64>,
    /// `u_n(y_j)`
    pub u: Vec<f64>,
    /// `r_n(y_j, y_j)`
    pub r: Vec<f64>,
    /// `Φ(u_n(y_j))`
    pub prob_mean: Vec<f64>,
    /// `Var_n(p(y_j))`
    pub prob_var: Vec<f64>,
    /// `H_n`
    pub uncertainty: f64,
    /// `Σ w_j Φ(u_n(y_j))`
    pub global_prob: f64,
}

impl<'a> ExceedanceField<'a> {
    pub fn new(gp: &'a PosteriorGP, noise: &'a dyn NoiseFunction, threshold: ThresholdSpec) -> Self {
        Self { gp, noise, threshold }
    }

    fn hf(&self, x: &[f64; INPUT_DIM]) -> JointPoint {
        JointPoint::new(*x, self.threshold.t_hf)
    }

    /// `V_n(p) = λ(p) + k_n(p, p)`.
    pub fn total_variance(&self, p: &JointPoint) -> Result<f64> {
        let v = self.noise.variance(&p.x, p.t) + self.gp.posterior_var(p);
        check_total_var(v, p)
    }

    /// `u_n(x)`.
    pub fn u_value(&self, x: &[f64; INPUT_DIM]) -> Result<f64> {
        let p = self.hf(x);
        let v = self.total_variance(&p)?;
        Ok((self.gp.posterior_mean(&p) - self.threshold.z_crit) / v.sqrt())
    }

    /// `r_n(x, x′)`.
    pub fn r_value(&self, x: &[f64; INPUT_DIM], y: &[f64; INPUT_DIM]) -> Result<Correlation> {
        let (p, q) = (self.hf(x), self.hf(y));
        let vp = self.total_variance(&p)?;
        let vq = self.total_variance(&q)?;
        Correlation::new(self.gp.posterior_cov(&p, &q) / (vp * vq).sqrt())
    }

    /// `E_n p(x) = Φ(u_n(x))`.
    pub fn prob_mean(&self, x: &[f64; INPUT_DIM]) -> Result<f64> {
        Ok(phi_cdf(self.u_value(x)?))
    }

    /// `Var_n p(x) = Φ₂(u_n, u_n; r_n(x, x)) − Φ(u_n)²`.
    pub fn prob_variance(&self, x: &[f64; INPUT_DIM]) -> Result<f64> {
        let u = self.u_value(x)?;
        let r = self.r_value(x, x)?;
        Ok(binorm_excess_diag(u, r).max(0.0))
    }

    /// Evaluate every posterior summary on the nodes of `measure` in one
    /// batch.
    pub fn summarize(&self, measure: &QuadratureMeasure) -> Result<NodeSummary> {
        if measure.is_empty() {
            return Err(Error::Precondition("empty quadrature measure".into()));
        }
        let points: Vec<JointPoint> = measure.nodes().iter().map(|x| self.hf(x)).collect();
        let solve = self.gp.cross_solve(&points);
        let means = self.gp.means_from(&solve);
        let m = points.len();
        let mut total_var = Vec::with_capacity(m);
        let mut u = Vec::with_capacity(m);
        let mut r = Vec::with_capacity(m);
        let mut prob_mean = Vec::with_capacity(m);
        let mut prob_var = Vec::with_capacity(m);
        for (j, p) in points.iter().enumerate() {
            let latent = self.gp.var_from(&solve, j);
            let v = check_total_var(self.noise.variance(&p.x, p.t) + latent, p)?;
            let uj = (means[j] - self.threshold.z_crit) / v.sqrt();
            let rj = Correlation::new(latent / v)?;
            total_var.push(v);
            u.push(uj);
            r.push(rj.value());
            prob_mean.push(phi_cdf(uj));
            prob_var.push(binorm_excess_diag(uj, rj).max(0.0));
        }
        let uncertainty = measure.integrate(&prob_var);
        let global_prob = measure.integrate(&prob_mean);
        Ok(NodeSummary { solve, total_var, u, r, prob_mean, prob_var, uncertainty, global_prob })
    }

    /// `H_n = ∫ Var_n(p) dμ`.
    pub fn uncertainty_h(&self, measure: &QuadratureMeasure) -> Result<f64> {
        Ok(self.summarize(measure)?.uncertainty)
    }

    /// `P̂_n = ∫ Φ(u_n) dμ`, the posterior mean of the global probability when
    /// `μ = P_X`.
    pub fn global_prob_estimate(&self, measure: &QuadratureMeasure) -> Result<f64> {
        Ok(self.summarize(measure)?.global_prob)
    }

    /// `G · H_n`, an upper bound on `Var_n(P)` for any input distribution with
    /// density `g` relative to `μ`, where `G = ∫ g² dμ`.
    pub fn global_prob_variance_bound(&self, measure: &QuadratureMeasure, g: f64) -> Result<f64> {
        if !(g >= 0.0) {
            return Err(Error::Precondition(format!("density-ratio constant G = {g} must be nonnegative")));
        }
        Ok(g * self.uncertainty_h(measure)?)
    }
}

fn check_total_var(v: f64, p: &JointPoint) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Invariant(format!(
            "V_n = {v} is not positive at x = {:?}, t = {}",
            p.x, p.t
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{FidelityTransform, KernelSpec, ObservationSet};
    use crate::noise::ConstantNoise;

    fn kernel() -> KernelSpec {
        KernelSpec::separable(1.0, [5.0, 0.3], 2.0, FidelityTransform::Log)
    }

    fn fitted(obs: &[([f64; 2], f64, f64)], lambda: f64) -> PosteriorGP {
        let mut data = ObservationSet::new();
        for &(x, t, z) in obs {
            data.push(JointPoint::new(x, t), z, lambda).unwrap();
        }
        PosteriorGP::fit(kernel(), data).unwrap()
    }

    #[test]
    fn u_is_zero_at_threshold_and_one_at_one_sd() {
        let noise = ConstantNoise::uniform(0.25);
        let gp = fitted(&[([10.0, 0.5], 0.01, -3.0)], 0.25);
        let f = ExceedanceField::new(&gp, &noise, ThresholdSpec::benchmark());
        let x = [10.0, 0.5];
        let p = JointPoint::new(x, 0.01);
        let shift = f.total_variance(&p).unwrap().sqrt();
        let th = ThresholdSpec { z_crit: gp.posterior_mean(&p) - shift, t_hf: 0.01 };
        let f1 = ExceedanceField::new(&gp, &noise, th);
        assert!((f1.u_value(&x).unwrap() - 1.0).abs() < 1e-12);
        let th0 = ThresholdSpec { z_crit: gp.posterior_mean(&p), t_hf: 0.01 };
        let f0 = ExceedanceField::new(&gp, &noise, th0);
        assert_eq!(f0.u_value(&x).unwrap(), 0.0);
        assert!((f0.prob_mean(&x).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_gives_unit_self_correlation() {
        let gp = fitted(&[([3.0, 0.2], 0.5, 1.0), ([20.0, 0.8], 0.01, -4.0)], 0.0);
        let noise = ConstantNoise::uniform(0.0);
        let f = ExceedanceField::new(&gp, &noise, ThresholdSpec::benchmark());
        let x = [10.0, 0.5];
        assert_eq!(f.r_value(&x, &x).unwrap().value(), 1.0);
        // with λ = 0, Var p = Φ(u)(1 − Φ(u)) exactly
        let pm = f.prob_mean(&x).unwrap();
        assert!((f.prob_variance(&x).unwrap() - pm * (1.0 - pm)).abs() < 1e-12);
    }

    #[test]
    fn comonotone_variance_at_threshold_is_quarter() {
        let gp = fitted(&[([3.0, 0.2], 0.5, 1.0)], 0.0);
        let x = [25.0, 0.9];
        let p = JointPoint::new(x, 0.01);
        let noise = ConstantNoise::uniform(0.0);
        let th = ThresholdSpec { z_crit: gp.posterior_mean(&p), t_hf: 0.01 };
        let f = ExceedanceField::new(&gp, &noise, th);
        assert!((f.prob_variance(&x).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn resolved_latent_mean_has_no_variance() {
        // a huge number of replicated noisy runs at x pins ξ(x, t_hf) down
        let x = [12.0, 0.4];
        let mut data = ObservationSet::new();
        for i in 0..50 {
            data.push(JointPoint::new(x, 0.01), -2.0 + 0.01 * (i % 3) as f64, 1e-6).unwrap();
        }
        let gp = PosteriorGP::fit(kernel(), data).unwrap();
        let noise = ConstantNoise::uniform(0.5);
        let f = ExceedanceField::new(&gp, &noise, ThresholdSpec::benchmark());
        assert!(f.r_value(&x, &x).unwrap().value() < 1e-6);
        assert!(f.prob_variance(&x).unwrap() < 1e-6);
    }

    #[test]
    fn measure_validation_and_degenerate_cases() {
        assert!(QuadratureMeasure::new(vec![], vec![]).is_err());
        assert!(QuadratureMeasure::new(vec![[0.0, 0.0]], vec![0.5]).is_err());
        assert!(QuadratureMeasure::new(vec![[0.0, 0.0], [1.0, 0.0]], vec![1.5, -0.5]).is_err());

        let gp = fitted(&[([3.0, 0.2], 0.5, 1.0), ([20.0, 0.8], 0.1, -4.0)], 0.1);
        let noise = ConstantNoise::uniform(0.1);
        let f = ExceedanceField::new(&gp, &noise, ThresholdSpec::benchmark());
        let x = [14.0, 0.6];
        let h = f.uncertainty_h(&QuadratureMeasure::dirac(x)).unwrap();
        assert!((h - f.prob_variance(&x).unwrap()).abs() < 1e-15);
        assert!((0.0..=0.25).contains(&h));
        let bound = f.global_prob_variance_bound(&QuadratureMeasure::dirac(x), 1.0).unwrap();
        assert_eq!(bound, h);
    }

    #[test]
    fn compensated_sum_is_order_insensitive() {
        let vals: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-7 + 1e8 * ((i == 17) as u8 as f64)).collect();
        let fwd = compensated_sum(vals.iter().copied());
        let rev = compensated_sum(vals.iter().rev().copied());
        assert!((fwd - rev).abs() <= 1e-12 * fwd.abs());
    }
}
