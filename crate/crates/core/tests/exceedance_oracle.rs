mod common;

use common::{gaussian_draw, mean_and_se, DenseKriging, Scenario};
use msur::exceedance::{compensated_sum, QuadratureMeasure};
use msur::grid::InputBox;
use msur::noise::NoiseFunction;
use msur::rng::{substream, Purpose};
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn u_and_r_match_dense_kriging() {
    let mut rng = substream(21, Purpose::Oracle, 0, 0);
    for form in 0..3 {
        let sc = Scenario::new(&mut rng, 12, form, [4, 4]);
        let f = sc.field();
        let oracle = DenseKriging::new(*sc.gp.kernel(), sc.gp.data(), sc.gp.jitter());
        for _ in 0..10 {
            let x = InputBox::oscillator().from_unit([rng.random(), rng.random()]);
            let y = InputBox::oscillator().from_unit([rng.random(), rng.random()]);
            let (px, py) = (sc.hf(x), sc.hf(y));
            let lambda = sc.noise.variance(&x, sc.threshold.t_hf);
            let vx = lambda + oracle.cov(&px, &px);
            let vy = lambda + oracle.cov(&py, &py);
            let u = (oracle.mean(&px) - sc.threshold.z_crit) / vx.sqrt();
            assert!((f.u_value(&x).unwrap() - u).abs() < 1e-9);
            let r = oracle.cov(&px, &py) / (vx * vy).sqrt();
            assert!((f.r_value(&x, &y).unwrap().value() - r).abs() < 1e-9);
            let rd = f.r_value(&x, &x).unwrap().value();
            assert!((0.0..=1.0).contains(&rd));
        }
    }
}

/// Moments of `p(x) = Φ((ξ(x) − z_crit)/√λ)` under the posterior of `ξ`,
/// estimated from independent latent draws.
#[test]
fn probability_moments_match_monte_carlo() {
    let mut rng = substream(22, Purpose::Oracle, 0, 0);
    let sc = Scenario::new(&mut rng, 25, 2, [4, 4]);
    let f = sc.field();
    let draws = 40_000;
    for k in 0..4 {
        let x = InputBox::oscillator().from_unit([0.2 + 0.2 * k as f64, 0.8 - 0.2 * k as f64]);
        let p = sc.hf(x);
        let (m, sd) = (sc.gp.posterior_mean(&p), sc.gp.posterior_var(&p).sqrt());
        let samples: Vec<f64> = (0..draws).map(|_| sc.probability_given(&x, m + sd * rng.sample::<f64, _>(StandardNormal))).collect();
        let (mean, se) = mean_and_se(&samples);
        let want = f.prob_mean(&x).unwrap();
        assert!((mean - want).abs() <= 4.0 * se + 1e-12, "probe {k}: E p {mean} vs {want}");
        let sq: Vec<f64> = samples.iter().map(|s| (s - mean).powi(2)).collect();
        let (var, var_se) = mean_and_se(&sq);
        let want = f.prob_variance(&x).unwrap();
        assert!((var - want).abs() <= 4.0 * var_se + 1e-12, "probe {k}: Var p {var} vs {want}");
    }
}

#[test]
fn summary_matches_pointwise_evaluation() {
    let mut rng = substream(23, Purpose::Oracle, 0, 0);
    let sc = Scenario::new(&mut rng, 20, 0, [5, 2]);
    let f = sc.field();
    let s = f.summarize(&sc.measure).unwrap();
    let mut direct = Vec::new();
    for (j, x) in sc.measure.nodes().iter().enumerate() {
        assert!((s.u[j] - f.u_value(x).unwrap()).abs() < 1e-10);
        assert!((s.prob_mean[j] - f.prob_mean(x).unwrap()).abs() < 1e-12);
        let v = f.prob_variance(x).unwrap();
        assert!((s.prob_var[j] - v).abs() < 1e-12);
        direct.push(v / sc.measure.len() as f64);
    }
    assert!((s.uncertainty - direct.iter().sum::<f64>()).abs() < 1e-14);
    assert!((f.global_prob_estimate(&sc.measure).unwrap() - s.prob_mean.iter().sum::<f64>() / 10.0).abs() < 1e-14);
    assert_eq!(f.global_prob_variance_bound(&sc.measure, 1.0).unwrap(), s.uncertainty);
    assert!(f.global_prob_variance_bound(&sc.measure, -1.0).is_err());
}

#[test]
fn dirac_measure_uncertainty_is_pointwise_variance() {
    let mut rng = substream(24, Purpose::Oracle, 0, 0);
    let sc = Scenario::new(&mut rng, 10, 1, [2, 2]);
    let f = sc.field();
    let x = [12.0, 0.3];
    let h = f.uncertainty_h(&QuadratureMeasure::dirac(x)).unwrap();
    assert!((h - f.prob_variance(&x).unwrap()).abs() < 1e-15);
}

#[test]
fn global_probability_variance_is_bounded_by_uncertainty() {
    let mut rng = substream(25, Purpose::Oracle, 0, 0);
    let sc = Scenario::new(&mut rng, 15, 2, [4, 3]);
    let h = sc.field().uncertainty_h(&sc.measure).unwrap();
    let (means, factor) = sc.node_posterior();
    let draws = 10_000;
    let nodes = sc.measure.nodes();
    let totals: Vec<f64> = (0..draws)
        .map(|_| {
            let xi = gaussian_draw(&mut rng, &means, &factor);
            compensated_sum(nodes.iter().zip(&xi).map(|(x, v)| sc.probability_given(x, *v))) / nodes.len() as f64
        })
        .collect();
    let (m, _) = mean_and_se(&totals);
    let var = totals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
    assert!(var <= h * (1.0 + 4.0 * (2.0 / draws as f64).sqrt()), "Var P {var} > H {h}");
    let p_hat = sc.field().global_prob_estimate(&sc.measure).unwrap();
    assert!((m - p_hat).abs() < 4.0 * (var / draws as f64).sqrt() + 1e-12);
}

#[test]
fn measure_rejects_bad_weights() {
    assert!(QuadratureMeasure::new(vec![[1.0, 0.1], [2.0, 0.2]], vec![0.5, 0.6]).is_err());
    assert!(QuadratureMeasure::new(vec![[1.0, 0.1]], vec![1.0, 0.0]).is_err());
    assert!(QuadratureMeasure::new(vec![], vec![]).is_err());
    assert!(QuadratureMeasure::new(vec![[1.0, 0.1], [2.0, 0.2]], vec![-0.5, 1.5]).is_err());
    assert!(QuadratureMeasure::new(vec![[1.0, 0.1], [2.0, 0.2]], vec![0.25, 0.75]).is_ok());
}
