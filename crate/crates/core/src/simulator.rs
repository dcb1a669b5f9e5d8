//! Stochastic damped harmonic oscillator with a tunable time step.
//!
//! The oscillator `X'' + 2 ζ ω0 X' + ω0² X = W` is driven by white noise of
//! two-sided spectral density `S0` (autocorrelation `2π S0 δ(τ)`) and started
//! from rest. It is integrated over `[0, 30] s` by an explicit exponential
//! Euler scheme
//!
//! ```text
//! Y_{k+1} = exp(A dt) (Y_k + e ΔW_k),   Y = (X, X'),  e = (0, 1),  ΔW_k ~ N(0, 2π S0 dt)
//! ```
//!
//! and the simulator output is `log(max_k |X_k|)` over every node including
//! the initial one. The time step is the fidelity parameter.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exceedance::compensated_sum;
use crate::gp::INPUT_DIM;
use crate::grid::{NodeRecord, RegularGrid};
use crate::noise::{NoiseTable, VARIANCE_FLOOR};
use crate::rng::{substream, Purpose};

/// Time horizon of every trajectory, in seconds.
pub const HORIZON: f64 = 30.0;

/// Value returned in place of `log(0)` when the running maximum never leaves 0.
pub const LOG_FLOOR: f64 = -745.0;

pub const OMEGA_RANGE: (f64, f64) = (0.0, 30.0);
pub const ZETA_RANGE: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorInput {
    pub omega0: f64,
    pub zeta: f64,
    pub dt: f64,
}

impl OscillatorInput {
    pub fn new(omega0: f64, zeta: f64, dt: f64) -> Result<Self> {
        let ok = omega0.is_finite()
            && zeta.is_finite()
            && (OMEGA_RANGE.0..=OMEGA_RANGE.1).contains(&omega0)
            && (ZETA_RANGE.0..=ZETA_RANGE.1).contains(&zeta)
            && dt > 0.0
            && dt <= 1.0;
        if !ok {
            return Err(Error::Domain(format!(
                "oscillator input out of range: omega0={omega0}, zeta={zeta}, dt={dt}"
            )));
        }
        Ok(Self { omega0, zeta, dt })
    }
}

/// Number of integration steps `floor(HORIZON / dt)`.
///
/// A relative slack of 1e-9 absorbs the representation error of decimal time
/// steps: `30 / 0.01` must give 3000 steps, not 2999.
pub fn step_count(dt: f64) -> usize {
    (HORIZON / dt * (1.0 + 1e-9)).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrajectoryState {
    pub position: f64,
    pub velocity: f64,
}

/// Closed-form `exp(A dt)` for `A = [[0, 1], [-ω0², -2 ζ ω0]]`, row major.
///
/// Writing `A = s I + M` with `s = -ζ ω0` gives `M² = q² I`,
/// `q² = ω0² (ζ² - 1)`, hence `exp(A dt) = e^{s dt} (C I + S M)` where
/// `C = cosh(q dt)` and `S = sinh(q dt) / q`, continued analytically to
/// `cos` / `sin` when `q² < 0`. Near `q² dt² = 0` (critical damping or
/// `ω0 = 0`) both are evaluated from their power series.
pub fn transition_matrix(omega0: f64, zeta: f64, dt: f64) -> [[f64; 2]; 2] {
    let s = -zeta * omega0;
    let q2 = omega0 * omega0 * (zeta * zeta - 1.0);
    let x = q2 * dt * dt;
    let (c, sh) = if x.abs() < 1e-2 {
        // cosh(√x) and sinh(√x)/√x through x⁵; truncation error below 1e-20.
        let c = 1.0 + x / 2.0 * (1.0 + x / 12.0 * (1.0 + x / 30.0 * (1.0 + x / 56.0 * (1.0 + x / 90.0))));
        let sh = dt * (1.0 + x / 6.0 * (1.0 + x / 20.0 * (1.0 + x / 42.0 * (1.0 + x / 72.0 * (1.0 + x / 110.0)))));
        (c, sh)
    } else if q2 < 0.0 {
        let beta = (-q2).sqrt();
        ((beta * dt).cos(), (beta * dt).sin() / beta)
    } else {
        let q = q2.sqrt();
        ((q * dt).cosh(), (q * dt).sinh() / q)
    };
    let decay = (s * dt).exp();
    // M = A - sI = [[ζω0, 1], [-ω0², -ζω0]]
    let m00 = zeta * omega0;
    [
        [decay * (c + sh * m00), decay * sh],
        [decay * (-sh * omega0 * omega0), decay * (c - sh * m00)],
    ]
}

/// One exponential Euler step: `exp(A dt) (Y + e ΔW)`.
pub fn exponential_euler_step(
    state: TrajectoryState,
    omega0: f64,
    zeta: f64,
    dt: f64,
    noise_increment: f64,
) -> TrajectoryState {
    let e = transition_matrix(omega0, zeta, dt);
    propagate(&e, state, noise_increment)
}

#[inline(always)]
fn propagate(e: &[[f64; 2]; 2], state: TrajectoryState, dw: f64) -> TrajectoryState {
    let v = state.velocity + dw;
    TrajectoryState {
        position: e[0][0] * state.position + e[0][1] * v,
        velocity: e[1][0] * state.position + e[1][1] * v,
    }
}

/// Which peak statistic of the trajectory the output is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Peak {
    /// `max_k |X_k|`
    Absolute,
    /// `max_k X_k`
    Signed,
}

/// Noise model and output statistic of the benchmark simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    /// Two-sided spectral density `S0` of the forcing.
    pub spectral_density: f64,
    pub peak: Peak,
}

impl Default for Oscillator {
    fn default() -> Self {
        Self { spectral_density: 1.0, peak: Peak::Absolute }
    }
}

impl Oscillator {
    /// Standard deviation of one increment `ΔW` over a step `dt`.
    pub fn increment_sd(&self, dt: f64) -> f64 {
        (2.0 * std::f64::consts::PI * self.spectral_density * dt).sqrt()
    }

    /// Running peak of the discretized position, with the noise increments
    /// supplied by `increment` (each call returns one `ΔW`).
    pub fn running_max_with<F: FnMut() -> f64>(&self, input: &OscillatorInput, mut increment: F) -> f64 {
        let e = transition_matrix(input.omega0, input.zeta, input.dt);
        let mut state = TrajectoryState::default();
        let mut max = 0.0_f64;
        let steps = step_count(input.dt);
        match self.peak {
            Peak::Absolute => {
                for _ in 0..steps {
                    state = propagate(&e, state, increment());
                    max = max.max(state.position.abs());
                }
            }
            Peak::Signed => {
                for _ in 0..steps {
                    state = propagate(&e, state, increment());
                    max = max.max(state.position);
                }
            }
        }
        max
    }

    /// Draw one simulator output `Z(ω0, ζ, dt)` using `rng`.
    pub fn simulate<R: Rng + ?Sized>(&self, input: &OscillatorInput, rng: &mut R) -> f64 {
        let sd = self.increment_sd(input.dt);
        output_from_max(self.running_max_with(input, || {
            let n: f64 = rng.sample(StandardNormal);
            sd * n
        }))
    }

    /// Simulator output on the substream `(master, purpose, a, b)`.
    pub fn simulate_seeded(&self, input: &OscillatorInput, master: u64, purpose: Purpose, a: u64, b: u64) -> f64 {
        let mut rng = substream(master, purpose, a, b);
        self.simulate(input, &mut rng)
    }
}

/// Map a running maximum to the simulator output, clamping `log(0)`.
pub fn output_from_max(max: f64) -> f64 {
    if max > 0.0 {
        max.ln().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    }
}

/// One output of the default benchmark simulator.
pub fn simulate<R: Rng + ?Sized>(input: &OscillatorInput, rng: &mut R) -> f64 {
    Oscillator::default().simulate(input, rng)
}

/// Monte-Carlo estimate of `p(x) = P(Z(x, dt) > z_crit)` at every node of a
/// grid, with equal node weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMap {
    records: Vec<NodeRecord>,
}

impl ReferenceMap {
    /// Run `reps` simulations per node of `grid` at level `dt`. Node `i`,
    /// replication `r` uses substream `(seed, Reference, i, r)`.
    pub fn compute(oscillator: &Oscillator, grid: &RegularGrid, dt: f64, z_crit: f64, reps: u64, seed: u64) -> Result<Self> {
        if reps == 0 {
            return Err(Error::Precondition("reference map needs at least one replication".into()));
        }
        let nodes = grid.nodes();
        let mut records = Vec::with_capacity(nodes.len());
        for (i, x) in nodes.iter().enumerate() {
            let input = OscillatorInput::new(x[0], x[1], dt)?;
            let hits = (0..reps)
                .filter(|&r| oscillator.simulate_seeded(&input, seed, Purpose::Reference, i as u64, r) > z_crit)
                .count();
            let p = hits as f64 / reps as f64;
            records.push(NodeRecord {
                omega0: x[0],
                zeta: x[1],
                dt,
                estimate: p,
                stderr: (p * (1.0 - p) / reps as f64).sqrt(),
                reps,
                seed,
            });
            if (i + 1) % 250 == 0 {
                log::info!("reference map: {}/{} nodes", i + 1, nodes.len());
            }
        }
        Ok(Self { records })
    }

    pub fn from_records(records: Vec<NodeRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Schema("reference map has no rows".into()));
        }
        if records.iter().any(|r| !(0.0..=1.0).contains(&r.estimate)) {
            return Err(Error::Schema("reference probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[NodeRecord] {
        &self.records
    }

    pub fn nodes(&self) -> Vec<[f64; INPUT_DIM]> {
        self.records.iter().map(|r| [r.omega0, r.zeta]).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.estimate).collect()
    }

    /// Equal-weight average of the node estimates.
    pub fn global_probability(&self) -> f64 {
        compensated_sum(self.records.iter().map(|r| r.estimate)) / self.records.len() as f64
    }

    /// Standard error of [`global_probability`](Self::global_probability),
    /// treating nodes as independent.
    pub fn global_stderr(&self) -> f64 {
        let n = self.records.len() as f64;
        compensated_sum(self.records.iter().map(|r| r.stderr * r.stderr)).sqrt() / n
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| Error::MissingReference(format!("{} ({e})", path.display())))?;
        let records = r.deserialize().collect::<std::result::Result<Vec<NodeRecord>, _>>()?;
        Self::from_records(records)
    }
}

/// Pilot replications summarized per level and node.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotStudy {
    /// Sample variances, floored at [`VARIANCE_FLOOR`].
    pub table: NoiseTable,
    /// Sample means, with `stderr` the standard error of the mean.
    pub means: Vec<NodeRecord>,
}

/// Run `reps` replications per level and node of `grid`. Level `l`, node `i`
/// and replication `r` use substream `(seed, Pilot, l·2³² + i, r)`.
pub fn pilot_study(oscillator: &Oscillator, grid: &RegularGrid, levels: &[f64], reps: u64, seed: u64) -> Result<PilotStudy> {
    if reps < 2 {
        return Err(Error::Precondition("a sample variance needs at least two replications".into()));
    }
    let nodes = grid.nodes();
    let mut records = Vec::with_capacity(levels.len() * nodes.len());
    let mut means = Vec::with_capacity(levels.len() * nodes.len());
    let mut z = vec![0.0; reps as usize];
    for (l, &dt) in levels.iter().enumerate() {
        for (i, x) in nodes.iter().enumerate() {
            let input = OscillatorInput::new(x[0], x[1], dt)?;
            let stream = ((l as u64) << 32) | i as u64;
            for (r, zr) in z.iter_mut().enumerate() {
                *zr = oscillator.simulate_seeded(&input, seed, Purpose::Pilot, stream, r as u64);
            }
            let (var, stderr) = sample_variance(&z);
            let mean = compensated_sum(z.iter().copied()) / reps as f64;
            records.push(NodeRecord { omega0: x[0], zeta: x[1], dt, estimate: var.max(VARIANCE_FLOOR), stderr, reps, seed });
            means.push(NodeRecord { omega0: x[0], zeta: x[1], dt, estimate: mean, stderr: (var / reps as f64).sqrt(), reps, seed });
        }
    }
    Ok(PilotStudy { table: NoiseTable::from_records(records)?, means })
}

/// Per-level, per-node sample variance of `reps` replicated outputs on
/// `grid`, floored at [`VARIANCE_FLOOR`].
pub fn pilot_noise_table(oscillator: &Oscillator, grid: &RegularGrid, levels: &[f64], reps: u64, seed: u64) -> Result<NoiseTable> {
    Ok(pilot_study(oscillator, grid, levels, reps, seed)?.table)
}

/// Unbiased sample variance and its large-sample standard error
/// `sqrt((m4 − s⁴ (n − 3)/(n − 1)) / n)`.
pub fn sample_variance(z: &[f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let mean = compensated_sum(z.iter().copied()) / n;
    let m2 = compensated_sum(z.iter().map(|v| (v - mean).powi(2))) / n;
    let m4 = compensated_sum(z.iter().map(|v| (v - mean).powi(4))) / n;
    let s2 = m2 * n / (n - 1.0);
    let se2 = (m4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n;
    (s2, se2.max(0.0).sqrt())
}
