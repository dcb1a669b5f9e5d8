//! Benchmark protocol: nested initial design, pilot noise table, frozen
//! hyper-parameters, then sequential design under a cost budget with either a
//! single-level SUR strategy or MSUR, repeated with derived seeds.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::design::{generate_nested_design, sample_candidates, NestedDesign};
use crate::error::{Error, Result};
use crate::exceedance::{ExceedanceField, QuadratureMeasure, ThresholdSpec};
use crate::gp::{neg_log_restricted_likelihood, FidelityKernel, FidelityTransform, JointPoint, KernelSpec, ObservationSet, PosteriorGP};
use crate::grid::{InputBox, NodePlacement, NodeRecord, RegularGrid};
use crate::noise::{NoiseFunction, NoiseTable};
use crate::rng::{derive_seed, substream, Purpose};
use crate::simulator::{pilot_study, Oscillator, OscillatorInput, ReferenceMap, LOG_FLOOR};
use crate::sur::{select_msur, select_sur, CandidateLevel, CandidateSet, CostModel, SurContext};

pub const SCHEMA_VERSION: u32 = 1;

pub const BENCHMARK_FIDELITIES: [f64; 10] = [1.0, 0.5, 0.33, 0.25, 0.2, 0.17, 0.1, 0.05, 0.02, 0.01];

pub const BENCHMARK_INITIAL_SIZES: [usize; 5] = [180, 60, 20, 10, 5];

/// Slack allowed when comparing accumulated costs with the budget.
const BUDGET_SLACK: f64 = 1e-9;

/// Sequential design policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    /// SUR with every point on one fixed level.
    SingleLevel(f64),
    Msur,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("msur") {
            return Ok(Strategy::Msur);
        }
        let level = s
            .strip_prefix("sl:")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|t| *t > 0.0)
            .ok_or_else(|| Error::Precondition(format!("strategy must be `msur` or `sl:<dt>`, got `{s}`")))?;
        Ok(Strategy::SingleLevel(level))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::SingleLevel(t) => write!(f, "sl:{t}"),
            Strategy::Msur => f.write_str("msur"),
        }
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotConfig {
    /// Inclusive grid over the input box.
    pub grid: [usize; 2],
    pub reps: u64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self { grid: [5, 5], reps: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub kernel: KernelForm,
    /// Add the pilot node means to the initial design when fitting.
    pub pilot_means: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { kernel: KernelForm::Convergent, pilot_means: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub dt: f64,
    pub reps: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { dt: 0.01, reps: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub strategy: Strategy,
    /// Strictly decreasing fidelity levels; the last is `t_hf`.
    pub fidelities: Vec<f64>,
    /// Nested initial design sizes on the first (lowest-fidelity) levels.
    pub initial_sizes: Vec<usize>,
    /// Cost budget for the sequential points.
    pub budget: f64,
    pub repetitions: usize,
    pub candidates_per_level: usize,
    /// Quadrature and reference grid (midpoint nodes).
    pub grid: [usize; 2],
    /// Reference map; `<out>/reference.csv` when absent.
    pub reference: Option<PathBuf>,
    /// Frozen model state; `<out>/model.toml` when absent.
    pub model: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    /// Write per-candidate criterion tables.
    pub audit: bool,
    pub cost: CostModel,
    pub threshold: ThresholdSpec,
    pub oscillator: Oscillator,
    pub pilot: PilotConfig,
    pub fit: FitConfig,
    #[serde(rename = "reference_run")]
    pub reference_run: ReferenceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            strategy: Strategy::Msur,
            fidelities: BENCHMARK_FIDELITIES.to_vec(),
            initial_sizes: BENCHMARK_INITIAL_SIZES.to_vec(),
            budget: 20.0,
            repetitions: 12,
            candidates_per_level: 500,
            grid: [50, 50],
            reference: None,
            model: None,
            seed: 0,
            out: PathBuf::from("out"),
            audit: false,
            cost: CostModel::benchmark(),
            threshold: ThresholdSpec::benchmark(),
            oscillator: Oscillator::default(),
            pilot: PilotConfig::default(),
            fit: FitConfig::default(),
            reference_run: ReferenceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Precondition(m));
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("config schema {} (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return bad(format!("budget must be nonnegative, got {}", self.budget));
        }
        if self.repetitions == 0 || self.candidates_per_level == 0 {
            return bad("repetitions and candidates_per_level must be at least 1".into());
        }
        if self.fidelities.is_empty() || self.fidelities.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return bad(format!("fidelity levels must lie in (0, 1], got {:?}", self.fidelities));
        }
        if self.fidelities.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("fidelity grid must be strictly decreasing, got {:?}", self.fidelities));
        }
        if self.initial_sizes.is_empty() || self.initial_sizes.len() > self.fidelities.len() {
            return bad(format!("{} initial levels for {} fidelities", self.initial_sizes.len(), self.fidelities.len()));
        }
        if self.threshold.t_hf != *self.fidelities.last().unwrap() {
            return bad(format!("t_hf = {} is not the finest fidelity level", self.threshold.t_hf));
        }
        if let Strategy::SingleLevel(t) = self.strategy {
            self.level_index(t)?;
        }
        if self.seed > i64::MAX as u64 {
            return bad("seed must fit in a signed 64-bit integer".into());
        }
        if self.grid.contains(&0) || self.pilot.grid.contains(&0) || self.pilot.reps < 2 {
            return bad("grids need positive sizes and the pilot at least two replications".into());
        }
        CostModel::new(self.cost.a, self.cost.b)?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn reference_path(&self) -> PathBuf {
        self.reference.clone().unwrap_or_else(|| self.out.join("reference.csv"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out.join("model.toml"))
    }

    pub fn level_index(&self, t: f64) -> Result<usize> {
        self.fidelities
            .iter()
            .position(|&f| f == t)
            .ok_or_else(|| Error::Precondition(format!("level {t} is not in the fidelity grid {:?}", self.fidelities)))
    }

    pub fn quadrature_grid(&self) -> Result<RegularGrid> {
        RegularGrid::new(InputBox::oscillator(), self.grid, NodePlacement::Midpoint)
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, rep as u64)
    }
}

/// Frozen hyper-parameters and noise table shared by every strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelState {
    pub schema_version: u32,
    pub kernel: KernelSpec,
    /// Restricted negative log-likelihood at `kernel` on the fitting design.
    pub neg_log_likelihood: f64,
    pub fit_points: usize,
    pub noise: Vec<NodeRecord>,
}

impl ModelState {
    pub fn noise_table(&self) -> Result<NoiseTable> {
        NoiseTable::from_records(self.noise.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = toml::from_str(&std::fs::read_to_string(path)?)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("model schema {} (expected {SCHEMA_VERSION})", m.schema_version)));
        }
        m.kernel.validate()?;
        Ok(m)
    }
}

/// Covariance family whose hyper-parameters are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelForm {
    SeparableLog,
    SeparableIdentity,
    Convergent,
}

impl KernelForm {
    fn dim(self) -> usize {
        match self {
            KernelForm::Convergent => 7,
            _ => 4,
        }
    }

    /// Kernel from log-parameters `θ`.
    fn kernel(self, theta: &[f64]) -> KernelSpec {
        let e = |i: usize| theta[i].exp();
        match self {
            KernelForm::SeparableLog => KernelSpec::separable(e(0), [e(1), e(2)], e(3), FidelityTransform::Log),
            KernelForm::SeparableIdentity => KernelSpec::separable(e(0), [e(1), e(2)], e(3), FidelityTransform::Identity),
            KernelForm::Convergent => KernelSpec {
                variance: e(0),
                input_lengthscales: [e(1), e(2)],
                fidelity: FidelityKernel::Convergent { variance: e(3), lengthscales: [e(4), e(5)], exponent: e(6) },
            },
        }
    }

    /// Box for `θ` and the starting point, given the output variance and
    /// the domain widths.
    fn search_box(self, var: f64, w: [f64; 2]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let v = (var * 1e-3, var * 1e3, var);
        let l = |i: usize| (w[i] * 1e-2, w[i] * 1e2, w[i] * 0.3);
        let ranges = match self {
            KernelForm::SeparableLog => vec![v, l(0), l(1), (1e-2, 1e2, 1.0)],
            KernelForm::SeparableIdentity => vec![v, l(0), l(1), (1e-3, 1e1, 0.3)],
            KernelForm::Convergent => vec![v, l(0), l(1), v, l(0), l(1), (0.25, 8.0, 2.0)],
        };
        let lower = ranges.iter().map(|r| r.0.ln()).collect();
        let upper = ranges.iter().map(|r| r.1.ln()).collect();
        let start = ranges.iter().map(|r| r.2.ln()).collect();
        (lower, upper, start)
    }
}

struct RestrictedLikelihood<'a> {
    data: &'a ObservationSet,
    form: KernelForm,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl RestrictedLikelihood<'_> {
    fn project(&self, theta: &[f64]) -> (Vec<f64>, f64) {
        let mut penalty = 0.0;
        let clamped = theta
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = v.clamp(self.lower[i], self.upper[i]);
                penalty += (v - c).powi(2);
                c
            })
            .collect();
        (clamped, penalty)
    }
}

impl CostFunction for RestrictedLikelihood<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        // evaluate at the box projection, plus a penalty growing with the
        // distance to the box
        let (clamped, penalty) = self.project(theta);
        let v = neg_log_restricted_likelihood(&self.form.kernel(&clamped), self.data).unwrap_or(1e100);
        Ok(v + 1e3 * penalty)
    }
}

/// Maximize the restricted likelihood by Nelder–Mead over log-parameters,
/// within ranges set relative to the output variance and domain widths.
pub fn fit_hyperparameters(data: &ObservationSet, domain: &InputBox, form: KernelForm) -> Result<(KernelSpec, f64)> {
    if data.len() < 2 {
        return Err(Error::Precondition("hyper-parameter fit needs at least two observations".into()));
    }
    let z = data.values();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let var = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64).max(1e-6);
    let w = [domain.width(0).max(1e-12), domain.width(1).max(1e-12)];
    let (lower, upper, start) = form.search_box(var, w);
    let mut simplex = vec![start.clone()];
    for i in 0..form.dim() {
        let mut v = start.clone();
        v[i] += 0.7;
        simplex.push(v);
    }
    let problem = RestrictedLikelihood { data, form, lower, upper };
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-7).map_err(|e| Error::Optimizer(e.to_string()))?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(300 * form.dim() as u64))
        .run()
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let best = res.state().get_best_param().cloned().ok_or_else(|| Error::Optimizer("no best parameter".into()))?;
    let (clamped, _) = res.problem.problem.as_ref().ok_or_else(|| Error::Optimizer("problem lost".into()))?.project(&best);
    let kernel = form.kernel(&clamped);
    let nll = neg_log_restricted_likelihood(&kernel, data)?;
    log::info!("frozen kernel {kernel:?} (restricted NLL {nll:.4})");
    Ok((kernel, nll))
}

/// Nested initial design of repetition `rep` and its simulated outputs.
pub fn initial_observations(config: &ExperimentConfig, noise: &dyn NoiseFunction, rep: usize) -> Result<(NestedDesign, ObservationSet, usize)> {
    let seed = config.rep_seed(rep);
    let domain = InputBox::oscillator();
    let design = generate_nested_design(&config.initial_sizes, &domain, &mut substream(seed, Purpose::Design, 0, 0))?;
    let mut data = ObservationSet::new();
    let mut floor_hits = 0;
    for (l, pts) in design.levels().iter().enumerate() {
        let t = config.fidelities[l];
        for (j, x) in pts.iter().enumerate() {
            let input = OscillatorInput::new(x[0], x[1], t)?;
            let z = config.oscillator.simulate_seeded(&input, seed, Purpose::InitialRuns, l as u64, j as u64);
            floor_hits += usize::from(z == LOG_FLOOR);
            data.push(JointPoint::new(*x, t), z, noise.variance(x, t))?;
        }
    }
    Ok((design, data, floor_hits))
}

/// Pilot noise table plus hyper-parameters fitted on the design of
/// repetition 0.
pub fn prepare_model(config: &ExperimentConfig) -> Result<ModelState> {
    config.validate()?;
    let pilot_grid = RegularGrid::new(InputBox::oscillator(), config.pilot.grid, NodePlacement::Inclusive)?;
    let pilot = pilot_study(&config.oscillator, &pilot_grid, &config.fidelities, config.pilot.reps, config.seed)?;
    let table = pilot.table;
    let (_, mut data, _) = initial_observations(config, &table, 0)?;
    if config.fit.pilot_means {
        for m in &pilot.means {
            data.push(JointPoint::new([m.omega0, m.zeta], m.dt), m.estimate, m.stderr * m.stderr)?;
        }
    }
    let (kernel, nll) = fit_hyperparameters(&data, &InputBox::oscillator(), config.fit.kernel)?;
    Ok(ModelState {
        schema_version: SCHEMA_VERSION,
        kernel,
        neg_log_likelihood: nll,
        fit_points: data.len(),
        noise: table.records().to_vec(),
    })
}

/// One row of the metrics table, recorded after the initial design and after
/// every sequential observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Cumulative cost of the sequential points.
    pub cost: f64,
    #[serde(rename = "Phat")]
    pub p_hat: f64,
    /// `(P̂_n − P̄_ref)²`
    #[serde(rename = "sqerr_P")]
    pub sqerr_global: f64,
    /// `‖p̂_n − p̄_ref‖²` in `L²(μ)`.
    pub ise_p: f64,
    #[serde(rename = "H")]
    pub uncertainty: f64,
    pub iter: usize,
    pub rep: usize,
    pub strategy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub rep: usize,
    pub iteration: usize,
    pub level: f64,
    pub candidate: usize,
    pub omega0: f64,
    pub zeta: f64,
    #[serde(rename = "J_n")]
    pub criterion: f64,
    pub gain: f64,
    pub cost: f64,
    pub score: f64,
    pub selected: bool,
}

/// Counters checked by the acceptance suite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunDiagnostics {
    pub selections: usize,
    /// Selections with some candidate outside `0 ≤ H_n − J_n ≤ H_n + 1e−10`.
    pub gain_violations: usize,
    pub saturated: usize,
    /// Simulator outputs clamped to the `log(0)` floor.
    pub floor_hits: usize,
    pub max_jitter: f64,
}

/// One sequential observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialPoint {
    pub rep: usize,
    pub iter: usize,
    pub omega0: f64,
    pub zeta: f64,
    pub dt: f64,
    pub value: f64,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub strategy: Strategy,
    pub budget: f64,
    pub reference_probability: f64,
    pub metrics: Vec<MetricsRecord>,
    pub audit: Vec<AuditRecord>,
    pub designs: Vec<NestedDesign>,
    pub sequential: Vec<SequentialPoint>,
    pub diagnostics: RunDiagnostics,
}

/// Reference, model and quadrature shared by every strategy of a study.
pub struct Experiment {
    config: ExperimentConfig,
    reference: ReferenceMap,
    model: ModelState,
    noise: NoiseTable,
    measure: QuadratureMeasure,
    reference_probability: f64,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, reference: ReferenceMap, model: ModelState) -> Result<Self> {
        config.validate()?;
        let nodes = reference.nodes();
        let expected = config.grid[0] * config.grid[1];
        if nodes.len() != expected {
            return Err(Error::Schema(format!(
                "reference map has {} nodes but the quadrature grid {}x{} has {expected}",
                nodes.len(),
                config.grid[0],
                config.grid[1]
            )));
        }
        let grid_nodes = config.quadrature_grid()?.nodes();
        let off = nodes.iter().zip(&grid_nodes).any(|(a, b)| (0..2).any(|i| (a[i] - b[i]).abs() > 1e-9 * (1.0 + b[i].abs())));
        if off {
            return Err(Error::Schema("reference map nodes do not match the quadrature grid".into()));
        }
        let weights = vec![1.0 / nodes.len() as f64; nodes.len()];
        let measure = QuadratureMeasure::new(nodes, weights)?;
        let noise = model.noise_table()?;
        let reference_probability = reference.global_probability();
        Ok(Self { config, reference, model, noise, measure, reference_probability })
    }

    /// Load the reference map (which must exist) and the model state
    /// (computed and persisted when missing).
    pub fn from_config(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let reference = ReferenceMap::read_csv(&config.reference_path())?;
        let model_path = config.model_path();
        let model = if model_path.exists() {
            ModelState::load(&model_path)?
        } else {
            log::info!("no model state at {}; running the pilot", model_path.display());
            let m = prepare_model(&config)?;
            if let Some(dir) = model_path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            m.save(&model_path)?;
            m
        };
        Self::new(config, reference, model)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn noise(&self) -> &NoiseTable {
        &self.noise
    }

    pub fn measure(&self) -> &QuadratureMeasure {
        &self.measure
    }

    pub fn reference(&self) -> &ReferenceMap {
        &self.reference
    }

    /// All repetitions of `strategy`.
    pub fn run(&self, strategy: Strategy, audit: bool) -> Result<RunOutput> {
        if let Strategy::SingleLevel(t) = strategy {
            self.config.level_index(t)?;
        }
        let mut out = RunOutput {
            strategy,
            budget: self.config.budget,
            reference_probability: self.reference_probability,
            metrics: Vec::new(),
            audit: Vec::new(),
            designs: Vec::new(),
            sequential: Vec::new(),
            diagnostics: RunDiagnostics::default(),
        };
        for rep in 0..self.config.repetitions {
            self.run_repetition(strategy, rep, audit, &mut out)?;
            log::info!("{strategy}: repetition {}/{} done", rep + 1, self.config.repetitions);
        }
        Ok(out)
    }

    fn run_repetition(&self, strategy: Strategy, rep: usize, audit: bool, out: &mut RunOutput) -> Result<()> {
        let cfg = &self.config;
        let seed = cfg.rep_seed(rep);
        let domain = InputBox::oscillator();
        let (design, mut data, hits) = initial_observations(cfg, &self.noise, rep)?;
        out.designs.push(design);
        out.diagnostics.floor_hits += hits;
        let reference = self.reference.probabilities();
        let name = strategy.to_string();
        let mut spent = 0.0;
        let mut iter = 0;
        loop {
            let gp = PosteriorGP::fit(self.model.kernel, data.clone())?;
            out.diagnostics.max_jitter = out.diagnostics.max_jitter.max(gp.jitter());
            let field = ExceedanceField::new(&gp, &self.noise, cfg.threshold);
            let ctx = SurContext::new(field, &self.measure)?;
            let s = ctx.summary();
            let ise = self.measure.integrate(&s.prob_mean.iter().zip(&reference).map(|(p, r)| (p - r).powi(2)).collect::<Vec<_>>());
            out.metrics.push(MetricsRecord {
                cost: spent,
                p_hat: s.global_prob,
                sqerr_global: (s.global_prob - self.reference_probability).powi(2),
                ise_p: ise,
                uncertainty: s.uncertainty,
                iter,
                rep,
                strategy: name.clone(),
            });

            let remaining = cfg.budget - spent + BUDGET_SLACK * cfg.budget.max(1.0);
            let levels: Vec<usize> = match strategy {
                Strategy::SingleLevel(t) => vec![cfg.level_index(t)?],
                Strategy::Msur => (0..cfg.fidelities.len()).collect(),
            };
            let affordable: Vec<usize> = levels.into_iter().filter(|&l| cfg.cost.cost(cfg.fidelities[l]) <= remaining).collect();
            if affordable.is_empty() {
                break;
            }
            let mut cand_levels = Vec::with_capacity(affordable.len());
            for &l in &affordable {
                let mut rng = substream(seed, Purpose::Candidates, iter as u64, l as u64);
                let points = sample_candidates(cfg.candidates_per_level, &domain, &mut rng)?;
                cand_levels.push(CandidateLevel { level: cfg.fidelities[l], points });
            }
            let candidates = CandidateSet::new(cand_levels, &domain)?;
            let selection = match strategy {
                Strategy::SingleLevel(_) => select_sur(&ctx, &candidates, 0, &cfg.cost)?,
                Strategy::Msur => select_msur(&ctx, &candidates, &cfg.cost)?,
            };
            let h = ctx.uncertainty();
            out.diagnostics.selections += 1;
            out.diagnostics.saturated += usize::from(selection.saturated);
            if selection.scores.iter().any(|c| !(c.gain >= 0.0 && c.gain <= h + 1e-10)) {
                out.diagnostics.gain_violations += 1;
            }
            if audit {
                let chosen = (selection.point.t, selection.candidate_index);
                out.audit.extend(selection.scores.iter().map(|c| AuditRecord {
                    rep,
                    iteration: iter,
                    level: c.level,
                    candidate: c.index,
                    omega0: c.omega0,
                    zeta: c.zeta,
                    criterion: c.criterion,
                    gain: c.gain,
                    cost: c.cost,
                    score: c.score,
                    selected: (c.level, c.index) == chosen,
                }));
            }

            let p = selection.point;
            let input = OscillatorInput::new(p.x[0], p.x[1], p.t)?;
            let z = cfg.oscillator.simulate_seeded(&input, seed, Purpose::Sequential, iter as u64, 0);
            out.diagnostics.floor_hits += usize::from(z == LOG_FLOOR);
            data.push(p, z, self.noise.variance(&p.x, p.t))?;
            spent += selection.cost;
            out.sequential.push(SequentialPoint { rep, iter, omega0: p.x[0], zeta: p.x[1], dt: p.t, value: z, cost: selection.cost });
            iter += 1;
        }
        Ok(())
    }
}

/// Run the configured strategy and persist its metrics, designs and
/// (optionally) criterion audit tables under `config.out`.
pub fn run_experiment(config: ExperimentConfig) -> Result<RunOutput> {
    let strategy = config.strategy;
    let audit = config.audit;
    let exp = Experiment::from_config(config)?;
    let out = exp.run(strategy, audit)?;
    write_run(&exp.config().out, &exp.config().fidelities, &out)?;
    Ok(out)
}

fn file_tag(strategy: Strategy) -> String {
    strategy.to_string().replace(':', "_")
}

pub fn write_run(dir: &Path, fidelities: &[f64], run: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let tag = file_tag(run.strategy);
    write_csv(&dir.join(format!("metrics_{tag}.csv")), &run.metrics)?;
    write_csv(&dir.join(format!("points_{tag}.csv")), &run.sequential)?;
    for (rep, d) in run.designs.iter().enumerate() {
        d.write_csv(&dir.join(format!("design_rep{rep}.csv")), &fidelities[..d.levels().len()])?;
    }
    if !run.audit.is_empty() {
        write_csv(&dir.join(format!("audit_{tag}.csv")), &run.audit)?;
    }
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Mean-over-repetitions error curves on a common cost axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub strategy: String,
    pub cost: f64,
    #[serde(rename = "rmse_P")]
    pub rmse_global: f64,
    pub rmse_p: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub strategy: String,
    #[serde(rename = "final_rmse_P")]
    pub final_rmse_global: f64,
    pub final_rmse_p: f64,
    pub mean_sequential_points: f64,
    pub best_single_level: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub curves: Vec<CurveRecord>,
    pub summary: Vec<SummaryRecord>,
    /// SL level with the lowest final `p`-field RMSE.
    pub best_single_level: Option<f64>,
}

impl Comparison {
    pub fn summary_for(&self, strategy: Strategy) -> Option<&SummaryRecord> {
        let name = strategy.to_string();
        self.summary.iter().find(|s| s.strategy == name)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("curves.csv"), &self.curves)?;
        write_csv(&dir.join("summary.csv"), &self.summary)
    }
}

/// Per-repetition metrics sorted by iteration.
fn by_rep(metrics: &[MetricsRecord]) -> Vec<Vec<&MetricsRecord>> {
    let reps = metrics.iter().map(|m| m.rep + 1).max().unwrap_or(0);
    let mut out: Vec<Vec<&MetricsRecord>> = vec![Vec::new(); reps];
    for m in metrics {
        out[m.rep].push(m);
    }
    for r in &mut out {
        r.sort_by_key(|m| m.iter);
    }
    out.retain(|r| !r.is_empty());
    out
}

/// Step-interpolate each repetition onto `axis_points` equally spaced costs
/// in `[0, budget]`, average the squared errors over repetitions and take
/// square roots.
pub fn compare_strategies(runs: &[RunOutput], axis_points: usize) -> Result<Comparison> {
    let first = runs.first().ok_or_else(|| Error::Precondition("nothing to compare".into()))?;
    for r in runs {
        if r.reference_probability != first.reference_probability || r.budget != first.budget {
            return Err(Error::Precondition(format!("{} does not share the reference and budget of {}", r.strategy, first.strategy)));
        }
    }
    let axis: Vec<f64> = (0..axis_points.max(2)).map(|i| first.budget * i as f64 / (axis_points.max(2) - 1) as f64).collect();
    let mut curves = Vec::new();
    let mut summary = Vec::new();
    for r in runs {
        let reps = by_rep(&r.metrics);
        if reps.is_empty() {
            return Err(Error::Precondition(format!("{} has no metrics", r.strategy)));
        }
        let nrep = reps.len() as f64;
        let name = r.strategy.to_string();
        for &c in &axis {
            let (mut sq, mut ise) = (0.0, 0.0);
            for rows in &reps {
                let tol = BUDGET_SLACK * r.budget.max(1.0);
                let at = rows.iter().rev().find(|m| m.cost <= c + tol).unwrap_or(&rows[0]);
                sq += at.sqerr_global;
                ise += at.ise_p;
            }
            curves.push(CurveRecord { strategy: name.clone(), cost: c, rmse_global: (sq / nrep).sqrt(), rmse_p: (ise / nrep).sqrt(), reps: reps.len() });
        }
        let last = |f: fn(&MetricsRecord) -> f64| (reps.iter().map(|rows| f(rows.last().unwrap())).sum::<f64>() / nrep).sqrt();
        summary.push(SummaryRecord {
            strategy: name,
            final_rmse_global: last(|m| m.sqerr_global),
            final_rmse_p: last(|m| m.ise_p),
            mean_sequential_points: reps.iter().map(|rows| (rows.len() - 1) as f64).sum::<f64>() / nrep,
            best_single_level: false,
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in runs.iter().enumerate() {
        if let Strategy::SingleLevel(t) = r.strategy {
            if best.is_none_or(|(b, _)| summary[i].final_rmse_p < summary[b].final_rmse_p) {
                best = Some((i, t));
            }
        }
    }
    if let Some((i, _)) = best {
        summary[i].best_single_level = true;
    }
    Ok(Comparison { curves, summary, best_single_level: best.map(|b| b.1) })
}
